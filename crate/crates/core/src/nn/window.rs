use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlatError};
use crate::sparse::VoxelCoord;

/// Default window side for 3D windowed attention.
pub const DEFAULT_WINDOW: u32 = 8;

/// Cubic attention windows, optionally shifted. Shifting does not wrap, so
/// windows touching the grid border may be partial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_size: u32,
    pub shift: [u32; 3],
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_size: DEFAULT_WINDOW, shift: [0; 3] }
    }
}

impl WindowConfig {
    pub fn new(window_size: u32, shift: [u32; 3]) -> Result<Self> {
        if window_size == 0 || shift.iter().any(|&s| s >= window_size) {
            return Err(SlatError::OutOfRange(format!(
                "shift {shift:?} must be below window size {window_size}"
            )));
        }
        Ok(Self { window_size, shift })
    }

    /// Half-window shift, used on alternating blocks.
    pub fn shifted(window_size: u32) -> Self {
        let h = window_size / 2;
        Self { window_size, shift: [h; 3] }
    }

    pub fn window_of(&self, c: VoxelCoord) -> [u32; 3] {
        let a = c.as_array();
        [0, 1, 2].map(|i| (a[i] + self.shift[i]) / self.window_size)
    }
}

/// Groups token indices by window. Groups are ordered by window index and
/// tokens keep their input order inside a group.
pub fn window_partition(coords: &[VoxelCoord], cfg: &WindowConfig) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<[u32; 3], Vec<usize>> = BTreeMap::new();
    for (i, &c) in coords.iter().enumerate() {
        groups.entry(cfg.window_of(c)).or_default().push(i);
    }
    groups.into_values().collect()
}
