use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlatError};

pub type Vec3 = Vector3<f64>;

/// Views per asset used when encoding.
pub const DEFAULT_ENCODE_VIEWS: usize = 150;
/// Evaluation camera protocol: distance from origin and vertical FoV.
pub const EVAL_CAMERA_RADIUS: f64 = 2.0;
pub const EVAL_FOV_DEG: f64 = 40.0;

/// Pinhole camera looking at `target`.
///
/// Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`; `u` grows to the right and
/// `v` grows downward. Depth is the distance along the viewing axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    #[serde(default)]
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub visible: bool,
}

/// Orthonormal camera frame derived from position/target/up.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    /// Focal length in pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn new(position: [f64; 3], fov_y_deg: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self { position, target: [0.0; 3], up: default_up(), fov_y_deg, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn look_at(mut self, target: [f64; 3]) -> Result<Self> {
        self.target = target;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.position == self.target {
            return Err(SlatError::OutOfRange("camera position equals target".into()));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(SlatError::OutOfRange(format!("fov {} not in (0, 180)", self.fov_y_deg)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SlatError::OutOfRange("image size must be at least 1x1".into()));
        }
        if self.position.iter().chain(&self.target).chain(&self.up).any(|v| !v.is_finite()) {
            return Err(SlatError::NonFinite("camera vectors".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cam: Camera = serde_json::from_str(text)?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn frame(&self) -> CameraFrame {
        let origin = Vec3::from(self.position);
        let forward = (Vec3::from(self.target) - origin).normalize();
        let mut up_hint = Vec3::from(self.up);
        if up_hint.norm() == 0.0 || forward.dot(&up_hint.normalize()).abs() > 0.999 {
            up_hint = Vec3::x();
        }
        let right = forward.cross(&up_hint.normalize()).normalize();
        let up = right.cross(&forward);
        let half = (self.fov_y_deg.to_radians() * 0.5).tan();
        CameraFrame {
            origin,
            right,
            up,
            forward,
            focal: 0.5 * self.height as f64 / half,
            cx: 0.5 * self.width as f64,
            cy: 0.5 * self.height as f64,
        }
    }

    pub fn project(&self, point: [f64; 3]) -> Projection {
        self.frame().project(&Vec3::from(point), self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl CameraFrame {
    /// Camera-space coordinates `(x right, y up, z forward)`.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(&self.right), d.dot(&self.up), d.dot(&self.forward))
    }

    pub fn project(&self, p: &Vec3, width: u32, height: u32) -> Projection {
        let c = self.to_camera(p);
        let depth = c.z;
        let u = self.cx + self.focal * c.x / depth;
        let v = self.cy - self.focal * c.y / depth;
        let visible = depth > 0.0
            && u >= 0.0
            && v >= 0.0
            && u < width as f64
            && v < height as f64;
        Projection { u, v, depth, visible }
    }

    /// World point on the ray through `(u, v)` at the given view depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let x = (u - self.cx) * depth / self.focal;
        let y = -(v - self.cy) * depth / self.focal;
        self.origin + self.right * x + self.up * y + self.forward * depth
    }

    /// Unit direction of the ray through `(u, v)`.
    pub fn ray_dir(&self, u: f64, v: f64) -> Vec3 {
        (self.unproject(u, v, 1.0) - self.origin).normalize()
    }
}

/// Cameras at area-uniform random points of a sphere, all looking at the origin.
pub fn sample_sphere_cameras(
    n: usize,
    radius: f64,
    fov_y_deg: f64,
    width: u32,
    height: u32,
    seed: u64,
) -> Result<Vec<Camera>> {
    if n == 0 || radius <= 0.0 {
        return Err(SlatError::OutOfRange("need n >= 1 and radius > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).max(0.0).sqrt();
            let dir = Vec3::new(s * phi.cos(), s * phi.sin(), z).normalize();
            let p = dir * radius;
            Camera::new([p.x, p.y, p.z], fov_y_deg, width, height)
        })
        .collect()
}

/// Back-projects every finite-depth pixel (sampled at its center).
pub fn unproject_depth(depth: &[f64], camera: &Camera) -> Result<Vec<[f64; 3]>> {
    if depth.len() != camera.pixel_count() {
        return Err(SlatError::Shape(format!(
            "depth map has {} pixels, camera {}x{}",
            depth.len(),
            camera.width,
            camera.height
        )));
    }
    let frame = camera.frame();
    let w = camera.width as usize;
    Ok(depth
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_finite())
        .map(|(i, &d)| {
            let (col, row) = (i % w, i / w);
            let p = frame.unproject(col as f64 + 0.5, row as f64 + 0.5, d);
            [p.x, p.y, p.z]
        })
        .collect())
}
