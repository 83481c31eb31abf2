//! Weight archives: a directory of `DNSE` tensors plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attention::AttentionWeights;
use super::linalg::Linear;
use crate::error::{Result, SlatError};
use crate::sparse::ConvKernel;
use crate::tensor::DenseTensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub file: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    /// Model hyper-parameters (layer widths, head counts, ...).
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, TensorEntry>,
}

/// Named tensors with a model kind and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, DenseTensor>,
}

impl WeightArchive {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self { kind: kind.into(), meta, tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: DenseTensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&DenseTensor> {
        self.tensors.get(name).ok_or_else(|| SlatError::Format(format!("archive has no tensor '{name}'")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(SlatError::Format(format!("expected a '{kind}' archive, found '{}'", self.kind)));
        }
        Ok(())
    }

    pub fn put_linear(&mut self, name: &str, l: &Linear) {
        self.insert(format!("{name}.weight"), DenseTensor { dims: vec![l.out_dim, l.in_dim], data: l.weight.clone() });
        self.insert(format!("{name}.bias"), DenseTensor { dims: vec![l.out_dim], data: l.bias.clone() });
    }

    pub fn get_linear(&self, name: &str) -> Result<Linear> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        match w.dims.as_slice() {
            &[o, i] => Linear::new(i, o, w.data.clone(), b.data.clone()),
            d => Err(SlatError::Format(format!("'{name}.weight' must be 2-D, got {d:?}"))),
        }
    }

    pub fn put_vec(&mut self, name: &str, v: &[f64]) {
        self.insert(name, DenseTensor { dims: vec![v.len()], data: v.to_vec() });
    }

    pub fn get_vec(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.data.clone())
    }

    pub fn put_conv(&mut self, name: &str, k: &ConvKernel) {
        self.insert(format!("{name}.weight"), DenseTensor { dims: vec![27, k.cin, k.cout], data: k.weights.clone() });
        self.insert(format!("{name}.bias"), DenseTensor { dims: vec![k.cout], data: k.bias.clone() });
    }

    pub fn get_conv(&self, name: &str) -> Result<ConvKernel> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        match w.dims.as_slice() {
            &[27, i, o] => ConvKernel::new(i, o, w.data.clone(), b.data.clone()),
            d => Err(SlatError::Format(format!("'{name}.weight' must be [27, cin, cout], got {d:?}"))),
        }
    }

    pub fn put_attention(&mut self, name: &str, a: &AttentionWeights) {
        self.put_linear(&format!("{name}.q"), &a.q);
        self.put_linear(&format!("{name}.k"), &a.k);
        self.put_linear(&format!("{name}.v"), &a.v);
        self.put_linear(&format!("{name}.proj"), &a.out);
        self.put_vec(&format!("{name}.q_gain"), &a.q_gain);
        self.put_vec(&format!("{name}.k_gain"), &a.k_gain);
    }

    pub fn get_attention(&self, name: &str, heads: usize) -> Result<AttentionWeights> {
        let q = self.get_linear(&format!("{name}.q"))?;
        let k = self.get_linear(&format!("{name}.k"))?;
        let mut a = AttentionWeights::zeros(q.out_dim, k.in_dim, heads)?;
        a.q = q;
        a.k = k;
        a.v = self.get_linear(&format!("{name}.v"))?;
        a.out = self.get_linear(&format!("{name}.proj"))?;
        a.q_gain = self.get_vec(&format!("{name}.q_gain"))?;
        a.k_gain = self.get_vec(&format!("{name}.k_gain"))?;
        if a.q_gain.len() != a.head_dim() || a.k_gain.len() != a.head_dim() {
            return Err(SlatError::Format(format!("'{name}' norm gains do not match the head width")));
        }
        Ok(a)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut tensors = BTreeMap::new();
        for (name, t) in &self.tensors {
            let file = format!("{name}.dnse");
            t.save(dir.join(&file))?;
            tensors.insert(name.clone(), TensorEntry { file, dims: t.dims.clone() });
        }
        let manifest = Manifest { kind: self.kind.clone(), meta: self.meta.clone(), tensors };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let mut tensors = BTreeMap::new();
        for (name, e) in manifest.tensors {
            if e.file.contains('/') || e.file.contains("..") {
                return Err(SlatError::Format(format!("tensor file '{}' escapes the archive", e.file)));
            }
            let t = DenseTensor::load(dir.join(&e.file))?;
            if t.dims != e.dims {
                return Err(SlatError::Format(format!("tensor '{name}' dims {:?} disagree with manifest {:?}", t.dims, e.dims)));
            }
            tensors.insert(name, t);
        }
        Ok(Self { kind: manifest.kind, meta: manifest.meta, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn roundtrip_through_directory() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let lin = Linear::init(3, 4, &mut rng);
        let att = AttentionWeights::init(4, 6, 2, &mut rng).unwrap();
        let mut a = WeightArchive::new("test", serde_json::json!({"heads": 2}));
        a.put_linear("blk0.ffn1", &lin);
        a.put_attention("blk0.qkv", &att);
        a.put_conv("conv", &ConvKernel::identity(2));
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let b = WeightArchive::load(dir.path()).unwrap();
        b.expect_kind("test").unwrap();
        assert!(b.expect_kind("other").is_err());
        let l2 = b.get_linear("blk0.ffn1").unwrap();
        for (x, y) in lin.weight.iter().zip(&l2.weight) {
            assert_eq!(*x as f32 as f64, *y);
        }
        assert_eq!(b.get_conv("conv").unwrap(), ConvKernel::identity(2));
        assert_eq!(b.get_attention("blk0.qkv", 2).unwrap().k.in_dim, 6);
        assert!(b.get("missing").is_err());
    }
}
