//! Small fully connected velocity network with hand-written gradients.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{LayoutVelocityModel, VelocityModel};
use crate::error::{shape_err, Result, SlatError};
use crate::nn::{silu, sinusoidal_pe, Linear, Mat, WeightArchive};
use crate::numeric::sigmoid;
use crate::sparse::SparseGrid;

/// Frequencies of the timestep features `[t, sin(2^k pi t), cos(2^k pi t)]`.
pub const TIME_FREQS: usize = 4;
pub const TIME_INPUTS: usize = 1 + 2 * TIME_FREQS;

pub const ARCHIVE_KIND: &str = "flow-mlp";

pub fn time_inputs(t: f64) -> Vec<f64> {
    let mut f = vec![t];
    for k in 0..TIME_FREQS {
        let w = std::f64::consts::PI * (1u32 << k) as f64;
        f.push((w * t).sin());
        f.push((w * t).cos());
    }
    f
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub data_dim: usize,
    /// Extra per-sample inputs; positional encodings when used on a layout.
    pub aux_dim: usize,
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
}

/// Input is `[x, time features, aux, condition]`; SiLU hidden layers; the
/// unconditional branch feeds a learned null condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    pub shape: MlpShape,
    pub layers: Vec<Linear>,
    pub null_cond: Vec<f64>,
}

/// One training example of the flow-matching objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CfmExample {
    pub x0: Vec<f64>,
    pub eps: Vec<f64>,
    pub t: f64,
    pub aux: Vec<f64>,
    /// `None` routes through the null condition.
    pub cond: Option<Vec<f64>>,
}

struct Trace {
    /// Input of every layer.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl TinyMlp {
    pub fn init(shape: MlpShape, rng: &mut impl Rng) -> Result<Self> {
        if shape.hidden.is_empty() || shape.hidden.contains(&0) || shape.data_dim == 0 {
            return Err(SlatError::Shape(format!("invalid MLP shape {shape:?}")));
        }
        let mut dims = vec![shape.data_dim + TIME_INPUTS + shape.aux_dim + shape.cond_dim];
        dims.extend(&shape.hidden);
        dims.push(shape.data_dim);
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        let null_cond = vec![0.0; shape.cond_dim];
        Ok(Self { shape, layers, null_cond })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    fn assemble(&self, x: &[f64], t: f64, aux: &[f64], cond: Option<&[f64]>) -> Result<Vec<f64>> {
        let s = &self.shape;
        if x.len() != s.data_dim || aux.len() != s.aux_dim {
            return shape_err(format!(
                "MLP expects {} data and {} aux inputs, got {} and {}",
                s.data_dim,
                s.aux_dim,
                x.len(),
                aux.len()
            ));
        }
        let cond = cond.unwrap_or(&self.null_cond);
        if cond.len() != s.cond_dim {
            return shape_err(format!("MLP expects a {}-wide condition, got {}", s.cond_dim, cond.len()));
        }
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(x);
        input.extend(time_inputs(t));
        input.extend_from_slice(aux);
        input.extend_from_slice(cond);
        Ok(input)
    }

    fn trace(&self, input: Vec<f64>) -> Trace {
        let mut acts = vec![input];
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.apply(acts.last().expect("input present"));
            if i == last {
                return Trace { acts, pre, out: z };
            }
            acts.push(z.iter().map(|&v| silu(v)).collect());
            pre.push(z);
        }
        unreachable!("at least one layer")
    }

    pub fn forward(&self, x: &[f64], t: f64, aux: &[f64], cond: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(self.trace(self.assemble(x, t, aux, cond)?).out)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum::<usize>() + self.null_cond.len()
    }

    /// Flat parameter vector: per layer weights then biases, then the null condition.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weight);
            p.extend_from_slice(&l.bias);
        }
        p.extend_from_slice(&self.null_cond);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return shape_err(format!("expected {} parameters, got {}", self.param_count(), p.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let (w, b) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&p[off..off + w]);
            l.bias.copy_from_slice(&p[off + w..off + w + b]);
            off += w + b;
        }
        self.null_cond.copy_from_slice(&p[off..]);
        Ok(())
    }

    /// Backpropagates `d_out` and adds parameter gradients into `grad`.
    fn backward(&self, tr: &Trace, d_out: &[f64], uses_null: bool, grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weight.len() + l.bias.len();
        }
        let mut delta = d_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let a = &tr.acts[li];
            let base = offsets[li];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut grad[base + o * l.in_dim..base + (o + 1) * l.in_dim];
                for (g, &ai) in row.iter_mut().zip(a) {
                    *g += d * ai;
                }
                grad[base + l.weight.len() + o] += d;
            }
            let mut d_in = vec![0.0; l.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                for (di, w) in d_in.iter_mut().zip(&l.weight[o * l.in_dim..(o + 1) * l.in_dim]) {
                    *di += d * w;
                }
            }
            if li == 0 {
                if uses_null {
                    let c0 = l.in_dim - self.shape.cond_dim;
                    for (g, d) in grad[off..].iter_mut().zip(&d_in[c0..]) {
                        *g += d;
                    }
                }
                return;
            }
            delta = d_in.iter().zip(&tr.pre[li - 1]).map(|(d, &z)| d * silu_grad(z)).collect();
        }
    }

    /// Mean flow-matching loss over `batch` and its parameter gradient.
    /// Work is split into a fixed number of chunks reduced in order, so the
    /// result does not depend on the thread count.
    pub fn cfm_loss_and_grad(&self, batch: &[CfmExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(SlatError::Empty("empty training batch".into()));
        }
        const CHUNKS: usize = 16;
        let per = batch.len().div_ceil(CHUNKS);
        let n = self.param_count();
        let d = self.shape.data_dim as f64;
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_chunks(per)
            .map(|chunk| {
                let mut grad = vec![0.0; n];
                let mut loss = 0.0;
                for ex in chunk {
                    let x = super::core::interpolate(&ex.x0, &ex.eps, ex.t)?;
                    let tr = self.trace(self.assemble(&x, ex.t, &ex.aux, ex.cond.as_deref())?);
                    let mut d_out = Vec::with_capacity(tr.out.len());
                    for ((o, e), a) in tr.out.iter().zip(&ex.eps).zip(&ex.x0) {
                        let r = o - (e - a);
                        loss += r * r / d;
                        d_out.push(2.0 * r / d);
                    }
                    self.backward(&tr, &d_out, ex.cond.is_none(), &mut grad);
                }
                Ok((loss, grad))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for p in parts {
            let (l, g) = p?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let b = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= b);
        Ok((loss / b, grad))
    }

    pub fn to_archive(&self) -> Result<WeightArchive> {
        let mut a = WeightArchive::new(ARCHIVE_KIND, serde_json::to_value(&self.shape)?);
        for (i, l) in self.layers.iter().enumerate() {
            a.put_linear(&format!("blk{i}.fc"), l);
        }
        a.put_vec("null_cond", &self.null_cond);
        Ok(a)
    }

    pub fn from_archive(a: &WeightArchive) -> Result<Self> {
        a.expect_kind(ARCHIVE_KIND)?;
        let shape: MlpShape = serde_json::from_value(a.meta.clone())?;
        let mut net = Self::init(shape, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        for (i, l) in net.layers.iter_mut().enumerate() {
            let loaded = a.get_linear(&format!("blk{i}.fc"))?;
            if (loaded.in_dim, loaded.out_dim) != (l.in_dim, l.out_dim) {
                return Err(SlatError::Format(format!("layer {i} has the wrong shape")));
            }
            *l = loaded;
        }
        net.null_cond = a.get_vec("null_cond")?;
        if net.null_cond.len() != net.shape.cond_dim {
            return Err(SlatError::Format("null condition width mismatch".into()));
        }
        Ok(net)
    }

    fn cond_slice<'a>(&self, cond: Option<&'a Mat>) -> Result<Option<&'a [f64]>> {
        match cond {
            None => Ok(None),
            Some(_) if self.shape.cond_dim == 0 => Ok(None),
            Some(c) if c.data.len() == self.shape.cond_dim => Ok(Some(&c.data)),
            Some(c) => shape_err(format!("condition has {} values, model expects {}", c.data.len(), self.shape.cond_dim)),
        }
    }
}

impl VelocityModel for TinyMlp {
    fn velocity(&self, x: &[f64], t: f64, cond: Option<&Mat>) -> Result<Vec<f64>> {
        if self.shape.aux_dim != 0 {
            return shape_err("per-token MLP needs a structure; use it as a layout model");
        }
        self.forward(x, t, &[], self.cond_slice(cond)?)
    }
}

/// Applied token by token with the voxel's positional encoding as aux input.
impl LayoutVelocityModel for TinyMlp {
    fn channels(&self) -> usize {
        self.shape.data_dim
    }

    fn velocity_on(&self, structure: &SparseGrid, x: &[f64], t: f64, cond: Option<&Mat>) -> Result<Vec<f64>> {
        let c = self.shape.data_dim;
        if x.len() != structure.len() * c {
            return shape_err(format!("{} latents for {} voxels of width {c}", x.len(), structure.len()));
        }
        let cond = self.cond_slice(cond)?;
        let rows: Vec<Result<Vec<f64>>> = structure
            .coords()
            .par_iter()
            .enumerate()
            .map(|(i, &p)| {
                let pe = if self.shape.aux_dim == 0 { Vec::new() } else { sinusoidal_pe(p, self.shape.aux_dim)? };
                self.forward(&x[i * c..(i + 1) * c], t, &pe, cond)
            })
            .collect();
        let mut out = Vec::with_capacity(x.len());
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example(rng: &mut ChaCha8Rng, null: bool) -> CfmExample {
        CfmExample {
            x0: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            eps: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            t: rng.random_range(0.05..0.95),
            aux: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            cond: (!null).then(|| vec![rng.random_range(-1.0..1.0), 0.5]),
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = MlpShape { data_dim: 3, aux_dim: 2, cond_dim: 2, hidden: vec![6, 5] };
        let mut net = TinyMlp::init(shape, &mut rng).unwrap();
        net.null_cond = vec![0.3, -0.7];
        let batch: Vec<_> = (0..6).map(|i| example(&mut rng, i % 2 == 0)).collect();
        let (_, grad) = net.cfm_loss_and_grad(&batch).unwrap();
        let p0 = net.params();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            net.set_params(&p).unwrap();
            let lp = net.cfm_loss_and_grad(&batch).unwrap().0;
            p[i] -= 2.0 * h;
            net.set_params(&p).unwrap();
            let lm = net.cfm_loss_and_grad(&batch).unwrap().0;
            let num = (lp - lm) / (2.0 * h);
            let rel = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn params_roundtrip_and_archive() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shape = MlpShape { data_dim: 2, aux_dim: 0, cond_dim: 1, hidden: vec![4] };
        let net = TinyMlp::init(shape, &mut rng).unwrap();
        let mut other = net.clone();
        other.set_params(&vec![0.0; net.param_count()]).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
        let back = TinyMlp::from_archive(&net.to_archive().unwrap()).unwrap();
        assert_eq!(back.shape, net.shape);
        let v1 = net.velocity(&[0.1, 0.2], 0.5, None).unwrap();
        let v2 = back.velocity(&[0.1, 0.2], 0.5, None).unwrap();
        assert!(v1.iter().zip(&v2).all(|(a, b)| (a - b).abs() < 1e-5));
    }
}
