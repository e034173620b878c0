//! Feedforward policy and value networks.
//!
//! One weight layout serves three execution paths: a plain `f64` forward for
//! rollouts and evaluation, a cached forward/backward pair for the
//! policy-gradient trainer, and a lifted forward on the tape for the
//! differentiable trainer. The plain and lifted paths run the same generic
//! code, so their outputs agree bitwise for equal inputs.
//!
//! Checkpoints are little-endian binary: magic `SSCKPT01`, a u32 tensor
//! count, then per tensor u32 rows, u32 cols, and rows*cols f64 values in
//! row-major order.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ad::{Gradients, Real, Tape, Var};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSCKPT01";

/// Dense row-major matrix; vectors are n x 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
}

pub fn save_tensors(path: &Path, tensors: &[Tensor]) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>, CheckpointError> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| CheckpointError::Truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)
        .map_err(|_| CheckpointError::Truncated)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        file.read_exact(&mut u32buf)
            .map_err(|_| CheckpointError::Truncated)?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        file.read_exact(&mut u32buf)
            .map_err(|_| CheckpointError::Truncated)?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut f64buf = [0u8; 8];
        for v in data.iter_mut() {
            file.read_exact(&mut f64buf)
                .map_err(|_| CheckpointError::Truncated)?;
            *v = f64::from_le_bytes(f64buf);
        }
        tensors.push(Tensor { rows, cols, data });
    }
    // Trailing garbage means the file is not what we think it is.
    let mut probe = [0u8; 1];
    if file.read(&mut probe)? != 0 {
        return Err(CheckpointError::ShapeMismatch {
            expected: format!("{count} tensors"),
            found: "extra trailing bytes".into(),
        });
    }
    Ok(tensors)
}

/// Output nonlinearity of the final layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    Linear,
    /// scale * tanh(z): bounds actions to (-scale, scale).
    Tanh { scale: f64 },
}

/// Multilayer perceptron with ELU hidden activations.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub head: Head,
    /// Interleaved [W0, b0, W1, b1, ...]; W is (out x in), b is (out x 1).
    pub tensors: Vec<Tensor>,
}

fn dense<R: Real>(w: &[R], b: &[R], x: &[R], rows: usize, cols: usize) -> Vec<R> {
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        out.push(R::dot(&w[r * cols..(r + 1) * cols], x) + b[r]);
    }
    out
}

fn forward_generic<R: Real>(
    sizes: &[usize],
    head: Head,
    tensors: &[&[R]],
    x: &[R],
) -> Vec<R> {
    let layers = sizes.len() - 1;
    let mut a: Vec<R> = x.to_vec();
    for l in 0..layers {
        let (rows, cols) = (sizes[l + 1], sizes[l]);
        let mut z = dense(tensors[2 * l], tensors[2 * l + 1], &a, rows, cols);
        if l + 1 < layers {
            for v in z.iter_mut() {
                *v = v.elu();
            }
        } else {
            match head {
                Head::Linear => {}
                Head::Tanh { scale } => {
                    for v in z.iter_mut() {
                        *v = v.tanh().mulc(scale);
                    }
                }
            }
        }
        a = z;
    }
    a
}

impl Mlp {
    /// Seeded init: uniform He bounds on hidden layers, final layer shrunk
    /// a hundredfold so a fresh policy acts near zero.
    pub fn new(sizes: &[usize], head: Head, seed: u64) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes.len() - 1;
        let mut tensors = Vec::with_capacity(2 * layers);
        for l in 0..layers {
            let (rows, cols) = (sizes[l + 1], sizes[l]);
            let bound = (6.0 / cols as f64).sqrt();
            let shrink = if l + 1 == layers { 0.01 } else { 1.0 };
            let data = (0..rows * cols)
                .map(|_| shrink * rng.gen_range(-bound..bound))
                .collect();
            tensors.push(Tensor { rows, cols, data });
            tensors.push(Tensor::zeros(rows, 1));
        }
        Mlp {
            sizes: sizes.to_vec(),
            head,
            tensors,
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.sizes[0]);
        let tensors: Vec<&[f64]> = self.tensors.iter().map(|t| t.data.as_slice()).collect();
        forward_generic(&self.sizes, self.head, &tensors, x)
    }

    /// Forward pass retaining per-layer inputs and preactivations for
    /// `backward`.
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        assert_eq!(x.len(), self.sizes[0]);
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut preacts = Vec::with_capacity(layers);
        let mut a = x.to_vec();
        for l in 0..layers {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let z = dense(
                &self.tensors[2 * l].data,
                &self.tensors[2 * l + 1].data,
                &a,
                rows,
                cols,
            );
            inputs.push(a);
            preacts.push(z.clone());
            a = z;
            if l + 1 < layers {
                for v in a.iter_mut() {
                    *v = v.elu();
                }
            } else if let Head::Tanh { scale } = self.head {
                for v in a.iter_mut() {
                    *v = scale * v.tanh();
                }
            }
        }
        (a, MlpCache { inputs, preacts })
    }

    /// Reverse pass: accumulates parameter gradients into `grads` (flat,
    /// tensor order) and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.num_params());
        let layers = self.sizes.len() - 1;
        let offsets = self.flat_offsets();
        let mut dz: Vec<f64> = match self.head {
            Head::Linear => d_out.to_vec(),
            Head::Tanh { scale } => cache.preacts[layers - 1]
                .iter()
                .zip(d_out)
                .map(|(&z, &d)| {
                    let t = z.tanh();
                    d * scale * (1.0 - t * t)
                })
                .collect(),
        };
        for l in (0..layers).rev() {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let w = &self.tensors[2 * l].data;
            let a = &cache.inputs[l];
            let (gw, gb) = (offsets[2 * l], offsets[2 * l + 1]);
            let mut da = vec![0.0; cols];
            for r in 0..rows {
                let d = dz[r];
                grads[gb + r] += d;
                let row = &w[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    grads[gw + r * cols + c] += d * a[c];
                    da[c] += row[c] * d;
                }
            }
            if l == 0 {
                return da;
            }
            dz = cache.preacts[l - 1]
                .iter()
                .zip(&da)
                .map(|(&z, &d)| d * if z > 0.0 { 1.0 } else { z.exp() })
                .collect();
        }
        unreachable!("loop returns at layer 0");
    }

    /// Starting flat index of each tensor.
    pub fn flat_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.tensors.len());
        let mut acc = 0;
        for t in &self.tensors {
            offsets.push(acc);
            acc += t.data.len();
        }
        offsets
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut i = 0;
        for t in self.tensors.iter_mut() {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[i..i + len]);
            i += len;
        }
    }

    /// Copies the parameters onto a tape as differentiable leaves.
    pub fn lift<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| t.data.iter().map(|&v| tape.var(v)).collect())
            .collect();
        MlpVars {
            sizes: self.sizes.clone(),
            head: self.head,
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        save_tensors(path, &self.tensors)
    }

    /// Loads a checkpoint and validates it against the expected layout.
    pub fn load(path: &Path, sizes: &[usize], head: Head) -> Result<Mlp, CheckpointError> {
        Mlp::from_tensors(sizes, head, load_tensors(path)?)
    }

    /// Assembles a network from already-loaded tensors, validating shapes.
    /// Lets composite checkpoints (several networks in one file) be split
    /// and reassembled by the caller.
    pub fn from_tensors(
        sizes: &[usize],
        head: Head,
        tensors: Vec<Tensor>,
    ) -> Result<Mlp, CheckpointError> {
        let layers = sizes.len() - 1;
        if tensors.len() != 2 * layers {
            return Err(CheckpointError::ShapeMismatch {
                expected: format!("{} tensors", 2 * layers),
                found: format!("{} tensors", tensors.len()),
            });
        }
        for l in 0..layers {
            let (rows, cols) = (sizes[l + 1], sizes[l]);
            let w = &tensors[2 * l];
            let b = &tensors[2 * l + 1];
            if (w.rows, w.cols) != (rows, cols) || (b.rows, b.cols) != (rows, 1) {
                return Err(CheckpointError::ShapeMismatch {
                    expected: format!("layer {l}: W {rows}x{cols}, b {rows}x1"),
                    found: format!(
                        "layer {l}: W {}x{}, b {}x{}",
                        w.rows, w.cols, b.rows, b.cols
                    ),
                });
            }
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            head,
            tensors,
        })
    }
}

/// Intermediate activations retained by `forward_cached`.
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

/// Tape-resident copy of an MLP's parameters.
pub struct MlpVars<'t> {
    sizes: Vec<usize>,
    head: Head,
    tensors: Vec<Vec<Var<'t>>>,
}

impl<'t> MlpVars<'t> {
    pub fn forward(&self, x: &[Var<'t>]) -> Vec<Var<'t>> {
        assert_eq!(x.len(), self.sizes[0]);
        let tensors: Vec<&[Var<'t>]> = self.tensors.iter().map(|t| t.as_slice()).collect();
        forward_generic(&self.sizes, self.head, &tensors, x)
    }

    /// Parameter gradients in the same flat order as `Mlp::params_flat`.
    pub fn grads_flat(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.tensors {
            out.extend(t.iter().map(|&v| grads.get(v)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net() -> Mlp {
        let mut net = Mlp::new(&[2, 2, 1], Head::Linear, 0);
        net.tensors[0].data = vec![1.0, 0.0, 0.0, 1.0];
        net.tensors[1].data = vec![0.5, -0.5];
        net.tensors[2].data = vec![2.0, -1.0];
        net.tensors[3].data = vec![0.1];
        net
    }

    #[test]
    fn hand_computed_forward() {
        let net = tiny_net();
        let out = net.forward(&[0.3, 0.2]);
        // Hidden: elu(0.8) = 0.8, elu(-0.3) = exp(-0.3) - 1.
        let h2 = (-0.3f64).exp() - 1.0;
        let expect = 2.0 * 0.8 - h2 + 0.1;
        assert!((out[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn tanh_head_bounds_and_scales() {
        let mut net = tiny_net();
        net.head = Head::Tanh { scale: 0.5 };
        let out = net.forward(&[3.0, 3.0]);
        assert!(out[0].abs() <= 0.5);
        // Pre-activations 3.5 and 2.5 are both positive, so elu is identity.
        let z = 2.0 * 3.5 - 2.5 + 0.1;
        assert!((out[0] - 0.5 * z.tanh()).abs() < 1e-15);
    }

    #[test]
    fn init_is_seed_deterministic_with_quiet_final_layer() {
        let a = Mlp::new(&[36, 256, 256, 12], Head::Tanh { scale: 0.5 }, 7);
        let b = Mlp::new(&[36, 256, 256, 12], Head::Tanh { scale: 0.5 }, 7);
        assert_eq!(a.params_flat(), b.params_flat());
        let c = Mlp::new(&[36, 256, 256, 12], Head::Tanh { scale: 0.5 }, 8);
        assert_ne!(a.params_flat(), c.params_flat());

        let final_w = &a.tensors[4].data;
        let max = final_w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = 0.01 * (6.0 / 256.0f64).sqrt();
        assert!(max <= bound, "final layer too loud: {max}");
        // Fresh policy barely moves.
        let out = a.forward(&vec![0.5; 36]);
        assert!(out.iter().all(|v| v.abs() < 0.05), "{out:?}");
    }

    #[test]
    fn tape_forward_matches_plain_bitwise() {
        let net = Mlp::new(&[5, 8, 8, 3], Head::Tanh { scale: 0.5 }, 3);
        let x: Vec<f64> = (0..5).map(|i| 0.1 * i as f64 - 0.2).collect();
        let plain = net.forward(&x);
        let tape = Tape::new();
        let lifted = net.lift(&tape);
        let xv: Vec<Var> = x.iter().map(|&v| tape.constant(v)).collect();
        let out = lifted.forward(&xv);
        for (a, b) in plain.iter().zip(&out) {
            assert_eq!(a.to_bits(), b.value().to_bits());
        }
    }

    #[test]
    fn tape_gradients_match_manual_backward() {
        let net = Mlp::new(&[4, 6, 2], Head::Tanh { scale: 0.5 }, 11);
        let x = [0.3, -0.7, 0.05, 1.2];

        // Manual path: d(sum of outputs)/d(params).
        let (out, cache) = net.forward_cached(&x);
        let mut manual = vec![0.0; net.num_params()];
        let dx_manual = net.backward(&cache, &[1.0, 1.0], &mut manual);

        // Tape path for the same scalar.
        let tape = Tape::new();
        let lifted = net.lift(&tape);
        let xv: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
        let outv = lifted.forward(&xv);
        let loss = outv[0] + outv[1];
        assert!((loss.value() - (out[0] + out[1])).abs() < 1e-15);
        let grads = tape.backward(loss);
        let tape_flat = lifted.grads_flat(&grads);

        for (i, (m, t)) in manual.iter().zip(&tape_flat).enumerate() {
            assert!((m - t).abs() < 1e-12, "param {i}: manual {m} tape {t}");
        }
        for (i, xi) in xv.iter().enumerate() {
            assert!((grads.get(*xi) - dx_manual[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn manual_backward_matches_finite_differences() {
        let mut net = Mlp::new(&[3, 5, 2], Head::Linear, 21);
        let x = [0.4, -0.2, 0.9];
        let (_, cache) = net.forward_cached(&x);
        let mut analytic = vec![0.0; net.num_params()];
        net.backward(&cache, &[1.0, -0.5], &mut analytic);

        let scalar = |net: &Mlp| {
            let o = net.forward(&x);
            o[0] - 0.5 * o[1]
        };
        let eps = 1e-6;
        let flat = net.params_flat();
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += eps;
            net.set_params_flat(&plus);
            let fp = scalar(&net);
            let mut minus = flat.clone();
            minus[i] -= eps;
            net.set_params_flat(&minus);
            let fm = scalar(&net);
            net.set_params_flat(&flat);
            let fd = (fp - fm) / (2.0 * eps);
            assert!(
                (analytic[i] - fd).abs() < 1e-7,
                "param {i}: analytic {} fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Mlp::new(&[6, 4, 3], Head::Tanh { scale: 0.5 }, 42);
        net.save(&path).unwrap();
        let loaded = Mlp::load(&path, &[6, 4, 3], Head::Tanh { scale: 0.5 }).unwrap();
        let (a, b) = (net.params_flat(), loaded.params_flat());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_rejects_wrong_shapes_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Mlp::new(&[6, 4, 3], Head::Linear, 1);
        net.save(&path).unwrap();
        match Mlp::load(&path, &[6, 5, 3], Head::Linear) {
            Err(CheckpointError::ShapeMismatch { .. }) => {}
            other => panic!("expected shape mismatch, got {other:?}"),
        }
        std::fs::write(&path, b"NOTACKPT????????").unwrap();
        match Mlp::load(&path, &[6, 4, 3], Head::Linear) {
            Err(CheckpointError::BadMagic) => {}
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_layout_is_stable_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.ckpt");
        save_tensors(
            &path,
            &[Tensor {
                rows: 1,
                cols: 2,
                data: vec![1.0, -2.0],
            }],
        )
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(
            f64::from_le_bytes(bytes[20..28].try_into().unwrap()),
            1.0
        );
        assert_eq!(
            f64::from_le_bytes(bytes[28..36].try_into().unwrap()),
            -2.0
        );
        assert_eq!(bytes.len(), 36);
    }
}
