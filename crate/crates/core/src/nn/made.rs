//! Masked autoregressive networks (MADE) emitting per-dimension spline
//! parameters.
//!
//! The output block for dimension `i` is a function of data inputs with index
//! `< i` plus the unmasked condition features. Degrees are assigned
//! sequentially (`1 + k mod (D-1)`), inputs keep their natural order, and the
//! final layer starts at zero so a fresh network parameterizes the identity
//! transform for every dimension.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::tape::{NodeId, Tape};
use crate::rng;

/// One dense layer with an optional autoregressive connectivity mask.
///
/// Weights are row-major `[out, in]`; the bias is a `[1, out]` row. Masked
/// entries are zero at initialization and their gradients are zeroed during
/// backprop, so they stay zero through training.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
    pub mask: Option<Matrix>,
}

/// Masked autoregressive network.
#[derive(Debug, Clone)]
pub struct MadeNetwork {
    pub input_dim: usize,
    pub cond_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub params_per_dim: usize,
    pub layers: Vec<Dense>,
}

/// How a tape pass treats the network's parameters.
#[derive(Debug, Clone, Copy)]
pub enum ParamMode {
    /// Register parameters for gradient accumulation, keys starting at the
    /// given base. Each dense layer consumes two keys (weights, bias).
    Train { base_key: usize },
    /// Parameters are constants; only input gradients flow through.
    Frozen,
}

/// Builds a MADE with deterministic weights.
///
/// Hidden weights are uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` drawn
/// from a counter-based stream keyed by `(seed, layer)`; the output layer is
/// zero-initialized.
pub fn build_made(
    input_dim: usize,
    cond_dim: usize,
    hidden_dims: &[usize],
    params_per_dim: usize,
    seed: u64,
) -> Result<MadeNetwork> {
    if input_dim < 1 {
        return Err(Error::config("made: input_dim must be >= 1"));
    }
    if params_per_dim < 1 {
        return Err(Error::config("made: params_per_dim must be >= 1"));
    }
    if hidden_dims.is_empty() || hidden_dims.iter().any(|&h| h < 1) {
        return Err(Error::config("made: hidden dims must all be >= 1"));
    }

    // Degree assignment: inputs get 1..=D, hidden units cycle through
    // 1..=D-1. With D == 1 hidden units take degree 0, which masks out every
    // data input while the condition path stays fully connected.
    let input_degrees: Vec<usize> = (1..=input_dim).collect();
    let hidden_degrees: Vec<Vec<usize>> = hidden_dims
        .iter()
        .map(|&h| {
            (0..h)
                .map(|k| {
                    if input_dim > 1 {
                        1 + (k % (input_dim - 1))
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();

    let mut layers = Vec::with_capacity(hidden_dims.len() + 1);
    let mut prev_width = input_dim + cond_dim;

    for (l, &h) in hidden_dims.iter().enumerate() {
        let mut mask = Matrix::zeros(h, prev_width);
        for r in 0..h {
            let dr = hidden_degrees[l][r];
            if l == 0 {
                for c in 0..input_dim {
                    if dr >= input_degrees[c] {
                        mask.set(r, c, 1.0);
                    }
                }
                for c in input_dim..prev_width {
                    mask.set(r, c, 1.0); // condition features are unmasked
                }
            } else {
                for c in 0..prev_width {
                    if dr >= hidden_degrees[l - 1][c] {
                        mask.set(r, c, 1.0);
                    }
                }
            }
        }
        let mut w = init_uniform(h, prev_width, seed, l as u64);
        w.hadamard_assign(&mask);
        layers.push(Dense {
            w,
            b: Matrix::zeros(1, h),
            mask: Some(mask),
        });
        prev_width = h;
    }

    // Output layer: block for dimension i connects to hidden units with
    // degree <= i. Zero-initialized for an identity-flow start.
    let last = hidden_degrees.last().unwrap();
    let out_width = input_dim * params_per_dim;
    let mut mask = Matrix::zeros(out_width, prev_width);
    for i in 0..input_dim {
        for p in 0..params_per_dim {
            let r = i * params_per_dim + p;
            for c in 0..prev_width {
                if last[c] <= i {
                    mask.set(r, c, 1.0);
                }
            }
        }
    }
    layers.push(Dense {
        w: Matrix::zeros(out_width, prev_width),
        b: Matrix::zeros(1, out_width),
        mask: Some(mask),
    });

    Ok(MadeNetwork {
        input_dim,
        cond_dim,
        hidden_dims: hidden_dims.to_vec(),
        params_per_dim,
        layers,
    })
}

fn init_uniform(rows: usize, cols: usize, seed: u64, layer: u64) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    let mut r = rng::stream(seed, &[0x6d61_6465, layer]);
    let data = (0..rows * cols)
        .map(|_| rng::uniform(&mut r, -bound, bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

impl MadeNetwork {
    /// Number of tape parameter keys this network consumes in train mode.
    pub fn param_key_count(&self) -> usize {
        self.layers.len() * 2
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.rows() * l.w.cols() + l.b.cols())
            .sum()
    }

    /// Batched forward pass without gradient recording.
    ///
    /// `x` is `[n, D]`, `cond` is `[n, C]`; the result is `[n, D*P]` with the
    /// spline parameters for dimension `i` in columns `i*P..(i+1)*P`.
    pub fn forward_batch(&self, x: &Matrix, cond: &Matrix) -> Result<Matrix> {
        if !x.is_finite() || !cond.is_finite() {
            return Err(Error::Numeric("made forward: non-finite input".into()));
        }
        assert_eq!(x.cols(), self.input_dim, "made: input dim");
        assert_eq!(cond.cols(), self.cond_dim, "made: cond dim");
        let mut h = if self.cond_dim > 0 {
            x.concat_cols(cond)
        } else {
            x.clone()
        };
        let n_layers = self.layers.len();
        for (l, dense) in self.layers.iter().enumerate() {
            let mut z = h.matmul_nt(&dense.w);
            z.add_bias_row(&dense.b);
            h = if l + 1 < n_layers { z.map(f64::tanh) } else { z };
        }
        Ok(h)
    }

    /// Single-sample convenience wrapper around [`MadeNetwork::forward_batch`].
    pub fn forward(&self, x: &[f64], cond: &[f64]) -> Result<Matrix> {
        let xm = Matrix::row_vector(x);
        let cm = Matrix::row_vector(cond);
        let out = self.forward_batch(&xm, &cm)?;
        Ok(Matrix::from_vec(
            self.input_dim,
            self.params_per_dim,
            out.as_slice().to_vec(),
        ))
    }

    /// Records the forward pass on a tape. Returns the `[n, D*P]` output node.
    pub fn tape_forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: NodeId,
        cond: Option<NodeId>,
        mode: ParamMode,
    ) -> NodeId {
        let mut h = match cond {
            Some(c) if self.cond_dim > 0 => tape.concat_cols(x, c),
            _ => x,
        };
        let n_layers = self.layers.len();
        for (l, dense) in self.layers.iter().enumerate() {
            let (wid, bid) = match mode {
                ParamMode::Train { base_key } => (
                    tape.param(&dense.w, base_key + 2 * l),
                    tape.param(&dense.b, base_key + 2 * l + 1),
                ),
                ParamMode::Frozen => (tape.borrowed(&dense.w), tape.borrowed(&dense.b)),
            };
            let z = tape.linear(h, wid, bid, dense.mask.as_ref());
            h = if l + 1 < n_layers { tape.tanh(z) } else { z };
        }
        h
    }

    /// Mutable views over all parameter tensors, in (weights, bias) pairs per
    /// layer — the order matching tape key assignment and checkpoints.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    /// Randomizes every parameter (mask respected), including the output
    /// layer. Used to build non-identity transforms in tests and benchmarks.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        for (l, dense) in self.layers.iter_mut().enumerate() {
            let mut r = rng::stream(seed, &[0x7270_6e64, l as u64]);
            for v in dense.w.as_mut_slice() {
                *v = rng::uniform(&mut r, -scale, scale);
            }
            if let Some(mask) = &dense.mask {
                dense.w.hadamard_assign(mask);
            }
            for v in dense.b.as_mut_slice() {
                *v = rng::uniform(&mut r, -scale, scale);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_network_outputs_zero_blocks() {
        let net = build_made(4, 3, &[16, 16], 7, 11).unwrap();
        let x = Matrix::from_vec(2, 4, vec![0.3, -1.0, 2.0, 0.1, -0.4, 0.9, 0.0, 1.5]);
        let cond = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.2]);
        let out = net.forward_batch(&x, &cond).unwrap();
        assert_eq!(out.shape(), (2, 28));
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_zero_ignores_all_data_inputs() {
        let mut net = build_made(1, 0, &[8], 3, 5).unwrap();
        net.randomize(0.7, 99);
        let a = net.forward(&[0.3], &[]).unwrap();
        let b = net.forward(&[-57.0], &[]).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn autoregressive_property_random_probes() {
        let mut net = build_made(4, 10, &[32, 32], 23, 3).unwrap();
        net.randomize(0.5, 17);
        let mut r = rng::stream(8, &[1]);
        let p = net.params_per_dim;
        for probe in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let cond: Vec<f64> = (0..10).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
            let base = net.forward(&x, &cond).unwrap();
            let dim = probe % 4;
            let mut x2 = x.clone();
            x2[dim] += rng::uniform(&mut r, 0.1, 3.0);
            let pert = net.forward(&x2, &cond).unwrap();
            // Blocks 0..=dim must be unchanged; some later block should move.
            for i in 0..=dim {
                for j in 0..p {
                    assert_eq!(base.get(i, j), pert.get(i, j), "block {i} changed");
                }
            }
        }
        // Perturbing the condition changes every block (it is unmasked).
        let x = vec![0.1, 0.2, 0.3, 0.4];
        let c1 = vec![0.5; 10];
        let mut c2 = c1.clone();
        c2[0] += 1.0;
        let a = net.forward(&x, &c1).unwrap();
        let b = net.forward(&x, &c2).unwrap();
        assert_ne!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn invalid_dimensions_are_rejected() {
        assert!(build_made(0, 0, &[8], 3, 1).is_err());
        assert!(build_made(4, 0, &[], 3, 1).is_err());
        assert!(build_made(4, 0, &[0], 3, 1).is_err());
        assert!(build_made(4, 0, &[8], 0, 1).is_err());
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let net = build_made(2, 0, &[4], 3, 1).unwrap();
        let x = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]);
        let cond = Matrix::zeros(1, 0);
        assert!(matches!(
            net.forward_batch(&x, &cond),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_made(3, 2, &[8, 8], 5, 42).unwrap();
        let b = build_made(3, 2, &[8, 8], 5, 42).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.w.as_slice(), lb.w.as_slice());
        }
    }
}
