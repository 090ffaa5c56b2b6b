//! Define-by-run reverse-mode autodiff over batched `f64` matrices.
//!
//! The op set is deliberately small: exactly what masked autoregressive
//! networks, spline transforms and the distillation losses need. Values are
//! computed eagerly at node construction; `backward` replays the tape in
//! reverse and accumulates gradients for every registered parameter key and
//! every intermediate node.
//!
//! Gradients are deterministic: parallel sections split work by row, and each
//! output element is reduced in a fixed index order.

use std::sync::Arc;

use rayon::prelude::*;

use crate::linalg::{invert_permutation, Matrix};
use crate::physics::channel_index;
use crate::rqs;

pub type NodeId = usize;

enum Payload<'a> {
    Owned(Matrix),
    Borrowed(&'a Matrix),
}

impl Payload<'_> {
    #[inline]
    fn get(&self) -> &Matrix {
        match self {
            Payload::Owned(m) => m,
            Payload::Borrowed(m) => m,
        }
    }
}

enum Op<'a> {
    Leaf,
    Param {
        key: usize,
    },
    /// `y = x W^T + b`, with an optional connectivity mask applied to the
    /// weight gradient.
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        mask: Option<&'a Matrix>,
    },
    Tanh {
        x: NodeId,
    },
    ConcatCols {
        a: NodeId,
        b: NodeId,
    },
    PermuteCols {
        x: NodeId,
        perm: &'a [usize],
    },
    SliceCols {
        x: NodeId,
        from: usize,
        to: usize,
    },
    /// Elementwise spline transform. Output is `[n, 2D]`: transformed values
    /// in the first `D` columns, log-derivative contributions in the rest.
    Rqs {
        values: NodeId,
        raw: NodeId,
        bins: usize,
        bound: f64,
        inverse: bool,
    },
    /// Raw spline parameters to their constrained representation.
    RqsConstrain {
        raw: NodeId,
        bins: usize,
        bound: f64,
    },
    /// Sigmoid, sum-normalize, then detector channel sums. `[n, G^2] -> [n, 5]`.
    SoftChannels {
        v: NodeId,
        grid: usize,
    },
    /// Squared-error reduction to a scalar, optionally per-sample weighted.
    /// `per_sample_sum` sums over columns (channel-loss style); otherwise the
    /// per-sample reduction is a mean over elements.
    Mse {
        a: NodeId,
        b: NodeId,
        weights: Option<Arc<Vec<f64>>>,
        per_sample_sum: bool,
    },
    RowSum {
        x: NodeId,
    },
    StdNormalLogPdf {
        z: NodeId,
    },
    MeanAll {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// `sum_i coeff_i * node_i` over same-shaped inputs.
    LinComb {
        terms: Vec<(f64, NodeId)>,
    },
}

struct Node<'a> {
    value: Payload<'a>,
    op: Op<'a>,
    needs_grad: bool,
}

/// One tape per recorded computation (typically one training batch).
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Matrix>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Payload<'a>, op: Op<'a>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    #[inline]
    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        self.nodes[id].value.get()
    }

    /// Value of a `[1,1]` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let m = self.value(id);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m.get(0, 0)
    }

    /// Gradient of the last `backward` seed with respect to this node.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn constant(&mut self, m: Matrix) -> NodeId {
        self.push(Payload::Owned(m), Op::Leaf, false)
    }

    pub fn borrowed(&mut self, m: &'a Matrix) -> NodeId {
        self.push(Payload::Borrowed(m), Op::Leaf, false)
    }

    /// Registers a trainable parameter under an accumulation key.
    pub fn param(&mut self, m: &'a Matrix, key: usize) -> NodeId {
        self.push(Payload::Borrowed(m), Op::Param { key }, true)
    }

    pub fn linear(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        mask: Option<&'a Matrix>,
    ) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        assert_eq!(xv.cols(), wv.cols(), "linear: input dim mismatch");
        assert_eq!(bv.shape(), (1, wv.rows()), "linear: bias shape mismatch");
        let mut y = xv.matmul_nt(wv);
        y.add_bias_row(bv);
        let needs = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Payload::Owned(y), Op::Linear { x, w, b, mask }, needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(f64::tanh);
        let needs = self.ng(x);
        self.push(Payload::Owned(y), Op::Tanh { x }, needs)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.value(a).concat_cols(self.value(b));
        let needs = self.ng(a) || self.ng(b);
        self.push(Payload::Owned(y), Op::ConcatCols { a, b }, needs)
    }

    pub fn permute_cols(&mut self, x: NodeId, perm: &'a [usize]) -> NodeId {
        let y = self.value(x).permute_cols(perm);
        let needs = self.ng(x);
        self.push(Payload::Owned(y), Op::PermuteCols { x, perm }, needs)
    }

    pub fn slice_cols(&mut self, x: NodeId, from: usize, to: usize) -> NodeId {
        let y = self.value(x).slice_cols(from, to);
        let needs = self.ng(x);
        self.push(Payload::Owned(y), Op::SliceCols { x, from, to }, needs)
    }

    fn rqs_eval(
        values: &Matrix,
        raw: &Matrix,
        bins: usize,
        bound: f64,
        inverse: bool,
    ) -> Matrix {
        let (n, d) = values.shape();
        let p = rqs::params_per_dim(bins);
        assert_eq!(raw.shape(), (n, d * p), "rqs: raw parameter shape");
        let mut out = Matrix::zeros(n, 2 * d);
        out.as_mut_slice()
            .par_chunks_mut(2 * d)
            .zip(values.as_slice().par_chunks(d))
            .zip(raw.as_slice().par_chunks(d * p))
            .for_each(|((orow, vrow), rrow)| {
                for j in 0..d {
                    let slice = &rrow[j * p..(j + 1) * p];
                    let (y, ld) = if inverse {
                        rqs::transform_inverse(vrow[j], slice, bins, bound)
                    } else {
                        rqs::transform_forward(vrow[j], slice, bins, bound)
                    };
                    orow[j] = y;
                    orow[d + j] = ld;
                }
            });
        out
    }

    pub fn rqs_forward(&mut self, values: NodeId, raw: NodeId, bins: usize, bound: f64) -> NodeId {
        let y = Self::rqs_eval(self.value(values), self.value(raw), bins, bound, false);
        let needs = self.ng(values) || self.ng(raw);
        self.push(
            Payload::Owned(y),
            Op::Rqs {
                values,
                raw,
                bins,
                bound,
                inverse: false,
            },
            needs,
        )
    }

    pub fn rqs_inverse(&mut self, values: NodeId, raw: NodeId, bins: usize, bound: f64) -> NodeId {
        let y = Self::rqs_eval(self.value(values), self.value(raw), bins, bound, true);
        let needs = self.ng(values) || self.ng(raw);
        self.push(
            Payload::Owned(y),
            Op::Rqs {
                values,
                raw,
                bins,
                bound,
                inverse: true,
            },
            needs,
        )
    }

    pub fn rqs_constrain(&mut self, raw: NodeId, bins: usize, bound: f64) -> NodeId {
        let rv = self.value(raw);
        let (n, cols) = rv.shape();
        let p = rqs::params_per_dim(bins);
        assert_eq!(cols % p, 0, "rqs_constrain: column count");
        let d = cols / p;
        let mut out = Matrix::zeros(n, cols);
        out.as_mut_slice()
            .par_chunks_mut(cols)
            .zip(rv.as_slice().par_chunks(cols))
            .for_each(|(orow, rrow)| {
                for j in 0..d {
                    rqs::constrained_vector(
                        &rrow[j * p..(j + 1) * p],
                        bins,
                        bound,
                        &mut orow[j * p..(j + 1) * p],
                    );
                }
            });
        let needs = self.ng(raw);
        self.push(Payload::Owned(out), Op::RqsConstrain { raw, bins, bound }, needs)
    }

    pub fn soft_channels(&mut self, v: NodeId, grid: usize) -> NodeId {
        let vv = self.value(v);
        assert_eq!(vv.cols(), grid * grid, "soft_channels: grid size");
        let mut out = Matrix::zeros(vv.rows(), 5);
        for (orow, vrow) in out
            .as_mut_slice()
            .chunks_exact_mut(5)
            .zip(vv.iter_rows())
        {
            let mut total = 0.0;
            let mut sums = [0.0f64; 5];
            for (idx, &x) in vrow.iter().enumerate() {
                let s = sigmoid(x);
                total += s;
                sums[channel_index(grid, idx)] += s;
            }
            for (o, s) in orow.iter_mut().zip(&sums) {
                *o = s / total;
            }
        }
        let needs = self.ng(v);
        self.push(Payload::Owned(out), Op::SoftChannels { v, grid }, needs)
    }

    pub fn mse(
        &mut self,
        a: NodeId,
        b: NodeId,
        weights: Option<Arc<Vec<f64>>>,
        per_sample_sum: bool,
    ) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mse: shape mismatch");
        if let Some(w) = &weights {
            assert_eq!(w.len(), av.rows(), "mse: weight length");
        }
        let n = av.rows();
        let denom = if per_sample_sum {
            n as f64
        } else {
            (n * av.cols()) as f64
        };
        let mut total = 0.0;
        for i in 0..n {
            let wi = weights.as_ref().map_or(1.0, |w| w[i]);
            let mut q = 0.0;
            for (x, y) in av.row(i).iter().zip(bv.row(i)) {
                let d = x - y;
                q += d * d;
            }
            total += wi * q;
        }
        let needs = self.ng(a) || self.ng(b);
        self.push(
            Payload::Owned(Matrix::from_vec(1, 1, vec![total / denom])),
            Op::Mse {
                a,
                b,
                weights,
                per_sample_sum,
            },
            needs,
        )
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows(), 1);
        for (i, row) in xv.iter_rows().enumerate() {
            out.set(i, 0, row.iter().sum());
        }
        let needs = self.ng(x);
        self.push(Payload::Owned(out), Op::RowSum { x }, needs)
    }

    pub fn std_normal_log_pdf(&mut self, z: NodeId) -> NodeId {
        let zv = self.value(z);
        let d = zv.cols() as f64;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI).ln();
        let mut out = Matrix::zeros(zv.rows(), 1);
        for (i, row) in zv.iter_rows().enumerate() {
            let sq: f64 = row.iter().map(|v| v * v).sum();
            out.set(i, 0, norm - 0.5 * sq);
        }
        let needs = self.ng(z);
        self.push(Payload::Owned(out), Op::StdNormalLogPdf { z }, needs)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let total: f64 = xv.as_slice().iter().sum();
        let mean = total / (xv.rows() * xv.cols()) as f64;
        let needs = self.ng(x);
        self.push(
            Payload::Owned(Matrix::from_vec(1, 1, vec![mean])),
            Op::MeanAll { x },
            needs,
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let mut y = av.clone();
        y.axpy(1.0, bv);
        let needs = self.ng(a) || self.ng(b);
        self.push(Payload::Owned(y), Op::Add { a, b }, needs)
    }

    pub fn linear_combination(&mut self, terms: &[(f64, NodeId)]) -> NodeId {
        assert!(!terms.is_empty());
        let shape = self.value(terms[0].1).shape();
        let mut y = Matrix::zeros(shape.0, shape.1);
        let mut needs = false;
        for &(c, id) in terms {
            y.axpy(c, self.value(id));
            needs |= self.ng(id);
        }
        self.push(
            Payload::Owned(y),
            Op::LinComb {
                terms: terms.to_vec(),
            },
            needs,
        )
    }

    /// Runs reverse-mode accumulation from a scalar loss node.
    ///
    /// Returns per-parameter-key gradients; node gradients stay available
    /// through [`Tape::grad`].
    pub fn backward(&mut self, loss: NodeId, n_param_keys: usize) -> Vec<Option<Matrix>> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward seed must be scalar");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        let mut param_grads: Vec<Option<Matrix>> = (0..n_param_keys).map(|_| None).collect();

        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(cot) = self.grads[id].take() else {
                continue;
            };
            self.apply_backward(id, &cot, &mut param_grads);
            self.grads[id] = Some(cot);
        }
        param_grads
    }

    fn accumulate(&mut self, id: NodeId, delta: Matrix) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => g.axpy(1.0, &delta),
            slot => *slot = Some(delta),
        }
    }

    fn apply_backward(&mut self, id: NodeId, cot: &Matrix, param_grads: &mut [Option<Matrix>]) {
        // Ops are matched by moving the minimal data out first so `self`
        // can be reborrowed for accumulation.
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Param { key } => {
                let key = *key;
                match &mut param_grads[key] {
                    Some(g) => g.axpy(1.0, cot),
                    slot => *slot = Some(cot.clone()),
                }
            }
            Op::Linear { x, w, b, mask } => {
                let (x, w, b, mask) = (*x, *w, *b, *mask);
                if self.ng(x) {
                    let dx = cot.matmul_nn(self.value(w));
                    self.accumulate(x, dx);
                }
                if self.ng(w) {
                    let mut dw = cot.matmul_tn(self.value(x));
                    if let Some(m) = mask {
                        dw.hadamard_assign(m);
                    }
                    self.accumulate(w, dw);
                }
                if self.ng(b) {
                    self.accumulate(b, cot.col_sums());
                }
            }
            Op::Tanh { x } => {
                let x = *x;
                let y = self.value(id);
                let mut dx = cot.clone();
                for (d, yv) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *d *= 1.0 - yv * yv;
                }
                self.accumulate(x, dx);
            }
            Op::ConcatCols { a, b } => {
                let (a, b) = (*a, *b);
                let ac = self.value(a).cols();
                let total = self.value(id).cols();
                if self.ng(a) {
                    self.accumulate(a, cot.slice_cols(0, ac));
                }
                if self.ng(b) {
                    self.accumulate(b, cot.slice_cols(ac, total));
                }
            }
            Op::PermuteCols { x, perm } => {
                let (x, perm) = (*x, *perm);
                let inv = invert_permutation(perm);
                self.accumulate(x, cot.permute_cols(&inv));
            }
            Op::SliceCols { x, from, to } => {
                let (x, from, to) = (*x, *from, *to);
                let src = self.value(x);
                let mut dx = Matrix::zeros(src.rows(), src.cols());
                for i in 0..src.rows() {
                    dx.row_mut(i)[from..to].copy_from_slice(cot.row(i));
                }
                self.accumulate(x, dx);
            }
            Op::Rqs {
                values,
                raw,
                bins,
                bound,
                inverse,
            } => {
                let (values, raw, bins, bound, inverse) = (*values, *raw, *bins, *bound, *inverse);
                let vv = self.value(values);
                let rv = self.value(raw);
                let (n, d) = vv.shape();
                let p = rqs::params_per_dim(bins);
                let mut dv = Matrix::zeros(n, d);
                let mut dr = Matrix::zeros(n, d * p);
                dv.as_mut_slice()
                    .par_chunks_mut(d)
                    .zip(dr.as_mut_slice().par_chunks_mut(d * p))
                    .zip(cot.as_slice().par_chunks(2 * d))
                    .zip(vv.as_slice().par_chunks(d))
                    .zip(rv.as_slice().par_chunks(d * p))
                    .for_each(|((((dvrow, drrow), crow), vrow), rrow)| {
                        for j in 0..d {
                            let slice = &rrow[j * p..(j + 1) * p];
                            let bar = &mut drrow[j * p..(j + 1) * p];
                            if inverse {
                                rqs::inverse_adjoint(
                                    vrow[j], slice, bins, bound, crow[j], crow[d + j],
                                    &mut dvrow[j], bar,
                                );
                            } else {
                                rqs::forward_adjoint(
                                    vrow[j], slice, bins, bound, crow[j], crow[d + j],
                                    &mut dvrow[j], bar,
                                );
                            }
                        }
                    });
                if self.ng(values) {
                    self.accumulate(values, dv);
                }
                if self.ng(raw) {
                    self.accumulate(raw, dr);
                }
            }
            Op::RqsConstrain { raw, bins, bound } => {
                let (raw, bins, bound) = (*raw, *bins, *bound);
                let rv = self.value(raw);
                let (n, cols) = rv.shape();
                let p = rqs::params_per_dim(bins);
                let d = cols / p;
                let mut dr = Matrix::zeros(n, cols);
                dr.as_mut_slice()
                    .par_chunks_mut(cols)
                    .zip(cot.as_slice().par_chunks(cols))
                    .zip(rv.as_slice().par_chunks(cols))
                    .for_each(|((drrow, crow), rrow)| {
                        for j in 0..d {
                            rqs::constrain_adjoint(
                                &rrow[j * p..(j + 1) * p],
                                bins,
                                bound,
                                &crow[j * p..(j + 1) * p],
                                &mut drrow[j * p..(j + 1) * p],
                            );
                        }
                    });
                self.accumulate(raw, dr);
            }
            Op::SoftChannels { v, grid } => {
                let (v, grid) = (*v, *grid);
                let vv = self.value(v);
                let out = self.value(id);
                let mut dv = Matrix::zeros(vv.rows(), vv.cols());
                for i in 0..vv.rows() {
                    let vrow = vv.row(i);
                    let orow = out.row(i);
                    let crow = cot.row(i);
                    let total: f64 = vrow.iter().map(|&x| sigmoid(x)).sum();
                    let common: f64 = crow.iter().zip(orow).map(|(c, o)| c * o).sum();
                    let drow = dv.row_mut(i);
                    for (idx, &x) in vrow.iter().enumerate() {
                        let s = sigmoid(x);
                        let c = crow[channel_index(grid, idx)];
                        drow[idx] = (c - common) / total * s * (1.0 - s);
                    }
                }
                self.accumulate(v, dv);
            }
            Op::Mse {
                a,
                b,
                weights,
                per_sample_sum,
            } => {
                let (a, b) = (*a, *b);
                let weights = weights.clone();
                let per_sample_sum = *per_sample_sum;
                let av = self.value(a);
                let bv = self.value(b);
                let n = av.rows();
                let denom = if per_sample_sum {
                    n as f64
                } else {
                    (n * av.cols()) as f64
                };
                let scale = cot.get(0, 0) * 2.0 / denom;
                let mut da = Matrix::zeros(n, av.cols());
                for i in 0..n {
                    let wi = weights.as_ref().map_or(1.0, |w| w[i]);
                    let f = scale * wi;
                    let drow = da.row_mut(i);
                    for (d, (x, y)) in drow.iter_mut().zip(av.row(i).iter().zip(bv.row(i))) {
                        *d = f * (x - y);
                    }
                }
                if self.ng(b) {
                    let mut db = da.clone();
                    db.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
                    self.accumulate(b, db);
                }
                if self.ng(a) {
                    self.accumulate(a, da);
                }
            }
            Op::RowSum { x } => {
                let x = *x;
                let xv = self.value(x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for i in 0..xv.rows() {
                    let c = cot.get(i, 0);
                    dx.row_mut(i).iter_mut().for_each(|v| *v = c);
                }
                self.accumulate(x, dx);
            }
            Op::StdNormalLogPdf { z } => {
                let z = *z;
                let zv = self.value(z);
                let mut dz = Matrix::zeros(zv.rows(), zv.cols());
                for i in 0..zv.rows() {
                    let c = cot.get(i, 0);
                    for (d, v) in dz.row_mut(i).iter_mut().zip(zv.row(i)) {
                        *d = -c * v;
                    }
                }
                self.accumulate(z, dz);
            }
            Op::MeanAll { x } => {
                let x = *x;
                let xv = self.value(x);
                let c = cot.get(0, 0) / (xv.rows() * xv.cols()) as f64;
                let dx = Matrix::from_vec(
                    xv.rows(),
                    xv.cols(),
                    vec![c; xv.rows() * xv.cols()],
                );
                self.accumulate(x, dx);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    self.accumulate(a, cot.clone());
                }
                if self.ng(b) {
                    self.accumulate(b, cot.clone());
                }
            }
            Op::LinComb { terms } => {
                let terms = terms.clone();
                for (c, tid) in terms {
                    if self.ng(tid) {
                        let mut d = cot.clone();
                        d.as_mut_slice().iter_mut().for_each(|v| *v *= c);
                        self.accumulate(tid, d);
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        // loss = mean of x times n*m recovers sum; gradient of sum is all-ones.
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let mut tape = Tape::new();
        let xid = tape.param(&x, 0);
        let m = tape.mean_all(xid);
        let loss = tape.linear_combination(&[(6.0, m)]);
        let grads = tape.backward(loss, 1);
        let g = grads[0].as_ref().unwrap();
        assert!(g.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn mse_of_identical_inputs_has_zero_gradient() {
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let y = x.clone();
        let mut tape = Tape::new();
        let a = tape.param(&x, 0);
        let b = tape.constant(y);
        let loss = tape.mse(a, b, None, false);
        assert_eq!(tape.scalar(loss), 0.0);
        let grads = tape.backward(loss, 1);
        assert!(grads[0].as_ref().unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_masks_weight_gradient() {
        let x = Matrix::from_vec(1, 2, vec![1.0, 1.0]);
        let w = Matrix::from_vec(2, 2, vec![0.5, 0.0, 0.25, -0.5]);
        let b = Matrix::zeros(1, 2);
        let mask = Matrix::from_vec(2, 2, vec![1.0, 0.0, 1.0, 1.0]);
        let mut tape = Tape::new();
        let xid = tape.constant(x);
        let wid = tape.param(&w, 0);
        let bid = tape.param(&b, 1);
        let y = tape.linear(xid, wid, bid, Some(&mask));
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss, 2);
        let gw = grads[0].as_ref().unwrap();
        assert_eq!(gw.get(0, 1), 0.0, "masked entry must receive zero gradient");
        assert!(gw.get(0, 0) != 0.0);
    }

    #[test]
    fn weighted_mse_value() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 1.0, 2.0, 2.0]);
        let b = Matrix::zeros(2, 2);
        let mut tape = Tape::new();
        let aid = tape.constant(a);
        let bid = tape.constant(b);
        let w = Arc::new(vec![1.0, 3.0]);
        // per-sample means: 1.0 and 4.0 -> weighted mean over elements:
        // (1*2 + 3*8) / 4 = 6.5
        let loss = tape.mse(aid, bid, Some(w.clone()), false);
        assert!((tape.scalar(loss) - 6.5).abs() < 1e-15);
        // channel-style: (1*2 + 3*8) / 2 = 13
        let mut tape = Tape::new();
        let aid = tape.constant(Matrix::from_vec(2, 2, vec![1.0, 1.0, 2.0, 2.0]));
        let bid = tape.constant(Matrix::zeros(2, 2));
        let loss = tape.mse(aid, bid, Some(w), true);
        assert!((tape.scalar(loss) - 13.0).abs() < 1e-15);
    }
}
