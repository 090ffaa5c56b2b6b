//! Conditional autoregressive flow stacks.
//!
//! A stack is an ordered list of (permutation, masked network) layers sharing
//! one spline configuration. The direction tag picks which pass is the cheap
//! one:
//!
//! - MAF (teacher): density evaluation runs one masked-network call per
//!   layer; sampling must invert dimension-by-dimension, `D` calls per layer.
//! - IAF (student): sampling runs one call per layer; density evaluation is
//!   the sequential pass and exists only for tests.
//!
//! Every masked-network evaluation bumps an instrumented counter so the
//! call-count asymmetry is directly assertable.

mod distill;
mod train;

pub use distill::{distill_loss, DistillGraph, DistillTerms, LossWeights, Variant};
pub use train::{distill_student, train_teacher, DistillSetup, EpochLog, TrainConfig};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{invert_permutation, Matrix};
use crate::nn::made::{build_made, MadeNetwork, ParamMode};
use crate::nn::tape::{NodeId, Tape};
use crate::rng;
use crate::rqs;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowDirection {
    /// Fast density, slow sampling (teacher).
    Maf,
    /// Fast sampling, slow density (student).
    Iaf,
}

#[derive(Debug, Clone)]
pub struct FlowLayer {
    pub made: MadeNetwork,
    pub perm: Vec<usize>,
    inv_perm: Vec<usize>,
}

#[derive(Debug)]
pub struct FlowStack {
    pub direction: FlowDirection,
    pub data_dim: usize,
    pub cond_dim: usize,
    pub bins: usize,
    pub bound: f64,
    pub layers: Vec<FlowLayer>,
    made_calls: AtomicU64,
}

impl Clone for FlowStack {
    fn clone(&self) -> Self {
        FlowStack {
            direction: self.direction,
            data_dim: self.data_dim,
            cond_dim: self.cond_dim,
            bins: self.bins,
            bound: self.bound,
            layers: self.layers.clone(),
            made_calls: AtomicU64::new(0),
        }
    }
}

/// Batched pass record: per-layer chain values plus the constrained spline
/// parameters each masked network emitted.
#[derive(Debug)]
pub struct PassRecord {
    /// `values[l]` is the chain value at the input side of layer `l`;
    /// `values[L]` is the latent side. Length `L + 1`.
    pub values: Vec<Matrix>,
    /// Constrained `[n, D*P]` parameter tensors, one per layer.
    pub made_constrained: Vec<Matrix>,
    /// Per-sample summed log-determinant of the full pass (encode
    /// orientation: `log |dz/dx|`).
    pub logdet: Vec<f64>,
}

/// Tape-recorded pass: node ids into the tape.
pub struct TapePass {
    pub values: Vec<NodeId>,
    pub made_constrained: Vec<NodeId>,
    pub logdet_rows: Vec<NodeId>,
}

/// Builds a stack of `n_layers` flow layers. The first layer uses the
/// identity permutation, later layers reverse the dimension order.
pub fn build_stack(
    direction: FlowDirection,
    data_dim: usize,
    cond_dim: usize,
    n_layers: usize,
    hidden: &[usize],
    bins: usize,
    bound: f64,
    seed: u64,
) -> Result<FlowStack> {
    if n_layers == 0 {
        return Err(Error::config("flow: need at least one layer"));
    }
    if bins < 1 || bins > rqs::MAX_BINS {
        return Err(Error::config(format!(
            "flow: bins must be in 1..={}",
            rqs::MAX_BINS
        )));
    }
    if bound <= 0.0 {
        return Err(Error::config("flow: tail bound must be positive"));
    }
    let p = rqs::params_per_dim(bins);
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let mut seeder = rng::stream(seed, &[0x7374_6163, l as u64]);
        let made_seed = rand::RngCore::next_u64(&mut seeder);
        let made = build_made(data_dim, cond_dim, hidden, p, made_seed)?;
        let perm: Vec<usize> = if l == 0 {
            (0..data_dim).collect()
        } else {
            (0..data_dim).rev().collect()
        };
        let inv_perm = invert_permutation(&perm);
        layers.push(FlowLayer {
            made,
            perm,
            inv_perm,
        });
    }
    Ok(FlowStack {
        direction,
        data_dim,
        cond_dim,
        bins,
        bound,
        layers,
        made_calls: AtomicU64::new(0),
    })
}


/// Applies the spline elementwise across a batch: returns the transformed
/// matrix and per-row summed log-determinants. Parallel over rows with a
/// fixed per-row order.
fn rqs_rows(
    values: &Matrix,
    raw: &Matrix,
    bins: usize,
    bound: f64,
    inverse: bool,
) -> (Matrix, Vec<f64>) {
    let (n, d) = values.shape();
    let p = rqs::params_per_dim(bins);
    let mut out = Matrix::zeros(n, d);
    let mut ld = vec![0.0f64; n];
    out.as_mut_slice()
        .par_chunks_mut(d)
        .zip(ld.par_iter_mut())
        .zip(values.as_slice().par_chunks(d))
        .zip(raw.as_slice().par_chunks(d * p))
        .for_each(|(((orow, ld), vrow), rrow)| {
            for j in 0..d {
                let slice = &rrow[j * p..(j + 1) * p];
                let (y, l) = if inverse {
                    rqs::transform_inverse(vrow[j], slice, bins, bound)
                } else {
                    rqs::transform_forward(vrow[j], slice, bins, bound)
                };
                orow[j] = y;
                *ld += l;
            }
        });
    (out, ld)
}

/// Constrains every per-dimension parameter block in a raw batch.
fn constrain_rows(raw: &Matrix, bins: usize, bound: f64) -> Matrix {
    let (n, cols) = raw.shape();
    let p = rqs::params_per_dim(bins);
    let d = cols / p;
    let mut out = Matrix::zeros(n, cols);
    out.as_mut_slice()
        .par_chunks_mut(cols)
        .zip(raw.as_slice().par_chunks(cols))
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
    out
}

impl FlowStack {
    /// Fresh identity-initialized student with the teacher's architecture
    /// and permutations.
    pub fn new_student_like(teacher: &FlowStack, seed: u64) -> Result<FlowStack> {
        let mut student = build_stack(
            FlowDirection::Iaf,
            teacher.data_dim,
            teacher.cond_dim,
            teacher.layers.len(),
            &teacher.layers[0].made.hidden_dims,
            teacher.bins,
            teacher.bound,
            seed,
        )?;
        for (s, t) in student.layers.iter_mut().zip(&teacher.layers) {
            s.perm = t.perm.clone();
            s.inv_perm = t.inv_perm.clone();
        }
        Ok(student)
    }

    /// Exact parameter copy retagged with the given direction.
    pub fn copy_with_direction(&self, direction: FlowDirection) -> FlowStack {
        let mut out = self.clone();
        out.direction = direction;
        out
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn params_per_dim(&self) -> usize {
        rqs::params_per_dim(self.bins)
    }

    /// Number of tape parameter keys across all layers.
    pub fn param_key_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.made.param_key_count())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.made.param_count()).sum()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| l.made.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.made.params_mut())
            .collect()
    }

    /// Randomizes all parameters, head layers included. The result is a
    /// non-identity flow; used by tests and benchmarks.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.made.randomize(scale, seed.wrapping_add(l as u64 * 7919));
        }
    }

    pub fn made_calls(&self) -> u64 {
        self.made_calls.load(Ordering::Relaxed)
    }

    pub fn reset_made_calls(&self) {
        self.made_calls.store(0, Ordering::Relaxed);
    }

    fn count_call(&self) {
        self.made_calls.fetch_add(1, Ordering::Relaxed);
    }

    fn check_direction(&self, want: FlowDirection, what: &str) -> Result<()> {
        if self.direction != want {
            return Err(Error::config(format!(
                "{what} requires a {want:?}-direction stack"
            )));
        }
        Ok(())
    }

    fn check_shapes(&self, x: &Matrix, cond: &Matrix) -> Result<()> {
        if x.cols() != self.data_dim {
            return Err(Error::config("flow: data dimension mismatch"));
        }
        if cond.cols() != self.cond_dim {
            return Err(Error::config("flow: condition dimension mismatch"));
        }
        if x.rows() != cond.rows() {
            return Err(Error::config("flow: batch size mismatch"));
        }
        Ok(())
    }

    // -- pure passes --------------------------------------------------------

    /// MAF fast pass `x -> z` with per-layer records. One masked-network
    /// call per layer.
    pub fn fast_encode_record(&self, x: &Matrix, cond: &Matrix) -> Result<PassRecord> {
        self.check_direction(FlowDirection::Maf, "fast encode")?;
        self.check_shapes(x, cond)?;
        let n = x.rows();
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut mades = Vec::with_capacity(self.layers.len());
        let mut logdet = vec![0.0f64; n];
        values.push(x.clone());
        let mut cur = x.clone();
        for layer in &self.layers {
            let u = cur.permute_cols(&layer.perm);
            self.count_call();
            let raw = layer.made.forward_batch(&u, cond)?;
            let (y, ld) = rqs_rows(&u, &raw, self.bins, self.bound, false);
            for (acc, l) in logdet.iter_mut().zip(&ld) {
                *acc += l;
            }
            mades.push(constrain_rows(&raw, self.bins, self.bound));
            values.push(y.clone());
            cur = y;
        }
        Ok(PassRecord {
            values,
            made_constrained: mades,
            logdet,
        })
    }

    /// MAF fast pass without records: returns `(z, per-sample logdet)`.
    pub fn fast_encode(&self, x: &Matrix, cond: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        self.check_direction(FlowDirection::Maf, "fast encode")?;
        self.check_shapes(x, cond)?;
        let n = x.rows();
        let mut logdet = vec![0.0f64; n];
        let mut cur = x.clone();
        for layer in &self.layers {
            let u = cur.permute_cols(&layer.perm);
            self.count_call();
            let raw = layer.made.forward_batch(&u, cond)?;
            let (y, ld) = rqs_rows(&u, &raw, self.bins, self.bound, false);
            for (acc, l) in logdet.iter_mut().zip(&ld) {
                *acc += l;
            }
            cur = y;
        }
        Ok((cur, logdet))
    }

    /// Teacher's `x -> z` mapping with intermediates (the data-loop source).
    pub fn teacher_to_latent(&self, x: &Matrix, cond: &Matrix) -> Result<PassRecord> {
        self.fast_encode_record(x, cond)
    }

    /// Exact log density under the MAF: base log-pdf of the mapped latent
    /// plus the summed log-determinants.
    pub fn maf_log_prob(&self, x: &Matrix, cond: &Matrix) -> Result<Vec<f64>> {
        if !x.is_finite() || !cond.is_finite() {
            return Err(Error::Numeric("maf_log_prob: non-finite input".into()));
        }
        let (z, logdet) = self.fast_encode(x, cond)?;
        let d = self.data_dim as f64;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI).ln();
        Ok((0..x.rows())
            .map(|i| {
                let sq: f64 = z.row(i).iter().map(|v| v * v).sum();
                norm - 0.5 * sq + logdet[i]
            })
            .collect())
    }

    /// MAF sampling: inverts each layer dimension-by-dimension, `D` full
    /// masked-network calls per layer.
    pub fn slow_decode(&self, z: &Matrix, cond: &Matrix) -> Result<Matrix> {
        self.check_direction(FlowDirection::Maf, "maf sampling")?;
        self.check_shapes(z, cond)?;
        let (n, d) = z.shape();
        let p = self.params_per_dim();
        let mut cur = z.clone();
        for layer in self.layers.iter().rev() {
            let y = cur;
            let mut u = Matrix::zeros(n, d);
            for j in 0..d {
                self.count_call();
                let raw = layer.made.forward_batch(&u, cond)?;
                for i in 0..n {
                    let (x, _) = rqs::transform_inverse(
                        y.get(i, j),
                        &raw.row(i)[j * p..(j + 1) * p],
                        self.bins,
                        self.bound,
                    );
                    u.set(i, j, x);
                }
            }
            cur = u.permute_cols(&layer.inv_perm);
        }
        Ok(cur)
    }

    /// Draws base noise and runs the slow MAF decode.
    pub fn maf_sample(
        &self,
        cond: &Matrix,
        rng: &mut rand_chacha::ChaCha12Rng,
    ) -> Result<Matrix> {
        let z = draw_standard_normal(cond.rows(), self.data_dim, rng);
        self.slow_decode(&z, cond)
    }

    /// IAF fast pass `z -> x` with per-layer records. One masked-network
    /// call per layer.
    pub fn fast_decode_record(&self, z: &Matrix, cond: &Matrix) -> Result<PassRecord> {
        self.check_direction(FlowDirection::Iaf, "fast decode")?;
        self.check_shapes(z, cond)?;
        let n = z.rows();
        let l_count = self.layers.len();
        let mut values = vec![Matrix::zeros(0, 0); l_count + 1];
        let mut mades = vec![Matrix::zeros(0, 0); l_count];
        let mut logdet = vec![0.0f64; n];
        values[l_count] = z.clone();
        let mut cur = z.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let v = cur;
            self.count_call();
            let raw = layer.made.forward_batch(&v, cond)?;
            let (u, ld) = rqs_rows(&v, &raw, self.bins, self.bound, true);
            for (acc, l) in logdet.iter_mut().zip(&ld) {
                // Encode-orientation logdet so it negates the teacher's.
                *acc -= l;
            }
            mades[l] = constrain_rows(&raw, self.bins, self.bound);
            cur = u.permute_cols(&layer.inv_perm);
            values[l] = cur.clone();
        }
        Ok(PassRecord {
            values,
            made_constrained: mades,
            logdet,
        })
    }

    /// IAF sampling without records.
    pub fn fast_decode(&self, z: &Matrix, cond: &Matrix) -> Result<Matrix> {
        self.check_direction(FlowDirection::Iaf, "fast decode")?;
        self.check_shapes(z, cond)?;
        let mut cur = z.clone();
        for layer in self.layers.iter().rev() {
            let v = cur;
            self.count_call();
            let raw = layer.made.forward_batch(&v, cond)?;
            let (u, _) = rqs_rows(&v, &raw, self.bins, self.bound, true);
            cur = u.permute_cols(&layer.inv_perm);
        }
        Ok(cur)
    }

    /// Draws base noise and runs the fast IAF decode.
    pub fn iaf_sample(
        &self,
        cond: &Matrix,
        rng: &mut rand_chacha::ChaCha12Rng,
    ) -> Result<Matrix> {
        let z = draw_standard_normal(cond.rows(), self.data_dim, rng);
        self.fast_decode(&z, cond)
    }

    /// IAF slow pass `x -> z`: sequential, `D` calls per layer. Exists for
    /// invertibility tests.
    pub fn slow_encode(&self, x: &Matrix, cond: &Matrix) -> Result<Matrix> {
        self.check_direction(FlowDirection::Iaf, "iaf density pass")?;
        self.check_shapes(x, cond)?;
        let (n, d) = x.shape();
        let p = self.params_per_dim();
        let mut cur = x.clone();
        for layer in &self.layers {
            let u = cur.permute_cols(&layer.perm);
            let mut v = Matrix::zeros(n, d);
            for j in 0..d {
                self.count_call();
                let raw = layer.made.forward_batch(&v, cond)?;
                for i in 0..n {
                    let (y, _) = rqs::transform_forward(
                        u.get(i, j),
                        &raw.row(i)[j * p..(j + 1) * p],
                        self.bins,
                        self.bound,
                    );
                    v.set(i, j, y);
                }
            }
            cur = v;
        }
        Ok(cur)
    }

    // -- tape passes --------------------------------------------------------

    /// Records the MAF fast encode on a tape.
    pub fn tape_encode<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: NodeId,
        cond: Option<NodeId>,
        mode: ParamMode,
        want_constrained: bool,
    ) -> TapePass {
        let d = self.data_dim;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut mades = Vec::new();
        let mut lds = Vec::new();
        values.push(x);
        let mut cur = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let layer_mode = offset_mode(mode, l * layer.made.param_key_count());
            let u = tape.permute_cols(cur, &layer.perm);
            self.count_call();
            let raw = layer.made.tape_forward(tape, u, cond, layer_mode);
            let yld = tape.rqs_forward(u, raw, self.bins, self.bound);
            let y = tape.slice_cols(yld, 0, d);
            let ld = tape.slice_cols(yld, d, 2 * d);
            lds.push(tape.row_sum(ld));
            if want_constrained {
                mades.push(tape.rqs_constrain(raw, self.bins, self.bound));
            }
            values.push(y);
            cur = y;
        }
        TapePass {
            values,
            made_constrained: mades,
            logdet_rows: lds,
        }
    }

    /// Records the IAF fast decode on a tape.
    pub fn tape_decode<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        z: NodeId,
        cond: Option<NodeId>,
        mode: ParamMode,
        want_constrained: bool,
    ) -> TapePass {
        let d = self.data_dim;
        let l_count = self.layers.len();
        let mut values = vec![0usize; l_count + 1];
        let mut mades = vec![0usize; l_count];
        values[l_count] = z;
        let mut cur = z;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let layer_mode = offset_mode(mode, l * layer.made.param_key_count());
            self.count_call();
            let raw = layer.made.tape_forward(tape, cur, cond, layer_mode);
            let xld = tape.rqs_inverse(cur, raw, self.bins, self.bound);
            let u = tape.slice_cols(xld, 0, d);
            if want_constrained {
                mades[l] = tape.rqs_constrain(raw, self.bins, self.bound);
            }
            cur = tape.permute_cols(u, &layer.inv_perm);
            values[l] = cur;
        }
        TapePass {
            values,
            made_constrained: if want_constrained { mades } else { Vec::new() },
            logdet_rows: Vec::new(),
        }
    }

    /// Mean negative log likelihood as a tape scalar.
    pub fn tape_nll<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: NodeId,
        cond: Option<NodeId>,
        mode: ParamMode,
    ) -> NodeId {
        let pass = self.tape_encode(tape, x, cond, mode, false);
        let z = *pass.values.last().unwrap();
        let mut total = tape.std_normal_log_pdf(z);
        for ld in &pass.logdet_rows {
            total = tape.add(total, *ld);
        }
        let mean = tape.mean_all(total);
        tape.linear_combination(&[(-1.0, mean)])
    }
}

fn offset_mode(mode: ParamMode, offset: usize) -> ParamMode {
    match mode {
        ParamMode::Train { base_key } => ParamMode::Train {
            base_key: base_key + offset,
        },
        ParamMode::Frozen => ParamMode::Frozen,
    }
}

/// Deterministic standard-normal draws shaped `[n, d]`.
pub fn draw_standard_normal(
    n: usize,
    d: usize,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Matrix {
    let data = (0..n * d).map(|_| rng::normal(rng)).collect();
    Matrix::from_vec(n, d, data)
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "FDW1", version, direction, stack header (layer count,
// dims, spline config, permutations), then per-layer parameters as f64
// little-endian arrays in declaration order.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"FDW1";
const VERSION: u32 = 1;

pub fn save_stack(path: &Path, stack: &FlowStack) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match stack.direction {
        FlowDirection::Maf => 0u8,
        FlowDirection::Iaf => 1u8,
    }])?;
    w.write_all(&(stack.layers.len() as u32).to_le_bytes())?;
    w.write_all(&(stack.data_dim as u32).to_le_bytes())?;
    w.write_all(&(stack.cond_dim as u32).to_le_bytes())?;
    w.write_all(&(stack.bins as u32).to_le_bytes())?;
    w.write_all(&stack.bound.to_le_bytes())?;
    let hidden = &stack.layers[0].made.hidden_dims;
    w.write_all(&(hidden.len() as u32).to_le_bytes())?;
    for &h in hidden {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    w.write_all(&(stack.params_per_dim() as u32).to_le_bytes())?;
    for layer in &stack.layers {
        for &p in &layer.perm {
            w.write_all(&(p as u32).to_le_bytes())?;
        }
        for dense in &layer.made.layers {
            for &v in dense.w.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
            for &v in dense.b.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counting<R> {
    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(Error::format(self.offset, "unexpected end of checkpoint"))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

pub fn load_stack(path: &Path) -> Result<FlowStack> {
    let mut r = Counting {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected FDW1")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let mut dir_byte = [0u8; 1];
    r.read_exact(&mut dir_byte)?;
    let direction = match dir_byte[0] {
        0 => FlowDirection::Maf,
        1 => FlowDirection::Iaf,
        other => return Err(Error::format(8, format!("bad direction byte {other}"))),
    };
    let l_count = r.u32()? as usize;
    let data_dim = r.u32()? as usize;
    let cond_dim = r.u32()? as usize;
    let bins = r.u32()? as usize;
    let bound = r.f64()?;
    if l_count == 0 || data_dim == 0 || bins == 0 || bins > rqs::MAX_BINS {
        return Err(Error::format(r.offset, "implausible stack header"));
    }
    let n_hidden = r.u32()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    let p = r.u32()? as usize;
    if p != rqs::params_per_dim(bins) {
        return Err(Error::format(
            r.offset,
            format!("params per dim {p} does not match bins {bins}"),
        ));
    }

    let mut stack = build_stack(direction, data_dim, cond_dim, l_count, &hidden, bins, bound, 0)?;
    for layer in &mut stack.layers {
        let mut perm = Vec::with_capacity(data_dim);
        for _ in 0..data_dim {
            let v = r.u32()? as usize;
            if v >= data_dim {
                return Err(Error::format(r.offset, "permutation index out of range"));
            }
            perm.push(v);
        }
        layer.inv_perm = invert_permutation(&perm);
        layer.perm = perm;
        for dense in &mut layer.made.layers {
            for v in dense.w.as_mut_slice() {
                *v = r.f64()?;
            }
            for v in dense.b.as_mut_slice() {
                *v = r.f64()?;
            }
        }
    }
    Ok(stack)
}
