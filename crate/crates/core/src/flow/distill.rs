//! Teacher-student assimilation loss.
//!
//! Two composed passes drive the student:
//!
//! - data loop `x -> z -> x'`: the teacher's fast encode maps data to the
//!   latent side (no gradients), the student's fast decode maps it back;
//! - latent loop `z -> x' -> z'`: the student decodes fresh base noise, the
//!   teacher (frozen, but differentiable through its inputs) re-encodes the
//!   student's output.
//!
//! Within each loop the per-layer chain values of the two passes are matched
//! by mean squared error, as are the constrained spline-parameter tensors the
//! two models' masked networks emit, plus the endpoint reconstructions
//! `MSE(x, x')` and `MSE(z, z')`. The physics term compares soft channel
//! fractions of the data-loop student output against the ground-truth
//! channels of `x` in the same sigmoid-normalized representation. Optional
//! per-sample inverse-diversity weights multiply every per-sample
//! contribution before batch averaging.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::{FlowDirection, FlowStack};
use crate::linalg::Matrix;
use crate::nn::made::ParamMode;
use crate::nn::tape::{NodeId, Tape};
use crate::physics;

/// The four training setups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Bs,
    BsDiv,
    BsCh,
    BsChDiv,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Variant> {
        match name {
            "bs" => Ok(Variant::Bs),
            "bs+div" => Ok(Variant::BsDiv),
            "bs+ch" => Ok(Variant::BsCh),
            "bs+ch+div" => Ok(Variant::BsChDiv),
            other => Err(Error::config(format!(
                "unknown variant '{other}' (expected bs, bs+div, bs+ch, bs+ch+div)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Bs => "bs",
            Variant::BsDiv => "bs+div",
            Variant::BsCh => "bs+ch",
            Variant::BsChDiv => "bs+ch+div",
        }
    }

    /// Whether per-sample inverse-diversity weights apply.
    pub fn weighted(&self) -> bool {
        matches!(self, Variant::BsDiv | Variant::BsChDiv)
    }

    /// Whether the channel loss term is active.
    pub fn channel(&self) -> bool {
        matches!(self, Variant::BsCh | Variant::BsChDiv)
    }

    pub fn all() -> [Variant; 4] {
        [Variant::Bs, Variant::BsDiv, Variant::BsCh, Variant::BsChDiv]
    }
}

/// Term coefficients.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub w_mse: f64,
    pub w_ch: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_mse: 1.0,
            w_ch: 1.0,
        }
    }
}

/// Per-term values for logging.
#[derive(Clone, Copy, Debug, Default)]
pub struct DistillTerms {
    pub intermediates_data: f64,
    pub intermediates_latent: f64,
    pub made_data: f64,
    pub made_latent: f64,
    pub recon_x: f64,
    pub recon_z: f64,
    pub channel: f64,
    pub total: f64,
}

impl DistillTerms {
    pub fn log_line(&self) -> String {
        format!(
            "total={:.6e} int_data={:.6e} int_lat={:.6e} made_data={:.6e} made_lat={:.6e} recon_x={:.6e} recon_z={:.6e} channel={:.6e}",
            self.total,
            self.intermediates_data,
            self.intermediates_latent,
            self.made_data,
            self.made_latent,
            self.recon_x,
            self.recon_z,
            self.channel
        )
    }
}

/// Node handles for the recorded loss.
pub struct DistillGraph {
    pub loss: NodeId,
    term_nodes: [Option<NodeId>; 7],
}

impl DistillGraph {
    pub fn terms(&self, tape: &Tape<'_>) -> DistillTerms {
        let read = |slot: Option<NodeId>| slot.map_or(0.0, |id| tape.scalar(id));
        DistillTerms {
            intermediates_data: read(self.term_nodes[0]),
            intermediates_latent: read(self.term_nodes[1]),
            made_data: read(self.term_nodes[2]),
            made_latent: read(self.term_nodes[3]),
            recon_x: read(self.term_nodes[4]),
            recon_z: read(self.term_nodes[5]),
            channel: read(self.term_nodes[6]),
            total: tape.scalar(self.loss),
        }
    }
}

fn check_pair(teacher: &FlowStack, student: &FlowStack) -> Result<()> {
    teacher.check_direction(FlowDirection::Maf, "distillation teacher")?;
    student.check_direction(FlowDirection::Iaf, "distillation student")?;
    let same = teacher.data_dim == student.data_dim
        && teacher.cond_dim == student.cond_dim
        && teacher.n_layers() == student.n_layers()
        && teacher.bins == student.bins
        && teacher.bound == student.bound;
    if !same {
        return Err(Error::config("distillation: teacher/student shapes differ"));
    }
    for (t, s) in teacher.layers.iter().zip(&student.layers) {
        if t.perm != s.perm {
            return Err(Error::config("distillation: permutations differ"));
        }
    }
    Ok(())
}

/// Records the full distillation loss for one batch.
///
/// `x` and `cond` are the preprocessed data batch, `z_latent` the fresh base
/// draws for the latent loop, `grid` the response grid size (for the channel
/// term), and `weights` the optional per-sample diversity weights.
#[allow(clippy::too_many_arguments)]
pub fn distill_graph<'a>(
    tape: &mut Tape<'a>,
    teacher: &'a FlowStack,
    student: &'a FlowStack,
    x: &'a Matrix,
    cond: &'a Matrix,
    z_latent: &'a Matrix,
    weights: Option<Arc<Vec<f64>>>,
    lw: &LossWeights,
    grid: usize,
    student_mode: ParamMode,
) -> Result<DistillGraph> {
    check_pair(teacher, student)?;
    if let Some(w) = &weights {
        if w.len() != x.rows() {
            return Err(Error::config("distillation: weight length mismatch"));
        }
    }
    let l_count = teacher.n_layers();

    // Data loop: teacher encode is pure and detached.
    let teacher_data = teacher.fast_encode_record(x, cond)?;
    let cond_id = tape.borrowed(cond);
    let cond_opt = if teacher.cond_dim > 0 { Some(cond_id) } else { None };
    let z_data = tape.constant(teacher_data.values[l_count].clone());
    let student_data = student.tape_decode(tape, z_data, cond_opt, student_mode, true);

    // Latent loop: student decode then teacher re-encode, frozen weights.
    let z_lat = tape.borrowed(z_latent);
    let student_lat = student.tape_decode(tape, z_lat, cond_opt, student_mode, true);
    let teacher_lat = teacher.tape_encode(
        tape,
        student_lat.values[0],
        cond_opt,
        ParamMode::Frozen,
        true,
    );

    let w = weights;
    let avg_mse = |tape: &mut Tape<'a>, pairs: Vec<(NodeId, NodeId)>| -> Option<NodeId> {
        if pairs.is_empty() {
            return None;
        }
        let coeff = 1.0 / pairs.len() as f64;
        let terms: Vec<(f64, NodeId)> = pairs
            .into_iter()
            .map(|(a, b)| (coeff, tape.mse(a, b, w.clone(), false)))
            .collect();
        Some(tape.linear_combination(&terms))
    };

    // Interior chain values, layers 1..L-1 (the endpoints get their own
    // reconstruction terms).
    let mut data_pairs = Vec::new();
    for l in 1..l_count {
        let t_val = tape.constant(teacher_data.values[l].clone());
        data_pairs.push((t_val, student_data.values[l]));
    }
    let int_data = avg_mse(tape, data_pairs);

    let mut lat_pairs = Vec::new();
    for l in 1..l_count {
        lat_pairs.push((teacher_lat.values[l], student_lat.values[l]));
    }
    let int_lat = avg_mse(tape, lat_pairs);

    let mut made_data_pairs = Vec::new();
    for l in 0..l_count {
        let t_made = tape.constant(teacher_data.made_constrained[l].clone());
        made_data_pairs.push((t_made, student_data.made_constrained[l]));
    }
    let made_data = avg_mse(tape, made_data_pairs);

    let mut made_lat_pairs = Vec::new();
    for l in 0..l_count {
        made_lat_pairs.push((teacher_lat.made_constrained[l], student_lat.made_constrained[l]));
    }
    let made_lat = avg_mse(tape, made_lat_pairs);

    let x_id = tape.borrowed(x);
    let recon_x = tape.mse(x_id, student_data.values[0], w.clone(), false);
    let recon_z = tape.mse(z_lat, teacher_lat.values[l_count], w.clone(), false);

    let channel = if lw.w_ch != 0.0 {
        let mut ref_channels = Matrix::zeros(x.rows(), 5);
        for (i, row) in x.iter_rows().enumerate() {
            let ch = physics::soft_channels(row, grid);
            ref_channels.row_mut(i).copy_from_slice(&ch);
        }
        let ref_id = tape.constant(ref_channels);
        let student_ch = tape.soft_channels(student_data.values[0], grid);
        Some(tape.mse(student_ch, ref_id, w, true))
    } else {
        None
    };

    let mut combo: Vec<(f64, NodeId)> = Vec::new();
    for term in [int_data, int_lat, made_data, made_lat, Some(recon_x), Some(recon_z)]
        .into_iter()
        .flatten()
    {
        combo.push((lw.w_mse, term));
    }
    if let Some(ch) = channel {
        combo.push((lw.w_ch, ch));
    }
    let loss = tape.linear_combination(&combo);

    Ok(DistillGraph {
        loss,
        term_nodes: [
            int_data,
            int_lat,
            made_data,
            made_lat,
            Some(recon_x),
            Some(recon_z),
            channel,
        ],
    })
}

/// Evaluates the distillation loss without gradients.
#[allow(clippy::too_many_arguments)]
pub fn distill_loss(
    teacher: &FlowStack,
    student: &FlowStack,
    x: &Matrix,
    cond: &Matrix,
    z_latent: &Matrix,
    weights: Option<Arc<Vec<f64>>>,
    lw: &LossWeights,
    grid: usize,
) -> Result<DistillTerms> {
    let mut tape = Tape::new();
    let graph = distill_graph(
        &mut tape,
        teacher,
        student,
        x,
        cond,
        z_latent,
        weights,
        lw,
        grid,
        ParamMode::Frozen,
    )?;
    Ok(graph.terms(&tape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{build_stack, draw_standard_normal};
    use crate::rng;

    #[test]
    fn variant_parsing() {
        assert_eq!(Variant::parse("bs").unwrap(), Variant::Bs);
        assert_eq!(Variant::parse("bs+ch+div").unwrap(), Variant::BsChDiv);
        assert!(Variant::parse("nope").is_err());
        assert!(!Variant::Bs.weighted() && !Variant::Bs.channel());
        assert!(Variant::BsDiv.weighted() && !Variant::BsDiv.channel());
        assert!(!Variant::BsCh.weighted() && Variant::BsCh.channel());
        assert!(Variant::BsChDiv.weighted() && Variant::BsChDiv.channel());
    }

    #[test]
    fn identity_copy_pair_has_zero_loss() {
        // A student cloned from a freshly built (identity) teacher reproduces
        // every matched quantity exactly; all loss terms vanish to rounding.
        let grid = 4;
        let d = grid * grid;
        let teacher = build_stack(FlowDirection::Maf, d, 3, 3, &[8], 6, 8.0, 21).unwrap();
        let student = teacher.copy_with_direction(FlowDirection::Iaf);
        let mut r = rng::stream(33, &[0]);
        let x = Matrix::from_vec(
            5,
            d,
            (0..5 * d).map(|_| rng::uniform(&mut r, -6.0, 2.0)).collect(),
        );
        let cond = Matrix::from_vec(5, 3, (0..15).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect());
        let z = draw_standard_normal(5, d, &mut r);
        let terms = distill_loss(
            &teacher,
            &student,
            &x,
            &cond,
            &z,
            None,
            &LossWeights::default(),
            grid,
        )
        .unwrap();
        assert!(terms.total < 1e-20, "copy loss {:.3e}", terms.total);
        assert!(terms.recon_x < 1e-20);
        assert!(terms.recon_z < 1e-20);
        assert!(terms.made_data < 1e-20);
        assert!(terms.channel < 1e-20);
    }

    #[test]
    fn mismatched_pair_is_config_error() {
        let teacher = build_stack(FlowDirection::Maf, 8, 2, 2, &[8], 6, 3.0, 1).unwrap();
        let student = build_stack(FlowDirection::Iaf, 8, 2, 3, &[8], 6, 3.0, 2).unwrap();
        let x = Matrix::zeros(2, 8);
        let cond = Matrix::zeros(2, 2);
        let z = Matrix::zeros(2, 8);
        assert!(distill_loss(
            &teacher,
            &student,
            &x,
            &cond,
            &z,
            None,
            &LossWeights::default(),
            2
        )
        .is_err());
    }

    #[test]
    fn hand_built_single_layer_loss_matches_recomputation() {
        // One layer, D=4 (grid 2): recompute the whole loss with plain
        // arithmetic outside the graph.
        let grid = 2;
        let d = 4;
        let mut teacher = build_stack(FlowDirection::Maf, d, 2, 1, &[6], 4, 3.0, 5).unwrap();
        teacher.randomize(0.4, 91);
        let mut student = FlowStack::new_student_like(&teacher, 6).unwrap();
        student.randomize(0.3, 92);
        let mut r = rng::stream(44, &[0]);
        let n = 3;
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect(),
        );
        let cond =
            Matrix::from_vec(n, 2, (0..n * 2).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect());
        let z = draw_standard_normal(n, d, &mut r);
        let weights = Arc::new(vec![0.5, 2.0, 1.0]);
        let lw = LossWeights {
            w_mse: 1.0,
            w_ch: 0.7,
        };
        let terms = distill_loss(
            &teacher,
            &student,
            &x,
            &cond,
            &z,
            Some(weights.clone()),
            &lw,
            grid,
        )
        .unwrap();

        // Straight-line recomputation.
        let t_data = teacher.fast_encode_record(&x, &cond).unwrap();
        let s_data = student.fast_decode_record(&t_data.values[1], &cond).unwrap();
        let s_lat = student.fast_decode_record(&z, &cond).unwrap();
        let t_lat = teacher.fast_encode_record(&s_lat.values[0], &cond).unwrap();

        let wmse = |a: &Matrix, b: &Matrix| -> f64 {
            let mut total = 0.0;
            for i in 0..a.rows() {
                let mut q = 0.0;
                for (x, y) in a.row(i).iter().zip(b.row(i)) {
                    q += (x - y) * (x - y);
                }
                total += weights[i] * q;
            }
            total / (a.rows() * a.cols()) as f64
        };
        let made_data = wmse(&t_data.made_constrained[0], &s_data.made_constrained[0]);
        let made_lat = wmse(&t_lat.made_constrained[0], &s_lat.made_constrained[0]);
        let recon_x = wmse(&x, &s_data.values[0]);
        let recon_z = wmse(&z, &t_lat.values[1]);
        let mut channel = 0.0;
        for i in 0..n {
            let a = physics::soft_channels(s_data.values[0].row(i), grid);
            let b = physics::soft_channels(x.row(i), grid);
            let q: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum();
            channel += weights[i] * q;
        }
        channel /= n as f64;
        let total =
            lw.w_mse * (made_data + made_lat + recon_x + recon_z) + lw.w_ch * channel;

        assert!((terms.made_data - made_data).abs() < 1e-10);
        assert!((terms.made_latent - made_lat).abs() < 1e-10);
        assert!((terms.recon_x - recon_x).abs() < 1e-10);
        assert!((terms.recon_z - recon_z).abs() < 1e-10);
        assert!((terms.channel - channel).abs() < 1e-10);
        assert!((terms.total - total).abs() < 1e-10, "{} vs {}", terms.total, total);
        // Single layer: no interior intermediates.
        assert_eq!(terms.intermediates_data, 0.0);
        assert_eq!(terms.intermediates_latent, 0.0);
    }
}
