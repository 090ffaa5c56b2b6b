//! Training loops: teacher maximum likelihood and student distillation.
//!
//! Both loops are single-threaded over batches (kernels parallelize
//! internally with fixed reduction orders), select the best model on
//! validation loss, and abort with a diagnostic if a batch loss goes
//! non-finite.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::distill::{distill_graph, DistillTerms, LossWeights, Variant};
use crate::flow::{draw_standard_normal, FlowStack};
use crate::linalg::Matrix;
use crate::nn::adam::{clip_global_norm, AdamState};
use crate::nn::made::ParamMode;
use crate::nn::tape::Tape;
use crate::rng;

const TAG_SHUFFLE: u64 = 0x7368_7566;
const TAG_LATENT: u64 = 0x6c61_7466;
const TAG_VAL_LATENT: u64 = 0x766c_7a00;

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

/// One metrics-log line: epoch index, train loss (absent for the pre-training
/// validation entry), validation loss.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: Option<f64>,
    pub val: f64,
    pub line: String,
}

fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(seed, &[TAG_SHUFFLE, epoch as u64]), &mut idx);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Mean negative log likelihood over a dataset (no gradients).
pub fn mean_nll(stack: &FlowStack, x: &Matrix, cond: &Matrix) -> Result<f64> {
    let lp = stack.maf_log_prob(x, cond)?;
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Trains the teacher by Adam on mean NLL. The stack ends at the
/// best-validation parameters; the returned log has one entry per epoch plus
/// the pre-training validation entry at epoch 0.
pub fn train_teacher(
    teacher: &mut FlowStack,
    train_x: &Matrix,
    train_cond: &Matrix,
    val_x: &Matrix,
    val_cond: &Matrix,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    let n_keys = teacher.param_key_count();
    let mut adam = AdamState::new(&teacher.params(), cfg.learning_rate);
    let mut logs = Vec::with_capacity(cfg.epochs + 1);

    let val0 = mean_nll(teacher, val_x, val_cond)?;
    logs.push(EpochLog {
        epoch: 0,
        train: None,
        val: val0,
        line: format!("epoch=0 train_nll=- val_nll={val0:.6e}"),
    });
    let mut best_val = val0;
    let mut best = teacher.clone();

    for epoch in 1..=cfg.epochs {
        let mut train_sum = 0.0;
        let mut train_count = 0usize;
        for (b, batch) in epoch_batches(train_x.rows(), cfg.batch_size, cfg.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let xb = train_x.select_rows(&batch);
            let cb = train_cond.select_rows(&batch);
            let mut tape = Tape::new();
            let x_id = tape.constant(xb);
            let cond_id = if teacher.cond_dim > 0 {
                Some(tape.constant(cb))
            } else {
                None
            };
            let loss = teacher.tape_nll(&mut tape, x_id, cond_id, ParamMode::Train { base_key: 0 });
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NanAbort {
                    stage: "teacher",
                    epoch,
                    batch: b,
                });
            }
            train_sum += value * batch.len() as f64;
            train_count += batch.len();
            let mut grads = tape.backward(loss, n_keys);
            clip_global_norm(&mut grads, cfg.grad_clip);
            drop(tape);
            adam.step(&mut teacher.params_mut(), &grads)?;
        }
        let train_nll = train_sum / train_count as f64;
        let val = mean_nll(teacher, val_x, val_cond)?;
        if val < best_val {
            best_val = val;
            best = teacher.clone();
        }
        logs.push(EpochLog {
            epoch,
            train: Some(train_nll),
            val,
            line: format!("epoch={epoch} train_nll={train_nll:.6e} val_nll={val:.6e}"),
        });
    }

    *teacher = best;
    Ok(logs)
}

/// Variant-resolved distillation settings.
#[derive(Clone, Debug)]
pub struct DistillSetup {
    pub variant: Variant,
    pub loss_weights: LossWeights,
    /// Per-sample diversity weights aligned with the training rows; ignored
    /// by unweighted variants.
    pub sample_weights: Vec<f64>,
    pub grid: usize,
}

impl DistillSetup {
    /// Effective term coefficients after applying the variant switches:
    /// channel-less variants run with `w_ch = 0`, unweighted variants with
    /// unit sample weights.
    pub fn effective_loss_weights(&self) -> LossWeights {
        LossWeights {
            w_mse: self.loss_weights.w_mse,
            w_ch: if self.variant.channel() {
                self.loss_weights.w_ch
            } else {
                0.0
            },
        }
    }

    fn batch_weights(&self, batch: &[usize]) -> Option<Arc<Vec<f64>>> {
        if self.variant.weighted() {
            Some(Arc::new(
                batch.iter().map(|&i| self.sample_weights[i]).collect(),
            ))
        } else {
            None
        }
    }
}

/// Distills the student against a trained teacher. The student ends at the
/// best-validation parameters. Validation uses unit sample weights and a
/// fixed latent batch so epochs stay comparable.
#[allow(clippy::too_many_arguments)]
pub fn distill_student(
    teacher: &FlowStack,
    student: &mut FlowStack,
    train_x: &Matrix,
    train_cond: &Matrix,
    val_x: &Matrix,
    val_cond: &Matrix,
    setup: &DistillSetup,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    if setup.variant.weighted() && setup.sample_weights.len() != train_x.rows() {
        return Err(Error::config(
            "distill: sample weights must align with training rows",
        ));
    }
    let lw = setup.effective_loss_weights();
    let n_keys = student.param_key_count();
    let mut adam = AdamState::new(&student.params(), cfg.learning_rate);
    let mut logs = Vec::with_capacity(cfg.epochs + 1);

    let val_z = draw_standard_normal(
        val_x.rows(),
        teacher.data_dim,
        &mut rng::stream(cfg.seed, &[TAG_VAL_LATENT]),
    );
    let eval_val = |student: &FlowStack| -> Result<DistillTerms> {
        crate::flow::distill::distill_loss(
            teacher, student, val_x, val_cond, &val_z, None, &lw, setup.grid,
        )
    };

    let val0 = eval_val(student)?;
    logs.push(EpochLog {
        epoch: 0,
        train: None,
        val: val0.total,
        line: format!("epoch=0 train=- val {}", val0.log_line()),
    });
    let mut best_val = val0.total;
    let mut best = student.clone();

    for epoch in 1..=cfg.epochs {
        let mut train_sum = 0.0;
        let mut train_count = 0usize;
        for (b, batch) in epoch_batches(train_x.rows(), cfg.batch_size, cfg.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let xb = train_x.select_rows(&batch);
            let cb = train_cond.select_rows(&batch);
            let zb = draw_standard_normal(
                batch.len(),
                teacher.data_dim,
                &mut rng::stream(cfg.seed, &[TAG_LATENT, epoch as u64, b as u64]),
            );
            let weights = setup.batch_weights(&batch);
            let mut tape = Tape::new();
            let graph = distill_graph(
                &mut tape,
                teacher,
                student,
                &xb,
                &cb,
                &zb,
                weights,
                &lw,
                setup.grid,
                ParamMode::Train { base_key: 0 },
            )?;
            let value = tape.scalar(graph.loss);
            if !value.is_finite() {
                return Err(Error::NanAbort {
                    stage: "distillation",
                    epoch,
                    batch: b,
                });
            }
            train_sum += value * batch.len() as f64;
            train_count += batch.len();
            let mut grads = tape.backward(graph.loss, n_keys);
            clip_global_norm(&mut grads, cfg.grad_clip);
            drop(tape);
            adam.step(&mut student.params_mut(), &grads)?;
        }
        let train_loss = train_sum / train_count as f64;
        let val = eval_val(student)?;
        if val.total < best_val {
            best_val = val.total;
            best = student.clone();
        }
        logs.push(EpochLog {
            epoch,
            train: Some(train_loss),
            val: val.total,
            line: format!(
                "epoch={epoch} train={train_loss:.6e} val {}",
                val.log_line()
            ),
        });
    }

    *student = best;
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{build_stack, FlowDirection};

    #[test]
    fn variant_switches_resolve_as_specified() {
        let base = DistillSetup {
            variant: Variant::Bs,
            loss_weights: LossWeights {
                w_mse: 1.0,
                w_ch: 0.8,
            },
            sample_weights: vec![2.0, 3.0],
            grid: 4,
        };
        // bs: channel coefficient forced to zero, no sample weights.
        assert_eq!(base.effective_loss_weights().w_ch, 0.0);
        assert!(base.batch_weights(&[0, 1]).is_none());
        // bs+ch+div: channel active and weights taken from the table values.
        let full = DistillSetup {
            variant: Variant::BsChDiv,
            ..base.clone()
        };
        assert_eq!(full.effective_loss_weights().w_ch, 0.8);
        let w = full.batch_weights(&[1, 0]).unwrap();
        assert_eq!(w.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn teacher_training_improves_on_shifted_gaussian() {
        // 1-D toy: data from N(3, 1). The identity-initialized model starts
        // at the base-normal NLL of the data and must strictly improve.
        let n = 512;
        let mut r = rng::stream(7, &[1]);
        let data: Vec<f64> = (0..n).map(|_| 3.0 + rng::normal(&mut r)).collect();
        let x = Matrix::from_vec(n, 1, data);
        let cond = Matrix::zeros(n, 0);
        let val_x = {
            let mut r = rng::stream(7, &[2]);
            Matrix::from_vec(128, 1, (0..128).map(|_| 3.0 + rng::normal(&mut r)).collect())
        };
        let val_cond = Matrix::zeros(128, 0);
        let mut teacher = build_stack(FlowDirection::Maf, 1, 0, 2, &[16], 8, 8.0, 9).unwrap();

        // Epoch-0 validation equals the base-normal NLL of the data.
        let base_nll = {
            let norm = 0.5 * (2.0 * std::f64::consts::PI).ln();
            val_x.as_slice().iter().map(|v| norm + 0.5 * v * v).sum::<f64>() / 128.0
        };
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 64,
            learning_rate: 5e-3,
            grad_clip: 5.0,
            seed: 123,
        };
        let logs = train_teacher(&mut teacher, &x, &cond, &val_x, &val_cond, &cfg).unwrap();
        assert!((logs[0].val - base_nll).abs() < 1e-9);
        // Strict improvement across the first epochs.
        assert!(logs[1].train.unwrap() < logs[0].val);
        assert!(logs[2].train.unwrap() < logs[1].train.unwrap());
        assert!(logs[3].train.unwrap() < logs[2].train.unwrap());
        assert!(logs.last().unwrap().val < logs[0].val - 0.5);
    }

    #[test]
    fn distillation_reduces_loss() {
        let d = 4;
        let grid = 2;
        let mut teacher = build_stack(FlowDirection::Maf, d, 2, 2, &[8], 6, 4.0, 31).unwrap();
        teacher.randomize(0.5, 5);
        let mut student = FlowStack::new_student_like(&teacher, 32).unwrap();
        let n = 128;
        let mut r = rng::stream(15, &[0]);
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect(),
        );
        let cond =
            Matrix::from_vec(n, 2, (0..n * 2).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect());
        let setup = DistillSetup {
            variant: Variant::Bs,
            loss_weights: LossWeights::default(),
            sample_weights: vec![1.0; n],
            grid,
        };
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 32,
            learning_rate: 3e-3,
            grad_clip: 5.0,
            seed: 77,
        };
        let logs =
            distill_student(&teacher, &mut student, &x, &cond, &x, &cond, &setup, &cfg).unwrap();
        let first = logs[0].val;
        let last = logs.last().unwrap().val;
        assert!(
            last < first * 0.8,
            "distillation should reduce validation loss: {first} -> {last}"
        );
    }
}
