//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    /// Zero-initialized moments matching the given parameter shapes.
    pub fn new(params: &[&Matrix], learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }

    /// One Adam update. Parameters without a gradient this step are skipped
    /// entirely (their moments do not decay), keeping repeated calls from
    /// identical states bit-identical.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<Matrix>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::config("adam: parameter/gradient count mismatch"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(g) = g else { continue };
            if g.shape() != p.shape() {
                return Err(Error::config("adam: gradient shape mismatch"));
            }
            let (b1, b2) = (self.beta1, self.beta2);
            for ((pv, gv), (mv, vv)) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()))
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Scales gradients in place so their global L2 norm does not exceed
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Option<Matrix>], max_norm: f64) -> f64 {
    let total: f64 = grads
        .iter()
        .flatten()
        .map(|g| g.sq_norm())
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let scale = max_norm / total;
        for g in grads.iter_mut().flatten() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
        let before = p.clone();
        let mut state = AdamState::new(&[&p], 1e-3);
        let g = Some(Matrix::zeros(1, 3));
        state.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p.as_slice(), before.as_slice());
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        // With bias correction, step one gives m_hat = g, v_hat = g^2, so the
        // update is -lr * g / (|g| + eps) = -lr * sign(g) up to epsilon.
        let mut p = Matrix::from_vec(1, 2, vec![0.0, 0.0]);
        let mut state = AdamState::new(&[&p], 1e-3);
        let g = Matrix::from_vec(1, 2, vec![0.7, -0.2]);
        state.step(&mut [&mut p], &[Some(g)]).unwrap();
        assert!((p.get(0, 0) + 1e-3).abs() < 1e-9);
        assert!((p.get(0, 1) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn identical_states_produce_identical_parameters() {
        let run = || {
            let mut p = Matrix::from_vec(1, 2, vec![0.3, -0.6]);
            let mut state = AdamState::new(&[&p], 5e-3);
            for i in 0..10 {
                let g = Matrix::from_vec(1, 2, vec![0.1 * i as f64, -0.05]);
                state.step(&mut [&mut p], &[Some(g)]).unwrap();
            }
            (p.get(0, 0).to_bits(), p.get(0, 1).to_bits())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut p = Matrix::zeros(2, 2);
        let mut state = AdamState::new(&[&p], 1e-3);
        let g = Some(Matrix::zeros(1, 2));
        assert!(state.step(&mut [&mut p], &[g]).is_err());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut grads = vec![Some(Matrix::from_vec(1, 2, vec![3.0, 4.0]))];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g = grads[0].as_ref().unwrap();
        let clipped = (g.sq_norm()).sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
    }
}
