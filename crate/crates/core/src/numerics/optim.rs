use crate::error::{PcsError, Result};
use crate::numerics::Matrix;

/// AdamW moment accumulators and hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    /// Zeroed accumulators mirroring `shapes`.
    pub fn new(shapes: &[(usize, usize)], lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(PcsError::Domain(format!("learning rate must be > 0, got {lr}")));
        }
        if weight_decay < 0.0 {
            return Err(PcsError::Domain("weight decay must be >= 0".into()));
        }
        Ok(OptimizerState {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
pub fn adamw_step(
    params: &mut [&mut Matrix],
    grads: &[&Matrix],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(PcsError::Shape(format!(
            "{} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(PcsError::Shape(format!(
                "param {:?} vs grad {:?} vs state {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, wd, eps) = (state.lr, state.weight_decay, state.eps);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *w);
        }
        if !p.is_finite() {
            return Err(PcsError::Numeric("AdamW produced a non-finite parameter".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut p = Matrix::from_vec(2, 2, vec![0.3, -1.7, 2.0, 1e-3]).unwrap();
        let before = p.clone();
        let g = Matrix::zeros(2, 2);
        let mut st = OptimizerState::new(&[(2, 2)], 0.1, 0.0).unwrap();
        for _ in 0..5 {
            adamw_step(&mut [&mut p], &[&g], &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let mut p = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let g = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut st = OptimizerState::new(&[(1, 1)], 0.1, 0.0).unwrap();
        adamw_step(&mut [&mut p], &[&g], &mut st).unwrap();
        assert!((p.get(0, 0) - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_multiplicatively() {
        let mut p = Matrix::from_vec(1, 2, vec![3.0, -4.0]).unwrap();
        let g = Matrix::zeros(1, 2);
        let mut st = OptimizerState::new(&[(1, 2)], 0.5, 0.01).unwrap();
        adamw_step(&mut [&mut p], &[&g], &mut st).unwrap();
        let f = 1.0 - 0.5 * 0.01;
        assert!((p.get(0, 0) - 3.0 * f).abs() < 1e-15);
        assert!((p.get(0, 1) + 4.0 * f).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 1);
        let mut st = OptimizerState::new(&[(2, 2)], 0.1, 0.0).unwrap();
        assert!(matches!(
            adamw_step(&mut [&mut p], &[&g], &mut st),
            Err(PcsError::Shape(_))
        ));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn rejects_non_positive_rate() {
        assert!(OptimizerState::new(&[(1, 1)], 0.0, 0.0).is_err());
    }
}
