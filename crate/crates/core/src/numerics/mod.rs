//! Dense linear algebra, softmax, seeded randomness, AdamW and finite differences.

mod matrix;
mod optim;
mod rng;

pub use matrix::{cosine, dot, norm, Matrix};
pub use optim::{adamw_step, OptimizerState};
pub use rng::RngStream;

use crate::error::{PcsError, Result};

/// Softmax of `v / temperature`, computed with a max shift.
pub fn softmax(v: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(PcsError::Domain("softmax of an empty vector".into()));
    }
    if !(temperature > 0.0) {
        return Err(PcsError::Domain(format!(
            "softmax temperature must be > 0, got {temperature}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(PcsError::Numeric("softmax input is not finite".into()));
    }
    Ok(softmax_unchecked(v, temperature))
}

pub(crate) fn softmax_unchecked(v: &[f64], temperature: f64) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

/// Central-difference gradient of `f` at `params`.
pub fn finite_difference_gradient<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(PcsError::Numeric(format!(
                "objective not finite when perturbing coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        assert_eq!(softmax(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_hand_values() {
        // exp/normalize oracle evaluated independently: e^-2, e^-1, 1 over their sum.
        let p = softmax(&[-2.0, -1.0, 0.0], 1.0).unwrap();
        for (a, b) in p.iter().zip([0.09003057, 0.24472847, 0.66524096]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_no_overflow() {
        let p = softmax(&[1000.0, 0.0], 1.0).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn softmax_empty_is_domain_error() {
        assert!(matches!(softmax(&[], 1.0), Err(PcsError::Domain(_))));
    }

    #[test]
    fn fd_square() {
        let g = finite_difference_gradient(|t| t[0] * t[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn fd_constant_and_sum() {
        let g = finite_difference_gradient(|_| 4.2, &[1.0, -2.0], 1e-5).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        let g = finite_difference_gradient(|t| t.iter().sum(), &[0.5, 7.0, -3.0], 1e-5).unwrap();
        assert!(g.iter().all(|&x| (x - 1.0).abs() < 1e-9));
    }

    #[test]
    fn fd_non_finite_is_error() {
        let r = finite_difference_gradient(|t| if t[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-3);
        assert!(matches!(r, Err(PcsError::Numeric(_))));
    }

    #[test]
    fn fd_random_quadratic_matches_analytic() {
        // f(θ) = ½ θᵀAθ + bᵀθ with symmetric A, gradient Aθ + b.
        let mut rng = RngStream::new(11);
        let n = 6;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = rng.normal();
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let theta: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let f = |t: &[f64]| {
            let mut s = 0.0;
            for i in 0..n {
                s += b[i] * t[i];
                for j in 0..n {
                    s += 0.5 * t[i] * a[i][j] * t[j];
                }
            }
            s
        };
        let fd = finite_difference_gradient(f, &theta, 1e-5).unwrap();
        for i in 0..n {
            let exact: f64 = (0..n).map(|j| a[i][j] * theta[j]).sum::<f64>() + b[i];
            let rel = (fd[i] - exact).abs() / exact.abs().max(1e-8);
            assert!(rel <= 1e-6, "coordinate {i}: {} vs {}", fd[i], exact);
        }
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&v, 1.0).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted, 1.0).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
