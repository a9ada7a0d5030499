use serde::Serialize;

use crate::error::{PcsError, Result};
use crate::model::{forward, ModelParams, Sample};
use crate::par::Exec;

/// Accuracy per target language and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_language: Vec<(String, f64)>,
    pub average: f64,
}

/// Argmax accuracy of `params` on one set.
pub fn accuracy(params: &ModelParams, samples: &[Sample], exec: Exec) -> Result<f64> {
    if samples.is_empty() {
        return Err(PcsError::Input("cannot evaluate on an empty set".into()));
    }
    let hits = exec.try_map(samples, |_, s| {
        Ok::<_, PcsError>((forward(params, &s.tokens, None)?.predicted_class() == s.label) as usize)
    })?;
    Ok(hits.iter().sum::<usize>() as f64 / samples.len() as f64)
}

/// Accuracy on every language's test set plus the macro average.
pub fn evaluate(params: &ModelParams, tests: &[(String, Vec<Sample>)], exec: Exec) -> Result<EvalReport> {
    if tests.is_empty() {
        return Err(PcsError::Input("no test sets".into()));
    }
    let per_language = tests
        .iter()
        .map(|(lang, set)| Ok((lang.clone(), accuracy(params, set, exec)?)))
        .collect::<Result<Vec<_>>>()?;
    let average = macro_average(per_language.iter().map(|(_, a)| *a));
    Ok(EvalReport {
        per_language,
        average,
    })
}

pub fn macro_average(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Eval-mode mean cross-entropy.
pub fn mean_loss(params: &ModelParams, samples: &[Sample], exec: Exec) -> Result<f64> {
    if samples.is_empty() {
        return Err(PcsError::Input("cannot compute loss on an empty set".into()));
    }
    let losses = exec.try_map(samples, |_, s| {
        let t = forward(params, &s.tokens, None)?;
        Ok::<_, PcsError>(-t.probs[s.label].max(f64::MIN_POSITIVE).ln())
    })?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::RngStream;

    /// Classifier that predicts class 1 iff token 3 is present: token 3's
    /// embedding points along dimension 0, which the head maps to class 1.
    fn oracle_model() -> ModelParams {
        let mut cfg = ModelConfig::new(6, 2);
        cfg.embed_dim = 2;
        cfg.num_heads = 1;
        cfg.num_layers = 1;
        cfg.max_seq_len = 4;
        let mut p = ModelParams::zeros(&cfg).unwrap();
        p.token_embed.set(3, 0, 10.0);
        p.w_c.set(0, 1, 1.0);
        p.b_c.set(0, 0, 0.5);
        p
    }

    #[test]
    fn perfect_predictor() {
        let p = oracle_model();
        let set = vec![
            Sample { tokens: vec![3, 2], label: 1 },
            Sample { tokens: vec![2, 2], label: 0 },
            Sample { tokens: vec![4], label: 0 },
        ];
        assert_eq!(accuracy(&p, &set, Exec::default()).unwrap(), 1.0);
    }

    #[test]
    fn random_labels_near_half() {
        let p = oracle_model();
        let mut rng = RngStream::new(77);
        let set: Vec<Sample> = (0..1000)
            .map(|_| Sample { tokens: vec![2], label: rng.below(2) })
            .collect();
        // Constant predictor against fair coin labels.
        let acc = accuracy(&p, &set, Exec::default()).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn macro_average_and_empty() {
        assert!((macro_average([0.8, 0.6].into_iter()) - 0.7).abs() < 1e-15);
        let p = oracle_model();
        assert!(accuracy(&p, &[], Exec::default()).is_err());
        assert!(evaluate(&p, &[], Exec::default()).is_err());
    }
}
