//! Curriculum scheduler: the temperature ladder, patience-driven stage
//! advancement and replay of earlier stages.

use serde::{Deserialize, Serialize};

use crate::error::{PcsError, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    /// Easy to hard, with replay.
    Pcs,
    /// Same ladder; words picked at random instead of by relevance.
    RatioCl,
    /// Hard to easy.
    AntiCl,
    /// Easy to hard without replay: always train on the current stage.
    NoScheduler,
    /// A single stage of random code-switching.
    NoCl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub delta: f64,
    pub base_patience: usize,
    pub patience_step: usize,
    /// A stage is left after this many passes over its data even without
    /// convergence.
    pub max_epochs_per_stage: usize,
    pub min_delta: f64,
    pub mode: CurriculumMode,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            delta: 0.1,
            base_patience: 2,
            patience_step: 1,
            max_epochs_per_stage: 10,
            min_delta: 1e-4,
            mode: CurriculumMode::Pcs,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(PcsError::Config(format!("delta {} outside (0, 1]", self.delta)));
        }
        let steps = 1.0 / self.delta;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(PcsError::Config(format!(
                "1/delta must be an integer so the ladder ends at 1 (delta = {})",
                self.delta
            )));
        }
        if self.base_patience == 0 {
            return Err(PcsError::Config("base_patience must be >= 1".into()));
        }
        if self.max_epochs_per_stage == 0 {
            return Err(PcsError::Config("max_epochs_per_stage must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(PcsError::Config("min_delta must be >= 0".into()));
        }
        Ok(())
    }

    fn ladder_steps(&self) -> usize {
        (1.0 / self.delta).round() as usize
    }

    /// Number of stages K; `1/delta + 1` on the ladder.
    pub fn num_stages(&self) -> usize {
        match self.mode {
            CurriculumMode::NoCl => 1,
            _ => self.ladder_steps() + 1,
        }
    }

    /// Patience of stage `k`: `p₀ + (k − 1)·p_step`.
    pub fn stage_patience(&self, k: usize) -> usize {
        self.base_patience + k.saturating_sub(1) * self.patience_step
    }
}

/// Temperature of stage `k` (1-based).
///
/// The curriculum-free mode draws a temperature per example; its single
/// stage reports the expected value 0.5.
pub fn stage_temperature(k: usize, config: &CurriculumConfig) -> Result<f64> {
    let n = config.num_stages();
    if k == 0 || k > n {
        return Err(PcsError::Domain(format!("stage {k} outside 1..={n}")));
    }
    let steps = config.ladder_steps() as f64;
    let rung = (k - 1) as f64;
    Ok(match config.mode {
        CurriculumMode::Pcs | CurriculumMode::RatioCl | CurriculumMode::NoScheduler => rung / steps,
        CurriculumMode::AntiCl => (steps - rung) / steps,
        CurriculumMode::NoCl => 0.5,
    })
}

/// Replay probabilities over stages `1..=k`: `e^{i−k} / Σ_j e^{j−k}`.
pub fn replay_distribution(k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(PcsError::Domain("replay distribution needs k >= 1".into()));
    }
    let weights: Vec<f64> = (1..=k).map(|i| (i as f64 - k as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Stay,
    Advance,
    Finish,
}

/// Best loss and evaluations since the last improvement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patience {
    pub best: f64,
    pub since_improvement: usize,
}

impl Default for Patience {
    fn default() -> Self {
        Patience {
            best: f64::INFINITY,
            since_improvement: 0,
        }
    }
}

/// One patience update. Pure: the same inputs always give the same decision.
pub fn patience_step(
    state: Patience,
    new_loss: f64,
    patience: usize,
    min_delta: f64,
    last_stage: bool,
) -> Result<(Decision, Patience)> {
    if !new_loss.is_finite() {
        return Err(PcsError::Numeric(format!("validation loss is {new_loss}")));
    }
    if new_loss < state.best - min_delta {
        return Ok((
            Decision::Stay,
            Patience {
                best: new_loss,
                since_improvement: 0,
            },
        ));
    }
    let next = Patience {
        best: state.best,
        since_improvement: state.since_improvement + 1,
    };
    let decision = if next.since_improvement < patience {
        Decision::Stay
    } else if last_stage {
        Decision::Finish
    } else {
        Decision::Advance
    };
    Ok((decision, next))
}

/// Scheduler state owned by the trainer. Holds one generated dataset per
/// entered stage, so `datasets().len() == stage()`.
#[derive(Debug, Clone)]
pub struct CurriculumState<D> {
    config: CurriculumConfig,
    stage: usize,
    patience: Patience,
    datasets: Vec<D>,
}

impl<D> CurriculumState<D> {
    /// Enters stage 1 with its dataset.
    pub fn new(config: CurriculumConfig, first: D) -> Result<Self> {
        config.validate()?;
        Ok(CurriculumState {
            config,
            stage: 1,
            patience: Patience::default(),
            datasets: vec![first],
        })
    }

    pub fn config(&self) -> &CurriculumConfig {
        &self.config
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn temperature(&self) -> f64 {
        stage_temperature(self.stage, &self.config).expect("stage kept in range")
    }

    pub fn num_stages(&self) -> usize {
        self.config.num_stages()
    }

    pub fn is_last_stage(&self) -> bool {
        self.stage == self.num_stages()
    }

    pub fn patience(&self) -> Patience {
        self.patience
    }

    pub fn stage_patience(&self) -> usize {
        self.config.stage_patience(self.stage)
    }

    /// Dataset of stage `i` (1-based).
    pub fn dataset(&self, i: usize) -> &D {
        &self.datasets[i - 1]
    }

    pub fn dataset_mut(&mut self, i: usize) -> &mut D {
        &mut self.datasets[i - 1]
    }

    pub fn datasets(&self) -> &[D] {
        &self.datasets
    }

    /// Records a validation loss and decides whether to move on. The stage
    /// only changes through [`CurriculumState::advance`].
    pub fn should_advance(&mut self, new_val_loss: f64) -> Result<Decision> {
        let (decision, next) = patience_step(
            self.patience,
            new_val_loss,
            self.stage_patience(),
            self.config.min_delta,
            self.is_last_stage(),
        )?;
        self.patience = next;
        Ok(decision)
    }

    /// Enters the next stage with its freshly generated dataset and resets
    /// loss tracking.
    pub fn advance(&mut self, dataset: D) -> Result<()> {
        if self.is_last_stage() {
            return Err(PcsError::Domain("already at the last stage".into()));
        }
        self.stage += 1;
        self.datasets.push(dataset);
        self.patience = Patience::default();
        Ok(())
    }

    /// Stage to draw the next batch from.
    pub fn sample_stage(&self, rng: &mut RngStream) -> usize {
        match self.config.mode {
            CurriculumMode::NoScheduler => self.stage,
            _ if self.stage == 1 => 1,
            _ => {
                let probs = replay_distribution(self.stage).expect("stage >= 1");
                rng.categorical(&probs) + 1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax;

    fn cfg(mode: CurriculumMode) -> CurriculumConfig {
        CurriculumConfig {
            mode,
            ..CurriculumConfig::default()
        }
    }

    #[test]
    fn replay_examples() {
        assert_eq!(replay_distribution(1).unwrap(), [1.0]);
        let p2 = replay_distribution(2).unwrap();
        assert!((p2[0] - 0.26894142).abs() < 1e-8 && (p2[1] - 0.73105858).abs() < 1e-8);
        let p3 = replay_distribution(3).unwrap();
        for (a, b) in p3.iter().zip([0.09003057, 0.24472847, 0.66524096]) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(replay_distribution(0).is_err());
    }

    #[test]
    fn replay_matches_softmax_and_is_monotone() {
        for k in 1..=64 {
            let p = replay_distribution(k).unwrap();
            let offsets: Vec<f64> = (1..=k).map(|i| i as f64 - k as f64).collect();
            let q = softmax(&offsets, 1.0).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k {
                assert!((p[i] - q[i]).abs() < 1e-12);
                if i + 1 < k {
                    assert!(p[i] < p[i + 1]);
                }
            }
        }
    }

    #[test]
    fn temperatures() {
        let c = cfg(CurriculumMode::Pcs);
        assert_eq!(c.num_stages(), 11);
        assert_eq!(stage_temperature(1, &c).unwrap(), 0.0);
        assert_eq!(stage_temperature(4, &c).unwrap(), 0.3);
        assert_eq!(stage_temperature(11, &c).unwrap(), 1.0);
        assert!(stage_temperature(12, &c).is_err());
        assert!(stage_temperature(0, &c).is_err());
        let a = cfg(CurriculumMode::AntiCl);
        assert_eq!(stage_temperature(1, &a).unwrap(), 1.0);
        assert_eq!(stage_temperature(11, &a).unwrap(), 0.0);
        assert_eq!(cfg(CurriculumMode::NoCl).num_stages(), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(CurriculumMode::Pcs);
        c.delta = 0.3;
        assert!(c.validate().is_err());
        c.delta = 0.25;
        assert!(c.validate().is_ok());
        c.delta = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg(CurriculumMode::Pcs);
        c.base_patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn improving_losses_stay() {
        let mut s = CurriculumState::new(cfg(CurriculumMode::Pcs), ()).unwrap();
        for l in [1.0, 0.9, 0.8] {
            assert_eq!(s.should_advance(l).unwrap(), Decision::Stay);
        }
    }

    #[test]
    fn flat_losses_advance_after_patience() {
        let mut s = CurriculumState::new(cfg(CurriculumMode::Pcs), ()).unwrap();
        assert_eq!(s.stage_patience(), 2);
        let d: Vec<Decision> = [1.0, 1.0, 1.0].iter().map(|&l| s.should_advance(l).unwrap()).collect();
        assert_eq!(d, [Decision::Stay, Decision::Stay, Decision::Advance]);
        s.advance(()).unwrap();
        assert_eq!(s.stage(), 2);
        assert_eq!(s.datasets().len(), 2);
        assert_eq!(s.stage_patience(), 3);
        assert_eq!(s.patience(), Patience::default());
    }

    #[test]
    fn last_stage_finishes() {
        let mut c = cfg(CurriculumMode::Pcs);
        c.delta = 1.0;
        let mut s = CurriculumState::new(c, ()).unwrap();
        s.advance(()).unwrap();
        assert_eq!(s.temperature(), 1.0);
        let mut last = Decision::Stay;
        for _ in 0..10 {
            last = s.should_advance(5.0).unwrap();
            if last != Decision::Stay {
                break;
            }
        }
        assert_eq!(last, Decision::Finish);
        assert!(s.advance(()).is_err());
    }

    #[test]
    fn nan_loss_rejected() {
        let mut s = CurriculumState::new(cfg(CurriculumMode::Pcs), ()).unwrap();
        assert!(matches!(s.should_advance(f64::NAN), Err(PcsError::Numeric(_))));
    }

    #[test]
    fn replaying_a_loss_sequence_reproduces_decisions() {
        let losses = [1.0, 0.95, 0.95, 0.96, 0.7, 0.7, 0.71, 0.7];
        let run = || {
            let mut p = Patience::default();
            losses
                .iter()
                .map(|&l| {
                    let (d, n) = patience_step(p, l, 2, 1e-4, false).unwrap();
                    p = n;
                    d
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sampling_modes() {
        let mut rng = RngStream::new(0);
        let s = CurriculumState::new(cfg(CurriculumMode::Pcs), ()).unwrap();
        assert!((0..100).all(|_| s.sample_stage(&mut rng) == 1));
        let mut s = CurriculumState::new(cfg(CurriculumMode::NoScheduler), ()).unwrap();
        for _ in 0..4 {
            s.advance(()).unwrap();
        }
        assert!((0..100).all(|_| s.sample_stage(&mut rng) == 5));
    }

    #[test]
    fn sampled_frequencies_follow_replay() {
        let mut s = CurriculumState::new(cfg(CurriculumMode::Pcs), ()).unwrap();
        s.advance(()).unwrap();
        s.advance(()).unwrap();
        let mut rng = RngStream::new(21);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[s.sample_stage(&mut rng) - 1] += 1;
        }
        let p = replay_distribution(3).unwrap();
        for i in 0..3 {
            let sigma = (n as f64 * p[i] * (1.0 - p[i])).sqrt();
            assert!((counts[i] as f64 - n as f64 * p[i]).abs() <= 3.0 * sigma);
        }
    }
}
