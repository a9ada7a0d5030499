//! Difficulty measurer: per-token relevance scores from a frozen source model.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PcsError, Result};
use crate::model::{forward, input_gradient, lrp_relevance, ModelParams, Sample, DEFAULT_LRP_EPS};
use crate::numerics::{Matrix, RngStream};
use crate::par::Exec;

/// How a token's d-dimensional relevance vector collapses to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// |Σ_d r_d|: magnitude of the token's net contribution.
    #[default]
    AbsSum,
    /// Σ_d |r_d|.
    SumAbs,
    /// Σ_d r_d.
    Sum,
}

impl Reduction {
    fn reduce(self, v: impl Iterator<Item = f64>) -> f64 {
        match self {
            Reduction::AbsSum => v.sum::<f64>().abs(),
            Reduction::SumAbs => v.map(f64::abs).sum(),
            Reduction::Sum => v.sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasurerKind {
    #[default]
    Lrp,
    /// Gradient × input at the token embeddings.
    Gradient,
    /// Uniform random scores, for the replacement-ratio baseline.
    Random,
}

/// Per-token scores for one example with respect to one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceProfile {
    pub example_id: usize,
    pub class: usize,
    pub reduction: Reduction,
    pub measurer: MeasurerKind,
    pub scores: Vec<f64>,
}

fn reduce_rows(m: &Matrix, reduction: Reduction) -> Vec<f64> {
    (0..m.rows())
        .map(|r| reduction.reduce(m.row(r).iter().copied()))
        .collect()
}

/// LRP relevance toward `sample.label`, reduced per token.
pub fn measure_lrp(
    params: &ModelParams,
    example_id: usize,
    sample: &Sample,
    reduction: Reduction,
) -> Result<RelevanceProfile> {
    let trace = forward(params, &sample.tokens, None)?;
    let out = lrp_relevance(params, &trace, sample.label, DEFAULT_LRP_EPS)?;
    Ok(RelevanceProfile {
        example_id,
        class: sample.label,
        reduction,
        measurer: MeasurerKind::Lrp,
        scores: reduce_rows(&out.relevance, reduction),
    })
}

/// Gradient × input saliency: `∂f_c/∂e_{i,d} · e_{i,d}` over the token
/// embedding rows, reduced per token.
pub fn measure_gradient(
    params: &ModelParams,
    example_id: usize,
    sample: &Sample,
    reduction: Reduction,
) -> Result<RelevanceProfile> {
    let trace = forward(params, &sample.tokens, None)?;
    let grad = input_gradient(params, &trace, sample.label)?;
    let scores = sample
        .tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            reduction.reduce(
                grad.row(i)
                    .iter()
                    .zip(params.token_embed.row(t))
                    .map(|(g, e)| g * e),
            )
        })
        .collect();
    Ok(RelevanceProfile {
        example_id,
        class: sample.label,
        reduction,
        measurer: MeasurerKind::Gradient,
        scores,
    })
}

/// Uniform scores from a stream keyed by the example id.
pub fn random_profile(example_id: usize, sample: &Sample, rng: &RngStream) -> RelevanceProfile {
    let mut r = rng.split(example_id as u64);
    RelevanceProfile {
        example_id,
        class: sample.label,
        reduction: Reduction::default(),
        measurer: MeasurerKind::Random,
        scores: sample.tokens.iter().map(|_| r.uniform()).collect(),
    }
}

/// Profiles for a whole dataset; `samples[i]` has example id `i`.
pub fn measure_all(
    params: &ModelParams,
    samples: &[Sample],
    kind: MeasurerKind,
    reduction: Reduction,
    rng: &RngStream,
    exec: Exec,
) -> Result<Vec<RelevanceProfile>> {
    exec.try_map(samples, |id, s| match kind {
        MeasurerKind::Lrp => measure_lrp(params, id, s, reduction),
        MeasurerKind::Gradient => measure_gradient(params, id, s, reduction),
        MeasurerKind::Random => Ok(random_profile(id, s, rng)),
    })
}

/// Indices in `eligible` ordered by ascending score, ties by position.
pub fn rank_ascending(profile: &RelevanceProfile, eligible: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|&i| i < profile.scores.len())
        .collect();
    idx.sort_by(|&a, &b| {
        profile.scores[a]
            .total_cmp(&profile.scores[b])
            .then(a.cmp(&b))
    });
    idx.dedup();
    idx
}

/// Writes one JSON object per line.
pub fn save_profiles(path: &Path, profiles: &[RelevanceProfile]) -> Result<()> {
    let mut buf = Vec::new();
    for p in profiles {
        serde_json::to_writer(&mut buf, p)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| PcsError::io(path, e))?;
    f.write_all(&buf).map_err(|e| PcsError::io(path, e))
}

pub fn load_profiles(path: &Path) -> Result<Vec<RelevanceProfile>> {
    let text = fs::read_to_string(path).map_err(|e| PcsError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PcsError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
