//! Measurer pre-training, curriculum-driven fine-tuning and evaluation.

mod eval;
mod export;

pub use eval::{accuracy, evaluate, macro_average, mean_loss, EvalReport};
pub use export::{
    aggregate_learning_curves, dictionary_pairs, export_embeddings, export_similarity,
    mean_dictionary_similarity, read_metrics_csv, steps_to_reach, write_learning_curve_csv, write_metrics_csv,
    write_similarity_csv, write_trace_jsonl, CurvePoint, SimilarityRow,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codeswitch::{generate_random_cs_dataset, generate_stage_dataset, SwitchPolicy, SwitchedExample};
use crate::corpus::{LabeledExample, TaskData, Vocabulary};
use crate::curriculum::{stage_temperature, CurriculumConfig, CurriculumMode, CurriculumState, Decision};
use crate::error::{PcsError, Result};
use crate::model::{init_params, loss_and_gradients, ModelConfig, ModelParams, Sample};
use crate::numerics::{adamw_step, Matrix, OptimizerState, RngStream};
use crate::par::Exec;
use crate::relevance::{measure_all, MeasurerKind, Reduction, RelevanceProfile};

/// Training variants: the full method, its ablations and two baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Pcs,
    /// Random code-switching without a curriculum.
    NoCl,
    /// Ladder over replacement ratio with randomly chosen words.
    RatioCl,
    /// Gradient × input instead of relevance propagation.
    GradCl,
    /// Hard-to-easy ladder.
    AntiCl,
    /// Only the first target language is mixed in.
    TgtOnly,
    /// No replay of earlier stages.
    NoScheduler,
    /// Source-only fine-tuning.
    NoCs,
}

impl TrainMode {
    pub const ALL: [TrainMode; 8] = [
        TrainMode::Pcs,
        TrainMode::NoCl,
        TrainMode::RatioCl,
        TrainMode::GradCl,
        TrainMode::AntiCl,
        TrainMode::TgtOnly,
        TrainMode::NoScheduler,
        TrainMode::NoCs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Pcs => "pcs",
            TrainMode::NoCl => "no_cl",
            TrainMode::RatioCl => "ratio_cl",
            TrainMode::GradCl => "grad_cl",
            TrainMode::AntiCl => "anti_cl",
            TrainMode::TgtOnly => "tgt_only",
            TrainMode::NoScheduler => "no_scheduler",
            TrainMode::NoCs => "no_cs",
        }
    }

    pub fn curriculum_mode(self) -> CurriculumMode {
        match self {
            TrainMode::Pcs | TrainMode::GradCl | TrainMode::TgtOnly => CurriculumMode::Pcs,
            TrainMode::RatioCl => CurriculumMode::RatioCl,
            TrainMode::AntiCl => CurriculumMode::AntiCl,
            TrainMode::NoScheduler => CurriculumMode::NoScheduler,
            TrainMode::NoCl | TrainMode::NoCs => CurriculumMode::NoCl,
        }
    }

    /// Word-ranking signal, `None` when nothing is code-switched.
    pub fn measurer(self) -> Option<MeasurerKind> {
        match self {
            TrainMode::Pcs | TrainMode::AntiCl | TrainMode::TgtOnly | TrainMode::NoScheduler => {
                Some(MeasurerKind::Lrp)
            }
            TrainMode::GradCl => Some(MeasurerKind::Gradient),
            TrainMode::RatioCl | TrainMode::NoCl => Some(MeasurerKind::Random),
            TrainMode::NoCs => None,
        }
    }

    pub fn single_target(self) -> bool {
        self == TrainMode::TgtOnly
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = PcsError;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PcsError::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Encoder learning rate.
    pub lr: f64,
    /// Classifier-head learning rate.
    pub head_lr: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub measurer_max_steps: usize,
    /// Early-stopping patience (evaluations) of measurer pre-training.
    pub measurer_patience: usize,
    pub reduction: Reduction,
    /// Start the trainee from the measurer's weights.
    pub warm_start: bool,
    /// Regenerate random code-switching data every epoch (curriculum-free mode).
    pub regenerate_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-3,
            head_lr: 1e-3,
            weight_decay: 0.01,
            max_steps: 3000,
            eval_interval: 25,
            measurer_max_steps: 1500,
            measurer_patience: 4,
            reduction: Reduction::default(),
            warm_start: false,
            regenerate_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_interval == 0 || self.measurer_max_steps == 0 {
            return Err(PcsError::Config("batch_size, max_steps, eval_interval and measurer_max_steps must be >= 1".into()));
        }
        if self.measurer_patience == 0 {
            return Err(PcsError::Config("measurer_patience must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.head_lr > 0.0) {
            return Err(PcsError::Config("learning rates must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(PcsError::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// A task with its vocabulary and every split encoded to token ids.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub data: TaskData,
    pub vocab: Vocabulary,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub tests: Vec<(String, Vec<Sample>)>,
}

impl PreparedTask {
    /// Vocabulary from source training tokens and every dictionary entry.
    pub fn new(data: TaskData) -> Self {
        let vocab = Vocabulary::build(&data.train, &data.lexicons);
        PreparedTask::with_vocab(data, vocab)
    }

    pub fn with_vocab(data: TaskData, vocab: Vocabulary) -> Self {
        let encode = |ex: &[LabeledExample]| encode_all(&vocab, ex);
        let train = encode(&data.train);
        let dev = encode(&data.dev);
        let tests = data
            .tests
            .iter()
            .map(|(lang, set)| (lang.clone(), encode(set)))
            .collect();
        PreparedTask {
            data,
            train,
            dev,
            tests,
            vocab,
        }
    }

    pub fn encode(&self, examples: &[LabeledExample]) -> Vec<Sample> {
        encode_all(&self.vocab, examples)
    }

    /// Default architecture sized for this task.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.vocab.len(), self.data.num_classes)
    }
}

fn encode_all(vocab: &Vocabulary, examples: &[LabeledExample]) -> Vec<Sample> {
    examples
        .iter()
        .map(|e| Sample {
            tokens: vocab.encode(&e.sentence),
            label: e.label,
        })
        .collect()
}

/// Relevance profiles for the source train and dev splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    pub train: Vec<RelevanceProfile>,
    pub dev: Vec<RelevanceProfile>,
}

pub fn compute_profiles(
    task: &PreparedTask,
    measurer: &ModelParams,
    kind: MeasurerKind,
    reduction: Reduction,
    seed: u64,
) -> Result<Profiles> {
    let rng = RngStream::new(seed).split_named("profiles");
    Ok(Profiles {
        train: measure_all(measurer, &task.train, kind, reduction, &rng.split(0), Exec::default())?,
        dev: measure_all(measurer, &task.dev, kind, reduction, &rng.split(1), Exec::default())?,
    })
}

/// Two AdamW states: one for the encoder, one for the classifier head.
struct Optimizers {
    encoder: OptimizerState,
    head: OptimizerState,
    is_head: Vec<bool>,
}

impl Optimizers {
    fn new(params: &ModelParams, cfg: &TrainConfig) -> Result<Self> {
        let tensors = params.tensors();
        let shapes = |head: bool| -> Vec<(usize, usize)> {
            tensors
                .iter()
                .filter(|(n, _)| n.is_head() == head)
                .map(|(_, m)| m.shape())
                .collect()
        };
        Ok(Optimizers {
            encoder: OptimizerState::new(&shapes(false), cfg.lr, cfg.weight_decay)?,
            head: OptimizerState::new(&shapes(true), cfg.head_lr, cfg.weight_decay)?,
            is_head: tensors.iter().map(|(n, _)| n.is_head()).collect(),
        })
    }

    fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        let mut enc_p: Vec<&mut Matrix> = Vec::new();
        let mut head_p: Vec<&mut Matrix> = Vec::new();
        for (p, &h) in params.tensors_mut().into_iter().zip(&self.is_head) {
            if h {
                head_p.push(p);
            } else {
                enc_p.push(p);
            }
        }
        let g = grads.tensors();
        let enc_g: Vec<&Matrix> = g.iter().filter(|(n, _)| !n.is_head()).map(|(_, m)| *m).collect();
        let head_g: Vec<&Matrix> = g.iter().filter(|(n, _)| n.is_head()).map(|(_, m)| *m).collect();
        adamw_step(&mut enc_p, &enc_g, &mut self.encoder)?;
        adamw_step(&mut head_p, &head_g, &mut self.head)
    }
}

/// Shuffled pass over a dataset, reshuffled every epoch.
#[derive(Debug, Clone)]
struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl EpochSampler {
    fn new(len: usize, rng: &mut RngStream) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut order);
        EpochSampler {
            order,
            cursor: 0,
            epoch: 0,
        }
    }

    /// Next batch of indices; the second value reports a finished epoch.
    fn next(&mut self, batch: usize, rng: &mut RngStream) -> (Vec<usize>, bool) {
        let batch = batch.min(self.order.len());
        let mut rolled = false;
        if self.cursor + batch > self.order.len() {
            rng.shuffle(&mut self.order);
            self.cursor = 0;
            self.epoch += 1;
            rolled = true;
        }
        let out = self.order[self.cursor..self.cursor + batch].to_vec();
        self.cursor += batch;
        (out, rolled)
    }
}

fn train_step(
    params: &mut ModelParams,
    opt: &mut Optimizers,
    batch: &[&Sample],
    dropout: &mut RngStream,
) -> Result<f64> {
    let (loss, grads) = loss_and_gradients(params, batch, Some(dropout)).map_err(|e| match e {
        PcsError::Numeric(m) => PcsError::Training(format!("diverged: {m}")),
        other => other,
    })?;
    opt.update(params, &grads)
        .map_err(|e| PcsError::Training(format!("optimizer step failed: {e}")))?;
    Ok(loss)
}

/// The frozen source-language model behind the relevance profiles.
#[derive(Debug, Clone)]
pub struct MeasurerRun {
    pub params: ModelParams,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
    pub steps: usize,
}

/// Trains on source data only, early-stopping on dev loss; returns the
/// best-dev-loss weights.
pub fn pretrain_measurer(
    task: &PreparedTask,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<MeasurerRun> {
    cfg.validate()?;
    if task.train.is_empty() || task.dev.is_empty() {
        return Err(PcsError::Input("measurer needs non-empty train and dev sets".into()));
    }
    let root = RngStream::new(seed).split_named("measurer");
    let mut params = init_params(model_cfg, &mut root.split_named("init"))?;
    let mut opt = Optimizers::new(&params, cfg)?;
    let mut batch_rng = root.split_named("batches");
    let mut dropout = root.split_named("dropout");
    let mut sampler = EpochSampler::new(task.train.len(), &mut batch_rng);
    let exec = Exec::default();

    let mut best = (f64::INFINITY, params.clone());
    let mut since = 0;
    let mut steps = 0;
    for step in 1..=cfg.measurer_max_steps {
        let (idx, _) = sampler.next(cfg.batch_size, &mut batch_rng);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &task.train[i]).collect();
        train_step(&mut params, &mut opt, &batch, &mut dropout)?;
        steps = step;
        if step % cfg.eval_interval == 0 || step == cfg.measurer_max_steps {
            let loss = mean_loss(&params, &task.dev, exec)?;
            if !loss.is_finite() {
                return Err(PcsError::Training(format!("measurer dev loss {loss} at step {step}")));
            }
            if loss < best.0 - 1e-4 {
                best = (loss, params.clone());
                since = 0;
            } else {
                since += 1;
                if since >= cfg.measurer_patience {
                    break;
                }
            }
        }
    }
    let (dev_loss, params) = best;
    let dev_accuracy = accuracy(&params, &task.dev, exec)?;
    log::info!("measurer seed {seed}: dev loss {dev_loss:.4}, dev acc {dev_accuracy:.4}, {steps} steps");
    Ok(MeasurerRun {
        params,
        dev_loss,
        dev_accuracy,
        steps,
    })
}

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub stage: usize,
    pub tau: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub accuracies: Vec<(String, f64)>,
    pub mean_target_accuracy: f64,
}

/// Scheduler log entry written at every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub stage: usize,
    pub tau: f64,
    pub val_loss: f64,
    pub decision: Decision,
    /// Batches drawn from each stage `1..=k` since the previous evaluation.
    pub replay_histogram: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StageCheckpoint {
    /// `None` for the final weights.
    pub stage: Option<usize>,
    pub step: usize,
    pub params: ModelParams,
}

/// A cached code-switched training set as it was used for one stage.
#[derive(Debug, Clone)]
pub struct StageDump {
    pub stage: usize,
    pub tau: f64,
    pub examples: Vec<LabeledExample>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub mode: TrainMode,
    pub seed: u64,
    pub params: ModelParams,
    pub metrics: Vec<MetricsRow>,
    pub trace: Vec<TraceRecord>,
    pub checkpoints: Vec<StageCheckpoint>,
    pub final_report: EvalReport,
    pub steps: usize,
    /// Empty when nothing was code-switched.
    pub stage_datasets: Vec<StageDump>,
}

/// Everything that defines one training run.
#[derive(Debug, Clone, Copy)]
pub struct RunSpec<'a> {
    pub task: &'a PreparedTask,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub curriculum: &'a CurriculumConfig,
    pub mode: TrainMode,
    pub seed: u64,
}

/// What the run can reuse instead of recomputing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Precomputed<'a> {
    pub measurer: Option<&'a ModelParams>,
    pub profiles: Option<&'a Profiles>,
}

struct StageData {
    train: Vec<Sample>,
    dev: Vec<Sample>,
    sampler: EpochSampler,
    switched: Option<Vec<SwitchedExample>>,
}

struct StageBuilder<'a> {
    spec: RunSpec<'a>,
    profiles: Option<Profiles>,
    policy: Option<SwitchPolicy>,
    cs_rng: RngStream,
}

impl StageBuilder<'_> {
    fn switched(&self, examples: &[SwitchedExample]) -> Vec<Sample> {
        examples
            .iter()
            .map(|s| Sample {
                tokens: self.spec.task.vocab.encode(&s.example.sentence),
                label: s.example.label,
            })
            .collect()
    }

    fn build(&self, stage: usize, epoch: u64, sampler_rng: &mut RngStream) -> Result<StageData> {
        let task = self.spec.task;
        let exec = Exec::default();
        let (train, dev, switched) = match (&self.policy, &self.profiles) {
            (Some(policy), Some(prof)) if self.spec.mode == TrainMode::NoCl => {
                let t = generate_random_cs_dataset(&task.data.train, &prof.train, policy, &self.cs_rng, epoch, exec)?;
                let d = generate_random_cs_dataset(
                    &task.data.dev,
                    &prof.dev,
                    policy,
                    &self.cs_rng.split_named("dev"),
                    0,
                    exec,
                )?;
                (self.switched(&t), self.switched(&d), Some(t))
            }
            (Some(policy), Some(prof)) => {
                let tau = stage_temperature(stage, self.spec.curriculum)?;
                let policy = policy.with_temperature(tau)?;
                let t = generate_stage_dataset(&task.data.train, &prof.train, &policy, &self.cs_rng, stage as u64, exec)?;
                let d = generate_stage_dataset(
                    &task.data.dev,
                    &prof.dev,
                    &policy,
                    &self.cs_rng.split_named("dev"),
                    stage as u64,
                    exec,
                )?;
                (self.switched(&t), self.switched(&d), Some(t))
            }
            _ => (task.train.clone(), task.dev.clone(), None),
        };
        let sampler = EpochSampler::new(train.len(), sampler_rng);
        Ok(StageData {
            train,
            dev,
            sampler,
            switched,
        })
    }
}

/// Runs one training variant end to end.
///
/// Profiles are computed once from the frozen measurer (pre-trained here
/// unless supplied). Stage 1 starts at its ladder temperature; every batch
/// draws a stage from the replay distribution, validation runs every
/// `eval_interval` steps on the dev split code-switched like the current
/// stage, and patience exhaustion moves to the next stage, generating its
/// data on entry.
pub fn train_pcs(spec: RunSpec<'_>, pre: Precomputed<'_>) -> Result<TrainOutcome> {
    let RunSpec {
        task,
        model,
        train: cfg,
        mode,
        seed,
        ..
    } = spec;
    cfg.validate()?;
    model.validate()?;
    if model.vocab_size != task.vocab.len() || model.num_classes != task.data.num_classes {
        return Err(PcsError::Config(format!(
            "model expects vocab {} / {} classes, task has {} / {}",
            model.vocab_size,
            model.num_classes,
            task.vocab.len(),
            task.data.num_classes
        )));
    }
    let mut curriculum = spec.curriculum.clone();
    curriculum.mode = mode.curriculum_mode();
    curriculum.validate()?;
    let spec = RunSpec {
        curriculum: &curriculum,
        ..spec
    };
    let root = RngStream::new(seed);
    let exec = Exec::default();

    let kind = mode.measurer();
    let needs_model = matches!(kind, Some(MeasurerKind::Lrp | MeasurerKind::Gradient)) || cfg.warm_start;
    let owned_measurer;
    let measurer = match pre.measurer {
        Some(m) => Some(m),
        None if needs_model && (pre.profiles.is_none() || cfg.warm_start) => {
            owned_measurer = pretrain_measurer(task, model, cfg, seed)?.params;
            Some(&owned_measurer)
        }
        None => None,
    };
    let profiles = match kind {
        None => None,
        Some(MeasurerKind::Random) => {
            let dummy = ModelParams::zeros(model)?;
            Some(compute_profiles(task, &dummy, MeasurerKind::Random, cfg.reduction, seed)?)
        }
        Some(k) => match pre.profiles {
            Some(p) => Some(p.clone()),
            None => Some(compute_profiles(
                task,
                measurer.expect("measurer available"),
                k,
                cfg.reduction,
                seed,
            )?),
        },
    };
    let policy = match kind {
        None => None,
        Some(_) => Some(SwitchPolicy::for_languages(
            0.0,
            &task.data.target_langs,
            &task.data.lexicons,
            mode.single_target(),
        )?),
    };

    let mut params = match (cfg.warm_start, measurer) {
        (true, Some(m)) => m.clone(),
        _ => init_params(model, &mut root.split_named("init"))?,
    };
    let mut opt = Optimizers::new(&params, cfg)?;
    let mut batch_rng = root.split_named("batches");
    let mut sched_rng = root.split_named("scheduler");
    let mut dropout = root.split_named("dropout");
    let builder = StageBuilder {
        spec,
        profiles,
        policy,
        cs_rng: root.split_named("code-switch"),
    };

    let mut state = CurriculumState::new(curriculum.clone(), builder.build(1, 0, &mut batch_rng)?)?;
    let row_tau = |k: usize| -> Result<f64> {
        if mode == TrainMode::NoCs {
            Ok(0.0)
        } else {
            stage_temperature(k, &curriculum)
        }
    };

    let mut metrics = Vec::new();
    let mut trace = Vec::new();
    let mut checkpoints = Vec::new();
    let mut hist = vec![0usize; 1];
    let mut loss_acc = (0.0, 0usize);
    let mut stage_steps = 0usize;
    let mut step = 0;
    while step < cfg.max_steps {
        step += 1;
        stage_steps += 1;
        let i = state.sample_stage(&mut sched_rng);
        hist[i - 1] += 1;
        let data = state.dataset_mut(i);
        let (idx, rolled) = data.sampler.next(cfg.batch_size, &mut batch_rng);
        if rolled && cfg.regenerate_each_epoch && mode == TrainMode::NoCl {
            let epoch = data.sampler.epoch;
            let fresh = builder.build(1, epoch, &mut batch_rng)?;
            data.train = fresh.train;
            data.switched = fresh.switched;
        }
        let data = state.dataset(i);
        let batch: Vec<&Sample> = idx.iter().map(|&j| &data.train[j]).collect();
        let loss = train_step(&mut params, &mut opt, &batch, &mut dropout)?;
        loss_acc = (loss_acc.0 + loss, loss_acc.1 + 1);

        if step % cfg.eval_interval != 0 && step != cfg.max_steps {
            continue;
        }
        let k = state.stage();
        let val_loss = mean_loss(&params, &state.dataset(k).dev, exec)?;
        let report = evaluate(&params, &task.tests, exec)?;
        let mut decision = state.should_advance(val_loss)?;
        let epoch_len = state.dataset(k).train.len().div_ceil(cfg.batch_size);
        if decision == Decision::Stay && stage_steps >= curriculum.max_epochs_per_stage * epoch_len {
            decision = if state.is_last_stage() {
                Decision::Finish
            } else {
                Decision::Advance
            };
        }
        let tau = row_tau(k)?;
        metrics.push(MetricsRow {
            step,
            stage: k,
            tau,
            train_loss: loss_acc.0 / loss_acc.1 as f64,
            val_loss,
            accuracies: report.per_language.clone(),
            mean_target_accuracy: report.average,
        });
        trace.push(TraceRecord {
            step,
            stage: k,
            tau,
            val_loss,
            decision,
            replay_histogram: std::mem::take(&mut hist),
        });
        log::debug!("{mode} seed {seed} step {step}: stage {k} tau {tau:.2} val {val_loss:.4} acc {:.4} {decision:?}", report.average);
        loss_acc = (0.0, 0);
        hist = vec![0; k];
        match decision {
            Decision::Stay => {}
            Decision::Advance => {
                checkpoints.push(StageCheckpoint {
                    stage: Some(k),
                    step,
                    params: params.clone(),
                });
                state.advance(builder.build(k + 1, 0, &mut batch_rng)?)?;
                hist = vec![0; k + 1];
                stage_steps = 0;
            }
            Decision::Finish => break,
        }
    }

    let final_report = evaluate(&params, &task.tests, exec)?;
    checkpoints.push(StageCheckpoint {
        stage: None,
        step,
        params: params.clone(),
    });
    let stage_datasets = state
        .datasets()
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let examples = d.switched.as_ref()?.iter().map(|s| s.example.clone()).collect();
            Some(row_tau(i + 1).map(|tau| StageDump {
                stage: i + 1,
                tau,
                examples,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome {
        stage_datasets,
        mode,
        seed,
        params,
        metrics,
        trace,
        checkpoints,
        final_report,
        steps: step,
    })
}
