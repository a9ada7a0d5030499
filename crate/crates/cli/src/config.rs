//! Flat `key = value` experiment configuration.

use std::path::{Path, PathBuf};

use pcs_core::corpus::SynthConfig;
use pcs_core::curriculum::CurriculumConfig;
use pcs_core::model::ModelConfig;
use pcs_core::relevance::{MeasurerKind, Reduction};
use pcs_core::trainer::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Every knob of every command. Field names are the config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint for `eval` / `export`; empty means "every final checkpoint
    /// under `out_dir`" for `eval`.
    pub checkpoint: String,
    /// Seed of the generated synthetic task.
    pub seed: u64,
    /// Training seeds; one run each.
    pub seeds: Vec<u64>,
    pub mode: TrainMode,
    /// Modes swept by `ablate`.
    pub modes: Vec<TrainMode>,
    /// Profile kind written by `measure`.
    pub measurer: MeasurerKind,
    /// Restricts evaluation to these targets; empty keeps all.
    pub target_langs: Vec<String>,
    /// Also write every stage's code-switched training set.
    pub dump_stages: bool,

    pub num_languages: usize,
    pub vocab_per_lang: usize,
    pub function_fraction: f64,
    pub num_train: usize,
    pub num_dev: usize,
    pub num_test: usize,
    pub num_classes: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_content: usize,
    pub max_content: usize,
    pub distractor_prob: f64,
    pub p_poly: f64,
    pub function_coverage: f64,
    pub source_lang: String,

    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,

    pub batch_size: usize,
    pub lr: f64,
    pub head_lr: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub measurer_max_steps: usize,
    pub measurer_patience: usize,
    pub reduction: Reduction,
    pub warm_start: bool,
    pub regenerate_each_epoch: bool,

    pub delta: f64,
    pub base_patience: usize,
    pub patience_step: usize,
    pub max_epochs_per_stage: usize,
    pub min_delta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let m = ModelConfig::new(1, 2);
        let t = TrainConfig::default();
        let c = CurriculumConfig::default();
        ExperimentConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            checkpoint: String::new(),
            seed: 1,
            seeds: vec![1, 2, 3],
            mode: TrainMode::Pcs,
            modes: TrainMode::ALL.to_vec(),
            measurer: MeasurerKind::Lrp,
            target_langs: Vec::new(),
            dump_stages: false,
            num_languages: s.num_languages,
            vocab_per_lang: s.vocab_per_lang,
            function_fraction: s.function_fraction,
            num_train: s.num_train,
            num_dev: s.num_dev,
            num_test: s.num_test,
            num_classes: s.num_classes,
            min_len: s.min_len,
            max_len: s.max_len,
            min_content: s.min_content,
            max_content: s.max_content,
            distractor_prob: s.distractor_prob,
            p_poly: s.p_poly,
            function_coverage: s.function_coverage,
            source_lang: s.source_lang,
            embed_dim: m.embed_dim,
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            mlp_hidden: m.mlp_hidden,
            max_seq_len: m.max_seq_len,
            dropout_rate: m.dropout_rate,
            batch_size: t.batch_size,
            lr: t.lr,
            head_lr: t.head_lr,
            weight_decay: t.weight_decay,
            max_steps: t.max_steps,
            eval_interval: t.eval_interval,
            measurer_max_steps: t.measurer_max_steps,
            measurer_patience: t.measurer_patience,
            reduction: t.reduction,
            warm_start: t.warm_start,
            regenerate_each_epoch: t.regenerate_each_epoch,
            delta: c.delta,
            base_patience: c.base_patience,
            patience_step: c.patience_step,
            max_epochs_per_stage: c.max_epochs_per_stage,
            min_delta: c.min_delta,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Interprets `raw` with the JSON type of the key's current value.
fn typed_value(key: &str, current: &Value, raw: &str) -> Result<Value, CliError> {
    let raw = raw.trim();
    let scalar = |raw: &str, like: Option<&Value>| -> Result<Value, CliError> {
        match like {
            Some(Value::String(_)) | None => Ok(Value::String(raw.to_string())),
            Some(Value::Bool(_)) => raw
                .parse::<bool>()
                .map(Value::Bool)
                .map_err(|_| config_err(format!("{key}: expected true or false, got `{raw}`"))),
            Some(Value::Number(_)) => serde_json::from_str::<Value>(raw)
                .ok()
                .filter(Value::is_number)
                .ok_or_else(|| config_err(format!("{key}: expected a number, got `{raw}`"))),
            Some(other) => Err(config_err(format!("{key}: unsupported value type {other}"))),
        }
    };
    match current {
        Value::Array(items) => {
            let number = Value::Number(0.into());
            let like = items.first().or((key == "seeds").then_some(&number));
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| scalar(s, like))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        other => scalar(raw, Some(other)),
    }
}

impl ExperimentConfig {
    /// Applies `key = value` assignments in order; later ones win.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<(), CliError> {
        let mut map: Map<String, Value> = match serde_json::to_value(&*self) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        };
        for (key, raw) in pairs {
            let current = map
                .get(key)
                .ok_or_else(|| config_err(format!("unknown config key `{key}`")))?;
            let v = typed_value(key, current, raw)?;
            map.insert(key.to_string(), v);
            serde_json::from_value::<ExperimentConfig>(Value::Object(map.clone()))
                .map_err(|e| config_err(format!("{key} = {raw}: {e}")))?;
        }
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    /// Reads a flat config file: `key = value` lines, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        self.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// Parses `--key value` / `--key=value` overrides.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut pairs = Vec::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| config_err(format!("unexpected argument `{arg}`; use --key value")))?;
            let (k, v) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| config_err(format!("--{flag} needs a value")))?;
                    (flag.to_string(), v.clone())
                }
            };
            pairs.push((k.replace('-', "_"), v));
        }
        self.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_languages: self.num_languages,
            vocab_per_lang: self.vocab_per_lang,
            function_fraction: self.function_fraction,
            num_train: self.num_train,
            num_dev: self.num_dev,
            num_test: self.num_test,
            num_classes: self.num_classes,
            min_len: self.min_len,
            max_len: self.max_len,
            min_content: self.min_content,
            max_content: self.max_content,
            distractor_prob: self.distractor_prob,
            p_poly: self.p_poly,
            function_coverage: self.function_coverage,
            source_lang: self.source_lang.clone(),
        }
    }

    pub fn model(&self, vocab_size: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            num_classes,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            mlp_hidden: self.mlp_hidden,
            max_seq_len: self.max_seq_len,
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            head_lr: self.head_lr,
            weight_decay: self.weight_decay,
            max_steps: self.max_steps,
            eval_interval: self.eval_interval,
            measurer_max_steps: self.measurer_max_steps,
            measurer_patience: self.measurer_patience,
            reduction: self.reduction,
            warm_start: self.warm_start,
            regenerate_each_epoch: self.regenerate_each_epoch,
        }
    }

    pub fn curriculum(&self) -> CurriculumConfig {
        CurriculumConfig {
            delta: self.delta,
            base_patience: self.base_patience,
            patience_step: self.patience_step,
            max_epochs_per_stage: self.max_epochs_per_stage,
            min_delta: self.min_delta,
            mode: self.mode.curriculum_mode(),
        }
    }

    /// Checks every sub-config before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.synth().validate()?;
        self.model(2, 2).validate()?;
        self.train().validate()?;
        self.curriculum().validate()?;
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        if self.modes.is_empty() {
            return Err(config_err("modes must not be empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn flags_override_typed_fields() {
        let mut c = ExperimentConfig::default();
        c.apply_flags(&flags(&["--mode", "grad_cl", "--seeds=4,5", "--lr", "0.01", "--warm-start", "true", "--measurer=gradient"]))
            .unwrap();
        assert_eq!(c.mode, TrainMode::GradCl);
        assert_eq!(c.seeds, vec![4, 5]);
        assert_eq!(c.lr, 0.01);
        assert!(c.warm_start);
        assert_eq!(c.measurer, MeasurerKind::Gradient);
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        let mut c = ExperimentConfig::default();
        assert!(matches!(c.apply_flags(&flags(&["--nope", "1"])), Err(CliError::Config(_))));
        assert!(matches!(c.apply_flags(&flags(&["--batch_size", "x"])), Err(CliError::Config(_))));
        assert!(matches!(c.apply_flags(&flags(&["--mode", "fancy"])), Err(CliError::Config(_))));
        assert!(matches!(c.apply_flags(&flags(&["--lr"])), Err(CliError::Config(_))));
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "# sweep\nmodes = pcs, no_cs\nmax_steps = 50 # short\ntarget_langs = de\n").unwrap();
        let mut c = ExperimentConfig::default();
        c.load_file(&path).unwrap();
        c.apply_flags(&flags(&["--max_steps", "70"])).unwrap();
        assert_eq!(c.modes, vec![TrainMode::Pcs, TrainMode::NoCs]);
        assert_eq!(c.max_steps, 70);
        assert_eq!(c.target_langs, vec!["de".to_string()]);
    }

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }
}
