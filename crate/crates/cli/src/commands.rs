use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pcs_core::corpus::{generate_synthetic_task, load_task_dir, save_stage_dataset, write_synthetic_task, TaskData, Vocabulary};
use pcs_core::model::{load_checkpoint, save_checkpoint, ModelParams};
use pcs_core::relevance::{load_profiles, save_profiles, MeasurerKind};
use pcs_core::trainer::{
    accuracy, aggregate_learning_curves, compute_profiles, dictionary_pairs, evaluate, export_embeddings,
    export_similarity, mean_dictionary_similarity, pretrain_measurer, read_metrics_csv, train_pcs,
    write_learning_curve_csv, write_metrics_csv, write_similarity_csv, write_trace_jsonl, EvalReport, Precomputed,
    PreparedTask, Profiles, RunSpec, TrainMode,
};
use pcs_core::PcsError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(PcsError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(PcsError::from)?;
    write_text(path, &(text + "\n"))
}

/// Config echo plus tool version; no timestamps, so reruns are identical.
fn manifest(cfg: &ExperimentConfig, command: &str, extra: Value) -> Value {
    json!({
        "tool": "pcs",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
        "results": extra,
    })
}

fn name_of(v: &impl Serialize) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Loads the task and keeps only the requested target languages.
fn load_data(cfg: &ExperimentConfig) -> Result<TaskData> {
    if !cfg.data_dir.is_dir() {
        return Err(CliError::Config(format!(
            "data_dir {} does not exist; run `pcs synth` or point --data_dir at a task",
            cfg.data_dir.display()
        )));
    }
    let mut data = load_task_dir(&cfg.data_dir, cfg.max_seq_len)?;
    if !cfg.target_langs.is_empty() {
        if let Some(l) = cfg.target_langs.iter().find(|l| !data.target_langs.contains(l)) {
            return Err(CliError::Config(format!("target language {l} is not part of the task")));
        }
        data.target_langs.retain(|l| cfg.target_langs.contains(l));
        data.tests.retain(|(l, _)| cfg.target_langs.contains(l));
        data.lexicons.retain(|lex| cfg.target_langs.contains(&lex.tgt_lang));
    }
    Ok(data)
}

pub fn synth(cfg: &ExperimentConfig) -> Result<()> {
    let task = generate_synthetic_task(&cfg.synth(), cfg.seed)?;
    write_synthetic_task(&task, &cfg.data_dir)?;
    info!(
        "wrote synthetic task ({} train, targets {}) to {}",
        task.data.train.len(),
        task.data.target_langs.join(","),
        cfg.data_dir.display()
    );
    Ok(())
}

struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    task: &'a PreparedTask,
    seed: u64,
}

impl SeedContext<'_> {
    fn dir(&self) -> PathBuf {
        self.cfg.out_dir.join("measurer").join(format!("seed{}", self.seed))
    }

    /// Everything the measurer depends on; a cache is reused only on a match.
    fn fingerprint(&self) -> Result<Value> {
        let manifest = cfg_manifest_text(&self.cfg.data_dir)?;
        Ok(json!({
            "data_manifest": manifest,
            "target_langs": self.task.data.target_langs,
            "model": self.cfg.model(self.task.vocab.len(), self.task.data.num_classes),
            "train": self.cfg.train(),
            "seed": self.seed,
        }))
    }

    /// Loads the cached measurer if its fingerprint matches, else trains it.
    fn measurer(&self) -> Result<ModelParams> {
        let dir = self.dir();
        let key_path = dir.join("key.json");
        let ckpt = dir.join("measurer.ckpt");
        let key = self.fingerprint()?;
        let cached = fs::read_to_string(&key_path)
            .ok()
            .and_then(|t| serde_json::from_str::<Value>(&t).ok());
        if cached.as_ref() == Some(&key) && ckpt.is_file() {
            let c = load_checkpoint(&ckpt)?;
            if c.vocab.as_deref() == Some(self.task.vocab.words()) {
                info!("seed {}: reusing measurer {}", self.seed, ckpt.display());
                return Ok(c.params);
            }
        }
        // Stale profiles belong to the old measurer.
        if dir.is_dir() {
            fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        mkdir(&dir)?;
        let model = self.cfg.model(self.task.vocab.len(), self.task.data.num_classes);
        let run = pretrain_measurer(self.task, &model, &self.cfg.train(), self.seed)?;
        save_checkpoint(&ckpt, &run.params, Some(self.task.vocab.words()))?;
        write_json(&key_path, &key)?;
        info!(
            "seed {}: measurer dev accuracy {:.4} after {} steps",
            self.seed, run.dev_accuracy, run.steps
        );
        Ok(run.params)
    }

    fn profiles(&self, measurer: &ModelParams, kind: MeasurerKind) -> Result<Profiles> {
        let stem = format!("profiles-{}-{}", name_of(&kind), name_of(&self.cfg.reduction));
        let train_path = self.dir().join(format!("{stem}.train.jsonl"));
        let dev_path = self.dir().join(format!("{stem}.dev.jsonl"));
        if train_path.is_file() && dev_path.is_file() {
            let p = Profiles {
                train: load_profiles(&train_path)?,
                dev: load_profiles(&dev_path)?,
            };
            if p.train.len() == self.task.train.len() && p.dev.len() == self.task.dev.len() {
                info!("seed {}: reusing {}", self.seed, train_path.display());
                return Ok(p);
            }
        }
        let p = compute_profiles(self.task, measurer, kind, self.cfg.reduction, self.seed)?;
        save_profiles(&train_path, &p.train)?;
        save_profiles(&dev_path, &p.dev)?;
        Ok(p)
    }
}

fn cfg_manifest_text(data_dir: &Path) -> Result<String> {
    let path = data_dir.join("manifest.json");
    fs::read_to_string(&path).map_err(|e| io_err(&path, e))
}

pub fn measure(cfg: &ExperimentConfig) -> Result<()> {
    let task = PreparedTask::new(load_data(cfg)?);
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let ctx = SeedContext { cfg, task: &task, seed };
        let params = ctx.measurer()?;
        let profiles = ctx.profiles(&params, cfg.measurer)?;
        let dev_accuracy = accuracy(&params, &task.dev, Default::default())?;
        results.push(json!({
            "seed": seed,
            "dev_accuracy": dev_accuracy,
            "train_profiles": profiles.train.len(),
            "dev_profiles": profiles.dev.len(),
        }));
    }
    write_json(
        &cfg.out_dir.join("measurer").join("manifest.json"),
        &manifest(cfg, "measure", Value::Array(results)),
    )
}

struct ModeResult {
    mode: TrainMode,
    reports: Vec<(u64, EvalReport, usize)>,
}

fn report_header(langs: &[String]) -> String {
    langs.iter().map(|l| format!(",acc_{l}")).collect()
}

fn train_mode(cfg: &ExperimentConfig, task: &PreparedTask, mode: TrainMode) -> Result<ModeResult> {
    let mode_dir = cfg.out_dir.join(mode.name());
    let model = cfg.model(task.vocab.len(), task.data.num_classes);
    let train_cfg = cfg.train();
    let curriculum = cfg.curriculum();
    let mut reports = Vec::new();
    let mut metrics = Vec::new();
    for &seed in &cfg.seeds {
        let ctx = SeedContext { cfg, task, seed };
        let kind = mode.measurer();
        let model_measured = matches!(kind, Some(MeasurerKind::Lrp | MeasurerKind::Gradient));
        let measurer = if model_measured || train_cfg.warm_start {
            Some(ctx.measurer()?)
        } else {
            None
        };
        let profiles = match (kind, &measurer) {
            (Some(k @ (MeasurerKind::Lrp | MeasurerKind::Gradient)), Some(m)) => Some(ctx.profiles(m, k)?),
            _ => None,
        };
        let spec = RunSpec {
            task,
            model: &model,
            train: &train_cfg,
            curriculum: &curriculum,
            mode,
            seed,
        };
        let out = train_pcs(
            spec,
            Precomputed {
                measurer: measurer.as_ref(),
                profiles: profiles.as_ref(),
            },
        )?;
        let dir = mode_dir.join(format!("seed{seed}"));
        mkdir(&dir)?;
        write_metrics_csv(&dir.join("metrics.csv"), &out.metrics)?;
        write_trace_jsonl(&dir.join("trace.jsonl"), &out.trace)?;
        for c in &out.checkpoints {
            let name = match c.stage {
                Some(k) => format!("stage{k}.ckpt"),
                None => "final.ckpt".to_string(),
            };
            save_checkpoint(&dir.join(name), &c.params, Some(task.vocab.words()))?;
        }
        if cfg.dump_stages && !out.stage_datasets.is_empty() {
            let stage_dir = dir.join("stages");
            mkdir(&stage_dir)?;
            let mut entries = Vec::new();
            for s in &out.stage_datasets {
                let file = format!("stage{}.tsv", s.stage);
                save_stage_dataset(&stage_dir.join(&file), &s.examples)?;
                entries.push(json!({"stage": s.stage, "tau": s.tau, "file": file}));
            }
            let langs: Vec<&String> = if mode.single_target() {
                task.data.target_langs.iter().take(1).collect()
            } else {
                task.data.target_langs.iter().collect()
            };
            write_json(
                &stage_dir.join("manifest.json"),
                &json!({"seed": seed, "mode": mode, "policy_languages": langs, "stages": entries}),
            )?;
        }
        info!(
            "{mode} seed {seed}: avg target accuracy {:.4} after {} steps",
            out.final_report.average, out.steps
        );
        reports.push((seed, out.final_report, out.steps));
        metrics.push(out.metrics);
    }
    write_learning_curve_csv(&mode_dir.join("curve.csv"), &aggregate_learning_curves(&metrics))?;

    let langs = &task.data.target_langs;
    let mut summary = format!("seed{},avg,steps\n", report_header(langs));
    for (seed, r, steps) in &reports {
        let accs: String = r.per_language.iter().map(|(_, a)| format!(",{a}")).collect();
        summary.push_str(&format!("{seed}{accs},{},{steps}\n", r.average));
    }
    let (mean, std) = mean_std(&reports.iter().map(|(_, r, _)| r.average).collect::<Vec<_>>());
    write_text(&mode_dir.join("summary.csv"), &summary)?;
    let runs: Vec<Value> = reports
        .iter()
        .map(|(seed, r, steps)| json!({"seed": seed, "accuracy": r.per_language, "avg": r.average, "steps": steps}))
        .collect();
    let mut c = cfg.clone();
    c.mode = mode;
    write_json(
        &mode_dir.join("manifest.json"),
        &manifest(&c, "train", json!({"runs": runs, "avg_mean": mean, "avg_std": std})),
    )?;
    Ok(ModeResult { mode, reports })
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let task = PreparedTask::new(load_data(cfg)?);
    let r = train_mode(cfg, &task, cfg.mode)?;
    let (mean, std) = mean_std(&r.reports.iter().map(|(_, r, _)| r.average).collect::<Vec<_>>());
    println!("{}: avg target accuracy {mean:.4} ± {std:.4} over {} seeds", r.mode, r.reports.len());
    Ok(())
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<()> {
    let task = PreparedTask::new(load_data(cfg)?);
    let mut table = String::from("mode");
    for s in &cfg.seeds {
        table.push_str(&format!(",seed{s}"));
    }
    table.push_str(",mean,std\n");
    let mut results = Vec::new();
    for &mode in &cfg.modes {
        let r = train_mode(cfg, &task, mode)?;
        let avgs: Vec<f64> = r.reports.iter().map(|(_, r, _)| r.average).collect();
        let (mean, std) = mean_std(&avgs);
        table.push_str(mode.name());
        for a in &avgs {
            table.push_str(&format!(",{a}"));
        }
        table.push_str(&format!(",{mean},{std}\n"));
        println!("{:<14} {mean:.4} ± {std:.4}", mode.name());
        results.push(json!({"mode": mode, "avg_mean": mean, "avg_std": std}));
    }
    write_text(&cfg.out_dir.join("ablation.csv"), &table)?;
    write_json(&cfg.out_dir.join("ablation.manifest.json"), &manifest(cfg, "ablate", Value::Array(results)))
}

/// A checkpoint with the task re-encoded in its vocabulary.
fn load_model(data: &TaskData, path: &Path) -> Result<(ModelParams, PreparedTask)> {
    if !path.is_file() {
        return Err(CliError::Core(PcsError::Input(format!("checkpoint {} not found", path.display()))));
    }
    let ckpt = load_checkpoint(path)?;
    let words = ckpt.vocab.ok_or_else(|| {
        PcsError::Input(format!("checkpoint {} carries no vocabulary", path.display()))
    })?;
    let task = PreparedTask::with_vocab(data.clone(), Vocabulary::from_words(&words)?);
    if ckpt.params.config.num_classes != data.num_classes {
        return Err(CliError::Core(PcsError::Consistency(format!(
            "checkpoint has {} classes, task has {}",
            ckpt.params.config.num_classes, data.num_classes
        ))));
    }
    Ok((ckpt.params, task))
}

fn checkpoint_list(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    if !cfg.checkpoint.is_empty() {
        return Ok(cfg.checkpoint.split(',').map(|s| PathBuf::from(s.trim())).collect());
    }
    let mut found = Vec::new();
    if let Ok(modes) = fs::read_dir(&cfg.out_dir) {
        for m in modes.flatten() {
            if let Ok(seeds) = fs::read_dir(m.path()) {
                for s in seeds.flatten() {
                    let p = s.path().join("final.ckpt");
                    if p.is_file() {
                        found.push(p);
                    }
                }
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::Core(PcsError::Input(format!(
            "no checkpoint given and none found under {}",
            cfg.out_dir.display()
        ))));
    }
    Ok(found)
}

pub fn eval(cfg: &ExperimentConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let paths = checkpoint_list(cfg)?;
    let mut csv = format!("model{},avg\n", report_header(&data.target_langs));
    let width = paths.iter().map(|p| p.display().to_string().len()).max().unwrap_or(5).max(5);
    let mut header = format!("{:<width$}", "model");
    for l in &data.target_langs {
        header.push_str(&format!(" {l:>7}"));
    }
    println!("{header} {:>7}", "Avg");
    for path in &paths {
        let (params, task) = load_model(&data, path)?;
        let r = evaluate(&params, &task.tests, Default::default())?;
        let mut line = format!("{:<width$}", path.display());
        csv.push_str(&path.display().to_string());
        for (_, a) in &r.per_language {
            line.push_str(&format!(" {:>7.4}", a));
            csv.push_str(&format!(",{a}"));
        }
        println!("{line} {:>7.4}", r.average);
        csv.push_str(&format!(",{}\n", r.average));
    }
    write_text(&cfg.out_dir.join("eval.csv"), &csv)
}

pub fn export(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.checkpoint.is_empty() {
        return Err(CliError::Config("export needs --checkpoint".into()));
    }
    let data = load_data(cfg)?;
    let path = PathBuf::from(&cfg.checkpoint);
    let (params, task) = load_model(&data, &path)?;
    let dir = cfg.out_dir.join("export");
    mkdir(&dir)?;

    let rows = export_similarity(&params, &task.vocab, &dictionary_pairs(&task));
    write_similarity_csv(&dir.join("similarity.csv"), &rows)?;
    let mean_similarity = mean_dictionary_similarity(&rows);

    let mut sentences = Vec::new();
    if let Some(src) = &task.data.source_test {
        let lang = &task.data.source_lang;
        sentences.extend(src.iter().map(|e| (lang.clone(), task.vocab.encode(&e.sentence))));
    }
    for (lang, set) in &task.tests {
        sentences.extend(set.iter().map(|s| (lang.clone(), s.tokens.clone())));
    }
    export_embeddings(&params, &sentences, &dir.join("embeddings.csv"))?;

    let mut curves = Vec::new();
    for mode in TrainMode::ALL {
        let mode_dir = cfg.out_dir.join(mode.name());
        let runs = cfg
            .seeds
            .iter()
            .map(|s| mode_dir.join(format!("seed{s}")).join("metrics.csv"))
            .filter(|p| p.is_file())
            .map(|p| read_metrics_csv(&p))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if !runs.is_empty() {
            let file = format!("curve-{mode}.csv");
            write_learning_curve_csv(&dir.join(&file), &aggregate_learning_curves(&runs))?;
            curves.push(json!({"mode": mode, "runs": runs.len(), "file": file}));
        }
    }
    info!(
        "exported {} similarity pairs, {} sentence vectors, {} learning curves to {}",
        rows.len(),
        sentences.len(),
        curves.len(),
        dir.display()
    );
    write_json(
        &dir.join("manifest.json"),
        &manifest(
            cfg,
            "export",
            json!({"mean_similarity": mean_similarity, "pairs": rows.len(), "sentences": sentences.len(), "curves": curves}),
        ),
    )
}
