//! CSV and JSON-lines outputs for metrics, traces, word-pair similarity,
//! sentence embeddings and seed-aggregated learning curves.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{MetricsRow, PreparedTask, TraceRecord};
use crate::corpus::{Vocabulary, UNK_ID};
use crate::error::{PcsError, Result};
use crate::model::{pooled_embedding, ModelParams};
use crate::numerics::cosine;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PcsError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PcsError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| PcsError::io(path, e))
}

/// `step,stage,tau,train_loss,val_loss,acc_<lang>...,avg`
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| PcsError::io(path, e);
    let langs: Vec<&str> = rows
        .first()
        .map(|r| r.accuracies.iter().map(|(l, _)| l.as_str()).collect())
        .unwrap_or_default();
    write!(w, "step,stage,tau,train_loss,val_loss").map_err(io)?;
    for l in &langs {
        write!(w, ",acc_{l}").map_err(io)?;
    }
    writeln!(w, ",avg").map_err(io)?;
    for r in rows {
        write!(w, "{},{},{},{},{}", r.step, r.stage, r.tau, r.train_loss, r.val_loss).map_err(io)?;
        for (_, a) in &r.accuracies {
            write!(w, ",{a}").map_err(io)?;
        }
        writeln!(w, ",{}", r.mean_target_accuracy).map_err(io)?;
    }
    finish(w, path)
}

/// Reads a file written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| PcsError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| PcsError::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        message,
    };
    let (_, header) = lines.next().ok_or_else(|| parse_err(0, "empty metrics file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[..5] != ["step", "stage", "tau", "train_loss", "val_loss"] || cols[cols.len() - 1] != "avg" {
        return Err(parse_err(0, format!("unexpected header `{header}`")));
    }
    let langs: Vec<String> = cols[5..cols.len() - 1]
        .iter()
        .map(|c| c.strip_prefix("acc_").unwrap_or(c).to_string())
        .collect();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != cols.len() {
                return Err(parse_err(n, format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| parse_err(n, format!("column {}: {e}", cols[i])));
            let int = |i: usize| f[i].parse::<usize>().map_err(|e| parse_err(n, format!("column {}: {e}", cols[i])));
            Ok(MetricsRow {
                step: int(0)?,
                stage: int(1)?,
                tau: num(2)?,
                train_loss: num(3)?,
                val_loss: num(4)?,
                accuracies: langs
                    .iter()
                    .enumerate()
                    .map(|(j, lang)| Ok((lang.clone(), num(5 + j)?)))
                    .collect::<Result<Vec<_>>>()?,
                mean_target_accuracy: num(f.len() - 1)?,
            })
        })
        .collect()
}

pub fn write_trace_jsonl(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| PcsError::io(path, e))?;
    }
    finish(w, path)
}

/// Every `(source word, translation)` pair of every dictionary in the task.
pub fn dictionary_pairs(task: &PreparedTask) -> Vec<(String, String)> {
    task.data
        .lexicons
        .iter()
        .flat_map(|lex| lex.pairs().map(|(s, t)| (s.to_string(), t.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityRow {
    pub source: String,
    pub target: String,
    /// False when either word maps to `<unk>`.
    pub known: bool,
    pub cosine: f64,
}

/// Cosine similarity of the token embeddings of each word pair.
pub fn export_similarity(
    params: &ModelParams,
    vocab: &Vocabulary,
    pairs: &[(String, String)],
) -> Vec<SimilarityRow> {
    let row = |w: &str| params.token_embed.row(vocab.id(w).min(params.token_embed.rows() - 1));
    pairs
        .iter()
        .map(|(s, t)| SimilarityRow {
            source: s.clone(),
            target: t.clone(),
            known: vocab.id(s) != UNK_ID && vocab.id(t) != UNK_ID,
            cosine: cosine(row(s), row(t)),
        })
        .collect()
}

/// Mean cosine over the in-vocabulary rows; `None` if there are none.
pub fn mean_dictionary_similarity(rows: &[SimilarityRow]) -> Option<f64> {
    let known: Vec<f64> = rows.iter().filter(|r| r.known).map(|r| r.cosine).collect();
    (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64)
}

pub fn write_similarity_csv(path: &Path, rows: &[SimilarityRow]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| PcsError::io(path, e);
    writeln!(w, "source,target,known,cosine").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.source, r.target, r.known, r.cosine).map_err(io)?;
    }
    finish(w, path)
}

/// Writes one row per sentence: its label followed by the pooled vector.
pub fn export_embeddings(params: &ModelParams, sentences: &[(String, Vec<usize>)], path: &Path) -> Result<()> {
    let d = params.config.embed_dim;
    let vectors = sentences
        .iter()
        .map(|(_, tokens)| pooled_embedding(params, tokens))
        .collect::<Result<Vec<_>>>()?;
    let mut w = create(path)?;
    let io = |e| PcsError::io(path, e);
    write!(w, "lang").map_err(io)?;
    for j in 0..d {
        write!(w, ",e{j}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for ((label, _), v) in sentences.iter().zip(&vectors) {
        write!(w, "{label}").map_err(io)?;
        for x in v {
            write!(w, ",{x}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    finish(w, path)
}

/// Mean target accuracy at one evaluation step across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub runs: usize,
}

/// Aligns runs on the union of their evaluation steps. A run that stopped
/// early contributes its last accuracy to later steps.
pub fn aggregate_learning_curves(runs: &[Vec<MetricsRow>]) -> Vec<CurvePoint> {
    let mut steps: Vec<usize> = runs.iter().flatten().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|rows| {
                    rows.iter()
                        .take_while(|r| r.step <= step)
                        .last()
                        .map(|r| r.mean_target_accuracy)
                })
                .collect();
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            CurvePoint {
                step,
                mean,
                std,
                runs: n,
            }
        })
        .collect()
}

pub fn write_learning_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| PcsError::io(path, e);
    writeln!(w, "step,mean,std,runs").map_err(io)?;
    for p in curve {
        writeln!(w, "{},{},{},{}", p.step, p.mean, p.std, p.runs).map_err(io)?;
    }
    finish(w, path)
}

/// First step at which the curve's mean reaches `threshold`.
pub fn steps_to_reach(curve: &[CurvePoint], threshold: f64) -> Option<usize> {
    curve.iter().find(|p| p.mean >= threshold).map(|p| p.step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::Matrix;

    fn row(step: usize, acc: f64) -> MetricsRow {
        MetricsRow {
            step,
            stage: 1,
            tau: 0.0,
            train_loss: 0.5,
            val_loss: 0.5,
            accuracies: vec![("de".into(), acc)],
            mean_target_accuracy: acc,
        }
    }

    fn params_with(rows: Vec<Vec<f64>>) -> (ModelParams, Vocabulary) {
        let mut cfg = ModelConfig::new(rows.len() + 2, 2);
        cfg.embed_dim = rows[0].len();
        cfg.num_heads = 1;
        let mut p = ModelParams::zeros(&cfg).unwrap();
        let mut all = vec![vec![0.0; cfg.embed_dim]; 2];
        all.extend(rows);
        p.token_embed = Matrix::from_rows(&all).unwrap();
        let mut vocab = Vocabulary::new();
        for i in 0..all.len() - 2 {
            vocab.insert(&format!("w{i}"));
        }
        (p, vocab)
    }

    #[test]
    fn similarity_oracles() {
        let (p, v) = params_with(vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 0.0]]);
        let pairs = vec![
            ("w0".to_string(), "w0".to_string()),
            ("w0".to_string(), "w1".to_string()),
            ("w0".to_string(), "w2".to_string()),
            ("w0".to_string(), "nope".to_string()),
        ];
        let rows = export_similarity(&p, &v, &pairs);
        assert!((rows[0].cosine - 1.0).abs() < 1e-12);
        assert!(rows[1].cosine.abs() < 1e-12);
        assert!((rows[2].cosine - 1.0).abs() < 1e-12);
        assert!(!rows[3].known);
        assert!((mean_dictionary_similarity(&rows).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn embeddings_have_label_plus_d_columns() {
        let (p, _) = params_with(vec![vec![1.0, 0.5, 0.0], vec![0.0, 3.0, 1.0]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let sents = vec![
            ("en".to_string(), vec![2, 3]),
            ("de".to_string(), vec![3]),
            ("de".to_string(), vec![3]),
        ];
        export_embeddings(&p, &sents, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 4));
        assert_eq!(lines[2].split_once(',').unwrap().1, lines[3].split_once(',').unwrap().1);
    }

    #[test]
    fn learning_curve_carries_last_value() {
        let runs = vec![
            vec![row(10, 0.5), row(20, 0.7), row(30, 0.9)],
            vec![row(10, 0.7), row(20, 0.9)],
        ];
        let c = aggregate_learning_curves(&runs);
        assert_eq!(c.len(), 3);
        assert!((c[0].mean - 0.6).abs() < 1e-12);
        assert!((c[0].std - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((c[2].mean - 0.9).abs() < 1e-12);
        assert_eq!(c[2].std, 0.0);
        assert_eq!(steps_to_reach(&c, 0.8), Some(20));
        assert_eq!(steps_to_reach(&c, 0.95), None);
    }

    #[test]
    fn metrics_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics_csv(&path, &[row(10, 0.5)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,stage,tau,train_loss,val_loss,acc_de,avg\n10,1,0,0.5,0.5,0.5,0.5\n");
        assert_eq!(read_metrics_csv(&path).unwrap(), vec![row(10, 0.5)]);
    }
}
