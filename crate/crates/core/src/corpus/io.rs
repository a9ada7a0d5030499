use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{tokenize, BilingualLexicon, LabeledExample, Sentence};
use crate::error::{PcsError, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PcsError::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| PcsError::io(path, e))
}

/// Parses `label<TAB>text` lines. A first line whose label column reads
/// `label` is treated as a header. Blank lines are skipped; ids count the
/// examples in file order.
pub fn parse_dataset(
    text: &str,
    path: &Path,
    num_classes: Option<usize>,
    max_len: usize,
    lang: &str,
) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let Some((label_field, text)) = line.split_once('\t') else {
            return Err(PcsError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "expected `label<TAB>text`".into(),
            });
        };
        let label_field = label_field.trim();
        if idx == 0 && label_field.eq_ignore_ascii_case("label") {
            continue;
        }
        let label = label_field
            .parse::<usize>()
            .ok()
            .filter(|&l| num_classes.is_none_or(|c| l < c))
            .ok_or_else(|| PcsError::Label {
                path: path.to_path_buf(),
                line: line_no,
                label: label_field.to_string(),
            })?;
        // Stage dumps carry a third column of language tags.
        let (text, tags) = match text.split_once('\t') {
            Some((t, tags)) => (t, Some(tags)),
            None => (text, None),
        };
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(PcsError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "no tokens in text".into(),
            });
        }
        let mut sentence = match tags {
            Some(tags) => {
                let langs: Vec<String> = tags.split_whitespace().map(str::to_string).collect();
                if langs.len() != tokens.len() {
                    return Err(PcsError::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!("{} tokens but {} language tags", tokens.len(), langs.len()),
                    });
                }
                Sentence { tokens, langs }
            }
            None => Sentence::monolingual(tokens, lang),
        };
        sentence.truncate(max_len);
        out.push(LabeledExample {
            id: out.len(),
            sentence,
            label,
        });
    }
    Ok(out)
}

pub fn load_dataset(
    path: &Path,
    num_classes: Option<usize>,
    max_len: usize,
    lang: &str,
) -> Result<Vec<LabeledExample>> {
    parse_dataset(&read(path)?, path, num_classes, max_len, lang)
}

pub fn save_dataset(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&format!("{}\t{}\n", ex.label, ex.sentence.text()));
    }
    write(path, &s)
}

/// Like [`save_dataset`] with a third column of per-token language tags.
pub fn save_stage_dataset(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&format!(
            "{}\t{}\t{}\n",
            ex.label,
            ex.sentence.text(),
            ex.sentence.langs.join(" ")
        ));
    }
    write(path, &s)
}

/// Parses MUSE dictionary lines (`source target`, space or tab separated).
pub fn parse_muse_lexicon(text: &str, path: &Path, src_lang: &str, tgt_lang: &str) -> Result<BilingualLexicon> {
    let mut lex = BilingualLexicon::new(src_lang, tgt_lang);
    for (idx, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [src, tgt] => lex.insert(src, tgt),
            _ => {
                return Err(PcsError::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: format!("expected 2 fields, found {}", fields.len()),
                })
            }
        }
    }
    if lex.is_empty() {
        log::warn!("{}: empty {src_lang}-{tgt_lang} dictionary", path.display());
    }
    Ok(lex)
}

pub fn load_muse_lexicon(path: &Path, src_lang: &str, tgt_lang: &str) -> Result<BilingualLexicon> {
    parse_muse_lexicon(&read(path)?, path, src_lang, tgt_lang)
}

pub fn save_lexicon(path: &Path, lex: &BilingualLexicon) -> Result<()> {
    let mut s = String::new();
    for (src, tgt) in lex.pairs() {
        s.push_str(&format!("{src} {tgt}\n"));
    }
    write(path, &s)
}

/// A task directory loaded into memory: source train/dev, per-language test
/// sets and one dictionary per target language.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub source_lang: String,
    pub target_langs: Vec<String>,
    pub num_classes: usize,
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    /// Target-language test sets in `target_langs` order.
    pub tests: Vec<(String, Vec<LabeledExample>)>,
    pub source_test: Option<Vec<LabeledExample>>,
    pub lexicons: Vec<BilingualLexicon>,
}

impl TaskData {
    pub fn lexicon(&self, lang: &str) -> Option<&BilingualLexicon> {
        self.lexicons.iter().find(|l| l.tgt_lang == lang)
    }
}

#[derive(Deserialize)]
struct ManifestLangs {
    source_lang: String,
    target_langs: Vec<String>,
    num_classes: usize,
}

fn task_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(PcsError::io(
            &p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing task file"),
        ))
    }
}

/// Loads a directory written by [`super::write_synthetic_task`] or laid out
/// the same way by hand.
pub fn load_task_dir(dir: &Path, max_len: usize) -> Result<TaskData> {
    let manifest_path = task_file(dir, "manifest.json")?;
    let m: ManifestLangs = serde_json::from_str(&read(&manifest_path)?)?;
    let c = Some(m.num_classes);
    let src = m.source_lang.as_str();
    let train = load_dataset(&task_file(dir, "train.tsv")?, c, max_len, src)?;
    let dev = load_dataset(&task_file(dir, "dev.tsv")?, c, max_len, src)?;
    let mut tests = Vec::new();
    let mut lexicons = Vec::new();
    for lang in &m.target_langs {
        let path = task_file(dir, &format!("test.{lang}.tsv"))?;
        tests.push((lang.clone(), load_dataset(&path, c, max_len, lang)?));
        let path = task_file(dir, &format!("dict.{src}-{lang}.txt"))?;
        lexicons.push(load_muse_lexicon(&path, src, lang)?);
    }
    let source_test_path = dir.join(format!("test.{src}.tsv"));
    let source_test = if source_test_path.is_file() {
        Some(load_dataset(&source_test_path, c, max_len, src)?)
    } else {
        None
    };
    Ok(TaskData {
        source_lang: m.source_lang,
        target_langs: m.target_langs,
        num_classes: m.num_classes,
        train,
        dev,
        tests,
        source_test,
        lexicons,
    })
}
