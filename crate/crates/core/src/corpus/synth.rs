//! Synthetic multilingual classification benchmark.
//!
//! An abstract lexicon holds class-keyed content words, which carry the
//! label, and function words that appear in every class. Language `ℓ`
//! realizes abstract word `w` as the surface form `w§ℓ`, so vocabularies
//! of different languages never overlap and a source-only model has no
//! way to read target sentences. Exact dictionaries link the source to
//! every target; with probability `p_poly` an abstract word also gets a
//! second target synonym `wb§ℓ`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{save_dataset, save_lexicon, TaskData};
use super::{BilingualLexicon, LabeledExample, Sentence};
use crate::error::{PcsError, Result};
use crate::numerics::RngStream;

const TARGET_CODES: [&str; 8] = ["de", "fr", "es", "it", "ja", "ru", "zh", "ko"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Source plus targets.
    pub num_languages: usize,
    /// Abstract words (content plus function) per language.
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
    /// Chance that a sentence carries one content word of another class.
    pub distractor_prob: f64,
    pub p_poly: f64,
    /// Chance that a function word gets a dictionary entry.
    pub function_coverage: f64,
    pub source_lang: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_languages: 3,
            vocab_per_lang: 60,
            function_fraction: 0.3,
            num_train: 2000,
            num_dev: 200,
            num_test: 500,
            num_classes: 2,
            min_len: 6,
            max_len: 12,
            min_content: 2,
            max_content: 4,
            distractor_prob: 0.2,
            p_poly: 0.1,
            function_coverage: 1.0,
            source_lang: "en".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PcsError::Config(m));
        if self.num_languages < 2 {
            return bad("num_languages must be >= 2 (source plus a target)".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2".into());
        }
        if self.num_train == 0 || self.num_dev == 0 || self.num_test == 0 {
            return bad("dataset sizes must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.function_fraction) {
            return bad("function_fraction must lie in [0, 1)".into());
        }
        let (f, per_class) = self.word_counts();
        if f == 0 || per_class == 0 {
            return bad(format!(
                "vocab_per_lang {} too small for {} classes",
                self.vocab_per_lang, self.num_classes
            ));
        }
        if self.min_content == 0 || self.min_content > self.max_content {
            return bad("need 1 <= min_content <= max_content".into());
        }
        if self.min_len < self.max_content + 1 || self.min_len > self.max_len {
            return bad("need max_content < min_len <= max_len".into());
        }
        for (name, p) in [
            ("distractor_prob", self.distractor_prob),
            ("p_poly", self.p_poly),
            ("function_coverage", self.function_coverage),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// (function words, content words per class).
    fn word_counts(&self) -> (usize, usize) {
        let f = ((self.vocab_per_lang as f64) * self.function_fraction).round() as usize;
        let f = f.max(1).min(self.vocab_per_lang);
        (f, (self.vocab_per_lang - f) / self.num_classes.max(1))
    }

    pub fn target_langs(&self) -> Vec<String> {
        (0..self.num_languages - 1)
            .map(|i| match TARGET_CODES.get(i) {
                Some(c) if *c != self.source_lang => c.to_string(),
                _ => format!("t{i}"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Content(usize),
    Function,
}

#[derive(Debug, Clone)]
struct AbstractWord {
    name: String,
    kind: Kind,
}

/// A generated task plus the ground truth about which words carry labels.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: SynthConfig,
    pub seed: u64,
    pub data: TaskData,
    content_surfaces: HashMap<String, usize>,
    function_surfaces: HashSet<String>,
}

impl SyntheticTask {
    /// Whether `surface` realizes a label-carrying content word.
    pub fn is_content(&self, surface: &str) -> bool {
        self.content_surfaces.contains_key(surface)
    }

    /// Class signalled by a content word, `None` for anything else.
    pub fn content_class(&self, surface: &str) -> Option<usize> {
        self.content_surfaces.get(surface).copied()
    }

    pub fn is_function(&self, surface: &str) -> bool {
        self.function_surfaces.contains(surface)
    }
}

fn surface(word: &str, lang: &str) -> String {
    format!("{word}§{lang}")
}

fn synonym(word: &str, lang: &str) -> String {
    format!("{word}b§{lang}")
}

/// Abstract sentence for `label`: content words of that class, an optional
/// distractor from another class, function-word filler, shuffled.
fn abstract_sentence(
    cfg: &SynthConfig,
    label: usize,
    content: &[Vec<usize>],
    function: &[usize],
    rng: &mut RngStream,
) -> Vec<usize> {
    let len = rng.range_inclusive(cfg.min_len, cfg.max_len);
    let n_content = rng.range_inclusive(cfg.min_content, cfg.max_content);
    let mut words: Vec<usize> = (0..n_content)
        .map(|_| *rng.choose(&content[label]).expect("non-empty class"))
        .collect();
    if n_content >= 2 && rng.bernoulli(cfg.distractor_prob) {
        let other = (label + 1 + rng.below(cfg.num_classes - 1)) % cfg.num_classes;
        words.push(*rng.choose(&content[other]).expect("non-empty class"));
    }
    while words.len() < len {
        words.push(*rng.choose(function).expect("function words exist"));
    }
    rng.shuffle(&mut words);
    words
}

pub fn generate_synthetic_task(config: &SynthConfig, seed: u64) -> Result<SyntheticTask> {
    config.validate()?;
    let root = RngStream::new(seed);
    let (n_function, per_class) = config.word_counts();
    let mut lexicon = Vec::new();
    let mut content: Vec<Vec<usize>> = vec![Vec::new(); config.num_classes];
    for c in 0..config.num_classes {
        for _ in 0..per_class {
            content[c].push(lexicon.len());
            lexicon.push(AbstractWord {
                name: format!("c{}", lexicon.len()),
                kind: Kind::Content(c),
            });
        }
    }
    let mut function = Vec::new();
    for _ in 0..n_function {
        function.push(lexicon.len());
        lexicon.push(AbstractWord {
            name: format!("f{}", lexicon.len()),
            kind: Kind::Function,
        });
    }

    let src = config.source_lang.clone();
    let targets = config.target_langs();

    // Synonyms and dictionary coverage, decided per (word, target).
    let mut dict_rng = root.split_named("dictionaries");
    let mut has_synonym = vec![vec![false; lexicon.len()]; targets.len()];
    let mut lexicons = Vec::new();
    for (ti, lang) in targets.iter().enumerate() {
        let mut lex = BilingualLexicon::new(&src, lang);
        for (wi, w) in lexicon.iter().enumerate() {
            has_synonym[ti][wi] = dict_rng.bernoulli(config.p_poly);
            let covered = match w.kind {
                Kind::Content(_) => true,
                Kind::Function => dict_rng.bernoulli(config.function_coverage),
            };
            if covered {
                lex.insert(&surface(&w.name, &src), &surface(&w.name, lang));
                if has_synonym[ti][wi] {
                    lex.insert(&surface(&w.name, &src), &synonym(&w.name, lang));
                }
            }
        }
        lexicons.push(lex);
    }

    let realize = |words: &[usize], lang_idx: Option<usize>, rng: &mut RngStream| -> Sentence {
        let (lang, tokens) = match lang_idx {
            None => (
                src.as_str(),
                words.iter().map(|&w| surface(&lexicon[w].name, &src)).collect(),
            ),
            Some(ti) => {
                let lang = targets[ti].as_str();
                let tokens = words
                    .iter()
                    .map(|&w| {
                        if has_synonym[ti][w] && rng.bernoulli(0.5) {
                            synonym(&lexicon[w].name, lang)
                        } else {
                            surface(&lexicon[w].name, lang)
                        }
                    })
                    .collect();
                (lang, tokens)
            }
        };
        Sentence::monolingual(tokens, lang)
    };

    let make_split = |name: &str, n: usize, lang_idx: Option<usize>| -> Vec<LabeledExample> {
        let mut rng = root.split_named(name);
        (0..n)
            .map(|id| {
                let label = id % config.num_classes;
                let words = abstract_sentence(config, label, &content, &function, &mut rng);
                LabeledExample {
                    id,
                    sentence: realize(&words, lang_idx, &mut rng),
                    label,
                }
            })
            .collect()
    };

    let train = make_split("train", config.num_train, None);
    let dev = make_split("dev", config.num_dev, None);
    let source_test = make_split(&format!("test.{src}"), config.num_test, None);
    let tests = targets
        .iter()
        .enumerate()
        .map(|(ti, lang)| (lang.clone(), make_split(&format!("test.{lang}"), config.num_test, Some(ti))))
        .collect();

    let mut content_surfaces = HashMap::new();
    let mut function_surfaces = HashSet::new();
    for (wi, w) in lexicon.iter().enumerate() {
        let mut forms = vec![surface(&w.name, &src)];
        for (ti, lang) in targets.iter().enumerate() {
            forms.push(surface(&w.name, lang));
            if has_synonym[ti][wi] {
                forms.push(synonym(&w.name, lang));
            }
        }
        match w.kind {
            Kind::Content(c) => content_surfaces.extend(forms.into_iter().map(|f| (f, c))),
            Kind::Function => function_surfaces.extend(forms),
        }
    }

    Ok(SyntheticTask {
        config: config.clone(),
        seed,
        data: TaskData {
            source_lang: src.clone(),
            target_langs: targets,
            num_classes: config.num_classes,
            train,
            dev,
            tests,
            source_test: Some(source_test),
            lexicons,
        },
        content_surfaces,
        function_surfaces,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    version: &'static str,
    seed: u64,
    source_lang: &'a str,
    target_langs: &'a [String],
    num_classes: usize,
    config: &'a SynthConfig,
}

/// Writes `train.tsv`, `dev.tsv`, `test.<lang>.tsv`, `dict.<src>-<tgt>.txt`
/// and `manifest.json` into `dir` (created if needed).
pub fn write_synthetic_task(task: &SyntheticTask, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PcsError::io(dir, e))?;
    let d = &task.data;
    save_dataset(&dir.join("train.tsv"), &d.train)?;
    save_dataset(&dir.join("dev.tsv"), &d.dev)?;
    if let Some(st) = &d.source_test {
        save_dataset(&dir.join(format!("test.{}.tsv", d.source_lang)), st)?;
    }
    for (lang, set) in &d.tests {
        save_dataset(&dir.join(format!("test.{lang}.tsv")), set)?;
    }
    for lex in &d.lexicons {
        save_lexicon(&dir.join(format!("dict.{}-{}.txt", lex.src_lang, lex.tgt_lang)), lex)?;
    }
    let manifest = Manifest {
        generator: "pcs synth",
        version: env!("CARGO_PKG_VERSION"),
        seed: task.seed,
        source_lang: &d.source_lang,
        target_langs: &d.target_langs,
        num_classes: d.num_classes,
        config: &task.config,
    };
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| PcsError::io(&path, e))
}
