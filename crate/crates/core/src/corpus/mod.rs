//! Sentences, vocabularies, dataset and dictionary files, and the synthetic
//! multilingual benchmark.

mod io;
mod synth;

pub use io::{
    load_dataset, load_muse_lexicon, load_task_dir, parse_dataset, parse_muse_lexicon,
    save_dataset, save_lexicon, save_stage_dataset, TaskData,
};
pub use synth::{generate_synthetic_task, write_synthetic_task, SynthConfig, SyntheticTask};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// A tokenized sentence with one language tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub langs: Vec<String>,
}

impl Sentence {
    /// All tokens tagged with the same language.
    pub fn monolingual(tokens: Vec<String>, lang: &str) -> Self {
        let langs = vec![lang.to_string(); tokens.len()];
        Sentence { tokens, langs }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn truncate(&mut self, max_len: usize) {
        self.tokens.truncate(max_len);
        self.langs.truncate(max_len);
    }
}

/// A sentence with its class label. `id` is the position in the source
/// dataset and keys per-example random streams and relevance profiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: usize,
    pub sentence: Sentence,
    pub label: usize,
}

/// Lowercases, splits on whitespace and trims punctuation from both ends of
/// each token. Internal hyphens and apostrophes survive.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Dense word ↔ id map with reserved padding and unknown ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(PAD);
        v.insert(UNK);
        v
    }

    /// Rebuilds a vocabulary from its id-ordered word list.
    pub fn from_words(words: &[String]) -> crate::Result<Self> {
        if words.len() < 2 || words[0] != PAD || words[1] != UNK {
            return Err(crate::PcsError::Input(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut v = Vocabulary::new();
        for w in &words[2..] {
            if v.index.contains_key(w) {
                return Err(crate::PcsError::Input(format!("duplicate vocabulary word `{w}`")));
            }
            v.insert(w);
        }
        Ok(v)
    }

    /// Adds `word` if absent and returns its id.
    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    /// Id of `word`, or [`UNK_ID`] when out of vocabulary.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Vocabulary over the training tokens followed by every dictionary
    /// translation, in first-seen order.
    pub fn build(examples: &[LabeledExample], lexicons: &[BilingualLexicon]) -> Self {
        let mut v = Vocabulary::new();
        for ex in examples {
            for t in &ex.sentence.tokens {
                v.insert(t);
            }
        }
        for lex in lexicons {
            for (src, tgts) in lex.entries() {
                v.insert(src);
                for t in tgts {
                    v.insert(t);
                }
            }
        }
        v
    }
}

/// Source word → candidate translations for one language pair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BilingualLexicon {
    pub src_lang: String,
    pub tgt_lang: String,
    entries: BTreeMap<String, Vec<String>>,
}

impl BilingualLexicon {
    pub fn new(src_lang: &str, tgt_lang: &str) -> Self {
        BilingualLexicon {
            src_lang: src_lang.to_string(),
            tgt_lang: tgt_lang.to_string(),
            entries: BTreeMap::new(),
        }
    }

    /// Adds a pair (lowercased). Repeated translations are ignored.
    pub fn insert(&mut self, src: &str, tgt: &str) {
        let (src, tgt) = (src.to_lowercase(), tgt.to_lowercase());
        if src.is_empty() || tgt.is_empty() {
            return;
        }
        let list = self.entries.entry(src).or_default();
        if !list.contains(&tgt) {
            list.push(tgt);
        }
    }

    pub fn translations(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn covers(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    /// Entries in source-word order.
    pub fn entries(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.entries.iter()
    }

    /// Every (source, translation) pair.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .flat_map(|(s, ts)| ts.iter().map(move |t| (s.as_str(), t.as_str())))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("All the services were great."),
            ["all", "the", "services", "were", "great"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  Hello,   WORLD!! "), ["hello", "world"]);
        assert_eq!(tokenize("don't well-known ..."), ["don't", "well-known"]);
    }

    #[test]
    fn vocabulary_reserved_ids_and_unk() {
        let mut v = Vocabulary::new();
        assert_eq!(v.id("<pad>"), PAD_ID);
        assert_eq!(v.id("<unk>"), UNK_ID);
        let a = v.insert("alpha");
        assert_eq!(a, 2);
        assert_eq!(v.insert("alpha"), 2);
        assert_eq!(v.id("missing"), UNK_ID);
        let again = Vocabulary::from_words(v.words()).unwrap();
        assert_eq!(again, v);
        assert!(Vocabulary::from_words(&["x".to_string()]).is_err());
    }

    #[test]
    fn lexicon_aggregates_in_order_without_duplicates() {
        let mut lex = BilingualLexicon::new("en", "fr");
        lex.insert("bank", "banque");
        lex.insert("Bank", "rive");
        lex.insert("bank", "banque");
        assert_eq!(lex.translations("bank").unwrap(), ["banque", "rive"]);
        assert_eq!(lex.pairs().count(), 2);
    }
}
