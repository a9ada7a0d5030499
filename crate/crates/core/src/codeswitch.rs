//! Code-switcher: replaces the least relevant dictionary-covered words of a
//! sentence with translations, the temperature setting how many.

use crate::corpus::{BilingualLexicon, LabeledExample};
use crate::error::{PcsError, Result};
use crate::numerics::RngStream;
use crate::par::Exec;
use crate::relevance::{rank_ascending, RelevanceProfile};

/// Temperature, target languages and their dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPolicy {
    temperature: f64,
    lexicons: Vec<BilingualLexicon>,
    single_target: bool,
}

impl SwitchPolicy {
    /// One dictionary per target language. With `single_target`, only the
    /// first language is ever used.
    pub fn new(temperature: f64, lexicons: Vec<BilingualLexicon>, single_target: bool) -> Result<Self> {
        check_temperature(temperature)?;
        if lexicons.is_empty() {
            return Err(PcsError::Config("code-switching needs at least one target language".into()));
        }
        for (i, lex) in lexicons.iter().enumerate() {
            if lexicons[..i].iter().any(|l| l.tgt_lang == lex.tgt_lang) {
                return Err(PcsError::Config(format!("duplicate target language {}", lex.tgt_lang)));
            }
        }
        Ok(SwitchPolicy {
            temperature,
            lexicons,
            single_target,
        })
    }

    /// Builds a policy for `languages`, failing if any lacks a dictionary.
    pub fn for_languages(
        temperature: f64,
        languages: &[String],
        available: &[BilingualLexicon],
        single_target: bool,
    ) -> Result<Self> {
        let lexicons = languages
            .iter()
            .map(|lang| {
                available
                    .iter()
                    .find(|l| &l.tgt_lang == lang)
                    .cloned()
                    .ok_or_else(|| PcsError::Config(format!("no dictionary for target language {lang}")))
            })
            .collect::<Result<Vec<_>>>()?;
        SwitchPolicy::new(temperature, lexicons, single_target)
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(SwitchPolicy {
            temperature,
            ..self.clone()
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Languages a word may be switched into.
    pub fn active_lexicons(&self) -> &[BilingualLexicon] {
        if self.single_target {
            &self.lexicons[..1]
        } else {
            &self.lexicons
        }
    }

    pub fn languages(&self) -> Vec<String> {
        self.active_lexicons().iter().map(|l| l.tgt_lang.clone()).collect()
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(PcsError::Domain(format!("temperature {t} outside [0, 1]")))
    }
}

/// A code-switched copy of a source example.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedExample {
    pub example: LabeledExample,
    /// Replaced token positions, in replacement (ascending relevance) order.
    pub replaced: Vec<usize>,
}

/// Positions whose token has an entry in at least one active dictionary.
pub fn eligible_indices(example: &LabeledExample, policy: &SwitchPolicy) -> Vec<usize> {
    let lex = policy.active_lexicons();
    example
        .sentence
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| lex.iter().any(|l| l.covers(t)))
        .map(|(i, _)| i)
        .collect()
}

/// `round(τ · eligible)` with halves rounded up, capped at `eligible`.
pub fn replacement_count(temperature: f64, eligible: usize) -> usize {
    // The slack absorbs representation error in products like 0.3 · 5.
    let n = (temperature * eligible as f64 + 0.5 + 1e-9).floor() as usize;
    n.min(eligible)
}

fn switch_at(
    example: &LabeledExample,
    profile: &RelevanceProfile,
    policy: &SwitchPolicy,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<SwitchedExample> {
    if profile.scores.len() != example.sentence.len() {
        return Err(PcsError::Consistency(format!(
            "example {} has {} tokens but its profile has {} scores",
            example.id,
            example.sentence.len(),
            profile.scores.len()
        )));
    }
    let eligible = eligible_indices(example, policy);
    let n = replacement_count(temperature, eligible.len());
    let mut order = rank_ascending(profile, &eligible);
    order.truncate(n);

    let lexicons = policy.active_lexicons();
    let mut out = example.clone();
    for &i in &order {
        let word = &example.sentence.tokens[i];
        let covering: Vec<&BilingualLexicon> = lexicons.iter().filter(|l| l.covers(word)).collect();
        let lex = covering[rng.below(covering.len())];
        let candidates = lex.translations(word).expect("covering lexicon has the word");
        out.sentence.tokens[i] = candidates[rng.below(candidates.len())].clone();
        out.sentence.langs[i] = lex.tgt_lang.clone();
    }
    Ok(SwitchedExample {
        example: out,
        replaced: order,
    })
}

/// Replaces the `round(τ·|eligible|)` least relevant eligible words. Each
/// gets a language drawn uniformly among dictionaries covering it, then a
/// translation drawn uniformly from that dictionary's candidates.
pub fn switch(
    example: &LabeledExample,
    profile: &RelevanceProfile,
    policy: &SwitchPolicy,
    rng: &mut RngStream,
) -> Result<SwitchedExample> {
    switch_at(example, profile, policy, policy.temperature, rng)
}

fn check_profiles(dataset: &[LabeledExample], profiles: &[RelevanceProfile]) -> Result<()> {
    if dataset.len() != profiles.len() {
        return Err(PcsError::Consistency(format!(
            "{} examples but {} profiles",
            dataset.len(),
            profiles.len()
        )));
    }
    if let Some((ex, _)) = dataset
        .iter()
        .zip(profiles)
        .find(|(e, p)| e.id != p.example_id)
    {
        return Err(PcsError::Consistency(format!(
            "profile order does not match dataset at example {}",
            ex.id
        )));
    }
    Ok(())
}

/// Code-switches every example at the policy temperature. Example `id`
/// draws from `rng.split(stage).split(id)`, so the output depends only on
/// the seed, the temperature and the stage id.
pub fn generate_stage_dataset(
    dataset: &[LabeledExample],
    profiles: &[RelevanceProfile],
    policy: &SwitchPolicy,
    rng: &RngStream,
    stage: u64,
    exec: Exec,
) -> Result<Vec<SwitchedExample>> {
    check_profiles(dataset, profiles)?;
    let stage_rng = rng.split(stage);
    exec.try_map(dataset, |i, ex| {
        let mut r = stage_rng.split(ex.id as u64);
        switch(ex, &profiles[i], policy, &mut r)
    })
}

/// Random code-switching: every example draws its own temperature uniformly
/// from `[0, 1]`. Used by the curriculum-free baseline, regenerated per epoch.
pub fn generate_random_cs_dataset(
    dataset: &[LabeledExample],
    profiles: &[RelevanceProfile],
    policy: &SwitchPolicy,
    rng: &RngStream,
    epoch: u64,
    exec: Exec,
) -> Result<Vec<SwitchedExample>> {
    check_profiles(dataset, profiles)?;
    let epoch_rng = rng.split_named("random-cs").split(epoch);
    exec.try_map(dataset, |i, ex| {
        let mut r = epoch_rng.split(ex.id as u64);
        let t = r.uniform_range(0.0, 1.0);
        switch_at(ex, &profiles[i], policy, t, &mut r)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Sentence};
    use crate::relevance::{MeasurerKind, Reduction};

    fn example(text: &str) -> LabeledExample {
        LabeledExample {
            id: 0,
            sentence: Sentence::monolingual(tokenize(text), "en"),
            label: 1,
        }
    }

    fn profile(scores: &[f64]) -> RelevanceProfile {
        RelevanceProfile {
            example_id: 0,
            class: 1,
            reduction: Reduction::SumAbs,
            measurer: MeasurerKind::Lrp,
            scores: scores.to_vec(),
        }
    }

    fn fr() -> BilingualLexicon {
        let mut l = BilingualLexicon::new("en", "fr");
        for (s, t) in [
            ("all", "tous"),
            ("the", "les"),
            ("services", "services§fr"),
            ("were", "étaient"),
            ("great", "excellents"),
        ] {
            l.insert(s, t);
        }
        l
    }

    #[test]
    fn eligibility() {
        let ex = example("all the services");
        let empty = SwitchPolicy::new(0.5, vec![BilingualLexicon::new("en", "fr")], false).unwrap();
        assert!(eligible_indices(&ex, &empty).is_empty());
        let mut partial = BilingualLexicon::new("en", "fr");
        partial.insert("the", "les");
        partial.insert("services", "services§fr");
        let pol = SwitchPolicy::new(0.5, vec![partial], false).unwrap();
        assert_eq!(eligible_indices(&ex, &pol), [1, 2]);
        let full = SwitchPolicy::new(0.5, vec![fr()], false).unwrap();
        assert_eq!(eligible_indices(&ex, &full), [0, 1, 2]);
    }

    #[test]
    fn zero_temperature_is_identity() {
        let ex = example("all the services were great");
        let pol = SwitchPolicy::new(0.0, vec![fr()], false).unwrap();
        let out = switch(&ex, &profile(&[0.3, 0.01, 0.9, 0.2, 0.95]), &pol, &mut RngStream::new(1)).unwrap();
        assert_eq!(out.example, ex);
        assert!(out.replaced.is_empty());
    }

    #[test]
    fn full_temperature_replaces_everything_eligible() {
        let ex = example("all the services were great");
        let pol = SwitchPolicy::new(1.0, vec![fr()], false).unwrap();
        let out = switch(&ex, &profile(&[0.3, 0.01, 0.9, 0.2, 0.95]), &pol, &mut RngStream::new(1)).unwrap();
        assert_eq!(out.replaced.len(), 5);
        assert!(out.example.sentence.langs.iter().all(|l| l == "fr"));
        assert_eq!(out.example.label, ex.label);
    }

    #[test]
    fn least_relevant_word_goes_first() {
        let ex = example("All the services were great.");
        let pol = SwitchPolicy::new(0.1, vec![fr()], false).unwrap();
        let out = switch(&ex, &profile(&[0.3, 0.01, 0.9, 0.2, 0.95]), &pol, &mut RngStream::new(1)).unwrap();
        assert_eq!(out.example.sentence.text(), "all les services were great");
        assert_eq!(out.example.sentence.langs, ["en", "fr", "en", "en", "en"]);
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(replacement_count(0.5, 3), 2);
        assert_eq!(replacement_count(0.3, 5), 2);
        assert_eq!(replacement_count(0.1, 4), 0);
        assert_eq!(replacement_count(1.0, 7), 7);
        assert_eq!(replacement_count(0.0, 7), 0);
    }

    #[test]
    fn profile_length_mismatch() {
        let ex = example("all the");
        let pol = SwitchPolicy::new(0.5, vec![fr()], false).unwrap();
        assert!(matches!(
            switch(&ex, &profile(&[0.1]), &pol, &mut RngStream::new(0)),
            Err(PcsError::Consistency(_))
        ));
    }

    #[test]
    fn single_target_uses_first_language_only() {
        let mut de = BilingualLexicon::new("en", "de");
        de.insert("the", "die");
        de.insert("great", "toll");
        let pol = SwitchPolicy::new(1.0, vec![fr(), de], true).unwrap();
        assert_eq!(pol.languages(), ["fr"]);
        let ex = example("the great");
        for seed in 0..20 {
            let out = switch(&ex, &profile(&[0.1, 0.2]), &pol, &mut RngStream::new(seed)).unwrap();
            assert!(out.example.sentence.langs.iter().all(|l| l == "fr"));
        }
    }

    #[test]
    fn language_and_translation_draws_cover_all_options() {
        let mut de = BilingualLexicon::new("en", "de");
        de.insert("bank", "bank§de");
        let mut f = BilingualLexicon::new("en", "fr");
        f.insert("bank", "banque");
        f.insert("bank", "rive");
        let pol = SwitchPolicy::new(1.0, vec![f, de], false).unwrap();
        let ex = example("bank");
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200 {
            let out = switch(&ex, &profile(&[0.5]), &pol, &mut RngStream::new(seed)).unwrap();
            seen.insert(out.example.sentence.tokens[0].clone());
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn temperature_validated_and_missing_dictionary_rejected() {
        assert!(SwitchPolicy::new(1.5, vec![fr()], false).is_err());
        assert!(SwitchPolicy::new(0.5, vec![], false).is_err());
        assert!(SwitchPolicy::for_languages(0.5, &["de".into()], &[fr()], false).is_err());
    }
}
