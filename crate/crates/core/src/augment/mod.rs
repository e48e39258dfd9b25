//! Corpus variants built from the raw splits: semi-noisy (raw training data
//! plus noise and translation samples) and fully translated English, with a
//! report that reconciles achieved class counts against reference counts.

mod noise;
mod translate;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use noise::{noise_augment, noise_id, noise_tokens, NoiseOp, NoiseSpec};
pub use translate::{
    translate_augment, translated_id, HttpConfig, HttpTranslator, OfflineMock, Translator, KEY_ENV, URL_ENV,
};

use crate::error::{Result, TlaError};
use crate::models::train::mix_seed;
use crate::text::{ClassCounts, DatasetSplit, Label, LabeledExample, Language};

/// Published class counts the corpus builders are reconciled against.
pub mod reference {
    use crate::text::{ClassCounts, Language};

    pub const RAW_TRAIN: [(Language, ClassCounts); 3] = [
        (Language::English, ClassCounts::new(3375, 453, 435)),
        (Language::Bangla, ClassCounts::new(2078, 898, 850)),
        (Language::Hindi, ClassCounts::new(2245, 829, 910)),
    ];

    pub const RAW_TEST: [(Language, ClassCounts); 3] = [
        (Language::English, ClassCounts::new(836, 117, 113)),
        (Language::Bangla, ClassCounts::new(522, 218, 217)),
        (Language::Hindi, ClassCounts::new(578, 211, 208)),
    ];

    pub const SEMI_NOISY_TRAIN: [(Language, ClassCounts); 3] = [
        (Language::English, ClassCounts::new(3375, 2251, 2546)),
        (Language::Bangla, ClassCounts::new(2078, 1959, 1966)),
        (Language::Hindi, ClassCounts::new(2245, 3497, 1810)),
    ];

    /// English training corpus translated from Bangla and Hindi.
    pub const TRANSLATED_ENGLISH_TRAIN: ClassCounts = ClassCounts::new(4373, 2156, 2185);

    /// Additions to the English training set as stated in prose, which
    /// disagree with [`SEMI_NOISY_TRAIN`] for CAG by 18 samples.
    pub const STATED_ENGLISH_ADDITIONS: ClassCounts = ClassCounts::new(0, 1798, 2093);

    pub fn lookup(table: &[(Language, ClassCounts); 3], lang: Language) -> ClassCounts {
        table.iter().find(|(l, _)| *l == lang).map(|(_, c)| *c).expect("every language is listed")
    }
}

/// Training and test split of one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSplits {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
}

pub type Corpus = BTreeMap<Language, LanguageSplits>;

/// Samples to add per language and class; test splits are never targeted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AugmentationTargets {
    pub per_language: BTreeMap<Language, ClassCounts>,
}

impl AugmentationTargets {
    /// Differences between the semi-noisy and raw reference training counts.
    pub fn reference() -> Self {
        let per_language = reference::SEMI_NOISY_TRAIN
            .iter()
            .map(|&(lang, full)| {
                let raw = reference::lookup(&reference::RAW_TRAIN, lang);
                (lang, ClassCounts::new(full.nag - raw.nag, full.oag - raw.oag, full.cag - raw.cag))
            })
            .collect();
        AugmentationTargets { per_language }
    }

    pub fn get(&self, lang: Language) -> ClassCounts {
        self.per_language.get(&lang).copied().unwrap_or_default()
    }
}

fn class_members(split: &DatasetSplit, label: Label) -> Vec<LabeledExample> {
    split.examples.iter().filter(|e| e.label == label).cloned().collect()
}

/// Candidate samples for every targeted (language, class).
///
/// The pool for a class holds the raw training examples of that class from
/// every other language translated into the target language, topped up
/// with noisy copies of the language's own examples, one seeded round at a
/// time, until it reaches the target.
pub fn build_pool(
    raw: &Corpus,
    targets: &AugmentationTargets,
    client: &dyn Translator,
    noise: &NoiseSpec,
) -> Result<Vec<LabeledExample>> {
    noise.validate()?;
    let mut pool = Vec::new();
    for (&lang, &want) in &targets.per_language {
        let own = raw
            .get(&lang)
            .ok_or_else(|| TlaError::Validation(format!("targets name {lang} but no raw corpus is loaded for it")))?;
        for label in Label::ALL {
            let need = want.get(label);
            if need == 0 {
                continue;
            }
            let mut have = 0;
            for (&src, splits) in raw.iter().filter(|(&l, _)| l != lang) {
                let translated = translate_augment(&class_members(&splits.train, label), client, src, lang)?;
                have += translated.len();
                pool.extend(translated);
            }
            let base = class_members(&own.train, label);
            let mut round = 0u64;
            while have < need && !base.is_empty() {
                let key = ((lang as u64) << 40) | ((label.index() as u64) << 32) | round;
                let spec = NoiseSpec {
                    seed: mix_seed(noise.seed, key),
                    ..noise.clone()
                };
                let noisy = noise_augment(&base, &spec)?;
                have += noisy.len();
                pool.extend(noisy);
                round += 1;
            }
        }
    }
    Ok(pool)
}

/// Adds exactly the targeted number of pool samples per class to each
/// training split; test splits are copied untouched.
///
/// Samples are drawn by a seeded shuffle of the matching pool entries.
/// Fails with [`TlaError::Validation`] listing every class whose pool is
/// short.
pub fn build_semi_noisy(
    raw: &Corpus,
    pool: &[LabeledExample],
    targets: &AugmentationTargets,
    seed: u64,
) -> Result<Corpus> {
    if let Some(l) = targets.per_language.keys().find(|l| !raw.contains_key(l)) {
        return Err(TlaError::Validation(format!("targets name {l} but no raw corpus is loaded for it")));
    }
    let mut shortfalls = Vec::new();
    let mut out = Corpus::new();
    for (&lang, splits) in raw {
        let want = targets.get(lang);
        if want.total() == 0 {
            out.insert(lang, splits.clone());
            continue;
        }
        let mut examples = splits.train.examples.clone();
        for label in Label::ALL {
            let need = want.get(label);
            if need == 0 {
                continue;
            }
            let mut candidates: Vec<&LabeledExample> =
                pool.iter().filter(|e| e.language == lang && e.label == label).collect();
            if candidates.len() < need {
                shortfalls.push(format!(
                    "{lang} {label}: need {need}, pool has {} (short by {})",
                    candidates.len(),
                    need - candidates.len()
                ));
                continue;
            }
            let key = ((lang as u64) << 8) | label.index() as u64;
            candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, key)));
            examples.extend(candidates[..need].iter().map(|e| (*e).clone()));
        }
        let train = DatasetSplit::new(format!("{}-semi-noisy-train", lang), examples);
        let expected = ClassCounts::new(
            splits.train.counts.nag + want.nag,
            splits.train.counts.oag + want.oag,
            splits.train.counts.cag + want.cag,
        );
        if shortfalls.is_empty() && train.counts != expected {
            return Err(TlaError::Validation(format!(
                "{lang} semi-noisy training split has {} instead of {expected}",
                train.counts
            )));
        }
        out.insert(
            lang,
            LanguageSplits {
                train,
                test: splits.test.clone(),
            },
        );
    }
    if !shortfalls.is_empty() {
        return Err(TlaError::Validation(format!(
            "augmentation pool is insufficient: {}",
            shortfalls.join("; ")
        )));
    }
    Ok(out)
}

/// English training corpus translated from Bangla and Hindi: NAG from the
/// training splits, OAG and CAG from training and test splits.
pub fn build_fully_translated(
    bangla: &LanguageSplits,
    hindi: &LanguageSplits,
    client: &dyn Translator,
) -> Result<DatasetSplit> {
    let mut examples = Vec::new();
    for (lang, splits) in [(Language::Bangla, bangla), (Language::Hindi, hindi)] {
        let mut source = class_members(&splits.train, Label::Nag);
        for label in [Label::Oag, Label::Cag] {
            source.extend(class_members(&splits.train, label));
            source.extend(class_members(&splits.test, label));
        }
        examples.extend(translate_augment(&source, client, lang, Language::English)?);
    }
    Ok(DatasetSplit::new("english-translated-train", examples))
}

/// Class count that `build_fully_translated` yields from raw counts.
pub fn translated_counts(bangla: &LanguageSplits, hindi: &LanguageSplits) -> ClassCounts {
    let sum = |f: fn(&LanguageSplits) -> usize| f(bangla) + f(hindi);
    ClassCounts::new(
        sum(|s| s.train.counts.nag),
        sum(|s| s.train.counts.oag + s.test.counts.oag),
        sum(|s| s.train.counts.cag + s.test.counts.cag),
    )
}

/// One achieved class count against its reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCheck {
    pub corpus: String,
    pub language: Language,
    pub split: String,
    pub label: Label,
    pub reference: usize,
    pub achieved: usize,
    pub delta: i64,
}

/// Two published figures for the same count that disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub corpus: String,
    pub language: Language,
    pub label: Label,
    pub reference: usize,
    pub derived: usize,
    pub gap: i64,
    pub explanation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconciliationReport {
    pub checks: Vec<CountCheck>,
    pub discrepancies: Vec<Discrepancy>,
    /// Achieved counts per corpus, language, split and provenance.
    pub provenance: Vec<ProvenanceCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceCount {
    pub corpus: String,
    pub language: Language,
    pub split: String,
    pub provenance: crate::text::Provenance,
    pub counts: ClassCounts,
}

fn push_checks(
    report: &mut ReconciliationReport,
    corpus: &str,
    language: Language,
    split: &DatasetSplit,
    split_name: &str,
    reference: ClassCounts,
) {
    for label in Label::ALL {
        let (r, a) = (reference.get(label), split.counts.get(label));
        report.checks.push(CountCheck {
            corpus: corpus.into(),
            language,
            split: split_name.into(),
            label,
            reference: r,
            achieved: a,
            delta: a as i64 - r as i64,
        });
    }
    for (provenance, counts) in split.counts_by_provenance() {
        if counts.total() > 0 {
            report.provenance.push(ProvenanceCount {
                corpus: corpus.into(),
                language,
                split: split_name.into(),
                provenance,
                counts,
            });
        }
    }
}

impl ReconciliationReport {
    /// Compares whichever corpora were built with the reference counts and
    /// lists the known conflicts between published figures.
    pub fn reconcile(raw: &Corpus, semi_noisy: Option<&Corpus>, translated: Option<&DatasetSplit>) -> Self {
        let mut report = ReconciliationReport::default();
        if let Some(c) = semi_noisy {
            for (&lang, s) in c {
                push_checks(&mut report, "semi-noisy", lang, &s.train, "train", reference::lookup(&reference::SEMI_NOISY_TRAIN, lang));
                push_checks(&mut report, "semi-noisy", lang, &s.test, "test", reference::lookup(&reference::RAW_TEST, lang));
            }
        }
        if let Some(t) = translated {
            push_checks(
                &mut report,
                "fully-translated",
                Language::English,
                t,
                "train",
                reference::TRANSLATED_ENGLISH_TRAIN,
            );
        }
        if let Some(en) = raw.get(&Language::English) {
            let table = reference::lookup(&reference::SEMI_NOISY_TRAIN, Language::English);
            for label in [Label::Oag, Label::Cag] {
                let derived = en.train.counts.get(label) + reference::STATED_ENGLISH_ADDITIONS.get(label);
                if derived != table.get(label) {
                    report.discrepancies.push(Discrepancy {
                        corpus: "semi-noisy".into(),
                        language: Language::English,
                        label,
                        reference: table.get(label),
                        derived,
                        gap: table.get(label) as i64 - derived as i64,
                        explanation: format!(
                            "raw {} + {} stated additions = {derived}, but the reference total is {}; the builder targets the reference total",
                            en.train.counts.get(label),
                            reference::STATED_ENGLISH_ADDITIONS.get(label),
                            table.get(label)
                        ),
                    });
                }
            }
        }
        if let (Some(b), Some(h)) = (raw.get(&Language::Bangla), raw.get(&Language::Hindi)) {
            let derived = translated_counts(b, h);
            for label in Label::ALL {
                let r = reference::TRANSLATED_ENGLISH_TRAIN.get(label);
                if derived.get(label) != r {
                    report.discrepancies.push(Discrepancy {
                        corpus: "fully-translated".into(),
                        language: Language::English,
                        label,
                        reference: r,
                        derived: derived.get(label),
                        gap: r as i64 - derived.get(label) as i64,
                        explanation: format!(
                            "the enumerated source splits hold {} {label} samples, but the reference total is {r}; the builder keeps the enumeration",
                            derived.get(label)
                        ),
                    });
                }
            }
        }
        report
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &CountCheck> {
        self.checks.iter().filter(|c| c.delta != 0)
    }

    /// True when every semi-noisy count equals its reference.
    pub fn semi_noisy_exact(&self) -> bool {
        self.checks.iter().filter(|c| c.corpus == "semi-noisy").all(|c| c.delta == 0)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<17} {:<8} {:<6} {:<4} {:>9} {:>9} {:>6}", "corpus", "language", "split", "cls", "reference", "achieved", "delta");
        for c in &self.checks {
            let flag = if c.delta != 0 { "  MISMATCH" } else { "" };
            let _ = writeln!(
                s,
                "{:<17} {:<8} {:<6} {:<4} {:>9} {:>9} {:>+6}{flag}",
                c.corpus,
                c.language.as_str(),
                c.split,
                c.label.as_str(),
                c.reference,
                c.achieved,
                c.delta
            );
        }
        if !self.provenance.is_empty() {
            let _ = writeln!(s, "\nprovenance");
            for p in &self.provenance {
                let _ = writeln!(s, "{} {} {} {}: {}", p.corpus, p.language, p.split, p.provenance.as_str(), p.counts);
            }
        }
        let _ = writeln!(s, "\ndiscrepancies between published figures: {}", self.discrepancies.len());
        for d in &self.discrepancies {
            let _ = writeln!(s, "- {} {} {} (gap {}): {}", d.corpus, d.language, d.label.as_str(), d.gap, d.explanation);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Provenance;

    fn split(name: &str, lang: Language, counts: ClassCounts) -> DatasetSplit {
        let mut ex = Vec::new();
        for label in Label::ALL {
            for i in 0..counts.get(label) {
                ex.push(LabeledExample {
                    id: format!("{name}-{}-{i}", label.as_str()),
                    text: format!("tok{i} word{} more", i % 7),
                    label,
                    language: lang,
                    provenance: Provenance::Raw,
                });
            }
        }
        DatasetSplit::new(name, ex)
    }

    fn tiny_corpus() -> Corpus {
        Language::ALL
            .iter()
            .map(|&l| {
                (
                    l,
                    LanguageSplits {
                        train: split(&format!("{l}-train"), l, ClassCounts::new(5, 3, 2)),
                        test: split(&format!("{l}-test"), l, ClassCounts::new(2, 1, 1)),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn reference_targets_are_the_table_differences() {
        let t = AugmentationTargets::reference();
        assert_eq!(t.get(Language::English), ClassCounts::new(0, 1798, 2111));
        assert_eq!(t.get(Language::Hindi), ClassCounts::new(0, 2668, 900));
        assert_eq!(t.get(Language::Bangla), ClassCounts::new(0, 1061, 1116));
    }

    #[test]
    fn semi_noisy_hits_targets_and_keeps_tests() {
        let raw = tiny_corpus();
        let targets = AugmentationTargets {
            per_language: [(Language::English, ClassCounts::new(0, 9, 4))].into_iter().collect(),
        };
        let pool = build_pool(&raw, &targets, &OfflineMock::bundled(), &NoiseSpec::default()).unwrap();
        let out = build_semi_noisy(&raw, &pool, &targets, 1).unwrap();
        let en = &out[&Language::English];
        assert_eq!(en.train.counts, ClassCounts::new(5, 12, 6));
        assert_eq!(en.test, raw[&Language::English].test);
        assert_eq!(out[&Language::Hindi].train, raw[&Language::Hindi].train);
        assert_eq!(out, build_semi_noisy(&raw, &pool, &targets, 1).unwrap());
        let mut ids: Vec<&str> = en.train.examples.iter().map(|e| e.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), en.train.len());
    }

    #[test]
    fn shortfall_is_reported_per_class() {
        let raw = tiny_corpus();
        let targets = AugmentationTargets {
            per_language: [(Language::Bangla, ClassCounts::new(0, 5, 7))].into_iter().collect(),
        };
        let err = build_semi_noisy(&raw, &[], &targets, 0).unwrap_err().to_string();
        assert!(err.contains("bangla OAG: need 5"), "{err}");
        assert!(err.contains("bangla CAG: need 7"), "{err}");
    }

    #[test]
    fn fully_translated_follows_the_enumeration() {
        let raw = tiny_corpus();
        let t = build_fully_translated(&raw[&Language::Bangla], &raw[&Language::Hindi], &OfflineMock::bundled()).unwrap();
        assert_eq!(t.counts, ClassCounts::new(10, 8, 6));
        assert!(t.examples.iter().all(|e| e.language == Language::English && e.provenance == Provenance::Translated));
        assert_eq!(translated_counts(&raw[&Language::Bangla], &raw[&Language::Hindi]), t.counts);
    }

    #[test]
    fn report_flags_mismatches() {
        let raw = tiny_corpus();
        let r = ReconciliationReport::reconcile(&raw, Some(&raw), None);
        assert!(!r.semi_noisy_exact());
        assert!(r.mismatches().count() > 0);
        assert!(r.to_text().contains("MISMATCH"));
    }
}
