//! Bundled and generated fixtures for desk-scale runs: a 60-example
//! three-class corpus with class marker tokens, a two-topic corpus for
//! embedding checks, and raw corpora with the reference class counts.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{reference, Corpus, LanguageSplits};
use crate::error::Result;
use crate::text::{parse_trac2, write_trac2, ClassCounts, DatasetSplit, Label, LabeledExample, Language, Provenance};

pub const MARKER_CSV: &str = include_str!("../data/synthetic/markers.csv");

/// The 60-example marker corpus, 20 examples per class.
pub fn marker_corpus() -> DatasetSplit {
    let mut split = parse_trac2(MARKER_CSV.as_bytes(), Path::new("markers.csv"), Language::English)
        .expect("bundled corpus parses");
    split.name = "markers".into();
    split
}

/// Words of each topic in [`two_topic_corpus`].
pub const TOPIC_A: [&str; 10] = [
    "river", "boat", "fish", "water", "shore", "sail", "lake", "wave", "net", "harbor",
];
pub const TOPIC_B: [&str; 10] = [
    "code", "compiler", "bug", "test", "function", "loop", "array", "pointer", "stack", "build",
];

/// `sentences` sentences of `length` words, each drawn from a single topic
/// chosen by alternation.
pub fn two_topic_corpus(sentences: usize, length: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|i| {
            let topic: &[&str] = if i % 2 == 0 { &TOPIC_A } else { &TOPIC_B };
            (0..length).map(|_| topic.choose(&mut rng).expect("non-empty").to_string()).collect()
        })
        .collect()
}

/// Per-language word lists taken from the bundled translation dictionaries,
/// so generated texts are translatable by the offline mock.
fn lexicon() -> HashMap<Language, Vec<String>> {
    let en_hi: HashMap<String, String> =
        serde_json::from_str(include_str!("../data/mock/en-hi.json")).expect("bundled dictionary");
    let en_bn: HashMap<String, String> =
        serde_json::from_str(include_str!("../data/mock/en-bn.json")).expect("bundled dictionary");
    let mut en: Vec<String> = en_hi.keys().cloned().collect();
    en.sort();
    let hi = en.iter().map(|w| en_hi[w].clone()).collect();
    let bn = en.iter().map(|w| en_bn[w].clone()).collect();
    HashMap::from([(Language::English, en), (Language::Hindi, hi), (Language::Bangla, bn)])
}

fn generate_split(lang: Language, split: &str, counts: ClassCounts, words: &[String], rng: &mut ChaCha8Rng) -> DatasetSplit {
    let mut labels: Vec<Label> = Label::ALL
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, counts.get(l)))
        .collect();
    labels.shuffle(rng);
    let examples = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let n = rng.gen_range(5..=10);
            let text: Vec<&str> = (0..n).map(|_| words.choose(rng).expect("non-empty").as_str()).collect();
            LabeledExample {
                id: format!("{}-{split}-{:05}", lang.code(), i + 1),
                text: text.join(" "),
                label,
                language: lang,
                provenance: Provenance::Raw,
            }
        })
        .collect();
    DatasetSplit::new(format!("{lang}-{split}"), examples)
}

/// Raw training and test splits for all three languages with exactly the
/// reference class counts.
pub fn reference_raw_corpus(seed: u64) -> Corpus {
    let lex = lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Language::ALL
        .iter()
        .map(|&lang| {
            let words = &lex[&lang];
            let train = generate_split(lang, "train", reference::lookup(&reference::RAW_TRAIN, lang), words, &mut rng);
            let test = generate_split(lang, "test", reference::lookup(&reference::RAW_TEST, lang), words, &mut rng);
            (lang, LanguageSplits { train, test })
        })
        .collect()
}

/// Writes `{language}-{train|test}.csv` files and returns their paths in
/// language order, train before test.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (lang, s) in corpus {
        for (name, split) in [("train", &s.train), ("test", &s.test)] {
            let p = dir.join(format!("{lang}-{name}.csv"));
            write_trac2(&p, split)?;
            paths.push(p);
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_corpus_is_balanced() {
        let c = marker_corpus();
        assert_eq!(c.counts, ClassCounts::new(20, 20, 20));
    }

    #[test]
    fn generated_corpus_matches_reference_counts() {
        let c = reference_raw_corpus(1);
        for (lang, s) in &c {
            assert_eq!(s.train.counts, reference::lookup(&reference::RAW_TRAIN, *lang));
            assert_eq!(s.test.counts, reference::lookup(&reference::RAW_TEST, *lang));
        }
        assert_eq!(c, reference_raw_corpus(1));
    }

    #[test]
    fn topics_do_not_mix_within_a_sentence() {
        for (i, s) in two_topic_corpus(6, 8, 0).iter().enumerate() {
            let topic: &[&str] = if i % 2 == 0 { &TOPIC_A } else { &TOPIC_B };
            assert!(s.iter().all(|w| topic.contains(&w.as_str())));
        }
    }
}
