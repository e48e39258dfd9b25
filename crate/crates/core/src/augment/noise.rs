//! Label-preserving token edits: swap with a neighbour, delete, duplicate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::models::train::mix_seed;
use crate::text::{LabeledExample, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseOp {
    SwapAdjacent,
    Delete,
    Duplicate,
}

impl NoiseOp {
    pub const ALL: [NoiseOp; 3] = [NoiseOp::SwapAdjacent, NoiseOp::Delete, NoiseOp::Duplicate];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-token probability of being edited.
    pub p: f64,
    pub ops: Vec<NoiseOp>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            p: 0.1,
            ops: NoiseOp::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(TlaError::Config(format!("noise.p must lie in [0, 1], got {}", self.p)));
        }
        if self.p > 0.0 && self.ops.is_empty() {
            return Err(TlaError::Config("noise.ops must name at least one operation when p > 0".into()));
        }
        Ok(())
    }
}

/// Edits `tokens` and returns the result with the number of tokens hit.
///
/// Every token is hit independently with probability `p` and assigned one
/// enabled operation uniformly. Swaps are applied first, left to right, and
/// move the token together with any pending delete/duplicate mark of its
/// neighbour; the last token swaps with its predecessor. A result that
/// would be empty keeps the first original token.
pub fn noise_tokens<S: AsRef<str>>(tokens: &[S], spec: &NoiseSpec, rng: &mut impl Rng) -> (Vec<String>, usize) {
    let mut marked: Vec<(&str, Option<NoiseOp>)> = tokens
        .iter()
        .map(|t| {
            let op = if spec.p > 0.0 && rng.gen_bool(spec.p) {
                Some(*spec.ops.choose(rng).expect("validated non-empty"))
            } else {
                None
            };
            (t.as_ref(), op)
        })
        .collect();
    let hits = marked.iter().filter(|(_, op)| op.is_some()).count();
    let n = marked.len();
    let swaps: Vec<usize> = (0..n).filter(|&i| marked[i].1 == Some(NoiseOp::SwapAdjacent)).collect();
    for i in swaps {
        if i + 1 < n {
            marked.swap(i, i + 1);
        } else if i > 0 {
            marked.swap(i - 1, i);
        }
    }
    let mut out = Vec::with_capacity(n + hits);
    for (tok, op) in &marked {
        match op {
            Some(NoiseOp::Delete) => {}
            Some(NoiseOp::Duplicate) => {
                out.push(tok.to_string());
                out.push(tok.to_string());
            }
            _ => out.push(tok.to_string()),
        }
    }
    if out.is_empty() {
        if let Some(first) = tokens.first() {
            out.push(first.as_ref().to_owned());
        }
    }
    (out, hits)
}

/// Marks an id as derived by noise under `seed`.
pub fn noise_id(id: &str, seed: u64) -> String {
    format!("{id}~nz-{seed:016x}")
}

/// One noisy copy per example. Each example's edits depend only on the
/// seed and its position, so the result is independent of thread count.
pub fn noise_augment(examples: &[LabeledExample], spec: &NoiseSpec) -> Result<Vec<LabeledExample>> {
    spec.validate()?;
    Ok(examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let text = if spec.p == 0.0 {
                e.text.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, i as u64));
                let tokens: Vec<&str> = e.text.split_whitespace().collect();
                noise_tokens(&tokens, spec, &mut rng).0.join(" ")
            };
            LabeledExample {
                id: noise_id(&e.id, spec.seed),
                text,
                label: e.label,
                language: e.language,
                provenance: Provenance::Noise,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{Label, Language};

    fn examples() -> Vec<LabeledExample> {
        (0..20)
            .map(|i| LabeledExample {
                id: format!("e{i}"),
                text: format!("w{i} alpha beta gamma delta epsilon"),
                label: Label::ALL[i % 3],
                language: Language::English,
                provenance: Provenance::Raw,
            })
            .collect()
    }

    #[test]
    fn zero_probability_only_retags() {
        let ex = examples();
        let out = noise_augment(&ex, &NoiseSpec { p: 0.0, ..NoiseSpec::default() }).unwrap();
        for (o, e) in out.iter().zip(&ex) {
            assert_eq!(o.text, e.text);
            assert_eq!(o.label, e.label);
            assert_eq!(o.provenance, Provenance::Noise);
        }
    }

    #[test]
    fn seeded_and_label_preserving() {
        let ex = examples();
        let spec = NoiseSpec { p: 0.5, seed: 9, ..NoiseSpec::default() };
        let a = noise_augment(&ex, &spec).unwrap();
        assert_eq!(a, noise_augment(&ex, &spec).unwrap());
        assert!(a.iter().zip(&ex).all(|(o, e)| o.label == e.label));
        assert!(a.iter().zip(&ex).any(|(o, e)| o.text != e.text));
        let b = noise_augment(&ex, &NoiseSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn hit_fraction_within_three_sigma() {
        let spec = NoiseSpec { p: 0.1, seed: 3, ..NoiseSpec::default() };
        let tokens: Vec<String> = (0..10_000).map(|i| format!("t{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, hits) = noise_tokens(&tokens, &spec, &mut rng);
        let n = tokens.len() as f64;
        let sigma = (n * 0.1 * 0.9).sqrt();
        assert!((hits as f64 - n * 0.1).abs() <= 3.0 * sigma, "hits {hits}");
    }

    #[test]
    fn single_operations_behave() {
        let toks = ["a", "b", "c"];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = |op| NoiseSpec { p: 1.0, ops: vec![op], seed: 0 };
        assert_eq!(noise_tokens(&toks, &all(NoiseOp::Duplicate), &mut rng).0, ["a", "a", "b", "b", "c", "c"]);
        assert_eq!(noise_tokens(&toks, &all(NoiseOp::Delete), &mut rng).0, ["a"]);
        let (swapped, hits) = noise_tokens(&toks, &all(NoiseOp::SwapAdjacent), &mut rng);
        assert_eq!(hits, 3);
        let mut sorted = swapped.clone();
        sorted.sort();
        assert_eq!(sorted, ["a", "b", "c"]);
    }

    #[test]
    fn invalid_probability_is_rejected() {
        assert!(noise_augment(&examples(), &NoiseSpec { p: 1.5, ..NoiseSpec::default() }).is_err());
    }
}
