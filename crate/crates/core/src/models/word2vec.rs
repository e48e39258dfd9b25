//! Skip-gram embeddings with negative sampling, trained by plain SGD on a
//! linearly decaying learning rate, plus mean-pooled sentence features.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::optim::LinearDecaySchedule;
use crate::tensor::sigmoid;
use crate::text::PAD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Word2VecConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Word2VecConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            batch_size: 128,
            lr_start: 0.025,
            lr_end: 0.001,
        }
    }
}

impl Word2VecConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dim", self.dim),
            ("window", self.window),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(TlaError::Config(format!("word2vec.{name} must be at least 1")));
            }
        }
        if !(self.lr_start > 0.0 && self.lr_end >= 0.0) {
            return Err(TlaError::Config("word2vec learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Input and output embedding matrices, both row-major `[vocab, dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word2VecModel {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub vocab_size: usize,
    pub dim: usize,
    pub negatives: usize,
    /// Sampling weights `count^0.75`, indexed by token id.
    pub unigram: Vec<f64>,
}

impl Word2VecModel {
    /// Input vectors uniform in `±0.5/dim`, output vectors zero.
    pub fn new(vocab_size: usize, dim: usize, negatives: usize, seed: u64) -> Result<Self> {
        if vocab_size < negatives + 1 {
            return Err(TlaError::Config(format!(
                "vocabulary of {vocab_size} tokens is smaller than negatives + 1 = {}",
                negatives + 1
            )));
        }
        if dim == 0 {
            return Err(TlaError::Config("word2vec.dim must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = 0.5 / dim as f64;
        Ok(Word2VecModel {
            input: (0..vocab_size * dim).map(|_| rng.gen_range(-b..=b)).collect(),
            output: vec![0.0; vocab_size * dim],
            vocab_size,
            dim,
            negatives,
            unigram: vec![1.0; vocab_size],
        })
    }

    pub fn input_vector(&self, id: usize) -> &[f64] {
        &self.input[id * self.dim..(id + 1) * self.dim]
    }

    pub fn output_vector(&self, id: usize) -> &[f64] {
        &self.output[id * self.dim..(id + 1) * self.dim]
    }

    /// Cosine similarity of two input vectors; 0 if either is zero.
    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        cosine(self.input_vector(a), self.input_vector(b))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `−ln σ(u_o·v_c) − Σ_neg ln σ(−u_n·v_c)`.
pub fn pair_loss(model: &Word2VecModel, center: usize, context: usize, negatives: &[usize]) -> f64 {
    let v = model.input_vector(center);
    let mut loss = -sigmoid(dot(model.output_vector(context), v)).ln();
    for &n in negatives {
        loss -= sigmoid(-dot(model.output_vector(n), v)).ln();
    }
    loss
}

/// Adds the gradient of [`pair_loss`] to full-size `[vocab, dim]` buffers.
pub fn accumulate_pair_grad(
    model: &Word2VecModel,
    center: usize,
    context: usize,
    negatives: &[usize],
    g_in: &mut [f64],
    g_out: &mut [f64],
) {
    let d = model.dim;
    let v = model.input_vector(center);
    let targets = std::iter::once((context, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    for (w, label) in targets {
        let u = model.output_vector(w);
        let g = sigmoid(dot(u, v)) - label;
        for k in 0..d {
            g_in[center * d + k] += g * u[k];
            g_out[w * d + k] += g * v[k];
        }
    }
}

/// `(center, context)` pairs within `window` tokens, padding skipped.
pub fn skipgram_pairs(corpus: &[Vec<usize>], window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for sent in corpus {
        let ids: Vec<usize> = sent.iter().copied().filter(|&t| t != PAD).collect();
        for (i, &c) in ids.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(ids.len() - 1);
            for (j, &o) in ids.iter().enumerate().take(hi + 1).skip(lo) {
                if j != i {
                    pairs.push((c, o));
                }
            }
        }
    }
    pairs
}

/// Trains `model` in place and returns the mean pair loss of every epoch.
///
/// Pairs are reshuffled each epoch. Each batch's gradients are computed at
/// the pre-batch parameters, summed over the batch, and applied with the
/// rate `lr_start → lr_end` interpolated over all steps of the run.
pub fn word2vec_train(
    model: &mut Word2VecModel,
    corpus: &[Vec<usize>],
    cfg: &Word2VecConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if model.vocab_size < model.negatives + 1 {
        return Err(TlaError::Config(format!(
            "vocabulary of {} tokens is smaller than negatives + 1 = {}",
            model.vocab_size,
            model.negatives + 1
        )));
    }
    if let Some(&bad) = corpus.iter().flatten().find(|&&t| t >= model.vocab_size) {
        return Err(TlaError::domain(format!("token id {bad} out of range for vocabulary of size {}", model.vocab_size)));
    }
    let mut counts = vec![0.0f64; model.vocab_size];
    for &t in corpus.iter().flatten() {
        if t != PAD {
            counts[t] += 1.0;
        }
    }
    model.unigram = counts.iter().map(|c| c.powf(0.75)).collect();
    let mut pairs = skipgram_pairs(corpus, cfg.window);
    if pairs.is_empty() {
        return Err(TlaError::domain("corpus yields no skip-gram pairs"));
    }
    let sampler = WeightedIndex::new(&model.unigram)
        .map_err(|e| TlaError::domain(format!("cannot build the negative-sampling table: {e}")))?;
    let per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let schedule = LinearDecaySchedule::new(cfg.lr_start, cfg.lr_end, (per_epoch * cfg.epochs) as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut step = 0u64;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut negs = Vec::with_capacity(model.negatives);
    for _ in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let mut g_in = vec![0.0; model.input.len()];
            let mut g_out = vec![0.0; model.output.len()];
            for &(c, o) in batch {
                negs.clear();
                while negs.len() < model.negatives {
                    let n = sampler.sample(&mut rng);
                    if n != o {
                        negs.push(n);
                    }
                }
                epoch_loss += pair_loss(model, c, o, &negs);
                accumulate_pair_grad(model, c, o, &negs, &mut g_in, &mut g_out);
            }
            let lr = schedule.rate(step);
            for (p, g) in model.input.iter_mut().zip(&g_in) {
                *p -= lr * g;
            }
            for (p, g) in model.output.iter_mut().zip(&g_out) {
                *p -= lr * g;
            }
            step += 1;
        }
        trace.push(epoch_loss / pairs.len() as f64);
    }
    Ok(trace)
}

/// Mean input embedding of the non-padding tokens; the zero vector when
/// every token is padding.
pub fn word2vec_features(model: &Word2VecModel, tokens: &[usize]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.dim];
    let mut n = 0usize;
    for &t in tokens {
        if t >= model.vocab_size {
            return Err(TlaError::domain(format!("token id {t} out of range for vocabulary of size {}", model.vocab_size)));
        }
        if t == PAD {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(model.input_vector(t)) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vectors_give_ln2_per_term() {
        let mut m = Word2VecModel::new(10, 4, 5, 1).unwrap();
        m.input.fill(0.0);
        let loss = pair_loss(&m, 2, 3, &[4, 5, 6, 7, 8]);
        assert!((loss - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn small_vocab_is_a_config_error() {
        assert!(matches!(Word2VecModel::new(5, 4, 5, 0), Err(TlaError::Config(_))));
    }

    #[test]
    fn pairs_skip_padding() {
        let pairs = skipgram_pairs(&[vec![2, 3, 4, 0, 0]], 1);
        assert_eq!(pairs, vec![(2, 3), (3, 2), (3, 4), (4, 3)]);
    }

    #[test]
    fn features_are_mean_pooled_and_permutation_invariant() {
        let mut m = Word2VecModel::new(6, 2, 1, 0).unwrap();
        m.input = vec![0.0, 0.0, 9.0, 9.0, 1.0, 2.0, 3.0, 6.0, 0.5, 0.5, 7.0, 1.0];
        assert_eq!(word2vec_features(&m, &[2]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(word2vec_features(&m, &[2, 3, 0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(
            word2vec_features(&m, &[5, 2, 3]).unwrap(),
            word2vec_features(&m, &[3, 5, 2]).unwrap()
        );
        assert_eq!(word2vec_features(&m, &[0, 0]).unwrap(), vec![0.0, 0.0]);
        assert!((m.cosine(3, 3) - 1.0).abs() < 1e-15);
    }
}
