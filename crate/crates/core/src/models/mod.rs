//! Sequence classifiers: LSTM, BiLSTM, LSTM autoencoder, the three-encoder
//! TLA-Net, and skip-gram embeddings with a pooled-feature head.
//!
//! Every tape-based model shares [`SequenceModel`]: a [`ParamSet`] plus the
//! parameter ids of one [`Network`]. Forward passes take a batch of padded,
//! equal-length token-id sequences and return a [`BatchOutput`].

mod autoencoder;
mod meta;
mod recurrent;
mod tlanet;
pub mod train;
pub mod word2vec;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use autoencoder::LstmAutoencoder;
pub use meta::{meta_learner_combine, MetaLearnerParams, MetaOutput};
pub use recurrent::{BiLstmClassifier, LstmClassifier};
pub use tlanet::{CoderParams, TlaNet};

use crate::error::{Result, TlaError};
use crate::layers::ForwardCtx;
use crate::loss::{r_loss_tape, ReconstructionLoss};
use crate::tensor::{ParamSet, Tape, Var};
use crate::wisdomnet::Classification;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "bilstm")]
    Bilstm,
    #[serde(rename = "lstm-ae")]
    LstmAe,
    #[serde(rename = "word2vec-features")]
    Word2vecFeatures,
    #[serde(rename = "tla-net")]
    TlaNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Lstm,
        ModelKind::Bilstm,
        ModelKind::LstmAe,
        ModelKind::Word2vecFeatures,
        ModelKind::TlaNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Bilstm => "bilstm",
            ModelKind::LstmAe => "lstm-ae",
            ModelKind::Word2vecFeatures => "word2vec-features",
            ModelKind::TlaNet => "tla-net",
        }
    }

    /// Row label used in results tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "LSTM",
            ModelKind::Bilstm => "BiLSTM",
            ModelKind::LstmAe => "LSTM-Autoencoder",
            ModelKind::Word2vecFeatures => "Word2vec",
            ModelKind::TlaNet => "TLA-Net",
        }
    }

    pub fn has_reconstruction(self) -> bool {
        matches!(self, ModelKind::LstmAe | ModelKind::TlaNet)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = TlaError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TlaError::Config(format!("unknown model kind '{s}'")))
    }
}

/// Which representation feeds the classification network of the TLA-Net.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierTap {
    /// The meta-learner fusion of the three encoders.
    #[default]
    Fused,
    /// The last step of the fused decoder sequence.
    Reconstruction,
}

/// What the three TLA-Net encoders see.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderViews {
    /// The same embedded sequence; encoders differ only by initialization.
    #[default]
    Shared,
    /// Each encoder gets its own dropout mask on the embedded input while
    /// training.
    DistinctDropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_size: usize,
    /// Layers per stacked LSTM (per stage for the autoencoders).
    pub num_layers: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub max_len: usize,
    /// Width of the ReLU layer in the TLA-Net classification network.
    pub dense_hidden: usize,
    pub reconstruction_loss: ReconstructionLoss,
    pub classifier_tap: ClassifierTap,
    pub encoder_views: EncoderViews,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            vocab_size: 2,
            embed_dim: 64,
            hidden_size: 128,
            num_layers: 3,
            dropout: 0.2,
            num_classes: 3,
            max_len: crate::text::DEFAULT_MAX_LEN,
            dense_hidden: 64,
            reconstruction_loss: ReconstructionLoss::Mse,
            classifier_tap: ClassifierTap::Fused,
            encoder_views: EncoderViews::Shared,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("max_len", self.max_len),
            ("dense_hidden", self.dense_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TlaError::Config(format!("classifier.{name} must be at least 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(TlaError::Config(format!(
                "classifier.num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TlaError::Config(format!(
                "classifier.dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Everything one batched forward pass exposes to losses and callers.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// `[batch, num_classes]` class distributions.
    pub probs: Var,
    /// Penultimate representation `[batch, features]` (input of the
    /// rejection head).
    pub features: Var,
    /// Batch-mean reconstruction loss, for autoencoder models.
    pub recon_loss: Option<Var>,
    /// Per-example reconstruction loss values.
    pub recon_rows: Option<Vec<f64>>,
    /// Reconstructed sequence, one `[batch, width]` entry per step.
    pub reconstruction: Option<Vec<Var>>,
}

/// Per-example prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub probabilities: Vec<f64>,
    pub reconstruction_loss: Option<f64>,
    pub rejection: Option<Classification>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Network {
    Lstm(LstmClassifier),
    Bilstm(BiLstmClassifier),
    LstmAe(LstmAutoencoder),
    TlaNet(TlaNet),
}

/// A tape-based classifier: configuration, parameters, and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub kind: ModelKind,
    pub config: ClassifierConfig,
    pub params: ParamSet,
    pub network: Network,
}

impl SequenceModel {
    /// Builds and initializes a model from `config.seed`.
    pub fn new(kind: ModelKind, config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let network = match kind {
            ModelKind::Lstm => Network::Lstm(LstmClassifier::init(&mut ps, &config, &mut rng)),
            ModelKind::Bilstm => Network::Bilstm(BiLstmClassifier::init(&mut ps, &config, &mut rng)),
            ModelKind::LstmAe => Network::LstmAe(LstmAutoencoder::init(&mut ps, &config, &mut rng)),
            ModelKind::TlaNet => Network::TlaNet(TlaNet::init(&mut ps, &config, &mut rng)),
            ModelKind::Word2vecFeatures => {
                return Err(TlaError::Config(
                    "word2vec-features is trained by the skip-gram trainer, not as a sequence model".into(),
                ))
            }
        };
        Ok(SequenceModel {
            kind,
            config,
            params: ps,
            network,
        })
    }

    pub fn feature_dim(&self) -> usize {
        match &self.network {
            Network::Lstm(_) | Network::LstmAe(_) => self.config.hidden_size,
            Network::Bilstm(_) => 2 * self.config.hidden_size,
            Network::TlaNet(_) => self.config.dense_hidden,
        }
    }

    /// Forward pass over a batch of equal-length id sequences on a tape
    /// built with [`Tape::from_params`] from `self.params`.
    pub fn forward_batch(&self, tape: &mut Tape, batch: &[Vec<usize>], ctx: &mut ForwardCtx) -> Result<BatchOutput> {
        if batch.is_empty() {
            return Err(TlaError::domain("empty batch"));
        }
        if batch.iter().any(Vec::is_empty) {
            return Err(TlaError::domain("empty token sequence"));
        }
        if tape.len() < self.params.len() {
            return Err(TlaError::Contract("tape was not built from this model's parameters".into()));
        }
        match &self.network {
            Network::Lstm(n) => n.forward(tape, batch, ctx),
            Network::Bilstm(n) => n.forward(tape, batch, ctx),
            Network::LstmAe(n) => n.forward(tape, &self.config, batch, ctx),
            Network::TlaNet(n) => n.forward(tape, &self.config, batch, ctx),
        }
    }

    /// Inference on one token sequence.
    pub fn forward_tokens(&self, tokens: &[usize]) -> Result<ModelOutput> {
        Ok(self.predict(&[tokens.to_vec()], 1)?.remove(0))
    }

    /// Inference over many sequences, evaluated in chunks of `chunk` rows.
    /// Chunks run in parallel on the current rayon pool; per-row results do
    /// not depend on the chunking.
    pub fn predict(&self, data: &[Vec<usize>], chunk: usize) -> Result<Vec<ModelOutput>> {
        let chunk = chunk.max(1);
        let parts = data
            .par_chunks(chunk)
            .map(|rows| self.predict_chunk(rows))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.into_iter().flatten().collect())
    }

    fn predict_chunk(&self, rows: &[Vec<usize>]) -> Result<Vec<ModelOutput>> {
        let mut tape = Tape::from_params(&self.params);
        let out = self.forward_batch(&mut tape, rows, &mut ForwardCtx::eval())?;
        let c = self.config.num_classes;
        let f = tape.shape(out.features)[1];
        let probs = tape.values(out.probs);
        let feats = tape.values(out.features);
        Ok((0..rows.len())
            .map(|r| ModelOutput {
                probabilities: probs[r * c..(r + 1) * c].to_vec(),
                reconstruction_loss: out.recon_rows.as_ref().map(|v| v[r]),
                rejection: None,
                features: feats[r * f..(r + 1) * f].to_vec(),
            })
            .collect())
    }
}

/// Mean-over-batch reconstruction loss against the embedded input.
///
/// `Mse` compares `recon` (width `embed_dim`) to `embedded` with the summed
/// squared error. `Bce` treats `recon` (width `vocab_size`, sigmoid) as
/// per-token probabilities against the one-hot input ids.
pub(crate) fn reconstruction_loss(
    tape: &mut Tape,
    mode: ReconstructionLoss,
    embedded: &[Var],
    recon: &[Var],
    batch: &[Vec<usize>],
) -> Result<(Var, Vec<f64>)> {
    let rows = batch.len();
    match mode {
        ReconstructionLoss::Mse => {
            // The target is the live embedding, not a detached copy, so R
            // also shapes the embedding table.
            let total = r_loss_tape(tape, embedded, recon)?;
            let mean = tape.scale(total, 1.0 / rows as f64)?;
            let width = tape.shape(recon[0])[1];
            let mut per_row = vec![0.0; rows];
            for (&i, &o) in embedded.iter().zip(recon) {
                let (iv, ov) = (tape.values(i), tape.values(o));
                for (r, acc) in per_row.iter_mut().enumerate() {
                    *acc += iv[r * width..(r + 1) * width]
                        .iter()
                        .zip(&ov[r * width..(r + 1) * width])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                }
            }
            Ok((mean, per_row))
        }
        ReconstructionLoss::Bce => {
            let vocab = tape.shape(recon[0])[1];
            let mut per_row = vec![0.0; rows];
            let mut total: Option<Var> = None;
            for (t, &o) in recon.iter().enumerate() {
                let mut target = vec![0.0; rows * vocab];
                for (r, seq) in batch.iter().enumerate() {
                    target[r * vocab + seq[t]] = 1.0;
                }
                let ov = tape.values(o);
                for (r, acc) in per_row.iter_mut().enumerate() {
                    *acc += (0..vocab)
                        .map(|v| crate::tensor::tape::bce_term(ov[r * vocab + v], target[r * vocab + v]))
                        .sum::<f64>()
                        / vocab as f64;
                }
                let step = tape.bce(o, &target)?;
                total = Some(match total {
                    None => step,
                    Some(acc) => tape.add(acc, step)?,
                });
            }
            Ok((total.expect("non-empty sequence"), per_row))
        }
    }
}

#[cfg(test)]
mod tests;
