//! Single-encoder LSTM autoencoder with a classification head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reconstruction_loss, BatchOutput, ClassifierConfig};
use crate::error::Result;
use crate::layers::{
    embed_batch, lstm_forward, repeat_vector, DenseActivation, DenseParams, EmbeddingTable, ForwardCtx,
    StackedLstmParams,
};
use crate::loss::ReconstructionLoss;
use crate::tensor::{ParamSet, Tape};

/// Builds the per-step reconstruction head for the configured loss.
pub(crate) fn recon_head(ps: &mut ParamSet, cfg: &ClassifierConfig, rng: &mut impl Rng) -> DenseParams {
    match cfg.reconstruction_loss {
        ReconstructionLoss::Mse => DenseParams::init(ps, "recon", cfg.hidden_size, cfg.embed_dim, DenseActivation::Linear, rng),
        ReconstructionLoss::Bce => {
            DenseParams::init(ps, "recon", cfg.hidden_size, cfg.vocab_size, DenseActivation::Sigmoid, rng)
        }
    }
}

/// Encoder final hidden → repeat `T` → decoder → per-step reconstruction.
/// The softmax layer reads the encoder's final hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmAutoencoder {
    pub embedding: EmbeddingTable,
    pub encoder: StackedLstmParams,
    pub decoder: StackedLstmParams,
    pub recon: DenseParams,
    pub head: DenseParams,
}

impl LstmAutoencoder {
    pub fn init(ps: &mut ParamSet, cfg: &ClassifierConfig, rng: &mut impl Rng) -> Self {
        let embedding = EmbeddingTable::init(ps, "embed", cfg.vocab_size, cfg.embed_dim, rng);
        let (e, h, l, d) = (cfg.embed_dim, cfg.hidden_size, cfg.num_layers, cfg.dropout);
        let encoder = StackedLstmParams::init(ps, "enc", e, h, l, d, rng);
        let decoder = StackedLstmParams::init(ps, "dec", h, h, l, d, rng);
        let recon = recon_head(ps, cfg, rng);
        let head = DenseParams::init(ps, "head", h, cfg.num_classes, DenseActivation::Softmax, rng);
        LstmAutoencoder {
            embedding,
            encoder,
            decoder,
            recon,
            head,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        cfg: &ClassifierConfig,
        batch: &[Vec<usize>],
        ctx: &mut ForwardCtx,
    ) -> Result<BatchOutput> {
        let seq = embed_batch(tape, &self.embedding, batch)?;
        let enc = lstm_forward(tape, &self.encoder, &seq, ctx)?;
        let code = enc.last_hidden();
        let repeated = repeat_vector(code, seq.len())?;
        let dec = lstm_forward(tape, &self.decoder, &repeated, ctx)?;
        let recon = dec
            .outputs
            .iter()
            .map(|&h| self.recon.forward(tape, h))
            .collect::<Result<Vec<_>>>()?;
        let (loss, rows) = reconstruction_loss(tape, cfg.reconstruction_loss, &seq, &recon, batch)?;
        let probs = self.head.forward(tape, code)?;
        Ok(BatchOutput {
            probs,
            features: code,
            recon_loss: Some(loss),
            recon_rows: Some(rows),
            reconstruction: Some(recon),
        })
    }
}
