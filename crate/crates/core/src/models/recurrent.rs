//! Plain LSTM and BiLSTM classifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BatchOutput, ClassifierConfig};
use crate::error::Result;
use crate::layers::{
    bilstm_forward, embed_batch, lstm_forward, DenseActivation, DenseParams, EmbeddingTable, ForwardCtx,
    StackedLstmParams,
};
use crate::tensor::{ParamSet, Tape};

/// Embedding, stacked LSTM, and a softmax layer on the last hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmClassifier {
    pub embedding: EmbeddingTable,
    pub lstm: StackedLstmParams,
    pub head: DenseParams,
}

impl LstmClassifier {
    pub fn init(ps: &mut ParamSet, cfg: &ClassifierConfig, rng: &mut impl Rng) -> Self {
        let embedding = EmbeddingTable::init(ps, "embed", cfg.vocab_size, cfg.embed_dim, rng);
        let lstm = StackedLstmParams::init(ps, "lstm", cfg.embed_dim, cfg.hidden_size, cfg.num_layers, cfg.dropout, rng);
        let head = DenseParams::init(ps, "head", cfg.hidden_size, cfg.num_classes, DenseActivation::Softmax, rng);
        LstmClassifier { embedding, lstm, head }
    }

    pub fn forward(&self, tape: &mut Tape, batch: &[Vec<usize>], ctx: &mut ForwardCtx) -> Result<BatchOutput> {
        let seq = embed_batch(tape, &self.embedding, batch)?;
        let out = lstm_forward(tape, &self.lstm, &seq, ctx)?;
        let features = out.last_hidden();
        let probs = self.head.forward(tape, features)?;
        Ok(BatchOutput {
            probs,
            features,
            recon_loss: None,
            recon_rows: None,
            reconstruction: None,
        })
    }
}

/// Forward and backward stacks; the softmax layer reads
/// `concat(forward final hidden, backward final hidden)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmClassifier {
    pub embedding: EmbeddingTable,
    pub forward_lstm: StackedLstmParams,
    pub backward_lstm: StackedLstmParams,
    pub head: DenseParams,
}

impl BiLstmClassifier {
    pub fn init(ps: &mut ParamSet, cfg: &ClassifierConfig, rng: &mut impl Rng) -> Self {
        let embedding = EmbeddingTable::init(ps, "embed", cfg.vocab_size, cfg.embed_dim, rng);
        let (e, h, l, d) = (cfg.embed_dim, cfg.hidden_size, cfg.num_layers, cfg.dropout);
        let forward_lstm = StackedLstmParams::init(ps, "fwd", e, h, l, d, rng);
        let backward_lstm = StackedLstmParams::init(ps, "bwd", e, h, l, d, rng);
        let head = DenseParams::init(ps, "head", 2 * h, cfg.num_classes, DenseActivation::Softmax, rng);
        BiLstmClassifier {
            embedding,
            forward_lstm,
            backward_lstm,
            head,
        }
    }

    pub fn forward(&self, tape: &mut Tape, batch: &[Vec<usize>], ctx: &mut ForwardCtx) -> Result<BatchOutput> {
        let seq = embed_batch(tape, &self.embedding, batch)?;
        let out = bilstm_forward(tape, &self.forward_lstm, &self.backward_lstm, &seq, ctx)?;
        let features = tape.concat(&[out.fwd_final, out.bwd_final], 1)?;
        let probs = self.head.forward(tape, features)?;
        Ok(BatchOutput {
            probs,
            features,
            recon_loss: None,
            recon_rows: None,
            reconstruction: None,
        })
    }
}
