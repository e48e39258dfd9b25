//! Three parallel stacked encoders fused by a meta-learner, three stacked
//! decoders fused per step, a reconstruction head, and a classification
//! network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::autoencoder::recon_head;
use super::{meta_learner_combine, reconstruction_loss, BatchOutput, ClassifierConfig, ClassifierTap, EncoderViews, MetaLearnerParams};
use crate::error::{Result, TlaError};
use crate::layers::{
    dropout, embed_batch, lstm_forward, repeat_vector, DenseActivation, DenseParams, EmbeddingTable, ForwardCtx,
    StackedLstmParams,
};
use crate::tensor::{ParamSet, Tape, Var};

/// One encoder or decoder: stage 1, repeat vector, stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoderParams {
    pub stage1: StackedLstmParams,
    pub stage2: StackedLstmParams,
}

impl CoderParams {
    fn init(ps: &mut ParamSet, prefix: &str, input: usize, cfg: &ClassifierConfig, rng: &mut impl Rng) -> Self {
        let (h, l, d) = (cfg.hidden_size, cfg.num_layers, cfg.dropout);
        CoderParams {
            stage1: StackedLstmParams::init(ps, &format!("{prefix}.s1"), input, h, l, d, rng),
            stage2: StackedLstmParams::init(ps, &format!("{prefix}.s2"), h, h, l, d, rng),
        }
    }

    /// Returns the stage-2 output sequence.
    fn run(&self, tape: &mut Tape, seq: &[Var], ctx: &mut ForwardCtx) -> Result<Vec<Var>> {
        let first = lstm_forward(tape, &self.stage1, seq, ctx)?;
        let repeated = repeat_vector(first.last_hidden(), seq.len())?;
        Ok(lstm_forward(tape, &self.stage2, &repeated, ctx)?.outputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlaNet {
    pub embedding: EmbeddingTable,
    pub encoders: Vec<CoderParams>,
    pub encoder_meta: MetaLearnerParams,
    pub decoders: Vec<CoderParams>,
    pub decoder_meta: MetaLearnerParams,
    pub recon: DenseParams,
    pub hidden: DenseParams,
    pub output: DenseParams,
}

impl TlaNet {
    pub fn init(ps: &mut ParamSet, cfg: &ClassifierConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden_size;
        let embedding = EmbeddingTable::init(ps, "embed", cfg.vocab_size, cfg.embed_dim, rng);
        let encoders = (0..3)
            .map(|k| CoderParams::init(ps, &format!("enc{k}"), cfg.embed_dim, cfg, rng))
            .collect();
        let encoder_meta = MetaLearnerParams::init(ps, "enc_meta", h, rng);
        let decoders = (0..3).map(|k| CoderParams::init(ps, &format!("dec{k}"), h, cfg, rng)).collect();
        let decoder_meta = MetaLearnerParams::init(ps, "dec_meta", h, rng);
        let recon = recon_head(ps, cfg, rng);
        let hidden = DenseParams::init(ps, "cls.hidden", h, cfg.dense_hidden, DenseActivation::Relu, rng);
        let output = DenseParams::init(ps, "cls.out", cfg.dense_hidden, cfg.num_classes, DenseActivation::Softmax, rng);
        TlaNet {
            embedding,
            encoders,
            encoder_meta,
            decoders,
            decoder_meta,
            recon,
            hidden,
            output,
        }
    }

    fn check_layout(&self) -> Result<()> {
        if self.encoders.len() != 3 || self.decoders.len() != 3 {
            return Err(TlaError::Config("TLA-Net needs exactly three encoders and three decoders".into()));
        }
        let width = self.encoders[0].stage2.hidden_size();
        if self.encoder_meta.width != width || self.decoders.iter().any(|d| d.stage1.input_size() != width) {
            return Err(TlaError::dim("meta-learner width must equal the decoder input width"));
        }
        Ok(())
    }

    /// Fused encoding `[batch, hidden]` plus the meta-learner's attention
    /// weights.
    pub fn encode(&self, tape: &mut Tape, cfg: &ClassifierConfig, seq: &[Var], ctx: &mut ForwardCtx) -> Result<(Var, Var)> {
        let mut codes = [seq[0]; 3];
        for (k, enc) in self.encoders.iter().enumerate() {
            let view = match cfg.encoder_views {
                EncoderViews::Shared => seq.to_vec(),
                EncoderViews::DistinctDropout => seq
                    .iter()
                    .map(|&x| dropout(tape, x, cfg.dropout, ctx))
                    .collect::<Result<Vec<_>>>()?,
            };
            codes[k] = *enc.run(tape, &view, ctx)?.last().expect("non-empty");
        }
        let fused = meta_learner_combine(tape, &self.encoder_meta, codes)?;
        Ok((fused.output, fused.weights))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        cfg: &ClassifierConfig,
        batch: &[Vec<usize>],
        ctx: &mut ForwardCtx,
    ) -> Result<BatchOutput> {
        self.check_layout()?;
        let seq = embed_batch(tape, &self.embedding, batch)?;
        let steps = seq.len();
        let (fused, _) = self.encode(tape, cfg, &seq, ctx)?;
        let repeated = repeat_vector(fused, steps)?;
        let decoded = self
            .decoders
            .iter()
            .map(|d| d.run(tape, &repeated, ctx))
            .collect::<Result<Vec<_>>>()?;
        let merged = (0..steps)
            .map(|t| {
                meta_learner_combine(tape, &self.decoder_meta, [decoded[0][t], decoded[1][t], decoded[2][t]])
                    .map(|m| m.output)
            })
            .collect::<Result<Vec<_>>>()?;
        let recon = merged
            .iter()
            .map(|&h| self.recon.forward(tape, h))
            .collect::<Result<Vec<_>>>()?;
        let (loss, rows) = reconstruction_loss(tape, cfg.reconstruction_loss, &seq, &recon, batch)?;
        let tap = match cfg.classifier_tap {
            ClassifierTap::Fused => fused,
            ClassifierTap::Reconstruction => merged[steps - 1],
        };
        let features = self.hidden.forward(tape, tap)?;
        let probs = self.output.forward(tape, features)?;
        Ok(BatchOutput {
            probs,
            features,
            recon_loss: Some(loss),
            recon_rows: Some(rows),
            reconstruction: Some(recon),
        })
    }
}
