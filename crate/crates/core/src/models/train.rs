//! Mini-batch training with Adam on `CCE + λ·mean R_loss`.
//!
//! Every random draw (batch order, dropout masks) is derived from the run
//! seed and the epoch or step index, so a run resumed from a checkpoint
//! replays exactly the draws of an uninterrupted run.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BatchOutput, SequenceModel};
use crate::error::{Result, TlaError};
use crate::layers::ForwardCtx;
use crate::optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use crate::tensor::{Tape, Var};
use crate::wisdomnet::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the reconstruction loss in the combined objective.
    pub lambda: f64,
    /// Optional global gradient-norm limit.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 50,
            lambda: 0.5,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TlaError::Config(format!(
                "optimizer.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TlaError::Config(format!("optimizer.{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(TlaError::Config("optimizer.epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TlaError::Config("optimizer.batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TlaError::Config("optimizer.epochs must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TlaError::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(TlaError::Config("optimizer.clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Loss values of one step, before the parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub classification: f64,
    /// Batch-mean R_loss; zero for models without a decoder.
    pub reconstruction: f64,
    pub total: f64,
    /// Correct argmax predictions in the batch.
    pub correct: usize,
}

/// SplitMix64 finalizer over two words; used to derive per-epoch and
/// per-step seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B5_E9A1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Loss nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct Objective {
    pub classification: Var,
    pub reconstruction: Option<Var>,
    pub total: Var,
    pub output: BatchOutput,
}

/// Records `CCE + λ·R` for one batch on `tape`, which must have been built
/// from `model.params`.
pub fn objective(
    tape: &mut Tape,
    model: &SequenceModel,
    batch: &[Vec<usize>],
    labels: &[usize],
    lambda: f64,
    ctx: &mut ForwardCtx,
) -> Result<Objective> {
    if !(lambda >= 0.0) {
        return Err(TlaError::domain(format!("reconstruction weight must be non-negative, got {lambda}")));
    }
    if batch.len() != labels.len() {
        return Err(TlaError::dim(format!("{} sequences but {} labels", batch.len(), labels.len())));
    }
    let output = model.forward_batch(tape, batch, ctx)?;
    let classification = tape.cross_entropy(output.probs, labels)?;
    let total = match output.recon_loss {
        Some(r) if lambda > 0.0 => {
            let weighted = tape.scale(r, lambda)?;
            tape.add(classification, weighted)?
        }
        _ => classification,
    };
    Ok(Objective {
        classification,
        reconstruction: output.recon_loss,
        total,
        output,
    })
}

/// Forward, backward, and one Adam update on a single batch.
///
/// The objective is `CCE + λ·R` where `R` is the batch-mean reconstruction
/// loss. With `λ = 0` the gradient is that of the classification loss alone;
/// `R` is still computed and reported. A non-finite loss or gradient fails
/// with [`TlaError::Numeric`] carrying `step`, before any update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut SequenceModel,
    adam: &mut AdamState,
    batch: &[Vec<usize>],
    labels: &[usize],
    lambda: f64,
    clip_norm: Option<f64>,
    ctx: &mut ForwardCtx,
    step: usize,
) -> Result<StepLosses> {
    let mut tape = Tape::from_params(&model.params);
    let obj = objective(&mut tape, model, batch, labels, lambda, ctx)?;
    let (cce, total, out) = (obj.classification, obj.total, obj.output);
    let recon_value = obj.reconstruction.map_or(0.0, |r| tape.values(r)[0]);
    let losses = StepLosses {
        classification: tape.values(cce)[0],
        reconstruction: recon_value,
        total: tape.values(total)[0],
        correct: {
            let c = model.config.num_classes;
            let p = tape.values(out.probs);
            labels
                .iter()
                .enumerate()
                .filter(|&(r, &y)| argmax(&p[r * c..(r + 1) * c]) == y)
                .count()
        },
    };
    if !losses.total.is_finite() {
        return Err(TlaError::Numeric {
            step,
            message: format!(
                "loss is not finite (classification {}, reconstruction {})",
                losses.classification, losses.reconstruction
            ),
        });
    }
    tape.backward(total)?;
    model.params.zero_grad();
    model.params.accumulate_grads(&tape)?;
    if let Some(max) = clip_norm {
        clip_grad_norm(&mut model.params, max);
    }
    adam_step(adam, &mut model.params).map_err(|e| match e {
        TlaError::Numeric { message, .. } => TlaError::Numeric { step, message },
        other => other,
    })?;
    Ok(losses)
}

/// The TLA-Net update; identical to [`train_step`].
#[allow(clippy::too_many_arguments)]
pub fn tlanet_train_step(
    model: &mut SequenceModel,
    adam: &mut AdamState,
    batch: &[Vec<usize>],
    labels: &[usize],
    lambda: f64,
    ctx: &mut ForwardCtx,
    step: usize,
) -> Result<(f64, f64)> {
    let l = train_step(model, adam, batch, labels, lambda, None, ctx, step)?;
    Ok((l.classification, l.reconstruction))
}

/// Mean losses over one epoch, weighted by batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub classification_loss: f64,
    pub reconstruction_loss: f64,
    /// Fraction of training rows whose training-mode argmax was correct.
    pub running_accuracy: f64,
}

/// Model, optimizer state, and progress counters of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: SequenceModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
}

impl Trainer {
    pub fn new(model: SequenceModel, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params, config.adam());
        Ok(Trainer {
            model,
            adam,
            config,
            seed,
            epoch: 0,
            step: 0,
        })
    }

    /// Batch order for `epoch`, a pure function of the seed.
    pub fn epoch_order(&self, epoch: usize, rows: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..rows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, epoch as u64));
        order.shuffle(&mut rng);
        order
    }

    /// Runs one epoch over `data` and returns its record.
    pub fn run_epoch(&mut self, data: &[Vec<usize>], labels: &[usize]) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(TlaError::domain("training set is empty"));
        }
        if data.len() != labels.len() {
            return Err(TlaError::dim(format!("{} sequences but {} labels", data.len(), labels.len())));
        }
        let order = self.epoch_order(self.epoch, data.len());
        let (mut total, mut cls, mut rec, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(self.config.batch_size) {
            let batch: Vec<Vec<usize>> = idx.iter().map(|&i| data[i].clone()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut ctx = ForwardCtx::train(mix_seed(self.seed ^ 0xD1B5_4A32_D192_ED03, self.step as u64));
            let l = train_step(
                &mut self.model,
                &mut self.adam,
                &batch,
                &y,
                self.config.lambda,
                self.config.clip_norm,
                &mut ctx,
                self.step,
            )?;
            let w = idx.len() as f64;
            total += l.total * w;
            cls += l.classification * w;
            rec += l.reconstruction * w;
            correct += l.correct;
            self.step += 1;
        }
        let n = data.len() as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            loss: total / n,
            classification_loss: cls / n,
            reconstruction_loss: rec / n,
            running_accuracy: correct as f64 / n,
        };
        self.epoch += 1;
        Ok(record)
    }

    /// Runs the remaining epochs up to `config.epochs`, calling `on_epoch`
    /// after each.
    pub fn fit(
        &mut self,
        data: &[Vec<usize>],
        labels: &[usize],
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut records = Vec::new();
        while self.epoch < self.config.epochs {
            let r = self.run_epoch(data, labels)?;
            on_epoch(self, &r)?;
            records.push(r);
        }
        Ok(records)
    }
}

/// Eval-mode `(accuracy, CCE + λ·R)` over all rows as a single batch.
pub fn evaluate_objective(model: &SequenceModel, data: &[Vec<usize>], labels: &[usize], lambda: f64) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(TlaError::domain("cannot evaluate an empty set"));
    }
    let mut tape = Tape::from_params(&model.params);
    let obj = objective(&mut tape, model, data, labels, lambda, &mut ForwardCtx::eval())?;
    let c = model.config.num_classes;
    let p = tape.values(obj.output.probs);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(&p[r * c..(r + 1) * c]) == y)
        .count();
    Ok((correct as f64 / data.len() as f64, tape.values(obj.total)[0]))
}

/// Fraction of rows whose eval-mode argmax equals the label.
pub fn accuracy(model: &SequenceModel, data: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let outs = model.predict(data, 64)?;
    let correct = outs
        .iter()
        .zip(labels)
        .filter(|(o, &y)| argmax(&o.probabilities) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
