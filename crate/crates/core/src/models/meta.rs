//! Attention meta-learner that fuses three encodings into one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::layers::init_bound;
use crate::tensor::{ParamId, ParamSet, Tape, Var};

/// Scoring vector for the attention weights plus a simple recurrent layer
/// `h ← tanh(W_x·x + W_h·h + b)` that runs over the weighted inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaLearnerParams {
    /// `[1, width]`
    pub score: ParamId,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub width: usize,
}

impl MetaLearnerParams {
    pub fn init(ps: &mut ParamSet, prefix: &str, width: usize, rng: &mut impl Rng) -> Self {
        let bound = init_bound(width);
        MetaLearnerParams {
            score: ps.add_uniform(format!("{prefix}.score"), &[1, width], bound, rng),
            w_x: ps.add_uniform(format!("{prefix}.w_x"), &[width, width], bound, rng),
            w_h: ps.add_uniform(format!("{prefix}.w_h"), &[width, width], bound, rng),
            b: ps.add_uniform(format!("{prefix}.b"), &[width], bound, rng),
            width,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MetaOutput {
    /// Attention weights `[rows, 3]`; each row is a distribution.
    pub weights: Var,
    /// `Σ_k w_k·e_k`, the convex combination of the inputs.
    pub weighted_sum: Var,
    /// Final hidden state of the recurrent pass.
    pub output: Var,
}

/// Fuses three `[rows, width]` encodings.
///
/// Scores `s_k = e_k·a` are softmaxed per row into weights `w`. The weighted
/// sum seeds a recurrent pass over the sequence `w_1·e_1, w_2·e_2, w_3·e_3`,
/// whose last state is the fused encoding.
pub fn meta_learner_combine(tape: &mut Tape, m: &MetaLearnerParams, inputs: [Var; 3]) -> Result<MetaOutput> {
    let shape = tape.shape(inputs[0]).to_vec();
    if shape.len() != 2 {
        return Err(TlaError::dim(format!("meta-learner inputs must be [rows, width], got {shape:?}")));
    }
    for (k, &e) in inputs.iter().enumerate() {
        if tape.shape(e) != shape.as_slice() {
            return Err(TlaError::dim(format!(
                "meta-learner input {k} has shape {:?}, expected {shape:?}",
                tape.shape(e)
            )));
        }
    }
    if shape[1] != m.width {
        return Err(TlaError::dim(format!(
            "meta-learner width {} does not accept inputs of width {}",
            m.width, shape[1]
        )));
    }
    let scores = inputs
        .iter()
        .map(|&e| tape.linear(e, m.score.var(), None))
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat(&scores, 1)?;
    let weights = tape.softmax(scores)?;
    let mut scaled = Vec::with_capacity(3);
    for (k, &e) in inputs.iter().enumerate() {
        let wk = tape.columns(weights, k, 1)?;
        scaled.push(tape.scale_rows(e, wk)?);
    }
    let ab = tape.add(scaled[0], scaled[1])?;
    let weighted_sum = tape.add(ab, scaled[2])?;
    let mut h = weighted_sum;
    for &x in &scaled {
        let zx = tape.linear(x, m.w_x.var(), Some(m.b.var()))?;
        let zh = tape.linear(h, m.w_h.var(), None)?;
        let z = tape.add(zx, zh)?;
        h = tape.tanh(z)?;
    }
    Ok(MetaOutput {
        weights,
        weighted_sum,
        output: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(width: usize) -> (ParamSet, MetaLearnerParams) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MetaLearnerParams::init(&mut ps, "meta", width, &mut rng);
        (ps, m)
    }

    #[test]
    fn identical_inputs_fuse_to_the_input() {
        let (ps, m) = setup(4);
        let mut tape = Tape::from_params(&ps);
        let v = Tensor::matrix(2, 4, vec![0.3, -1.2, 0.7, 2.0, -0.4, 0.1, 0.9, -0.8]).unwrap();
        let e = tape.constant(v.clone());
        let out = meta_learner_combine(&mut tape, &m, [e, e, e]).unwrap();
        for (a, b) in tape.values(out.weighted_sum).iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_are_a_distribution() {
        let (ps, m) = setup(3);
        let mut tape = Tape::from_params(&ps);
        let a = tape.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let b = tape.constant(Tensor::matrix(1, 3, vec![-1.0, 0.5, 0.0]).unwrap());
        let c = tape.constant(Tensor::matrix(1, 3, vec![4.0, -2.0, 1.0]).unwrap());
        let out = meta_learner_combine(&mut tape, &m, [a, b, c]).unwrap();
        let w = tape.values(out.weights);
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(tape.shape(out.output), &[1, 3]);
    }

    #[test]
    fn zero_score_vector_gives_uniform_weights() {
        let (mut ps, m) = setup(2);
        ps.get_mut(m.score).values_mut().fill(0.0);
        let mut tape = Tape::from_params(&ps);
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::matrix(1, 2, vec![5.0, -3.0]).unwrap());
        let c = tape.constant(Tensor::matrix(1, 2, vec![0.0, 9.0]).unwrap());
        let out = meta_learner_combine(&mut tape, &m, [a, b, c]).unwrap();
        for &w in tape.values(out.weights) {
            assert_eq!(w, 1.0 / 3.0);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let (ps, m) = setup(2);
        let mut tape = Tape::from_params(&ps);
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(
            meta_learner_combine(&mut tape, &m, [a, b, a]),
            Err(TlaError::Dimension(_))
        ));
    }
}
