//! Recurrent and dense building blocks.
//!
//! Sequences are `Vec<Var>` with one entry per time step. Each entry is
//! either a vector `[dim]` or a batch `[rows, dim]`; every block accepts both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::tensor::{Activation, ParamId, ParamSet, Tape, Var};

/// `1/√fan_in`, the bound of the uniform initializer used everywhere.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Forward-pass mode plus the generator that draws dropout masks.
#[derive(Debug, Clone)]
pub struct ForwardCtx {
    pub training: bool,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Inverted dropout: surviving units are scaled by `1/(1 − rate)` so the
/// expectation is unchanged. Identity outside training.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, ctx: &mut ForwardCtx) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TlaError::domain(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !ctx.training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let n = tape.value(x).len();
    let mask = (0..n)
        .map(|_| if ctx.rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    tape.mul_const(x, mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_o: ParamId,
    pub w_g: ParamId,
    pub u_i: ParamId,
    pub u_f: ParamId,
    pub u_o: ParamId,
    pub u_g: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_g: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCellParams {
    /// Uniform initialization with the forget-gate bias set to +1.
    pub fn init(ps: &mut ParamSet, prefix: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let wb = init_bound(input_size);
        let ub = init_bound(hidden_size);
        let mut input_w = [ParamId(0); 4];
        let mut recur_w = [ParamId(0); 4];
        for (k, g) in ["i", "f", "o", "g"].iter().enumerate() {
            input_w[k] = ps.add_uniform(format!("{prefix}.w_{g}"), &[hidden_size, input_size], wb, rng);
        }
        for (k, g) in ["i", "f", "o", "g"].iter().enumerate() {
            recur_w[k] = ps.add_uniform(format!("{prefix}.u_{g}"), &[hidden_size, hidden_size], ub, rng);
        }
        let [w_i, w_f, w_o, w_g] = input_w;
        let [u_i, u_f, u_o, u_g] = recur_w;
        let b_i = ps.add_uniform(format!("{prefix}.b_i"), &[hidden_size], ub, rng);
        let b_f = ps.add_filled(format!("{prefix}.b_f"), &[hidden_size], 1.0);
        let b_o = ps.add_uniform(format!("{prefix}.b_o"), &[hidden_size], ub, rng);
        let b_g = ps.add_uniform(format!("{prefix}.b_g"), &[hidden_size], ub, rng);
        LstmCellParams {
            w_i,
            w_f,
            w_o,
            w_g,
            u_i,
            u_f,
            u_o,
            u_g,
            b_i,
            b_f,
            b_o,
            b_g,
            input_size,
            hidden_size,
        }
    }

    pub fn ids(&self) -> [ParamId; 12] {
        [
            self.w_i, self.w_f, self.w_o, self.w_g, self.u_i, self.u_f, self.u_o, self.u_g, self.b_i, self.b_f,
            self.b_o, self.b_g,
        ]
    }

    fn gates(&self) -> [(&'static str, ParamId, ParamId, ParamId); 4] {
        [
            ("input", self.w_i, self.u_i, self.b_i),
            ("forget", self.w_f, self.u_f, self.b_f),
            ("output", self.w_o, self.u_o, self.b_o),
            ("candidate", self.w_g, self.u_g, self.b_g),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    /// Zero state shaped like a step input with `rows` rows (`None` = vector).
    pub fn zeros(tape: &mut Tape, rows: Option<usize>, hidden: usize) -> Self {
        let shape = match rows {
            Some(r) => vec![r, hidden],
            None => vec![hidden],
        };
        LstmState {
            h: tape.zeros(&shape),
            c: tape.zeros(&shape),
        }
    }
}

fn step_rows(tape: &Tape, x: Var) -> Option<usize> {
    match tape.shape(x) {
        [r, _] => Some(*r),
        _ => None,
    }
}

/// One LSTM step:
/// `i,f,o = σ(W·x + U·h + b)`, `g = tanh(W_g·x + U_g·h + b_g)`,
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_step(tape: &mut Tape, p: &LstmCellParams, x: Var, s: &LstmState) -> Result<LstmState> {
    let xw = tape.shape(x).last().copied().unwrap_or(0);
    let hw = tape.shape(s.h).last().copied().unwrap_or(0);
    for (name, w, u, b) in p.gates() {
        let ws = tape.shape(w.var());
        if ws != [p.hidden_size, xw] {
            return Err(TlaError::dim(format!(
                "{name} gate input weights {:?} do not accept input width {xw}",
                ws
            )));
        }
        let us = tape.shape(u.var());
        if us != [p.hidden_size, hw] {
            return Err(TlaError::dim(format!(
                "{name} gate recurrent weights {:?} do not accept hidden width {hw}",
                us
            )));
        }
        if tape.shape(b.var()) != [p.hidden_size] {
            return Err(TlaError::dim(format!("{name} gate bias has the wrong length")));
        }
    }
    if tape.shape(s.c) != tape.shape(s.h) {
        return Err(TlaError::dim("cell and hidden state shapes differ"));
    }
    let pre = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId| -> Result<Var> {
        let a = tape.linear(x, w.var(), Some(b.var()))?;
        let r = tape.linear(s.h, u.var(), None)?;
        tape.add(a, r)
    };
    let zi = pre(tape, p.w_i, p.u_i, p.b_i)?;
    let zf = pre(tape, p.w_f, p.u_f, p.b_f)?;
    let zo = pre(tape, p.w_o, p.u_o, p.b_o)?;
    let zg = pre(tape, p.w_g, p.u_g, p.b_g)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let o = tape.sigmoid(zo)?;
    let g = tape.tanh(zg)?;
    let fc = tape.mul(f, s.c)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedLstmParams {
    pub layers: Vec<LstmCellParams>,
    pub dropout: f64,
}

impl StackedLstmParams {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        num_layers: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|k| {
                let inp = if k == 0 { input_size } else { hidden_size };
                LstmCellParams::init(ps, &format!("{prefix}.l{k}"), inp, hidden_size, rng)
            })
            .collect();
        StackedLstmParams { layers, dropout }
    }

    pub fn hidden_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_size)
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_size)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(TlaError::Config("stacked LSTM needs at least one layer".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[1].input_size != pair[0].hidden_size {
                return Err(TlaError::dim(format!(
                    "layer input size {} does not match previous hidden size {}",
                    pair[1].input_size, pair[0].hidden_size
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    /// Top-layer hidden vector at every step.
    pub outputs: Vec<Var>,
    /// Final state of each layer, bottom first.
    pub finals: Vec<LstmState>,
}

impl LstmOutput {
    pub fn last_hidden(&self) -> Var {
        *self.outputs.last().expect("non-empty sequence")
    }
}

/// Unrolls a stacked LSTM over `seq`, with inverted dropout between layers
/// while training.
pub fn lstm_forward(tape: &mut Tape, p: &StackedLstmParams, seq: &[Var], ctx: &mut ForwardCtx) -> Result<LstmOutput> {
    if seq.is_empty() {
        return Err(TlaError::domain("LSTM input sequence is empty"));
    }
    p.validate()?;
    let rows = step_rows(tape, seq[0]);
    let mut current = seq.to_vec();
    let mut finals = Vec::with_capacity(p.layers.len());
    for (k, layer) in p.layers.iter().enumerate() {
        if k > 0 && p.dropout > 0.0 {
            for v in current.iter_mut() {
                *v = dropout(tape, *v, p.dropout, ctx)?;
            }
        }
        let mut state = LstmState::zeros(tape, rows, layer.hidden_size);
        let mut outs = Vec::with_capacity(current.len());
        for &x in &current {
            state = lstm_cell_step(tape, layer, x, &state)?;
            outs.push(state.h);
        }
        finals.push(state);
        current = outs;
    }
    Ok(LstmOutput {
        outputs: current,
        finals,
    })
}

#[derive(Debug, Clone)]
pub struct BiLstmOutput {
    /// Step `t` is `concat(fwd_h[t], bwd_h[T−1−t])`.
    pub outputs: Vec<Var>,
    pub fwd_final: Var,
    pub bwd_final: Var,
}

/// Forward stack over `seq`, backward stack over `seq` reversed.
pub fn bilstm_forward(
    tape: &mut Tape,
    fwd: &StackedLstmParams,
    bwd: &StackedLstmParams,
    seq: &[Var],
    ctx: &mut ForwardCtx,
) -> Result<BiLstmOutput> {
    if fwd.hidden_size() != bwd.hidden_size() {
        return Err(TlaError::dim(format!(
            "bidirectional hidden sizes differ: forward {} vs backward {}",
            fwd.hidden_size(),
            bwd.hidden_size()
        )));
    }
    let f = lstm_forward(tape, fwd, seq, ctx)?;
    let reversed: Vec<Var> = seq.iter().rev().copied().collect();
    let b = lstm_forward(tape, bwd, &reversed, ctx)?;
    let axis = tape.shape(seq[0]).len() - 1;
    let t_len = seq.len();
    let outputs = (0..t_len)
        .map(|t| tape.concat(&[f.outputs[t], b.outputs[t_len - 1 - t]], axis))
        .collect::<Result<Vec<_>>>()?;
    Ok(BiLstmOutput {
        outputs,
        fwd_final: f.last_hidden(),
        bwd_final: b.last_hidden(),
    })
}

/// Tiles one encoding into a length-`steps` sequence. Every step aliases the
/// same tape variable, so backward sums the per-step gradients.
pub fn repeat_vector(v: Var, steps: usize) -> Result<Vec<Var>> {
    if steps == 0 {
        return Err(TlaError::domain("repeat_vector length must be at least 1"));
    }
    Ok(vec![v; steps])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenseActivation {
    Linear,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: DenseActivation,
}

impl DenseParams {
    pub fn init(ps: &mut ParamSet, prefix: &str, input: usize, output: usize, activation: DenseActivation, rng: &mut impl Rng) -> Self {
        let bound = init_bound(input);
        let w = ps.add_uniform(format!("{prefix}.w"), &[output, input], bound, rng);
        let b = ps.add_uniform(format!("{prefix}.b"), &[output], bound, rng);
        DenseParams { w, b, activation }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        dense_forward(tape, self.w.var(), self.b.var(), x, self.activation)
    }
}

/// `activation(W·x + b)`.
pub fn dense_forward(tape: &mut Tape, w: Var, b: Var, x: Var, activation: DenseActivation) -> Result<Var> {
    let z = tape.linear(x, w, Some(b))?;
    match activation {
        DenseActivation::Linear => Ok(z),
        DenseActivation::Tanh => tape.activation(z, Activation::Tanh),
        DenseActivation::Sigmoid => tape.activation(z, Activation::Sigmoid),
        DenseActivation::Relu => tape.activation(z, Activation::Relu),
        DenseActivation::Softmax => tape.softmax(z),
    }
}

pub const PAD_ID: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
    pub padding: usize,
}

impl EmbeddingTable {
    /// Uniform rows with the padding row zeroed.
    pub fn init(ps: &mut ParamSet, prefix: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = ps.add_uniform(format!("{prefix}.table"), &[vocab_size, dim], init_bound(dim), rng);
        let t = ps.get_mut(table);
        t.values_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
        EmbeddingTable {
            table,
            vocab_size,
            dim,
            padding: PAD_ID,
        }
    }
}

/// Gathers one `[dim]` row per id into an `[ids, dim]` matrix.
pub fn embedding_lookup(tape: &mut Tape, t: &EmbeddingTable, ids: &[usize]) -> Result<Var> {
    tape.gather(t.table.var(), ids, Some(t.padding))
}

/// Embeds an equal-length batch into one `[batch, dim]` matrix per step.
pub fn embed_batch(tape: &mut Tape, t: &EmbeddingTable, batch: &[Vec<usize>]) -> Result<Vec<Var>> {
    let len = batch.first().map_or(0, Vec::len);
    if len == 0 {
        return Err(TlaError::domain("empty token sequence"));
    }
    if batch.iter().any(|s| s.len() != len) {
        return Err(TlaError::dim("batch sequences must share one padded length"));
    }
    (0..len)
        .map(|step| {
            let ids: Vec<usize> = batch.iter().map(|s| s[step]).collect();
            embedding_lookup(tape, t, &ids)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn zero_all(ps: &mut ParamSet) {
        for t in ps.tensors_mut() {
            t.values_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_cell_gives_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let p = LstmCellParams::init(&mut ps, "c", 3, 2, &mut rng);
        zero_all(&mut ps);
        let mut tape = Tape::from_params(&ps);
        let x = tape.constant(Tensor::vector(vec![0.4, -1.0, 2.0]));
        let s = LstmState::zeros(&mut tape, None, 2);
        let out = lstm_cell_step(&mut tape, &p, x, &s).unwrap();
        assert_eq!(tape.values(out.h), &[0.0, 0.0]);
        assert_eq!(tape.values(out.c), &[0.0, 0.0]);
    }

    #[test]
    fn forget_bias_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let p = LstmCellParams::init(&mut ps, "c", 1, 1, &mut rng);
        zero_all(&mut ps);
        ps.get_mut(p.b_f).values_mut()[0] = 10.0;
        let mut tape = Tape::from_params(&ps);
        let x = tape.constant(Tensor::vector(vec![0.7]));
        let s = LstmState {
            h: tape.constant(Tensor::vector(vec![0.0])),
            c: tape.constant(Tensor::vector(vec![1.0])),
        };
        let out = lstm_cell_step(&mut tape, &p, x, &s).unwrap();
        // f = σ(10), i = o = 0.5, g = 0
        let f = 1.0 / (1.0 + (-10f64).exp());
        assert!((tape.values(out.c)[0] - f).abs() < 1e-15);
        assert!((tape.values(out.c)[0] - 0.99995).abs() < 1e-5);
        assert!((tape.values(out.h)[0] - 0.5 * f.tanh()).abs() < 1e-15);
        assert!((tape.values(out.h)[0] - 0.38077).abs() < 5e-5);
    }

    #[test]
    fn cell_dimension_error_names_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let p = LstmCellParams::init(&mut ps, "c", 3, 2, &mut rng);
        let mut tape = Tape::from_params(&ps);
        let x = tape.constant(Tensor::vector(vec![0.0; 4]));
        let s = LstmState::zeros(&mut tape, None, 2);
        let err = lstm_cell_step(&mut tape, &p, x, &s).unwrap_err().to_string();
        assert!(err.contains("input gate"), "{err}");
    }

    #[test]
    fn stacked_reference_width_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::new();
        let p = StackedLstmParams::init(&mut ps, "s", 5, 128, 3, 0.2, &mut rng);
        let mut tape = Tape::from_params(&ps);
        let seq: Vec<Var> = (0..20)
            .map(|t| tape.constant(Tensor::vector(vec![t as f64 * 0.01; 5])))
            .collect();
        let out = lstm_forward(&mut tape, &p, &seq, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(out.outputs.len(), 20);
        assert!(out.outputs.iter().all(|&h| tape.shape(h) == [128]));
        assert_eq!(out.finals.len(), 3);
    }

    #[test]
    fn eval_mode_ignores_seed_and_empty_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        let p = StackedLstmParams::init(&mut ps, "s", 2, 3, 2, 0.5, &mut rng);
        let run = |ctx: &mut ForwardCtx| {
            let mut tape = Tape::from_params(&ps);
            let seq: Vec<Var> = (0..4)
                .map(|t| tape.constant(Tensor::vector(vec![0.3 * t as f64, -0.2])))
                .collect();
            let out = lstm_forward(&mut tape, &p, &seq, ctx).unwrap();
            tape.values(out.last_hidden()).to_vec()
        };
        let mut a = ForwardCtx::eval();
        a.rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ForwardCtx::eval();
        b.rng = ChaCha8Rng::seed_from_u64(999);
        assert_eq!(run(&mut a), run(&mut b));
        assert_ne!(run(&mut ForwardCtx::train(1)), run(&mut ForwardCtx::train(2)));

        let mut tape = Tape::from_params(&ps);
        assert!(matches!(
            lstm_forward(&mut tape, &p, &[], &mut ForwardCtx::eval()),
            Err(TlaError::Domain(_))
        ));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.5; 100]));
        let mut ctx = ForwardCtx::train(42);
        let mut total = 0.0;
        let trials = 10_000;
        for _ in 0..trials {
            let y = dropout(&mut tape, x, 0.2, &mut ctx).unwrap();
            total += tape.values(y).iter().sum::<f64>() / 100.0;
        }
        let mean = total / trials as f64;
        assert!((mean - 1.5).abs() / 1.5 < 0.02, "mean {mean}");
    }

    #[test]
    fn bilstm_palindrome_symmetry_and_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = ParamSet::new();
        let fwd = StackedLstmParams::init(&mut ps, "f", 2, 3, 1, 0.0, &mut rng);
        let mut tape = Tape::from_params(&ps);
        let vals = [vec![0.1, 0.2], vec![-0.5, 0.9], vec![0.1, 0.2]];
        let seq: Vec<Var> = vals.iter().map(|v| tape.constant(Tensor::vector(v.clone()))).collect();
        let out = bilstm_forward(&mut tape, &fwd, &fwd, &seq, &mut ForwardCtx::eval()).unwrap();
        for &o in &out.outputs {
            assert_eq!(tape.shape(o), &[6]);
        }
        let f = lstm_forward(&mut tape, &fwd, &seq, &mut ForwardCtx::eval()).unwrap();
        let rev: Vec<Var> = seq.iter().rev().copied().collect();
        let b = lstm_forward(&mut tape, &fwd, &rev, &mut ForwardCtx::eval()).unwrap();
        for t in 0..3 {
            assert_eq!(tape.values(f.outputs[t]), tape.values(b.outputs[t]));
        }
    }

    #[test]
    fn bilstm_hidden_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = ParamSet::new();
        let fwd = StackedLstmParams::init(&mut ps, "f", 2, 3, 1, 0.0, &mut rng);
        let bwd = StackedLstmParams::init(&mut ps, "b", 2, 4, 1, 0.0, &mut rng);
        let mut tape = Tape::from_params(&ps);
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(bilstm_forward(&mut tape, &fwd, &bwd, &[x], &mut ForwardCtx::eval()).is_err());
    }

    #[test]
    fn bilstm_zero_params_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = ParamSet::new();
        let fwd = StackedLstmParams::init(&mut ps, "f", 2, 3, 2, 0.0, &mut rng);
        let bwd = StackedLstmParams::init(&mut ps, "b", 2, 3, 2, 0.0, &mut rng);
        zero_all(&mut ps);
        let mut tape = Tape::from_params(&ps);
        let seq: Vec<Var> = (0..3).map(|_| tape.constant(Tensor::from_rows(&vec![vec![1.0, -1.0]; 2]).unwrap())).collect();
        let out = bilstm_forward(&mut tape, &fwd, &bwd, &seq, &mut ForwardCtx::eval()).unwrap();
        for &o in &out.outputs {
            assert_eq!(tape.shape(o), &[2, 6]);
            assert!(tape.values(o).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn repeat_vector_cases() {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
        assert_eq!(repeat_vector(v, 1).unwrap(), vec![v]);
        assert!(matches!(repeat_vector(v, 0), Err(TlaError::Domain(_))));
        let rows = tape.repeat_rows(v, 3).unwrap();
        assert_eq!(tape.values(rows), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let seq = repeat_vector(v, 3).unwrap();
        let stacked = tape.concat(&seq, 0).unwrap();
        let s = tape.sum(stacked).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v), &[3.0, 3.0]);
    }

    #[test]
    fn dense_identity_and_softmax_head() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let x = tape.constant(Tensor::vector(vec![0.25, -4.0]));
        let y = dense_forward(&mut tape, w, b, x, DenseActivation::Linear).unwrap();
        assert_eq!(tape.values(y), &[0.25, -4.0]);

        let w3 = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.0], vec![-1.0, 3.0]]).unwrap());
        let b3 = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let p = dense_forward(&mut tape, w3, b3, x, DenseActivation::Softmax).unwrap();
        assert!((tape.values(p).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_padding_and_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let e = EmbeddingTable::init(&mut ps, "emb", 5, 3, &mut rng);
        let mut tape = Tape::from_params(&ps);
        let pads = embedding_lookup(&mut tape, &e, &[0, 0, 0]).unwrap();
        assert!(tape.values(pads).iter().all(|&v| v == 0.0));
        let looked = embedding_lookup(&mut tape, &e, &[2, 4, 2, 0]).unwrap();
        let s = tape.sum(looked).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(e.table.var());
        assert_eq!(&g[0..3], &[0.0; 3]);
        assert_eq!(&g[3..6], &[0.0; 3]);
        assert_eq!(&g[6..9], &[2.0; 3]);
        assert_eq!(&g[12..15], &[1.0; 3]);
        assert!(embedding_lookup(&mut tape, &e, &[5]).unwrap_err().to_string().contains('5'));
    }
}
