//! Finite-difference verification of the tape's backward rules.
//!
//! Every check builds a scalar from a small problem, runs backward once and
//! compares each gradient entry with the central difference
//! `(f(x+h) − f(x−h)) / 2h`, `h = 1e-5`. The error measure is
//! `|a − n| / max(|a|, |n|, 1e-3)`; the floor keeps entries whose true
//! gradient is near zero from dominating through rounding noise.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::layers::{
    bilstm_forward, dense_forward, dropout, embed_batch, lstm_cell_step, lstm_forward, repeat_vector, DenseActivation,
    EmbeddingTable, ForwardCtx, LstmCellParams, LstmState, StackedLstmParams, PAD_ID,
};
use crate::loss::r_loss_tape;
use crate::models::train::objective;
use crate::models::word2vec::{accumulate_pair_grad, pair_loss, Word2VecModel};
use crate::models::{meta_learner_combine, ClassifierConfig, ClassifierTap, EncoderViews, MetaLearnerParams, ModelKind, SequenceModel};
use crate::loss::ReconstructionLoss;
use crate::tensor::{ParamSet, Tape, Tensor, Var};
use crate::wisdomnet::WisdomNetHead;

pub const STEP: f64 = 1e-5;
pub const ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Ops,
    Layers,
    Models,
    All,
}

impl Scope {
    pub fn tolerance(self) -> f64 {
        match self {
            Scope::Ops => 1e-6,
            Scope::Layers => 1e-4,
            Scope::Models | Scope::All => 1e-3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Ops => "ops",
            Scope::Layers => "layers",
            Scope::Models => "models",
            Scope::All => "all",
        }
    }
}

impl FromStr for Scope {
    type Err = TlaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "layers" => Ok(Scope::Layers),
            "models" => Ok(Scope::Models),
            "all" => Ok(Scope::All),
            other => Err(TlaError::Config(format!("unknown gradcheck scope '{other}' (ops, layers, models, all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub scope: Scope,
    pub tolerance: f64,
    pub max_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: String,
    pub entries: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    /// The failing check with the largest error relative to its tolerance.
    pub fn worst_failure(&self) -> Option<&CheckResult> {
        self.results
            .iter()
            .filter(|r| !r.passed)
            .max_by(|a, b| (a.max_error / a.tolerance).total_cmp(&(b.max_error / b.tolerance)))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let _ = writeln!(
                s,
                "{} {:<7} {:<34} max_err {:.3e} (tol {:.0e}, {} entries){}",
                if r.passed { "PASS" } else { "FAIL" },
                r.scope.as_str(),
                r.name,
                r.max_error,
                r.tolerance,
                r.entries,
                if r.passed { String::new() } else { format!(" worst at {}", r.worst) }
            );
        }
        let failed = self.results.iter().filter(|r| !r.passed).count();
        let _ = writeln!(s, "{} checks, {failed} failed, {:.2} s", self.results.len(), self.seconds);
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// Compares tape gradients of `build` with central differences for every
/// entry of `params` that `frozen` does not exclude. Embedding padding rows
/// are frozen by design and excluded by the built-in suites.
pub fn check_tape(
    name: &str,
    scope: Scope,
    params: &ParamSet,
    frozen: &dyn Fn(usize, usize) -> bool,
    build: &dyn Fn(&mut Tape) -> Result<Var>,
) -> Result<CheckResult> {
    let mut tape = Tape::from_params(params);
    let loss = build(&mut tape)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = (0..params.len()).map(|i| tape.grad(Var(i)).to_vec()).collect();
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut t = Tape::from_params(ps);
        let l = build(&mut t)?;
        Ok(t.values(l)[0])
    };
    let mut work = params.clone();
    let mut worst = (0.0f64, String::new());
    let mut entries = 0;
    for (i, t) in params.tensors().iter().enumerate() {
        for j in 0..t.len() {
            if frozen(i, j) {
                continue;
            }
            let x = t.values()[j];
            work.tensors_mut()[i].values_mut()[j] = x + STEP;
            let up = eval(&work)?;
            work.tensors_mut()[i].values_mut()[j] = x - STEP;
            let down = eval(&work)?;
            work.tensors_mut()[i].values_mut()[j] = x;
            let numeric = (up - down) / (2.0 * STEP);
            let e = relative_error(analytic[i][j], numeric);
            if e > worst.0 || worst.1.is_empty() || e.is_nan() {
                worst = (if e.is_nan() { f64::INFINITY } else { e }, format!("{}[{j}]", params.names()[i]));
            }
            entries += 1;
        }
    }
    let tolerance = scope.tolerance();
    Ok(CheckResult {
        name: name.into(),
        scope,
        tolerance,
        max_error: worst.0,
        worst: worst.1,
        entries,
        passed: worst.0 <= tolerance,
    })
}

fn never(_: usize, _: usize) -> bool {
    false
}

/// Fixed pseudo-random weights that turn any set of outputs into a scalar
/// with non-uniform upstream gradients.
fn project(tape: &mut Tape, outs: &[Var], seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total: Option<Var> = None;
    for &o in outs {
        let w: Vec<f64> = (0..tape.values(o).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weighted = tape.mul_const(o, w)?;
        let s = tape.sum(weighted)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    total.ok_or_else(|| TlaError::domain("nothing to project"))
}

struct Builder {
    ps: ParamSet,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder {
            ps: ParamSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, name: &str, shape: &[usize], lo: f64, hi: f64) -> Var {
        let n = shape.iter().product();
        let v = (0..n).map(|_| self.rng.gen_range(lo..hi)).collect();
        self.ps.add(name, Tensor::new(shape.to_vec(), v).expect("valid shape")).var()
    }

    /// Values bounded away from zero, for kinked functions.
    fn away_from_zero(&mut self, name: &str, shape: &[usize]) -> Var {
        let n = shape.iter().product();
        let v = (0..n)
            .map(|_| {
                let m = self.rng.gen_range(0.2..1.0);
                if self.rng.gen_bool(0.5) { m } else { -m }
            })
            .collect();
        self.ps.add(name, Tensor::new(shape.to_vec(), v).expect("valid shape")).var()
    }
}

type Problem = (ParamSet, Box<dyn Fn(&mut Tape) -> Result<Var>>);

fn op_problems() -> Vec<(&'static str, Problem)> {
    let mut out: Vec<(&'static str, Problem)> = Vec::new();
    macro_rules! op {
        ($name:expr, $seed:expr, |$b:ident| $setup:block, |$t:ident, $vars:pat_param| $body:expr) => {{
            let mut $b = Builder::new($seed);
            let vars = $setup;
            let build = move |$t: &mut Tape| -> Result<Var> {
                let $vars = vars.clone();
                let y = $body?;
                project($t, &[y], $seed)
            };
            out.push(($name, ($b.ps, Box::new(build))));
        }};
    }
    op!("matmul", 1, |b| { (b.uniform("a", &[3, 4], -1.0, 1.0), b.uniform("b", &[4, 2], -1.0, 1.0)) }, |t, (x, y)| t.matmul(x, y));
    op!("linear/batch+bias", 2, |b| { (b.uniform("x", &[3, 4], -1.0, 1.0), b.uniform("w", &[2, 4], -1.0, 1.0), b.uniform("b", &[2], -1.0, 1.0)) }, |t, (x, w, bb)| t.linear(x, w, Some(bb)));
    op!("linear/vector", 3, |b| { (b.uniform("x", &[4], -1.0, 1.0), b.uniform("w", &[3, 4], -1.0, 1.0)) }, |t, (x, w)| t.linear(x, w, None));
    op!("add", 4, |b| { (b.uniform("a", &[2, 3], -1.0, 1.0), b.uniform("b", &[2, 3], -1.0, 1.0)) }, |t, (x, y)| t.add(x, y));
    op!("sub", 5, |b| { (b.uniform("a", &[2, 3], -1.0, 1.0), b.uniform("b", &[2, 3], -1.0, 1.0)) }, |t, (x, y)| t.sub(x, y));
    op!("mul", 6, |b| { (b.uniform("a", &[2, 3], -1.0, 1.0), b.uniform("b", &[2, 3], -1.0, 1.0)) }, |t, (x, y)| t.mul(x, y));
    op!("add_bias", 7, |b| { (b.uniform("x", &[3, 2], -1.0, 1.0), b.uniform("b", &[2], -1.0, 1.0)) }, |t, (x, y)| t.add_bias(x, y));
    op!("scale", 8, |b| { b.uniform("x", &[2, 3], -1.0, 1.0) }, |t, x| t.scale(x, -1.7));
    op!("mul_const", 9, |b| { b.uniform("x", &[2, 3], -1.0, 1.0) }, |t, x| t.mul_const(x, vec![0.0, 1.25, 2.0, -1.0, 0.5, 1.25]));
    op!("tanh", 10, |b| { b.uniform("x", &[2, 3], -2.0, 2.0) }, |t, x| t.tanh(x));
    op!("sigmoid", 11, |b| { b.uniform("x", &[2, 3], -3.0, 3.0) }, |t, x| t.sigmoid(x));
    op!("relu", 12, |b| { b.away_from_zero("x", &[2, 4]) }, |t, x| t.relu(x));
    op!("softmax/rows", 13, |b| { b.uniform("x", &[2, 4], -2.0, 2.0) }, |t, x| t.softmax(x));
    op!("softmax/vector", 14, |b| { b.uniform("x", &[5], -2.0, 2.0) }, |t, x| t.softmax(x));
    op!("concat/axis0", 15, |b| { (b.uniform("a", &[1, 3], -1.0, 1.0), b.uniform("b", &[2, 3], -1.0, 1.0)) }, |t, (x, y)| t.concat(&[x, y], 0));
    op!("concat/axis1", 16, |b| { (b.uniform("a", &[2, 1], -1.0, 1.0), b.uniform("b", &[2, 3], -1.0, 1.0)) }, |t, (x, y)| t.concat(&[x, y], 1));
    op!("sum", 17, |b| { b.uniform("x", &[2, 3], -1.0, 1.0) }, |t, x| t.sum(x));
    op!("mean", 18, |b| { b.uniform("x", &[2, 3], -1.0, 1.0) }, |t, x| t.mean(x));
    op!("repeat_rows", 19, |b| { b.uniform("v", &[3], -1.0, 1.0) }, |t, x| t.repeat_rows(x, 4));
    op!("gather", 20, |b| { b.uniform("table", &[5, 2], -1.0, 1.0) }, |t, x| t.gather(x, &[3, 1, 3, 4], None));
    op!("columns", 21, |b| { b.uniform("x", &[2, 5], -1.0, 1.0) }, |t, x| t.columns(x, 1, 3));
    op!("scale_rows", 22, |b| { (b.uniform("x", &[3, 2], -1.0, 1.0), b.uniform("w", &[3, 1], -1.0, 1.0)) }, |t, (x, w)| t.scale_rows(x, w));
    op!("cross_entropy", 23, |b| { b.uniform("p", &[3, 3], 0.1, 0.9) }, |t, p| t.cross_entropy(p, &[2, 0, 1]));
    op!("bce", 24, |b| { b.uniform("p", &[2, 3], 0.1, 0.9) }, |t, p| t.bce(p, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
    op!("map/cube", 25, |b| { b.uniform("x", &[2, 3], -1.0, 1.0) }, |t, x| t.map(x, |v| v * v * v, |v| 3.0 * v * v));
    out
}

/// Negative control: a map whose declared derivative is wrong by a factor
/// of two. Must fail.
pub fn corrupted_check() -> Result<CheckResult> {
    let mut b = Builder::new(99);
    let x = b.uniform("x", &[2, 3], -1.0, 1.0);
    check_tape("corrupted-map (must fail)", Scope::Ops, &b.ps, &never, &move |t| {
        let y = t.map(x, |v| v * v, |v| 4.0 * v)?;
        project(t, &[y], 99)
    })
}

fn layer_problems() -> Vec<(&'static str, Problem)> {
    let mut out: Vec<(&'static str, Problem)> = Vec::new();

    let mut b = Builder::new(31);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cell = LstmCellParams::init(&mut b.ps, "cell", 3, 4, &mut rng);
    let x = b.uniform("x", &[2, 3], -1.0, 1.0);
    let h0 = b.uniform("h0", &[2, 4], -0.5, 0.5);
    let c0 = b.uniform("c0", &[2, 4], -0.5, 0.5);
    out.push((
        "lstm_cell_step",
        (
            b.ps,
            Box::new(move |t: &mut Tape| {
                let s = lstm_cell_step(t, &cell, x, &LstmState { h: h0, c: c0 })?;
                project(t, &[s.h, s.c], 31)
            }),
        ),
    ));

    let mut b = Builder::new(32);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let stack = StackedLstmParams::init(&mut b.ps, "lstm", 2, 3, 2, 0.3, &mut rng);
    let seq: Vec<Var> = (0..10).map(|k| b.uniform(&format!("x{k}"), &[2, 2], -1.0, 1.0)).collect();
    out.push((
        "lstm_forward/2 layers, 10 steps",
        (
            b.ps,
            Box::new(move |t: &mut Tape| {
                let mut ctx = ForwardCtx::train(5);
                let o = lstm_forward(t, &stack, &seq, &mut ctx)?;
                let mut outs = o.outputs.clone();
                outs.extend(o.finals.iter().flat_map(|s| [s.h, s.c]));
                project(t, &outs, 32)
            }),
        ),
    ));

    let mut b = Builder::new(33);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let fwd = StackedLstmParams::init(&mut b.ps, "fwd", 2, 3, 1, 0.0, &mut rng);
    let bwd = StackedLstmParams::init(&mut b.ps, "bwd", 2, 3, 1, 0.0, &mut rng);
    let seq: Vec<Var> = (0..6).map(|k| b.uniform(&format!("x{k}"), &[2, 2], -1.0, 1.0)).collect();
    out.push((
        "bilstm_forward/6 steps",
        (
            b.ps,
            Box::new(move |t: &mut Tape| {
                let o = bilstm_forward(t, &fwd, &bwd, &seq, &mut ForwardCtx::eval())?;
                let mut outs = o.outputs.clone();
                outs.extend([o.fwd_final, o.bwd_final]);
                project(t, &outs, 33)
            }),
        ),
    ));

    for (i, act) in [
        DenseActivation::Linear,
        DenseActivation::Tanh,
        DenseActivation::Sigmoid,
        DenseActivation::Softmax,
    ]
    .into_iter()
    .enumerate()
    {
        let mut b = Builder::new(40 + i as u64);
        let x = b.uniform("x", &[3, 4], -1.0, 1.0);
        let w = b.uniform("w", &[2, 4], -1.0, 1.0);
        let bias = b.uniform("b", &[2], -1.0, 1.0);
        let name = match act {
            DenseActivation::Linear => "dense/linear",
            DenseActivation::Tanh => "dense/tanh",
            DenseActivation::Sigmoid => "dense/sigmoid",
            _ => "dense/softmax",
        };
        out.push((
            name,
            (
                b.ps,
                Box::new(move |t: &mut Tape| {
                    let y = dense_forward(t, w, bias, x, act)?;
                    project(t, &[y], 40)
                }),
            ),
        ));
    }

    let mut b = Builder::new(45);
    let x = b.uniform("x", &[3, 4], -1.0, 1.0);
    out.push((
        "dropout/fixed mask",
        (
            b.ps,
            Box::new(move |t: &mut Tape| {
                let y = dropout(t, x, 0.4, &mut ForwardCtx::train(8))?;
                project(t, &[y], 45)
            }),
        ),
    ));

    let mut b = Builder::new(46);
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let emb = EmbeddingTable::init(&mut b.ps, "embed", 6, 3, &mut rng);
    let batch = vec![vec![1, 4, 4, 0], vec![5, 2, 0, 0]];
    out.push((
        "embedding/padded batch",
        (
            b.ps,
            Box::new(move |t: &mut Tape| {
                let seq = embed_batch(t, &emb, &batch)?;
                project(t, &seq, 46)
            }),
        ),
    ));

    let mut b = Builder::new(47);
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let stack = StackedLstmParams::init(&mut b.ps, "dec", 3, 3, 1, 0.0, &mut rng);
    let v = b.uniform("v", &[2, 3], -1.0, 1.0);
    out.push((
        "repeat_vector→lstm/5 steps",
        (
            b.ps,
            Box::new(move |t: &mut Tape| {
                let seq = repeat_vector(v, 5)?;
                let o = lstm_forward(t, &stack, &seq, &mut ForwardCtx::eval())?;
                project(t, &o.outputs, 47)
            }),
        ),
    ));

    let mut b = Builder::new(48);
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    let meta = MetaLearnerParams::init(&mut b.ps, "meta", 3, &mut rng);
    let e: Vec<Var> = (0..3).map(|k| b.uniform(&format!("e{k}"), &[2, 3], -1.0, 1.0)).collect();
    out.push((
        "meta_learner_combine",
        (
            b.ps,
            Box::new(move |t: &mut Tape| {
                let m = meta_learner_combine(t, &meta, [e[0], e[1], e[2]])?;
                project(t, &[m.output, m.weights, m.weighted_sum], 48)
            }),
        ),
    ));

    let mut b = Builder::new(49);
    let inp: Vec<Var> = (0..4).map(|k| b.uniform(&format!("i{k}"), &[2, 3], -1.0, 1.0)).collect();
    let outp: Vec<Var> = (0..4).map(|k| b.uniform(&format!("o{k}"), &[2, 3], -1.0, 1.0)).collect();
    out.push(("r_loss", (b.ps, Box::new(move |t: &mut Tape| r_loss_tape(t, &inp, &outp)))));

    out
}

fn is_pad_row(ps: &ParamSet, i: usize, j: usize) -> bool {
    let t = &ps.tensors()[i];
    ps.names()[i].ends_with(".table") && t.rank() == 2 && j / t.shape()[1] == PAD_ID
}

fn model_config(vocab: usize) -> ClassifierConfig {
    ClassifierConfig {
        vocab_size: vocab,
        embed_dim: 3,
        hidden_size: 3,
        num_layers: 2,
        dropout: 0.3,
        num_classes: 3,
        max_len: 4,
        dense_hidden: 3,
        seed: 17,
        ..ClassifierConfig::default()
    }
}

fn model_variants() -> Vec<(String, ModelKind, ClassifierConfig)> {
    let base = model_config(7);
    let mut v = vec![
        ("lstm".to_string(), ModelKind::Lstm, base.clone()),
        ("bilstm".into(), ModelKind::Bilstm, base.clone()),
        ("lstm-ae/mse".into(), ModelKind::LstmAe, base.clone()),
        (
            "lstm-ae/bce".into(),
            ModelKind::LstmAe,
            ClassifierConfig {
                reconstruction_loss: ReconstructionLoss::Bce,
                ..base.clone()
            },
        ),
    ];
    let tla = ClassifierConfig { num_layers: 1, ..base };
    v.push(("tla-net/mse, fused tap".into(), ModelKind::TlaNet, tla.clone()));
    v.push((
        "tla-net/bce, reconstruction tap".into(),
        ModelKind::TlaNet,
        ClassifierConfig {
            reconstruction_loss: ReconstructionLoss::Bce,
            classifier_tap: ClassifierTap::Reconstruction,
            ..tla.clone()
        },
    ));
    v.push((
        "tla-net/distinct dropout views".into(),
        ModelKind::TlaNet,
        ClassifierConfig {
            encoder_views: EncoderViews::DistinctDropout,
            ..tla
        },
    ));
    v
}

fn model_checks() -> Result<Vec<CheckResult>> {
    let batch = vec![vec![1, 5, 3, 0], vec![6, 2, 0, 0]];
    let labels = vec![2, 0];
    let mut results = Vec::new();
    for (name, kind, cfg) in model_variants() {
        let model = SequenceModel::new(kind, cfg)?;
        let (b, y) = (batch.clone(), labels.clone());
        let m = model.clone();
        let build = move |t: &mut Tape| -> Result<Var> {
            let mut ctx = ForwardCtx::train(23);
            Ok(objective(t, &m, &b, &y, 0.5, &mut ctx)?.total)
        };
        let ps = model.params.clone();
        results.push(check_tape(&name, Scope::Models, &model.params, &|i, j| is_pad_row(&ps, i, j), &build)?);
    }
    results.push(word2vec_check()?);
    results.push(wisdomnet_head_check()?);
    Ok(results)
}

/// Hand-written skip-gram gradient against differences of the pair loss.
fn word2vec_check() -> Result<CheckResult> {
    let mut m = Word2VecModel::new(8, 4, 3, 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    m.output.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    let (c, o, negs) = (2, 5, [1, 7, 3]);
    let mut g_in = vec![0.0; m.input.len()];
    let mut g_out = vec![0.0; m.output.len()];
    accumulate_pair_grad(&m, c, o, &negs, &mut g_in, &mut g_out);
    let mut worst = (0.0f64, String::new());
    let mut entries = 0;
    for (which, analytic) in [("input", &g_in), ("output", &g_out)] {
        for j in 0..analytic.len() {
            let mut up = m.clone();
            let mut down = m.clone();
            let (u, d) = if which == "input" {
                (&mut up.input[j], &mut down.input[j])
            } else {
                (&mut up.output[j], &mut down.output[j])
            };
            *u += STEP;
            *d -= STEP;
            let numeric = (pair_loss(&up, c, o, &negs) - pair_loss(&down, c, o, &negs)) / (2.0 * STEP);
            let e = relative_error(analytic[j], numeric);
            if e > worst.0 || worst.1.is_empty() {
                worst = (e, format!("{which}[{j}]"));
            }
            entries += 1;
        }
    }
    let tolerance = Scope::Models.tolerance();
    Ok(CheckResult {
        name: "word2vec/skip-gram pair".into(),
        scope: Scope::Models,
        tolerance,
        max_error: worst.0,
        worst: worst.1,
        entries,
        passed: worst.0 <= tolerance,
    })
}

/// Gradient-descent step of the rejection head against its loss.
fn wisdomnet_head_check() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let head = WisdomNetHead::random(3, 4, &mut rng);
    let data: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let labels = vec![1, 0, 2];
    let mut stepped = head.clone();
    stepped.epoch(&data, &labels, 1.0)?;
    let mut worst = (0.0f64, String::new());
    let mut entries = 0;
    for j in 0..head.weights.len() + head.bias.len() {
        let perturb = |h: &mut WisdomNetHead, d: f64| {
            if j < h.weights.len() {
                h.weights[j] += d;
            } else {
                let k = j - h.weights.len();
                h.bias[k] += d;
            }
        };
        let (mut up, mut down) = (head.clone(), head.clone());
        perturb(&mut up, STEP);
        perturb(&mut down, -STEP);
        let numeric = (up.loss(&data, &labels)? - down.loss(&data, &labels)?) / (2.0 * STEP);
        let analytic = if j < head.weights.len() {
            head.weights[j] - stepped.weights[j]
        } else {
            let k = j - head.weights.len();
            head.bias[k] - stepped.bias[k]
        };
        let e = relative_error(analytic, numeric);
        if e > worst.0 || worst.1.is_empty() {
            worst = (e, format!("head[{j}]"));
        }
        entries += 1;
    }
    let tolerance = Scope::Models.tolerance();
    Ok(CheckResult {
        name: "wisdomnet head".into(),
        scope: Scope::Models,
        tolerance,
        max_error: worst.0,
        worst: worst.1,
        entries,
        passed: worst.0 <= tolerance,
    })
}

fn run_problems(problems: Vec<(&'static str, Problem)>, scope: Scope) -> Result<Vec<CheckResult>> {
    problems
        .into_iter()
        .map(|(name, (ps, build))| check_tape(name, scope, &ps, &|i, j| is_pad_row(&ps, i, j), build.as_ref()))
        .collect()
}

/// Runs the suites of `scope`; `inject_fault` appends the negative control.
pub fn run_gradcheck(scope: Scope, inject_fault: bool) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut results = Vec::new();
    if matches!(scope, Scope::Ops | Scope::All) {
        results.extend(run_problems(op_problems(), Scope::Ops)?);
    }
    if matches!(scope, Scope::Layers | Scope::All) {
        results.extend(run_problems(layer_problems(), Scope::Layers)?);
    }
    if matches!(scope, Scope::Models | Scope::All) {
        results.extend(model_checks()?);
    }
    if inject_fault {
        results.push(corrupted_check()?);
    }
    Ok(GradcheckReport {
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Names of the model variants covered by the models scope.
pub fn model_coverage() -> Vec<(String, ModelKind)> {
    model_variants().into_iter().map(|(n, k, _)| (n, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass() {
        let r = run_gradcheck(Scope::Ops, false).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        assert!(r.results.iter().all(|c| c.entries > 0));
    }

    #[test]
    fn layers_pass() {
        let r = run_gradcheck(Scope::Layers, false).unwrap();
        assert!(r.passed(), "{}", r.to_text());
    }

    #[test]
    fn models_pass_and_cover_every_kind() {
        let r = run_gradcheck(Scope::Models, false).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        let kinds: Vec<ModelKind> = model_coverage().into_iter().map(|(_, k)| k).collect();
        for k in [ModelKind::Lstm, ModelKind::Bilstm, ModelKind::LstmAe, ModelKind::TlaNet] {
            assert!(kinds.contains(&k), "{k} not covered");
        }
        assert!(r.results.iter().any(|c| c.name.starts_with("word2vec")));
    }

    #[test]
    fn corrupted_rule_is_caught() {
        let c = corrupted_check().unwrap();
        assert!(!c.passed);
        let r = run_gradcheck(Scope::Ops, true).unwrap();
        assert!(!r.passed());
        assert_eq!(r.worst_failure().unwrap().name, c.name);
    }

    #[test]
    fn error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-6, 2e-6) - 1e-3).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
