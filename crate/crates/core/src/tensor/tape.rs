use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Result, TlaError};

/// Probability floor applied before every logarithm in the loss primitives.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Act(Var, Activation),
    Softmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
    RepeatRows(Var, usize),
    Gather { table: Var, ids: Vec<usize>, padding: Option<usize> },
    Columns { x: Var, start: usize },
    ScaleRows { x: Var, w: Var },
    CrossEntropy { probs: Var, targets: Vec<usize> },
    Bce { probs: Var, targets: Vec<f64> },
    Map { x: Var, deriv: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    tensor: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Linear record of primitive operations.
///
/// Nodes are appended in creation order, so the node list is already a
/// topological order of the computation graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_str(t: &Tensor) -> String {
    format!("{:?}", t.shape())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Creates a tape whose first nodes are the tensors of `params`, so that
    /// `ParamId(i)` maps to `Var(i)`.
    pub fn from_params(params: &ParamSet) -> Self {
        let mut tape = Tape {
            nodes: Vec::with_capacity(params.len() * 4),
        };
        for t in params.tensors() {
            tape.leaf(Tensor::from_parts(t.shape().to_vec(), t.values().to_vec()).with_requires_grad(true));
        }
        tape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn values(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.values()
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.grad()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.tensor.zero_grad();
        }
    }

    fn push(&mut self, tensor: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            tensor,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn t(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TlaError::Contract(format!("variable {} is not on this tape", v.0)))
        }
    }

    /// Rank-2 matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (ta, tb) = (self.t(a), self.t(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TlaError::dim(format!(
                "matmul of {} and {}",
                shape_str(ta),
                shape_str(tb)
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (av, bv) = (ta.values(), tb.values());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a_ip = av[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += a_ip * bv;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// Affine map `x·wᵀ + b` with `w` stored as `[out, in]`.
    ///
    /// `x` is either a vector `[in]` (result `[out]`) or a batch `[rows, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(w)?;
        let (tx, tw) = (self.t(x), self.t(w));
        if tw.rank() != 2 || tx.rank() == 0 || tx.rank() > 2 || tx.cols() != tw.shape()[1] {
            return Err(TlaError::dim(format!(
                "linear input {} against weights {}",
                shape_str(tx),
                shape_str(tw)
            )));
        }
        let (rows, inp, outd) = (tx.rows(), tw.shape()[1], tw.shape()[0]);
        if let Some(b) = b {
            self.check_var(b)?;
            let tb = self.t(b);
            if tb.len() != outd || tb.rank() != 1 {
                return Err(TlaError::dim(format!(
                    "bias {} for weights {}",
                    shape_str(tb),
                    shape_str(tw)
                )));
            }
        }
        let (xv, wv) = (tx.values(), tw.values());
        let bias = b.map(|b| self.t(b).values());
        let mut out = vec![0.0; rows * outd];
        for r in 0..rows {
            let xr = &xv[r * inp..(r + 1) * inp];
            for o in 0..outd {
                let wr = &wv[o * inp..(o + 1) * inp];
                let mut acc = bias.map_or(0.0, |bv| bv[o]);
                for (a, c) in xr.iter().zip(wr) {
                    acc += a * c;
                }
                out[r * outd + o] = acc;
            }
        }
        let shape = if tx.rank() == 1 { vec![outd] } else { vec![rows, outd] };
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, b }, ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.check_var(a)?;
        self.check_var(b)?;
        if self.t(a).shape() != self.t(b).shape() {
            return Err(TlaError::dim(format!(
                "{what} of {} and {}",
                shape_str(self.t(a)),
                shape_str(self.t(b))
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out: Vec<f64> = self
            .t(a)
            .values()
            .iter()
            .zip(self.t(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.t(a).shape().to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::from_parts(shape, out), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a bias vector to every row. The only broadcast the tape supports.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(bias)?;
        let (tx, tb) = (self.t(x), self.t(bias));
        if tb.rank() != 1 || tx.rank() == 0 || tx.cols() != tb.len() {
            return Err(TlaError::dim(format!(
                "bias {} added to {}",
                shape_str(tb),
                shape_str(tx)
            )));
        }
        let c = tb.len();
        let bv = tb.values();
        let out: Vec<f64> = tx
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % c])
            .collect();
        let shape = tx.shape().to_vec();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBias(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check_var(x)?;
        let tx = self.t(x);
        let out = tx.values().iter().map(|v| v * c).collect();
        let shape = tx.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Scale(x, c), ng))
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        self.check_var(x)?;
        let tx = self.t(x);
        if mask.len() != tx.len() {
            return Err(TlaError::dim(format!(
                "mask of length {} for {}",
                mask.len(),
                shape_str(tx)
            )));
        }
        let out = tx.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = tx.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MulConst(x, mask), ng))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.check_var(x)?;
        let tx = self.t(x);
        let out = tx.values().iter().map(|&v| kind.apply(v)).collect();
        let shape = tx.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Act(x, kind), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// Softmax of a vector, or of every row of a matrix. Uses max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let tx = self.t(x);
        if tx.is_empty() || tx.rank() == 0 || tx.rank() > 2 {
            return Err(TlaError::domain(format!(
                "softmax needs a non-empty vector or matrix, got {}",
                shape_str(tx)
            )));
        }
        let c = tx.cols();
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.values().chunks(c) {
            out.extend(softmax_slice(row));
        }
        let shape = tx.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax(x), ng))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TlaError::domain("concat of zero parts"))?;
        for &p in parts {
            self.check_var(p)?;
        }
        let base = self.t(first).shape().to_vec();
        if axis >= base.len() {
            return Err(TlaError::dim(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.t(p).shape();
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(TlaError::dim(format!(
                    "concat along axis {axis} of ragged shapes {:?} and {:?}",
                    base, s
                )));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut out = Vec::new();
        for o in 0..outer {
            for &p in parts {
                let tp = self.t(p);
                let chunk = tp.len() / outer.max(1);
                out.extend_from_slice(&tp.values()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let s = self.t(x).values().iter().sum();
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let tx = self.t(x);
        if tx.is_empty() {
            return Err(TlaError::domain("mean of an empty tensor"));
        }
        let s = tx.values().iter().sum::<f64>() / tx.len() as f64;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), ng))
    }

    /// Tiles a vector into `times` identical rows.
    pub fn repeat_rows(&mut self, v: Var, times: usize) -> Result<Var> {
        self.check_var(v)?;
        if times == 0 {
            return Err(TlaError::domain("repeat count must be at least 1"));
        }
        let tv = self.t(v);
        if tv.rank() != 1 {
            return Err(TlaError::dim(format!("repeat_rows expects a vector, got {}", shape_str(tv))));
        }
        let n = tv.len();
        let out = tv.values().repeat(times);
        let ng = self.ng(v);
        Ok(self.push(Tensor::from_parts(vec![times, n], out), Op::RepeatRows(v, times), ng))
    }

    /// Row gather from a `[vocab, dim]` table. The `padding` row never
    /// receives gradient.
    pub fn gather(&mut self, table: Var, ids: &[usize], padding: Option<usize>) -> Result<Var> {
        self.check_var(table)?;
        let tt = self.t(table);
        if tt.rank() != 2 {
            return Err(TlaError::dim(format!("gather table must be a matrix, got {}", shape_str(tt))));
        }
        let (rows, dim) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(TlaError::domain(format!(
                    "token id {id} out of range for vocabulary of size {rows}"
                )));
            }
            out.extend_from_slice(tt.row(id));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), dim], out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
                padding,
            },
            ng,
        ))
    }

    /// Column block `[start, start + len)` of a matrix.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check_var(x)?;
        let tx = self.t(x);
        if tx.rank() != 2 || start + len > tx.shape()[1] || len == 0 {
            return Err(TlaError::dim(format!(
                "columns {start}..{} of {}",
                start + len,
                shape_str(tx)
            )));
        }
        let (rows, cols) = (tx.shape()[0], tx.shape()[1]);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&tx.values()[r * cols + start..r * cols + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![rows, len], out), Op::Columns { x, start }, ng))
    }

    /// Multiplies row `r` of `x` by the scalar `w[r]` (`w` is `[rows, 1]`).
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(w)?;
        let (tx, tw) = (self.t(x), self.t(w));
        if tx.rank() != 2 || tw.len() != tx.shape()[0] {
            return Err(TlaError::dim(format!(
                "row scales {} for {}",
                shape_str(tw),
                shape_str(tx)
            )));
        }
        let c = tx.shape()[1];
        let wv = tw.values();
        let out = tx
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v * wv[i / c])
            .collect();
        let shape = tx.shape().to_vec();
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Tensor::from_parts(shape, out), Op::ScaleRows { x, w }, ng))
    }

    /// Mean categorical cross-entropy `−ln(max(p[target], 1e-12))` over the
    /// rows of a probability matrix (or a single probability vector).
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        self.check_var(probs)?;
        let tp = self.t(probs);
        let (rows, c) = (tp.rows(), tp.cols());
        if tp.rank() == 0 || targets.len() != rows {
            return Err(TlaError::dim(format!(
                "{} targets for probabilities {}",
                targets.len(),
                shape_str(tp)
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TlaError::domain(format!("target class {bad} out of range for {c} classes")));
        }
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -tp.values()[r * c + t].max(PROB_FLOOR).ln())
            .sum::<f64>()
            / rows as f64;
        let ng = self.ng(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// Mean binary cross-entropy with probabilities clipped to
    /// `[1e-12, 1 − 1e-12]`.
    pub fn bce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        self.check_var(probs)?;
        let tp = self.t(probs);
        if tp.len() != targets.len() || tp.is_empty() {
            return Err(TlaError::dim(format!(
                "{} targets for probabilities {}",
                targets.len(),
                shape_str(tp)
            )));
        }
        let loss = tp
            .values()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| bce_term(p, y))
            .sum::<f64>()
            / targets.len() as f64;
        let ng = self.ng(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Result<Var> {
        self.check_var(x)?;
        let tx = self.t(x);
        let out = tx.values().iter().map(|&v| f(v)).collect();
        let deriv = tx.values().iter().map(|&v| df(v)).collect();
        let shape = tx.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Map { x, deriv }, ng))
    }

    /// Accumulates `d loss / d node` into every node that needs a gradient.
    ///
    /// Gradients add to whatever is already stored, so two calls without an
    /// intervening [`Tape::zero_grad`] double every gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_var(loss)?;
        if self.t(loss).len() != 1 {
            return Err(TlaError::Contract(format!(
                "backward needs a scalar loss, got {}",
                shape_str(self.t(loss))
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads);
            grads[i] = g;
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if g.is_empty() || !node.needs_grad {
                continue;
            }
            for (dst, v) in node.tensor.grad_mut().iter_mut().zip(g) {
                *dst += v;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let y = node.tensor.values();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.t(*a), self.t(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.ng(*a) {
                    let da = slot(grads, *a, m * k);
                    for r in 0..m {
                        for p in 0..k {
                            let brow = &tb.values()[p * n..(p + 1) * n];
                            let grow = &g[r * n..(r + 1) * n];
                            da[r * k + p] += dot(grow, brow);
                        }
                    }
                }
                if self.ng(*b) {
                    let db = slot(grads, *b, k * n);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            axpy(ta.values()[r * k + p], grow, &mut db[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.t(*x), self.t(*w));
                let (rows, inp, outd) = (tx.rows(), tw.shape()[1], tw.shape()[0]);
                if self.ng(*x) {
                    let dx = slot(grads, *x, rows * inp);
                    for r in 0..rows {
                        for o in 0..outd {
                            let go = g[r * outd + o];
                            if go != 0.0 {
                                axpy(go, &tw.values()[o * inp..(o + 1) * inp], &mut dx[r * inp..(r + 1) * inp]);
                            }
                        }
                    }
                }
                if self.ng(*w) {
                    let dw = slot(grads, *w, outd * inp);
                    for r in 0..rows {
                        let xr = &tx.values()[r * inp..(r + 1) * inp];
                        for o in 0..outd {
                            let go = g[r * outd + o];
                            if go != 0.0 {
                                axpy(go, xr, &mut dw[o * inp..(o + 1) * inp]);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let db = slot(grads, *b, outd);
                        for r in 0..rows {
                            axpy(1.0, &g[r * outd..(r + 1) * outd], db);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        axpy(1.0, g, slot(grads, v, g.len()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    axpy(1.0, g, slot(grads, *a, g.len()));
                }
                if self.ng(*b) {
                    axpy(-1.0, g, slot(grads, *b, g.len()));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let other = self.t(*b).values();
                    let da = slot(grads, *a, g.len());
                    for ((d, gv), o) in da.iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
                if self.ng(*b) {
                    let other = self.t(*a).values();
                    let db = slot(grads, *b, g.len());
                    for ((d, gv), o) in db.iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if self.ng(*x) {
                    axpy(1.0, g, slot(grads, *x, g.len()));
                }
                if self.ng(*b) {
                    let c = self.t(*b).len();
                    let db = slot(grads, *b, c);
                    for row in g.chunks(c) {
                        axpy(1.0, row, db);
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.ng(*x) {
                    axpy(*c, g, slot(grads, *x, g.len()));
                }
            }
            Op::MulConst(x, mask) => {
                if self.ng(*x) {
                    let dx = slot(grads, *x, g.len());
                    for ((d, gv), m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::Act(x, kind) => {
                if self.ng(*x) {
                    let dx = slot(grads, *x, g.len());
                    for ((d, gv), yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * kind.derivative_from_output(*yv);
                    }
                }
            }
            Op::Softmax(x) => {
                if self.ng(*x) {
                    let c = node.tensor.cols();
                    let dx = slot(grads, *x, g.len());
                    for ((drow, grow), yrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let s = dot(grow, yrow);
                        for ((d, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (gv - s);
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.tensor.shape();
                let outer: usize = shape[..*axis].iter().product();
                let total_chunk = node.tensor.len() / outer.max(1);
                let mut offset = 0;
                for &p in parts {
                    let tp = self.t(p);
                    let chunk = tp.len() / outer.max(1);
                    if self.ng(p) {
                        let dp = slot(grads, p, tp.len());
                        for o in 0..outer {
                            let src = &g[o * total_chunk + offset..o * total_chunk + offset + chunk];
                            axpy(1.0, src, &mut dp[o * chunk..(o + 1) * chunk]);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Sum(x) => {
                if self.ng(*x) {
                    let n = self.t(*x).len();
                    slot(grads, *x, n).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if self.ng(*x) {
                    let n = self.t(*x).len();
                    let share = g[0] / n as f64;
                    slot(grads, *x, n).iter_mut().for_each(|d| *d += share);
                }
            }
            Op::RepeatRows(v, times) => {
                if self.ng(*v) {
                    let n = self.t(*v).len();
                    let dv = slot(grads, *v, n);
                    for r in 0..*times {
                        axpy(1.0, &g[r * n..(r + 1) * n], dv);
                    }
                }
            }
            Op::Gather { table, ids, padding } => {
                if self.ng(*table) {
                    let tt = self.t(*table);
                    let dim = tt.shape()[1];
                    let dt = slot(grads, *table, tt.len());
                    for (r, &id) in ids.iter().enumerate() {
                        if Some(id) == *padding {
                            continue;
                        }
                        axpy(1.0, &g[r * dim..(r + 1) * dim], &mut dt[id * dim..(id + 1) * dim]);
                    }
                }
            }
            Op::Columns { x, start } => {
                if self.ng(*x) {
                    let tx = self.t(*x);
                    let cols = tx.shape()[1];
                    let len = node.tensor.shape()[1];
                    let dx = slot(grads, *x, tx.len());
                    for (r, grow) in g.chunks(len).enumerate() {
                        axpy(1.0, grow, &mut dx[r * cols + start..r * cols + start + len]);
                    }
                }
            }
            Op::ScaleRows { x, w } => {
                let tx = self.t(*x);
                let c = tx.shape()[1];
                if self.ng(*x) {
                    let wv = self.t(*w).values();
                    let dx = slot(grads, *x, g.len());
                    for (i, (d, gv)) in dx.iter_mut().zip(g).enumerate() {
                        *d += gv * wv[i / c];
                    }
                }
                if self.ng(*w) {
                    let rows = tx.shape()[0];
                    let dw = slot(grads, *w, rows);
                    for r in 0..rows {
                        dw[r] += dot(&g[r * c..(r + 1) * c], tx.row(r));
                    }
                }
            }
            Op::CrossEntropy { probs, targets } => {
                if self.ng(*probs) {
                    let tp = self.t(*probs);
                    let c = tp.cols();
                    let n = targets.len() as f64;
                    let pv = tp.values();
                    let dp = slot(grads, *probs, tp.len());
                    for (r, &t) in targets.iter().enumerate() {
                        let p = pv[r * c + t];
                        if p > PROB_FLOOR {
                            dp[r * c + t] += -g[0] / (p * n);
                        }
                    }
                }
            }
            Op::Bce { probs, targets } => {
                if self.ng(*probs) {
                    let n = targets.len() as f64;
                    let pv = self.t(*probs).values();
                    let dp = slot(grads, *probs, pv.len());
                    for ((d, &p), &yv) in dp.iter_mut().zip(pv).zip(targets) {
                        if p > PROB_FLOOR && p < 1.0 - PROB_FLOOR {
                            *d += g[0] * (-(yv / p) + (1.0 - yv) / (1.0 - p)) / n;
                        }
                    }
                }
            }
            Op::Map { x, deriv } => {
                if self.ng(*x) {
                    let dx = slot(grads, *x, g.len());
                    for ((d, gv), dv) in dx.iter_mut().zip(g).zip(deriv) {
                        *d += gv * dv;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut [f64] {
    let s = &mut grads[v.0];
    if s.is_empty() {
        *s = vec![0.0; len];
    }
    s
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Numerically stable softmax of a slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
