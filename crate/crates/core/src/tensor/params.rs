use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};
use crate::error::{Result, TlaError};

/// Index of a tensor inside a [`ParamSet`].
///
/// On a tape built with [`Tape::from_params`] the parameter lives at the same
/// index, so the id doubles as a [`Var`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn var(self) -> Var {
        Var(self.0)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a tensor drawn from `uniform(−bound, bound)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), values))
    }

    pub fn add_filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        let n: usize = shape.iter().product();
        self.add(name, Tensor::from_parts(shape.to_vec(), vec![value; n]))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the gradients accumulated on `tape` to the stored gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape) -> Result<()> {
        if tape.len() < self.tensors.len() {
            return Err(TlaError::Contract("tape was not built from this parameter set".into()));
        }
        for (i, t) in self.tensors.iter_mut().enumerate() {
            for (dst, g) in t.grad_mut().iter_mut().zip(tape.grad(Var(i))) {
                *dst += g;
            }
        }
        Ok(())
    }

    /// Replaces values from `other`, which must agree on names and shapes.
    pub fn load_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.names != self.names {
            return Err(TlaError::Incompatible("parameter names differ from the model layout".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(TlaError::Incompatible(format!(
                    "parameter shape {:?} does not match layout {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }

    /// Global L2 norm of the stored gradients.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ids_map_to_tape_vars() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let a = ps.add_uniform("a", &[2, 2], 0.5, &mut rng);
        let b = ps.add_filled("b", &[2], 1.0);
        let mut tape = Tape::from_params(&ps);
        assert_eq!(tape.values(a.var()), ps.get(a).values());
        let y = tape.linear(b.var(), a.var(), None).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        ps.accumulate_grads(&tape).unwrap();
        assert_eq!(ps.get(a).grad(), &[1.0, 1.0, 1.0, 1.0]);
        ps.zero_grad();
        assert_eq!(ps.grad_norm(), 0.0);
    }
}
