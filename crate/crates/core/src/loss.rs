//! Classification and reconstruction losses, as plain functions on values
//! and as tape compositions for training.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::tensor::{Tape, Var};

pub use crate::tensor::tape::PROB_FLOOR;

/// Categorical cross-entropy `−ln(max(p[target], 1e-12))`.
pub fn cce(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or_else(|| {
        TlaError::domain(format!("target class {target} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Reconstruction loss: squared differences summed over every step and
/// every dimension.
pub fn r_loss(input: &[Vec<f64>], output: &[Vec<f64>]) -> Result<f64> {
    if input.len() != output.len() {
        return Err(TlaError::dim(format!(
            "reconstruction of {} steps against {} input steps",
            output.len(),
            input.len()
        )));
    }
    let mut total = 0.0;
    for (t, (i, o)) in input.iter().zip(output).enumerate() {
        if i.len() != o.len() {
            return Err(TlaError::dim(format!("step {t}: width {} vs {}", i.len(), o.len())));
        }
        total += i.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

/// Mean binary cross-entropy with clipped probabilities.
pub fn bce(probs: &[f64], targets: &[f64]) -> Result<f64> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(TlaError::dim(format!(
            "{} probabilities for {} targets",
            probs.len(),
            targets.len()
        )));
    }
    Ok(probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| crate::tensor::tape::bce_term(p, y))
        .sum::<f64>()
        / probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionLoss {
    /// Sum of squared differences against the embedded input.
    #[default]
    Mse,
    /// Binary cross-entropy of sigmoid outputs against one-hot token vectors.
    Bce,
}

/// Tape form of [`r_loss`] over two step sequences. With batched steps the
/// sum runs over every row; divide by the batch size for a per-example mean.
pub fn r_loss_tape(tape: &mut Tape, input: &[Var], output: &[Var]) -> Result<Var> {
    if input.len() != output.len() || input.is_empty() {
        return Err(TlaError::dim(format!(
            "reconstruction of {} steps against {} input steps",
            output.len(),
            input.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&i, &o) in input.iter().zip(output) {
        let d = tape.sub(o, i)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn cce_values() {
        assert_eq!(cce(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((cce(&[1.0 / 3.0; 3], 2).unwrap() - 1.0986123).abs() < 1e-7);
        assert!((cce(&[1.0, 0.0], 1).unwrap() - 27.631021115928547).abs() < 1e-9);
        assert!(cce(&[1.0], 1).is_err());
    }

    #[test]
    fn r_loss_hand_value() {
        let i = vec![vec![1.0, 2.0], vec![3.0, 0.0]];
        let o = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(r_loss(&i, &o).unwrap(), 14.0);
        assert_eq!(r_loss(&i, &i).unwrap(), 0.0);
        assert_eq!(r_loss(&o, &i).unwrap(), 14.0);
        assert!(r_loss(&i, &o[..1]).is_err());
    }

    #[test]
    fn r_loss_tape_gradient_is_two_diff() {
        let mut tape = Tape::new();
        let i = [tape.constant(Tensor::vector(vec![1.0, 2.0])), tape.constant(Tensor::vector(vec![3.0, 0.0]))];
        let o = [
            tape.leaf(Tensor::vector(vec![0.5, -1.0]).with_requires_grad(true)),
            tape.leaf(Tensor::vector(vec![0.0, 0.25]).with_requires_grad(true)),
        ];
        let l = r_loss_tape(&mut tape, &i, &o).unwrap();
        let expect = 0.25 + 9.0 + 9.0 + 0.0625;
        assert!((tape.values(l)[0] - expect).abs() < 1e-12);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(o[0]), &[2.0 * (0.5 - 1.0), 2.0 * (-1.0 - 2.0)]);
        assert_eq!(tape.grad(o[1]), &[2.0 * (0.0 - 3.0), 2.0 * 0.25]);
    }

    #[test]
    fn bce_values() {
        assert!((bce(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((bce(&[0.9], &[1.0]).unwrap() - 0.10536051565782628).abs() < 1e-12);
        assert!(bce(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
        assert!(bce(&[0.5], &[1.0, 0.0]).is_err());
    }
}
