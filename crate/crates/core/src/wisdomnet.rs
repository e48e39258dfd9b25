//! Linear-softmax classification head with threshold rejection.
//!
//! Training is plain full-batch gradient descent on categorical
//! cross-entropy. At inference, a sample whose highest class probability is
//! below the threshold is labelled [`Classification::Rejected`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::layers::init_bound;
use crate::loss::PROB_FLOOR;
use crate::tensor::softmax_slice;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Class(usize),
    Rejected,
}

impl Classification {
    pub fn class(self) -> Option<usize> {
        match self {
            Classification::Class(c) => Some(c),
            Classification::Rejected => None,
        }
    }

    pub fn is_rejected(self) -> bool {
        matches!(self, Classification::Rejected)
    }
}

pub fn validate_threshold(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(TlaError::domain(format!("threshold {theta} outside [0, 1]")))
    }
}

/// Index of the highest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// The accept/reject rule applied to an already computed distribution.
pub fn classify_probs(probs: &[f64], theta: f64) -> Classification {
    let best = argmax(probs);
    if probs[best] < theta {
        Classification::Rejected
    } else {
        Classification::Class(best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WisdomNetHead {
    /// Row-major `[num_classes, feature_dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub threshold: f64,
}

impl WisdomNetHead {
    pub fn random(num_classes: usize, feature_dim: usize, rng: &mut impl Rng) -> Self {
        let b = init_bound(feature_dim);
        WisdomNetHead {
            weights: (0..num_classes * feature_dim).map(|_| rng.gen_range(-b..=b)).collect(),
            bias: (0..num_classes).map(|_| rng.gen_range(-b..=b)).collect(),
            num_classes,
            feature_dim,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(TlaError::dim(format!(
                "feature width {} does not match head width {}",
                x.len(),
                self.feature_dim
            )));
        }
        Ok((0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
                self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect())
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax_slice(&self.logits(x)?))
    }

    /// Mean cross-entropy over a dataset.
    pub fn loss(&self, data: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in data.iter().zip(labels) {
            total -= self.probabilities(x)?[y].max(PROB_FLOOR).ln();
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// One full-batch gradient-descent epoch; returns the pre-update loss.
    pub(crate) fn epoch(&mut self, data: &[Vec<f64>], labels: &[usize], learning_rate: f64) -> Result<f64> {
        let (c, f) = (self.num_classes, self.feature_dim);
        let mut gw = vec![0.0; c * f];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        let n = data.len() as f64;
        for (x, &y) in data.iter().zip(labels) {
            let p = self.probabilities(x)?;
            loss -= p[y].max(PROB_FLOOR).ln();
            for k in 0..c {
                let dz = p[k] - if k == y { 1.0 } else { 0.0 };
                gb[k] += dz / n;
                for (g, v) in gw[k * f..(k + 1) * f].iter_mut().zip(x) {
                    *g += dz * v / n;
                }
            }
        }
        for (w, g) in self.weights.iter_mut().zip(&gw) {
            *w -= learning_rate * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&gb) {
            *b -= learning_rate * g;
        }
        Ok(loss / n)
    }
}

fn validate_data(data: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<usize> {
    if data.is_empty() {
        return Err(TlaError::domain("training data is empty"));
    }
    if data.len() != labels.len() {
        return Err(TlaError::dim(format!("{} samples but {} labels", data.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(TlaError::domain(format!("label {bad} out of range for {num_classes} classes")));
    }
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(TlaError::dim("feature vectors differ in width"));
    }
    Ok(dim)
}

/// Trains a freshly initialized head for `epochs` full-batch steps.
/// Returns the head and the per-epoch loss trace.
pub fn wisdomnet_train(
    data: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(WisdomNetHead, Vec<f64>)> {
    if epochs == 0 {
        return Err(TlaError::domain("epochs must be at least 1"));
    }
    if num_classes < 2 {
        return Err(TlaError::Config("need at least two classes".into()));
    }
    let dim = validate_data(data, labels, num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = WisdomNetHead::random(num_classes, dim, &mut rng);
    let trace = (0..epochs)
        .map(|_| head.epoch(data, labels, learning_rate))
        .collect::<Result<Vec<_>>>()?;
    Ok((head, trace))
}

/// Continues training on all samples plus a second copy of every sample the
/// head currently misclassifies.
pub fn wisdomnet_refine(
    head: &mut WisdomNetHead,
    data: &[Vec<f64>],
    labels: &[usize],
    epochs: usize,
    learning_rate: f64,
) -> Result<Vec<f64>> {
    validate_data(data, labels, head.num_classes)?;
    let mut x = data.to_vec();
    let mut y = labels.to_vec();
    for (d, &l) in data.iter().zip(labels) {
        if argmax(&head.probabilities(d)?) != l {
            x.push(d.clone());
            y.push(l);
        }
    }
    (0..epochs).map(|_| head.epoch(&x, &y, learning_rate)).collect()
}

pub fn wisdomnet_classify(head: &WisdomNetHead, x: &[f64], theta: f64) -> Result<Classification> {
    validate_threshold(theta)?;
    Ok(classify_probs(&head.probabilities(x)?, theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub coverage: f64,
    /// Accuracy over accepted samples; 0 when nothing is accepted.
    pub accuracy: f64,
    pub accepted: usize,
}

/// Coverage and accepted-sample accuracy for each threshold in `grid`,
/// given precomputed class distributions.
pub fn sweep_probabilities(probs: &[Vec<f64>], labels: &[usize], grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(TlaError::domain("threshold grid is empty"));
    }
    for &t in grid {
        validate_threshold(t)?;
    }
    if probs.len() != labels.len() {
        return Err(TlaError::dim(format!("{} outputs but {} labels", probs.len(), labels.len())));
    }
    let total = probs.len();
    Ok(grid
        .iter()
        .map(|&theta| {
            let mut accepted = 0;
            let mut correct = 0;
            for (p, &y) in probs.iter().zip(labels) {
                if let Classification::Class(c) = classify_probs(p, theta) {
                    accepted += 1;
                    correct += usize::from(c == y);
                }
            }
            SweepPoint {
                theta,
                coverage: if total == 0 { 1.0 } else { accepted as f64 / total as f64 },
                accuracy: if accepted == 0 { 0.0 } else { correct as f64 / accepted as f64 },
                accepted,
            }
        })
        .collect())
}

pub fn threshold_sweep(head: &WisdomNetHead, data: &[Vec<f64>], labels: &[usize], grid: &[f64]) -> Result<Vec<SweepPoint>> {
    let probs = data.iter().map(|x| head.probabilities(x)).collect::<Result<Vec<_>>>()?;
    sweep_probabilities(&probs, labels, grid)
}

/// `0.0, step, 2·step, …, 1.0`.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    let n = points.max(2) - 1;
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(classify_probs(&[0.9, 0.05, 0.05], 0.5), Classification::Class(0));
        assert_eq!(classify_probs(&[0.4, 0.3, 0.3], 0.5), Classification::Rejected);
        assert_eq!(classify_probs(&[0.4, 0.3, 0.3], 0.0), Classification::Class(0));
        assert_eq!(classify_probs(&[0.3, 0.4, 0.3], 0.4), Classification::Class(1));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(classify_probs(&[0.25, 0.375, 0.375], 0.0), Classification::Class(1));
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn separable_training_reaches_full_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let y = i % 2;
            let cx = if y == 0 { -1.5 } else { 1.5 };
            data.push(vec![cx + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            labels.push(y);
        }
        let (head, trace) = wisdomnet_train(&data, &labels, 2, 200, 0.5, 1).unwrap();
        assert_eq!(trace.len(), 200);
        let correct = data
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| wisdomnet_classify(&head, x, 0.0).unwrap() == Classification::Class(y))
            .count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn small_lr_loss_is_non_increasing() {
        let data = vec![vec![0.2, 1.0], vec![-0.7, 0.1], vec![1.1, -0.4], vec![0.0, 0.5]];
        let labels = vec![0, 1, 2, 1];
        for seed in 0..5 {
            let (_, trace) = wisdomnet_train(&data, &labels, 3, 50, 0.05, seed).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn preconditions() {
        assert!(wisdomnet_train(&[vec![1.0]], &[0], 2, 0, 0.1, 0).is_err());
        assert!(wisdomnet_train(&[], &[], 2, 1, 0.1, 0).is_err());
        assert!(wisdomnet_train(&[vec![1.0]], &[2], 2, 1, 0.1, 0).is_err());
        let (head, _) = wisdomnet_train(&[vec![1.0, 0.0]], &[0], 2, 1, 0.1, 0).unwrap();
        assert!(wisdomnet_classify(&head, &[1.0], 0.5).is_err());
        assert!(wisdomnet_classify(&head, &[1.0, 0.0], 1.5).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = vec![vec![0.3, -1.2, 0.8], vec![1.0, 0.4, -0.6]];
        let labels = vec![2, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = WisdomNetHead::random(3, 3, &mut rng);
        let lr = 1.0;
        let mut stepped = head.clone();
        stepped.epoch(&data, &labels, lr).unwrap();
        let h = 1e-6;
        for i in 0..head.weights.len() {
            let mut hp = head.clone();
            hp.weights[i] += h;
            let mut hm = head.clone();
            hm.weights[i] -= h;
            let fd = (hp.loss(&data, &labels).unwrap() - hm.loss(&data, &labels).unwrap()) / (2.0 * h);
            let analytic = head.weights[i] - stepped.weights[i];
            assert!((fd - analytic).abs() < 1e-8, "w[{i}] fd {fd} vs {analytic}");
        }
    }

    #[test]
    fn refine_runs_on_misclassified_union() {
        let data = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.9, 0.1]];
        let labels = vec![0, 1, 1];
        let (mut head, _) = wisdomnet_train(&data, &labels, 2, 5, 0.1, 3).unwrap();
        let trace = wisdomnet_refine(&mut head, &data, &labels, 10, 0.1).unwrap();
        assert_eq!(trace.len(), 10);
    }

    #[test]
    fn sweep_endpoints() {
        let probs = vec![vec![0.6, 0.4], vec![0.5, 0.5], vec![0.99, 0.01]];
        let labels = vec![0, 1, 0];
        let pts = sweep_probabilities(&probs, &labels, &[0.0, 0.55, 1.0]).unwrap();
        assert_eq!(pts[0].coverage, 1.0);
        assert!((pts[1].coverage - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pts[2].coverage, 0.0);
        assert!(sweep_probabilities(&probs, &labels, &[]).is_err());
        assert!(sweep_probabilities(&probs, &labels, &[1.01]).is_err());
    }
}
