use serde::Serialize;

/// Scalar linear recurrence `x_{i+1} = W·x_i` with no hidden units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarRecurrence {
    pub weight: f64,
    pub x0: f64,
    pub steps: u32,
}

/// Long-run behaviour of `Wⁿ·x0` as `n` grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Explodes,
    Vanishes,
    Neutral,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Explodes => "explodes",
            Regime::Vanishes => "vanishes",
            Regime::Neutral => "neutral",
        })
    }
}

impl ScalarRecurrence {
    pub fn new(weight: f64, x0: f64, steps: u32) -> Self {
        ScalarRecurrence { weight, x0, steps }
    }

    pub fn regime(&self) -> Regime {
        let m = self.weight.abs();
        if m > 1.0 {
            Regime::Explodes
        } else if m < 1.0 {
            Regime::Vanishes
        } else {
            Regime::Neutral
        }
    }

    /// `x_0, x_1, …, x_n` by repeated multiplication.
    pub fn trajectory(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps as usize + 1);
        let mut x = self.x0;
        out.push(x);
        for _ in 0..self.steps {
            x *= self.weight;
            out.push(x);
        }
        out
    }
}

/// Closed form `Wⁿ·x0`.
pub fn scalar_recurrence(r: &ScalarRecurrence) -> f64 {
    r.weight.powi(r.steps as i32) * r.x0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(scalar_recurrence(&ScalarRecurrence::new(1.0, 7.0, 100)), 7.0);
        assert_eq!(scalar_recurrence(&ScalarRecurrence::new(2.0, 1.0, 10)), 1024.0);
        assert_eq!(scalar_recurrence(&ScalarRecurrence::new(0.5, 1.0, 10)), 0.0009765625);
    }

    #[test]
    fn dichotomy_at_200_steps() {
        for w in [1.2, -1.5, 2.0, 3.0] {
            let r = ScalarRecurrence::new(w, 1.0, 200);
            assert!(scalar_recurrence(&r).abs() > 1e12);
            assert_eq!(r.regime(), Regime::Explodes);
        }
        for w in [0.8, -0.5, 0.0, 0.5] {
            let r = ScalarRecurrence::new(w, 1.0, 200);
            assert!(scalar_recurrence(&r).abs() < 1e-12);
            assert_eq!(r.regime(), Regime::Vanishes);
        }
        let r = ScalarRecurrence::new(1.0, 3.5, 200);
        assert_eq!(r.regime(), Regime::Neutral);
        assert!(r.trajectory().iter().all(|&x| x == 3.5));
    }

    #[test]
    fn trajectory_matches_closed_form_for_powers_of_two() {
        for w in [2.0, 0.5, 1.0] {
            let r = ScalarRecurrence::new(w, 1.0, 30);
            for (i, x) in r.trajectory().into_iter().enumerate() {
                let c = ScalarRecurrence::new(w, 1.0, i as u32);
                assert_eq!(x, scalar_recurrence(&c));
            }
        }
    }
}
