use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{evaluate_with_gradients, Tape, Tensor2D, Var};
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Where the reference statistics `(μ, σ)` come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DeviationReference {
    /// Use the configured `mu` and `sigma` as they are.
    #[default]
    Fixed,
    /// Draw `count` reference scores from N(`mu`, `sigma`²) and use their
    /// sample mean and standard deviation.
    Sampled { count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviationConfig {
    pub mu: f64,
    pub sigma: f64,
    /// Margin that anomaly deviations are pushed past.
    pub margin: f64,
    #[serde(default)]
    pub reference: DeviationReference,
}

impl Default for DeviationConfig {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 1.0,
            margin: 5.0,
            reference: DeviationReference::Fixed,
        }
    }
}

impl DeviationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.margin > 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!(
                "deviation loss needs finite mu, sigma > 0 and margin > 0 (got {}, {}, {})",
                self.mu, self.sigma, self.margin
            )));
        }
        if let DeviationReference::Sampled { count } = self.reference {
            if count < 2 {
                return Err(Error::Config("reference sampling needs at least 2 draws".into()));
            }
        }
        Ok(())
    }

    /// `(μ, σ)` for one batch. Fixed references ignore `rng`.
    pub fn reference_stats(&self, rng: &mut StreamRng) -> (f64, f64) {
        match self.reference {
            DeviationReference::Fixed => (self.mu, self.sigma),
            DeviationReference::Sampled { count } => {
                let draws: Vec<f64> = (0..count)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        self.mu + self.sigma * z
                    })
                    .collect();
                let m = draws.iter().sum::<f64>() / count as f64;
                let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (count - 1) as f64;
                (m, var.sqrt().max(f64::MIN_POSITIVE))
            }
        }
    }
}

/// Records the mean deviation loss of an `n×1` score column with reference
/// statistics `(mu, sigma)`.
pub fn deviation_on_tape(tape: &mut Tape, scores: Var, labels: &[u8], mu: f64, sigma: f64, margin: f64) -> Result<Var> {
    let n = tape.value(scores).rows();
    if tape.value(scores).shape() != (n, 1) || labels.len() != n || n == 0 {
        return Err(Error::shape(
            "deviation_loss",
            format!("{:?} scores with {} labels", tape.value(scores).shape(), labels.len()),
        ));
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l.min(1))).collect();
    let dev = tape.add_const(scores, -mu);
    let dev = tape.scale(dev, 1.0 / sigma);

    let normal_w = tape.leaf(Tensor2D::column(&y.iter().map(|v| 1.0 - v).collect::<Vec<_>>()));
    let anomaly_w = tape.leaf(Tensor2D::column(&y));

    let abs = tape.abs(dev);
    let normal = tape.mul(normal_w, abs)?;
    let gap = tape.neg(dev);
    let gap = tape.add_const(gap, margin);
    let hinge = tape.relu(gap);
    let anomaly = tape.mul(anomaly_w, hinge)?;

    let per_node = tape.add(normal, anomaly)?;
    tape.mean(per_node)
}

/// Loss value and gradient with respect to the scores, using the fixed
/// `(mu, sigma)` of `cfg`.
pub fn deviation_loss(scores: &[f64], labels: &[u8], cfg: &DeviationConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let (v, g) = evaluate_with_gradients(&[Tensor2D::column(scores)], |t, x| {
        deviation_on_tape(t, x[0], labels, cfg.mu, cfg.sigma, cfg.margin)
    })?;
    Ok((v, g.into_iter().next().unwrap().into_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn loss(s: f64, y: u8) -> f64 {
        deviation_loss(&[s], &[y], &DeviationConfig::default()).unwrap().0
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(loss(0.0, 0), 0.0);
        assert_eq!(loss(5.0, 1), 0.0);
        assert_eq!(loss(0.0, 1), 5.0);
        assert_eq!(loss(-2.0, 0), 2.0);
    }

    #[test]
    fn gradient_signs() {
        let (_, g) = deviation_loss(&[1.5, -0.5, 2.0, 7.0], &[0, 0, 1, 1], &DeviationConfig::default()).unwrap();
        assert_eq!(g, vec![0.25, -0.25, -0.25, 0.0]);
    }

    #[test]
    fn invalid_config() {
        let cfg = DeviationConfig {
            sigma: 0.0,
            ..DeviationConfig::default()
        };
        assert!(matches!(deviation_loss(&[0.0], &[0], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sampled_reference_is_close_to_configured() {
        let cfg = DeviationConfig {
            reference: DeviationReference::Sampled { count: 5000 },
            ..DeviationConfig::default()
        };
        let (m, s) = cfg.reference_stats(&mut rng::stream(0, "ref"));
        assert!(m.abs() < 0.1 && (s - 1.0).abs() < 0.1);
        assert_eq!(DeviationConfig::default().reference_stats(&mut rng::stream(0, "ref")), (0.0, 1.0));
    }

    proptest! {
        #[test]
        fn all_normal_batches_equal_mean_abs(scores in proptest::collection::vec(-20.0f64..20.0, 1..40)) {
            let labels = vec![0u8; scores.len()];
            let (v, _) = deviation_loss(&scores, &labels, &DeviationConfig::default()).unwrap();
            let m = scores.iter().map(|s| s.abs()).sum::<f64>() / scores.len() as f64;
            prop_assert!((v - m).abs() < 1e-12);
        }

        #[test]
        fn anomalies_past_margin_cost_nothing(scores in proptest::collection::vec(5.0f64..50.0, 1..40)) {
            let labels = vec![1u8; scores.len()];
            let (v, _) = deviation_loss(&scores, &labels, &DeviationConfig::default()).unwrap();
            prop_assert_eq!(v, 0.0);
        }
    }
}
