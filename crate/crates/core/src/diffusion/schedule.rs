use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown schedule `{other}` (expected linear or cosine)"))),
        }
    }
}

/// Per-step noise coefficients. Step `t` (1-based) lives at index `t - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl Schedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear if steps == 1 => vec![beta_start],
            ScheduleKind::Linear => (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect(),
            ScheduleKind::Cosine => {
                // Nichol & Dhariwal's cosine curve, each step clamped into the beta range.
                let s = 0.008;
                let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                (1..=steps)
                    .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(beta_start, beta_end))
                    .collect()
            }
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta_at(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check(t)?])
    }

    pub fn alpha_at(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check(t)?])
    }

    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check(t)?])
    }

    /// `y_t = sqrt(ᾱ_t)·y0 + sqrt(1 - ᾱ_t)·ε`, elementwise.
    pub fn noise_to_t(&self, y0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        if y0.len() != eps.len() {
            return Err(Error::shape("noise_to_t", format!("y0 has {} values, eps {}", y0.len(), eps.len())));
        }
        Ok(noise_with(self.alpha_bar_at(t)?, y0, eps))
    }
}

pub(crate) fn noise_with(alpha_bar: f64, y0: &[f64], eps: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    y0.iter().zip(eps).map(|(y, e)| a * y + b * e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_default_ends_near_gaussian() {
        let s = Schedule::new(100, 1e-4, 0.05, ScheduleKind::Linear).unwrap();
        assert!(s.alpha_bar[99] < 0.1, "{}", s.alpha_bar[99]);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        let mut prod = 1.0;
        for (a, ab) in s.alpha.iter().zip(&s.alpha_bar) {
            prod *= a;
            assert!((prod - ab).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step() {
        let s = Schedule::new(1, 0.02, 0.02, ScheduleKind::Linear).unwrap();
        assert_eq!(s.alpha_bar, vec![s.alpha[0]]);
        assert_eq!(s.alpha[0], 1.0 - 0.02);
    }

    #[test]
    fn cosine_is_valid() {
        let s = Schedule::new(50, 1e-4, 0.5, ScheduleKind::Cosine).unwrap();
        assert!(s.beta.iter().all(|b| *b > 0.0 && *b < 1.0));
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(Schedule::new(10, 0.0, 0.1, ScheduleKind::Linear).is_err());
        assert!(Schedule::new(10, 0.2, 0.1, ScheduleKind::Linear).is_err());
        assert!(Schedule::new(10, 0.1, 1.0, ScheduleKind::Linear).is_err());
        assert!(Schedule::new(0, 0.1, 0.2, ScheduleKind::Linear).is_err());
    }

    #[test]
    fn noising_hand_values() {
        let y = noise_with(0.25, &[1.0, 0.0], &[1.0, 1.0]);
        assert!((y[0] - (0.5 + 0.75f64.sqrt())).abs() < 1e-15);
        assert!((y[0] - 1.3660).abs() < 1e-4 && (y[1] - 0.8660).abs() < 1e-4);
        assert_eq!(noise_with(1.0, &[0.3, -2.0], &[5.0, 5.0]), vec![0.3, -2.0]);
        let s = Schedule::new(10, 1e-3, 0.1, ScheduleKind::Linear).unwrap();
        assert!(s.noise_to_t(&[0.0], 0, &[0.0]).is_err());
        assert!(s.noise_to_t(&[0.0], 11, &[0.0]).is_err());
    }
}
