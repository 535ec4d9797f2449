//! Closed-form scores and the common interface the sampler consumes.

use serde::{Deserialize, Serialize};

use super::{Scalar, ScoreNet};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// Anything that maps `(x_t, t)` to an estimate of the score of the marginal.
pub trait ScoreModel: Sync {
    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl<T: Scalar> ScoreModel for ScoreNet<T> {
    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let xt: Vec<T> = x.iter().map(|&v| T::from_f64(v).unwrap_or_else(T::nan)).collect();
        let out = self.forward(&xt, t)?;
        Ok(out.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    PointMass,
    IsotropicGaussian,
}

/// Exact score of the forward marginal when the data are `N(m, s^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScoreOracle {
    pub kind: OracleKind,
    pub mean: Vec<f64>,
    pub std: f64,
    pub schedule: NoiseSchedule,
}

impl AnalyticScoreOracle {
    pub fn point_mass(mean: Vec<f64>, schedule: NoiseSchedule) -> Self {
        Self {
            kind: OracleKind::PointMass,
            mean,
            std: 0.0,
            schedule,
        }
    }

    pub fn gaussian(mean: Vec<f64>, std: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(std.is_finite() && std >= 0.0) {
            return Err(Error::InvalidArgument(format!("oracle std {std}")));
        }
        Ok(Self {
            kind: OracleKind::IsotropicGaussian,
            mean,
            std,
            schedule,
        })
    }

    fn data_std(&self) -> f64 {
        match self.kind {
            OracleKind::PointMass => 0.0,
            OracleKind::IsotropicGaussian => self.std,
        }
    }

    /// Variance of each coordinate of `x_t`.
    pub fn marginal_variance(&self, t: f64) -> Result<f64> {
        let s = self.data_std();
        if t == 0.0 && s == 0.0 {
            return Err(Error::InvalidArgument("point-mass score is singular at t = 0".into()));
        }
        let bb = self.schedule.beta_bar(t)?;
        Ok(s * s * bb * bb + self.schedule.marginal_variance(t)?)
    }

    pub fn oracle_score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::LengthMismatch {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        let var = self.marginal_variance(t)?;
        let bb = self.schedule.beta_bar(t)?;
        Ok(x.iter().zip(&self.mean).map(|(&xi, &m)| -(xi - bb * m) / var).collect())
    }
}

impl ScoreModel for AnalyticScoreOracle {
    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.oracle_score(x, t)
    }
}

/// Score of the stationary law `N(0, I)`, independent of `t`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StandardNormalScore;

impl ScoreModel for StandardNormalScore {
    fn score(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(x.iter().map(|v| -v).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(m: Vec<f64>) -> AnalyticScoreOracle {
        AnalyticScoreOracle::point_mass(m, NoiseSchedule::default())
    }

    #[test]
    fn zero_at_the_marginal_mode() {
        let o = oracle(vec![0.4, -1.3, 2.0]);
        let t = 0.45;
        let bb = o.schedule.beta_bar(t).unwrap();
        let x: Vec<f64> = o.mean.iter().map(|m| bb * m).collect();
        assert!(o.oracle_score(&x, t).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn terminal_time_is_standard_normal() {
        let o = oracle(vec![3.0, -5.0]);
        let x = [0.7, -1.1];
        let s = o.oracle_score(&x, 1.0).unwrap();
        for (a, b) in s.iter().zip(&x) {
            assert!((a + b).abs() < 1e-9);
        }
    }

    #[test]
    fn point_mass_matches_numeric_log_density() {
        let o = oracle(vec![0.8]);
        let t = 0.3;
        let bb = o.schedule.beta_bar(t).unwrap();
        let var = 1.0 - bb * bb;
        let log_p = |x: f64| -0.5 * (x - bb * 0.8).powi(2) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let h = 1e-5;
        for x in [-1.0, 0.0, 0.3, 1.7] {
            let fd = (log_p(x + h) - log_p(x - h)) / (2.0 * h);
            let s = o.oracle_score(&[x], t).unwrap()[0];
            assert!((fd - s).abs() < 1e-6 * s.abs().max(1.0), "{fd} {s}");
        }
    }

    #[test]
    fn singular_point_mass_at_zero_time_rejected() {
        assert!(oracle(vec![1.0]).oracle_score(&[1.0], 0.0).is_err());
        let g = AnalyticScoreOracle::gaussian(vec![1.0], 0.5, NoiseSchedule::default()).unwrap();
        let s = g.oracle_score(&[2.0], 0.0).unwrap()[0];
        assert!((s + 4.0).abs() < 1e-12);
    }
}
