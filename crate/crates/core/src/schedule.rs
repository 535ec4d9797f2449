//! Scalar time-dependent coefficients of the diffusion.
//!
//! The forward process is the variance-preserving Ornstein-Uhlenbeck SDE
//! `dx = -beta(t) x dt + sqrt(2 beta(t)) dw` on the normalized horizon
//! `t in [0, 1]`, with mean fixed at the origin and a quadratic drift
//! strength `beta(t) = r1 t^2 + r0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized diffusion horizon.
pub const HORIZON: f64 = 1.0;

fn check_time(t: f64) -> Result<()> {
    if (0.0..=HORIZON).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(t))
    }
}

/// Quadratic drift-strength schedule `beta(t) = r1 t^2 + r0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub r1: f64,
    pub r0: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { r1: 100.0, r0: 30.0 }
    }
}

impl NoiseSchedule {
    pub fn new(r1: f64, r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) || !(r1 >= 0.0 && r1.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise schedule needs r0 > 0 and r1 >= 0 (got r1={r1}, r0={r0})"
            )));
        }
        Ok(Self { r1, r0 })
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.beta_unchecked(t))
    }

    #[inline]
    pub(crate) fn beta_unchecked(&self, t: f64) -> f64 {
        self.r1 * t * t + self.r0
    }

    /// Diffusion coefficient `g(t) = sqrt(2 beta(t))`.
    pub fn diffusion(&self, t: f64) -> Result<f64> {
        Ok((2.0 * self.beta(t)?).sqrt())
    }

    /// `int_0^t beta`.
    #[inline]
    pub(crate) fn integral_unchecked(&self, t: f64) -> f64 {
        self.r1 * t * t * t / 3.0 + self.r0 * t
    }

    /// Signal coefficient `exp(-int_0^t beta)`, evaluated from the closed-form
    /// antiderivative.
    pub fn beta_bar(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.beta_bar_unchecked(t))
    }

    #[inline]
    pub(crate) fn beta_bar_unchecked(&self, t: f64) -> f64 {
        (-self.integral_unchecked(t)).exp()
    }

    /// Per-coordinate variance of `x_t | x_0`:
    /// `g^2 / (2 beta) * (1 - beta_bar^2)`, which is `1 - beta_bar^2` here.
    pub fn marginal_variance(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.marginal_variance_unchecked(t))
    }

    #[inline]
    pub(crate) fn marginal_variance_unchecked(&self, t: f64) -> f64 {
        let bb = self.beta_bar_unchecked(t);
        1.0 - bb * bb
    }

    /// Mean and isotropic variance of the Gaussian marginal `p_t(x_t | x_0)`.
    pub fn marginal_params(&self, t: f64, x0: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_time(t)?;
        let bb = self.beta_bar_unchecked(t);
        let mean = x0.iter().map(|v| bb * v).collect();
        Ok((mean, self.marginal_variance_unchecked(t)))
    }
}

/// Sigmoid ramp of the barrier weight, `gamma(t) = h1 / (1 + exp(-h2 (h3 - t)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

impl Default for GuidanceSchedule {
    fn default() -> Self {
        Self {
            h1: 1.0,
            h2: 50.0,
            h3: 0.7,
        }
    }
}

impl GuidanceSchedule {
    pub fn gamma(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.gamma_unchecked(t))
    }

    #[inline]
    pub(crate) fn gamma_unchecked(&self, t: f64) -> f64 {
        self.h1 / (1.0 + (-self.h2 * (self.h3 - t)).exp())
    }
}

/// Warped denoising grid `t_k = (1 - k/M)^p`, running from 1 down to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    warp: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(steps: usize, warp: f64) -> Result<Self> {
        Self::scaled(steps, warp, 1.0)
    }

    /// The same warp applied to `[0, start]`: `t_k = start * (1 - k/M)^p`.
    ///
    /// With `start = (K/M_ref)^p` this reproduces the last `K` steps of the
    /// `M_ref`-step grid.
    pub fn scaled(steps: usize, warp: f64, start: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        if !(warp > 0.0 && warp.is_finite()) {
            return Err(Error::InvalidArgument(format!("warp exponent must be positive, got {warp}")));
        }
        check_time(start)?;
        let m = steps as f64;
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|k| start * (1.0 - k as f64 / m).powf(warp))
            .collect();
        // pin the endpoints against powf rounding
        nodes[0] = start;
        nodes[steps] = 0.0;
        Ok(Self { warp, nodes })
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn warp(&self) -> f64 {
        self.warp
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Step size `t_{k+1} - t_k` (negative).
    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }
}

/// Shorthand for [`TimeGrid::new`].
pub fn make_grid(steps: usize, warp: f64) -> Result<TimeGrid> {
    TimeGrid::new(steps, warp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn paper() -> NoiseSchedule {
        NoiseSchedule::new(100.0, 30.0).unwrap()
    }

    // Adaptive Simpson quadrature, independent of the closed-form antiderivative.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    #[test]
    fn beta_values() {
        let s = paper();
        assert_eq!(s.beta(0.0).unwrap(), 30.0);
        assert_eq!(s.beta(1.0).unwrap(), 130.0);
        assert_eq!(s.beta(0.5).unwrap(), 55.0);
        assert!(matches!(s.beta(1.5), Err(Error::Domain(_))));
        assert!(matches!(s.beta(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn beta_bar_endpoints() {
        let s = paper();
        assert_eq!(s.beta_bar(0.0).unwrap(), 1.0);
        let expected = (-190.0f64 / 3.0).exp();
        assert_relative_eq!(s.beta_bar(1.0).unwrap(), expected, max_relative = 1e-14);
        assert!(expected > 3.0e-28 && expected < 3.2e-28);
    }

    #[test]
    fn beta_bar_matches_quadrature() {
        let s = paper();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let t: f64 = rng.random();
            let integral = simpson(&|u| s.beta_unchecked(u), 0.0, t, 1e-13);
            let oracle = (-integral).exp();
            assert!((s.beta_bar(t).unwrap() - oracle).abs() <= 1e-10, "t={t}");
        }
    }

    #[test]
    fn marginal_params_limits() {
        let s = paper();
        let x0 = vec![0.3, -1.2, 2.0];
        let (mean, var) = s.marginal_params(0.0, &x0).unwrap();
        assert_eq!(mean, x0);
        assert_eq!(var, 0.0);
        let (mean, var) = s.marginal_params(1.0, &x0).unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-26));
        assert_relative_eq!(var, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn marginal_monte_carlo() {
        // forward-simulate the SDE with fine Euler-Maruyama steps and compare
        // the empirical moments with the closed form at t = 0.3
        let s = paper();
        let t_end = 0.3;
        let x0 = 0.8;
        let steps = 600;
        let h = t_end / steps as f64;
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let mut x = x0;
            for i in 0..steps {
                // midpoint beta keeps the Euler bias well below the MC error
                let tm = (i as f64 + 0.5) * h;
                let b = s.beta_unchecked(tm);
                let z: f64 = rng.sample(StandardNormal);
                x += -b * x * h + (2.0 * b * h).sqrt() * z;
            }
            sum += x;
            sum2 += x * x;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = sum2 / nf - mean * mean;
        let (m, v) = s.marginal_params(t_end, &[x0]).unwrap();
        let se_mean = (v / nf).sqrt();
        let se_var = v * (2.0 / (nf - 1.0)).sqrt();
        assert!((mean - m[0]).abs() < 3.0 * se_mean, "mean {mean} vs {}", m[0]);
        assert!((var - v).abs() < 3.0 * se_var, "var {var} vs {v}");
    }

    #[test]
    fn gamma_values() {
        let g = GuidanceSchedule::default();
        assert!((g.gamma(0.7).unwrap() - 0.5).abs() <= 1e-12);
        let expected_end = 1.0 / (1.0 + 15f64.exp());
        assert_relative_eq!(g.gamma(1.0).unwrap(), expected_end, max_relative = 1e-12);
        assert!(g.gamma(1.0).unwrap() <= 1e-6);
        assert!((g.gamma(0.0).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn grid_examples() {
        assert_eq!(make_grid(1, 2.2).unwrap().nodes(), &[1.0, 0.0]);
        let g = make_grid(2, 2.2).unwrap();
        assert_relative_eq!(g.nodes()[1], 0.5f64.powf(2.2), max_relative = 1e-15);
        assert!((g.nodes()[1] - 0.2176).abs() < 1e-4);
        let u = make_grid(10, 1.0).unwrap();
        for (k, t) in u.nodes().iter().enumerate() {
            assert_relative_eq!(*t, 1.0 - k as f64 / 10.0, epsilon = 1e-15);
        }
        assert!(make_grid(0, 2.2).is_err());
    }

    #[test]
    fn scaled_grid_is_reference_tail() {
        let reference = make_grid(500, 2.2).unwrap();
        let tw = (50.0f64 / 500.0).powf(2.2);
        let tail = TimeGrid::scaled(50, 2.2, tw).unwrap();
        for (i, t) in tail.nodes().iter().enumerate() {
            assert_relative_eq!(*t, reference.nodes()[450 + i], max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    proptest! {
        #[test]
        fn grid_strictly_decreasing(m in 1usize..=10_000, p in 0.01f64..=5.0) {
            let g = make_grid(m, p).unwrap();
            let n = g.nodes();
            prop_assert_eq!(n[0], 1.0);
            prop_assert_eq!(n[m], 0.0);
            for k in 0..m {
                prop_assert!(g.dt(k) < 0.0, "k={} nodes {} {}", k, n[k], n[k + 1]);
            }
        }

        #[test]
        fn variance_identity(t in 0.0f64..=1.0, r1 in 0.0f64..300.0, r0 in 0.1f64..100.0) {
            let s = NoiseSchedule::new(r1, r0).unwrap();
            let bb = s.beta_bar(t).unwrap();
            let (_, var) = s.marginal_params(t, &[1.0]).unwrap();
            prop_assert_eq!(var, 1.0 - bb * bb);
            let g = s.diffusion(t).unwrap();
            prop_assert!((g * g - 2.0 * s.beta(t).unwrap()).abs() <= 1e-12 * g * g);
        }

        #[test]
        fn gamma_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let g = GuidanceSchedule::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(g.gamma(lo).unwrap() >= g.gamma(hi).unwrap());
        }

        #[test]
        fn beta_bar_decreasing(a in 0.0f64..1.0, d in 1e-6f64..1.0) {
            let s = paper();
            let b = (a + d).min(1.0);
            prop_assume!(b > a);
            let (ba, bb) = (s.beta_bar(a).unwrap(), s.beta_bar(b).unwrap());
            prop_assert!(bb < ba || (ba == 0.0 && bb == 0.0));
        }
    }
}
