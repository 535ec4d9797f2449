//! Obstacle/nominal barrier potential and its gradient on normalized samples.
//!
//! Per station `k` the potential is
//! `alpha * sigmoid(kappa * pen_k) + eps/2 * (dy_k^2 + dphi_k^2)`, where
//! `pen_k` is the log-sum-exp of the constraint components in meters and
//! `dy`, `dphi` are deviations from the nominal trajectory.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Scene, Trajectory};
use crate::{Error, Result};

/// Sigmoid arguments beyond this magnitude are treated as saturated.
pub const SIGMOID_CUTOFF: f64 = 36.0;

/// Diffusion state: `[y_0 .. y_{N-1}, phi_0 .. phi_{N-1}]` in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub data: Vec<f64>,
}

impl TrajectorySample {
    pub fn zeros(n: usize) -> Self {
        Self { data: vec![0.0; 2 * n] }
    }

    pub fn from_parts(y: &[f64], phi: &[f64]) -> Result<Self> {
        if y.len() != phi.len() {
            return Err(Error::LengthMismatch {
                expected: y.len(),
                got: phi.len(),
            });
        }
        let mut data = Vec::with_capacity(2 * y.len());
        data.extend_from_slice(y);
        data.extend_from_slice(phi);
        Ok(Self { data })
    }

    pub fn n_stations(&self) -> usize {
        self.data.len() / 2
    }

    pub fn y(&self) -> &[f64] {
        &self.data[..self.n_stations()]
    }

    pub fn phi(&self) -> &[f64] {
        &self.data[self.n_stations()..]
    }
}

/// Scaling between physical trajectories and diffusion samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub half_width: f64,
    pub phi_scale: f64,
}

impl Normalizer {
    pub fn new(half_width: f64, phi_scale: f64) -> Result<Self> {
        if !(half_width > 0.0 && phi_scale > 0.0) {
            return Err(Error::InvalidArgument(
                "normalization scales must be positive".into(),
            ));
        }
        Ok(Self {
            half_width,
            phi_scale,
        })
    }

    pub fn normalize(&self, traj: &Trajectory) -> TrajectorySample {
        let mut data = Vec::with_capacity(2 * traj.len());
        data.extend(traj.y_hat.iter().map(|y| y / self.half_width));
        data.extend(traj.phi_hat.iter().map(|p| p / self.phi_scale));
        TrajectorySample { data }
    }

    pub fn denormalize(&self, x: &TrajectorySample) -> Trajectory {
        Trajectory {
            y_hat: x.y().iter().map(|y| y * self.half_width).collect(),
            phi_hat: x.phi().iter().map(|p| p * self.phi_scale).collect(),
        }
    }
}

/// Obstacle-free reference plan in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalTrajectory {
    pub y_nom: Vec<f64>,
    pub phi_nom: Vec<f64>,
}

impl NominalTrajectory {
    pub fn centerline(n: usize) -> Self {
        Self {
            y_nom: vec![0.0; n],
            phi_nom: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.y_nom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_nom.is_empty()
    }

    pub fn as_trajectory(&self) -> Trajectory {
        Trajectory {
            y_hat: self.y_nom.clone(),
            phi_hat: self.phi_nom.clone(),
        }
    }
}

impl From<Trajectory> for NominalTrajectory {
    fn from(t: Trajectory) -> Self {
        Self {
            y_nom: t.y_hat,
            phi_nom: t.phi_hat,
        }
    }
}

/// Coordinates in which the quadratic nominal term is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeviationUnits {
    /// Meters and radians.
    #[default]
    Physical,
    /// The normalized diffusion coordinates.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierConfig {
    pub alpha: f64,
    pub epsilon: f64,
    /// Sigmoid sharpness in 1/m.
    pub kappa: f64,
    /// Log-sum-exp temperature in m.
    pub lse_temp: f64,
    pub normalizer: Normalizer,
    pub units: DeviationUnits,
    pub nominal: NominalTrajectory,
}

impl BarrierConfig {
    /// Defaults: `alpha = 0.4`, `eps = 16`, `kappa = 10 / half_width`,
    /// `lse_temp = 0.02`, `phi_scale = 0.6`.
    pub fn with_defaults(half_width: f64, nominal: NominalTrajectory) -> Self {
        Self {
            alpha: 0.4,
            epsilon: 16.0,
            kappa: 10.0 / half_width,
            lse_temp: 0.02,
            normalizer: Normalizer {
                half_width,
                phi_scale: 0.6,
            },
            units: DeviationUnits::Physical,
            nominal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.epsilon >= 0.0
            && self.kappa > 0.0
            && self.lse_temp > 0.0
            && self.normalizer.half_width > 0.0
            && self.normalizer.phi_scale > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(
                "barrier requires alpha > 0, epsilon >= 0, kappa > 0, lse_temp > 0".into(),
            ));
        }
        if self.nominal.y_nom.len() != self.nominal.phi_nom.len() {
            return Err(Error::LengthMismatch {
                expected: self.nominal.y_nom.len(),
                got: self.nominal.phi_nom.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z <= -SIGMOID_CUTOFF {
        0.0
    } else if z >= SIGMOID_CUTOFF {
        1.0
    } else {
        1.0 / (1.0 + (-z).exp())
    }
}

fn sigmoid_slope(z: f64) -> f64 {
    if z.abs() >= SIGMOID_CUTOFF {
        0.0
    } else {
        let s = 1.0 / (1.0 + (-z).exp());
        s * (1.0 - s)
    }
}

/// Barrier bound to one scene snapshot and query time.
pub struct Barrier<'a> {
    cfg: &'a BarrierConfig,
    scene: &'a Scene,
    positions: Vec<Point>,
}

impl<'a> Barrier<'a> {
    pub fn new(cfg: &'a BarrierConfig, scene: &'a Scene, query_time: f64) -> Result<Self> {
        cfg.validate()?;
        let n = scene.track.n_stations();
        if cfg.nominal.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: cfg.nominal.len(),
            });
        }
        Ok(Self {
            cfg,
            scene,
            positions: scene.obstacle_positions(query_time),
        })
    }

    fn check(&self, x: &[f64]) -> Result<usize> {
        let n = self.scene.track.n_stations();
        if x.len() != 2 * n {
            return Err(Error::LengthMismatch {
                expected: 2 * n,
                got: x.len(),
            });
        }
        Ok(n)
    }

    /// Penetration at station `k` for lateral offset `y` (m) and its slope in `y`.
    fn penetration(&self, k: usize, y: f64, buf: &mut Vec<(f64, f64)>) -> (f64, f64) {
        self.scene
            .constraint_values_with_grad(k, y, &self.positions, buf);
        let t = self.cfg.lse_temp;
        let m = buf.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut dz = 0.0;
        for &(c, dc) in buf.iter() {
            let w = ((c - m) / t).exp();
            z += w;
            dz += w * dc;
        }
        (m + t * z.ln(), dz / z)
    }

    /// Deviation of normalized coordinate `i` in the units of the quadratic
    /// term, together with d(deviation)/d(coordinate).
    fn deviation(&self, n: usize, i: usize, xi: f64) -> (f64, f64) {
        let nz = &self.cfg.normalizer;
        let (nom, scale) = if i < n {
            (self.cfg.nominal.y_nom[i], nz.half_width)
        } else {
            (self.cfg.nominal.phi_nom[i - n], nz.phi_scale)
        };
        match self.cfg.units {
            DeviationUnits::Physical => (xi * scale - nom, scale),
            DeviationUnits::Normalized => (xi - nom / scale, 1.0),
        }
    }

    pub fn value(&self, x: &TrajectorySample) -> Result<f64> {
        self.value_flat(&x.data)
    }

    /// [`Self::value`] on a flat `[y..., phi...]` slice.
    pub fn value_flat(&self, x: &[f64]) -> Result<f64> {
        let n = self.check(x)?;
        let hw = self.cfg.normalizer.half_width;
        let mut buf = Vec::new();
        let mut v = 0.0;
        for k in 0..n {
            let (pen, _) = self.penetration(k, x[k] * hw, &mut buf);
            v += self.cfg.alpha * sigmoid(self.cfg.kappa * pen);
        }
        for (i, &xi) in x.iter().enumerate() {
            let (d, _) = self.deviation(n, i, xi);
            v += 0.5 * self.cfg.epsilon * d * d;
        }
        Ok(v)
    }

    /// Gradient with respect to the normalized sample, written into `out`.
    pub fn grad_into(&self, x: &TrajectorySample, out: &mut [f64]) -> Result<()> {
        self.grad_flat(&x.data, out)
    }

    /// [`Self::grad_into`] on a flat `[y..., phi...]` slice.
    pub fn grad_flat(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.check(x)?;
        if out.len() != 2 * n {
            return Err(Error::LengthMismatch {
                expected: 2 * n,
                got: out.len(),
            });
        }
        let hw = self.cfg.normalizer.half_width;
        let kappa = self.cfg.kappa;
        let mut buf = Vec::new();
        for (i, (o, &xi)) in out.iter_mut().zip(x).enumerate() {
            let (d, dd) = self.deviation(n, i, xi);
            *o = self.cfg.epsilon * d * dd;
        }
        for k in 0..n {
            let (pen, dpen) = self.penetration(k, x[k] * hw, &mut buf);
            out[k] += self.cfg.alpha * kappa * sigmoid_slope(kappa * pen) * dpen * hw;
        }
        Ok(())
    }

    pub fn grad(&self, x: &TrajectorySample) -> Result<Vec<f64>> {
        let mut g = vec![0.0; x.data.len()];
        self.grad_into(x, &mut g)?;
        Ok(g)
    }
}

/// Barrier potential of `traj` on `scene` at `query_time`.
pub fn barrier_value(cfg: &BarrierConfig, scene: &Scene, traj: &TrajectorySample, query_time: f64) -> Result<f64> {
    Barrier::new(cfg, scene, query_time)?.value(traj)
}

/// Gradient of [`barrier_value`] with respect to the normalized sample.
pub fn barrier_grad(cfg: &BarrierConfig, scene: &Scene, traj: &TrajectorySample, query_time: f64) -> Result<Vec<f64>> {
    Barrier::new(cfg, scene, query_time)?.grad(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Obstacle, Track};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn track() -> Arc<Track> {
        Arc::new(Track::ellipse(2.0, 1.2, 0.5, 64).unwrap())
    }

    fn config(track: &Track) -> BarrierConfig {
        BarrierConfig::with_defaults(track.half_width(), NominalTrajectory::centerline(track.n_stations()))
    }

    /// Sharp enough that the centerline sits beyond the sigmoid cutoff.
    fn saturated_config(track: &Track) -> BarrierConfig {
        BarrierConfig {
            kappa: 100.0,
            ..config(track)
        }
    }

    fn random_scene(track: &Arc<Track>, rng: &mut ChaCha8Rng) -> Scene {
        let n_obs = rng.random_range(1..=4);
        let obstacles = (0..n_obs)
            .map(|_| {
                let s = rng.random_range(0.0..track.length());
                let y = rng.random_range(-0.5..0.5);
                Obstacle::fixed(track.point_at(s, y), rng.random_range(0.05..0.15))
            })
            .collect();
        Scene::empty(track.clone()).with_obstacles(obstacles)
    }

    fn random_sample(n: usize, rng: &mut ChaCha8Rng) -> TrajectorySample {
        let data = (0..2 * n)
            .map(|_| {
                let v: f64 = rng.random_range(-1.1..1.1);
                if v.abs() < 1e-4 { 1e-4 } else { v }
            })
            .collect();
        TrajectorySample { data }
    }

    #[test]
    fn normalizer_roundtrip() {
        let nz = Normalizer::new(0.5, 0.6).unwrap();
        let t = Trajectory {
            y_hat: vec![0.5, -0.13, 0.0],
            phi_hat: vec![0.2, -1.1, 0.0],
        };
        let x = nz.normalize(&t);
        assert_eq!(x.y()[0], 1.0);
        let back = nz.denormalize(&x);
        for (a, b) in back.y_hat.iter().chain(&back.phi_hat).zip(t.y_hat.iter().chain(&t.phi_hat)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(nz.normalize(&Trajectory::zeros(4)), TrajectorySample::zeros(4));
    }

    #[test]
    fn nominal_empty_scene_is_saturated() {
        let tr = track();
        let cfg = saturated_config(&tr);
        let scene = Scene::empty(tr.clone());
        let x = TrajectorySample::zeros(tr.n_stations());
        let v = barrier_value(&cfg, &scene, &x, 0.0).unwrap();
        assert!(v < 1e-3, "{v}");
        // Default sharpness leaves the centerline at kappa * pen = -7.8.
        let v_default = barrier_value(&config(&tr), &scene, &x, 0.0).unwrap();
        assert!(v_default < 0.05 * 0.4 * tr.n_stations() as f64);
        let g = barrier_grad(&cfg, &scene, &x, 0.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn station_inside_obstacle_costs_alpha() {
        let tr = track();
        let cfg = saturated_config(&tr);
        let n = tr.n_stations();
        let center = tr.point_at(tr.station(5).s, 0.1);
        let scene = Scene::empty(tr.clone()).with_obstacles(vec![Obstacle::fixed(center, 0.001)]);
        let mut x = TrajectorySample::zeros(n);
        x.data[5] = 0.1 / 0.5;
        let v = barrier_value(&cfg, &scene, &x, 0.0).unwrap();
        let quad = 0.5 * 16.0 * 0.1 * 0.1;
        // Neighbouring stations 0.16 m away contribute below 1e-3.
        assert_relative_eq!(v, 0.4 + quad, epsilon = 1e-3);
    }

    #[test]
    fn single_deviation_quadratic() {
        let tr = track();
        let cfg = saturated_config(&tr);
        let scene = Scene::empty(tr.clone());
        let n = tr.n_stations();
        let mut x = TrajectorySample::zeros(n);
        x.data[3] = 0.1 / 0.5;
        let v = barrier_value(&cfg, &scene, &x, 0.0).unwrap();
        let v0 = barrier_value(&cfg, &scene, &TrajectorySample::zeros(n), 0.0).unwrap();
        assert_relative_eq!(v - v0, 0.08, epsilon = 1e-12);
        let g = barrier_grad(&cfg, &scene, &x, 0.0).unwrap();
        // Physical-unit gradient is eps * delta; chain rule scales by half_width.
        assert_relative_eq!(g[3] / 0.5, 16.0 * 0.1, epsilon = 1e-9);
        assert!(g.iter().enumerate().all(|(i, v)| i == 3 || v.abs() < 1e-6));
    }

    #[test]
    fn normalized_units_quadratic() {
        let tr = track();
        let mut cfg = saturated_config(&tr);
        cfg.units = DeviationUnits::Normalized;
        let scene = Scene::empty(tr.clone());
        let n = tr.n_stations();
        let mut x = TrajectorySample::zeros(n);
        x.data[n + 2] = 0.1;
        let v = barrier_value(&cfg, &scene, &x, 0.0).unwrap();
        let v0 = barrier_value(&cfg, &scene, &TrajectorySample::zeros(n), 0.0).unwrap();
        assert_relative_eq!(v - v0, 0.08, epsilon = 1e-12);
        let g = barrier_grad(&cfg, &scene, &x, 0.0).unwrap();
        assert_relative_eq!(g[n + 2], 1.6, epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        let tr = track();
        let cfg = config(&tr);
        let scene = Scene::empty(tr.clone());
        let x = TrajectorySample::zeros(3);
        assert!(matches!(
            barrier_value(&cfg, &scene, &x, 0.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    fn fd_max_rel_error(cfg: &BarrierConfig, scene: &Scene, x: &TrajectorySample) -> f64 {
        let bar = Barrier::new(cfg, scene, 0.0).unwrap();
        let g = bar.grad(x).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut xp = x.clone();
        for i in 0..x.data.len() {
            let orig = xp.data[i];
            xp.data[i] = orig + h;
            let vp = bar.value(&xp).unwrap();
            xp.data[i] = orig - h;
            let vm = bar.value(&xp).unwrap();
            xp.data[i] = orig;
            let fd = (vp - vm) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let tr = track();
        let cfg = config(&tr);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let scene = random_scene(&tr, &mut rng);
            let x = random_sample(tr.n_stations(), &mut rng);
            let err = fd_max_rel_error(&cfg, &scene, &x);
            assert!(err <= 1e-5, "{err}");
        }
    }

    #[test]
    fn redundant_obstacle_beyond_saturation_is_invisible() {
        let tr = track();
        let cfg = config(&tr);
        let n = tr.n_stations();
        let scene = Scene::empty(tr.clone());
        let x = TrajectorySample::zeros(n);
        let v0 = barrier_value(&cfg, &scene, &x, 0.0).unwrap();
        // Far outside: kappa * pen <= -36 at every station.
        let far = Obstacle::fixed([40.0, 40.0], 0.1);
        let v1 = barrier_value(&cfg, &scene.with_obstacles(vec![far]), &x, 0.0).unwrap();
        assert!((v1 - v0).abs() <= 1e-9);
    }

    #[test]
    fn redundant_obstacle_change_is_bounded() {
        let tr = track();
        let cfg = config(&tr);
        let n = tr.n_stations();
        let scene = Scene::empty(tr.clone());
        let x = TrajectorySample::zeros(n);
        let v0 = barrier_value(&cfg, &scene, &x, 0.0).unwrap();
        // Outside the track edge: clearance to the centerline stations is >= 0.4 m.
        let obs = Obstacle::fixed(tr.point_at(1.0, 0.65), 0.05);
        let with = scene.with_obstacles(vec![obs]);
        let v1 = barrier_value(&cfg, &with, &x, 0.0).unwrap();
        let bound: f64 = (0..n)
            .map(|k| {
                let c = with.constraint_values(k, 0.0, 0.0)[1];
                cfg.alpha * sigmoid(cfg.kappa * (c + cfg.lse_temp * 2f64.ln()))
            })
            .sum();
        assert!(v1 >= v0 && v1 - v0 <= bound, "{} {}", v1 - v0, bound);
    }

    proptest! {
        #[test]
        fn value_non_negative(seed in 0u64..1000) {
            let tr = track();
            let cfg = config(&tr);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = random_scene(&tr, &mut rng);
            let x = random_sample(tr.n_stations(), &mut rng);
            prop_assert!(barrier_value(&cfg, &scene, &x, 0.0).unwrap() >= 0.0);
        }

        #[test]
        fn growing_obstacle_never_decreases_value(seed in 0u64..1000, grow in 0.0f64..0.2) {
            let tr = track();
            let cfg = config(&tr);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = random_scene(&tr, &mut rng);
            let x = random_sample(tr.n_stations(), &mut rng);
            let mut bigger = scene.obstacles.clone();
            bigger[0].radius += grow;
            let v0 = barrier_value(&cfg, &scene, &x, 0.0).unwrap();
            let v1 = barrier_value(&cfg, &scene.with_obstacles(bigger), &x, 0.0).unwrap();
            prop_assert!(v1 >= v0 - 1e-12);
        }

        #[test]
        fn quadratic_only_when_saturated(seed in 0u64..200) {
            let tr = track();
            let mut cfg = config(&tr);
            cfg.kappa = 500.0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = tr.n_stations();
            let data: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.3..0.3)).collect();
            let x = TrajectorySample { data };
            let scene = Scene::empty(tr.clone());
            let v = barrier_value(&cfg, &scene, &x, 0.0).unwrap();
            let q: f64 = x.y().iter().map(|y| (y * 0.5).powi(2)).sum::<f64>() * 8.0
                + x.phi().iter().map(|p| (p * 0.6).powi(2)).sum::<f64>() * 8.0;
            prop_assert!((v - q).abs() <= 1e-12 * q.max(1.0));
        }
    }
}
