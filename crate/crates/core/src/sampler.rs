//! Guided reverse-time Euler-Maruyama sampling and warm-start replanning.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::barrier::{Barrier, Normalizer, TrajectorySample};
use crate::geometry::{wrap_angle, Track, Trajectory};
use crate::schedule::{GuidanceSchedule, NoiseSchedule, TimeGrid};
use crate::scorenet::ScoreModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub eta: f64,
    pub steps: usize,
    pub warp: f64,
    /// `None` disables guidance (gamma identically zero).
    pub guidance: Option<GuidanceSchedule>,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    /// Bound on the max-abs entry of the score and of the barrier gradient;
    /// `None` disables clipping.
    pub clip: Option<f64>,
    /// Record per-step diagnostics.
    pub verbose: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            steps: 500,
            warp: 2.2,
            guidance: Some(GuidanceSchedule::default()),
            schedule: NoiseSchedule::default(),
            seed: 0,
            clip: Some(1e3),
            verbose: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidArgument(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip bound must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.steps, self.warp)
    }

    pub fn unguided(&self) -> Self {
        Self {
            guidance: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmStartConfig {
    pub steps: usize,
    /// Re-noising time; `None` uses `(steps / ref_steps)^warp`, the start of
    /// the last `steps` nodes of the reference grid.
    pub start_time: Option<f64>,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            start_time: None,
        }
    }
}

impl WarmStartConfig {
    pub fn start_time(&self, cfg: &SamplerConfig) -> Result<f64> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("warm start needs at least one step".into()));
        }
        let t = match self.start_time {
            Some(t) => t,
            None => (self.steps as f64 / cfg.steps as f64).min(1.0).powf(cfg.warp),
        };
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(t));
        }
        Ok(t)
    }
}

/// Per-step statistics averaged over chains.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub k: usize,
    pub t: f64,
    pub mean_abs_score: f64,
    pub mean_abs_grad: f64,
    pub clip_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleOutput {
    pub samples: Vec<TrajectorySample>,
    pub score_evals: usize,
    pub clip_count: usize,
    /// Empty unless `verbose`.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl SampleOutput {
    pub fn write_diagnostics(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "t_k", "mean_abs_score", "mean_abs_grad", "clip_count"])?;
        for d in &self.diagnostics {
            w.write_record([
                d.k.to_string(),
                format!("{:.9e}", d.t),
                format!("{:.9e}", d.mean_abs_score),
                format!("{:.9e}", d.mean_abs_grad),
                d.clip_count.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Barrier guidance for one scene snapshot.
pub struct Guide<'a> {
    pub barrier: &'a Barrier<'a>,
}

struct StepStats {
    abs_score: f64,
    abs_grad: f64,
    clips: usize,
}

fn clip(v: &mut [f64], bound: Option<f64>) -> bool {
    let Some(b) = bound else { return false };
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m > b {
        let s = b / m;
        v.iter_mut().for_each(|x| *x *= s);
        true
    } else {
        false
    }
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len().max(1) as f64
}

fn em_step_inner(
    cfg: &SamplerConfig,
    score: &dyn ScoreModel,
    guide: Option<&Guide>,
    x: &[f64],
    t: f64,
    dt: f64,
    noise: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, StepStats)> {
    if dt > 0.0 {
        return Err(Error::InvalidArgument(format!("reverse step needs dt <= 0, got {dt}")));
    }
    if noise.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: noise.len(),
        });
    }
    let beta = cfg.schedule.beta(t)?;
    let mut s = score.score(x, t)?;
    if s.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: s.len(),
        });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score"));
    }
    let mut clips = usize::from(clip(&mut s, cfg.clip));
    let abs_score = mean_abs(&s);
    let gamma = match (cfg.guidance, guide) {
        (Some(g), Some(_)) => g.gamma(t)?,
        _ => 0.0,
    };
    let mut abs_grad = 0.0;
    if gamma != 0.0 {
        let guide = guide.expect("gamma is zero without a guide");
        let mut g = vec![0.0; x.len()];
        guide.barrier.grad_flat(x, &mut g)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("barrier gradient"));
        }
        clips += usize::from(clip(&mut g, cfg.clip));
        abs_grad = mean_abs(&g);
        for (si, gi) in s.iter_mut().zip(&g) {
            *si -= gamma * gi;
        }
    }
    let c = 1.0 + cfg.eta;
    let mean: Vec<f64> = x
        .iter()
        .zip(&s)
        .map(|(&xi, &si)| xi + beta * (-xi - c * si) * dt)
        .collect();
    let amp = cfg.eta * (2.0 * beta).sqrt() * dt.abs().sqrt();
    let next = mean.iter().zip(noise).map(|(&m, &z)| m + amp * z).collect();
    Ok((
        mean,
        next,
        StepStats {
            abs_score,
            abs_grad,
            clips,
        },
    ))
}

/// One Euler-Maruyama step of the guided reverse SDE with explicit noise
/// `sigma_k`. Returns the mean iterate and the noised sample.
pub fn em_step(
    cfg: &SamplerConfig,
    score: &dyn ScoreModel,
    guide: Option<&Guide>,
    x: &[f64],
    t: f64,
    dt: f64,
    noise: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, n, _) = em_step_inner(cfg, score, guide, x, t, dt, noise)?;
    Ok((m, n))
}

fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

struct Chain<'a> {
    cfg: &'a SamplerConfig,
    score: &'a dyn ScoreModel,
    guide: Option<&'a Guide<'a>>,
}

impl Chain<'_> {
    /// Runs every grid step from `x`; `on_node(k + 1, mean)` sees each mean iterate.
    fn run(
        &self,
        grid: &TimeGrid,
        mut x: Vec<f64>,
        rng: &mut ChaCha8Rng,
        diag: &mut [StepDiagnostics],
        clips: &mut usize,
        mut on_node: impl FnMut(usize, &[f64]),
    ) -> Result<Vec<f64>> {
        let nodes = grid.nodes();
        let mut mean = x.clone();
        for k in 0..grid.steps() {
            let noise = normal_vec(x.len(), rng);
            let (m, next, st) = em_step_inner(self.cfg, self.score, self.guide, &x, nodes[k], grid.dt(k), &noise)?;
            *clips += st.clips;
            if let Some(d) = diag.get_mut(k) {
                d.mean_abs_score += st.abs_score;
                d.mean_abs_grad += st.abs_grad;
                d.clip_count += st.clips;
            }
            on_node(k + 1, &m);
            mean = m;
            x = next;
        }
        Ok(mean)
    }
}

fn new_diagnostics(cfg: &SamplerConfig, grid: &TimeGrid) -> Vec<StepDiagnostics> {
    if !cfg.verbose {
        return Vec::new();
    }
    (0..grid.steps())
        .map(|k| StepDiagnostics {
            k,
            t: grid.nodes()[k],
            ..Default::default()
        })
        .collect()
}

fn finish_diagnostics(diag: &mut [StepDiagnostics], chains: usize) {
    for d in diag {
        d.mean_abs_score /= chains as f64;
        d.mean_abs_grad /= chains as f64;
    }
}

/// Draws `count` independent chains from `N(0, I)` in `R^dim`; chain `i`
/// uses stream `i` of the ChaCha generator seeded with `cfg.seed`.
pub fn sample(cfg: &SamplerConfig, score: &dyn ScoreModel, guide: Option<&Guide>, dim: usize, count: usize) -> Result<SampleOutput> {
    sample_chains(cfg, score, guide, dim, 0..count as u64)
}

/// As [`sample`] for an explicit set of chain indices.
pub fn sample_chains(
    cfg: &SamplerConfig,
    score: &dyn ScoreModel,
    guide: Option<&Guide>,
    dim: usize,
    chains: impl IntoIterator<Item = u64>,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let chain = Chain { cfg, score, guide };
    let mut out = SampleOutput {
        diagnostics: new_diagnostics(cfg, &grid),
        ..Default::default()
    };
    for c in chains {
        let mut rng = chain_rng(cfg.seed, c);
        let x0 = normal_vec(dim, &mut rng);
        let m = chain.run(&grid, x0, &mut rng, &mut out.diagnostics, &mut out.clip_count, |_, _| {})?;
        out.samples.push(TrajectorySample { data: m });
        out.score_evals += grid.steps();
    }
    let n = out.samples.len();
    finish_diagnostics(&mut out.diagnostics, n);
    Ok(out)
}

/// One chain with copies of the mean iterate at the first grid node at or
/// below each requested time (the initial draw for `t >= 1`).
pub fn sample_with_snapshots(
    cfg: &SamplerConfig,
    score: &dyn ScoreModel,
    guide: Option<&Guide>,
    dim: usize,
    chain_index: u64,
    times: &[f64],
) -> Result<(TrajectorySample, Vec<(f64, TrajectorySample)>)> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let nodes = grid.nodes();
    let targets: Vec<usize> = times
        .iter()
        .map(|&t| nodes.iter().position(|&n| n <= t).unwrap_or(grid.steps()))
        .collect();
    let mut rng = chain_rng(cfg.seed, chain_index);
    let x0 = normal_vec(dim, &mut rng);
    let mut snaps: Vec<Option<(f64, TrajectorySample)>> = vec![None; times.len()];
    for (slot, &k) in snaps.iter_mut().zip(&targets) {
        if k == 0 {
            *slot = Some((nodes[0], TrajectorySample { data: x0.clone() }));
        }
    }
    let chain = Chain { cfg, score, guide };
    let mut clips = 0;
    let fin = chain.run(&grid, x0, &mut rng, &mut [], &mut clips, |k, m| {
        for (slot, &tk) in snaps.iter_mut().zip(&targets) {
            if tk == k {
                *slot = Some((nodes[k], TrajectorySample { data: m.to_vec() }));
            }
        }
    })?;
    Ok((
        TrajectorySample { data: fin },
        snaps.into_iter().map(|s| s.expect("every target node is visited")).collect(),
    ))
}

/// Re-noises `source` to the warm-start time with the closed-form marginal
/// and runs the remaining `warm.steps` nodes of the scaled grid.
pub fn warm_start_sample(
    cfg: &SamplerConfig,
    warm: &WarmStartConfig,
    source: &TrajectorySample,
    score: &dyn ScoreModel,
    guide: Option<&Guide>,
    chain_index: u64,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let tw = warm.start_time(cfg)?;
    if source.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("warm-start source"));
    }
    let grid = TimeGrid::scaled(warm.steps, cfg.warp, tw)?;
    let mut rng = chain_rng(cfg.seed, chain_index);
    let bb = cfg.schedule.beta_bar(tw)?;
    let sd = cfg.schedule.marginal_variance(tw)?.sqrt();
    let xi = normal_vec(source.data.len(), &mut rng);
    let x: Vec<f64> = source.data.iter().zip(&xi).map(|(&v, &z)| bb * v + sd * z).collect();
    let chain = Chain { cfg, score, guide };
    let mut out = SampleOutput {
        diagnostics: new_diagnostics(cfg, &grid),
        ..Default::default()
    };
    let m = chain.run(&grid, x, &mut rng, &mut out.diagnostics, &mut out.clip_count, |_, _| {})?;
    out.samples.push(TrajectorySample { data: m });
    out.score_evals = grid.steps();
    finish_diagnostics(&mut out.diagnostics, 1);
    Ok(out)
}

/// Plan file contents in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub stations: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub scene_time: f64,
    pub config_digest: String,
}

impl Plan {
    /// Denormalizes `x` and wraps the yaw channel to `(-pi, pi]`.
    pub fn from_sample(x: &TrajectorySample, track: &Track, normalizer: &Normalizer, scene_time: f64, config_digest: &str) -> Result<Self> {
        if x.n_stations() != track.n_stations() || x.data.len() % 2 != 0 {
            return Err(Error::LengthMismatch {
                expected: 2 * track.n_stations(),
                got: x.data.len(),
            });
        }
        let traj = normalizer.denormalize(x);
        Ok(Self {
            stations: track.stations().iter().map(|f| f.s).collect(),
            y_hat: traj.y_hat,
            phi_hat: traj.phi_hat.into_iter().map(wrap_angle).collect(),
            scene_time,
            config_digest: config_digest.to_string(),
        })
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            y_hat: self.y_hat.clone(),
            phi_hat: self.phi_hat.clone(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
