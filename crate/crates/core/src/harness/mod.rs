//! Run configuration, the planner facade, closed-loop simulation, benchmarks
//! and figure output.

pub mod bench;
pub mod figures;
pub mod scenario;
pub mod sim;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::barrier::{Barrier, BarrierConfig, DeviationUnits, NominalTrajectory, Normalizer, TrajectorySample};
use crate::data::{sha256_hex, DatasetConfig, Manifest};
use crate::geometry::{wrap_angle, Scene, Track, Trajectory};
use crate::sampler::{sample_chains, warm_start_sample, Guide, SamplerConfig, WarmStartConfig};
use crate::schedule::{GuidanceSchedule, NoiseSchedule};
use crate::scorenet::{Architecture, ScoreModel, TrainConfig};
use crate::{Error, Result};

pub use bench::{bench_optimality, bench_warm_start, median_ratio, single_obstacle_scenes, OptimalityRow, WarmBench, WarmRow};
pub use scenario::{Scenario, ScenarioEvent, Waypoint};
pub use sim::{scene_at, simulate, BenchReport, ClosedLoopConfig, TraceEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierSection {
    pub alpha: f64,
    pub epsilon: f64,
    /// Sigmoid sharpness in 1/m; `None` means `10 / half_width`.
    pub kappa: Option<f64>,
    pub lse_temp: f64,
    pub units: DeviationUnits,
}

impl Default for BarrierSection {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            epsilon: 16.0,
            kappa: None,
            lse_temp: 0.02,
            units: DeviationUnits::Physical,
        }
    }
}

impl BarrierSection {
    pub fn build(&self, normalizer: Normalizer, nominal: NominalTrajectory) -> Result<BarrierConfig> {
        let cfg = BarrierConfig {
            alpha: self.alpha,
            epsilon: self.epsilon,
            kappa: self.kappa.unwrap_or(10.0 / normalizer.half_width),
            lse_temp: self.lse_temp,
            normalizer,
            units: self.units,
            nominal,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    pub eta: f64,
    pub steps: usize,
    pub warp: f64,
    /// `None` disables guidance.
    pub guidance: Option<GuidanceSchedule>,
    pub clip: Option<f64>,
    pub verbose: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            eta: d.eta,
            steps: d.steps,
            warp: d.warp,
            guidance: d.guidance,
            clip: d.clip,
            verbose: d.verbose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Paired seeds for the warm-start comparison.
    pub warm_seeds: usize,
    /// Replanning ticks of the dynamic warm-start sequence.
    pub warm_ticks: usize,
    pub opt_scenes: usize,
    pub eval_scenes: usize,
    pub scenarios: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warm_seeds: 20,
            warm_ticks: 20,
            opt_scenes: 50,
            eval_scenes: 50,
            scenarios: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub closed_loop: ClosedLoopConfig,
    pub bench: BenchConfig,
}

/// Every tunable of a run, loaded from one JSON file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub barrier: BarrierSection,
    pub sampler: SamplerSection,
    pub warm_start: WarmStartConfig,
    pub data: DatasetConfig,
    pub scorenet: Architecture,
    pub train: TrainConfig,
    pub harness: HarnessConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies `seed` to the data, training and sampling streams.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            eta: s.eta,
            steps: s.steps,
            warp: s.warp,
            guidance: s.guidance,
            schedule: self.schedule,
            seed: self.seed,
            clip: s.clip,
            verbose: s.verbose,
        }
    }

    pub fn barrier_config(&self, manifest: &Manifest) -> Result<BarrierConfig> {
        self.barrier.build(manifest.normalizer, manifest.nominal.clone())
    }
}

/// A plan with its feasibility verdict on the scene it was made for.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub sample: TrajectorySample,
    pub trajectory: Trajectory,
    pub feasible: bool,
    pub score_evals: usize,
    pub clips: usize,
}

/// Score model plus everything needed to turn a scene into a plan.
pub struct Planner<'a> {
    pub score: &'a dyn ScoreModel,
    pub track: Arc<Track>,
    pub barrier: BarrierConfig,
    pub sampler: SamplerConfig,
    pub warm: WarmStartConfig,
}

impl<'a> Planner<'a> {
    pub fn new(score: &'a dyn ScoreModel, track: Arc<Track>, barrier: BarrierConfig, sampler: SamplerConfig, warm: WarmStartConfig) -> Result<Self> {
        barrier.validate()?;
        sampler.validate()?;
        if barrier.nominal.len() != track.n_stations() {
            return Err(Error::LengthMismatch {
                expected: track.n_stations(),
                got: barrier.nominal.len(),
            });
        }
        Ok(Self {
            score,
            track,
            barrier,
            sampler,
            warm,
        })
    }

    pub fn unguided(&self) -> Planner<'a> {
        Planner {
            score: self.score,
            track: self.track.clone(),
            barrier: self.barrier.clone(),
            sampler: self.sampler.unguided(),
            warm: self.warm.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.track.n_stations()
    }

    fn outcome(&self, scene: &Scene, sample: TrajectorySample, score_evals: usize, clips: usize) -> Result<PlanOutcome> {
        let mut trajectory = self.barrier.normalizer.denormalize(&sample);
        trajectory.phi_hat.iter_mut().for_each(|p| *p = wrap_angle(*p));
        let feasible = scene.fully_feasible(&trajectory, scene.tau)?;
        Ok(PlanOutcome {
            sample,
            trajectory,
            feasible,
            score_evals,
            clips,
        })
    }

    /// Plan from Gaussian noise over the full grid using chain `chain`.
    pub fn cold(&self, scene: &Scene, chain: u64) -> Result<PlanOutcome> {
        let barrier = Barrier::new(&self.barrier, scene, scene.tau)?;
        let guide = Guide { barrier: &barrier };
        let mut out = sample_chains(&self.sampler, self.score, Some(&guide), self.dim(), [chain])?;
        let s = out.samples.pop().expect("one chain requested");
        self.outcome(scene, s, out.score_evals, out.clip_count)
    }

    /// Plan by re-noising `prev` and running the warm-start tail.
    pub fn warm(&self, prev: &TrajectorySample, scene: &Scene, chain: u64) -> Result<PlanOutcome> {
        let barrier = Barrier::new(&self.barrier, scene, scene.tau)?;
        let guide = Guide { barrier: &barrier };
        let mut out = warm_start_sample(&self.sampler, &self.warm, prev, self.score, Some(&guide), chain)?;
        let s = out.samples.pop().expect("one chain requested");
        self.outcome(scene, s, out.score_evals, out.clip_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_and_seed_propagates() {
        let cfg = RunConfig::default().with_seed(7);
        assert_eq!(cfg.data.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.sampler_config().seed, 7);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        let partial: RunConfig = serde_json::from_str(r#"{"sampler": {"eta": 0.5}}"#).unwrap();
        assert_eq!(partial.sampler.eta, 0.5);
        assert_eq!(partial.sampler.steps, 500);
    }

    #[test]
    fn default_kappa_follows_half_width() {
        let nz = Normalizer::new(0.5, 0.6).unwrap();
        let b = BarrierSection::default().build(nz, NominalTrajectory::centerline(4)).unwrap();
        assert_eq!(b.kappa, 20.0);
    }
}
