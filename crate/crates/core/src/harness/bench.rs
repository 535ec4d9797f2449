//! Warm-start and near-optimality benchmarks.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::sim::{scene_at, BenchReport, ClosedLoopConfig};
use super::Planner;
use crate::data::{plan_expert, LatticeConfig, ObstacleRanges};
use crate::geometry::{Scene, Track};
use crate::{Error, Result};

/// One paired seed on the unchanged scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmRow {
    pub seed: u64,
    /// Displacement between two independent cold plans (m).
    pub cold_displacement: f64,
    /// Displacement between the first cold plan and a warm replan from it (m).
    pub warm_displacement: f64,
    pub cold_feasible: bool,
    pub warm_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmBench {
    pub rows: Vec<WarmRow>,
    pub score_evals_cold: usize,
    pub score_evals_warm: usize,
    pub eval_ratio: f64,
    pub mean_cold_displacement: f64,
    pub mean_warm_displacement: f64,
    pub displacement_ratio: f64,
    /// Feasible fraction of the cold and warm sequences over the dynamic scenario.
    pub dynamic_cold_feasible: f64,
    pub dynamic_warm_feasible: f64,
    pub dynamic_ticks: usize,
}

impl WarmBench {
    pub fn report(&self) -> BenchReport {
        BenchReport {
            feasible_plan_fraction: self.dynamic_warm_feasible,
            mean_plan_displacement: self.mean_warm_displacement,
            score_evals_cold: self.score_evals_cold,
            score_evals_warm: self.score_evals_warm,
            plans: 3 * self.rows.len() + 2 * self.dynamic_ticks,
            ..Default::default()
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

/// Paired cold-vs-warm comparison.
///
/// For each seed, two independent cold plans give the cold displacement and a
/// warm replan of the first gives the warm displacement, all on `scene`. The
/// dynamic part replans every `period` seconds along `scenario`, once with
/// cold plans only and once warm-starting from the previous plan.
pub fn bench_warm_start(planner: &Planner, scene: &Scene, seeds: usize, scenario: &Scenario, ticks: usize, period: f64) -> Result<WarmBench> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let rows: Vec<(WarmRow, usize, usize)> = (0..seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let a = planner.cold(scene, 3 * seed)?;
            let b = planner.cold(scene, 3 * seed + 1)?;
            let w = planner.warm(&a.sample, scene, 3 * seed + 2)?;
            Ok((
                WarmRow {
                    seed,
                    cold_displacement: a.trajectory.mean_displacement(&b.trajectory),
                    warm_displacement: a.trajectory.mean_displacement(&w.trajectory),
                    cold_feasible: b.feasible,
                    warm_feasible: w.feasible,
                },
                b.score_evals,
                w.score_evals,
            ))
        })
        .collect::<Result<_>>()?;
    let (cold_evals, warm_evals) = (rows[0].1, rows[0].2);
    let rows: Vec<WarmRow> = rows.into_iter().map(|r| r.0).collect();
    let n = rows.len() as f64;
    let mean_cold = rows.iter().map(|r| r.cold_displacement).sum::<f64>() / n;
    let mean_warm = rows.iter().map(|r| r.warm_displacement).sum::<f64>() / n;

    let loop_cfg = ClosedLoopConfig {
        scenario: scenario.clone(),
        vehicle_radius: scene.vehicle_radius,
        safety_margin: scene.safety_margin,
        ..Default::default()
    };
    let scenes: Vec<Scene> = (0..ticks).map(|j| scene_at(planner, &loop_cfg, j as f64 * period)).collect();
    let cold_ok: Vec<bool> = scenes
        .par_iter()
        .enumerate()
        .map(|(j, s)| planner.cold(s, 1_000_000 + j as u64).map(|o| o.feasible))
        .collect::<Result<_>>()?;
    let mut warm_ok = Vec::with_capacity(ticks);
    let mut prev = None;
    for (j, s) in scenes.iter().enumerate() {
        let out = match &prev {
            None => planner.cold(s, 2_000_000)?,
            Some(p) => planner.warm(p, s, 2_000_000 + j as u64)?,
        };
        warm_ok.push(out.feasible);
        prev = Some(out.sample);
    }
    let frac = |v: &[bool]| v.iter().filter(|f| **f).count() as f64 / v.len().max(1) as f64;
    Ok(WarmBench {
        rows,
        score_evals_cold: cold_evals,
        score_evals_warm: warm_evals,
        eval_ratio: cold_evals as f64 / warm_evals as f64,
        mean_cold_displacement: mean_cold,
        mean_warm_displacement: mean_warm,
        displacement_ratio: mean_warm / mean_cold,
        dynamic_cold_feasible: frac(&cold_ok),
        dynamic_warm_feasible: frac(&warm_ok),
        dynamic_ticks: ticks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityRow {
    pub scene: usize,
    /// `None` when the lattice oracle finds no feasible cycle.
    pub oracle_length: Option<f64>,
    pub plan_length: f64,
    pub ratio: Option<f64>,
    pub plan_feasible: bool,
}

/// Guided plan length over the lattice-oracle length, both measured as the
/// flattened Frenet length of the closed path. Oracle-infeasible scenes keep
/// `ratio = None`.
pub fn bench_optimality(planner: &Planner, scenes: &[Scene], lattice: &LatticeConfig) -> Result<Vec<OptimalityRow>> {
    scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let oracle = match plan_expert(scene, lattice) {
                Ok(p) => Some(p.trajectory.frenet_length(&scene.track)),
                Err(e) if e.is_infeasible_input() => None,
                Err(e) => return Err(e),
            };
            let plan = planner.cold(scene, i as u64)?;
            let plan_length = plan.trajectory.frenet_length(&scene.track);
            Ok(OptimalityRow {
                scene: i,
                oracle_length: oracle,
                plan_length,
                ratio: oracle.map(|o| plan_length / o),
                plan_feasible: plan.feasible,
            })
        })
        .collect()
}

/// Median ratio over the scenes the oracle could solve.
pub fn median_ratio(rows: &[OptimalityRow]) -> Option<f64> {
    let mut r: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    if r.is_empty() {
        return None;
    }
    r.sort_by(f64::total_cmp);
    let n = r.len();
    Some(if n % 2 == 1 { r[n / 2] } else { 0.5 * (r[n / 2 - 1] + r[n / 2]) })
}

/// `count` scenes with one random static obstacle each.
pub fn single_obstacle_scenes(track: &std::sync::Arc<Track>, count: usize, seed: u64) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = ObstacleRanges::base();
    (0..count)
        .map(|_| Scene::empty(track.clone()).with_obstacles(vec![ranges.draw(track, &mut rng)]))
        .collect()
}

pub fn write_rows<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
