//! Closed-loop racing: replan on a fixed simulated period, track the plan
//! with a blind pure-pursuit unicycle and check collisions exactly.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::{PlanOutcome, Planner};
use crate::barrier::TrajectorySample;
use crate::geometry::{wrap_angle, Point, Scene, Track, Trajectory, DEFAULT_SAFETY_MARGIN, DEFAULT_VEHICLE_RADIUS};
use crate::sampler::WarmStartConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosedLoopConfig {
    /// Simulated seconds between replans.
    pub replan_period: f64,
    pub laps: usize,
    /// Pure-pursuit lookahead along the track (m).
    pub lookahead: f64,
    /// Constant forward speed (m/s).
    pub speed: f64,
    /// Integration step of the vehicle and the collision checker (s).
    pub sim_dt: f64,
    pub warm_start: bool,
    pub warm: WarmStartConfig,
    /// Cold replans tried after an infeasible warm plan before falling back;
    /// one more is tried when no warm plan was made.
    pub cold_retries: usize,
    pub vehicle_radius: f64,
    pub safety_margin: f64,
    pub scenario: Scenario,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            replan_period: 0.4,
            laps: 3,
            lookahead: 0.25,
            speed: 1.0,
            sim_dt: 0.005,
            warm_start: true,
            warm: WarmStartConfig::default(),
            cold_retries: 1,
            vehicle_radius: DEFAULT_VEHICLE_RADIUS,
            safety_margin: DEFAULT_SAFETY_MARGIN,
            scenario: Scenario::empty("empty"),
        }
    }
}

impl ClosedLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.replan_period > 0.0) || !(self.sim_dt > 0.0) || self.sim_dt > self.replan_period {
            return Err(Error::InvalidArgument("need 0 < sim_dt <= replan_period".into()));
        }
        if !(self.speed > 0.0) || !(self.lookahead > 0.0) {
            return Err(Error::InvalidArgument("speed and lookahead must be positive".into()));
        }
        if self.laps == 0 {
            return Err(Error::InvalidArgument("laps must be at least 1".into()));
        }
        self.scenario.validate()
    }
}

/// Summary metrics of a simulation or benchmark.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Contact episodes with an obstacle or the track edge.
    pub collisions: usize,
    pub feasible_plan_fraction: f64,
    /// Mean absolute lateral change between consecutive adopted plans (m).
    pub mean_plan_displacement: f64,
    /// Planned arc length over the lattice-oracle arc length, where measured.
    pub path_length_ratio: Option<f64>,
    /// Score evaluations of one cold and one warm plan.
    pub score_evals_cold: usize,
    pub score_evals_warm: usize,
    pub total_score_evals: usize,
    pub plans: usize,
    pub fallbacks: usize,
    pub laps_completed: f64,
    /// Informational only; excluded from determinism checks.
    pub wall_time_per_plan_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Cold,
    Warm,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    pub id: u32,
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Obstacles {
        time: f64,
        obstacles: Vec<ObstacleState>,
    },
    Plan {
        time: f64,
        tick: usize,
        source: PlanSource,
        attempts: usize,
        feasible: bool,
        y_hat: Vec<f64>,
        phi_hat: Vec<f64>,
    },
    Fallback {
        time: f64,
        tick: usize,
    },
    Pose {
        time: f64,
        x: f64,
        y: f64,
        theta: f64,
        progress: f64,
    },
    Collision {
        time: f64,
        x: f64,
        y: f64,
        /// Obstacle id, or `None` for leaving the track.
        obstacle: Option<u32>,
    },
    Finish {
        time: f64,
        laps: f64,
    },
}

#[derive(Debug, Clone, Copy)]
struct Vehicle {
    p: Point,
    theta: f64,
    s: f64,
    progress: f64,
}

/// Linear interpolation of the plan's lateral offset at arc length `s`.
fn plan_offset(track: &Track, y: &[f64], s: f64) -> f64 {
    let n = y.len();
    let u = s.rem_euclid(track.length()) / track.station_spacing();
    let k = (u.floor() as usize).min(n - 1);
    let a = u - k as f64;
    (1.0 - a) * y[k] + a * y[(k + 1) % n]
}

fn signed_offset(track: &Track, p: Point, s: f64) -> f64 {
    let c = track.position(s);
    let n = track.normal(s);
    (p[0] - c[0]) * n[0] + (p[1] - c[1]) * n[1]
}

impl Vehicle {
    fn start(track: &Track, y0: f64) -> Self {
        Self {
            p: track.point_at(0.0, y0),
            theta: track.heading(0.0),
            s: 0.0,
            progress: 0.0,
        }
    }

    /// Pure pursuit toward the plan point `lookahead` ahead of the projection.
    fn step(&mut self, track: &Track, plan: &[f64], cfg: &ClosedLoopConfig) {
        let st = self.s + cfg.lookahead;
        let target = track.point_at(st.rem_euclid(track.length()), plan_offset(track, plan, st));
        let dx = target[0] - self.p[0];
        let dy = target[1] - self.p[1];
        let ld = dx.hypot(dy).max(1e-6);
        let alpha = wrap_angle(dy.atan2(dx) - self.theta);
        let omega = 2.0 * cfg.speed * alpha.sin() / ld;
        self.theta = wrap_angle(self.theta + omega * cfg.sim_dt);
        self.p[0] += cfg.speed * self.theta.cos() * cfg.sim_dt;
        self.p[1] += cfg.speed * self.theta.sin() * cfg.sim_dt;
        let (s, _) = track.project(self.p);
        let l = track.length();
        let mut ds = s - self.s;
        if ds > 0.5 * l {
            ds -= l;
        } else if ds < -0.5 * l {
            ds += l;
        }
        self.progress += ds;
        self.s = s;
    }
}

/// What the vehicle disc touches at `time`, from the scripted obstacle state.
fn contact(track: &Track, cfg: &ClosedLoopConfig, v: &Vehicle, time: f64) -> Option<Option<u32>> {
    if signed_offset(track, v.p, v.s).abs() > track.half_width() - cfg.vehicle_radius {
        return Some(None);
    }
    for (id, s, y, r) in cfg.scenario.frenet_state(time) {
        let c = track.point_at(s.rem_euclid(track.length()), y);
        if (v.p[0] - c[0]).hypot(v.p[1] - c[1]) < r + cfg.vehicle_radius {
            return Some(Some(id));
        }
    }
    None
}

fn emit(trace: &mut Option<&mut dyn Write>, event: &TraceEvent) -> Result<()> {
    if let Some(w) = trace.as_mut() {
        let line = serde_json::to_string(event)?;
        writeln!(w, "{line}").map_err(|e| Error::io("trace", e))?;
    }
    Ok(())
}

/// Scene seen by the planner at simulated time `time`.
pub fn scene_at(planner: &Planner, cfg: &ClosedLoopConfig, time: f64) -> Scene {
    Scene {
        track: planner.track.clone(),
        obstacles: cfg.scenario.obstacles_at(&planner.track, time),
        tau: time,
        vehicle_radius: cfg.vehicle_radius,
        safety_margin: cfg.safety_margin,
    }
}

/// Runs the closed loop until `cfg.laps` laps are driven, writing one JSON
/// event per line to `trace`.
///
/// Each tick warm-starts from the most recent sample, feasible or not, and
/// falls back to cold plans and then to the last feasible plan (the nominal
/// trajectory before any).
pub fn simulate(planner: &Planner, cfg: &ClosedLoopConfig, mut trace: Option<&mut dyn Write>) -> Result<BenchReport> {
    cfg.validate()?;
    let track = planner.track.clone();
    let total = cfg.laps as f64 * track.length();
    let substeps = (cfg.replan_period / cfg.sim_dt).round() as usize;
    let max_ticks = (4.0 * total / (cfg.speed * cfg.replan_period)).ceil() as usize + 1;
    let nominal = planner.barrier.nominal.as_trajectory();
    let mut report = BenchReport::default();
    let mut adopted: Option<Trajectory> = None;
    let mut last_sample: Option<TrajectorySample> = None;
    let mut vehicle = Vehicle::start(&track, nominal.y_hat[0]);
    let mut in_contact = false;
    let mut displacement = 0.0;
    let mut transitions = 0usize;
    let mut feasible_plans = 0usize;
    let mut wall = 0.0;
    let mut time = 0.0;
    for tick in 0..max_ticks {
        time = tick as f64 * cfg.replan_period;
        let scene = scene_at(planner, cfg, time);
        emit(
            &mut trace,
            &TraceEvent::Obstacles {
                time,
                obstacles: cfg
                    .scenario
                    .frenet_state(time)
                    .into_iter()
                    .zip(&scene.obstacles)
                    .map(|((id, ..), o)| ObstacleState {
                        id,
                        center: o.center,
                        radius: o.radius,
                    })
                    .collect(),
            },
        )?;
        let started = Instant::now();
        let attempts_per_tick = cfg.cold_retries as u64 + 2;
        let mut attempt = 0usize;
        let mut chosen: Option<(PlanOutcome, PlanSource)> = None;
        if cfg.warm_start {
            if let Some(prev) = &last_sample {
                let out = planner.warm(prev, &scene, tick as u64 * attempts_per_tick)?;
                attempt += 1;
                report.total_score_evals += out.score_evals;
                report.score_evals_warm = out.score_evals;
                last_sample = Some(out.sample.clone());
                if out.feasible {
                    chosen = Some((out, PlanSource::Warm));
                }
            }
        }
        let budget = attempt + cfg.cold_retries + usize::from(attempt == 0);
        while chosen.is_none() && attempt < budget {
            let out = planner.cold(&scene, tick as u64 * attempts_per_tick + attempt as u64)?;
            attempt += 1;
            report.total_score_evals += out.score_evals;
            report.score_evals_cold = out.score_evals;
            last_sample = Some(out.sample.clone());
            if out.feasible {
                chosen = Some((out, PlanSource::Cold));
            }
        }
        wall += started.elapsed().as_secs_f64();
        report.plans += 1;
        let (plan, source, feasible) = match chosen {
            Some((out, source)) => {
                feasible_plans += 1;
                (Some(out), source, true)
            }
            None => {
                report.fallbacks += 1;
                emit(&mut trace, &TraceEvent::Fallback { time, tick })?;
                (None, PlanSource::Fallback, false)
            }
        };
        if let Some(out) = plan {
            if let Some(prev) = &adopted {
                displacement += out.trajectory.mean_displacement(prev);
                transitions += 1;
            }
            adopted = Some(out.trajectory);
        }
        let current = adopted.as_ref().unwrap_or(&nominal);
        emit(
            &mut trace,
            &TraceEvent::Plan {
                time,
                tick,
                source,
                attempts: attempt,
                feasible,
                y_hat: current.y_hat.clone(),
                phi_hat: current.phi_hat.clone(),
            },
        )?;
        emit(
            &mut trace,
            &TraceEvent::Pose {
                time,
                x: vehicle.p[0],
                y: vehicle.p[1],
                theta: vehicle.theta,
                progress: vehicle.progress,
            },
        )?;
        let y_plan = current.y_hat.clone();
        for j in 1..=substeps {
            vehicle.step(&track, &y_plan, cfg);
            let t = time + j as f64 * cfg.sim_dt;
            match contact(&track, cfg, &vehicle, t) {
                Some(what) if !in_contact => {
                    in_contact = true;
                    report.collisions += 1;
                    emit(
                        &mut trace,
                        &TraceEvent::Collision {
                            time: t,
                            x: vehicle.p[0],
                            y: vehicle.p[1],
                            obstacle: what,
                        },
                    )?;
                }
                Some(_) => {}
                None => in_contact = false,
            }
            if vehicle.progress >= total {
                break;
            }
        }
        if vehicle.progress >= total {
            time += cfg.replan_period;
            break;
        }
    }
    report.laps_completed = vehicle.progress / track.length();
    emit(
        &mut trace,
        &TraceEvent::Finish {
            time,
            laps: report.laps_completed,
        },
    )?;
    report.feasible_plan_fraction = feasible_plans as f64 / report.plans.max(1) as f64;
    report.mean_plan_displacement = if transitions > 0 { displacement / transitions as f64 } else { 0.0 };
    report.wall_time_per_plan_s = wall / report.plans.max(1) as f64;
    Ok(report)
}
