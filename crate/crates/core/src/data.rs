//! Expert trajectories and the training dataset.
//!
//! Experts come from a cyclic shortest path over a station x lateral-offset
//! lattice, then feasibility-preserving averaging. Each base scene is
//! multiplied by adding redundant obstacles that clear the expert path.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::barrier::{NominalTrajectory, Normalizer, TrajectorySample};
use crate::geometry::{Obstacle, Scene, SceneSpec, Track, Trajectory};
use crate::{Error, Result};

pub fn normalize(traj: &Trajectory, track: &Track, phi_scale: f64) -> TrajectorySample {
    Normalizer {
        half_width: track.half_width(),
        phi_scale,
    }
    .normalize(traj)
}

pub fn denormalize(x: &TrajectorySample, track: &Track, phi_scale: f64) -> Trajectory {
    Normalizer {
        half_width: track.half_width(),
        phi_scale,
    }
    .denormalize(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    /// Lateral nodes per station; odd so the centerline is a node.
    pub lateral_samples: usize,
    /// Largest lateral index change between consecutive stations.
    pub max_shift: usize,
    /// Weight of the squared second difference of the offset, per `ds^3`.
    pub curvature_weight: f64,
    /// Weight of `ds * (y / half_width)^2` per station. Breaks the tie between
    /// constant offsets, which all have the same flattened length.
    pub centering_weight: f64,
    /// Required slack (m) on every constraint at nodes and edge samples.
    pub clearance_margin: f64,
    /// Averaging weight in `(0, 1]`.
    pub smoothing_weight: f64,
    pub smoothing_iters: usize,
    /// Interior collision samples per lattice edge.
    pub edge_checks: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            lateral_samples: 21,
            max_shift: 3,
            curvature_weight: 0.005,
            centering_weight: 1.0,
            clearance_margin: 0.01,
            smoothing_weight: 0.5,
            smoothing_iters: 200,
            edge_checks: 4,
        }
    }
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lateral_samples < 3 || self.lateral_samples % 2 == 0 {
            return Err(Error::InvalidArgument(
                "lateral_samples must be odd and at least 3".into(),
            ));
        }
        if self.max_shift == 0 || self.max_shift >= self.lateral_samples {
            return Err(Error::InvalidArgument("max_shift out of range".into()));
        }
        if !(self.smoothing_weight > 0.0 && self.smoothing_weight <= 1.0) {
            return Err(Error::InvalidArgument("smoothing_weight must lie in (0, 1]".into()));
        }
        if !(self.clearance_margin >= 0.0 && self.curvature_weight >= 0.0 && self.centering_weight >= 0.0) {
            return Err(Error::InvalidArgument("negative lattice weight".into()));
        }
        Ok(())
    }
}

/// Output of [`plan_expert`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPlan {
    pub trajectory: Trajectory,
    /// Lattice offsets (m) before smoothing.
    pub lattice_y: Vec<f64>,
    /// Lattice path cost before smoothing.
    pub cost: f64,
}

/// Largest constraint component at arc length `s`, offset `y`.
fn max_constraint(scene: &Scene, s: f64, y: f64) -> f64 {
    scene
        .constraint_values_at(s, y, scene.tau)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Interior points `(s, y)` of the straight Frenet segment from station `k`.
fn edge_points(track: &Track, k: usize, y0: f64, y1: f64, checks: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
    let s0 = track.station(k).s;
    let ds = track.station_spacing();
    let len = track.length();
    (1..=checks).map(move |i| {
        let f = i as f64 / (checks + 1) as f64;
        ((s0 + f * ds) % len, y0 + f * (y1 - y0))
    })
}

fn edge_clear(scene: &Scene, k: usize, y0: f64, y1: f64, checks: usize, margin: f64) -> bool {
    edge_points(&scene.track, k, y0, y1, checks).all(|(s, y)| max_constraint(scene, s, y) <= -margin)
}

fn station_clear(scene: &Scene, k: usize, y: f64, margin: f64) -> bool {
    scene
        .constraint_values(k, y, scene.tau)
        .into_iter()
        .all(|c| c <= -margin)
}

/// Station x lateral-offset graph with precomputed feasibility.
pub(crate) struct Lattice {
    pub n: usize,
    pub l: usize,
    pub d: usize,
    pub offsets: Vec<f64>,
    node_ok: Vec<bool>,
    edge_ok: Vec<bool>,
    edge_len: Vec<f64>,
    curv: Vec<f64>,
    node_cost: Vec<f64>,
}

impl Lattice {
    pub fn build(scene: &Scene, cfg: &LatticeConfig) -> Result<Self> {
        cfg.validate()?;
        let track = &scene.track;
        let n = track.n_stations();
        let l = cfg.lateral_samples;
        let d = cfg.max_shift;
        let lim = scene.lateral_limit() - cfg.clearance_margin;
        if !(lim > 0.0) {
            return Err(Error::InfeasibleScene("corridor narrower than the clearance margin".into()));
        }
        let c = (l / 2) as f64;
        let step = lim / c;
        let offsets: Vec<f64> = (0..l).map(|j| (j as f64 - c) * step).collect();
        let margin = cfg.clearance_margin;

        let mut node_ok = vec![false; n * l];
        for k in 0..n {
            for j in 0..l {
                node_ok[k * l + j] = station_clear(scene, k, offsets[j], margin);
            }
            if !node_ok[k * l..(k + 1) * l].iter().any(|&b| b) {
                return Err(Error::InfeasibleScene(format!("station {k} is fully blocked")));
            }
        }
        let w = 2 * d + 1;
        let mut edge_ok = vec![false; n * l * w];
        for k in 0..n {
            let k1 = (k + 1) % n;
            for j in 0..l {
                if !node_ok[k * l + j] {
                    continue;
                }
                for s in 0..w {
                    let j1 = j as isize + s as isize - d as isize;
                    if j1 < 0 || j1 >= l as isize || !node_ok[k1 * l + j1 as usize] {
                        continue;
                    }
                    edge_ok[(k * l + j) * w + s] =
                        edge_clear(scene, k, offsets[j], offsets[j1 as usize], cfg.edge_checks, margin);
                }
            }
        }
        let ds = track.station_spacing();
        let edge_len = (0..w)
            .map(|s| ds.hypot((s as f64 - d as f64) * step))
            .collect();
        let curv = (0..2 * w - 1)
            .map(|s| {
                let dd = (s as f64 - (2 * d) as f64) * step;
                cfg.curvature_weight * dd * dd / (ds * ds * ds)
            })
            .collect();
        let hw = track.half_width();
        let node_cost = offsets
            .iter()
            .map(|y| cfg.centering_weight * ds * (y / hw) * (y / hw))
            .collect();
        Ok(Self {
            n,
            l,
            d,
            node_cost,
            offsets,
            node_ok,
            edge_ok,
            edge_len,
            curv,
        })
    }

    pub fn node_ok(&self, k: usize, j: usize) -> bool {
        self.node_ok[k * self.l + j]
    }

    /// Edge from `(k, j)` to `(k + 1, j + shift)`.
    pub fn edge_ok(&self, k: usize, j: usize, shift: isize) -> bool {
        let w = 2 * self.d + 1;
        self.edge_ok[(k * self.l + j) * w + (shift + self.d as isize) as usize]
    }

    pub fn edge_len(&self, shift: isize) -> f64 {
        self.edge_len[(shift + self.d as isize) as usize]
    }

    pub fn node_cost(&self, j: usize) -> f64 {
        self.node_cost[j]
    }

    /// Penalty for the change `shift_out - shift_in` at one station.
    pub fn curvature(&self, shift_in: isize, shift_out: isize) -> f64 {
        self.curv[(shift_out - shift_in + 2 * self.d as isize) as usize]
    }

    #[cfg(test)]
    /// Cost of a closed index path, or `None` if any node or edge is infeasible.
    pub fn path_cost(&self, path: &[usize]) -> Option<f64> {
        let n = self.n;
        if path.len() != n {
            return None;
        }
        let shift = |k: usize| path[(k + 1) % n] as isize - path[k] as isize;
        let mut cost = 0.0;
        for k in 0..n {
            let sh = shift(k);
            if sh.unsigned_abs() > self.d || !self.node_ok(k, path[k]) || !self.edge_ok(k, path[k], sh) {
                return None;
            }
            cost += self.node_cost(path[k]) + self.edge_len(sh) + self.curvature(shift((k + n - 1) % n), sh);
        }
        Some(cost)
    }

    /// Minimum-cost closed path; one dynamic program per start state at station 0.
    pub fn shortest_cycle(&self) -> Result<(Vec<usize>, f64)> {
        let (n, l, d) = (self.n, self.l, self.d as isize);
        let w = (2 * d + 1) as usize;
        let states = l * w;
        let mut cost = vec![f64::INFINITY; states];
        let mut next = vec![f64::INFINITY; states];
        let mut back = vec![u32::MAX; n * states];
        let mut best: Option<(f64, Vec<usize>)> = None;

        for j0 in 0..l {
            if !self.node_ok(0, j0) {
                continue;
            }
            for s0 in -d..=d {
                let jl = j0 as isize - s0;
                if jl < 0 || jl >= l as isize {
                    continue;
                }
                let jl = jl as usize;
                if !self.node_ok(n - 1, jl) || !self.edge_ok(n - 1, jl, s0) {
                    continue;
                }
                cost.fill(f64::INFINITY);
                cost[j0 * w + (s0 + d) as usize] = self.node_cost(j0);
                for k in 0..n - 1 {
                    next.fill(f64::INFINITY);
                    let bk = &mut back[(k + 1) * states..(k + 2) * states];
                    for j in 0..l {
                        for si in 0..w {
                            let c = cost[j * w + si];
                            if !c.is_finite() {
                                continue;
                            }
                            let s_in = si as isize - d;
                            for s_out in -d..=d {
                                let j1 = j as isize + s_out;
                                if j1 < 0 || j1 >= l as isize || !self.edge_ok(k, j, s_out) {
                                    continue;
                                }
                                let idx = j1 as usize * w + (s_out + d) as usize;
                                let cand = c
                                    + self.node_cost(j1 as usize)
                                    + self.edge_len(s_out)
                                    + self.curvature(s_in, s_out);
                                if cand < next[idx] {
                                    next[idx] = cand;
                                    bk[idx] = (j * w + si) as u32;
                                }
                            }
                        }
                    }
                    std::mem::swap(&mut cost, &mut next);
                }
                for si in 0..w {
                    let c = cost[jl * w + si];
                    if !c.is_finite() {
                        continue;
                    }
                    let total = c + self.edge_len(s0) + self.curvature(si as isize - d, s0);
                    if best.as_ref().is_none_or(|b| total < b.0) {
                        let mut path = vec![0usize; n];
                        let mut st = jl * w + si;
                        for k in (1..n).rev() {
                            path[k] = st / w;
                            st = back[k * states + st] as usize;
                        }
                        path[0] = st / w;
                        best = Some((total, path));
                    }
                }
            }
        }
        best.map(|(c, p)| (p, c))
            .ok_or_else(|| Error::InfeasibleScene("no feasible closed lattice path".into()))
    }
}

/// Relative yaw from centered differences of the offset:
/// `atan2(y[k+1] - y[k-1], 2 ds (1 - kappa_k y_k))`.
pub fn heading_from_offsets(track: &Track, y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let ds = track.station_spacing();
    (0..n)
        .map(|k| {
            let dy = y[(k + 1) % n] - y[(k + n - 1) % n];
            dy.atan2(2.0 * ds * (1.0 - track.station(k).kappa * y[k]))
        })
        .collect()
}

/// Gauss-Seidel relaxation of the continuous lattice cost (length plus
/// centering): `y_k <- (1 - w) y_k + w * avg_k / (1 + mu)`. A move is kept only
/// if the station and both adjacent edges stay clear by `clearance_margin`.
fn smooth(scene: &Scene, y: &mut [f64], cfg: &LatticeConfig) {
    let n = y.len();
    let m = cfg.clearance_margin;
    let w = cfg.smoothing_weight;
    let ds = scene.track.station_spacing();
    let hw = scene.track.half_width();
    let mu = cfg.centering_weight * ds * ds / (hw * hw);
    for _ in 0..cfg.smoothing_iters {
        let mut moved = false;
        for k in 0..n {
            let prev = (k + n - 1) % n;
            let next = (k + 1) % n;
            let cand = (1.0 - w) * y[k] + w * 0.5 * (y[prev] + y[next]) / (1.0 + mu);
            if (cand - y[k]).abs() < 1e-12 {
                continue;
            }
            if station_clear(scene, k, cand, m)
                && edge_clear(scene, prev, y[prev], cand, cfg.edge_checks, m)
                && edge_clear(scene, k, cand, y[next], cfg.edge_checks, m)
            {
                y[k] = cand;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Shortest feasible closed lattice path on `scene`, smoothed.
pub fn plan_expert(scene: &Scene, cfg: &LatticeConfig) -> Result<ExpertPlan> {
    let lattice = Lattice::build(scene, cfg)?;
    let (path, cost) = lattice.shortest_cycle()?;
    let lattice_y: Vec<f64> = path.iter().map(|&j| lattice.offsets[j]).collect();
    let mut y = lattice_y.clone();
    smooth(scene, &mut y, cfg);
    let phi = heading_from_offsets(&scene.track, &y);
    Ok(ExpertPlan {
        trajectory: Trajectory { y_hat: y, phi_hat: phi },
        lattice_y,
        cost,
    })
}

/// Ranges for random disc obstacles. Radii are fractions of the track width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleRanges {
    pub count_min: usize,
    pub count_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
}

impl ObstacleRanges {
    pub fn base() -> Self {
        Self {
            count_min: 1,
            count_max: 4,
            radius_min: 0.05,
            radius_max: 0.15,
        }
    }

    pub fn redundant() -> Self {
        Self {
            count_min: 1,
            count_max: 5,
            ..Self::base()
        }
    }

    fn draw_count(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.count_min..=self.count_max)
    }

    /// One obstacle with its center inside the corridor.
    pub fn draw(&self, track: &Track, rng: &mut impl Rng) -> Obstacle {
        let hw = track.half_width();
        let s = rng.random_range(0.0..track.length());
        let y = rng.random_range(-hw..=hw);
        let r = rng.random_range(self.radius_min..=self.radius_max) * 2.0 * hw;
        Obstacle::fixed(track.point_at(s, y), r)
    }
}

impl Default for ObstacleRanges {
    fn default() -> Self {
        Self::base()
    }
}

pub fn random_obstacles(track: &Track, ranges: &ObstacleRanges, rng: &mut impl Rng) -> Vec<Obstacle> {
    let count = ranges.draw_count(rng);
    (0..count).map(|_| ranges.draw(track, rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub obstacles: ObstacleRanges,
    /// Extra clearance (m) beyond the safety envelope at every trajectory
    /// station; the barrier's saturation band `3 / kappa`.
    pub band: f64,
    pub max_attempts: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            obstacles: ObstacleRanges::redundant(),
            band: 0.15,
            max_attempts: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Base,
    Augmented { base_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Holdout,
}

/// One dataset line: a scene and its expert trajectory in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub provenance: Provenance,
    pub split: Split,
    pub scene: SceneSpec,
    pub y_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
}

impl DatasetRecord {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            y_hat: self.y_hat.clone(),
            phi_hat: self.phi_hat.clone(),
        }
    }

    pub fn scene(&self, track: Arc<Track>) -> Result<Scene> {
        Scene::from_spec(track, &self.scene)
    }
}

/// An obstacle is redundant if it clears every trajectory station by the
/// envelope plus `band`, and every lattice node and edge sample by the margin.
fn is_redundant(scene: &Scene, obstacle: &Obstacle, traj: &Trajectory, lattice_y: &[f64], band: f64, lattice: &LatticeConfig) -> bool {
    let single = scene.with_obstacles(vec![obstacle.clone()]);
    let track = &scene.track;
    let n = track.n_stations();
    let obs_c = |s: f64, y: f64| single.constraint_values_at(s, y, single.tau)[1];
    for k in 0..n {
        let s = track.station(k).s;
        if single.constraint_values(k, traj.y_hat[k], single.tau)[1] > -band {
            return false;
        }
        if obs_c(s, lattice_y[k]) > -lattice.clearance_margin {
            return false;
        }
        let y1 = lattice_y[(k + 1) % n];
        if edge_points(track, k, lattice_y[k], y1, lattice.edge_checks)
            .any(|(s, y)| obs_c(s, y) > -lattice.clearance_margin)
        {
            return false;
        }
    }
    true
}

/// Up to `count` copies of a base record, each with 1-5 extra redundant obstacles.
///
/// Records whose obstacles cannot all be placed within `max_attempts` draws
/// each are dropped with a warning.
pub fn augment(
    base: &DatasetRecord,
    lattice_y: &[f64],
    track: &Arc<Track>,
    cfg: &AugmentConfig,
    lattice: &LatticeConfig,
    rng: &mut impl Rng,
    count: usize,
    first_id: u64,
) -> Result<Vec<DatasetRecord>> {
    let scene = base.scene(track.clone())?;
    let traj = base.trajectory();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let want = cfg.obstacles.draw_count(rng);
        let mut extra = Vec::with_capacity(want);
        'obstacle: for _ in 0..want {
            for _ in 0..cfg.max_attempts {
                let o = cfg.obstacles.draw(track, rng);
                if is_redundant(&scene, &o, &traj, lattice_y, cfg.band, lattice) {
                    extra.push(o);
                    continue 'obstacle;
                }
            }
            break;
        }
        if extra.len() < want {
            log::warn!("record {}: redundant obstacle placement failed", base.id);
            continue;
        }
        let mut spec = base.scene.clone();
        spec.obstacles.extend(extra);
        out.push(DatasetRecord {
            id: first_id + out.len() as u64,
            provenance: Provenance::Augmented { base_id: base.id },
            split: base.split,
            scene: spec,
            y_hat: base.y_hat.clone(),
            phi_hat: base.phi_hat.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub track_ref: String,
    pub stations: usize,
    pub base_count: usize,
    /// Records per base scene, the base included.
    pub augment_factor: usize,
    pub seed: u64,
    pub split_ratio: f64,
    pub phi_scale: f64,
    pub lattice: LatticeConfig,
    pub obstacles: ObstacleRanges,
    pub augment: AugmentConfig,
    /// Scene redraws per base before it is skipped.
    pub max_scene_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            track_ref: "ellipse".into(),
            stations: 128,
            base_count: 100,
            augment_factor: 100,
            seed: 0,
            split_ratio: 0.8,
            phi_scale: 0.6,
            lattice: LatticeConfig::default(),
            obstacles: ObstacleRanges::base(),
            augment: AugmentConfig::default(),
            max_scene_attempts: 50,
        }
    }
}

impl DatasetConfig {
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildCounts {
    pub bases_requested: usize,
    pub bases_solved: usize,
    pub scenes_rejected: usize,
    pub augment_shortfall: usize,
    pub records: usize,
    pub train: usize,
    pub holdout: usize,
}

/// Sidecar describing a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub track_ref: String,
    pub n_stations: usize,
    pub normalizer: Normalizer,
    pub nominal: NominalTrajectory,
    pub config: DatasetConfig,
    pub config_digest: String,
    pub counts: BuildCounts,
}

impl Manifest {
    /// Reads `manifest.json` from a dataset directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn track(&self) -> Result<Arc<Track>> {
        Ok(Arc::new(Track::from_ref(&self.track_ref, self.n_stations)?))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<DatasetRecord>,
}

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Solve `base_count` random scenes, augment each, shuffle and split.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.augment_factor == 0 || !(0.0..=1.0).contains(&cfg.split_ratio) {
        return Err(Error::InvalidArgument(
            "augment_factor must be positive and split_ratio in [0, 1]".into(),
        ));
    }
    let track = Arc::new(Track::from_ref(&cfg.track_ref, cfg.stations)?);
    let empty = Scene::empty(track.clone());
    let nominal = plan_expert(&empty, &cfg.lattice)?;
    let mut counts = BuildCounts {
        bases_requested: cfg.base_count,
        ..Default::default()
    };

    let mut records = Vec::with_capacity(cfg.base_count * cfg.augment_factor);
    for b in 0..cfg.base_count {
        let mut rng = stream_rng(cfg.seed, b as u64 + 1);
        let mut solved = None;
        for _ in 0..cfg.max_scene_attempts {
            let scene = empty.with_obstacles(random_obstacles(&track, &cfg.obstacles, &mut rng));
            match plan_expert(&scene, &cfg.lattice) {
                Ok(plan) => {
                    solved = Some((scene, plan));
                    break;
                }
                Err(e) if e.is_infeasible_input() => counts.scenes_rejected += 1,
                Err(e) => return Err(e),
            }
        }
        let Some((scene, plan)) = solved else {
            log::warn!("base scene {b} skipped: no feasible draw");
            continue;
        };
        counts.bases_solved += 1;
        let base_id = (b * cfg.augment_factor) as u64;
        let base = DatasetRecord {
            id: base_id,
            provenance: Provenance::Base,
            split: Split::Train,
            scene: scene.spec(),
            y_hat: plan.trajectory.y_hat.clone(),
            phi_hat: plan.trajectory.phi_hat.clone(),
        };
        let aug = augment(
            &base,
            &plan.lattice_y,
            &track,
            &cfg.augment,
            &cfg.lattice,
            &mut rng,
            cfg.augment_factor - 1,
            base_id + 1,
        )?;
        counts.augment_shortfall += cfg.augment_factor - 1 - aug.len();
        records.push(base);
        records.extend(aug);
    }

    let mut rng = stream_rng(cfg.seed, 0);
    records.shuffle(&mut rng);
    let n_train = (cfg.split_ratio * records.len() as f64).round() as usize;
    for (i, r) in records.iter_mut().enumerate() {
        r.split = if i < n_train { Split::Train } else { Split::Holdout };
    }
    counts.records = records.len();
    counts.train = n_train;
    counts.holdout = records.len() - n_train;
    log::info!(
        "dataset: {} records from {}/{} base scenes ({} draws rejected)",
        counts.records,
        counts.bases_solved,
        counts.bases_requested,
        counts.scenes_rejected
    );

    Ok(Dataset {
        manifest: Manifest {
            track_ref: cfg.track_ref.clone(),
            n_stations: cfg.stations,
            normalizer: Normalizer::new(track.half_width(), cfg.phi_scale)?,
            nominal: nominal.trajectory.into(),
            config: cfg.clone(),
            config_digest: cfg.digest(),
            counts,
        },
        records,
    })
}

impl Dataset {
    /// Writes `dataset.jsonl` and `manifest.json` into `dir`; returns the
    /// SHA-256 of the record file.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<String> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(DATASET_FILE);
        let mut buf = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        std::fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        let file = std::fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        w.write_all(b"\n").map_err(|e| Error::io(&mpath, e))?;
        w.flush().map_err(|e| Error::io(&mpath, e))?;
        Ok(sha256_hex(&buf))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::load(dir)?;
        let path = dir.join(DATASET_FILE);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { manifest, records })
    }

    pub fn track(&self) -> Result<Arc<Track>> {
        self.manifest.track()
    }

    /// Normalized trajectories of one split.
    pub fn samples(&self, split: Split) -> Vec<TrajectorySample> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| self.manifest.normalizer.normalize(&r.trajectory()))
            .collect()
    }
}
