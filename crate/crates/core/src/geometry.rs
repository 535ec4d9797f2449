//! Track and obstacle representation, Frenet transforms, and the
//! constraint functions that define the feasible region of a scene.
//!
//! The centerline is a closed periodic cubic spline whose parameter is
//! (numerically) its arc length. Frenet coordinates are `(s, y_hat, phi_hat)`:
//! arc length along the centerline, signed lateral offset (positive to the
//! left) and yaw relative to the centerline tangent.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[inline]
fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn dist(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

/// Periodic natural cubic spline of one coordinate over non-uniform knots.
#[derive(Debug, Clone)]
struct PeriodicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
    period: f64,
}

/// Solve a cyclic tridiagonal system (Sherman-Morrison on the Thomas algorithm).
/// `sub[i]` multiplies `x[i-1]`, `sup[i]` multiplies `x[i+1]`, indices cyclic.
fn solve_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let solve_tri = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = c[0] / b[0];
        dp[0] = d[0] / b[0];
        for i in 1..n {
            let m = b[i] - a[i] * cp[i - 1];
            cp[i] = c[i] / m;
            dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        x
    };
    let alpha = sup[n - 1]; // row n-1, column 0
    let beta = sub[0]; // row 0, column n-1
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= alpha * beta / gamma;
    let x = solve_tri(sub, &b, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tri(sub, &b, sup, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

impl PeriodicSpline {
    fn new(knots: Vec<f64>, values: Vec<f64>, period: f64) -> Self {
        let n = knots.len();
        let h: Vec<f64> = (0..n)
            .map(|i| if i + 1 < n { knots[i + 1] - knots[i] } else { period - knots[n - 1] + knots[0] })
            .collect();
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let hp = h[(i + n - 1) % n];
            let hi = h[i];
            sub[i] = hp;
            diag[i] = 2.0 * (hp + hi);
            sup[i] = hi;
            let fp = values[(i + n - 1) % n];
            let fi = values[i];
            let fnx = values[(i + 1) % n];
            rhs[i] = 6.0 * ((fnx - fi) / hi - (fi - fp) / hp);
        }
        let second = solve_cyclic(&sub, &diag, &sup, &rhs);
        Self {
            knots,
            values,
            second,
            period,
        }
    }

    fn segment(&self, s: f64) -> (usize, f64, f64) {
        let s = s.rem_euclid(self.period);
        let i = match self.knots.partition_point(|k| *k <= s) {
            0 => self.knots.len() - 1,
            p => p - 1,
        };
        let n = self.knots.len();
        let start = self.knots[i];
        let end = if i + 1 < n { self.knots[i + 1] } else { self.period + self.knots[0] };
        let local = if s < start { s + self.period - start } else { s - start };
        (i, local, end - start)
    }

    /// Value, first and second derivative at `s`.
    fn eval(&self, s: f64) -> (f64, f64, f64) {
        let (i, a, h) = self.segment(s);
        let n = self.knots.len();
        let j = (i + 1) % n;
        let b = h - a;
        let (mi, mj) = (self.second[i], self.second[j]);
        let (fi, fj) = (self.values[i], self.values[j]);
        let ci = fi / h - mi * h / 6.0;
        let cj = fj / h - mj * h / 6.0;
        let v = mi * b * b * b / (6.0 * h) + mj * a * a * a / (6.0 * h) + ci * b + cj * a;
        let d1 = -mi * b * b / (2.0 * h) + mj * a * a / (2.0 * h) - ci + cj;
        let d2 = mi * b / h + mj * a / h;
        (v, d1, d2)
    }
}

/// Precomputed frame at one trajectory station.
#[derive(Debug, Clone, Copy)]
pub struct StationFrame {
    pub s: f64,
    pub point: Point,
    pub normal: Point,
    pub theta: f64,
    pub kappa: f64,
}

/// Closed racing track with a spline centerline and uniform trajectory stations.
#[derive(Debug, Clone)]
pub struct Track {
    name: String,
    half_width: f64,
    length: f64,
    z: PeriodicSpline,
    y: PeriodicSpline,
    knot_points: Vec<Point>,
    stations: Vec<StationFrame>,
}

/// JSON track description: `name`, `half_width`, and a closed `centerline`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackFile {
    pub name: String,
    pub half_width: f64,
    pub centerline: Vec<Point>,
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn chord_knots(points: &[Point]) -> (Vec<f64>, f64) {
    let n = points.len();
    let mut knots = Vec::with_capacity(n);
    let mut acc = 0.0;
    for i in 0..n {
        knots.push(acc);
        acc += dist(points[i], points[(i + 1) % n]);
    }
    (knots, acc)
}

impl Track {
    /// Build a track from a closed polyline (the last point connects back to the first).
    pub fn from_centerline(name: &str, half_width: f64, centerline: &[Point], stations: usize) -> Result<Self> {
        if centerline.len() < 4 {
            return Err(Error::InvalidArgument("centerline needs at least 4 points".into()));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidArgument(format!("half_width must be positive, got {half_width}")));
        }
        if stations < 4 {
            return Err(Error::InvalidArgument("a track needs at least 4 stations".into()));
        }
        let mut pts: Vec<Point> = centerline.to_vec();
        if dist(pts[0], *pts.last().unwrap()) < 1e-12 {
            pts.pop();
        }
        let (knots, period) = chord_knots(&pts);
        if knots.windows(2).any(|w| w[1] - w[0] <= 0.0) || period <= 0.0 {
            return Err(Error::InvalidArgument("centerline has repeated points".into()));
        }
        let zs = PeriodicSpline::new(knots.clone(), pts.iter().map(|p| p[0]).collect(), period);
        let ys = PeriodicSpline::new(knots.clone(), pts.iter().map(|p| p[1]).collect(), period);

        // Resample at uniform parameter and re-knot by true arc length, so the
        // final spline parameter is (to quadrature accuracy) arc length.
        let samples = (pts.len() * 4).max(512);
        let dp = period / samples as f64;
        let speed = |u: f64| {
            let (_, dz, _) = zs.eval(u);
            let (_, dy, _) = ys.eval(u);
            dz.hypot(dy)
        };
        let mut new_pts = Vec::with_capacity(samples);
        let mut new_knots = Vec::with_capacity(samples);
        let mut arc = 0.0;
        for i in 0..samples {
            let u = i as f64 * dp;
            new_pts.push([zs.eval(u).0, ys.eval(u).0]);
            new_knots.push(arc);
            let mid = u + 0.5 * dp;
            arc += GAUSS5.iter().map(|(x, w)| w * speed(mid + 0.5 * dp * x)).sum::<f64>() * 0.5 * dp;
        }
        let length = arc;
        let z = PeriodicSpline::new(new_knots.clone(), new_pts.iter().map(|p| p[0]).collect(), length);
        let y = PeriodicSpline::new(new_knots, new_pts.iter().map(|p| p[1]).collect(), length);
        let mut track = Self {
            name: name.to_string(),
            half_width,
            length,
            z,
            y,
            knot_points: new_pts,
            stations: Vec::new(),
        };
        track.stations = (0..stations)
            .map(|k| track.frame_at(k as f64 * length / stations as f64))
            .collect();
        Ok(track)
    }

    /// Ellipse centered at the origin with semi-axes `a` (along z) and `b` (along y).
    pub fn ellipse(a: f64, b: f64, half_width: f64, stations: usize) -> Result<Self> {
        let n = 720;
        let pts: Vec<Point> = (0..n)
            .map(|i| {
                let u = 2.0 * PI * i as f64 / n as f64;
                [a * u.cos(), b * u.sin()]
            })
            .collect();
        Self::from_centerline("ellipse", half_width, &pts, stations)
    }

    /// Rectangle of outer size `width x height` with circular corners of `corner` radius,
    /// driven counter-clockwise starting mid-way along the bottom straight.
    pub fn rounded_rectangle(width: f64, height: f64, corner: f64, half_width: f64, stations: usize) -> Result<Self> {
        if !(2.0 * corner < width.min(height)) {
            return Err(Error::InvalidArgument("corner radius too large for the rectangle".into()));
        }
        let hx = width / 2.0 - corner;
        let hy = height / 2.0 - corner;
        let spacing = 0.01;
        let mut pts = Vec::new();
        let straight = |from: Point, to: Point, pts: &mut Vec<Point>| {
            let n = (dist(from, to) / spacing).ceil().max(1.0) as usize;
            for i in 0..n {
                let f = i as f64 / n as f64;
                pts.push([from[0] + f * (to[0] - from[0]), from[1] + f * (to[1] - from[1])]);
            }
        };
        let arc = |c: Point, a0: f64, pts: &mut Vec<Point>| {
            let n = (corner * PI / 2.0 / spacing).ceil().max(2.0) as usize;
            for i in 0..n {
                let a = a0 + PI / 2.0 * i as f64 / n as f64;
                pts.push([c[0] + corner * a.cos(), c[1] + corner * a.sin()]);
            }
        };
        let bottom = -height / 2.0;
        let top = height / 2.0;
        let left = -width / 2.0;
        let right = width / 2.0;
        straight([0.0, bottom], [hx, bottom], &mut pts);
        arc([hx, -hy], -PI / 2.0, &mut pts);
        straight([right, -hy], [right, hy], &mut pts);
        arc([hx, hy], 0.0, &mut pts);
        straight([hx, top], [-hx, top], &mut pts);
        arc([-hx, hy], PI / 2.0, &mut pts);
        straight([left, hy], [left, -hy], &mut pts);
        arc([-hx, -hy], PI, &mut pts);
        straight([-hx, bottom], [0.0, bottom], &mut pts);
        Self::from_centerline("rounded_rectangle", half_width, &pts, stations)
    }

    /// Resolve a track reference: a built-in name or a path to a JSON track file.
    pub fn from_ref(track_ref: &str, stations: usize) -> Result<Self> {
        match track_ref {
            "ellipse" => Self::ellipse(2.0, 1.2, 0.5, stations),
            "rounded_rectangle" => Self::rounded_rectangle(3.6, 2.0, 0.7, 0.5, stations),
            path => Self::load(path, stations),
        }
    }

    pub fn load(path: impl AsRef<Path>, stations: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TrackFile = serde_json::from_str(&text)?;
        Self::from_centerline(&file.name, file.half_width, &file.centerline, stations)
    }

    /// Same geometry with the station origin advanced by `shift` stations.
    pub fn rotated(&self, shift: usize) -> Result<Self> {
        let offset = shift as f64 * self.station_spacing();
        let n = self.knot_points.len();
        let pts: Vec<Point> = (0..n)
            .map(|i| self.position(offset + i as f64 * self.length / n as f64))
            .collect();
        Self::from_centerline(&self.name, self.half_width, &pts, self.stations.len())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn station_spacing(&self) -> f64 {
        self.length / self.stations.len() as f64
    }

    pub fn stations(&self) -> &[StationFrame] {
        &self.stations
    }

    pub fn station(&self, k: usize) -> &StationFrame {
        &self.stations[k]
    }

    pub fn position(&self, s: f64) -> Point {
        [self.z.eval(s).0, self.y.eval(s).0]
    }

    fn derivs(&self, s: f64) -> (Point, Point, Point) {
        let (z, dz, ddz) = self.z.eval(s);
        let (y, dy, ddy) = self.y.eval(s);
        ([z, y], [dz, dy], [ddz, ddy])
    }

    pub fn heading(&self, s: f64) -> f64 {
        let (_, d, _) = self.derivs(s);
        d[1].atan2(d[0])
    }

    /// Unit left normal at `s`.
    pub fn normal(&self, s: f64) -> Point {
        let (_, d, _) = self.derivs(s);
        let norm = d[0].hypot(d[1]);
        [-d[1] / norm, d[0] / norm]
    }

    pub fn curvature(&self, s: f64) -> f64 {
        let (_, d, dd) = self.derivs(s);
        let sp = d[0].hypot(d[1]);
        (d[0] * dd[1] - d[1] * dd[0]) / (sp * sp * sp)
    }

    fn frame_at(&self, s: f64) -> StationFrame {
        StationFrame {
            s,
            point: self.position(s),
            normal: self.normal(s),
            theta: self.heading(s),
            kappa: self.curvature(s),
        }
    }

    /// Global point at Frenet coordinates `(s, y_hat)`.
    pub fn point_at(&self, s: f64, y_hat: f64) -> Point {
        let c = self.position(s);
        let n = self.normal(s);
        [c[0] + y_hat * n[0], c[1] + y_hat * n[1]]
    }

    /// Arc-length parameter of the orthogonal projection of `p` onto the centerline.
    ///
    /// Coarse search over the knot polyline, then Newton refinement of
    /// `(c(s) - p) . c'(s) = 0`. Equidistant candidates resolve to the smallest `s`.
    pub fn project(&self, p: Point) -> (f64, f64) {
        let n = self.knot_points.len();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..n {
            let a = self.knot_points[i];
            let b = self.knot_points[(i + 1) % n];
            let ab = sub(b, a);
            let len2 = dot(ab, ab);
            let f = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
            let q = [a[0] + f * ab[0], a[1] + f * ab[1]];
            let d = dist(p, q);
            let s0 = self.z.knots[i];
            let seg = if i + 1 < n { self.z.knots[i + 1] - s0 } else { self.length - s0 };
            let s = s0 + f * seg;
            if d < best.0 - 1e-12 {
                best = (d, s);
            }
        }
        let mut s = best.1;
        for _ in 0..50 {
            let (c, d1, d2) = self.derivs(s);
            let r = sub(c, p);
            let g = dot(r, d1);
            let h = dot(d1, d1) + dot(r, d2);
            if h <= 0.0 {
                break;
            }
            let step = (g / h).clamp(-0.05, 0.05);
            s -= step;
            if step.abs() < 1e-15 * self.length.max(1.0) {
                break;
            }
        }
        let s = s.rem_euclid(self.length);
        (s, dist(self.position(s), p))
    }
}

/// Frenet pose relative to a track centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrenetPose {
    pub s: f64,
    pub y_hat: f64,
    pub phi_hat: f64,
}

pub fn global_to_frenet(track: &Track, point: Point, yaw: f64) -> Result<FrenetPose> {
    let (s, d) = track.project(point);
    let limit = 2.0 * track.half_width;
    if d > limit {
        return Err(Error::OutOfCorridor { distance: d, limit });
    }
    let c = track.position(s);
    let y_hat = dot(sub(point, c), track.normal(s));
    Ok(FrenetPose {
        s,
        y_hat,
        phi_hat: wrap_angle(yaw - track.heading(s)),
    })
}

pub fn frenet_to_global(track: &Track, pose: &FrenetPose) -> (Point, f64) {
    (track.point_at(pose.s, pose.y_hat), track.heading(pose.s) + pose.phi_hat)
}

/// Disc obstacle. Positions at query time `tau'` are `center + velocity (tau' - tau)`
/// where `tau` is the owning scene's clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point,
    pub radius: f64,
    #[serde(default)]
    pub velocity: Point,
}

impl Obstacle {
    pub fn fixed(center: Point, radius: f64) -> Self {
        Self {
            center,
            radius,
            velocity: [0.0, 0.0],
        }
    }

    pub fn position_after(&self, elapsed: f64) -> Point {
        [
            self.center[0] + self.velocity[0] * elapsed,
            self.center[1] + self.velocity[1] * elapsed,
        ]
    }
}

pub const DEFAULT_VEHICLE_RADIUS: f64 = 0.09;
pub const DEFAULT_SAFETY_MARGIN: f64 = 0.02;

/// Snapshot of the track and obstacles at clock `tau`.
#[derive(Debug, Clone)]
pub struct Scene {
    pub track: Arc<Track>,
    pub obstacles: Vec<Obstacle>,
    pub tau: f64,
    pub vehicle_radius: f64,
    pub safety_margin: f64,
}

/// Serializable scene contents, without the track geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub tau: f64,
    pub vehicle_radius: f64,
    pub safety_margin: f64,
}

/// Scene file: a [`SceneSpec`] plus a track reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub track_ref: String,
    #[serde(flatten)]
    pub spec: SceneSpec,
}

impl SceneFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Scene {
    pub fn empty(track: Arc<Track>) -> Self {
        Self {
            track,
            obstacles: Vec::new(),
            tau: 0.0,
            vehicle_radius: DEFAULT_VEHICLE_RADIUS,
            safety_margin: DEFAULT_SAFETY_MARGIN,
        }
    }

    pub fn from_spec(track: Arc<Track>, spec: &SceneSpec) -> Result<Self> {
        let scene = Self {
            track,
            obstacles: spec.obstacles.clone(),
            tau: spec.tau,
            vehicle_radius: spec.vehicle_radius,
            safety_margin: spec.safety_margin,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn spec(&self) -> SceneSpec {
        SceneSpec {
            obstacles: self.obstacles.clone(),
            tau: self.tau,
            vehicle_radius: self.vehicle_radius,
            safety_margin: self.safety_margin,
        }
    }

    pub fn with_obstacles(&self, obstacles: Vec<Obstacle>) -> Self {
        Self {
            obstacles,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obstacles.iter().any(|o| !(o.radius > 0.0)) {
            return Err(Error::InvalidArgument("obstacle radius must be positive".into()));
        }
        if !(self.track.half_width > self.vehicle_radius) {
            return Err(Error::InfeasibleScene("half width does not exceed the vehicle radius".into()));
        }
        Ok(())
    }

    /// Lateral limit `half_width - vehicle_radius - safety_margin`.
    pub fn lateral_limit(&self) -> f64 {
        self.track.half_width - self.vehicle_radius - self.safety_margin
    }

    /// Obstacle centers at `query_time`.
    pub fn obstacle_positions(&self, query_time: f64) -> Vec<Point> {
        let dt = query_time - self.tau;
        self.obstacles.iter().map(|o| o.position_after(dt)).collect()
    }

    /// Constraint components at station `k` (each `<= 0` iff satisfied):
    /// the track bound followed by one entry per obstacle.
    pub fn constraint_values(&self, k: usize, y_hat: f64, query_time: f64) -> Vec<f64> {
        let f = &self.track.stations[k];
        self.constraints_at_point(f.point, f.normal, y_hat, query_time)
    }

    /// Constraint components at arbitrary arc length `s`.
    pub fn constraint_values_at(&self, s: f64, y_hat: f64, query_time: f64) -> Vec<f64> {
        let c = self.track.position(s);
        let n = self.track.normal(s);
        self.constraints_at_point(c, n, y_hat, query_time)
    }

    fn constraints_at_point(&self, c: Point, n: Point, y_hat: f64, query_time: f64) -> Vec<f64> {
        let p = [c[0] + y_hat * n[0], c[1] + y_hat * n[1]];
        let envelope = self.vehicle_radius + self.safety_margin;
        let dt = query_time - self.tau;
        let mut out = Vec::with_capacity(1 + self.obstacles.len());
        out.push(y_hat.abs() - self.lateral_limit());
        out.extend(
            self.obstacles
                .iter()
                .map(|o| o.radius + envelope - dist(p, o.position_after(dt))),
        );
        out
    }

    /// Constraint components at station `k` with their derivatives in `y_hat`.
    pub(crate) fn constraint_values_with_grad(&self, k: usize, y_hat: f64, obstacle_pos: &[Point], out: &mut Vec<(f64, f64)>) {
        let f = &self.track.stations[k];
        let p = [f.point[0] + y_hat * f.normal[0], f.point[1] + y_hat * f.normal[1]];
        let envelope = self.vehicle_radius + self.safety_margin;
        out.clear();
        let sign = if y_hat > 0.0 {
            1.0
        } else if y_hat < 0.0 {
            -1.0
        } else {
            0.0
        };
        out.push((y_hat.abs() - self.lateral_limit(), sign));
        for (o, c) in self.obstacles.iter().zip(obstacle_pos) {
            let r = sub(p, *c);
            let d = r[0].hypot(r[1]);
            let grad = if d > 0.0 { -dot(r, f.normal) / d } else { 0.0 };
            out.push((o.radius + envelope - d, grad));
        }
    }

    /// Smooth maximum of the constraint components (log-sum-exp at temperature `temp`).
    pub fn penetration(&self, k: usize, y_hat: f64, query_time: f64, temp: f64) -> f64 {
        log_sum_exp(&self.constraint_values(k, y_hat, query_time), temp)
    }

    /// Per-station exact feasibility of a physical-unit trajectory.
    pub fn feasible(&self, traj: &Trajectory, query_time: f64) -> Result<Vec<bool>> {
        let n = self.track.n_stations();
        if traj.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: traj.len(),
            });
        }
        Ok((0..n)
            .map(|k| {
                self.constraint_values(k, traj.y_hat[k], query_time)
                    .iter()
                    .all(|c| *c <= 0.0)
            })
            .collect())
    }

    pub fn fully_feasible(&self, traj: &Trajectory, query_time: f64) -> Result<bool> {
        Ok(self.feasible(traj, query_time)?.into_iter().all(|f| f))
    }
}

/// `temp * ln(sum exp(c_i / temp))`, shifted by the maximum for stability.
pub fn log_sum_exp(values: &[f64], temp: f64) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|c| ((c - m) / temp).exp()).sum();
    m + temp * sum.ln()
}

/// Trajectory in physical units: lateral offsets (m) and relative yaws (rad) per station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub y_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(n: usize) -> Self {
        Self {
            y_hat: vec![0.0; n],
            phi_hat: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    /// Global points of the trajectory stations.
    pub fn global_points(&self, track: &Track) -> Vec<Point> {
        track
            .stations()
            .iter()
            .zip(&self.y_hat)
            .map(|(f, y)| [f.point[0] + y * f.normal[0], f.point[1] + y * f.normal[1]])
            .collect()
    }

    /// Closed-loop length in the flattened Frenet map, `sum sqrt(ds^2 + dy^2)`.
    pub fn frenet_length(&self, track: &Track) -> f64 {
        let ds = track.station_spacing();
        let n = self.len();
        (0..n)
            .map(|k| ds.hypot(self.y_hat[(k + 1) % n] - self.y_hat[k]))
            .sum()
    }

    /// Mean absolute lateral displacement between two trajectories.
    pub fn mean_displacement(&self, other: &Trajectory) -> f64 {
        self.y_hat
            .iter()
            .zip(&other.y_hat)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track() -> Arc<Track> {
        Arc::new(Track::from_ref("rounded_rectangle", 128).unwrap())
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn parameter_is_arc_length() {
        let t = track();
        // analytic perimeter of the rounded rectangle
        let expected = 2.0 * (3.6 - 1.4) + 2.0 * (2.0 - 1.4) + 2.0 * PI * 0.7;
        assert!((t.length() - expected).abs() < 1e-3, "{} vs {expected}", t.length());
        // unit speed along the spline
        for i in 0..50 {
            let s = i as f64 * t.length() / 50.0;
            let (_, d, _) = t.derivs(s);
            assert!((d[0].hypot(d[1]) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn loop_closure() {
        let t = track();
        let a = frenet_to_global(&t, &FrenetPose { s: 0.0, y_hat: 0.1, phi_hat: 0.2 });
        let b = frenet_to_global(&t, &FrenetPose { s: t.length(), y_hat: 0.1, phi_hat: 0.2 });
        assert!(dist(a.0, b.0) < 1e-12);
        assert!(wrap_angle(a.1 - b.1).abs() < 1e-12);
        // heading continuous modulo 2 pi across the seam
        let before = t.heading(t.length() - 1e-6);
        let after = t.heading(1e-6);
        assert!(wrap_angle(after - before).abs() < 1e-3);
    }

    #[test]
    fn on_centerline_identity() {
        let t = track();
        let p = t.position(3.0);
        let pose = global_to_frenet(&t, p, t.heading(3.0)).unwrap();
        assert!((pose.s - 3.0).abs() < 1e-9);
        assert!(pose.y_hat.abs() < 1e-12);
        assert!(pose.phi_hat.abs() < 1e-12);
    }

    #[test]
    fn straight_segment_left_offset() {
        // bottom straight runs along +z at y = -1.0; left is +y
        let t = track();
        let pose = global_to_frenet(&t, [0.3, -1.0 + 0.2], 0.0).unwrap();
        assert!((pose.y_hat - 0.2).abs() < 1e-9);
        assert!((pose.s - 0.3).abs() < 1e-6);
        assert!(pose.phi_hat.abs() < 1e-6);
    }

    #[test]
    fn frenet_roundtrip() {
        for t in [track(), Arc::new(Track::from_ref("ellipse", 128).unwrap())] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..1000 {
                let pose = FrenetPose {
                    s: rng.random_range(0.0..t.length()),
                    y_hat: rng.random_range(-t.half_width()..t.half_width()),
                    phi_hat: rng.random_range(-3.0..3.0),
                };
                let (p, yaw) = frenet_to_global(&t, &pose);
                let back = global_to_frenet(&t, p, yaw).unwrap();
                let (q, yaw2) = frenet_to_global(&t, &back);
                assert!(dist(p, q) < 1e-9, "{pose:?} -> {back:?}");
                assert!(wrap_angle(yaw - yaw2).abs() < 1e-9);
                let ds = (back.s - pose.s).abs();
                assert!(ds.min(t.length() - ds) < 1e-8);
                assert!((back.y_hat - pose.y_hat).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn out_of_corridor() {
        let t = track();
        assert!(matches!(
            global_to_frenet(&t, [0.0, 5.0], 0.0),
            Err(Error::OutOfCorridor { .. })
        ));
    }

    #[test]
    fn constraint_examples() {
        let t = track();
        let scene = Scene::empty(t.clone());
        let c = scene.constraint_values(5, 0.0, 0.0);
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c[0], -(0.5 - 0.09 - 0.02), epsilon = 1e-15);
        let c = scene.constraint_values(5, 0.5, 0.0);
        assert_relative_eq!(c[0], 0.09 + 0.02, epsilon = 1e-15);

        let center = t.station(10).point;
        let scene = scene.with_obstacles(vec![Obstacle::fixed(center, 0.1)]);
        let c = scene.constraint_values(10, 0.0, 0.0);
        assert_relative_eq!(c[1], 0.1 + 0.09 + 0.02, epsilon = 1e-12);
        let f = scene.feasible(&Trajectory::zeros(128), 0.0).unwrap();
        assert!(!f[10]);
        assert!(f[64]);
    }

    #[test]
    fn moving_obstacle_position() {
        let t = track();
        let mut scene = Scene::empty(t);
        scene.tau = 2.0;
        scene.obstacles.push(Obstacle {
            center: [1.0, 1.0],
            radius: 0.1,
            velocity: [0.5, -0.25],
        });
        assert_eq!(scene.obstacle_positions(4.0), vec![[2.0, 0.5]]);
    }

    #[test]
    fn penetration_bounds() {
        let vals = [-1.0, -1.5, -2.0];
        assert!(log_sum_exp(&vals, 0.02) < 0.0);
        let single = [0.3];
        assert!((log_sum_exp(&single, 0.02) - 0.3).abs() <= 1e-15);
    }

    #[test]
    fn penetration_sign_matches_exact_max() {
        let t = track();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let temp = 0.02;
        let (mut agree, mut total) = (0usize, 0usize);
        for _ in 0..50 {
            let obstacles = (0..rng.random_range(1..6))
                .map(|_| {
                    let s = rng.random_range(0.0..t.length());
                    let y = rng.random_range(-0.5..0.5);
                    Obstacle::fixed(t.point_at(s, y), rng.random_range(0.05..0.15))
                })
                .collect();
            let scene = Scene::empty(t.clone()).with_obstacles(obstacles);
            for k in 0..t.n_stations() {
                let y = rng.random_range(-0.5..0.5);
                let c = scene.constraint_values(k, y, 0.0);
                let exact = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let pen = scene.penetration(k, y, 0.0, temp);
                let bound = temp * (c.len() as f64).ln();
                assert!(pen >= exact - 1e-12 && pen <= exact + bound + 1e-12);
                if exact.abs() > 0.06 {
                    total += 1;
                    agree += usize::from((pen > 0.0) == (exact > 0.0));
                }
            }
        }
        assert!(agree as f64 >= 0.99 * total as f64);
    }

    #[test]
    fn feasibility_matches_dense_collocation() {
        // exact station checks agree with a 10x oversampled checker evaluated
        // at the station arc lengths
        let t = track();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = t.n_stations();
        for _ in 0..100 {
            let obstacles = (0..rng.random_range(0..5))
                .map(|_| {
                    let s = rng.random_range(0.0..t.length());
                    let y = rng.random_range(-0.5..0.5);
                    Obstacle::fixed(t.point_at(s, y), rng.random_range(0.05..0.15))
                })
                .collect();
            let scene = Scene::empty(t.clone()).with_obstacles(obstacles);
            let traj = Trajectory {
                y_hat: (0..n).map(|_| rng.random_range(-0.45..0.45)).collect(),
                phi_hat: vec![0.0; n],
            };
            let fast = scene.feasible(&traj, 0.0).unwrap();
            let ds = t.length() / (10 * n) as f64;
            for k in 0..n {
                let s = (10 * k) as f64 * ds;
                let p = t.point_at(s, traj.y_hat[k]);
                let on_track = traj.y_hat[k].abs() <= scene.lateral_limit();
                let clear = scene
                    .obstacles
                    .iter()
                    .all(|o| dist(p, o.center) >= o.radius + scene.vehicle_radius + scene.safety_margin);
                assert_eq!(fast[k], on_track && clear, "station {k}");
            }
        }
    }

    #[test]
    fn feasibility_covariant_under_rotation() {
        let t = track();
        let shift = 17;
        let rotated = Arc::new(t.rotated(shift).unwrap());
        let n = t.n_stations();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let obstacles: Vec<Obstacle> = (0..3)
                .map(|_| {
                    let s = rng.random_range(0.0..t.length());
                    Obstacle::fixed(t.point_at(s, rng.random_range(-0.4..0.4)), 0.1)
                })
                .collect();
            let a = Scene::empty(t.clone()).with_obstacles(obstacles.clone());
            let b = Scene::empty(rotated.clone()).with_obstacles(obstacles);
            let traj = Trajectory {
                y_hat: (0..n).map(|_| rng.random_range(-0.4..0.4)).collect(),
                phi_hat: vec![0.0; n],
            };
            let mut shifted = traj.clone();
            shifted.y_hat.rotate_left(shift);
            let fa = a.feasible(&traj, 0.0).unwrap();
            let mut fb = b.feasible(&shifted, 0.0).unwrap();
            fb.rotate_right(shift);
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn constraint_grad_matches_difference() {
        let t = track();
        let scene = Scene::empty(t.clone()).with_obstacles(vec![Obstacle::fixed(t.point_at(2.0, 0.1), 0.1)]);
        let k = (2.0 / t.station_spacing()).round() as usize;
        let pos = scene.obstacle_positions(0.0);
        let mut buf = Vec::new();
        for y in [-0.3, -0.05, 0.07, 0.3] {
            scene.constraint_values_with_grad(k, y, &pos, &mut buf);
            let h = 1e-7;
            let plus = scene.constraint_values(k, y + h, 0.0);
            let minus = scene.constraint_values(k, y - h, 0.0);
            for (i, (v, g)) in buf.iter().enumerate() {
                assert_relative_eq!(*v, scene.constraint_values(k, y, 0.0)[i], epsilon = 1e-15);
                assert!((g - (plus[i] - minus[i]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }
}
