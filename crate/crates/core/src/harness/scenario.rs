//! Declarative obstacle scripts: timed spawn, move-along-waypoints and
//! despawn events in Frenet coordinates.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Obstacle, Point, Track};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    /// Arc length, unwrapped; positions use `s mod length`.
    pub s: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioEvent {
    Spawn { time: f64, id: u32, s: f64, y: f64, radius: f64 },
    /// From its position at `time` the obstacle moves linearly through the
    /// waypoints and then rests at the last one.
    Move { time: f64, id: u32, waypoints: Vec<Waypoint> },
    Despawn { time: f64, id: u32 },
}

impl ScenarioEvent {
    pub fn time(&self) -> f64 {
        match self {
            Self::Spawn { time, .. } | Self::Move { time, .. } | Self::Despawn { time, .. } => *time,
        }
    }

    fn id(&self) -> u32 {
        match self {
            Self::Spawn { id, .. } | Self::Move { id, .. } | Self::Despawn { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub events: Vec<ScenarioEvent>,
}

/// Frenet path of one obstacle: knots `(time, s, y)` with constant
/// extrapolation at both ends.
#[derive(Debug, Clone)]
struct Track1 {
    radius: f64,
    spawn: f64,
    despawn: f64,
    knots: Vec<(f64, f64, f64)>,
}

impl Track1 {
    fn at(&self, t: f64) -> (f64, f64) {
        let k = &self.knots;
        if t <= k[0].0 {
            return (k[0].1, k[0].2);
        }
        for w in k.windows(2) {
            let (t0, s0, y0) = w[0];
            let (t1, s1, y1) = w[1];
            if t <= t1 {
                let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return (s0 + a * (s1 - s0), y0 + a * (y1 - y0));
            }
        }
        let last = k[k.len() - 1];
        (last.1, last.2)
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn empty(name: &str) -> Self {
        Self {
            name: name.into(),
            events: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.windows(2).any(|w| w[1].time() < w[0].time()) {
            return Err(Error::InvalidArgument(format!("scenario {}: events are not time-ordered", self.name)));
        }
        let mut spawned = BTreeMap::new();
        for e in &self.events {
            if !e.time().is_finite() {
                return Err(Error::NonFinite("scenario event time"));
            }
            match e {
                ScenarioEvent::Spawn { id, radius, .. } => {
                    if !(*radius > 0.0) {
                        return Err(Error::InvalidArgument(format!("obstacle {id}: radius must be positive")));
                    }
                    if spawned.insert(*id, ()).is_some() {
                        return Err(Error::InvalidArgument(format!("obstacle {id} spawned twice")));
                    }
                }
                ScenarioEvent::Move { id, waypoints, time } => {
                    if !spawned.contains_key(id) {
                        return Err(Error::InvalidArgument(format!("obstacle {id} moves before it spawns")));
                    }
                    let mut prev = *time;
                    for w in waypoints {
                        if w.time < prev {
                            return Err(Error::InvalidArgument(format!("obstacle {id}: waypoints not time-ordered")));
                        }
                        prev = w.time;
                    }
                }
                ScenarioEvent::Despawn { id, .. } => {
                    if !spawned.contains_key(id) {
                        return Err(Error::InvalidArgument(format!("obstacle {id} despawns before it spawns")));
                    }
                }
            }
        }
        Ok(())
    }

    fn timelines(&self) -> BTreeMap<u32, Track1> {
        let mut out: BTreeMap<u32, Track1> = BTreeMap::new();
        for e in &self.events {
            match e {
                ScenarioEvent::Spawn { time, id, s, y, radius } => {
                    out.insert(
                        *id,
                        Track1 {
                            radius: *radius,
                            spawn: *time,
                            despawn: f64::INFINITY,
                            knots: vec![(*time, *s, *y)],
                        },
                    );
                }
                ScenarioEvent::Move { time, waypoints, .. } => {
                    if let Some(tl) = out.get_mut(&e.id()) {
                        let (s, y) = tl.at(*time);
                        tl.knots.retain(|k| k.0 < *time);
                        tl.knots.push((*time, s, y));
                        tl.knots.extend(waypoints.iter().map(|w| (w.time, w.s, w.y)));
                    }
                }
                ScenarioEvent::Despawn { time, .. } => {
                    if let Some(tl) = out.get_mut(&e.id()) {
                        tl.despawn = *time;
                    }
                }
            }
        }
        out
    }

    /// Frenet state `(id, s, y, radius)` of every obstacle present at `t`.
    pub fn frenet_state(&self, t: f64) -> Vec<(u32, f64, f64, f64)> {
        self.timelines()
            .into_iter()
            .filter(|(_, tl)| t >= tl.spawn && t < tl.despawn)
            .map(|(id, tl)| {
                let (s, y) = tl.at(t);
                (id, s, y, tl.radius)
            })
            .collect()
    }

    /// Obstacles present at `t`, with velocities from a central difference.
    pub fn obstacles_at(&self, track: &Track, t: f64) -> Vec<Obstacle> {
        let h = 1e-3;
        let pos = |s: f64, y: f64| -> Point { track.point_at(s.rem_euclid(track.length()), y) };
        let tls = self.timelines();
        tls.values()
            .filter(|tl| t >= tl.spawn && t < tl.despawn)
            .map(|tl| {
                let (s, y) = tl.at(t);
                let (sp, yp) = tl.at(t + h);
                let (sm, ym) = tl.at(t - h);
                let (a, b) = (pos(sp, yp), pos(sm, ym));
                Obstacle {
                    center: pos(s, y),
                    radius: tl.radius,
                    velocity: [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)],
                }
            })
            .collect()
    }

    /// One static obstacle and one dynamic obstacle that crosses the
    /// racing line while the vehicle approaches it.
    pub fn crossing(track: &Track) -> Self {
        let l = track.length();
        let hw = track.half_width();
        Self {
            name: "crossing".into(),
            events: vec![
                ScenarioEvent::Spawn {
                    time: 0.0,
                    id: 0,
                    s: 0.3 * l,
                    y: 0.45 * hw,
                    radius: 0.08,
                },
                ScenarioEvent::Spawn {
                    time: 0.0,
                    id: 1,
                    s: 0.6 * l,
                    y: -0.8 * hw,
                    radius: 0.07,
                },
                ScenarioEvent::Move {
                    time: 1.0,
                    id: 1,
                    waypoints: vec![
                        Waypoint {
                            time: 6.0,
                            s: 0.6 * l,
                            y: 0.8 * hw,
                        },
                        Waypoint {
                            time: 11.0,
                            s: 0.6 * l,
                            y: -0.8 * hw,
                        },
                        Waypoint {
                            time: 16.0,
                            s: 0.6 * l,
                            y: 0.8 * hw,
                        },
                        Waypoint {
                            time: 21.0,
                            s: 0.6 * l,
                            y: -0.8 * hw,
                        },
                        Waypoint {
                            time: 26.0,
                            s: 0.6 * l,
                            y: 0.8 * hw,
                        },
                    ],
                },
            ],
        }
    }

    /// Random mix of static and slowly crossing obstacles kept clear of the
    /// start line; `index` selects the stream of the generator seeded by `seed`.
    pub fn random(track: &Track, seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let l = track.length();
        let hw = track.half_width();
        let mut events = Vec::new();
        let mut moves = Vec::new();
        let n_static = rng.random_range(1..=3);
        let n_dynamic = rng.random_range(1..=2);
        let mut id = 0;
        for _ in 0..n_static {
            events.push(ScenarioEvent::Spawn {
                time: 0.0,
                id,
                s: rng.random_range(0.1 * l..0.9 * l),
                y: rng.random_range(-0.6 * hw..0.6 * hw),
                radius: rng.random_range(0.05..0.1),
            });
            id += 1;
        }
        for _ in 0..n_dynamic {
            let s = rng.random_range(0.1 * l..0.9 * l);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let y0 = side * 0.8 * hw;
            let speed = rng.random_range(0.05..0.15);
            let start = rng.random_range(0.0..5.0);
            let leg = 1.6 * hw / speed;
            events.push(ScenarioEvent::Spawn {
                time: 0.0,
                id,
                s,
                y: y0,
                radius: rng.random_range(0.05..0.08),
            });
            let waypoints = (1..=8)
                .map(|k| Waypoint {
                    time: start + k as f64 * leg,
                    s,
                    y: if k % 2 == 1 { -y0 } else { y0 },
                })
                .collect();
            moves.push(ScenarioEvent::Move { time: start, id, waypoints });
            id += 1;
        }
        events.extend(moves);
        events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        Self {
            name: format!("random-{seed}-{index}"),
            events,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track() -> Track {
        Track::ellipse(2.0, 1.2, 0.5, 64).unwrap()
    }

    #[test]
    fn waypoint_motion_interpolates_and_rests() {
        let sc = Scenario {
            name: "t".into(),
            events: vec![
                ScenarioEvent::Spawn {
                    time: 0.0,
                    id: 3,
                    s: 1.0,
                    y: -0.2,
                    radius: 0.1,
                },
                ScenarioEvent::Move {
                    time: 1.0,
                    id: 3,
                    waypoints: vec![Waypoint { time: 3.0, s: 1.0, y: 0.2 }],
                },
                ScenarioEvent::Despawn { time: 5.0, id: 3 },
            ],
        };
        sc.validate().unwrap();
        assert_eq!(sc.frenet_state(0.5), vec![(3, 1.0, -0.2, 0.1)]);
        let (_, _, y, _) = sc.frenet_state(2.0)[0];
        assert!((y - 0.0).abs() < 1e-12);
        assert_eq!(sc.frenet_state(4.0)[0].2, 0.2);
        assert!(sc.frenet_state(5.0).is_empty());
        let tr = track();
        let obs = sc.obstacles_at(&tr, 2.0);
        let speed = obs[0].velocity[0].hypot(obs[0].velocity[1]);
        assert!((speed - 0.2).abs() < 1e-6, "{speed}");
    }

    #[test]
    fn unordered_events_rejected() {
        let sc = Scenario {
            name: "bad".into(),
            events: vec![
                ScenarioEvent::Spawn {
                    time: 2.0,
                    id: 0,
                    s: 0.0,
                    y: 0.0,
                    radius: 0.1,
                },
                ScenarioEvent::Despawn { time: 1.0, id: 0 },
            ],
        };
        assert!(sc.validate().is_err());
    }

    #[test]
    fn generated_scenarios_are_valid_and_reproducible() {
        let tr = track();
        for i in 0..10 {
            let a = Scenario::random(&tr, 4, i);
            a.validate().unwrap();
            assert_eq!(a, Scenario::random(&tr, 4, i));
        }
        Scenario::crossing(&tr).validate().unwrap();
    }
}
