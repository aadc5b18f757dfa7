//! Scenario sources: seeded procedural routes with scripted traffic, or a
//! fixed scenario definition loaded from JSON.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::route::{Point, Route};
use super::EnvConfig;
use crate::error::{Error, Result};

/// Arc length of the straight run-in section behind the start.
pub const RUN_IN: f64 = 10.0;
/// Arc length of the straight run-out section past the goal.
pub const RUN_OUT: f64 = 45.0;

/// A traffic participant script: constant speed along a lane at a fixed
/// lateral offset from the centerline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficScript {
    pub arc_start: f64,
    pub lane_offset: f64,
    pub speed: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub point_spacing: f64,
    pub segments: (usize, usize),
    pub segment_length: (f64, f64),
    pub straight_probability: f64,
    /// Curvature radius range of curved segments, in metres.
    pub turn_radius: (f64, f64),
    pub max_abs_heading: f64,
    pub traffic_first_arc: f64,
    pub traffic_gap: (f64, f64),
    pub traffic_goal_margin: f64,
    pub traffic_offset: (f64, f64),
    pub moving_probability: f64,
    pub traffic_speed: (f64, f64),
    pub traffic_radius: f64,
    pub initial_speed: f64,
    /// Ego speed assumed when checking where traffic will be overtaken.
    pub reference_speed: f64,
    /// Minimum arc separation between overtaking points of traffic on
    /// opposite sides; moving traffic that would close such a gap is stopped.
    pub min_pass_gap: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            point_spacing: 2.0,
            segments: (4, 6),
            segment_length: (30.0, 50.0),
            straight_probability: 0.35,
            turn_radius: (25.0, 60.0),
            max_abs_heading: 1.4,
            traffic_first_arc: 35.0,
            traffic_gap: (45.0, 65.0),
            traffic_goal_margin: 15.0,
            traffic_offset: (0.9, 1.7),
            moving_probability: 0.5,
            traffic_speed: (1.0, 2.5),
            traffic_radius: 1.0,
            initial_speed: 6.0,
            reference_speed: 7.0,
            min_pass_gap: 20.0,
        }
    }
}

/// Fixed scenario document: route polyline, traffic scripts and optional
/// physical constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDef {
    pub route: Vec<Point>,
    #[serde(default)]
    pub traffic: Vec<TrafficScript>,
    #[serde(default)]
    pub initial_speed: f64,
    #[serde(default)]
    pub physics: Option<EnvConfig>,
}

impl ScenarioDef {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn build_route(&self) -> Result<Route> {
        Route::from_polyline(&self.route, RUN_IN, RUN_OUT, 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSource {
    Generated(GeneratorConfig),
    Fixed(ScenarioDef),
}

impl Default for ScenarioSource {
    fn default() -> Self {
        ScenarioSource::Generated(GeneratorConfig::default())
    }
}

/// Everything needed to place a fresh world.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub route: Route,
    pub traffic: Vec<TrafficScript>,
    pub initial_speed: f64,
}

impl ScenarioSource {
    pub fn build(&self, seed: u64) -> Result<Scenario> {
        match self {
            ScenarioSource::Generated(cfg) => generate(cfg, seed),
            ScenarioSource::Fixed(def) => Ok(Scenario {
                route: def.build_route()?,
                traffic: def.traffic.clone(),
                initial_speed: def.initial_speed,
            }),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Straight and constant-curvature segments chained from the origin, then
/// traffic spaced along the route.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_2047_u64);
    let n_segments = rng.random_range(cfg.segments.0..=cfg.segments.1.max(cfg.segments.0));
    let mut points = vec![[0.0, 0.0]];
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n_segments {
        let len = uniform(&mut rng, cfg.segment_length);
        let curvature = if rng.random_bool(cfg.straight_probability) {
            0.0
        } else {
            let r = uniform(&mut rng, cfg.turn_radius);
            let mut k = if rng.random_bool(0.5) { 1.0 / r } else { -1.0 / r };
            if (heading + k * len).abs() > cfg.max_abs_heading {
                k = -k;
            }
            if (heading + k * len).abs() > cfg.max_abs_heading {
                k = 0.0;
            }
            k
        };
        let steps = (len / cfg.point_spacing).ceil().max(1.0) as usize;
        let ds = len / steps as f64;
        for _ in 0..steps {
            if curvature == 0.0 {
                x += ds * heading.cos();
                y += ds * heading.sin();
            } else {
                // exact arc chord
                let r = 1.0 / curvature;
                let h1 = heading + ds * curvature;
                x += r * (h1.sin() - heading.sin());
                y -= r * (h1.cos() - heading.cos());
                heading = h1;
            }
            points.push([x, y]);
        }
    }
    let route = Route::from_polyline(&points, RUN_IN, RUN_OUT, cfg.point_spacing)?;

    let mut traffic = Vec::new();
    let mut arc = cfg.traffic_first_arc + uniform(&mut rng, (0.0, 10.0));
    while arc < route.length() - cfg.traffic_goal_margin {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let lane_offset = side * uniform(&mut rng, cfg.traffic_offset);
        let speed = if rng.random_bool(cfg.moving_probability) {
            uniform(&mut rng, cfg.traffic_speed)
        } else {
            0.0
        };
        traffic.push(TrafficScript {
            arc_start: arc,
            lane_offset,
            speed,
            radius: cfg.traffic_radius,
        });
        arc += uniform(&mut rng, cfg.traffic_gap);
    }
    separate_pass_points(cfg, route.length(), &mut traffic);
    Ok(Scenario {
        route,
        traffic,
        initial_speed: cfg.initial_speed,
    })
}

/// Arc at which an ego at `cfg.reference_speed` from arc 0 draws level.
fn pass_point(cfg: &GeneratorConfig, t: &TrafficScript) -> f64 {
    if t.speed > 0.0 && t.speed < cfg.reference_speed {
        cfg.reference_speed * t.arc_start / (cfg.reference_speed - t.speed)
    } else {
        t.arc_start
    }
}

fn separate_pass_points(cfg: &GeneratorConfig, length: f64, traffic: &mut [TrafficScript]) {
    loop {
        let mut changed = false;
        for i in 0..traffic.len() {
            let ti = traffic[i];
            if ti.speed == 0.0 {
                continue;
            }
            let mi = pass_point(cfg, &ti);
            let blocked = mi > length - cfg.traffic_goal_margin
                || ti.speed >= cfg.reference_speed
                || traffic.iter().enumerate().any(|(j, tj)| {
                    j != i
                        && tj.lane_offset * ti.lane_offset < 0.0
                        && (pass_point(cfg, tj) - mi).abs() < cfg.min_pass_gap
                });
            if blocked {
                traffic[i].speed = 0.0;
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig::default();
        let a = generate(&cfg, 7).unwrap();
        let b = generate(&cfg, 7).unwrap();
        assert_eq!(a.route, b.route);
        assert_eq!(a.traffic, b.traffic);
        let c = generate(&cfg, 8).unwrap();
        assert_ne!(a.route, c.route);
    }

    #[test]
    fn routes_respect_heading_budget() {
        let cfg = GeneratorConfig::default();
        for seed in 0..200 {
            let s = generate(&cfg, seed).unwrap();
            for w in s.route.points().windows(2) {
                let h = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
                assert!(h.abs() <= cfg.max_abs_heading + 1e-9, "seed {seed}");
            }
            assert!(s.route.length() > 100.0);
        }
    }

    #[test]
    fn scenario_file_parses() {
        let text = r#"{"route": [[0,0],[100,0]], "traffic": [{"arc_start": 40, "lane_offset": 1.2, "speed": 0, "radius": 1}], "initial_speed": 5}"#;
        let def: ScenarioDef = serde_json::from_str(text).unwrap();
        let s = ScenarioSource::Fixed(def).build(3).unwrap();
        assert_eq!(s.route.length(), 100.0);
        assert_eq!(s.traffic.len(), 1);
        assert!(serde_json::from_str::<ScenarioDef>(r#"{"route": [], "bogus": 1}"#).is_err());
    }
}
