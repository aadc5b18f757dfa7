//! Deterministic 2D driving world.
//!
//! The ego follows a kinematic bicycle model with explicit Euler steps;
//! traffic discs advance along fixed lane scripts. Sensing is a fan of
//! ray-casts over the forward half plane against traffic and road edges.

mod metrics;
pub mod route;
pub mod scenario;

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{contract, Error, Result};
pub use metrics::{episode_metrics, EpisodeMetrics, TraceRecord};
pub use route::{normalize_angle, Point, Projection, Route};
pub use scenario::{GeneratorConfig, Scenario, ScenarioDef, ScenarioSource, TrafficScript};

/// `(steer, accel)`, each in `[-1, 1]`; positive steer turns left.
pub type Action = [f64; 2];

/// Physical constants of the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub dt: f64,
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    pub max_speed: f64,
    pub lane_half_width: f64,
    pub ego_radius: f64,
    pub num_rays: usize,
    pub ray_range: f64,
    pub sense_road_edges: bool,
    pub max_episode_steps: u64,
    pub crash_penalty: f64,
    pub goal_bonus: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            wheelbase: 2.5,
            max_steer: 0.6,
            max_accel: 3.0,
            max_speed: 10.0,
            lane_half_width: 3.0,
            ego_radius: 1.0,
            num_rays: 16,
            ray_range: 30.0,
            sense_road_edges: true,
            max_episode_steps: 600,
            crash_penalty: 5.0,
            goal_bonus: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn observation_dim(&self) -> usize {
        self.num_rays + 5
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("wheelbase", self.wheelbase),
            ("max_steer", self.max_steer),
            ("max_accel", self.max_accel),
            ("max_speed", self.max_speed),
            ("lane_half_width", self.lane_half_width),
            ("ego_radius", self.ego_radius),
            ("ray_range", self.ray_range),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("env.{name} must be positive, got {v}")));
            }
        }
        if self.num_rays == 0 {
            return Err(Error::Config("env.num_rays must be at least 1".into()));
        }
        if self.max_steer >= PI / 2.0 {
            return Err(Error::Config("env.max_steer must be below pi/2".into()));
        }
        Ok(())
    }

    /// Ray angles relative to the heading, right (-pi/2) to left (+pi/2).
    pub fn ray_angles(&self) -> Vec<f64> {
        let k = self.num_rays;
        if k == 1 {
            return vec![0.0];
        }
        (0..k)
            .map(|i| -PI / 2.0 + PI * i as f64 / (k - 1) as f64)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficAgent {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub radius: f64,
    /// Script position along the route.
    pub arc: f64,
    pub lane_offset: f64,
}

/// Full simulator state.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub ego: EgoState,
    pub traffic: Vec<TrafficAgent>,
    pub route: Arc<Route>,
    pub tick: u64,
    /// Scenario seed the world was reset from.
    pub rng_stream_id: u64,
    /// Furthest route arc reached so far, in `[0, route.length()]`.
    pub progress: f64,
}

impl WorldState {
    pub fn projection(&self) -> Projection {
        self.route.project([self.ego.x, self.ego.y])
    }

    /// `(lateral offset, heading error, speed)` of the ego in the route frame.
    pub fn route_frame(&self) -> (f64, f64, f64) {
        let p = self.projection();
        (
            p.lateral,
            normalize_angle(self.ego.heading - p.tangent_heading),
            self.ego.speed,
        )
    }

    pub fn route_completion(&self) -> f64 {
        (self.progress / self.route.length()).clamp(0.0, 1.0)
    }

    /// Route-independent snapshot; see [`Env::restore`].
    pub fn record(&self) -> WorldRecord {
        WorldRecord {
            ego: self.ego,
            traffic: self.traffic.clone(),
            tick: self.tick,
            rng_stream_id: self.rng_stream_id,
            progress: self.progress,
        }
    }
}

/// Serializable world without its route; the route is rebuilt from the
/// scenario source and `rng_stream_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldRecord {
    pub ego: EgoState,
    pub traffic: Vec<TrafficAgent>,
    pub tick: u64,
    pub rng_stream_id: u64,
    pub progress: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Events {
    pub crash: bool,
    pub off_road: bool,
    pub goal_reached: bool,
    pub timeout: bool,
}

impl Events {
    pub const NAMES: [&'static str; 4] = ["crash", "off_road", "goal_reached", "timeout"];

    pub fn is_safety_violation(&self) -> bool {
        self.crash || self.off_road
    }

    pub fn is_terminal(&self) -> bool {
        self.crash || self.off_road || self.goal_reached || self.timeout
    }

    pub fn is_empty(&self) -> bool {
        !self.is_terminal()
    }

    pub fn names(&self) -> Vec<&'static str> {
        let flags = [self.crash, self.off_road, self.goal_reached, self.timeout];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter_map(|(n, f)| f.then_some(*n))
            .collect()
    }

    pub fn union(self, other: Events) -> Events {
        Events {
            crash: self.crash || other.crash,
            off_road: self.off_road || other.off_road,
            goal_reached: self.goal_reached || other.goal_reached,
            timeout: self.timeout || other.timeout,
        }
    }
}

impl Serialize for Events {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Events {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let mut e = Events::default();
        for n in names {
            match n.as_str() {
                "crash" => e.crash = true,
                "off_road" => e.off_road = true,
                "goal_reached" => e.goal_reached = true,
                "timeout" => e.timeout = true,
                other => {
                    return Err(serde::de::Error::custom(format!("unknown event {other}")))
                }
            }
        }
        Ok(e)
    }
}

/// Fixed-length feature vector: `num_rays` normalized ray distances, then
/// speed fraction, lateral offset, heading error, route completion and
/// straight-line distance to the goal, each scaled into `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for Observation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: WorldState,
    pub obs: Observation,
    pub events: Events,
    /// Evaluation-only shaping: metres of new progress, a penalty on crash or
    /// leaving the road, a bonus on reaching the goal.
    pub reward: f64,
}

pub fn check_action(action: &Action) -> Result<()> {
    if action.iter().any(|a| a.is_nan()) {
        return Err(contract(format!("NaN action {action:?}")));
    }
    if action.iter().any(|a| a.abs() > 1.0) {
        return Err(contract(format!("action {action:?} outside [-1, 1]")));
    }
    Ok(())
}

fn ray_circle(origin: Point, dir: Point, center: Point, radius: f64) -> Option<f64> {
    let f = [origin[0] - center[0], origin[1] - center[1]];
    let b = f[0] * dir[0] + f[1] * dir[1];
    let c = f[0] * f[0] + f[1] * f[1] - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - c;
    if disc < 0.0 || b > 0.0 {
        return None;
    }
    Some(-b - disc.sqrt())
}

fn ray_segment(origin: Point, dir: Point, a: Point, b: Point) -> Option<f64> {
    let s = [b[0] - a[0], b[1] - a[1]];
    let denom = dir[0] * s[1] - dir[1] * s[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let q = [a[0] - origin[0], a[1] - origin[1]];
    let t = (q[0] * s[1] - q[1] * s[0]) / denom;
    let u = (q[0] * dir[1] - q[1] * dir[0]) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// World dynamics, sensing and scenario placement.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    source: ScenarioSource,
}

impl Env {
    pub fn new(config: EnvConfig, source: ScenarioSource) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, source })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn source(&self) -> &ScenarioSource {
        &self.source
    }

    pub fn observation_dim(&self) -> usize {
        self.config.observation_dim()
    }

    /// Places the ego at the route start with traffic at its script origins.
    pub fn reset(&self, scenario_seed: u64) -> Result<(WorldState, Observation)> {
        let sc = self.source.build(scenario_seed)?;
        let route = Arc::new(sc.route);
        let world = self.place(route, &sc.traffic, sc.initial_speed, scenario_seed);
        let obs = self.observe(&world);
        Ok((world, obs))
    }

    /// A world on an explicit route, used by scenario files and tests.
    pub fn place(
        &self,
        route: Arc<Route>,
        traffic: &[TrafficScript],
        initial_speed: f64,
        rng_stream_id: u64,
    ) -> WorldState {
        let (x, y, heading) = route.pose_at(0.0, 0.0);
        let traffic = traffic
            .iter()
            .map(|t| {
                let (tx, ty, th) = route.pose_at(t.arc_start, t.lane_offset);
                TrafficAgent {
                    x: tx,
                    y: ty,
                    heading: th,
                    speed: t.speed,
                    radius: t.radius,
                    arc: t.arc_start,
                    lane_offset: t.lane_offset,
                }
            })
            .collect();
        WorldState {
            ego: EgoState {
                x,
                y,
                heading,
                speed: initial_speed.clamp(0.0, self.config.max_speed),
            },
            traffic,
            route,
            tick: 0,
            rng_stream_id,
            progress: 0.0,
        }
    }

    /// Rebuilds full worlds from records, sharing one route per scenario seed.
    pub fn restore_all(&self, records: &[WorldRecord]) -> Result<Vec<WorldState>> {
        let mut routes: std::collections::HashMap<u64, Arc<Route>> = Default::default();
        records
            .iter()
            .map(|r| {
                let route = match routes.get(&r.rng_stream_id) {
                    Some(route) => route.clone(),
                    None => {
                        let route = Arc::new(self.source.build(r.rng_stream_id)?.route);
                        routes.insert(r.rng_stream_id, route.clone());
                        route
                    }
                };
                Ok(WorldState {
                    ego: r.ego,
                    traffic: r.traffic.clone(),
                    route,
                    tick: r.tick,
                    rng_stream_id: r.rng_stream_id,
                    progress: r.progress,
                })
            })
            .collect()
    }

    pub fn restore(&self, record: &WorldRecord) -> Result<WorldState> {
        Ok(self.restore_all(std::slice::from_ref(record))?.remove(0))
    }

    /// One bicycle-model Euler step of the ego alone.
    pub fn integrate_ego(&self, ego: &EgoState, action: &Action) -> EgoState {
        let c = &self.config;
        let (v, th) = (ego.speed, ego.heading);
        EgoState {
            x: ego.x + v * th.cos() * c.dt,
            y: ego.y + v * th.sin() * c.dt,
            heading: normalize_angle(th + v / c.wheelbase * (c.max_steer * action[0]).tan() * c.dt),
            speed: (v + c.max_accel * action[1] * c.dt).clamp(0.0, c.max_speed),
        }
    }

    /// Advances one traffic script by one step.
    pub fn advance_traffic(&self, route: &Route, agent: &TrafficAgent) -> TrafficAgent {
        let arc = agent.arc + agent.speed * self.config.dt;
        let (x, y, heading) = route.pose_at(arc, agent.lane_offset);
        TrafficAgent {
            x,
            y,
            heading,
            arc,
            ..*agent
        }
    }

    pub fn in_collision(&self, world: &WorldState) -> bool {
        let e = &world.ego;
        world.traffic.iter().any(|t| {
            let r = self.config.ego_radius + t.radius;
            (e.x - t.x).powi(2) + (e.y - t.y).powi(2) < r * r
        })
    }

    /// Crash, off-road and goal flags of a state (no timeout). Crash and
    /// leaving the road take precedence over reaching the goal.
    pub fn state_events(&self, world: &WorldState) -> Events {
        let p = world.projection();
        let crash = self.in_collision(world);
        let off_road = p.lateral.abs() > self.config.lane_half_width;
        let goal_reached = !crash && !off_road && p.arc >= world.route.length();
        Events {
            crash,
            off_road,
            goal_reached,
            timeout: false,
        }
    }

    pub fn step(&self, world: &WorldState, action: Action) -> Result<StepOutcome> {
        check_action(&action)?;
        let ego = self.integrate_ego(&world.ego, &action);
        let traffic = world
            .traffic
            .iter()
            .map(|t| self.advance_traffic(&world.route, t))
            .collect();
        let mut next = WorldState {
            ego,
            traffic,
            route: world.route.clone(),
            tick: world.tick + 1,
            rng_stream_id: world.rng_stream_id,
            progress: world.progress,
        };
        let arc = next.projection().arc;
        next.progress = next.progress.max(arc.clamp(0.0, next.route.length()));
        let mut events = self.state_events(&next);
        if !events.is_terminal() && next.tick >= self.config.max_episode_steps {
            events.timeout = true;
        }
        let mut reward = next.progress - world.progress;
        if events.is_safety_violation() {
            reward -= self.config.crash_penalty;
        }
        if events.goal_reached {
            reward += self.config.goal_bonus;
        }
        let obs = self.observe(&next);
        Ok(StepOutcome {
            next,
            obs,
            events,
            reward,
        })
    }

    /// Ray distances in metres, clipped to the sensor range.
    pub fn ray_distances(&self, world: &WorldState) -> Vec<f64> {
        let c = &self.config;
        let e = &world.ego;
        let origin = [e.x, e.y];
        let range = c.ray_range;
        let window = if c.sense_road_edges {
            let arc = world.projection().arc;
            world
                .route
                .segment_window(arc - range - 5.0, arc + 1.3 * range + 5.0)
        } else {
            0..0
        };
        let edges: Vec<(Point, Point)> = window
            .flat_map(|i| {
                [
                    world.route.edge_segment(i, c.lane_half_width),
                    world.route.edge_segment(i, -c.lane_half_width),
                ]
            })
            .collect();
        c.ray_angles()
            .iter()
            .map(|a| {
                let ang = e.heading + a;
                let dir = [ang.cos(), ang.sin()];
                let mut best = range;
                for t in &world.traffic {
                    if let Some(d) = ray_circle(origin, dir, [t.x, t.y], t.radius) {
                        best = best.min(d);
                    }
                }
                for (p, q) in &edges {
                    if let Some(d) = ray_segment(origin, dir, *p, *q) {
                        best = best.min(d);
                    }
                }
                best
            })
            .collect()
    }

    pub fn observe(&self, world: &WorldState) -> Observation {
        let c = &self.config;
        let mut v: Vec<f64> = self
            .ray_distances(world)
            .into_iter()
            .map(|d| d / c.ray_range)
            .collect();
        let p = world.projection();
        let len = world.route.length();
        let (gx, gy, _) = world.route.pose_at(len, 0.0);
        let to_goal = ((gx - world.ego.x).powi(2) + (gy - world.ego.y).powi(2)).sqrt();
        v.push(world.ego.speed / c.max_speed);
        v.push((p.lateral / c.lane_half_width).clamp(-1.0, 1.0));
        v.push(normalize_angle(world.ego.heading - p.tangent_heading) / PI);
        v.push(world.route_completion());
        v.push((to_goal / len).clamp(0.0, 1.0));
        Observation(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_env(num_rays: usize, sense_edges: bool) -> (Env, Arc<Route>) {
        let cfg = EnvConfig {
            num_rays,
            sense_road_edges: sense_edges,
            ..Default::default()
        };
        let env = Env::new(cfg, ScenarioSource::default()).unwrap();
        let route = Route::from_polyline(
            &(0..=100).map(|i| [2.0 * i as f64, 0.0]).collect::<Vec<_>>(),
            10.0,
            45.0,
            2.0,
        )
        .unwrap();
        (env, Arc::new(route))
    }

    #[test]
    fn reset_is_deterministic() {
        let env = Env::new(EnvConfig::default(), ScenarioSource::default()).unwrap();
        let (a, oa) = env.reset(0).unwrap();
        let (b, ob) = env.reset(0).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert_eq!(a.route_completion(), 0.0);
        assert_eq!(oa.len(), 21);
    }

    #[test]
    fn straight_line_step() {
        let (env, route) = straight_env(16, true);
        let mut w = env.place(route, &[], 5.0, 0);
        w.ego.heading = 0.3;
        let out = env.step(&w, [0.0, 0.0]).unwrap();
        let dx = out.next.ego.x - w.ego.x;
        let dy = out.next.ego.y - w.ego.y;
        // displacement (v dt, 0) in the heading frame
        let along = dx * 0.3f64.cos() + dy * 0.3f64.sin();
        let across = -dx * 0.3f64.sin() + dy * 0.3f64.cos();
        assert!((along - 0.5).abs() < 1e-12);
        assert!(across.abs() < 1e-12);
        assert_eq!(out.next.ego.heading, 0.3);
        assert_eq!(out.next.ego.speed, 5.0);
    }

    #[test]
    fn nan_action_is_rejected() {
        let (env, route) = straight_env(16, true);
        let w = env.place(route, &[], 5.0, 0);
        assert!(env.step(&w, [f64::NAN, 0.0]).is_err());
        assert!(env.step(&w, [0.0, 1.5]).is_err());
    }

    #[test]
    fn empty_world_without_edge_sensing_sees_max_range() {
        let (env, route) = straight_env(16, false);
        let w = env.place(route, &[], 5.0, 0);
        let obs = env.observe(&w);
        assert!(obs[..16].iter().all(|r| *r == 1.0));
        assert_eq!(obs[17], 0.0);
        assert_eq!(obs[18], 0.0);
    }

    #[test]
    fn empty_world_edges_follow_closed_form() {
        let (env, route) = straight_env(16, true);
        let w = env.place(route, &[], 5.0, 0);
        let rays = env.ray_distances(&w);
        for (d, a) in rays.iter().zip(env.config().ray_angles()) {
            let expected = (3.0 / a.sin().abs()).min(30.0);
            assert!((d - expected).abs() < 1e-9, "angle {a}: {d} vs {expected}");
        }
    }

    #[test]
    fn disc_dead_ahead_gives_forward_ray() {
        // an odd ray count puts one ray exactly on the heading
        let (env, route) = straight_env(17, true);
        let traffic = [TrafficScript {
            arc_start: 12.0,
            lane_offset: 0.0,
            speed: 0.0,
            radius: 1.0,
        }];
        let w = env.place(route, &traffic, 5.0, 0);
        let obs = env.observe(&w);
        assert!((obs[8] - (12.0 - 1.0) / 30.0).abs() < 1e-9);
    }

    #[test]
    fn mirrored_world_reverses_rays() {
        let (env, route) = straight_env(16, true);
        let traffic = [
            TrafficScript {
                arc_start: 15.0,
                lane_offset: 1.3,
                speed: 0.0,
                radius: 1.0,
            },
            TrafficScript {
                arc_start: 25.0,
                lane_offset: -0.7,
                speed: 0.0,
                radius: 1.0,
            },
        ];
        let mut w = env.place(route.clone(), &traffic, 5.0, 0);
        w.ego.y = 0.8;
        w.ego.heading = 0.12;
        let mut m = w.clone();
        m.ego.y = -w.ego.y;
        m.ego.heading = -w.ego.heading;
        for t in &mut m.traffic {
            t.y = -t.y;
            t.lane_offset = -t.lane_offset;
        }
        let (a, b) = (env.observe(&w), env.observe(&m));
        let mut rev = b[..16].to_vec();
        rev.reverse();
        for (x, y) in a[..16].iter().zip(&rev) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a[17] + b[17]).abs() < 1e-12);
        assert!((a[18] + b[18]).abs() < 1e-12);
    }

    #[test]
    fn events_serialize_as_names() {
        let e = Events {
            crash: true,
            timeout: true,
            ..Default::default()
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"["crash","timeout"]"#);
        let back: Events = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
