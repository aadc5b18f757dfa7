//! Scripted proxy expert and the takeover gate.
//!
//! The expert steers by pure pursuit toward a point `lookahead` metres down
//! the route, laterally shifted to clear the nearest traffic, and tracks a
//! target speed proportionally. Its stochastic form adds clipped Gaussian
//! noise to that controller output.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, WorldState};
use crate::error::{contract, Error, Result};
use crate::numerics::gaussian_log_density;
use crate::predictor::PredictedRollout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertPolicy {
    /// Pure-pursuit lookahead at standstill, metres.
    pub lookahead: f64,
    /// Additional lookahead per m/s of speed.
    pub lookahead_per_speed: f64,
    pub target_speed: f64,
    pub steer_gain: f64,
    pub speed_gain: f64,
    pub action_noise_std: [f64; 2],
    /// Lateral centre-to-centre distance kept from traffic when passing.
    pub clearance: f64,
    /// Route window `(behind, ahead)` in which traffic shifts the target lane.
    pub avoid_window: (f64, f64),
    pub max_target_offset: f64,
    /// Shortest lookahead used when closing in on blocking traffic.
    pub min_lookahead: f64,
    /// Lookahead as a fraction of the gap to blocking traffic.
    pub evasive_lookahead_ratio: f64,
    /// Gap below which the expert slows to `evasive_speed`.
    pub brake_gap: f64,
    pub evasive_speed: f64,
}

impl Default for ExpertPolicy {
    fn default() -> Self {
        Self {
            lookahead: 5.0,
            lookahead_per_speed: 0.6,
            target_speed: 7.0,
            steer_gain: 1.0,
            speed_gain: 0.5,
            action_noise_std: [0.05, 0.05],
            clearance: 2.6,
            avoid_window: (4.0, 30.0),
            max_target_offset: 2.0,
            min_lookahead: 2.0,
            evasive_lookahead_ratio: 0.5,
            brake_gap: 10.0,
            evasive_speed: 3.0,
        }
    }
}

impl ExpertPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.action_noise_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(
                "expert.action_noise_std must be positive".into(),
            ));
        }
        if !(self.lookahead > 0.0 && self.target_speed >= 0.0) {
            return Err(Error::Config(
                "expert.lookahead must be positive and target_speed non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Lateral offset the expert aims for: the candidate lane position with
    /// the least clearance deficit to traffic in the avoidance window.
    pub fn target_offset(&self, world: &WorldState) -> f64 {
        let p = world.projection();
        let nearby: Vec<(f64, f64, f64)> = world
            .traffic
            .iter()
            .filter(|t| {
                let d = t.arc - p.arc;
                d > -self.avoid_window.0 && d < self.avoid_window.1
            })
            .map(|t| {
                // nearer traffic dominates the choice of side
                let w = (-(t.arc - p.arc).max(0.0) / 8.0).exp();
                (t.lane_offset, t.radius, w)
            })
            .collect();
        if nearby.is_empty() {
            return 0.0;
        }
        let steps = (self.max_target_offset / 0.1).round() as i32;
        let mut best = (f64::INFINITY, 0.0);
        for k in -steps..=steps {
            let o = k as f64 * 0.1;
            let deficit: f64 = nearby
                .iter()
                .map(|(off, r, w)| w * (self.clearance + (r - 1.0) - (o - off).abs()).max(0.0))
                .sum();
            let cost = 10.0 * deficit + 0.05 * o.abs() + 0.02 * (o - p.lateral).abs();
            if cost < best.0 {
                best = (cost, o);
            }
        }
        best.1
    }

    /// Arc gap to the nearest traffic ahead that the ego would touch if it
    /// kept its current lateral offset.
    pub fn blocking_gap(&self, env: &Env, world: &WorldState) -> Option<f64> {
        let p = world.projection();
        world
            .traffic
            .iter()
            .filter(|t| {
                let touch = env.config().ego_radius + t.radius;
                (p.lateral - t.lane_offset).abs() < touch && t.arc > p.arc - 1.0
            })
            .map(|t| t.arc - p.arc)
            .filter(|d| *d < self.avoid_window.1)
            .min_by(f64::total_cmp)
    }

    /// Noise-free controller output, clamped to `[-1, 1]`.
    pub fn controller_mean(&self, env: &Env, world: &WorldState) -> Action {
        let c = env.config();
        let e = &world.ego;
        let p = world.projection();
        let mut ld = self.lookahead + self.lookahead_per_speed * e.speed;
        let mut target_speed = self.target_speed;
        if let Some(gap) = self.blocking_gap(env, world) {
            ld = ld.min((self.evasive_lookahead_ratio * gap).max(self.min_lookahead));
            if gap < self.brake_gap {
                target_speed = target_speed.min(self.evasive_speed);
            }
        }
        let (tx, ty, _) = world.route.pose_at(p.arc + ld, self.target_offset(world));
        let (dx, dy) = (tx - e.x, ty - e.y);
        let dist = (dx * dx + dy * dy).sqrt().max(1e-6);
        let alpha = crate::env::normalize_angle(dy.atan2(dx) - e.heading);
        let delta = (2.0 * c.wheelbase * alpha.sin()).atan2(dist);
        let steer = (self.steer_gain * delta / c.max_steer).clamp(-1.0, 1.0);
        let accel = (self.speed_gain * (target_speed - e.speed)).clamp(-1.0, 1.0);
        [steer, accel]
    }

    /// `clamp(mean + std * z, -1, 1)`.
    pub fn expert_action<R: Rng + ?Sized>(&self, env: &Env, world: &WorldState, rng: &mut R) -> Action {
        let m = self.controller_mean(env, world);
        std::array::from_fn(|i| {
            let z: f64 = StandardNormal.sample(rng);
            (m[i] + self.action_noise_std[i] * z).clamp(-1.0, 1.0)
        })
    }

    /// Log-density on the open square `(-1, 1)^2` of the clipped Gaussian
    /// around the controller output (the interior part is a plain Gaussian).
    pub fn expert_log_prob(&self, env: &Env, world: &WorldState, action: &Action) -> Result<f64> {
        if action.iter().any(|a| !(a.abs() < 1.0)) {
            return Err(contract(format!(
                "expert_log_prob needs an interior action, got {action:?}"
            )));
        }
        let m = self.controller_mean(env, world);
        Ok(self.log_density_around(&m, action))
    }

    pub(crate) fn log_density_around(&self, mean: &Action, action: &Action) -> f64 {
        let log_std = self.action_noise_std.map(f64::ln);
        gaussian_log_density(mean, &log_std, action)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub slow_speed_threshold: f64,
    pub on_crash: bool,
    pub on_off_road: bool,
    /// Degenerate gate: when set, every decision returns this value.
    pub fixed: Option<bool>,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            slow_speed_threshold: 1.0,
            on_crash: true,
            on_off_road: true,
            fixed: None,
        }
    }
}

/// Takeover rule over a predicted rollout: any enabled safety flag, or a
/// mean predicted speed below the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct InterventionGate {
    pub horizon: usize,
    pub config: GateConfig,
}

impl InterventionGate {
    pub fn new(horizon: usize, config: GateConfig, max_speed: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("gate horizon must be at least 1".into()));
        }
        if !(0.0..=max_speed).contains(&config.slow_speed_threshold) {
            return Err(Error::Config(format!(
                "gate.slow_speed_threshold must lie in [0, {max_speed}]"
            )));
        }
        Ok(Self { horizon, config })
    }

    pub fn should_intervene(&self, rollout: &PredictedRollout) -> Result<bool> {
        if rollout.horizon != self.horizon || rollout.states.len() != self.horizon + 1 {
            return Err(contract(format!(
                "rollout horizon {} does not match gate horizon {}",
                rollout.horizon, self.horizon
            )));
        }
        if let Some(f) = self.config.fixed {
            return Ok(f);
        }
        let flagged = rollout
            .flags
            .iter()
            .any(|f| (self.config.on_crash && f.crash) || (self.config.on_off_road && f.off_road));
        let slow = rollout
            .mean_predicted_speed()
            .is_some_and(|v| v < self.config.slow_speed_threshold);
        Ok(flagged || slow)
    }
}
