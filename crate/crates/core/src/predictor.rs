//! Constant-action trajectory prediction.
//!
//! `simulator` mode replays the world's own dynamics (traffic keeps following
//! its scripts); `rule_based` integrates only the ego bicycle model and holds
//! every traffic participant where it is.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{check_action, Action, Env, Events, WorldState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    Simulator,
    RuleBased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub mode: PredictorMode,
    /// Relative norm of the Gaussian perturbation on predicted states.
    pub noise_eps: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            mode: PredictorMode::Simulator,
            noise_eps: 0.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_eps.is_finite() && self.noise_eps >= 0.0) {
            return Err(Error::Config(format!(
                "predictor.noise_eps must be >= 0, got {}",
                self.noise_eps
            )));
        }
        Ok(())
    }
}

/// `states[0]` is the input world; `states[i]` the prediction after `i`
/// steps of the held action.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedRollout {
    pub states: Vec<WorldState>,
    pub flags: Vec<Events>,
    pub horizon: usize,
    pub mode: PredictorMode,
    pub noise_eps: f64,
    /// Route-frame perturbation `(lateral, heading, speed)` applied to each
    /// state; all zero without noise.
    pub perturbations: Vec<[f64; 3]>,
}

impl PredictedRollout {
    pub fn has_safety_violation(&self) -> bool {
        self.flags.iter().any(|f| f.is_safety_violation())
    }

    /// Mean ego speed over the predicted states `1..=H`.
    pub fn mean_predicted_speed(&self) -> Option<f64> {
        let n = self.states.len().saturating_sub(1);
        (n > 0).then(|| self.states[1..].iter().map(|s| s.ego.speed).sum::<f64>() / n as f64)
    }
}

pub fn predict(
    env: &Env,
    world: &WorldState,
    action: Action,
    horizon: usize,
    mode: PredictorMode,
) -> Result<PredictedRollout> {
    check_action(&action)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut flags = Vec::with_capacity(horizon + 1);
    states.push(world.clone());
    flags.push(env.state_events(world));
    for _ in 0..horizon {
        let cur = states.last().unwrap();
        let (next, ev) = match mode {
            PredictorMode::Simulator => {
                let out = env.step(cur, action)?;
                (out.next, out.events)
            }
            PredictorMode::RuleBased => {
                let mut next = cur.clone();
                next.ego = env.integrate_ego(&cur.ego, &action);
                next.tick += 1;
                let arc = next.projection().arc;
                next.progress = next.progress.max(arc.clamp(0.0, next.route.length()));
                let ev = env.state_events(&next);
                (next, ev)
            }
        };
        states.push(next);
        flags.push(ev);
    }
    Ok(PredictedRollout {
        states,
        flags,
        horizon,
        mode,
        noise_eps: 0.0,
        perturbations: vec![[0.0; 3]; horizon + 1],
    })
}

/// Perturbs every predicted state `i >= 1` in its route frame
/// `(lateral offset, heading error, speed)` by a random direction scaled to
/// `eps` times that block's norm, then recomputes the flags.
pub fn inject_noise(
    env: &Env,
    rollout: &PredictedRollout,
    eps: f64,
    rng_seed: u64,
) -> Result<PredictedRollout> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Contract(format!("noise eps must be >= 0, got {eps}")));
    }
    let mut out = rollout.clone();
    out.noise_eps = eps;
    if eps == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let max_speed = env.config().max_speed;
    for i in 1..out.states.len() {
        let s = &mut out.states[i];
        let p = s.projection();
        let (lat, head, speed) = s.route_frame();
        let block_norm = (lat * lat + head * head + speed * speed).sqrt();
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let zn = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
        let e = z.map(|v| v / zn * eps * block_norm);
        let normal = [-p.tangent_heading.sin(), p.tangent_heading.cos()];
        s.ego.x += normal[0] * e[0];
        s.ego.y += normal[1] * e[0];
        s.ego.heading = crate::env::normalize_angle(s.ego.heading + e[1]);
        s.ego.speed = (s.ego.speed + e[2]).clamp(0.0, max_speed);
        let arc = s.projection().arc.clamp(0.0, s.route.length());
        let prev = out.states[i - 1].progress;
        let s = &mut out.states[i];
        s.progress = prev.max(arc);
        out.flags[i] = env.state_events(s);
        out.perturbations[i] = e;
    }
    Ok(out)
}

/// Prediction as seen by the gate and the preference builder: the raw
/// rollout, with noise injected when the config asks for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
}

impl Predictor {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn rollout(
        &self,
        env: &Env,
        world: &WorldState,
        action: Action,
        horizon: usize,
        noise_seed: u64,
    ) -> Result<PredictedRollout> {
        let raw = predict(env, world, action, horizon, self.config.mode)?;
        if self.config.noise_eps > 0.0 {
            inject_noise(env, &raw, self.config.noise_eps, noise_seed)
        } else {
            Ok(raw)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, Route, ScenarioSource, TrafficScript};
    use std::sync::Arc;

    fn straight_world(traffic: &[TrafficScript], speed: f64) -> (Env, WorldState) {
        let env = Env::new(EnvConfig::default(), ScenarioSource::default()).unwrap();
        let route = Route::from_polyline(
            &(0..=100).map(|i| [2.0 * i as f64, 0.0]).collect::<Vec<_>>(),
            10.0,
            45.0,
            2.0,
        )
        .unwrap();
        let w = env.place(Arc::new(route), traffic, speed, 0);
        (env, w)
    }

    #[test]
    fn zero_horizon_is_the_input_state() {
        let (env, w) = straight_world(&[], 5.0);
        let r = predict(&env, &w, [0.2, 0.1], 0, PredictorMode::Simulator).unwrap();
        assert_eq!(r.states, vec![w]);
        assert_eq!(r.flags.len(), 1);
    }

    #[test]
    fn modes_agree_without_traffic() {
        let (env, mut w) = straight_world(&[], 6.0);
        w.ego.heading = 0.05;
        let a = predict(&env, &w, [0.3, 0.4], 10, PredictorMode::Simulator).unwrap();
        let b = predict(&env, &w, [0.3, 0.4], 10, PredictorMode::RuleBased).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!((x.ego.x - y.ego.x).abs() < 1e-9);
            assert!((x.ego.y - y.ego.y).abs() < 1e-9);
            assert!((x.ego.heading - y.ego.heading).abs() < 1e-9);
            assert!((x.ego.speed - y.ego.speed).abs() < 1e-9);
        }
    }

    #[test]
    fn crash_flag_appears_at_computed_step() {
        // centre of a radius-1 disc at 20 m ahead, ego at 10 m/s: contact once
        // the gap drops below 2 m, i.e. x > 18 -> after step 19 (x = 19.0)
        let traffic = [TrafficScript {
            arc_start: 20.0,
            lane_offset: 0.0,
            speed: 0.0,
            radius: 1.0,
        }];
        let (env, w) = straight_world(&traffic, 10.0);
        let r = predict(&env, &w, [0.0, 0.0], 25, PredictorMode::RuleBased).unwrap();
        let first = r.flags.iter().position(|f| f.crash).unwrap();
        assert_eq!(first, 19);
        // the held action drives through the disc: contact while 18 < x < 22
        let hits: Vec<usize> = (0..=25).filter(|&i| r.flags[i].crash).collect();
        assert_eq!(hits, vec![19, 20, 21]);
    }

    #[test]
    fn frozen_traffic_gap_is_linear() {
        let traffic = [TrafficScript {
            arc_start: 60.0,
            lane_offset: 1.5,
            speed: 2.0,
            radius: 1.0,
        }];
        let (env, w) = straight_world(&traffic, 5.0);
        let sim = predict(&env, &w, [0.0, 0.0], 10, PredictorMode::Simulator).unwrap();
        let rule = predict(&env, &w, [0.0, 0.0], 10, PredictorMode::RuleBased).unwrap();
        for i in 0..=10 {
            let gap = sim.states[i].traffic[0].arc - rule.states[i].traffic[0].arc;
            assert!((gap - i as f64 * 0.1 * 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_has_exact_relative_norm() {
        let (env, mut w) = straight_world(&[], 6.0);
        w.ego.y = 0.4;
        let r = predict(&env, &w, [0.1, 0.0], 10, PredictorMode::Simulator).unwrap();
        let n = inject_noise(&env, &r, 0.125, 5).unwrap();
        assert_eq!(n.states[0], r.states[0]);
        for i in 1..=10 {
            let (lat, head, speed) = r.states[i].route_frame();
            let block = (lat * lat + head * head + speed * speed).sqrt();
            let e = n.perturbations[i];
            let en = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            assert!((en / block - 0.125).abs() < 1e-9);
        }
        let same = inject_noise(&env, &r, 0.125, 5).unwrap();
        assert_eq!(same, n);
        let other = inject_noise(&env, &r, 0.125, 6).unwrap();
        assert_ne!(other.perturbations, n.perturbations);
        assert_eq!(inject_noise(&env, &r, 0.0, 5).unwrap().states, r.states);
    }
}
