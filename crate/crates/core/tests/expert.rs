mod common;

use common::*;
use foresight_core::env::*;
use foresight_core::expert::*;
use foresight_core::numerics::clamp_interior;
use foresight_core::predictor::{predict, PredictorMode};
use foresight_core::trainer::evaluate_expert;
use rand::Rng;

fn traffic_world(env: &Env, offset: f64, ahead: f64, speed: f64) -> WorldState {
    let t = [TrafficScript { arc_start: ahead, lane_offset: offset, speed: 0.0, radius: 1.0 }];
    straight_world(env, &t, speed)
}

#[test]
fn controller_mean_maximizes_the_density_on_a_grid() {
    let env = default_env();
    let e = ExpertPolicy::default();
    for (off, ahead, v) in [(0.5, 25.0, 6.0), (-1.2, 12.0, 7.0), (0.0, 80.0, 3.0)] {
        let w = traffic_world(&env, off, ahead, v);
        // a saturated mean sits on the boundary, where no density exists
        let m = clamp_interior(&e.controller_mean(&env, &w));
        let m = [m[0], m[1]];
        let at_mean = e.expert_log_prob(&env, &w, &m).unwrap();
        for i in 0..101 {
            for j in 0..101 {
                let a = [-0.99 + 1.98 * i as f64 / 100.0, -0.99 + 1.98 * j as f64 / 100.0];
                assert!(e.expert_log_prob(&env, &w, &a).unwrap() <= at_mean);
            }
        }
    }
}

/// `P(lo < X < hi)` for `X ~ N(m, s^2)`.
fn normal_mass(m: f64, s: f64, lo: f64, hi: f64) -> f64 {
    let z = |x: f64| (x - m) / (s * std::f64::consts::SQRT_2);
    0.5 * (libm::erf(z(hi)) - libm::erf(z(lo)))
}

#[test]
fn density_slice_integrates_to_the_marginal_mass() {
    let env = default_env();
    let e = ExpertPolicy::default();
    let (s0, s1) = (e.action_noise_std[0], e.action_noise_std[1]);
    // the last world brakes hard, so its mean sits near the boundary
    for w in [traffic_world(&env, 0.5, 20.0, 6.0), straight_world(&env, &[], 2.0), straight_world(&env, &[], 10.0)] {
        let m = e.controller_mean(&env, &w);
        let a1 = clamp_interior(&m)[1];
        let n = 40_000;
        let h = 2.0 / n as f64;
        // midpoint rule over the open interval
        let mass: f64 = (0..n)
            .map(|k| {
                let a0 = -1.0 + (k as f64 + 0.5) * h;
                e.expert_log_prob(&env, &w, &[a0, a1]).unwrap().exp()
            })
            .sum::<f64>()
            * h;
        let dens1 = (-(a1 - m[1]).powi(2) / (2.0 * s1 * s1)).exp() / (s1 * (2.0 * std::f64::consts::PI).sqrt());
        let want = dens1 * normal_mass(m[0], s0, -1.0, 1.0);
        assert!((mass - want).abs() < 1e-3 * want, "{mass} vs {want}");
    }
}

#[test]
fn expert_action_is_seeded_and_in_range() {
    let env = default_env();
    let e = ExpertPolicy::default();
    let w = traffic_world(&env, 0.3, 15.0, 7.0);
    let a = e.expert_action(&env, &w, &mut rng(3));
    assert_eq!(a, e.expert_action(&env, &w, &mut rng(3)));
    let mut r = rng(4);
    for _ in 0..1000 {
        let x = e.expert_action(&env, &w, &mut r);
        assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn validate_rejects_zero_noise() {
    let e = ExpertPolicy { action_noise_std: [0.0, 0.05], ..Default::default() };
    assert!(e.validate().is_err());
}

#[test]
fn competent_on_the_held_out_seeds() {
    let env = default_env();
    let s = evaluate_expert(&env, &ExpertPolicy::default(), 10_000..10_050).unwrap();
    assert!(s.success_rate >= 0.9, "{}", s.success_rate);
}

#[test]
fn avoids_an_obstacle_flagged_late() {
    // the situation a takeover hands over: traffic close ahead, nearly on
    // the ego's line, at cruising speed
    let env = default_env();
    let e = ExpertPolicy::default();
    for (off, ahead) in [(0.4, 9.0), (-0.6, 8.0), (1.2, 6.5), (0.0, 10.0)] {
        let mut w = traffic_world(&env, off, ahead, 7.0);
        let mut r = rng(5);
        for _ in 0..60 {
            let out = env.step(&w, e.expert_action(&env, &w, &mut r)).unwrap();
            assert!(!out.events.crash && !out.events.off_road, "offset {off} ahead {ahead}");
            w = out.next;
        }
    }
}

#[test]
fn gate_rules_and_monotonicity() {
    let env = default_env();
    let gate = InterventionGate::new(10, GateConfig::default(), 10.0).unwrap();
    let w = straight_world(&env, &[], 7.0);
    let clean = predict(&env, &w, [0.0, 0.0], 10, PredictorMode::Simulator).unwrap();
    assert!(!gate.should_intervene(&clean).unwrap());
    let mut r = rng(6);
    for _ in 0..200 {
        let mut flagged = clean.clone();
        let i = r.random_range(0..=10);
        if r.random_bool(0.5) {
            flagged.flags[i].crash = true;
        } else {
            flagged.flags[i].off_road = true;
        }
        assert!(gate.should_intervene(&flagged).unwrap());
    }
    let stalled = predict(&env, &straight_world(&env, &[], 0.0), [0.0, 0.0], 10, PredictorMode::Simulator).unwrap();
    assert!(gate.should_intervene(&stalled).unwrap());
    let lenient = InterventionGate::new(10, GateConfig { slow_speed_threshold: 0.0, ..Default::default() }, 10.0).unwrap();
    assert!(!lenient.should_intervene(&stalled).unwrap());
    assert!(InterventionGate::new(0, GateConfig::default(), 10.0).is_err());
    assert!(InterventionGate::new(10, GateConfig { slow_speed_threshold: 11.0, ..Default::default() }, 10.0).is_err());
}

#[test]
fn fixed_gates_ignore_the_rollout() {
    let env = default_env();
    let w = straight_world(&env, &[], 7.0);
    let clean = predict(&env, &w, [0.0, 0.0], 10, PredictorMode::Simulator).unwrap();
    let mut crashed = clean.clone();
    crashed.flags[3].crash = true;
    let always = InterventionGate::new(10, GateConfig { fixed: Some(true), ..Default::default() }, 10.0).unwrap();
    let never = InterventionGate::new(10, GateConfig { fixed: Some(false), ..Default::default() }, 10.0).unwrap();
    for r in [&clean, &crashed] {
        assert!(always.should_intervene(r).unwrap());
        assert!(!never.should_intervene(r).unwrap());
    }
}
