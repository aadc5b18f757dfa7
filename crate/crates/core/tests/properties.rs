mod common;

use common::*;
use foresight_core::diagnostics::{tv_distance, Histogram};
use foresight_core::env::*;
use foresight_core::expert::{GateConfig, InterventionGate};
use foresight_core::learning::*;
use foresight_core::numerics::{AdamConfig, AdamState, GradientBundle};
use foresight_core::predictor::{predict, Predictor, PredictorConfig, PredictorMode};
use proptest::prelude::*;

const KINDS: [ObjectiveKind; 9] = [
    ObjectiveKind::Cpo,
    ObjectiveKind::Dpo,
    ObjectiveKind::Ipo,
    ObjectiveKind::Slic,
    ObjectiveKind::CpoOnly,
    ObjectiveKind::BcOnly,
    ObjectiveKind::ImitationOnPos,
    ObjectiveKind::RandomPos,
    ObjectiveKind::RandomNeg,
];

fn action() -> impl Strategy<Value = Action> {
    (-1.0..=1.0f64, -1.0..=1.0f64).prop_map(|(a, b)| [a, b])
}

fn histogram(n: usize) -> impl Strategy<Value = Histogram> {
    prop::collection::vec(0.0..1.0f64, n).prop_filter_map("no mass", move |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-6).then(|| {
            let mut h = Histogram::new(vec![(0..=n).map(|i| i as f64).collect()]).unwrap();
            h.weights = w.iter().map(|x| x / total).collect();
            h
        })
    })
}

fn tuple(i: u64) -> PreferenceTuple {
    let env = default_env();
    let w = straight_world(&env, &[], 1.0);
    PreferenceTuple { obs: Observation(vec![i as f64]), action_pos: [0.0, 0.0], action_neg: [0.1, 0.1], origin_tick: i, depth: 0, state: w }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn gradients_match_finite_differences(kind in 0..KINDS.len(), seed in any::<u64>()) {
        let err = gradient_instance(KINDS[kind], seed);
        prop_assert!(err <= 1e-4, "{:?}: {}", KINDS[kind], err);
    }

    #[test]
    fn fifo_keeps_the_newest(cap in 1usize..40, extra in 0usize..60) {
        let mut b = Buffers::new(cap, cap).unwrap();
        let n = cap + extra;
        for i in 0..n {
            b.push_preference(tuple(i as u64));
            b.push_human(HumanSample { obs: Observation(vec![i as f64]), action_h: [0.0, 0.0] });
        }
        let kept: Vec<u64> = b.preference().iter().map(|t| t.origin_tick).collect();
        prop_assert_eq!(kept, ((n - cap) as u64..n as u64).collect::<Vec<_>>());
        let human: Vec<f64> = b.human().iter().map(|s| s.obs[0]).collect();
        prop_assert_eq!(human, ((n - cap)..n).map(|i| i as f64).collect::<Vec<_>>());
        prop_assert_eq!(b.tuples_built, n as u64);
        prop_assert_eq!(b.human_steps, n as u64);
    }

    #[test]
    fn tv_is_a_metric(p in histogram(6), q in histogram(6), r in histogram(6)) {
        let pq = tv_distance(&p, &q).unwrap();
        let qp = tv_distance(&q, &p).unwrap();
        prop_assert!((pq - qp).abs() < 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
        prop_assert!(pq <= tv_distance(&p, &r).unwrap() + tv_distance(&r, &q).unwrap() + 1e-12);
        prop_assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn rollouts_stay_physical(seed in 0u64..5000, actions in prop::collection::vec(action(), 1..200)) {
        let env = default_env();
        let vmax = env.config().max_speed;
        let (mut w, obs) = env.reset(seed).unwrap();
        prop_assert!(obs.iter().all(|x| (-1.0..=1.0).contains(x)));
        for a in actions {
            let out = env.step(&w, a).unwrap();
            prop_assert!(out.obs.iter().all(|x| (-1.0..=1.0).contains(x)), "{:?}", out.obs);
            prop_assert!((0.0..=vmax).contains(&out.next.ego.speed));
            prop_assert!(out.next.ego.heading.abs() <= std::f64::consts::PI);
            prop_assert!(!(out.events.crash && out.events.goal_reached));
            if out.events.is_terminal() {
                break;
            }
            w = out.next;
        }
    }

    #[test]
    fn gate_is_pure_and_monotone(seed in any::<u64>(), a in action(), idx in 0usize..=10, off_road in any::<bool>(), slow in 0.0..10.0f64) {
        let env = default_env();
        let (w, _) = env.reset(seed % 1000).unwrap();
        let rollout = predict(&env, &w, a, 10, PredictorMode::Simulator).unwrap();
        let gate = InterventionGate::new(10, GateConfig { slow_speed_threshold: slow, ..Default::default() }, 10.0).unwrap();
        let before = gate.should_intervene(&rollout).unwrap();
        prop_assert_eq!(before, gate.should_intervene(&rollout.clone()).unwrap());
        let mut flagged = rollout;
        if off_road {
            flagged.flags[idx].off_road = true;
        } else {
            flagged.flags[idx].crash = true;
        }
        prop_assert!(gate.should_intervene(&flagged).unwrap());
    }

    #[test]
    fn each_intervention_yields_l_plus_one_tuples(seed in 0u64..1000, l in 0usize..12, a_h in action(), a_n in action(), eps in prop::sample::select(vec![0.0, 0.25])) {
        prop_assume!(a_h != a_n);
        let env = default_env();
        let (w, _) = env.reset(seed).unwrap();
        let predictor = Predictor::new(PredictorConfig { noise_eps: eps, ..Default::default() }).unwrap();
        let tuples = build_preference_tuples(&env, &predictor, &w, a_h, a_n, l, 7, seed).unwrap();
        prop_assert_eq!(tuples.len(), l + 1);
        for (d, t) in tuples.iter().enumerate() {
            prop_assert_eq!(t.depth, d);
            prop_assert_eq!(t.action_pos, a_h);
            prop_assert_eq!(t.action_neg, a_n);
            prop_assert_eq!(t.origin_tick, 7);
        }
        prop_assert_eq!(&tuples[0].obs, &env.observe(&w));
    }

    #[test]
    fn adam_keeps_log_std_in_its_clamp(seed in any::<u64>(), scale in 0.1..1e4f64, lr in 1e-4..10.0f64) {
        let mut r = rng(seed);
        let mut p = random_policy(4, &mut r);
        let mut s = AdamState::new(&p, AdamConfig { lr, ..Default::default() });
        for _ in 0..10 {
            let mut g = GradientBundle::zeros_like(&p);
            g.values_mut().for_each(|v| *v = scale * rand::Rng::random_range(&mut r, -1.0..1.0));
            s.apply(&mut p, &g).unwrap();
            let a = &p.architecture;
            prop_assert!(p.log_std.iter().all(|v| (a.log_std_min..=a.log_std_max).contains(v)));
        }
    }
}

/// The observation range fuzz at full size: 10^5 steps of random actions.
#[test]
fn observation_range_over_many_random_steps() {
    let env = default_env();
    let mut r = rng(99);
    let mut steps = 0;
    let mut seed = 0;
    while steps < 100_000 {
        let (mut w, _) = env.reset(seed).unwrap();
        seed += 1;
        loop {
            let a = [rand::Rng::random_range(&mut r, -1.0..=1.0), rand::Rng::random_range(&mut r, -1.0..=1.0)];
            let out = env.step(&w, a).unwrap();
            steps += 1;
            assert!(out.obs.iter().all(|x| (-1.0..=1.0).contains(x)));
            if out.events.is_terminal() {
                break;
            }
            w = out.next;
        }
    }
}
