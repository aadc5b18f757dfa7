//! Helpers shared by the integration tests: small random policies and
//! batches, closed-form loss oracles and a finite-difference checker.
#![allow(dead_code)]

use std::sync::Arc;

use foresight_core::env::{Env, EnvConfig, Route, ScenarioSource, TrafficScript, WorldState};
use foresight_core::learning::{
    total_loss, ImitationBatch, ObjectiveConfig, ObjectiveKind, ObjectiveSpec, PreferenceBatch,
};
use foresight_core::numerics::{Architecture, PolicyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_arch(input_dim: usize) -> Architecture {
    Architecture {
        input_dim,
        hidden_dims: vec![8, 6],
        action_dim: 2,
        log_std_min: -5.0,
        log_std_max: 2.0,
    }
}

/// Random weights at full scale (the production init shrinks the output
/// layer, which would make gradients trivially small).
pub fn random_policy(input_dim: usize, r: &mut ChaCha8Rng) -> PolicyParams {
    let mut p = PolicyParams::zeros(small_arch(input_dim)).unwrap();
    for v in p.values_mut() {
        *v = r.random_range(-0.8..0.8);
    }
    for v in p.log_std.iter_mut() {
        *v = r.random_range(-1.0..0.5);
    }
    p
}

pub fn uniform(r: &mut ChaCha8Rng, n: usize, lim: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-lim..lim)).collect()
}

pub fn random_pref_batch(
    r: &mut ChaCha8Rng,
    rows: usize,
    input_dim: usize,
    reference: Option<&PolicyParams>,
) -> PreferenceBatch {
    let obs = uniform(r, rows * input_dim, 1.0);
    let pos = uniform(r, rows * 2, 0.95);
    let neg = uniform(r, rows * 2, 0.95);
    PreferenceBatch::from_parts(rows, obs, pos, neg, reference).unwrap()
}

pub fn random_bc_batch(r: &mut ChaCha8Rng, rows: usize, input_dim: usize) -> ImitationBatch {
    ImitationBatch {
        rows,
        obs: uniform(r, rows * input_dim, 1.0),
        actions: uniform(r, rows * 2, 0.95),
    }
}

pub fn spec(kind: ObjectiveKind, beta: f64, margin: f64, reference: Option<PolicyParams>) -> ObjectiveSpec {
    ObjectiveSpec::new(
        ObjectiveConfig {
            kind,
            beta,
            margin,
            bc_weight: 1.0,
        },
        reference.map(Arc::new),
    )
    .unwrap()
}

/// Per-row log-probability through the scalar forward path (not the tape).
pub fn row_log_probs(p: &PolicyParams, obs: &[f64], actions: &[f64], rows: usize) -> Vec<f64> {
    let d = obs.len() / rows.max(1);
    (0..rows)
        .map(|i| p.log_prob(&obs[i * d..(i + 1) * d], &actions[2 * i..2 * i + 2]).unwrap())
        .collect()
}

pub fn gaps(p: &PolicyParams, b: &PreferenceBatch) -> Vec<f64> {
    let lp = row_log_probs(p, &b.obs, &b.pos, b.rows);
    let ln = row_log_probs(p, &b.obs, &b.neg, b.rows);
    lp.iter().zip(&ln).map(|(a, b)| a - b).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Closed-form preference term, written directly from the objective
/// definitions: `-log sigmoid(x) = softplus(-x)`.
pub fn oracle_pref(kind: ObjectiveKind, beta: f64, margin: f64, p: &PolicyParams, reference: Option<&PolicyParams>, b: &PreferenceBatch) -> f64 {
    let g = gaps(p, b);
    let r = reference.map(|q| gaps(q, b)).unwrap_or_else(|| vec![0.0; b.rows]);
    match kind {
        ObjectiveKind::Cpo | ObjectiveKind::CpoOnly | ObjectiveKind::RandomPos | ObjectiveKind::RandomNeg => {
            mean(g.iter().map(|d| softplus(-beta * d)))
        }
        ObjectiveKind::Dpo => mean(g.iter().zip(&r).map(|(d, q)| softplus(-beta * (d - q)))),
        ObjectiveKind::Ipo => mean(g.iter().zip(&r).map(|(d, q)| (d - q - 1.0 / (2.0 * beta)).powi(2))),
        ObjectiveKind::Slic => mean(g.iter().map(|d| (margin - beta * d).max(0.0))),
        ObjectiveKind::ImitationOnPos => -mean(row_log_probs(p, &b.obs, &b.pos, b.rows).into_iter()),
        ObjectiveKind::BcOnly => unreachable!("no preference term"),
    }
}

pub fn oracle_bc(p: &PolicyParams, b: &ImitationBatch) -> f64 {
    -mean(row_log_probs(p, &b.obs, &b.actions, b.rows).into_iter())
}

/// Largest per-coordinate relative error between the tape gradient and
/// central differences of the reported loss value.
pub fn max_fd_rel_error(
    spec: &ObjectiveSpec,
    params: &PolicyParams,
    pref: Option<&PreferenceBatch>,
    bc: Option<&ImitationBatch>,
) -> f64 {
    let (_, grad) = total_loss(spec, params, pref, bc, true).unwrap().unwrap();
    let grad: Vec<f64> = grad.unwrap().values().copied().collect();
    let value = |p: &PolicyParams| total_loss(spec, p, pref, bc, false).unwrap().unwrap().0.total;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let n = params.values().count();
    for i in 0..n {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *plus.values_mut().nth(i).unwrap() += h;
        *minus.values_mut().nth(i).unwrap() -= h;
        let fd = (value(&plus) - value(&minus)) / (2.0 * h);
        let a = grad[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// One random gradient-check instance for `kind`. Returns the worst
/// coordinate error. Hinge instances are redrawn away from the kink so
/// central differences stay valid.
pub fn gradient_instance(kind: ObjectiveKind, seed: u64) -> f64 {
    let mut r = rng(seed);
    let input_dim = 5;
    loop {
        let params = random_policy(input_dim, &mut r);
        let reference = kind.needs_reference().then(|| random_policy(input_dim, &mut r));
        let beta = r.random_range(0.05..2.0);
        let margin = r.random_range(-0.5..1.5);
        let s = spec(kind, beta, margin, reference.clone());
        let rows = r.random_range(1..6);
        let pref = random_pref_batch(&mut r, rows, input_dim, reference.as_ref());
        if kind == ObjectiveKind::Slic && gaps(&params, &pref).iter().any(|d| (margin - beta * d).abs() < 1e-3) {
            continue;
        }
        let bc_rows = r.random_range(1..6);
        let bc = random_bc_batch(&mut r, bc_rows, input_dim);
        return max_fd_rel_error(&s, &params, Some(&pref), Some(&bc));
    }
}

pub fn default_env() -> Env {
    Env::new(EnvConfig::default(), ScenarioSource::default()).unwrap()
}

pub fn straight_route(len: f64) -> Arc<Route> {
    let n = (len / 2.0) as usize;
    Arc::new(
        Route::from_polyline(
            &(0..=n).map(|i| [2.0 * i as f64, 0.0]).collect::<Vec<_>>(),
            10.0,
            45.0,
            2.0,
        )
        .unwrap(),
    )
}

pub fn straight_world(env: &Env, traffic: &[TrafficScript], speed: f64) -> WorldState {
    env.place(straight_route(200.0), traffic, speed, 0)
}
