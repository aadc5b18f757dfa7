//! Histogram estimators for the error terms of the preference-horizon
//! analysis: the state-distribution shift between the novice and the
//! preference buffer, the misalignment of bootstrapped action pairs, and the
//! novice's preference-loss gap to the expert.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, WorldState};
use crate::error::{contract, Error, Result};
use crate::expert::ExpertPolicy;
use crate::learning::PreferenceTuple;
use crate::numerics::{clamp_interior, log_sigmoid, PolicyParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub gamma: f64,
    /// Bins over (lateral offset, heading error, speed).
    pub state_bins: [usize; 3],
    pub lateral_range: (f64, f64),
    pub heading_range: (f64, f64),
    /// Bins per action dimension of each pair grid.
    pub action_bins: usize,
    pub n_rollouts: usize,
    /// Fresh `(a_h, a_n)` draws per state bin for the ideal pair histogram.
    pub n_samples: usize,
    /// Stored pairs drawn per state bin; bins holding fewer are excluded.
    pub pair_subsample: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            state_bins: [10, 10, 10],
            lateral_range: (-4.0, 4.0),
            heading_range: (-PI / 2.0, PI / 2.0),
            action_bins: 8,
            n_rollouts: 20,
            n_samples: 1000,
            pair_subsample: 50,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("diagnostics.gamma must lie in (0, 1]".into()));
        }
        if self.state_bins.contains(&0) || self.action_bins == 0 {
            return Err(Error::Config("diagnostics bin counts must be positive".into()));
        }
        if self.n_rollouts == 0 || self.n_samples < 100 || self.pair_subsample == 0 {
            return Err(Error::Config(
                "diagnostics needs n_rollouts >= 1, n_samples >= 100 and pair_subsample >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Normalized weights over a fixed rectilinear grid. Values outside the
/// outer edges fall into the boundary bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    let n = edges.len() - 1;
    // partition_point counts edges <= v
    edges[1..n].partition_point(|e| *e <= v)
}

impl Histogram {
    pub fn new(edges: Vec<Vec<f64>>) -> Result<Self> {
        if edges.is_empty() {
            return Err(contract("histogram needs at least one axis"));
        }
        for e in &edges {
            if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(contract("histogram edges must be strictly increasing"));
            }
        }
        let n = edges.iter().map(|e| e.len() - 1).product();
        Ok(Self {
            edges,
            weights: vec![0.0; n],
        })
    }

    pub fn index(&self, point: &[f64]) -> usize {
        let mut idx = 0;
        for (e, v) in self.edges.iter().zip(point) {
            idx = idx * (e.len() - 1) + bin_of(e, *v);
        }
        idx
    }

    pub fn add(&mut self, point: &[f64], weight: f64) {
        let i = self.index(point);
        self.weights[i] += weight;
    }

    /// Rescales to unit mass. A histogram with no mass is a contract error.
    pub fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) {
            return Err(contract("histogram has no mass"));
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
        Ok(())
    }

    fn tv(&self, other: &Histogram) -> Result<f64> {
        if self.edges != other.edges {
            return Err(contract("histograms have different edges"));
        }
        let l1: f64 = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok((0.5 * l1).clamp(0.0, 1.0))
    }
}

/// Distribution over route-frame states `(lateral, heading error, speed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateHistogram {
    pub hist: Histogram,
    pub gamma: f64,
}

impl StateHistogram {
    pub fn empty(cfg: &DiagnosticsConfig, max_speed: f64) -> Result<Self> {
        let [nl, nh, ns] = cfg.state_bins;
        Ok(Self {
            hist: Histogram::new(vec![
                uniform_edges(cfg.lateral_range.0, cfg.lateral_range.1, nl),
                uniform_edges(cfg.heading_range.0, cfg.heading_range.1, nh),
                uniform_edges(0.0, max_speed, ns),
            ])?,
            gamma: cfg.gamma,
        })
    }

    pub fn add_state(&mut self, world: &WorldState, weight: f64) {
        let (l, h, s) = world.route_frame();
        self.hist.add(&[l, h, s], weight);
    }

    pub fn bin(&self, world: &WorldState) -> usize {
        let (l, h, s) = world.route_frame();
        self.hist.index(&[l, h, s])
    }
}

/// Joint distribution of `(a_h[d], a_n[d])` on one grid per action
/// dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairHistogram {
    pub dims: Vec<Histogram>,
}

impl PairHistogram {
    pub fn empty(bins: usize, action_dim: usize) -> Result<Self> {
        let e = uniform_edges(-1.0, 1.0, bins);
        Ok(Self {
            dims: (0..action_dim)
                .map(|_| Histogram::new(vec![e.clone(), e.clone()]))
                .collect::<Result<_>>()?,
        })
    }

    pub fn add_pair(&mut self, a_h: &Action, a_n: &Action) {
        for (d, h) in self.dims.iter_mut().enumerate() {
            h.add(&[a_h[d], a_n[d]], 1.0);
        }
    }

    pub fn normalize(&mut self) -> Result<()> {
        self.dims.iter_mut().try_for_each(|h| h.normalize())
    }
}

/// Histogram types comparable by total variation.
pub trait Binned {
    fn parts(&self) -> Vec<&Histogram>;
}

impl Binned for Histogram {
    fn parts(&self) -> Vec<&Histogram> {
        vec![self]
    }
}

impl Binned for StateHistogram {
    fn parts(&self) -> Vec<&Histogram> {
        vec![&self.hist]
    }
}

impl Binned for PairHistogram {
    fn parts(&self) -> Vec<&Histogram> {
        self.dims.iter().collect()
    }
}

/// `1/2 * sum |p_i - q_i|`, averaged over the grids of a pair histogram.
pub fn tv_distance<H: Binned>(p: &H, q: &H) -> Result<f64> {
    let (a, b) = (p.parts(), q.parts());
    if a.len() != b.len() || a.is_empty() {
        return Err(contract("histograms have different layouts"));
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(&b) {
        acc += x.tv(y)?;
    }
    Ok(acc / a.len() as f64)
}

/// Discounted state distribution of the novice driving alone: state `s_t`
/// of every rollout gets weight `gamma^t`.
pub fn novice_state_distribution<R: Rng + ?Sized>(
    env: &Env,
    policy: &PolicyParams,
    cfg: &DiagnosticsConfig,
    seeds: &[u64],
    rng: &mut R,
) -> Result<StateHistogram> {
    if seeds.is_empty() {
        return Err(contract("novice state distribution needs at least one rollout"));
    }
    let mut hist = StateHistogram::empty(cfg, env.config().max_speed)?;
    for &seed in seeds {
        let (mut world, mut obs) = env.reset(seed)?;
        let mut w = 1.0;
        loop {
            hist.add_state(&world, w);
            let a = policy.sample_action(&obs, rng)?;
            let out = env.step(&world, [a[0], a[1]])?;
            if out.events.is_terminal() {
                break;
            }
            world = out.next;
            obs = out.obs;
            w *= cfg.gamma;
        }
    }
    hist.hist.normalize()?;
    Ok(hist)
}

/// Unweighted empirical distribution of the buffer's states.
pub fn preference_state_distribution(
    cfg: &DiagnosticsConfig,
    max_speed: f64,
    tuples: &[&PreferenceTuple],
) -> Result<Option<StateHistogram>> {
    if tuples.is_empty() {
        return Ok(None);
    }
    let mut hist = StateHistogram::empty(cfg, max_speed)?;
    for t in tuples {
        hist.add_state(&t.state, 1.0);
    }
    hist.hist.normalize()?;
    Ok(Some(hist))
}

/// TV between the novice's discounted state distribution and the buffer's
/// state distribution; `None` for an empty buffer.
pub fn estimate_delta_dist<R: Rng + ?Sized>(
    env: &Env,
    policy: &PolicyParams,
    cfg: &DiagnosticsConfig,
    seeds: &[u64],
    tuples: &[&PreferenceTuple],
    rng: &mut R,
) -> Result<Option<f64>> {
    let Some(pref) = preference_state_distribution(cfg, env.config().max_speed, tuples)? else {
        return Ok(None);
    };
    let novice = novice_state_distribution(env, policy, cfg, seeds, rng)?;
    Ok(Some(tv_distance(&novice, &pref)?))
}

fn cpo_value(gaps: impl Iterator<Item = f64>, beta: f64) -> f64 {
    let mut n = 0usize;
    let mut acc = 0.0;
    for g in gaps {
        acc -= log_sigmoid(beta * g);
        n += 1;
    }
    acc / n as f64
}

/// Novice log-prob gaps `log pi(a+|s) - log pi(a-|s)` per tuple.
pub fn novice_gaps(policy: &PolicyParams, tuples: &[&PreferenceTuple]) -> Result<Vec<f64>> {
    tuples
        .iter()
        .map(|t| {
            let out = policy.forward(&t.obs)?;
            let lp = crate::numerics::squashed_gaussian_log_prob(
                &out.mean,
                &policy.log_std,
                &clamp_interior(&t.action_pos),
            )?;
            let ln = crate::numerics::squashed_gaussian_log_prob(
                &out.mean,
                &policy.log_std,
                &clamp_interior(&t.action_neg),
            )?;
            Ok(lp - ln)
        })
        .collect()
}

/// Expert log-density gaps per tuple, evaluated at each tuple's own state.
pub fn expert_gaps(env: &Env, expert: &ExpertPolicy, tuples: &[&PreferenceTuple]) -> Result<Vec<f64>> {
    tuples
        .iter()
        .map(|t| {
            let m = expert.controller_mean(env, &t.state);
            let p: Vec<f64> = clamp_interior(&t.action_pos);
            let n: Vec<f64> = clamp_interior(&t.action_neg);
            Ok(expert.log_density_around(&m, &[p[0], p[1]]) - expert.log_density_around(&m, &[n[0], n[1]]))
        })
        .collect()
}

/// Preference loss of the novice minus that of the expert on the buffer.
pub fn estimate_epsilon(
    env: &Env,
    policy: &PolicyParams,
    expert: &ExpertPolicy,
    tuples: &[&PreferenceTuple],
    beta: f64,
) -> Result<Option<f64>> {
    if tuples.is_empty() {
        return Ok(None);
    }
    let ln = cpo_value(novice_gaps(policy, tuples)?.into_iter(), beta);
    let lh = cpo_value(expert_gaps(env, expert, tuples)?.into_iter(), beta);
    Ok(Some(ln - lh))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaPrefEstimate {
    pub value: Option<f64>,
    pub bins_used: usize,
    pub bins_excluded: usize,
    pub tuples_excluded: usize,
}

/// Buffer tuples grouped by state bin, in bin order.
fn group_by_state_bin<'a>(
    cfg: &DiagnosticsConfig,
    max_speed: f64,
    tuples: &[&'a PreferenceTuple],
) -> Result<BTreeMap<usize, Vec<&'a PreferenceTuple>>> {
    let grid = StateHistogram::empty(cfg, max_speed)?;
    let mut groups: BTreeMap<usize, Vec<&PreferenceTuple>> = BTreeMap::new();
    for t in tuples {
        groups.entry(grid.bin(&t.state)).or_default().push(t);
    }
    Ok(groups)
}

/// State-weighted mean TV between the stored `(a+, a-)` pairs of each state
/// bin and fresh draws `a_h ~ expert(s), a_n ~ novice(s)` at the same states.
/// Each bin contributes a fixed-size subsample of its stored pairs so that
/// the finite-sample bias does not depend on the buffer size.
pub fn estimate_delta_pref<R: Rng + ?Sized>(
    env: &Env,
    expert: &ExpertPolicy,
    policy: &PolicyParams,
    cfg: &DiagnosticsConfig,
    tuples: &[&PreferenceTuple],
    rng: &mut R,
) -> Result<DeltaPrefEstimate> {
    let groups = group_by_state_bin(cfg, env.config().max_speed, tuples)?;
    let mut est = DeltaPrefEstimate {
        value: None,
        bins_used: 0,
        bins_excluded: 0,
        tuples_excluded: 0,
    };
    let (mut acc, mut mass) = (0.0, 0.0);
    for members in groups.values() {
        if members.len() < cfg.pair_subsample {
            est.bins_excluded += 1;
            est.tuples_excluded += members.len();
            continue;
        }
        let picked: Vec<&PreferenceTuple> = sample(rng, members.len(), cfg.pair_subsample)
            .into_iter()
            .map(|i| members[i])
            .collect();
        let mut stored = PairHistogram::empty(cfg.action_bins, 2)?;
        for t in &picked {
            stored.add_pair(&t.action_pos, &t.action_neg);
        }
        let mut ideal = PairHistogram::empty(cfg.action_bins, 2)?;
        for j in 0..cfg.n_samples {
            let t = picked[j % picked.len()];
            let a_h = expert.expert_action(env, &t.state, rng);
            let a_n = policy.sample_action(&t.obs, rng)?;
            ideal.add_pair(&a_h, &[a_n[0], a_n[1]]);
        }
        stored.normalize()?;
        ideal.normalize()?;
        let w = members.len() as f64;
        acc += w * tv_distance(&ideal, &stored)?;
        mass += w;
        est.bins_used += 1;
    }
    if mass > 0.0 {
        est.value = Some(acc / mass);
    }
    Ok(est)
}

/// The three measured terms for one policy and buffer snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub delta_dist: Option<f64>,
    pub delta_pref: Option<f64>,
    pub epsilon: Option<f64>,
    pub pref_bins_used: usize,
    pub pref_bins_excluded: usize,
    pub tuples: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn diagnose<R: Rng + ?Sized>(
    env: &Env,
    expert: &ExpertPolicy,
    policy: &PolicyParams,
    cfg: &DiagnosticsConfig,
    beta: f64,
    rollout_seeds: &[u64],
    tuples: &[&PreferenceTuple],
    rng: &mut R,
) -> Result<DiagnosticsReport> {
    let delta_dist = estimate_delta_dist(env, policy, cfg, rollout_seeds, tuples, rng)?;
    let pref = estimate_delta_pref(env, expert, policy, cfg, tuples, rng)?;
    let epsilon = estimate_epsilon(env, policy, expert, tuples, beta)?;
    Ok(DiagnosticsReport {
        delta_dist,
        delta_pref: pref.value,
        epsilon,
        pref_bins_used: pref.bins_used,
        pref_bins_excluded: pref.bins_excluded,
        tuples: tuples.len(),
    })
}
