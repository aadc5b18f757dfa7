//! Replay buffers, preference-tuple construction and the training objectives.
//!
//! Every objective is built on the reverse-mode tape, so each kind gets exact
//! gradients through the same code path that reports its value.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{check_action, Action, Env, Observation, WorldRecord, WorldState};
use crate::error::{contract, Error, Result};
use crate::numerics::{clamp_interior, AdamState, GradientBundle, NodeId, PolicyParams, Tape};
use crate::predictor::Predictor;

/// One expert-executed transition: the element of the human buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanSample {
    pub obs: Observation,
    pub action_h: Action,
}

/// `(state, a+, a-)`: the expert prefers `a+` over `a-` at this state. Both
/// actions were sampled at the intervened state `depth` steps earlier.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceTuple {
    pub obs: Observation,
    pub action_pos: Action,
    pub action_neg: Action,
    pub origin_tick: u64,
    pub depth: usize,
    /// World the observation was taken from (real at depth 0, predicted
    /// otherwise); kept for diagnostics.
    pub state: WorldState,
}

/// Serializable form of a [`PreferenceTuple`] for buffer snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceRecord {
    pub obs: Observation,
    pub action_pos: Action,
    pub action_neg: Action,
    pub origin_tick: u64,
    pub depth: usize,
    pub state: WorldRecord,
}

impl PreferenceTuple {
    pub fn record(&self) -> PreferenceRecord {
        PreferenceRecord {
            obs: self.obs.clone(),
            action_pos: self.action_pos,
            action_neg: self.action_neg,
            origin_tick: self.origin_tick,
            depth: self.depth,
            state: self.state.record(),
        }
    }
}

/// Bounded FIFO buffers plus the run-level counters.
#[derive(Clone, Debug)]
pub struct Buffers {
    human: VecDeque<HumanSample>,
    preference: VecDeque<PreferenceTuple>,
    human_capacity: usize,
    preference_capacity: usize,
    /// Expert-executed steps recorded so far (never decreases on eviction).
    pub human_steps: u64,
    pub total_steps: u64,
    pub tuples_built: u64,
}

impl Buffers {
    pub fn new(human_capacity: usize, preference_capacity: usize) -> Result<Self> {
        if human_capacity == 0 || preference_capacity == 0 {
            return Err(Error::Config("buffer capacities must be at least 1".into()));
        }
        Ok(Self {
            human: VecDeque::with_capacity(human_capacity.min(1 << 16)),
            preference: VecDeque::with_capacity(preference_capacity.min(1 << 16)),
            human_capacity,
            preference_capacity,
            human_steps: 0,
            total_steps: 0,
            tuples_built: 0,
        })
    }

    pub fn push_human(&mut self, sample: HumanSample) {
        if self.human.len() == self.human_capacity {
            self.human.pop_front();
        }
        self.human.push_back(sample);
        self.human_steps += 1;
    }

    pub fn push_preference(&mut self, tuple: PreferenceTuple) {
        if self.preference.len() == self.preference_capacity {
            self.preference.pop_front();
        }
        self.preference.push_back(tuple);
        self.tuples_built += 1;
    }

    pub fn record_step(&mut self) {
        self.total_steps += 1;
    }

    pub fn human(&self) -> &VecDeque<HumanSample> {
        &self.human
    }

    pub fn preference(&self) -> &VecDeque<PreferenceTuple> {
        &self.preference
    }

    /// `human_steps / total_steps`, 0 before the first step.
    pub fn intervention_rate(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.human_steps as f64 / self.total_steps as f64
        }
    }
}

/// Bootstraps one intervention into `L + 1` tuples: the real state and the
/// first `L` states of the novice action's predicted rollout.
#[allow(clippy::too_many_arguments)]
pub fn build_preference_tuples(
    env: &Env,
    predictor: &Predictor,
    world: &WorldState,
    a_h: Action,
    a_n: Action,
    horizon: usize,
    origin_tick: u64,
    noise_seed: u64,
) -> Result<Vec<PreferenceTuple>> {
    check_action(&a_h)?;
    check_action(&a_n)?;
    if a_h == a_n {
        log::warn!("skipping preference tuples at tick {origin_tick}: expert and novice actions coincide");
        return Ok(Vec::new());
    }
    let rollout = predictor.rollout(env, world, a_n, horizon, noise_seed)?;
    Ok(rollout
        .states
        .into_iter()
        .enumerate()
        .map(|(depth, state)| PreferenceTuple {
            obs: if depth == 0 {
                env.observe(world)
            } else {
                env.observe(&state)
            },
            action_pos: a_h,
            action_neg: a_n,
            origin_tick,
            depth,
            state,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Cpo,
    Dpo,
    Ipo,
    Slic,
    ImitationOnPos,
    RandomPos,
    RandomNeg,
    BcOnly,
    CpoOnly,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 9] = [
        ObjectiveKind::Cpo,
        ObjectiveKind::Dpo,
        ObjectiveKind::Ipo,
        ObjectiveKind::Slic,
        ObjectiveKind::ImitationOnPos,
        ObjectiveKind::RandomPos,
        ObjectiveKind::RandomNeg,
        ObjectiveKind::BcOnly,
        ObjectiveKind::CpoOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Cpo => "cpo",
            ObjectiveKind::Dpo => "dpo",
            ObjectiveKind::Ipo => "ipo",
            ObjectiveKind::Slic => "slic",
            ObjectiveKind::ImitationOnPos => "imitation_on_pos",
            ObjectiveKind::RandomPos => "random_pos",
            ObjectiveKind::RandomNeg => "random_neg",
            ObjectiveKind::BcOnly => "bc_only",
            ObjectiveKind::CpoOnly => "cpo_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn uses_preferences(self) -> bool {
        self != ObjectiveKind::BcOnly
    }

    pub fn uses_bc(self) -> bool {
        self != ObjectiveKind::CpoOnly
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, ObjectiveKind::Dpo | ObjectiveKind::Ipo)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub beta: f64,
    pub margin: f64,
    /// Weight of the BC term next to the preference term.
    pub bc_weight: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Cpo,
            beta: 0.1,
            margin: 1.0,
            bc_weight: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("objective.beta must be > 0, got {}", self.beta)));
        }
        if !self.margin.is_finite() || !(self.bc_weight.is_finite() && self.bc_weight >= 0.0) {
            return Err(Error::Config(
                "objective.margin must be finite and objective.bc_weight >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// An objective ready to evaluate: its config plus the frozen reference
/// policy required by the DPO and IPO variants.
#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    pub config: ObjectiveConfig,
    pub reference: Option<Arc<PolicyParams>>,
}

impl ObjectiveSpec {
    pub fn new(config: ObjectiveConfig, reference: Option<Arc<PolicyParams>>) -> Result<Self> {
        config.validate()?;
        if config.kind.needs_reference() && reference.is_none() {
            return Err(Error::Config(format!(
                "objective kind {} requires a reference policy",
                config.kind.name()
            )));
        }
        Ok(Self { config, reference })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.config.kind
    }
}

/// Row-major preference minibatch. `ref_gap` holds the reference policy's
/// log-prob gap per row (zero when no reference is attached).
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceBatch {
    pub rows: usize,
    pub obs: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub ref_gap: Vec<f64>,
}

/// Row-major `(obs, action)` minibatch for likelihood terms.
#[derive(Clone, Debug, PartialEq)]
pub struct ImitationBatch {
    pub rows: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
}

fn uniform_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
}

impl PreferenceBatch {
    /// Assembles a batch, applying the random-action substitution of the
    /// `random_pos`/`random_neg` kinds and clamping actions to the interior.
    pub fn from_tuples<R: Rng + ?Sized>(
        tuples: &[&PreferenceTuple],
        kind: ObjectiveKind,
        reference: Option<&PolicyParams>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut obs = Vec::new();
        let mut pos = Vec::with_capacity(2 * tuples.len());
        let mut neg = Vec::with_capacity(2 * tuples.len());
        for t in tuples {
            obs.extend_from_slice(&t.obs);
            let p = if kind == ObjectiveKind::RandomPos {
                uniform_action(rng)
            } else {
                t.action_pos
            };
            let n = if kind == ObjectiveKind::RandomNeg {
                uniform_action(rng)
            } else {
                t.action_neg
            };
            pos.extend(clamp_interior(&p));
            neg.extend(clamp_interior(&n));
        }
        Self::from_parts(tuples.len(), obs, pos, neg, reference)
    }

    pub fn from_parts(
        rows: usize,
        obs: Vec<f64>,
        pos: Vec<f64>,
        neg: Vec<f64>,
        reference: Option<&PolicyParams>,
    ) -> Result<Self> {
        if pos.len() != 2 * rows || neg.len() != 2 * rows || (rows > 0 && !obs.len().is_multiple_of(rows)) {
            return Err(contract("preference batch shape mismatch"));
        }
        let ref_gap = match reference {
            Some(r) => log_prob_gaps(r, rows, &obs, &pos, &neg)?,
            None => vec![0.0; rows],
        };
        Ok(Self {
            rows,
            obs,
            pos,
            neg,
            ref_gap,
        })
    }
}

impl ImitationBatch {
    pub fn from_human(samples: &[&HumanSample]) -> Self {
        let mut obs = Vec::new();
        let mut actions = Vec::with_capacity(2 * samples.len());
        for s in samples {
            obs.extend_from_slice(&s.obs);
            actions.extend(clamp_interior(&s.action_h));
        }
        Self {
            rows: samples.len(),
            obs,
            actions,
        }
    }

    /// `(obs, a+)` pairs of a preference batch.
    pub fn from_preferences(batch: &PreferenceBatch) -> Self {
        Self {
            rows: batch.rows,
            obs: batch.obs.clone(),
            actions: batch.pos.clone(),
        }
    }
}

/// Per-row `log pi(a+|s) - log pi(a-|s)` without gradients.
pub fn log_prob_gaps(
    params: &PolicyParams,
    rows: usize,
    obs: &[f64],
    pos: &[f64],
    neg: &[f64],
) -> Result<Vec<f64>> {
    if rows == 0 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new(params);
    let m = tape.policy_mean(obs, rows)?;
    let lp = tape.gaussian_log_prob(m, pos)?;
    let ln = tape.gaussian_log_prob(m, neg)?;
    let gap = tape.sub(lp, ln)?;
    Ok(tape.value(gap).to_vec())
}

/// Loss values before the update step. A term that was not evaluated (no
/// data, or unused by the kind) is `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pref: Option<f64>,
    pub bc: Option<f64>,
    pub total: f64,
}

fn gap_node(tape: &mut Tape, batch: &PreferenceBatch) -> Result<NodeId> {
    let m = tape.policy_mean(&batch.obs, batch.rows)?;
    let lp = tape.gaussian_log_prob(m, &batch.pos)?;
    let ln = tape.gaussian_log_prob(m, &batch.neg)?;
    tape.sub(lp, ln)
}

fn nll_node(tape: &mut Tape, batch: &ImitationBatch) -> Result<NodeId> {
    if batch.rows == 0 {
        return Err(contract("likelihood term on an empty batch"));
    }
    let m = tape.policy_mean(&batch.obs, batch.rows)?;
    let lp = tape.gaussian_log_prob(m, &batch.actions)?;
    let mean = tape.mean(lp)?;
    tape.scale(mean, -1.0)
}

/// The preference term of `kind` on the tape.
fn pref_node(tape: &mut Tape, config: &ObjectiveConfig, batch: &PreferenceBatch) -> Result<NodeId> {
    if batch.rows == 0 {
        return Err(contract("preference term on an empty batch"));
    }
    let beta = config.beta;
    match config.kind {
        ObjectiveKind::Cpo
        | ObjectiveKind::CpoOnly
        | ObjectiveKind::RandomPos
        | ObjectiveKind::RandomNeg => {
            let gap = gap_node(tape, batch)?;
            let arg = tape.scale(gap, beta)?;
            let ls = tape.log_sigmoid(arg)?;
            let m = tape.mean(ls)?;
            tape.scale(m, -1.0)
        }
        ObjectiveKind::Dpo => {
            let gap = gap_node(tape, batch)?;
            let shifted = tape.offset(gap, batch.ref_gap.iter().map(|r| -r).collect())?;
            let arg = tape.scale(shifted, beta)?;
            let ls = tape.log_sigmoid(arg)?;
            let m = tape.mean(ls)?;
            tape.scale(m, -1.0)
        }
        ObjectiveKind::Ipo => {
            let gap = gap_node(tape, batch)?;
            let target = 1.0 / (2.0 * beta);
            let d = tape.offset(gap, batch.ref_gap.iter().map(|r| -r - target).collect())?;
            let sq = tape.square(d)?;
            tape.mean(sq)
        }
        ObjectiveKind::Slic => {
            let gap = gap_node(tape, batch)?;
            let neg = tape.scale(gap, -beta)?;
            let h = tape.offset(neg, vec![config.margin; batch.rows])?;
            let r = tape.relu(h)?;
            tape.mean(r)
        }
        ObjectiveKind::ImitationOnPos => nll_node(tape, &ImitationBatch::from_preferences(batch)),
        ObjectiveKind::BcOnly => Err(contract("bc_only has no preference term")),
    }
}

/// Value (and optionally gradient) of the combined objective. Terms with
/// empty or absent batches count as zero; `None` when no term applies.
pub fn total_loss(
    spec: &ObjectiveSpec,
    params: &PolicyParams,
    pref: Option<&PreferenceBatch>,
    bc: Option<&ImitationBatch>,
    want_grad: bool,
) -> Result<Option<(LossReport, Option<GradientBundle>)>> {
    let kind = spec.kind();
    let pref = pref.filter(|b| kind.uses_preferences() && b.rows > 0);
    let bc = bc.filter(|b| kind.uses_bc() && b.rows > 0);
    if pref.is_none() && bc.is_none() {
        return Ok(None);
    }
    let mut tape = Tape::new(params);
    let mut report = LossReport::default();
    let pref_node = match pref {
        Some(b) => {
            let n = pref_node(&mut tape, &spec.config, b)?;
            report.pref = Some(tape.scalar(n)?);
            Some(n)
        }
        None => None,
    };
    let bc_weight = if kind == ObjectiveKind::BcOnly {
        1.0
    } else {
        spec.config.bc_weight
    };
    let bc_node = match bc {
        Some(b) => {
            let n = nll_node(&mut tape, b)?;
            report.bc = Some(tape.scalar(n)?);
            Some(tape.scale(n, bc_weight)?)
        }
        None => None,
    };
    let root = match (pref_node, bc_node) {
        (Some(a), Some(b)) => tape.add(a, b)?,
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!(),
    };
    report.total = tape.scalar(root)?;
    let grads = if want_grad {
        Some(tape.backward(root)?)
    } else {
        None
    };
    Ok(Some((report, grads)))
}

pub fn cpo_loss(params: &PolicyParams, batch: &PreferenceBatch, beta: f64) -> Result<f64> {
    let config = ObjectiveConfig {
        kind: ObjectiveKind::Cpo,
        beta,
        ..Default::default()
    };
    config.validate()?;
    let mut tape = Tape::new(params);
    let n = pref_node(&mut tape, &config, batch)?;
    tape.scalar(n)
}

pub fn bc_loss(params: &PolicyParams, batch: &ImitationBatch) -> Result<f64> {
    let mut tape = Tape::new(params);
    let n = nll_node(&mut tape, batch)?;
    tape.scalar(n)
}

/// The preference term alone for any kind that has one.
pub fn variant_loss(spec: &ObjectiveSpec, params: &PolicyParams, batch: &PreferenceBatch) -> Result<f64> {
    if spec.config.kind.needs_reference() && spec.reference.is_none() {
        return Err(Error::Config("dpo/ipo need a reference policy".into()));
    }
    let mut tape = Tape::new(params);
    let n = pref_node(&mut tape, &spec.config, batch)?;
    tape.scalar(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSizes {
    pub preference: usize,
    pub human: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        Self {
            preference: 256,
            human: 256,
        }
    }
}

/// Samples minibatches (uniformly, with replacement) for the terms the
/// objective uses and takes one Adam step. Returns `None`, leaving the
/// policy untouched, when no used term has data.
pub fn update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    spec: &ObjectiveSpec,
    buffers: &Buffers,
    sizes: BatchSizes,
    rng: &mut R,
) -> Result<Option<LossReport>> {
    let kind = spec.kind();
    let pref = if kind.uses_preferences() && !buffers.preference.is_empty() && sizes.preference > 0 {
        let d = &buffers.preference;
        let picked: Vec<&PreferenceTuple> = (0..sizes.preference)
            .map(|_| &d[rng.random_range(0..d.len())])
            .collect();
        Some(PreferenceBatch::from_tuples(
            &picked,
            kind,
            spec.reference.as_deref(),
            rng,
        )?)
    } else {
        None
    };
    let bc = if kind.uses_bc() && !buffers.human.is_empty() && sizes.human > 0 {
        let d = &buffers.human;
        let picked: Vec<&HumanSample> = (0..sizes.human)
            .map(|_| &d[rng.random_range(0..d.len())])
            .collect();
        Some(ImitationBatch::from_human(&picked))
    } else {
        None
    };
    match total_loss(spec, params, pref.as_ref(), bc.as_ref(), true)? {
        None => {
            log::debug!("update skipped: no data for objective {}", kind.name());
            Ok(None)
        }
        Some((report, grads)) => {
            adam.apply(params, &grads.expect("gradient requested"))?;
            Ok(Some(report))
        }
    }
}
