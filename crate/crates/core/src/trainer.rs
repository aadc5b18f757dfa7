//! The intervention training loop.
//!
//! Every `H` steps the novice proposes an action, its constant-action
//! rollout is predicted, and the gate (or a human, in service mode) decides
//! whether the expert drives the next window. Expert steps feed the human
//! buffer and, for the preference method, bootstrap `L + 1` preference
//! tuples along the novice action's predicted rollout. One policy update
//! follows every environment step.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Method, ReferenceConfig, RunConfig, SeedRange, TrainMode};
use crate::diagnostics::estimate_epsilon;
use crate::env::{
    check_action, episode_metrics, Action, Env, EpisodeMetrics, Events, Observation, TraceRecord,
    WorldRecord, WorldState,
};
use crate::error::{Error, Result};
use crate::expert::{ExpertPolicy, InterventionGate};
use crate::learning::{
    build_preference_tuples, update, BatchSizes, Buffers, HumanSample, LossReport, ObjectiveConfig,
    ObjectiveKind, ObjectiveSpec, PreferenceRecord, PreferenceTuple,
};
use crate::numerics::{AdamConfig, AdamState, Architecture, PolicyParams};
use crate::predictor::{PredictedRollout, Predictor};

/// Action used in a human takeover before any human action has arrived.
pub const DEFAULT_HUMAN_ACTION: Action = [0.0, -1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Novice,
    Expert,
}

/// Commands a human supervisor sends in service mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum HumanCommand {
    TakeoverStart,
    TakeoverEnd,
    HumanAction(Action),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub executed_by: Actor,
    pub action_executed: Action,
    pub action_novice: Action,
    pub intervention_active: bool,
    pub decision_point: bool,
    pub losses: Option<LossReport>,
    pub events: Events,
    pub reward: f64,
    pub episode: u64,
}

/// One line of the metrics log. Evaluation fields carry the latest
/// evaluation and are null before the first one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRow {
    pub step: u64,
    pub success_rate: Option<f64>,
    pub route_completion: Option<f64>,
    pub episodic_return: Option<f64>,
    pub intervention_rate: f64,
    pub human_data_usage: u64,
    pub loss_pref: Option<f64>,
    pub loss_bc: Option<f64>,
    pub preference_tuples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_route_completion: f64,
    pub episodes: Vec<EpisodeMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutClass {
    SafeNovice,
    FlaggedNovice,
    ExpertCorrection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionView {
    pub rollout: PredictedRollout,
    pub class: RolloutClass,
}

/// A contiguous run of expert-executed steps `[start_step, end_step)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TakeoverWindow {
    pub start_step: u64,
    pub end_step: Option<u64>,
    /// Human mode only: released before `H` steps elapsed.
    pub early_release: bool,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub record: TrainRecord,
    pub row: MetricsRow,
    /// Novice rollout at a decision point.
    pub prediction: Option<PredictionView>,
    /// Rollout of the executed correction at a decision point inside a takeover.
    pub correction: Option<PredictionView>,
    pub episode_end: Option<EpisodeMetrics>,
    pub eval: Option<EvalSummary>,
    pub rejected: Vec<String>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the predictor noise at a given step, independent of every
/// other random stream so that display-only predictions never shift them.
fn noise_seed(seed: u64, step: u64, salt: u64) -> u64 {
    splitmix(seed ^ splitmix(step.wrapping_mul(4).wrapping_add(salt)))
}

fn to_action(v: Vec<f64>) -> Action {
    [v[0], v[1]]
}

/// Rolls one episode per seed with a deterministic controller.
pub fn evaluate_with<F>(env: &Env, seeds: impl IntoIterator<Item = u64>, mut act: F) -> Result<EvalSummary>
where
    F: FnMut(&WorldState, &Observation) -> Result<Action>,
{
    let mut episodes = Vec::new();
    for seed in seeds {
        let (mut world, mut obs) = env.reset(seed)?;
        let mut trace = Vec::new();
        loop {
            let a = act(&world, &obs)?;
            let out = env.step(&world, a)?;
            trace.push(TraceRecord::from_outcome(&out, a));
            world = out.next;
            obs = out.obs;
            if out.events.is_terminal() {
                break;
            }
        }
        episodes.push(episode_metrics(&trace)?);
    }
    if episodes.is_empty() {
        return Err(Error::Contract("evaluation needs at least one seed".into()));
    }
    let n = episodes.len() as f64;
    Ok(EvalSummary {
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        mean_return: episodes.iter().map(|e| e.episodic_return).sum::<f64>() / n,
        mean_route_completion: episodes.iter().map(|e| e.route_completion).sum::<f64>() / n,
        episodes,
    })
}

/// Deterministic evaluation of a policy: squashed mean actions, no expert.
pub fn evaluate(env: &Env, policy: &PolicyParams, seeds: impl IntoIterator<Item = u64>) -> Result<EvalSummary> {
    evaluate_with(env, seeds, |_, obs| Ok(to_action(policy.mean_action(obs)?)))
}

/// The expert's noise-free controller on the same protocol.
pub fn evaluate_expert(env: &Env, expert: &ExpertPolicy, seeds: impl IntoIterator<Item = u64>) -> Result<EvalSummary> {
    evaluate_with(env, seeds, |w, _| Ok(expert.controller_mean(env, w)))
}

/// BC on expert-driven transitions collected over the training seeds.
#[allow(clippy::too_many_arguments)]
pub fn train_reference_policy(
    env: &Env,
    expert: &ExpertPolicy,
    architecture: Architecture,
    init_log_std: f64,
    cfg: &ReferenceConfig,
    adam: &AdamConfig,
    train_seeds: SeedRange,
    seed: u64,
) -> Result<PolicyParams> {
    let mut rng = stream_rng(seed, 7);
    let mut buffers = Buffers::new(cfg.expert_steps.max(1), 1)?;
    let mut seeds = train_seeds.seeds().cycle();
    while buffers.human().len() < cfg.expert_steps {
        let (mut world, mut obs) = env.reset(seeds.next().unwrap())?;
        loop {
            let a = expert.expert_action(env, &world, &mut rng);
            buffers.push_human(HumanSample { obs, action_h: a });
            let out = env.step(&world, a)?;
            if out.events.is_terminal() || buffers.human().len() >= cfg.expert_steps {
                break;
            }
            world = out.next;
            obs = out.obs;
        }
    }
    let mut params = PolicyParams::init(architecture, &mut rng)?;
    params.log_std.iter_mut().for_each(|v| *v = init_log_std);
    let mut state = AdamState::new(&params, *adam);
    let spec = ObjectiveSpec::new(
        ObjectiveConfig {
            kind: ObjectiveKind::BcOnly,
            ..Default::default()
        },
        None,
    )?;
    let sizes = BatchSizes {
        preference: 0,
        human: cfg.batch,
    };
    for _ in 0..cfg.updates {
        update(&mut params, &mut state, &spec, &buffers, sizes, &mut rng)?;
    }
    Ok(params)
}

/// Serializable trainer state for resuming a run bit-exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSnapshot {
    pub config: RunConfig,
    pub step: u64,
    pub policy: PolicyParams,
    pub adam: AdamState,
    pub reference: Option<PolicyParams>,
    pub human: Vec<HumanSample>,
    pub preference: Vec<PreferenceRecord>,
    pub human_steps: u64,
    pub total_steps: u64,
    pub tuples_built: u64,
    pub act_rng: ChaCha8Rng,
    pub batch_rng: ChaCha8Rng,
    pub scenario_rng: ChaCha8Rng,
    pub world: WorldRecord,
    pub episode: u64,
    pub episode_trace: Vec<TraceRecord>,
    pub active: bool,
    pub held_action: Option<Action>,
    pub windows: Vec<TakeoverWindow>,
    pub latest_eval: Option<EvalSummary>,
    pub metrics: Vec<MetricsRow>,
    pub epsilon_trace: Vec<(u64, f64)>,
    pub training_episodes: Vec<EpisodeMetrics>,
}

pub struct Trainer {
    config: RunConfig,
    env: Env,
    predictor: Predictor,
    expert: ExpertPolicy,
    gate: InterventionGate,
    spec: ObjectiveSpec,
    policy: PolicyParams,
    adam: AdamState,
    buffers: Buffers,
    act_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    scenario_rng: ChaCha8Rng,
    world: WorldState,
    obs: Observation,
    step: u64,
    episode: u64,
    episode_trace: Vec<TraceRecord>,
    active: bool,
    held_action: Option<Action>,
    windows: Vec<TakeoverWindow>,
    latest_eval: Option<EvalSummary>,
    metrics: Vec<MetricsRow>,
    records: Vec<TrainRecord>,
    epsilon_trace: Vec<(u64, f64)>,
    training_episodes: Vec<EpisodeMetrics>,
}

/// Final state of a finished run.
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub metrics: Vec<MetricsRow>,
    pub records: Vec<TrainRecord>,
    pub buffers: Buffers,
    pub epsilon_trace: Vec<(u64, f64)>,
    pub windows: Vec<TakeoverWindow>,
    pub training_episodes: Vec<EpisodeMetrics>,
    pub latest_eval: Option<EvalSummary>,
    pub env: Env,
    pub expert: ExpertPolicy,
}

fn next_train_seed(rng: &mut ChaCha8Rng, range: SeedRange) -> u64 {
    range.start + rng.random_range(0..range.count)
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = Env::new(config.env.clone(), config.scenario.clone())?;
        let predictor = Predictor::new(config.predictor.clone())?;
        let expert = config.expert.clone();
        let t = &config.trainer;
        let gate = InterventionGate::new(t.horizon, config.gate.clone(), config.env.max_speed)?;
        let arch = config.policy.architecture(env.observation_dim(), 2);
        let mut init_rng = stream_rng(t.seed, 0);
        let mut policy = PolicyParams::init(arch.clone(), &mut init_rng)?;
        policy.log_std.iter_mut().for_each(|v| *v = config.policy.init_log_std);
        let spec = Self::objective(&config, &env, &expert, arch)?;
        let adam = AdamState::new(&policy, config.adam);
        let buffers = Buffers::new(config.learning.human_capacity, config.learning.preference_capacity)?;
        let mut scenario_rng = stream_rng(t.seed, 3);
        let (world, obs) = env.reset(next_train_seed(&mut scenario_rng, t.train_seeds))?;
        Ok(Self {
            act_rng: stream_rng(t.seed, 1),
            batch_rng: stream_rng(t.seed, 2),
            scenario_rng,
            config,
            env,
            predictor,
            expert,
            gate,
            spec,
            policy,
            adam,
            buffers,
            world,
            obs,
            step: 0,
            episode: 0,
            episode_trace: Vec::new(),
            active: false,
            held_action: None,
            windows: Vec::new(),
            latest_eval: None,
            metrics: Vec::new(),
            records: Vec::new(),
            epsilon_trace: Vec::new(),
            training_episodes: Vec::new(),
        })
    }

    fn objective(config: &RunConfig, env: &Env, expert: &ExpertPolicy, arch: Architecture) -> Result<ObjectiveSpec> {
        let mut obj = config.learning.objective.clone();
        if config.trainer.method == Method::BcInterventions {
            obj.kind = ObjectiveKind::BcOnly;
        }
        let reference = if obj.kind.needs_reference() {
            Some(Arc::new(train_reference_policy(
                env,
                expert,
                arch,
                config.policy.init_log_std,
                &config.learning.reference,
                &config.adam,
                config.trainer.train_seeds,
                config.trainer.seed,
            )?))
        } else {
            None
        };
        ObjectiveSpec::new(obj, reference)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn buffers(&self) -> &Buffers {
        &self.buffers
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Index of the episode currently being driven.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.trainer.total_steps
    }

    pub fn intervention_active(&self) -> bool {
        self.active
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn latest_eval(&self) -> Option<&EvalSummary> {
        self.latest_eval.as_ref()
    }

    pub fn windows(&self) -> &[TakeoverWindow] {
        &self.windows
    }

    pub fn objective_spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    fn open_window(&mut self) {
        self.windows.push(TakeoverWindow {
            start_step: self.step,
            end_step: None,
            early_release: false,
        });
    }

    fn close_window(&mut self) {
        let h = self.config.trainer.horizon as u64;
        let human = self.config.trainer.mode == TrainMode::HumanViaService;
        let step = self.step;
        if let Some(w) = self.windows.last_mut().filter(|w| w.end_step.is_none()) {
            w.end_step = Some(step);
            w.early_release = human && step - w.start_step < h;
            if w.early_release {
                log::info!("takeover released after {} of {h} steps", step - w.start_step);
            }
        }
    }

    fn apply_commands(&mut self, commands: &[HumanCommand], rejected: &mut Vec<String>) {
        for c in commands {
            match *c {
                HumanCommand::TakeoverStart if self.active => {
                    rejected.push("takeover_start while a takeover is active".into())
                }
                HumanCommand::TakeoverStart => {
                    self.active = true;
                    self.open_window();
                }
                HumanCommand::TakeoverEnd if !self.active => {
                    rejected.push("takeover_end without an active takeover".into())
                }
                HumanCommand::TakeoverEnd => {
                    self.close_window();
                    self.active = false;
                }
                HumanCommand::HumanAction(_) if !self.active => {
                    rejected.push("human_action outside an active takeover".into())
                }
                HumanCommand::HumanAction(a) => match check_action(&a) {
                    Ok(()) => self.held_action = Some(a),
                    Err(e) => rejected.push(format!("human_action rejected: {e}")),
                },
            }
        }
    }

    /// Advances one environment step. `commands` are the human commands
    /// drained for this step (ignored in proxy mode).
    pub fn step(&mut self, commands: &[HumanCommand]) -> Result<StepReport> {
        if self.is_done() {
            return Err(Error::Contract("training run already finished".into()));
        }
        let tc = self.config.trainer.clone();
        let t = self.step;
        let human_mode = tc.mode == TrainMode::HumanViaService;
        let mut rejected = Vec::new();
        if human_mode {
            self.apply_commands(commands, &mut rejected);
        } else if !commands.is_empty() {
            rejected.push("commands are ignored in proxy_expert mode".into());
        }

        let decision = t.is_multiple_of(tc.horizon as u64);
        let a_n = to_action(self.policy.sample_action(&self.obs, &mut self.act_rng)?);
        let mut prediction = None;
        if decision {
            let rollout = self.predictor.rollout(&self.env, &self.world, a_n, tc.horizon, noise_seed(tc.seed, t, 0))?;
            if !human_mode {
                let takeover = self.gate.should_intervene(&rollout)?;
                if takeover && !self.active {
                    self.open_window();
                } else if !takeover && self.active {
                    self.close_window();
                }
                self.active = takeover;
            }
            let class = if rollout.has_safety_violation() {
                RolloutClass::FlaggedNovice
            } else {
                RolloutClass::SafeNovice
            };
            prediction = Some(PredictionView { rollout, class });
        }

        let mut correction = None;
        let (executed, actor) = if self.active {
            let a_h = if human_mode {
                self.held_action.unwrap_or(DEFAULT_HUMAN_ACTION)
            } else {
                self.expert.expert_action(&self.env, &self.world, &mut self.act_rng)
            };
            self.buffers.push_human(HumanSample {
                obs: self.obs.clone(),
                action_h: a_h,
            });
            if tc.method == Method::Preference && self.spec.kind().uses_preferences() {
                let tuples = build_preference_tuples(
                    &self.env,
                    &self.predictor,
                    &self.world,
                    a_h,
                    a_n,
                    tc.preference_horizon,
                    t,
                    noise_seed(tc.seed, t, 1),
                )?;
                for tuple in tuples {
                    self.buffers.push_preference(tuple);
                }
            }
            if decision {
                let rollout = self.predictor.rollout(&self.env, &self.world, a_h, tc.horizon, noise_seed(tc.seed, t, 2))?;
                correction = Some(PredictionView {
                    rollout,
                    class: RolloutClass::ExpertCorrection,
                });
            }
            (a_h, Actor::Expert)
        } else {
            (a_n, Actor::Novice)
        };

        let out = self.env.step(&self.world, executed)?;
        self.buffers.record_step();
        let mut losses = None;
        let sizes = self.config.learning.batch;
        for _ in 0..self.config.learning.updates_per_step {
            if let Some(r) = update(
                &mut self.policy,
                &mut self.adam,
                &self.spec,
                &self.buffers,
                sizes,
                &mut self.batch_rng,
            )? {
                losses = Some(r);
            }
        }

        let record = TrainRecord {
            step: t,
            executed_by: actor,
            action_executed: executed,
            action_novice: a_n,
            intervention_active: self.active,
            decision_point: decision,
            losses,
            events: out.events,
            reward: out.reward,
            episode: self.episode,
        };
        self.episode_trace.push(TraceRecord::from_outcome(&out, executed));
        let mut episode_end = None;
        if out.events.is_terminal() {
            let m = episode_metrics(&self.episode_trace)?;
            self.episode_trace.clear();
            self.training_episodes.push(m.clone());
            episode_end = Some(m);
            self.episode += 1;
            let (w, o) = self.env.reset(next_train_seed(&mut self.scenario_rng, tc.train_seeds))?;
            self.world = w;
            self.obs = o;
        } else {
            self.world = out.next;
            self.obs = out.obs;
        }
        self.step += 1;

        let mut eval = None;
        if self.step.is_multiple_of(tc.eval_every) || self.step == tc.total_steps {
            let summary = evaluate(&self.env, &self.policy, tc.eval_seeds().seeds())?;
            if tc.track_epsilon {
                let tuples: Vec<&PreferenceTuple> = self.buffers.preference().iter().collect();
                if let Some(e) = estimate_epsilon(
                    &self.env,
                    &self.policy,
                    &self.expert,
                    &tuples,
                    self.spec.config.beta,
                )? {
                    self.epsilon_trace.push((self.step, e));
                }
            }
            self.latest_eval = Some(summary.clone());
            eval = Some(summary);
        }
        let le = self.latest_eval.as_ref();
        let row = MetricsRow {
            step: self.step,
            success_rate: le.map(|e| e.success_rate),
            route_completion: le.map(|e| e.mean_route_completion),
            episodic_return: le.map(|e| e.mean_return),
            intervention_rate: self.buffers.intervention_rate(),
            human_data_usage: self.buffers.human_steps,
            loss_pref: losses.and_then(|l| l.pref),
            loss_bc: losses.and_then(|l| l.bc),
            preference_tuples: self.buffers.tuples_built,
        };
        self.metrics.push(row.clone());
        self.records.push(record.clone());
        Ok(StepReport {
            record,
            row,
            prediction,
            correction,
            episode_end,
            eval,
            rejected,
        })
    }

    /// Runs a proxy-mode trainer to completion.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step(&[])?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            policy: self.policy,
            metrics: self.metrics,
            records: self.records,
            buffers: self.buffers,
            epsilon_trace: self.epsilon_trace,
            windows: self.windows,
            training_episodes: self.training_episodes,
            latest_eval: self.latest_eval,
            env: self.env,
            expert: self.expert,
        }
    }

    pub fn snapshot(&self) -> TrainerSnapshot {
        TrainerSnapshot {
            config: self.config.clone(),
            step: self.step,
            policy: self.policy.clone(),
            adam: self.adam.clone(),
            reference: self.spec.reference.as_deref().cloned(),
            human: self.buffers.human().iter().cloned().collect(),
            preference: self.buffers.preference().iter().map(|t| t.record()).collect(),
            human_steps: self.buffers.human_steps,
            total_steps: self.buffers.total_steps,
            tuples_built: self.buffers.tuples_built,
            act_rng: self.act_rng.clone(),
            batch_rng: self.batch_rng.clone(),
            scenario_rng: self.scenario_rng.clone(),
            world: self.world.record(),
            episode: self.episode,
            episode_trace: self.episode_trace.clone(),
            active: self.active,
            held_action: self.held_action,
            windows: self.windows.clone(),
            latest_eval: self.latest_eval.clone(),
            metrics: self.metrics.clone(),
            epsilon_trace: self.epsilon_trace.clone(),
            training_episodes: self.training_episodes.clone(),
        }
    }

    /// Rebuilds a trainer from a snapshot; the run continues exactly as if
    /// it had never stopped (per-step records before the snapshot are not kept).
    pub fn resume(snapshot: TrainerSnapshot) -> Result<Self> {
        let s = snapshot;
        s.config.validate()?;
        s.policy.validate()?;
        let env = Env::new(s.config.env.clone(), s.config.scenario.clone())?;
        let predictor = Predictor::new(s.config.predictor.clone())?;
        let expert = s.config.expert.clone();
        let gate = InterventionGate::new(s.config.trainer.horizon, s.config.gate.clone(), s.config.env.max_speed)?;
        let mut obj = s.config.learning.objective.clone();
        if s.config.trainer.method == Method::BcInterventions {
            obj.kind = ObjectiveKind::BcOnly;
        }
        let spec = ObjectiveSpec::new(obj, s.reference.map(Arc::new))?;
        let mut buffers = Buffers::new(s.config.learning.human_capacity, s.config.learning.preference_capacity)?;
        for h in s.human {
            buffers.push_human(h);
        }
        let states = env.restore_all(&s.preference.iter().map(|p| p.state.clone()).collect::<Vec<_>>())?;
        for (p, state) in s.preference.into_iter().zip(states) {
            buffers.push_preference(PreferenceTuple {
                obs: p.obs,
                action_pos: p.action_pos,
                action_neg: p.action_neg,
                origin_tick: p.origin_tick,
                depth: p.depth,
                state,
            });
        }
        buffers.human_steps = s.human_steps;
        buffers.total_steps = s.total_steps;
        buffers.tuples_built = s.tuples_built;
        let world = env.restore(&s.world)?;
        let obs = env.observe(&world);
        Ok(Self {
            config: s.config,
            env,
            predictor,
            expert,
            gate,
            spec,
            policy: s.policy,
            adam: s.adam,
            buffers,
            act_rng: s.act_rng,
            batch_rng: s.batch_rng,
            scenario_rng: s.scenario_rng,
            world,
            obs,
            step: s.step,
            episode: s.episode,
            episode_trace: s.episode_trace,
            active: s.active,
            held_action: s.held_action,
            windows: s.windows,
            latest_eval: s.latest_eval,
            metrics: s.metrics,
            records: Vec::new(),
            epsilon_trace: s.epsilon_trace,
            training_episodes: s.training_episodes,
        })
    }
}

/// Runs the configured method to completion in proxy-expert mode.
pub fn train(config: RunConfig) -> Result<TrainOutcome> {
    if config.trainer.mode != TrainMode::ProxyExpert {
        return Err(Error::Config(
            "train() drives proxy_expert runs; human mode runs through the service".into(),
        ));
    }
    let mut t = Trainer::new(config)?;
    t.run()?;
    Ok(t.finish())
}

/// The same loop learning only from intervention data by BC.
pub fn run_baseline_bc_interventions(mut config: RunConfig) -> Result<TrainOutcome> {
    config.trainer.method = Method::BcInterventions;
    train(config)
}

/// JSON Lines rendering of a metrics log.
pub fn metrics_jsonl(rows: &[MetricsRow]) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}
