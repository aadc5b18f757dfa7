//! Wire messages between the session server and the console.
//!
//! Every frame is one JSON object. The published schemas live in
//! `schema/` and are exposed through [`server_message_schema`] and
//! [`client_command_schema`].

use foresight_core::env::{Action, EgoState, EpisodeMetrics, Events, WorldState};
use foresight_core::trainer::{Actor, MetricsRow, PredictionView, RolloutClass, TrainRecord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ProtocolError;

pub const PROTOCOL_VERSION: u32 = 1;

const SERVER_SCHEMA: &str = include_str!("../schema/server_message.json");
const CLIENT_SCHEMA: &str = include_str!("../schema/client_command.json");

pub fn server_message_schema() -> Value {
    serde_json::from_str(SERVER_SCHEMA).expect("bundled schema is valid JSON")
}

pub fn client_command_schema() -> Value {
    serde_json::from_str(CLIENT_SCHEMA).expect("bundled schema is valid JSON")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    StateUpdate,
    Prediction,
    Metrics,
    EpisodeEvent,
    Paused,
    /// Reply to a malformed or rejected command.
    Error,
}

/// Server to client frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMessage {
    pub kind: MessageKind,
    pub payload: Value,
    pub tick: u64,
    pub session_id: String,
}

impl SessionMessage {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("session messages always serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    TakeoverStart,
    TakeoverEnd,
    HumanAction,
    Pause,
    Resume,
}

/// Client to server frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientCommand {
    pub kind: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default)]
    pub client_tick: u64,
}

/// A parsed command: either for the trainer or for the session itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Parsed {
    Trainer(foresight_core::trainer::HumanCommand),
    Pause,
    Resume,
}

impl ClientCommand {
    pub fn parse(text: &str) -> Result<(Self, Parsed), ProtocolError> {
        let cmd: ClientCommand = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let parsed = cmd.interpret()?;
        Ok((cmd, parsed))
    }

    pub fn interpret(&self) -> Result<Parsed, ProtocolError> {
        use foresight_core::trainer::HumanCommand as H;
        let no_payload = |p: Parsed| match &self.payload {
            None | Some(Value::Null) => Ok(p),
            Some(_) => Err(ProtocolError::Malformed(format!("{:?} takes no payload", self.kind))),
        };
        match self.kind {
            CommandKind::TakeoverStart => no_payload(Parsed::Trainer(H::TakeoverStart)),
            CommandKind::TakeoverEnd => no_payload(Parsed::Trainer(H::TakeoverEnd)),
            CommandKind::Pause => no_payload(Parsed::Pause),
            CommandKind::Resume => no_payload(Parsed::Resume),
            CommandKind::HumanAction => {
                let payload = self
                    .payload
                    .as_ref()
                    .ok_or_else(|| ProtocolError::Malformed("human_action needs a payload".into()))?;
                let a: [f64; 2] = serde_json::from_value(payload.clone())
                    .map_err(|_| ProtocolError::Malformed("human_action payload must be two numbers".into()))?;
                if a.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                    return Err(ProtocolError::Malformed(format!("human_action {a:?} outside [-1, 1]")));
                }
                Ok(Parsed::Trainer(H::HumanAction(a)))
            }
        }
    }

    pub fn human_action(a: Action) -> Self {
        Self {
            kind: CommandKind::HumanAction,
            payload: Some(json!(a)),
            client_tick: 0,
        }
    }

    pub fn bare(kind: CommandKind) -> Self {
        Self {
            kind,
            payload: None,
            client_tick: 0,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("commands always serialize")
    }
}

fn pose(e: &EgoState) -> Value {
    json!({"x": e.x, "y": e.y, "heading": e.heading, "speed": e.speed})
}

fn flags(f: &Events) -> Value {
    json!({"crash": f.crash, "off_road": f.off_road, "goal_reached": f.goal_reached})
}

pub fn class_name(c: RolloutClass) -> &'static str {
    match c {
        RolloutClass::SafeNovice => "safe_novice",
        RolloutClass::FlaggedNovice => "flagged_novice",
        RolloutClass::ExpertCorrection => "expert_correction",
    }
}

/// World after a step plus what was executed there.
pub fn state_update_payload(world: &WorldState, record: &TrainRecord) -> Value {
    json!({
        "ego": pose(&world.ego),
        "traffic": world.traffic.iter().map(|t| json!({"x": t.x, "y": t.y, "heading": t.heading, "radius": t.radius})).collect::<Vec<_>>(),
        "route_completion": world.route_completion(),
        "episode": record.episode,
        "step": record.step,
        "executed_by": match record.executed_by { Actor::Novice => "novice", Actor::Expert => "expert" },
        "intervention_active": record.intervention_active,
        "action": record.action_executed,
        "events": flags(&record.events),
    })
}

/// `H + 1` poses, one flag set per pose, and the colour class.
pub fn prediction_payload(view: &PredictionView) -> Value {
    let r = &view.rollout;
    json!({
        "class": class_name(view.class),
        "horizon": r.horizon,
        "noise_eps": r.noise_eps,
        "poses": r.states.iter().zip(&r.flags).map(|(s, f)| {
            let mut p = pose(&s.ego);
            p["flags"] = flags(f);
            p
        }).collect::<Vec<_>>(),
    })
}

pub fn metrics_payload(row: &MetricsRow) -> Value {
    serde_json::to_value(row).expect("metrics rows always serialize")
}

pub fn episode_start_payload(world: &WorldState, episode: u64, lane_half_width: f64) -> Value {
    json!({
        "event": "episode_start",
        "episode": episode,
        "lane_half_width": lane_half_width,
        "route": world.route.points(),
    })
}

pub fn episode_end_payload(m: &EpisodeMetrics, episode: u64) -> Value {
    json!({
        "event": "episode_end",
        "episode": episode,
        "success": m.success,
        "route_completion": m.route_completion,
        "episodic_return": m.episodic_return,
        "steps": m.steps,
    })
}

pub fn run_finished_payload(row: Option<&MetricsRow>) -> Value {
    json!({"event": "run_finished", "metrics": row.map(metrics_payload)})
}

pub fn paused_payload(paused: bool, reason: &str) -> Value {
    json!({"paused": paused, "reason": reason})
}

pub fn error_payload(message: &str) -> Value {
    json!({"message": message})
}
