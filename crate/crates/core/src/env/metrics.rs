use serde::{Deserialize, Serialize};

use super::{Action, EgoState, Events, StepOutcome};
use crate::error::{contract, Result};

/// Per-episode evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub episodic_return: f64,
    pub route_completion: f64,
    pub steps: u64,
}

/// One line of the episode trace log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub ego: EgoState,
    pub action: Action,
    pub events: Events,
    pub reward: f64,
    pub route_completion: f64,
}

impl TraceRecord {
    pub fn from_outcome(outcome: &StepOutcome, action: Action) -> Self {
        Self {
            tick: outcome.next.tick,
            ego: outcome.next.ego,
            action,
            events: outcome.events,
            reward: outcome.reward,
            route_completion: outcome.next.route_completion(),
        }
    }
}

/// Summarizes a finished (or timed out) trace.
pub fn episode_metrics(trace: &[TraceRecord]) -> Result<EpisodeMetrics> {
    let last = trace
        .last()
        .ok_or_else(|| contract("episode_metrics on an empty trace"))?;
    Ok(EpisodeMetrics {
        success: trace.iter().any(|r| r.events.goal_reached),
        episodic_return: trace.iter().map(|r| r.reward).sum(),
        route_completion: last.route_completion,
        steps: trace.len() as u64,
    })
}
