//! Transport-free session state: one human-mode trainer, its pending
//! commands, and the pause rules. The server drives it; tests can too.

use std::io::{BufRead, Write};
use std::path::Path;

use foresight_core::config::{RunConfig, TrainMode};
use foresight_core::trainer::{HumanCommand, TrainOutcome, Trainer};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::protocol::*;

/// One drained command and the step it was applied at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedCommand {
    pub step: u64,
    pub command: HumanCommand,
}

pub struct Session {
    trainer: Trainer,
    id: String,
    pending: Vec<HumanCommand>,
    user_paused: bool,
    clients: usize,
    log: Vec<LoggedCommand>,
    finished_sent: bool,
}

impl Session {
    pub fn new(mut config: RunConfig, id: impl Into<String>) -> Result<Self> {
        if config.trainer.mode != TrainMode::HumanViaService {
            log::info!("session forces trainer.mode = human_via_service");
            config.trainer.mode = TrainMode::HumanViaService;
        }
        let id = id.into();
        if id.is_empty() {
            return Err(ServiceError::Config("session id must not be empty".into()));
        }
        Ok(Self {
            trainer: Trainer::new(config)?,
            id,
            pending: Vec::new(),
            user_paused: false,
            clients: 0,
            log: Vec::new(),
            finished_sent: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn trainer(&self) -> &Trainer {
        &self.trainer
    }

    pub fn command_log(&self) -> &[LoggedCommand] {
        &self.log
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn is_finished(&self) -> bool {
        self.trainer.is_done()
    }

    /// Steps only with a client attached, not paused, and steps remaining.
    pub fn running(&self) -> bool {
        !self.user_paused && self.clients > 0 && !self.trainer.is_done()
    }

    pub fn paused(&self) -> bool {
        !self.running()
    }

    fn message(&self, kind: MessageKind, payload: serde_json::Value) -> SessionMessage {
        SessionMessage {
            kind,
            payload,
            tick: self.trainer.step_index(),
            session_id: self.id.clone(),
        }
    }

    fn episode_start(&self) -> SessionMessage {
        let lane = self.trainer.env().config().lane_half_width;
        self.message(
            MessageKind::EpisodeEvent,
            episode_start_payload(self.trainer.world(), self.trainer.episode(), lane),
        )
    }

    pub fn connect(&mut self) -> Vec<SessionMessage> {
        self.clients += 1;
        let mut out = vec![self.episode_start()];
        if self.clients == 1 && !self.user_paused && !self.trainer.is_done() {
            out.push(self.message(MessageKind::Paused, paused_payload(false, "client_connected")));
        }
        out
    }

    pub fn disconnect(&mut self) -> Vec<SessionMessage> {
        self.clients = self.clients.saturating_sub(1);
        if self.clients == 0 && !self.trainer.is_done() {
            log::info!("last client left at step {}; pausing", self.trainer.step_index());
            vec![self.message(MessageKind::Paused, paused_payload(true, "no_client"))]
        } else {
            Vec::new()
        }
    }

    /// Session commands act at once; trainer commands wait for the next drain.
    pub fn handle(&mut self, cmd: Parsed) -> Vec<SessionMessage> {
        match cmd {
            Parsed::Trainer(c) => {
                self.pending.push(c);
                Vec::new()
            }
            Parsed::Pause if !self.user_paused => {
                self.user_paused = true;
                vec![self.message(MessageKind::Paused, paused_payload(true, "client_request"))]
            }
            Parsed::Resume if self.user_paused => {
                self.user_paused = false;
                vec![self.message(MessageKind::Paused, paused_payload(false, "client_request"))]
            }
            Parsed::Pause | Parsed::Resume => Vec::new(),
        }
    }

    /// Drains pending commands into one trainer step and renders the
    /// resulting broadcast. Does nothing while paused.
    pub fn step(&mut self) -> Result<Vec<SessionMessage>> {
        if !self.running() {
            return Ok(self.finish_message().into_iter().collect());
        }
        let commands = std::mem::take(&mut self.pending);
        let step = self.trainer.step_index();
        self.log.extend(commands.iter().map(|&command| LoggedCommand { step, command }));
        let report = self.trainer.step(&commands)?;
        let mut out = Vec::new();
        for view in report.prediction.iter().chain(&report.correction) {
            out.push(self.message(MessageKind::Prediction, prediction_payload(view)));
        }
        out.push(self.message(
            MessageKind::StateUpdate,
            state_update_payload(self.trainer.world(), &report.record),
        ));
        for reason in &report.rejected {
            out.push(self.message(MessageKind::Error, error_payload(reason)));
        }
        if report.record.decision_point || report.eval.is_some() {
            out.push(self.message(MessageKind::Metrics, metrics_payload(&report.row)));
        }
        if let Some(m) = &report.episode_end {
            out.push(self.message(MessageKind::EpisodeEvent, episode_end_payload(m, report.record.episode)));
            out.push(self.episode_start());
        }
        out.extend(self.finish_message());
        Ok(out)
    }

    fn finish_message(&mut self) -> Option<SessionMessage> {
        if !self.trainer.is_done() || self.finished_sent {
            return None;
        }
        self.finished_sent = true;
        Some(self.message(
            MessageKind::EpisodeEvent,
            run_finished_payload(self.trainer.metrics().last()),
        ))
    }

    pub fn into_outcome(self) -> (TrainOutcome, Vec<LoggedCommand>) {
        (self.trainer.finish(), self.log)
    }
}

/// Re-runs a human-mode session from its command log alone.
pub fn replay(mut config: RunConfig, log: &[LoggedCommand]) -> Result<TrainOutcome> {
    config.trainer.mode = TrainMode::HumanViaService;
    let mut trainer = Trainer::new(config)?;
    if let Some(w) = log.windows(2).find(|w| w[1].step < w[0].step) {
        return Err(ServiceError::Config(format!(
            "command log goes back in time at step {}",
            w[1].step
        )));
    }
    let mut i = 0;
    while !trainer.is_done() {
        let step = trainer.step_index();
        let start = i;
        while i < log.len() && log[i].step == step {
            i += 1;
        }
        let cmds: Vec<HumanCommand> = log[start..i].iter().map(|c| c.command).collect();
        trainer.step(&cmds)?;
    }
    if i < log.len() {
        log::warn!("{} logged commands lie beyond the run's last step", log.len() - i);
    }
    Ok(trainer.finish())
}

pub fn write_command_log(path: &Path, log: &[LoggedCommand]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in log {
        serde_json::to_writer(&mut f, c)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_command_log(path: &Path) -> Result<Vec<LoggedCommand>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            ServiceError::Config(format!("{}:{}: {e}", path.display(), n + 1))
        })?);
    }
    Ok(out)
}
