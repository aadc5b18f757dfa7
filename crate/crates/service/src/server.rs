//! HTTP/WebSocket front end. One task owns the session and steps it at the
//! configured pace; each client connection forwards commands to it over a
//! bounded queue and receives the broadcast stream.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use foresight_core::config::RunConfig;
use foresight_core::trainer::{EvalSummary, MetricsRow, TrainOutcome};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::error::{Result, ServiceError};
use crate::protocol::*;
use crate::session::{write_command_log, LoggedCommand, Session};

#[derive(Clone, Debug, Default)]
pub struct ServeOptions {
    /// Command log written (and rewritten) as the session runs.
    pub record: Option<PathBuf>,
    /// Stop the server once the run has no steps left.
    pub exit_when_finished: bool,
}

/// Latest aggregates, served by `/health` and `/metrics`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Status {
    pub session_id: String,
    pub step: u64,
    pub total_steps: u64,
    pub paused: bool,
    pub finished: bool,
    pub clients: usize,
    /// Commands applied so far (the command log length).
    pub commands: usize,
    pub latest: Option<MetricsRow>,
    pub latest_eval: Option<EvalAggregate>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalAggregate {
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_route_completion: f64,
    pub episodes: usize,
}

impl From<&EvalSummary> for EvalAggregate {
    fn from(e: &EvalSummary) -> Self {
        Self {
            success_rate: e.success_rate,
            mean_return: e.mean_return,
            mean_route_completion: e.mean_route_completion,
            episodes: e.episodes.len(),
        }
    }
}

enum Inbound {
    Connect(oneshot::Sender<Vec<SessionMessage>>),
    Disconnect,
    Command(Parsed),
}

#[derive(Clone)]
struct AppState {
    inbound: mpsc::Sender<Inbound>,
    outbound: broadcast::Sender<Arc<str>>,
    status: Arc<Mutex<Status>>,
    session_id: String,
}

/// What a finished session leaves behind.
pub struct SessionResult {
    pub outcome: TrainOutcome,
    pub command_log: Vec<LoggedCommand>,
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    driver: JoinHandle<Result<SessionResult>>,
    http: JoinHandle<()>,
}

impl ServerHandle {
    /// Stops the server and returns the session as it stands.
    pub async fn shutdown(mut self) -> Result<SessionResult> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.join().await
    }

    /// Waits for the session to end on its own (`exit_when_finished`).
    pub async fn join(self) -> Result<SessionResult> {
        let r = self.driver.await.map_err(|e| ServiceError::Task(e.to_string()))?;
        self.http.abort();
        r
    }
}


/// Binds `config.service.bind` (port 0 picks a free port) and starts the
/// session. Returns once the listener is up.
pub async fn start(config: RunConfig, options: ServeOptions) -> Result<ServerHandle> {
    let sc = config.service.clone();
    if sc.command_capacity == 0 || sc.outbound_capacity == 0 {
        return Err(ServiceError::Config("service queue capacities must be positive".into()));
    }
    let session_id = format!("s{:016x}", config.trainer.seed ^ std::process::id() as u64);
    let session = Session::new(config, session_id.clone())?;
    let listener = tokio::net::TcpListener::bind(&sc.bind).await?;
    let addr = listener.local_addr()?;

    let (in_tx, in_rx) = mpsc::channel(sc.command_capacity);
    let (out_tx, _) = broadcast::channel::<Arc<str>>(sc.outbound_capacity);
    let status = Arc::new(Mutex::new(Status {
        session_id: session_id.clone(),
        total_steps: session.trainer().config().trainer.total_steps,
        paused: true,
        ..Default::default()
    }));
    let state = AppState {
        inbound: in_tx,
        outbound: out_tx.clone(),
        status: status.clone(),
        session_id,
    };
    let app = Router::new()
        .route("/session", get(ws_handler))
        .route("/health", get(health))
        .route("/metrics", get(metrics))
        .with_state(state);
    let (stop_tx, stop_rx) = oneshot::channel();
    let period = Duration::from_millis(sc.step_period_ms);
    let driver = tokio::spawn(drive(session, in_rx, out_tx, status, period, options, stop_rx));
    let http = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("http server stopped: {e}");
        }
    });
    log::info!("session server listening on {addr}");
    Ok(ServerHandle {
        addr,
        shutdown: Some(stop_tx),
        driver,
        http,
    })
}

fn publish(out: &broadcast::Sender<Arc<str>>, msgs: &[SessionMessage]) {
    for m in msgs {
        // no receivers is fine: the session is paused anyway
        let _ = out.send(Arc::from(m.to_text()));
    }
}

fn refresh(status: &Mutex<Status>, s: &Session) {
    let mut st = status.lock().unwrap();
    let t = s.trainer();
    st.step = t.step_index();
    st.paused = s.paused();
    st.finished = s.is_finished();
    st.clients = s.clients();
    st.commands = s.command_log().len();
    st.latest = t.metrics().last().cloned();
    st.latest_eval = t.latest_eval().map(EvalAggregate::from);
}

async fn drive(
    mut session: Session,
    mut inbound: mpsc::Receiver<Inbound>,
    out: broadcast::Sender<Arc<str>>,
    status: Arc<Mutex<Status>>,
    period: Duration,
    options: ServeOptions,
    mut stop: oneshot::Receiver<()>,
) -> Result<SessionResult> {
    // the first tick is one period out, so n steps always take n periods
    let tick = period.max(Duration::from_micros(1));
    let mut ticker = tokio::time::interval_at(tokio::time::Instant::now() + tick, tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut logged = 0;
    refresh(&status, &session);
    loop {
        // drain everything that arrived since the last step
        loop {
            match inbound.try_recv() {
                Ok(ev) => apply(&mut session, ev, &out),
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => break,
            }
        }
        if session.running() {
            if !period.is_zero() {
                // keep taking commands while waiting out the period
                let mut stopped = false;
                loop {
                    tokio::select! {
                        _ = ticker.tick() => break,
                        Some(ev) = inbound.recv() => apply(&mut session, ev, &out),
                        _ = &mut stop => { stopped = true; break }
                    }
                }
                if stopped {
                    break;
                }
                if !session.running() {
                    continue;
                }
            } else if stop.try_recv().is_ok() {
                break;
            }
            let msgs = session.step()?;
            publish(&out, &msgs);
            if session.command_log().len() > logged {
                logged = session.command_log().len();
                if let Some(p) = &options.record {
                    write_command_log(p, session.command_log())?;
                }
            }
            refresh(&status, &session);
            if period.is_zero() {
                tokio::task::yield_now().await;
            }
        } else {
            let msgs = session.step()?;
            publish(&out, &msgs);
            refresh(&status, &session);
            if session.is_finished() && options.exit_when_finished {
                break;
            }
            tokio::select! {
                ev = inbound.recv() => match ev {
                    Some(ev) => apply(&mut session, ev, &out),
                    None => break,
                },
                _ = &mut stop => break,
            }
            if session.running() {
                ticker.reset();
            }
            refresh(&status, &session);
        }
    }
    if let Some(p) = &options.record {
        write_command_log(p, session.command_log())?;
    }
    let (outcome, command_log) = session.into_outcome();
    Ok(SessionResult { outcome, command_log })
}

fn apply(session: &mut Session, ev: Inbound, out: &broadcast::Sender<Arc<str>>) {
    match ev {
        Inbound::Connect(reply) => {
            let msgs = session.connect();
            // the greeting goes to the new client only; the resume notice to all
            let (greeting, rest): (Vec<_>, Vec<_>) =
                msgs.into_iter().partition(|m| m.kind == MessageKind::EpisodeEvent);
            let _ = reply.send(greeting);
            publish(out, &rest);
        }
        Inbound::Disconnect => publish(out, &session.disconnect()),
        Inbound::Command(c) => publish(out, &session.handle(c)),
    }
}

async fn health(State(s): State<AppState>) -> impl IntoResponse {
    let st = s.status.lock().unwrap().clone();
    Json(json!({
        "status": "ok",
        "session_id": st.session_id,
        "step": st.step,
        "paused": st.paused,
        "finished": st.finished,
        "clients": st.clients,
        "commands": st.commands,
        "protocol_version": PROTOCOL_VERSION,
    }))
}

async fn metrics(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.status.lock().unwrap().clone())
}

async fn ws_handler(ws: WebSocketUpgrade, State(s): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, s))
}

async fn client(socket: WebSocket, s: AppState) {
    let (mut sink, mut stream) = socket.split();
    let mut feed = s.outbound.subscribe();
    let (reply_tx, reply_rx) = oneshot::channel();
    if s.inbound.send(Inbound::Connect(reply_tx)).await.is_err() {
        return;
    }
    let greeting = reply_rx.await.unwrap_or_default();
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel::<String>();
    let writer = tokio::spawn(async move {
        for m in greeting {
            if sink.send(Message::Text(m.to_text().into())).await.is_err() {
                return;
            }
        }
        loop {
            let text: String = tokio::select! {
                d = direct_rx.recv() => match d {
                    Some(t) => t,
                    None => return,
                },
                b = feed.recv() => match b {
                    Ok(t) => t.to_string(),
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        log::warn!("slow client: dropped {n} oldest messages");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => return,
                },
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            Message::Binary(_) => {
                let _ = direct_tx.send(error_text(&s.session_id, &s.status, "binary frames are not supported"));
                continue;
            }
            _ => continue,
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match ClientCommand::parse(line) {
                Ok((_, parsed)) => {
                    // awaiting here applies backpressure instead of dropping commands
                    if s.inbound.send(Inbound::Command(parsed)).await.is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = direct_tx.send(error_text(&s.session_id, &s.status, &e.to_string()));
                }
            }
        }
    }
    let _ = s.inbound.send(Inbound::Disconnect).await;
    drop(direct_tx);
    writer.abort();
}

fn error_text(session_id: &str, status: &Mutex<Status>, message: &str) -> String {
    SessionMessage {
        kind: MessageKind::Error,
        payload: error_payload(message),
        tick: status.lock().unwrap().step,
        session_id: session_id.to_string(),
    }
    .to_text()
}
