mod common;

use std::time::{Duration, Instant};

use common::*;
use foresight_core::config::RunConfig;
use foresight_core::trainer::metrics_jsonl;
use foresight_service::protocol::*;
use foresight_service::{read_command_log, replay, start, ServeOptions};
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio_tungstenite::tungstenite::Message;

fn served(steps: u64, period_ms: u64) -> RunConfig {
    let mut cfg = small(steps);
    cfg.service.bind = "127.0.0.1:0".into();
    cfg.service.step_period_ms = period_ms;
    cfg
}

async fn get_json(addr: std::net::SocketAddr, path: &str) -> Value {
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    let body = buf.split("\r\n\r\n").nth(1).unwrap();
    serde_json::from_str(body).unwrap()
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(addr: std::net::SocketAddr) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap().0
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        match tokio::time::timeout(Duration::from_secs(30), ws.next()).await.unwrap().unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

async fn send(ws: &mut Ws, c: &ClientCommand) {
    ws.send(Message::Text(c.to_text().into())).await.unwrap();
}

async fn wait_for(addr: std::net::SocketAddr, pred: impl Fn(&Value) -> bool) -> Value {
    for _ in 0..3000 {
        let h = get_json(addr, "/health").await;
        if pred(&h) {
            return h;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("condition never held");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn end_to_end_session_over_websocket() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("commands.jsonl");
    let cfg = served(300, 0);
    let opts = ServeOptions { record: Some(record.clone()), exit_when_finished: true };
    let server = start(cfg.clone(), opts).await.unwrap();
    let addr = server.addr;
    let v = server_validator();

    let mut ws = connect(addr).await;
    let first = next_json(&mut ws).await;
    assert_eq!(first["kind"], "episode_event");
    assert_eq!(first["payload"]["event"], "episode_start");

    // a bad frame gets a direct error and the session keeps going
    ws.send(Message::Text("{\"kind\":\"warp\"}".into())).await.unwrap();
    let mut got_error = false;
    let mut seen_ticks = Vec::new();
    let mut sent = 0;
    let mut msgs = vec![first];
    loop {
        let m = next_json(&mut ws).await;
        assert_valid(&v, &m);
        if m["kind"] == "error" {
            got_error = true;
        }
        if m["kind"] == "state_update" {
            let tick = m["tick"].as_u64().unwrap();
            seen_ticks.push(tick);
            if sent == 0 && tick >= 20 {
                send(&mut ws, &ClientCommand::bare(CommandKind::TakeoverStart)).await;
                send(&mut ws, &ClientCommand::human_action([0.1, 0.5])).await;
                sent = 1;
            } else if sent == 1 && tick >= 60 {
                send(&mut ws, &ClientCommand::bare(CommandKind::TakeoverEnd)).await;
                sent = 2;
            }
        }
        let done = m["payload"]["event"] == "run_finished";
        msgs.push(m);
        if done {
            break;
        }
    }
    assert!(got_error);
    assert_eq!(sent, 2);
    // the broadcast is large enough here that nothing was dropped
    assert!(seen_ticks.windows(2).all(|w| w[1] == w[0] + 1));
    assert!(msgs.iter().any(|m| m["kind"] == "prediction"));

    let result = server.join().await.unwrap();
    assert_eq!(result.command_log.len(), 3);
    let log = read_command_log(&record).unwrap();
    assert_eq!(log, result.command_log);
    let again = replay(cfg, &log).unwrap();
    assert_eq!(
        metrics_jsonl(&result.outcome.metrics).unwrap(),
        metrics_jsonl(&again.metrics).unwrap()
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_metrics_endpoints() {
    let server = start(served(100_000, 0), ServeOptions::default()).await.unwrap();
    let addr = server.addr;
    let h = get_json(addr, "/health").await;
    assert_eq!(h["status"], "ok");
    assert_eq!(h["paused"], true);
    assert_eq!(h["step"], 0);
    assert_eq!(h["protocol_version"], PROTOCOL_VERSION);

    let ws = connect(addr).await;
    wait_for(addr, |h| h["step"].as_u64().unwrap() > 150).await;
    let m = get_json(addr, "/metrics").await;
    assert!(m["latest"]["step"].as_u64().is_some());
    assert!(m["latest_eval"]["success_rate"].as_f64().is_some());
    assert_eq!(m["clients"], 1);
    drop(ws);
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn disconnect_pauses_the_run() {
    let server = start(served(100_000, 0), ServeOptions::default()).await.unwrap();
    let addr = server.addr;
    let mut ws = connect(addr).await;
    wait_for(addr, |h| h["step"].as_u64().unwrap() > 20).await;
    ws.close(None).await.unwrap();
    let h = wait_for(addr, |h| h["paused"] == true && h["clients"] == 0).await;
    let step = h["step"].as_u64().unwrap();
    tokio::time::sleep(Duration::from_millis(200)).await;
    assert_eq!(get_json(addr, "/health").await["step"].as_u64().unwrap(), step);

    // a returning client resumes it
    let _ws = connect(addr).await;
    wait_for(addr, |h| h["step"].as_u64().unwrap() > step).await;
    let result = server.shutdown().await.unwrap();
    assert!(result.outcome.metrics.len() as u64 <= 100_000);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_command_stops_the_clock() {
    let server = start(served(100_000, 0), ServeOptions::default()).await.unwrap();
    let addr = server.addr;
    let mut ws = connect(addr).await;
    wait_for(addr, |h| h["step"].as_u64().unwrap() > 10).await;
    send(&mut ws, &ClientCommand::bare(CommandKind::Pause)).await;
    let h = wait_for(addr, |h| h["paused"] == true).await;
    tokio::time::sleep(Duration::from_millis(150)).await;
    assert_eq!(get_json(addr, "/health").await["step"], h["step"]);
    send(&mut ws, &ClientCommand::bare(CommandKind::Resume)).await;
    let s0 = h["step"].as_u64().unwrap();
    wait_for(addr, |h| h["step"].as_u64().unwrap() > s0).await;
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn paced_steps_take_at_least_their_period() {
    let (steps, period) = (15u64, 20u64);
    let opts = ServeOptions { record: None, exit_when_finished: true };
    let server = start(served(steps, period), opts).await.unwrap();
    let t0 = Instant::now();
    let mut ws = connect(server.addr).await;
    loop {
        if next_json(&mut ws).await["payload"]["event"] == "run_finished" {
            break;
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed >= Duration::from_millis(steps * period), "{elapsed:?}");
    let result = server.join().await.unwrap();
    assert_eq!(result.outcome.records.len() as u64, steps);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_command_queue_applies_backpressure_without_loss() {
    let mut cfg = served(100_000, 5);
    cfg.service.command_capacity = 1;
    let server = start(cfg, ServeOptions::default()).await.unwrap();
    let mut ws = connect(server.addr).await;
    send(&mut ws, &ClientCommand::bare(CommandKind::TakeoverStart)).await;
    let n = 200;
    for k in 0..n {
        send(&mut ws, &ClientCommand::human_action([0.0, (k % 10) as f64 / 10.0])).await;
    }
    // every command reaches the session, even though the queue holds one
    wait_for(server.addr, |h| h["commands"].as_u64().unwrap() >= n as u64 + 1).await;
    let result = server.shutdown().await.unwrap();
    assert_eq!(result.command_log.len(), n + 1);
}

#[tokio::test]
async fn zero_capacity_is_a_config_error() {
    let mut cfg = served(10, 0);
    cfg.service.outbound_capacity = 0;
    assert!(start(cfg, ServeOptions::default()).await.is_err());
}
