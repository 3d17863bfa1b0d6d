//! WebSocket simulation service for teleoperation and live viewing.
//!
//! One thread owns the [`Simulation`] and steps it at the scenario tick rate.
//! Connection tasks only move JSON text between sockets and that thread; client
//! messages are queued and applied at the next tick boundary. The first client
//! to connect is the controller; later clients are viewers whose control
//! messages are rejected. See `docs/protocol.md` for the wire format.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc as tmpsc;

use crate::geometry::Point2;
use crate::metrics::{arc_length, TrajectorySource};
use crate::navigator::NavMode;
use crate::runlog::Outcome;
use crate::sim::{Control, RunOptions, Simulation};
use crate::world::scenario::Scenario;
use crate::world::{Polygon, VelocityCommand};

pub const PROTOCOL_VERSION: u32 = 1;

/// A teleop command older than this (sim seconds) is treated as zero.
pub const TELEOP_HOLD_S: f64 = 0.5;

/// Outbound messages buffered per client before state updates are dropped.
const CLIENT_QUEUE: usize = 256;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    /// Recordings go to `record_dir/<name>/run.jsonl`.
    pub record_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Autonomous,
    Teleop,
}

/// Message envelope in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub tick: u64,
    #[serde(default)]
    pub payload: Value,
}

fn default_version() -> u32 {
    PROTOCOL_VERSION
}

impl Envelope {
    pub fn new(kind: &str, tick: u64, payload: Value) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            kind: kind.to_string(),
            tick,
            payload,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

/// Control messages a client may send.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    TeleopCmd(VelocityCommand),
    Mode(SessionMode),
    RecordStart { name: Option<String> },
    RecordStop,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TeleopPayload {
    v: f64,
    omega: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModePayload {
    mode: SessionMode,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RecordPayload {
    #[serde(default)]
    name: Option<String>,
}

pub fn parse_client_message(text: &str) -> Result<ClientMessage, String> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| format!("bad envelope: {e}"))?;
    if env.version != PROTOCOL_VERSION {
        return Err(format!("unsupported protocol version {}", env.version));
    }
    let payload = |v: Value| if v.is_null() { json!({}) } else { v };
    let p = payload(env.payload);
    let bad = |e: serde_json::Error| format!("bad {} payload: {e}", env.kind);
    match env.kind.as_str() {
        "teleop_cmd" => {
            let t: TeleopPayload = serde_json::from_value(p).map_err(bad)?;
            Ok(ClientMessage::TeleopCmd(VelocityCommand::new(t.v, t.omega)))
        }
        "mode" => {
            let m: ModePayload = serde_json::from_value(p).map_err(bad)?;
            Ok(ClientMessage::Mode(m.mode))
        }
        "record_start" => {
            let r: RecordPayload = serde_json::from_value(p).map_err(bad)?;
            Ok(ClientMessage::RecordStart { name: r.name })
        }
        "record_stop" => Ok(ClientMessage::RecordStop),
        other => Err(format!("unknown message type {other:?}")),
    }
}

enum Inbound {
    Connect { id: u64, tx: tmpsc::Sender<String> },
    Disconnect { id: u64 },
    Message { id: u64, msg: ClientMessage },
    Invalid { id: u64, error: String },
}

fn poly(p: &Polygon) -> Value {
    Value::Array(p.vertices.iter().map(|q| json!([q.x, q.y])).collect())
}

fn pts(p: &[Point2]) -> Value {
    Value::Array(p.iter().map(|q| json!([q.x, q.y])).collect())
}

/// Owns the simulation and the per-client outbound queues.
struct Session {
    sim: Simulation,
    mode: SessionMode,
    clients: BTreeMap<u64, tmpsc::Sender<String>>,
    controller: Option<u64>,
    teleop: Option<(VelocityCommand, f64)>,
    record_dir: PathBuf,
    recording: Option<PathBuf>,
    last_recording: Option<PathBuf>,
    recordings: u64,
    trail: Vec<Point2>,
}

impl Session {
    fn new(sim: Simulation, record_dir: PathBuf) -> Self {
        let start = sim.state.pose.position();
        Self {
            sim,
            mode: SessionMode::Teleop,
            clients: BTreeMap::new(),
            controller: None,
            teleop: None,
            record_dir,
            recording: None,
            last_recording: None,
            recordings: 0,
            trail: vec![start],
        }
    }

    fn send(&mut self, id: u64, env: &Envelope) {
        if let Some(tx) = self.clients.get(&id) {
            if tx.try_send(env.to_text()).is_err() {
                log::debug!("client {id} queue full, dropping {}", env.kind);
            }
        }
    }

    fn broadcast(&mut self, env: &Envelope) {
        let text = env.to_text();
        self.clients.retain(|id, tx| match tx.try_send(text.clone()) {
            Ok(()) => true,
            Err(tmpsc::error::TrySendError::Full(_)) => {
                log::debug!("client {id} lagging, state dropped");
                true
            }
            Err(tmpsc::error::TrySendError::Closed(_)) => false,
        });
    }

    fn world_static(&self, id: u64) -> Envelope {
        let s = &self.sim.scenario;
        let w = &self.sim.world;
        let role = if self.controller == Some(id) { "controller" } else { "viewer" };
        Envelope::new(
            "world_static",
            self.sim.tick,
            json!({
                "scenario": s.name,
                "description": s.description,
                "role": role,
                "dt": s.sim.dt,
                "goal": [w.goal.x, w.goal.y],
                "goal_tolerance": s.sim.goal_tolerance,
                "robot": {
                    "radius": self.sim.state.radius,
                    "v_max": self.sim.state.v_max,
                    "omega_max": self.sim.state.omega_max,
                },
                "terrain": w.terrain_regions.iter()
                    .map(|r| json!({"class": r.class, "polygon": poly(&r.polygon)}))
                    .collect::<Vec<_>>(),
                "obstacles": w.obstacles.iter()
                    .map(|o| json!({"kind": o.kind, "height": o.height, "polygon": poly(&o.polygon)}))
                    .collect::<Vec<_>>(),
                "contexts": w.context_regions.iter()
                    .map(|c| json!({"id": c.context, "polygon": poly(&c.polygon)}))
                    .collect::<Vec<_>>(),
                "ground_truth_path": s.ground_truth_path.as_deref().map(pts),
            }),
        )
    }

    fn error(&mut self, id: u64, message: String) {
        let env = Envelope::new("error", self.sim.tick, json!({ "message": message }));
        self.send(id, &env);
    }

    fn handle(&mut self, msg: Inbound) {
        match msg {
            Inbound::Connect { id, tx } => {
                self.clients.insert(id, tx);
                if self.controller.is_none() {
                    self.controller = Some(id);
                }
                let env = self.world_static(id);
                self.send(id, &env);
            }
            Inbound::Disconnect { id } => {
                self.clients.remove(&id);
                if self.controller == Some(id) {
                    self.controller = self.clients.keys().next().copied();
                    self.teleop = None;
                    if let Some(next) = self.controller {
                        let env = self.world_static(next);
                        self.send(next, &env);
                    }
                }
            }
            Inbound::Invalid { id, error } => self.error(id, error),
            Inbound::Message { id, msg } => {
                if self.controller != Some(id) {
                    self.error(id, "view-only connection: control messages are ignored".into());
                    return;
                }
                self.apply(id, msg);
            }
        }
    }

    fn apply(&mut self, id: u64, msg: ClientMessage) {
        match msg {
            ClientMessage::TeleopCmd(c) => {
                if self.mode == SessionMode::Teleop {
                    self.teleop = Some((c, self.sim.time));
                } else {
                    self.error(id, "teleop_cmd ignored in autonomous mode".into());
                }
            }
            ClientMessage::Mode(m) => {
                self.mode = m;
                self.teleop = None;
            }
            ClientMessage::RecordStart { name } => {
                if self.recording.is_some() {
                    self.error(id, "already recording".into());
                    return;
                }
                self.recordings += 1;
                let name = name
                    .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || "-_".contains(c)))
                    .unwrap_or_else(|| format!("recording_{:03}", self.recordings));
                let dir = self.record_dir.join(name);
                let source = match self.mode {
                    SessionMode::Teleop => TrajectorySource::Teleop,
                    SessionMode::Autonomous => self.sim.source(),
                };
                match self.sim.start_log(&dir, source) {
                    Ok(()) => self.recording = Some(dir),
                    Err(e) => self.error(id, format!("cannot record: {e}")),
                }
            }
            ClientMessage::RecordStop => self.stop_recording(Outcome::Stopped),
        }
    }

    fn stop_recording(&mut self, outcome: Outcome) {
        if self.recording.take().is_some() {
            match self.sim.finish_log(outcome) {
                Ok(p) => self.last_recording = p,
                Err(e) => log::error!("could not finish recording: {e}"),
            }
        }
    }

    fn control(&mut self) -> Control {
        match self.mode {
            SessionMode::Teleop => match self.teleop {
                Some((c, at)) if self.sim.time - at <= TELEOP_HOLD_S + 1e-9 => Control::Manual(c),
                _ => Control::Manual(VelocityCommand::new(0.0, 0.0)),
            },
            SessionMode::Autonomous if self.sim.goal_reached() => Control::Manual(VelocityCommand::new(0.0, 0.0)),
            SessionMode::Autonomous => Control::Autonomous,
        }
    }

    fn tick(&mut self) {
        let control = self.control();
        let report = match self.sim.step(control) {
            Ok(r) => r,
            Err(e) => {
                log::error!("run log write failed, recording stopped: {e}");
                self.recording = None;
                let _ = self.sim.finish_log(Outcome::Stopped);
                return;
            }
        };
        let s = self.sim.state;
        self.trail.push(s.pose.position());
        let path = self.sim.navigator.path().map(|p| pts(&p.points_odom));
        let markers: Vec<Value> = self
            .sim
            .navigator
            .last_markers()
            .map(|ms| {
                ms.entries
                    .iter()
                    .map(|e| {
                        let o = ms.odom_point(e);
                        json!({"label": e.label, "x": o.x, "y": o.y, "u": e.pixel.0, "v": e.pixel.1})
                    })
                    .collect()
            })
            .unwrap_or_default();
        let travelled = arc_length(&self.trail);
        let env = Envelope::new(
            "state",
            report.tick,
            json!({
                "t": self.sim.time,
                "mode": self.mode,
                "recording": self.recording.is_some(),
                "last_recording": self.last_recording.as_ref().map(|p| p.display().to_string()),
                "clients": self.clients.len(),
                "pose": {"x": s.pose.x, "y": s.pose.y, "theta": s.pose.theta},
                "v": s.v,
                "omega": s.omega,
                "cmd": {"v": report.cmd.v, "omega": report.cmd.omega},
                "pedestrians": self.sim.world.pedestrians.iter()
                    .map(|p| json!({"x": p.position.x, "y": p.position.y, "radius": p.radius}))
                    .collect::<Vec<_>>(),
                "grid": {
                    "n": report.grid.n(),
                    "resolution": self.sim.scenario.grid.resolution,
                    "occupied_cells": report.grid.occupied_count(),
                },
                "markers": markers,
                "path": path,
                "decision": report.nav.as_ref().map(|n| n.decision),
                "context": report.nav.as_ref().and_then(|n| n.context.as_ref()).map(|c| c.winner_id.clone()),
                "collision": report.collision,
                "goal_reached": report.goal_reached,
                "metrics": {
                    "distance_m": travelled,
                    "mean_velocity": if self.sim.time > 0.0 { travelled / self.sim.time } else { 0.0 },
                    "queries": self.sim.navigator.query_count(),
                    "collisions": self.sim.collisions(),
                },
            }),
        );
        self.broadcast(&env);
    }
}

#[derive(Clone)]
struct AppState {
    inbound: mpsc::Sender<Inbound>,
    next_id: Arc<AtomicU64>,
}

async fn ws_handler(ws: WebSocketUpgrade, State(app): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client_loop(socket, app))
}

async fn client_loop(socket: WebSocket, app: AppState) {
    let id = app.next_id.fetch_add(1, Ordering::SeqCst);
    let (tx, mut rx) = tmpsc::channel::<String>(CLIENT_QUEUE);
    if app.inbound.send(Inbound::Connect { id, tx }).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text)).await.is_err() {
                break;
            }
        }
    });
    while let Some(frame) = stream.next().await {
        let text = match frame {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        let msg = match parse_client_message(&text) {
            Ok(msg) => Inbound::Message { id, msg },
            Err(error) => Inbound::Invalid { id, error },
        };
        if app.inbound.send(msg).is_err() {
            break;
        }
    }
    let _ = app.inbound.send(Inbound::Disconnect { id });
    writer.abort();
}

/// A running service; dropping it stops the simulation thread.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim_thread: Option<JoinHandle<()>>,
    runtime: Option<tokio::runtime::Runtime>,
}

impl ServiceHandle {
    pub fn url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    /// Blocks until the simulation thread exits.
    pub fn join(mut self) {
        if let Some(t) = self.sim_thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.sim_thread.take() {
            let _ = t.join();
        }
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `cfg.port` (0 picks a free port) and starts serving in the background.
pub fn spawn(scenario: Scenario, opts: RunOptions, cfg: ServiceConfig) -> Result<ServiceHandle, String> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(("0.0.0.0", cfg.port)))
        .map_err(|e| format!("cannot bind port {}: {e}", cfg.port))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let (inbound_tx, inbound_rx) = mpsc::channel();
    let app = AppState {
        inbound: inbound_tx,
        next_id: Arc::new(AtomicU64::new(1)),
    };
    let router = Router::new().route("/ws", get(ws_handler)).with_state(app);
    runtime.spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            log::error!("server stopped: {e}");
        }
    });

    let opts = RunOptions {
        mode: NavMode::Convoi,
        ..opts
    };
    // the simulation may block on HTTP backends, so keep it off the runtime
    let sim = Simulation::new(scenario, &opts)?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let record_dir = cfg.record_dir.clone();
    let sim_thread = std::thread::Builder::new()
        .name("convoi-sim".into())
        .spawn(move || sim_loop(Session::new(sim, record_dir), inbound_rx, stop_flag))
        .map_err(|e| e.to_string())?;
    log::info!("serving on ws://{addr}/ws");
    Ok(ServiceHandle {
        addr,
        stop,
        sim_thread: Some(sim_thread),
        runtime: Some(runtime),
    })
}

fn sim_loop(mut session: Session, inbound: mpsc::Receiver<Inbound>, stop: Arc<AtomicBool>) {
    let dt = session.sim.scenario.sim.dt;
    let start = Instant::now();
    let mut n: u64 = 0;
    while !stop.load(Ordering::SeqCst) {
        while let Ok(msg) = inbound.try_recv() {
            session.handle(msg);
        }
        session.tick();
        n += 1;
        let due = start + Duration::from_secs_f64(n as f64 * dt);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    session.stop_recording(Outcome::Stopped);
}

/// Serves until the process is killed.
pub fn serve_blocking(scenario: Scenario, opts: RunOptions, cfg: ServiceConfig) -> Result<(), String> {
    let handle = spawn(scenario, opts, cfg)?;
    handle.join();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_control_messages() {
        let m = parse_client_message(r#"{"type":"teleop_cmd","tick":3,"payload":{"v":0.2,"omega":-0.1}}"#).unwrap();
        assert_eq!(m, ClientMessage::TeleopCmd(VelocityCommand::new(0.2, -0.1)));
        let m = parse_client_message(r#"{"type":"mode","payload":{"mode":"autonomous"}}"#).unwrap();
        assert_eq!(m, ClientMessage::Mode(SessionMode::Autonomous));
        let m = parse_client_message(r#"{"type":"record_start"}"#).unwrap();
        assert_eq!(m, ClientMessage::RecordStart { name: None });
        assert_eq!(parse_client_message(r#"{"type":"record_stop","payload":{}}"#).unwrap(), ClientMessage::RecordStop);
    }

    #[test]
    fn rejects_bad_messages() {
        assert!(parse_client_message("nope").is_err());
        assert!(parse_client_message(r#"{"type":"fly"}"#).is_err());
        assert!(parse_client_message(r#"{"type":"teleop_cmd","payload":{"v":1}}"#).is_err());
        assert!(parse_client_message(r#"{"version":9,"type":"record_stop"}"#).is_err());
    }
}
