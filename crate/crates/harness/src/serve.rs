//! Live telemetry and command service.
//!
//! One task owns the simulation and steps it on a wall-clock interval.
//! Telemetry goes out through a bounded broadcast channel; a subscriber that
//! falls behind loses its oldest frames and the loop never waits on it.
//! Commands from all clients funnel into one queue that is drained between
//! ticks, in arrival order, so the last writer wins.
//!
//! Wire protocol (schema 1), JSON text frames over `/ws`:
//! - server to client: `{"type":"tick"|"event"|"error", "seq", "t", ...}`
//! - client to server: `{"type":"cmd", "name", "args", "client_id"}` with
//!   `name` one of `set_navigation {command}`, `pause`, `resume`, `reset`,
//!   `set_speed {speed}` (m/s).

use crate::error::{HarnessError, Result};
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use cogdrive_core::cogmap::NavigationCommand;
use cogdrive_core::simworld::{ScenarioConfig, Simulation, SteeringController, Tick, VehicleState};
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;

pub const PROTOCOL_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second.
    pub speed_factor: f64,
    /// Frames buffered per subscriber before the oldest are dropped.
    pub telemetry_capacity: usize,
    pub command_capacity: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            speed_factor: 1.0,
            telemetry_capacity: 64,
            command_capacity: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SetNavigation(NavigationCommand),
    Pause,
    Resume,
    Reset,
    SetSpeed(f64),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SetNavigation(_) => "set_navigation",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Reset => "reset",
            Command::SetSpeed(_) => "set_speed",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandFrame {
    #[serde(rename = "type")]
    kind: String,
    name: String,
    #[serde(default)]
    args: Value,
    #[serde(default)]
    client_id: Option<String>,
}

/// Parses a client frame into a command and the sender's id, if given.
pub fn parse_command(text: &str) -> std::result::Result<(Command, Option<String>), String> {
    let f: CommandFrame = serde_json::from_str(text).map_err(|e| format!("malformed command: {e}"))?;
    if f.kind != "cmd" {
        return Err(format!("unsupported frame type {:?}", f.kind));
    }
    let cmd = match f.name.as_str() {
        "set_navigation" => {
            let c = f
                .args
                .get("command")
                .and_then(Value::as_str)
                .ok_or("set_navigation needs args.command")?;
            Command::SetNavigation(c.parse().map_err(|_| format!("unknown navigation command {c:?}"))?)
        }
        "set_speed" => {
            let v = f
                .args
                .get("speed")
                .and_then(Value::as_f64)
                .ok_or("set_speed needs numeric args.speed")?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("speed must be non-negative, got {v}"));
            }
            Command::SetSpeed(v)
        }
        "pause" => Command::Pause,
        "resume" => Command::Resume,
        "reset" => Command::Reset,
        other => return Err(format!("unknown command {other:?}")),
    };
    Ok((cmd, f.client_id))
}

#[derive(Debug, Clone, Serialize)]
pub struct ObstacleFrame {
    pub lane: usize,
    pub x: f64,
    pub length: f64,
    pub width: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TickFrame {
    pub schema: u32,
    pub seq: u64,
    pub t: f64,
    pub tick: u64,
    pub vehicle: VehicleState,
    pub steering: f64,
    pub accel: f64,
    pub navigation: NavigationCommand,
    pub intention: String,
    pub phase: String,
    #[serde(rename = "D_o")]
    pub d_o: f64,
    pub num_lanes: usize,
    pub lane_width: f64,
    pub obstacles: Vec<ObstacleFrame>,
    /// True when this repeats the last tick because the loop is paused or
    /// finished.
    pub stale: bool,
    pub paused: bool,
    pub finished: bool,
}

impl TickFrame {
    fn from_tick(tick: &Tick) -> Self {
        let w = &tick.world;
        Self {
            schema: PROTOCOL_SCHEMA,
            seq: 0,
            t: tick.t,
            tick: tick.index,
            vehicle: w.vehicle,
            steering: tick.steering,
            accel: tick.accel,
            navigation: tick.navigation,
            intention: tick.intention.to_string(),
            phase: tick.phase.as_str().to_string(),
            d_o: tick.d_o,
            num_lanes: w.road.num_lanes,
            lane_width: w.road.lane_width,
            obstacles: w
                .obstacles
                .iter()
                .map(|o| ObstacleFrame {
                    lane: o.lane,
                    x: o.x,
                    length: o.length,
                    width: o.width,
                    active: o.is_active(w.t),
                })
                .collect(),
            stale: false,
            paused: false,
            finished: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Tick(TickFrame),
    Event {
        seq: u64,
        t: f64,
        name: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        client_id: Option<String>,
        #[serde(skip_serializing_if = "Value::is_null")]
        detail: Value,
    },
    Error {
        seq: u64,
        t: f64,
        message: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        client_id: Option<String>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub tick: u64,
    pub t: f64,
    pub paused: bool,
    pub finished: bool,
    pub clients: usize,
}

struct Incoming {
    client_id: String,
    command: Command,
    reply: mpsc::Sender<Utf8Bytes>,
}

#[derive(Clone)]
struct AppState {
    telemetry: broadcast::Sender<Utf8Bytes>,
    commands: mpsc::Sender<Incoming>,
    health: watch::Receiver<Health>,
    seq: Arc<AtomicU64>,
    next_client: Arc<AtomicU64>,
}

impl AppState {
    fn error_frame(&self, t: f64, message: String, client_id: Option<String>) -> Utf8Bytes {
        encode(&Frame::Error {
            seq: self.seq.fetch_add(1, Ordering::Relaxed),
            t,
            message,
            client_id,
        })
    }
}

fn encode(f: &Frame) -> Utf8Bytes {
    Utf8Bytes::from(serde_json::to_string(f).expect("frames serialize"))
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    server: JoinHandle<std::io::Result<()>>,
    sim: JoinHandle<()>,
}

impl ServerHandle {
    pub async fn shutdown(self) -> Result<()> {
        let _ = self.shutdown.send(true);
        let _ = self.sim.await;
        self.server
            .await
            .map_err(|e| HarnessError::Serve(e.to_string()))?
            .map_err(|e| HarnessError::Serve(e.to_string()))
    }

    /// Resolves once shutdown has been requested and the server has stopped.
    pub async fn wait(self) -> Result<()> {
        let _ = self.sim.await;
        self.server
            .await
            .map_err(|e| HarnessError::Serve(e.to_string()))?
            .map_err(|e| HarnessError::Serve(e.to_string()))
    }

    pub fn shutdown_sender(&self) -> watch::Sender<bool> {
        self.shutdown.clone()
    }
}

/// Binds `addr` and starts the simulation loop and the HTTP server.
pub async fn start(
    cfg: ScenarioConfig,
    controller: Box<dyn SteeringController + Send>,
    addr: SocketAddr,
    opts: ServeOptions,
) -> Result<ServerHandle> {
    if !(opts.speed_factor.is_finite() && opts.speed_factor > 0.0) {
        return Err(HarnessError::Usage(format!(
            "speed factor must be positive, got {}",
            opts.speed_factor
        )));
    }
    let sim = Simulation::new(cfg)?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| HarnessError::Serve(format!("cannot bind {addr}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| HarnessError::Serve(e.to_string()))?;

    let (telemetry, _) = broadcast::channel(opts.telemetry_capacity.max(1));
    let (cmd_tx, cmd_rx) = mpsc::channel(opts.command_capacity.max(1));
    let (health_tx, health_rx) = watch::channel(Health {
        status: "ok",
        tick: 0,
        t: 0.0,
        paused: false,
        finished: false,
        clients: 0,
    });
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let state = AppState {
        telemetry: telemetry.clone(),
        commands: cmd_tx,
        health: health_rx,
        seq: Arc::new(AtomicU64::new(0)),
        next_client: Arc::new(AtomicU64::new(0)),
    };

    let period = Duration::from_secs_f64(sim.config().dt / opts.speed_factor);
    let sim_task = tokio::spawn(sim_loop(
        sim,
        controller,
        period,
        cmd_rx,
        telemetry,
        health_tx,
        state.seq.clone(),
        shutdown_rx.clone(),
    ));

    let app = Router::new()
        .route("/ws", get(ws_handler))
        .route("/healthz", get(healthz))
        .with_state(state);
    let mut stop = shutdown_rx;
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop.wait_for(|s| *s).await;
            })
            .await
    });
    Ok(ServerHandle {
        addr,
        shutdown: shutdown_tx,
        server,
        sim: sim_task,
    })
}

#[allow(clippy::too_many_arguments)]
async fn sim_loop(
    mut sim: Simulation,
    mut controller: Box<dyn SteeringController + Send>,
    period: Duration,
    mut commands: mpsc::Receiver<Incoming>,
    telemetry: broadcast::Sender<Utf8Bytes>,
    health: watch::Sender<Health>,
    seq: Arc<AtomicU64>,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let next_seq = || seq.fetch_add(1, Ordering::Relaxed);
    // Send errors only mean nobody is subscribed.
    let publish = |f: &Frame| {
        let _ = telemetry.send(encode(f));
    };
    let mut paused = false;
    let mut last: Option<TickFrame> = None;
    let mut finished_announced = false;
    controller.reset();

    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = shutdown.wait_for(|s| *s) => break,
        }
        let t = sim.time();
        let mut nav_writer: Option<String> = None;
        while let Ok(inc) = commands.try_recv() {
            let Incoming {
                client_id,
                command,
                reply,
            } = inc;
            let mut detail = json!({ "command": command.name() });
            match &command {
                Command::SetNavigation(c) => {
                    if let Some(prev) = nav_writer.replace(client_id.clone()) {
                        publish(&Frame::Event {
                            seq: next_seq(),
                            t,
                            name: "command_overridden".into(),
                            client_id: Some(prev),
                            detail: json!({ "command": "set_navigation", "by": client_id }),
                        });
                    }
                    sim.set_navigation(*c);
                    detail["value"] = json!(c);
                }
                Command::Pause => paused = true,
                Command::Resume => paused = false,
                Command::Reset => {
                    sim.reset();
                    controller.reset();
                    last = None;
                    finished_announced = false;
                }
                Command::SetSpeed(v) => {
                    if let Err(e) = sim.set_cruise_speed(*v) {
                        let f = Frame::Error {
                            seq: next_seq(),
                            t,
                            message: e.to_string(),
                            client_id: Some(client_id),
                        };
                        let _ = reply.try_send(encode(&f));
                        continue;
                    }
                    detail["value"] = json!(v);
                }
            }
            publish(&Frame::Event {
                seq: next_seq(),
                t,
                name: "command".into(),
                client_id: Some(client_id),
                detail,
            });
        }

        let stepped = if paused || sim.is_finished() {
            None
        } else {
            sim.step(&mut controller)
        };
        match stepped {
            Some(tick) => {
                let mut frame = TickFrame::from_tick(&tick);
                frame.seq = next_seq();
                frame.finished = sim.is_finished();
                publish(&Frame::Tick(frame.clone()));
                for e in &tick.events {
                    publish(&Frame::Event {
                        seq: next_seq(),
                        t: tick.t,
                        name: e.label(),
                        client_id: None,
                        detail: serde_json::to_value(e).unwrap_or(Value::Null),
                    });
                }
                last = Some(frame);
            }
            None => {
                if sim.is_finished() && !finished_announced {
                    finished_announced = true;
                    publish(&Frame::Event {
                        seq: next_seq(),
                        t: sim.time(),
                        name: "finished".into(),
                        client_id: None,
                        detail: Value::Null,
                    });
                }
                if let Some(prev) = &last {
                    let mut frame = prev.clone();
                    frame.seq = next_seq();
                    frame.stale = true;
                    frame.paused = paused;
                    frame.finished = sim.is_finished();
                    publish(&Frame::Tick(frame));
                }
            }
        }
        health.send_replace(Health {
            status: "ok",
            tick: sim.tick_index(),
            t: sim.time(),
            paused,
            finished: sim.is_finished(),
            clients: telemetry.receiver_count(),
        });
    }
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    let mut h = state.health.borrow().clone();
    h.clients = state.telemetry.receiver_count();
    Json(h)
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state)).into_response()
}

async fn client(socket: WebSocket, state: AppState) {
    let conn_id = format!("client-{}", state.next_client.fetch_add(1, Ordering::Relaxed));
    let (mut sink, mut stream) = socket.split();
    let mut telemetry = state.telemetry.subscribe();
    let (reply_tx, mut reply_rx) = mpsc::channel::<Utf8Bytes>(16);

    let writer = async move {
        loop {
            let text = tokio::select! {
                r = telemetry.recv() => match r {
                    Ok(t) => t,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                Some(t) = reply_rx.recv() => t,
            };
            if sink.send(Message::Text(text)).await.is_err() {
                break;
            }
        }
    };

    let reader_state = state.clone();
    let reader = async move {
        while let Some(Ok(msg)) = stream.next().await {
            let text = match msg {
                Message::Text(t) => t,
                Message::Close(_) => break,
                _ => continue,
            };
            let t = reader_state.health.borrow().t;
            match parse_command(text.as_str()) {
                Ok((command, id)) => {
                    let client_id = id.unwrap_or_else(|| conn_id.clone());
                    let inc = Incoming {
                        client_id: client_id.clone(),
                        command,
                        reply: reply_tx.clone(),
                    };
                    if reader_state.commands.try_send(inc).is_err() {
                        let f = reader_state.error_frame(t, "command queue full".into(), Some(client_id));
                        let _ = reply_tx.send(f).await;
                    }
                }
                Err(message) => {
                    let f = reader_state.error_frame(t, message, None);
                    let _ = reply_tx.send(f).await;
                }
            }
        }
    };

    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_command() {
        let p = |s: &str| parse_command(s).map(|c| c.0);
        assert_eq!(
            p(r#"{"type":"cmd","name":"set_navigation","args":{"command":"change_to_left"}}"#),
            Ok(Command::SetNavigation(NavigationCommand::ChangeToLeft))
        );
        assert_eq!(p(r#"{"type":"cmd","name":"pause"}"#), Ok(Command::Pause));
        assert_eq!(p(r#"{"type":"cmd","name":"resume","args":{}}"#), Ok(Command::Resume));
        assert_eq!(p(r#"{"type":"cmd","name":"reset"}"#), Ok(Command::Reset));
        assert_eq!(
            p(r#"{"type":"cmd","name":"set_speed","args":{"speed":8.5}}"#),
            Ok(Command::SetSpeed(8.5))
        );
        let (_, id) = parse_command(r#"{"type":"cmd","name":"pause","client_id":"ui-1"}"#).unwrap();
        assert_eq!(id.as_deref(), Some("ui-1"));
    }

    #[test]
    fn rejects_malformed_commands() {
        for bad in [
            "not json",
            r#"{"type":"tick","name":"pause"}"#,
            r#"{"type":"cmd","name":"fly"}"#,
            r#"{"type":"cmd","name":"set_navigation","args":{"command":"u_turn"}}"#,
            r#"{"type":"cmd","name":"set_speed","args":{"speed":-1}}"#,
            r#"{"type":"cmd","name":"pause","extra":1}"#,
        ] {
            assert!(parse_command(bad).is_err(), "{bad}");
        }
    }
}
