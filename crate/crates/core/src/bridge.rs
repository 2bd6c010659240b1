//! Wire protocol between the control stack and the (simulated) hardware.
//!
//! Every request is answered on acceptance with a command token; effects are
//! applied by the single stepping loop at the next sim step. Chassis twists
//! are latest-wins, servo trajectories run one at a time in arrival order.
//!
//! | method | path                       | body                                   |
//! |--------|----------------------------|----------------------------------------|
//! | POST   | `/api/v1/servo`            | `{"positions":[i;5],"duration_ms":u}`  |
//! | POST   | `/api/v1/chassis`          | `{"vx":f,"vy":f,"omega":f}`            |
//! | POST   | `/api/v1/actuator`         | `{"extension_m":f}`                    |
//! | POST   | `/api/v1/gripper`          | `{"state":"open"\|"closed"}`           |
//! | GET    | `/api/v1/state`            |                                        |
//! | GET    | `/api/v1/command/{token}`  |                                        |
//!
//! Any POST body may carry a `request_id` string which is echoed back.

use std::collections::{BTreeMap, VecDeque};
use std::io::Read;
use std::net::SocketAddr;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::arm::{
    radians_to_servo, servo_to_radians, JointVector, ServoFrame, SERVO_MAX, SERVO_MIN,
};
use crate::drive::BodyTwist;
use crate::geometry::Pose2;
use crate::world::{ActuationCommand, GripperState, JointTarget, StepReport, World, WorldEvent};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct ProtocolError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub status: u16,
}

impl ProtocolError {
    fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            status,
        }
    }

    fn bad_json(m: impl Into<String>) -> Self {
        Self::new(400, "bad_json", m)
    }

    fn missing(field: &str) -> Self {
        Self::new(400, "missing_field", format!("`{field}` is required"))
    }

    fn bad_type(field: &str, want: &str) -> Self {
        Self::new(400, "bad_type", format!("`{field}` must be {want}"))
    }

    fn range(m: impl Into<String>) -> Self {
        Self::new(400, "range", m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    Servo(ServoFrame),
    Chassis(BodyTwist),
    Actuator { extension_m: f64 },
    Gripper { state: GripperState },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Servo(_) => "servo",
            Command::Chassis(_) => "chassis",
            Command::Actuator { .. } => "actuator",
            Command::Gripper { .. } => "gripper",
        }
    }
}

fn parse_object(body: &[u8]) -> Result<Map<String, Value>, ProtocolError> {
    let v: Value =
        serde_json::from_slice(body).map_err(|e| ProtocolError::bad_json(e.to_string()))?;
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(ProtocolError::bad_json("body must be a JSON object")),
    }
}

fn number(m: &Map<String, Value>, key: &str) -> Result<f64, ProtocolError> {
    let v = m.get(key).ok_or_else(|| ProtocolError::missing(key))?;
    let x = v
        .as_f64()
        .ok_or_else(|| ProtocolError::bad_type(key, "a number"))?;
    if !x.is_finite() {
        return Err(ProtocolError::range(format!("`{key}` must be finite")));
    }
    Ok(x)
}

/// Decodes a POST body for `endpoint` (`servo`, `chassis`, `actuator`,
/// `gripper`). Unknown fields are ignored.
pub fn decode(endpoint: &str, body: &[u8]) -> Result<Command, ProtocolError> {
    let m = parse_object(body)?;
    match endpoint {
        "servo" => {
            let arr = m
                .get("positions")
                .ok_or_else(|| ProtocolError::missing("positions"))?
                .as_array()
                .ok_or_else(|| ProtocolError::bad_type("positions", "an array of 5 integers"))?;
            if arr.len() != 5 {
                return Err(ProtocolError::range(format!(
                    "`positions` needs 5 entries, got {}",
                    arr.len()
                )));
            }
            let mut positions = [0i64; 5];
            for (i, v) in arr.iter().enumerate() {
                let p = v.as_i64().ok_or_else(|| {
                    ProtocolError::bad_type("positions", "an array of 5 integers")
                })?;
                if !(SERVO_MIN..=SERVO_MAX).contains(&p) {
                    return Err(ProtocolError::range(format!(
                        "positions[{i}] = {p} outside [0, 1000]"
                    )));
                }
                positions[i] = p;
            }
            let duration_ms = match m.get("duration_ms") {
                None => 1000,
                Some(v) => v.as_u64().ok_or_else(|| {
                    ProtocolError::bad_type("duration_ms", "a non-negative integer")
                })?,
            };
            Ok(Command::Servo(ServoFrame {
                positions,
                duration_ms,
            }))
        }
        "chassis" => Ok(Command::Chassis(BodyTwist {
            vx: number(&m, "vx")?,
            vy: number(&m, "vy")?,
            omega: number(&m, "omega")?,
        })),
        "actuator" => {
            let e = number(&m, "extension_m")?;
            if !(0.0..=0.125).contains(&e) {
                return Err(ProtocolError::range(format!(
                    "extension_m = {e} outside [0, 0.125]"
                )));
            }
            Ok(Command::Actuator { extension_m: e })
        }
        "gripper" => {
            let s = m
                .get("state")
                .ok_or_else(|| ProtocolError::missing("state"))?;
            let state = match s.as_str() {
                Some("open") => GripperState::Open,
                Some("closed") => GripperState::Closed,
                Some(other) => {
                    return Err(ProtocolError::range(format!(
                        "unknown gripper state `{other}`"
                    )))
                }
                None => return Err(ProtocolError::bad_type("state", "\"open\" or \"closed\"")),
            };
            Ok(Command::Gripper { state })
        }
        other => Err(ProtocolError::new(
            404,
            "not_found",
            format!("no endpoint `{other}`"),
        )),
    }
}

/// Request body for a command; inverse of [`decode`].
pub fn encode(cmd: &Command) -> Vec<u8> {
    let v = match cmd {
        Command::Servo(f) => json!({"positions": f.positions, "duration_ms": f.duration_ms}),
        Command::Chassis(t) => json!({"vx": t.vx, "vy": t.vy, "omega": t.omega}),
        Command::Actuator { extension_m } => json!({"extension_m": extension_m}),
        Command::Gripper { state } => json!({"state": state}),
    };
    serde_json::to_vec(&v).expect("json value serializes")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub body: String,
}

impl WireRequest {
    pub fn get(path: &str) -> Self {
        Self {
            method: "GET".into(),
            path: path.into(),
            body: String::new(),
        }
    }

    pub fn post(path: &str, body: impl Into<String>) -> Self {
        Self {
            method: "POST".into(),
            path: path.into(),
            body: body.into(),
        }
    }

    pub fn command(cmd: &Command) -> Self {
        Self::post(
            &format!("/api/v1/{}", cmd.name()),
            String::from_utf8(encode(cmd)).expect("json is utf-8"),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub status: u16,
    pub body: String,
}

impl WireResponse {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or(Value::Null)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandState {
    Queued,
    Active,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandStatus {
    pub token: String,
    pub kind: String,
    pub state: CommandState,
    pub accepted_tick: u64,
    pub completed_tick: Option<u64>,
}

/// How the host advances time when driven by a transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepPolicy {
    /// The owner calls [`SimHost::step`] itself.
    Manual,
    /// Every request is followed by this many sim steps.
    PerRequest(u32),
    /// Steps at wall-clock rate (HTTP server only).
    RealTime,
}

#[derive(Debug, Clone)]
struct Queued {
    token: String,
    cmd: Command,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateSnapshot {
    clock: f64,
    tick: u64,
    chassis: Pose2,
    chassis_twist: BodyTwist,
    joints: JointVector,
    servo_positions: [i64; 5],
    actuator_extension: f64,
    gripper: GripperState,
    arm_busy: bool,
    queue_depth: usize,
}

/// Owns the world and serialises every effect onto its stepping loop.
#[derive(Debug)]
pub struct SimHost {
    world: World,
    capacity: usize,
    next_token: u64,
    inbox: VecDeque<Queued>,
    servo_fifo: VecDeque<(String, ServoFrame)>,
    active_servo: Option<String>,
    pending_actuator: Option<String>,
    twist: BodyTwist,
    status: BTreeMap<String, CommandStatus>,
    policy: StepPolicy,
    last_report: StepReport,
}

impl SimHost {
    pub fn new(world: World) -> Self {
        Self::with_options(world, DEFAULT_QUEUE_CAPACITY, StepPolicy::Manual)
    }

    pub fn with_options(world: World, capacity: usize, policy: StepPolicy) -> Self {
        Self {
            world,
            capacity,
            next_token: 1,
            inbox: VecDeque::new(),
            servo_fifo: VecDeque::new(),
            active_servo: None,
            pending_actuator: None,
            twist: BodyTwist::ZERO,
            status: BTreeMap::new(),
            policy,
            last_report: StepReport::default(),
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn policy(&self) -> StepPolicy {
        self.policy
    }

    pub fn into_world(self) -> World {
        self.world
    }

    pub fn queue_depth(&self) -> usize {
        self.inbox.len() + self.servo_fifo.len()
    }

    pub fn last_report(&self) -> &StepReport {
        &self.last_report
    }

    pub fn command_status(&self, token: &str) -> Option<&CommandStatus> {
        self.status.get(token)
    }

    /// Accepts a decoded command and returns its token.
    pub fn submit(&mut self, cmd: Command) -> Result<String, ProtocolError> {
        if self.queue_depth() >= self.capacity {
            return Err(ProtocolError::new(
                503,
                "busy",
                format!("command queue full ({})", self.capacity),
            ));
        }
        let token = format!("cmd-{:06}", self.next_token);
        self.next_token += 1;
        self.status.insert(
            token.clone(),
            CommandStatus {
                token: token.clone(),
                kind: cmd.name().into(),
                state: CommandState::Queued,
                accepted_tick: self.world.tick,
                completed_tick: None,
            },
        );
        self.inbox.push_back(Queued {
            token: token.clone(),
            cmd,
        });
        Ok(token)
    }

    fn finish(&mut self, token: &str) {
        if let Some(s) = self.status.get_mut(token) {
            s.state = CommandState::Done;
            s.completed_tick = Some(self.world.tick);
        }
    }

    fn activate(&mut self, token: &str) {
        if let Some(s) = self.status.get_mut(token) {
            s.state = CommandState::Active;
        }
    }

    /// Applies queued commands and advances the world by one fixed step.
    pub fn step(&mut self) -> &StepReport {
        let mut cmd = ActuationCommand::default();
        let mut applied_now = Vec::new();
        let mut servo_batch = Vec::new();
        while let Some(q) = self.inbox.pop_front() {
            match q.cmd {
                Command::Chassis(t) => {
                    self.twist = t;
                    applied_now.push(q.token);
                }
                Command::Servo(f) => servo_batch.push((q.token, f)),
                Command::Actuator { extension_m } => {
                    cmd.actuator = Some(extension_m);
                    if let Some(prev) = self.pending_actuator.replace(q.token.clone()) {
                        applied_now.push(prev);
                    }
                    self.activate(&q.token);
                }
                Command::Gripper { state } => {
                    cmd.gripper = Some(state);
                    applied_now.push(q.token);
                }
            }
        }
        self.servo_fifo.extend(servo_batch);
        if self.active_servo.is_none() {
            if let Some((token, frame)) = self.servo_fifo.pop_front() {
                let q = servo_to_radians(&frame).expect("positions validated on decode");
                cmd.joints = Some(JointTarget {
                    q,
                    duration_s: frame.duration_ms as f64 / 1000.0,
                });
                self.activate(&token);
                self.active_servo = Some(token);
            }
        }
        cmd.twist = self.twist;
        let dt = self.world.dt();
        let report = self.world.step(dt, &cmd);
        for t in applied_now {
            self.finish(&t);
        }
        for e in &report.events {
            match e {
                WorldEvent::ArmArrived => {
                    if let Some(t) = self.active_servo.take() {
                        self.finish(&t);
                    }
                }
                WorldEvent::ActuatorArrived => {
                    if let Some(t) = self.pending_actuator.take() {
                        self.finish(&t);
                    }
                }
                _ => {}
            }
        }
        self.last_report = report;
        &self.last_report
    }

    fn snapshot(&self) -> StateSnapshot {
        let r = &self.world.robot;
        StateSnapshot {
            clock: self.world.clock,
            tick: self.world.tick,
            chassis: r.chassis,
            chassis_twist: r.chassis_twist,
            joints: r.joints,
            servo_positions: radians_to_servo(&r.joints, 0)
                .expect("joints stay inside limits")
                .positions,
            actuator_extension: r.actuator_extension,
            gripper: r.gripper,
            arm_busy: self.world.arm_busy() || !self.servo_fifo.is_empty(),
            queue_depth: self.queue_depth(),
        }
    }

    /// Transport-independent request handler. With [`StepPolicy::PerRequest`]
    /// the world is stepped after the response has been built.
    pub fn handle(&mut self, req: &WireRequest) -> WireResponse {
        let resp = self.dispatch(req);
        if let StepPolicy::PerRequest(n) = self.policy {
            for _ in 0..n {
                self.step();
            }
        }
        resp
    }

    fn dispatch(&mut self, req: &WireRequest) -> WireResponse {
        let path = req.path.split('?').next().unwrap_or("");
        let request_id = if req.method == "POST" {
            serde_json::from_str::<Value>(&req.body).ok().and_then(|v| {
                v.get("request_id")
                    .and_then(|r| r.as_str().map(String::from))
            })
        } else {
            None
        };
        let result: Result<(u16, Value), ProtocolError> = match (req.method.as_str(), path) {
            ("GET", "/api/v1/state") => Ok((
                200,
                serde_json::to_value(self.snapshot()).expect("snapshot serializes"),
            )),
            ("GET", p) if p.starts_with("/api/v1/command/") => {
                let token = &p["/api/v1/command/".len()..];
                match self.status.get(token) {
                    Some(s) => Ok((200, serde_json::to_value(s).expect("status serializes"))),
                    None => Err(ProtocolError::new(
                        404,
                        "not_found",
                        format!("unknown token `{token}`"),
                    )),
                }
            }
            ("POST", p)
                if p.starts_with("/api/v1/") && !p.contains("/command") && p != "/api/v1/state" =>
            {
                let endpoint = &p["/api/v1/".len()..];
                decode(endpoint, req.body.as_bytes())
                    .and_then(|cmd| self.submit(cmd))
                    .map(|token| (202, json!({ "token": token })))
            }
            (_, p) if p == "/api/v1/state" || p.starts_with("/api/v1/") => Err(ProtocolError::new(
                405,
                "method_not_allowed",
                format!("{} not allowed on {p}", req.method),
            )),
            _ => Err(ProtocolError::new(
                404,
                "not_found",
                format!("no route for {path}"),
            )),
        };
        let (status, body) = match result {
            Ok((status, data)) => (
                status,
                json!({"request_id": request_id, "status": "ok", "data": data}),
            ),
            Err(e) => (
                e.status,
                json!({"request_id": request_id, "status": "error", "error": {"code": e.code, "message": e.message}}),
            ),
        };
        WireResponse {
            status,
            body: serde_json::to_string(&body).expect("json value serializes"),
        }
    }
}

/// In-process transport.
pub trait Transport {
    fn send(&mut self, req: &WireRequest) -> WireResponse;
}

pub struct Loopback<'a> {
    pub host: &'a mut SimHost,
}

impl Transport for Loopback<'_> {
    fn send(&mut self, req: &WireRequest) -> WireResponse {
        self.host.handle(req)
    }
}

type Pending = (WireRequest, mpsc::Sender<WireResponse>);

/// Running HTTP front end. Dropping the handle stops the server.
pub struct HttpServer {
    addr: SocketAddr,
    server: std::sync::Arc<tiny_http::Server>,
    threads: Vec<thread::JoinHandle<()>>,
    stop: mpsc::Sender<()>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops both threads and hands back the host.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        let _ = self.stop.send(());
        self.server.unblock();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.close();
    }
}

#[derive(Debug, Error)]
#[error("cannot bind {addr}: {message}")]
pub struct BindError {
    pub addr: String,
    pub message: String,
}

/// Serves `host` over HTTP on `addr` (port 0 picks a free port). The host
/// moves onto its own stepping thread; handlers only talk to it through a
/// channel.
pub fn serve(mut host: SimHost, addr: &str) -> Result<HttpServer, BindError> {
    let server = tiny_http::Server::http(addr).map_err(|e| BindError {
        addr: addr.into(),
        message: e.to_string(),
    })?;
    let bound = server.server_addr().to_ip().ok_or_else(|| BindError {
        addr: addr.into(),
        message: "not an IP listener".into(),
    })?;
    let server = std::sync::Arc::new(server);
    let (tx, rx) = mpsc::channel::<Pending>();
    let (stop_tx, stop_rx) = mpsc::channel::<()>();

    let sim = thread::spawn(move || {
        let dt = Duration::from_secs_f64(host.world().dt());
        let mut next = Instant::now() + dt;
        loop {
            if stop_rx.try_recv().is_ok() {
                break;
            }
            match host.policy() {
                StepPolicy::RealTime => {
                    let now = Instant::now();
                    let wait = next.saturating_duration_since(now);
                    match rx.recv_timeout(wait) {
                        Ok((req, reply)) => {
                            let _ = reply.send(host.handle(&req));
                        }
                        Err(mpsc::RecvTimeoutError::Timeout) => {
                            host.step();
                            next += dt;
                        }
                        Err(mpsc::RecvTimeoutError::Disconnected) => break,
                    }
                }
                _ => match rx.recv_timeout(Duration::from_millis(50)) {
                    Ok((req, reply)) => {
                        let _ = reply.send(host.handle(&req));
                    }
                    Err(mpsc::RecvTimeoutError::Timeout) => {}
                    Err(mpsc::RecvTimeoutError::Disconnected) => break,
                },
            }
        }
    });

    let srv = server.clone();
    let http = thread::spawn(move || {
        for mut request in srv.incoming_requests() {
            let mut body = String::new();
            let _ = request.as_reader().read_to_string(&mut body);
            let req = WireRequest {
                method: request.method().as_str().to_uppercase(),
                path: request.url().to_string(),
                body,
            };
            let (reply_tx, reply_rx) = mpsc::channel();
            if tx.send((req, reply_tx)).is_err() {
                break;
            }
            let Ok(resp) = reply_rx.recv() else { break };
            let header =
                tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                    .expect("static header is valid");
            let _ = request.respond(
                tiny_http::Response::from_string(resp.body)
                    .with_status_code(resp.status)
                    .with_header(header),
            );
        }
    });

    Ok(HttpServer {
        addr: bound,
        server,
        threads: vec![sim, http],
        stop: stop_tx,
    })
}

/// Minimal blocking HTTP/1.1 client for the wire protocol.
pub fn http_send(addr: SocketAddr, req: &WireRequest) -> std::io::Result<WireResponse> {
    use std::io::Write;
    let mut stream = std::net::TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    write!(
        stream,
        "{} {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        req.method,
        req.path,
        addr,
        req.body.len(),
        req.body
    )?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    let text = String::from_utf8_lossy(&raw);
    let (head, body) = text
        .split_once("\r\n\r\n")
        .ok_or_else(|| std::io::Error::other("malformed response"))?;
    let status = head
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| std::io::Error::other("missing status"))?;
    let chunked = head
        .to_ascii_lowercase()
        .contains("transfer-encoding: chunked");
    let body = if chunked {
        dechunk(body)
    } else {
        body.to_string()
    };
    Ok(WireResponse { status, body })
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    while let Some((size, rest)) = s.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 || rest.len() < n {
            break;
        }
        out.push_str(&rest[..n]);
        s = rest[n..].trim_start_matches("\r\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{minimal_scenario, World};

    fn host() -> SimHost {
        SimHost::new(World::from_scenario(minimal_scenario()).unwrap())
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            decode(
                "servo",
                br#"{"positions":[500,500,500,500,500],"duration_ms":800}"#
            )
            .unwrap(),
            Command::Servo(ServoFrame {
                positions: [500; 5],
                duration_ms: 800
            })
        );
        assert_eq!(
            decode("servo", br#"{"positions":[1001,0,0,0,0]}"#)
                .unwrap_err()
                .code,
            "range"
        );
        assert_eq!(
            decode("chassis", br#"{"vx":0.10,"vy":0.0,"omega":0.0}"#).unwrap(),
            Command::Chassis(BodyTwist {
                vx: 0.10,
                vy: 0.0,
                omega: 0.0
            })
        );
        assert_eq!(decode("chassis", b"{nope").unwrap_err().code, "bad_json");
        assert_eq!(
            decode("chassis", br#"{"vx":0.1}"#).unwrap_err().code,
            "missing_field"
        );
        assert_eq!(
            decode("gripper", br#"{"state":"closed","extra":1}"#).unwrap(),
            Command::Gripper {
                state: GripperState::Closed
            }
        );
        assert_eq!(
            decode("actuator", br#"{"extension_m":0.2}"#)
                .unwrap_err()
                .code,
            "range"
        );
    }

    #[test]
    fn encode_decode_round_trip() {
        for cmd in [
            Command::Servo(ServoFrame {
                positions: [0, 1000, 500, 1, 999],
                duration_ms: 5,
            }),
            Command::Chassis(BodyTwist {
                vx: 0.1,
                vy: -0.05,
                omega: 0.3,
            }),
            Command::Actuator { extension_m: 0.125 },
            Command::Gripper {
                state: GripperState::Open,
            },
        ] {
            assert_eq!(decode(cmd.name(), &encode(&cmd)).unwrap(), cmd);
        }
    }

    #[test]
    fn state_after_load() {
        let mut h = host();
        let r = h.handle(&WireRequest::get("/api/v1/state"));
        assert_eq!(r.status, 200);
        let v = r.json();
        assert_eq!(v["data"]["clock"], 0.0);
        assert_eq!(v["data"]["chassis"]["x"], -0.4);
        let home = h.world().config().home;
        assert_eq!(v["data"]["joints"], serde_json::to_value(home).unwrap());
    }

    #[test]
    fn servo_midpoint_completes_within_duration() {
        let mut h = host();
        let r = h.handle(&WireRequest::post(
            "/api/v1/servo",
            r#"{"positions":[500,500,500,500,500],"duration_ms":800}"#,
        ));
        assert_eq!(r.status, 202);
        let token = r.json()["data"]["token"].as_str().unwrap().to_string();
        assert_eq!(token, "cmd-000001");
        let mut steps = 0;
        while h.command_status(&token).unwrap().state != CommandState::Done {
            h.step();
            steps += 1;
            assert!(steps <= 81, "took {steps} steps");
        }
        assert_eq!(h.world().robot.joints, JointVector::ZERO);
        let poll = h.handle(&WireRequest::get(&format!("/api/v1/command/{token}")));
        assert_eq!(poll.json()["data"]["state"], "done");
    }

    #[test]
    fn latest_twist_wins() {
        let mut h = host();
        let a = h.handle(&WireRequest::post(
            "/api/v1/chassis",
            r#"{"vx":0.2,"vy":0,"omega":0}"#,
        ));
        let b = h.handle(&WireRequest::post(
            "/api/v1/chassis",
            r#"{"vx":0.1,"vy":0,"omega":0}"#,
        ));
        assert_eq!((a.status, b.status), (202, 202));
        h.step();
        assert_eq!(h.world().robot.chassis_twist.vx, 0.1);
        for t in ["cmd-000001", "cmd-000002"] {
            assert_eq!(h.command_status(t).unwrap().state, CommandState::Done);
        }
    }

    #[test]
    fn servo_trajectories_complete_in_order() {
        let mut h = host();
        let mut tokens = Vec::new();
        for p in [
            [600, 500, 500, 500, 500],
            [400, 500, 500, 500, 500],
            [500, 300, 700, 500, 500],
        ] {
            let body = format!(r#"{{"positions":{p:?},"duration_ms":100}}"#);
            tokens.push(
                h.handle(&WireRequest::post("/api/v1/servo", body)).json()["data"]["token"]
                    .as_str()
                    .unwrap()
                    .to_string(),
            );
        }
        for _ in 0..400 {
            h.step();
        }
        let done: Vec<u64> = tokens
            .iter()
            .map(|t| h.command_status(t).unwrap().completed_tick.unwrap())
            .collect();
        assert!(done.windows(2).all(|w| w[0] < w[1]), "{done:?}");
    }

    #[test]
    fn queue_fills_up() {
        let mut h = SimHost::with_options(
            World::from_scenario(minimal_scenario()).unwrap(),
            2,
            StepPolicy::Manual,
        );
        let body = r#"{"positions":[500,500,500,500,500]}"#;
        assert_eq!(
            h.handle(&WireRequest::post("/api/v1/servo", body)).status,
            202
        );
        assert_eq!(
            h.handle(&WireRequest::post("/api/v1/servo", body)).status,
            202
        );
        let r = h.handle(&WireRequest::post("/api/v1/servo", body));
        assert_eq!(r.status, 503);
        assert_eq!(r.json()["error"]["code"], "busy");
    }

    #[test]
    fn routing_errors() {
        let mut h = host();
        assert_eq!(h.handle(&WireRequest::get("/nope")).status, 404);
        assert_eq!(
            h.handle(&WireRequest::post("/api/v1/state", "{}")).status,
            405
        );
        assert_eq!(h.handle(&WireRequest::get("/api/v1/servo")).status, 405);
        assert_eq!(
            h.handle(&WireRequest::get("/api/v1/command/cmd-999999"))
                .status,
            404
        );
        let r = h.handle(&WireRequest::post(
            "/api/v1/gripper",
            r#"{"state":"open","request_id":"abc"}"#,
        ));
        assert_eq!(r.json()["request_id"], "abc");
    }

    #[test]
    fn wire_round_trip_within_servo_resolution() {
        let q = JointVector([0.3, -1.1, 0.9, 0.2, -1.5]);
        let frame = radians_to_servo(&q, 500).unwrap();
        let Command::Servo(back) = decode("servo", &encode(&Command::Servo(frame))).unwrap() else {
            panic!()
        };
        assert!(servo_to_radians(&back).unwrap().max_abs_diff(&q) <= std::f64::consts::PI / 1000.0);
    }
}
