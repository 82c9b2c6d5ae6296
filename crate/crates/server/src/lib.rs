//! WebSocket service that renders the latest map snapshot at poses chosen by
//! a viewer and streams per-frame status records.
//!
//! Every message is a JSON text frame with a `type` tag.
//!
//! Client to engine:
//! ```json
//! {"type": "view_request", "id": 7, "pose": [tx, ty, tz, qx, qy, qz, qw], "width": 320, "height": 240}
//! ```
//!
//! Engine to client:
//! ```json
//! {"type": "view_response", "id": 7, "frame_index": 41, "width": 320, "height": 240,
//!  "color_png": "<base64>", "depth_png": "<base64>", "depth_max": 0.11}
//! {"type": "status", "frame_index": 41, "map_size": 9120, "pose": [...], "tracking_loss": 812.5,
//!  "tracking_ms": 40.1, "mapping_ms": 310.7, "untrackable": false}
//! {"type": "error", "id": 7, "message": "quaternion is not normalized (|q| = 1.2)"}
//! ```
//!
//! The pose is camera-to-world in the map frame. The depth preview is an
//! 8-bit grayscale PNG where brightness falls linearly from the camera to
//! `depth_max` and pixels without rendered depth are black.
//!
//! A connection to `/?since=<frame_index>` receives every status after that
//! frame; a bare connection starts from the most recent one. Errors never
//! close the connection.

use std::io;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tissuesplat::evalio::encode_png;
use tissuesplat::pipeline::{SnapshotHub, StatusFrame};
use tissuesplat::rasterizer::{render, RenderOptions};
use tissuesplat::{Image, Pose, Scalar};
use tungstenite::handshake::server::{Request, Response};
use tungstenite::{Message, WebSocket};

/// Version of the message schema in this module's documentation.
pub const PROTOCOL_VERSION: u32 = 1;

/// Allowed deviation of `|q|` from 1 in a view request.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("websocket: {0}")]
    WebSocket(Box<tungstenite::Error>),
}

impl From<tungstenite::Error> for ServerError {
    fn from(e: tungstenite::Error) -> Self {
        ServerError::WebSocket(Box::new(e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRequest {
    pub id: u64,
    /// `tx ty tz qx qy qz qw`, camera-to-world.
    pub pose: [f64; 7],
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewResponse {
    pub id: u64,
    /// Frame index of the snapshot that was rendered.
    pub frame_index: u32,
    pub width: usize,
    pub height: usize,
    /// Base64 RGB8 PNG.
    pub color_png: String,
    /// Base64 grayscale PNG, see the module documentation.
    pub depth_png: String,
    pub depth_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    /// Id of the offending request when it could be read.
    pub id: Option<u64>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    ViewRequest(ViewRequest),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    ViewResponse(ViewResponse),
    Status(StatusFrame),
    Error(ErrorMessage),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ServerConfig {
    pub max_width: usize,
    pub max_height: usize,
    /// How often an idle connection checks for new status records.
    pub poll_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_width: 1920,
            max_height: 1080,
            poll_interval: Duration::from_millis(20),
        }
    }
}

impl ViewRequest {
    /// Checks the request against the protocol rules and returns the pose.
    pub fn validate<S: Scalar>(&self, cfg: &ServerConfig) -> Result<Pose<S>, String> {
        if self.pose.iter().any(|v| !v.is_finite()) {
            return Err("pose contains a non-finite value".into());
        }
        let norm = self.pose[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(format!("quaternion is not normalized (|q| = {norm})"));
        }
        if self.width == 0 || self.height == 0 {
            return Err("resolution must be at least 1x1".into());
        }
        if self.width > cfg.max_width || self.height > cfg.max_height {
            return Err(format!(
                "resolution {}x{} exceeds the maximum {}x{}",
                self.width, self.height, cfg.max_width, cfg.max_height
            ));
        }
        Ok(Pose::from_tum(self.pose.map(S::lit)))
    }
}

/// Renders the hub's latest snapshot for `req`; protocol violations and
/// render failures come back as an [`ErrorMessage`].
pub fn answer<S: Scalar>(hub: &SnapshotHub<S>, req: &ViewRequest, cfg: &ServerConfig) -> ServerMessage {
    match render_view(hub, req, cfg) {
        Ok(resp) => ServerMessage::ViewResponse(resp),
        Err(message) => ServerMessage::Error(ErrorMessage {
            id: Some(req.id),
            message,
        }),
    }
}

fn render_view<S: Scalar>(hub: &SnapshotHub<S>, req: &ViewRequest, cfg: &ServerConfig) -> Result<ViewResponse, String> {
    let pose = req.validate::<S>(cfg)?;
    let snapshot = hub.latest();
    let camera = snapshot.camera.resized(req.width, req.height);
    let out = render(&snapshot.map, &pose, &camera, &RenderOptions::default()).map_err(|e| e.to_string())?;
    let color = encode_png(&out.color).map_err(|e| e.to_string())?;
    let (depth, depth_max) = encode_depth_preview(&out.depth)?;
    Ok(ViewResponse {
        id: req.id,
        frame_index: snapshot.frame_index,
        width: req.width,
        height: req.height,
        color_png: BASE64.encode(color),
        depth_png: BASE64.encode(depth),
        depth_max,
    })
}

/// 8-bit grayscale PNG of a depth image, near = bright; returns the bytes
/// and the depth mapped to the darkest non-zero level.
pub fn encode_depth_preview<S: Scalar>(depth: &Image<S>) -> Result<(Vec<u8>, f64), String> {
    let max = depth.data().iter().map(|d| d.as_f64()).fold(0.0, f64::max);
    let gray: Vec<u8> = depth
        .data()
        .iter()
        .map(|d| {
            let d = d.as_f64();
            if d > 0.0 && max > 0.0 {
                (255.0 - 254.0 * (d / max)).round() as u8
            } else {
                0
            }
        })
        .collect();
    let mut bytes = Vec::new();
    image::write_buffer_with_format(
        &mut io::Cursor::new(&mut bytes),
        &gray,
        depth.width() as u32,
        depth.height() as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| e.to_string())?;
    Ok((bytes, max))
}

/// Answers one text frame from a client.
pub fn handle_text<S: Scalar>(hub: &SnapshotHub<S>, text: &str, cfg: &ServerConfig) -> ServerMessage {
    match serde_json::from_str::<ClientMessage>(text) {
        Ok(ClientMessage::ViewRequest(req)) => answer(hub, &req, cfg),
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(text)
                .ok()
                .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64));
            ServerMessage::Error(ErrorMessage {
                id,
                message: format!("malformed message: {e}"),
            })
        }
    }
}

/// Where a new connection's status stream starts.
fn initial_cursor<S: Scalar>(hub: &SnapshotHub<S>, since: Option<u32>) -> usize {
    match since {
        Some(after) => {
            let log = hub.status_since(0);
            log.iter().position(|s| s.frame_index > after).unwrap_or(log.len())
        }
        None => hub.status_count().saturating_sub(1),
    }
}

fn parse_since(query: Option<&str>) -> Option<u32> {
    query?
        .split('&')
        .find_map(|kv| kv.strip_prefix("since="))
        .and_then(|v| v.parse().ok())
}

/// Serves one accepted TCP connection until the client goes away.
pub fn handle_connection<S: Scalar + Send + Sync + 'static>(
    stream: TcpStream,
    hub: Arc<SnapshotHub<S>>,
    cfg: ServerConfig,
) -> Result<(), ServerError> {
    let mut since = None;
    // The callback signature is fixed by tungstenite.
    #[allow(clippy::result_large_err)]
    let callback = |req: &Request, resp: Response| {
        since = parse_since(req.uri().query());
        Ok(resp)
    };
    let mut ws = tungstenite::accept_hdr(stream, callback).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e.into(),
        tungstenite::HandshakeError::Interrupted(_) => ServerError::Io(io::ErrorKind::WouldBlock.into()),
    })?;
    ws.get_ref().set_read_timeout(Some(cfg.poll_interval))?;
    ws.get_ref().set_nodelay(true)?;
    let mut cursor = initial_cursor(&*hub, since);
    loop {
        for status in hub.status_since(cursor) {
            cursor += 1;
            send(&mut ws, &ServerMessage::Status(status))?;
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = handle_text(&*hub, text.as_str(), &cfg);
                send(&mut ws, &reply)?;
            }
            Ok(Message::Binary(_)) => send(
                &mut ws,
                &ServerMessage::Error(ErrorMessage {
                    id: None,
                    message: "binary frames are not part of the protocol".into(),
                }),
            )?,
            Ok(Message::Close(_)) => {
                // Let tungstenite finish the close handshake.
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> Result<(), ServerError> {
    ws.send(Message::text(msg.to_json()))?;
    Ok(())
}

/// Accepts connections forever, one thread per client.
pub fn serve<S: Scalar + Send + Sync + 'static>(
    listener: TcpListener,
    hub: Arc<SnapshotHub<S>>,
    cfg: ServerConfig,
) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let hub = Arc::clone(&hub);
        std::thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(stream, hub, cfg) {
                eprintln!("connection {peer:?}: {e}");
            }
        });
    }
    Ok(())
}

/// Binds `addr` and serves on a background thread; returns the bound
/// address (useful with port 0) and the thread handle.
pub fn spawn<S: Scalar + Send + Sync + 'static>(
    addr: impl ToSocketAddrs,
    hub: Arc<SnapshotHub<S>>,
    cfg: ServerConfig,
) -> io::Result<(std::net::SocketAddr, JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((local, std::thread::spawn(move || serve(listener, hub, cfg))))
}
