use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use tissuesplat::evalio::{to_rgb8, SyntheticScene, SyntheticSpec};
use tissuesplat::pipeline::{self, Preset, SlamConfig, Snapshot, SnapshotHub};
use tissuesplat::rasterizer::{render, RenderOptions};
use tissuesplat::{GaussianMap, Pose};
use tissuesplat_server::{spawn, ServerConfig, ServerMessage};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn tiny_spec(frames: usize) -> SyntheticSpec {
    SyntheticSpec {
        frames,
        width: 32,
        height: 24,
        focal: 16.0,
        ..Default::default()
    }
}

fn fast_config() -> SlamConfig {
    let mut cfg = SlamConfig::preset(Preset::R);
    cfg.tracking.iterations = 2;
    cfg.refine.iterations = 2;
    cfg
}

/// Hub holding the map reconstructed from a short synthetic run.
fn reconstructed_hub(frames: usize) -> Arc<SnapshotHub<f64>> {
    let data = SyntheticScene::new(tiny_spec(frames)).unwrap().dataset().unwrap();
    let state = pipeline::run(data.frames.into_iter().map(Ok), data.camera, &fast_config(), None).unwrap();
    SnapshotHub::for_saved_map(state.map.clone(), state.last_pose(), state.camera)
}

fn connect(addr: SocketAddr, query: &str) -> Client {
    let (mut ws, _) = tungstenite::connect(format!("ws://{addr}/{query}")).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_mut() {
        s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
    }
    ws
}

fn send(ws: &mut Client, text: String) {
    ws.send(Message::text(text)).unwrap();
}

fn recv(ws: &mut Client) -> ServerMessage {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            Message::Ping(_) | Message::Pong(_) => {}
            other => panic!("unexpected frame {other:?}"),
        }
    }
}

/// Next message that is not a status record.
fn recv_reply(ws: &mut Client) -> ServerMessage {
    loop {
        match recv(ws) {
            ServerMessage::Status(_) => {}
            m => return m,
        }
    }
}

fn request(id: u64, pose: &Pose<f64>, width: usize, height: usize) -> String {
    serde_json::json!({
        "type": "view_request",
        "id": id,
        "pose": pose.to_tum(),
        "width": width,
        "height": height,
    })
    .to_string()
}

fn decode_rgb(b64: &str) -> Vec<u8> {
    let bytes = BASE64.decode(b64).unwrap();
    image::load_from_memory(&bytes).unwrap().to_rgb8().into_raw()
}

#[test]
fn render_at_tracked_pose_matches_engine_bit_exactly() {
    let hub = reconstructed_hub(4);
    let (addr, _) = spawn("127.0.0.1:0", Arc::clone(&hub), ServerConfig::default()).unwrap();
    let mut ws = connect(addr, "");
    let snap = hub.latest();
    let cam = snap.camera;
    send(&mut ws, request(1, &snap.pose, cam.width, cam.height));
    let ServerMessage::ViewResponse(resp) = recv_reply(&mut ws) else {
        panic!("expected a view_response")
    };
    assert_eq!((resp.id, resp.width, resp.height), (1, cam.width, cam.height));
    let internal = render(&snap.map, &snap.pose, &cam, &RenderOptions::default()).unwrap();
    assert_eq!(decode_rgb(&resp.color_png), to_rgb8(&internal.color));
    let depth = image::load_from_memory(&BASE64.decode(&resp.depth_png).unwrap()).unwrap();
    assert_eq!(
        (depth.width() as usize, depth.height() as usize),
        (cam.width, cam.height)
    );
    assert!(resp.depth_max > 0.0);
}

#[test]
fn orbit_of_100_requests_answered_in_order() {
    let hub = reconstructed_hub(3);
    let (addr, _) = spawn("127.0.0.1:0", Arc::clone(&hub), ServerConfig::default()).unwrap();
    let mut ws = connect(addr, "");
    let center = hub.latest().pose;
    for id in 0..100u64 {
        let angle = id as f64 * std::f64::consts::TAU / 100.0;
        let yaw = tissuesplat::Quat::from_axis_angle(tissuesplat::Vec3::new(0.0, 1.0, 0.0), 0.2 * angle.sin());
        let offset = tissuesplat::Vec3::new(0.002 * angle.cos(), 0.002 * angle.sin(), 0.0);
        let pose = Pose::new(center.rotation.mul(yaw).normalized(), center.translation + offset);
        send(&mut ws, request(id, &pose, 24, 18));
    }
    for id in 0..100u64 {
        match recv_reply(&mut ws) {
            ServerMessage::ViewResponse(r) => assert_eq!((r.id, r.width, r.height), (id, 24, 18)),
            other => panic!("request {id}: {other:?}"),
        }
    }
}

#[test]
fn protocol_errors_keep_connection_open() {
    let hub = SnapshotHub::for_saved_map(GaussianMap::<f64>::new(), Pose::identity(), tiny_spec(1).camera());
    let cfg = ServerConfig {
        max_width: 64,
        max_height: 64,
        ..ServerConfig::default()
    };
    let (addr, _) = spawn("127.0.0.1:0", hub, cfg).unwrap();
    let mut ws = connect(addr, "");

    let bad_quat = r#"{"type":"view_request","id":5,"pose":[0,0,0,0,0,0,2],"width":8,"height":8}"#;
    send(&mut ws, bad_quat.into());
    match recv_reply(&mut ws) {
        ServerMessage::Error(e) => {
            assert_eq!(e.id, Some(5));
            assert!(e.message.contains("normalized"));
        }
        other => panic!("{other:?}"),
    }
    send(&mut ws, "not json".into());
    assert!(matches!(recv_reply(&mut ws), ServerMessage::Error(e) if e.id.is_none()));
    send(
        &mut ws,
        r#"{"type":"view_request","id":6,"pose":[0,0,0],"width":8,"height":8}"#.into(),
    );
    assert!(matches!(recv_reply(&mut ws), ServerMessage::Error(e) if e.id == Some(6)));
    send(&mut ws, request(7, &Pose::identity(), 65, 8));
    assert!(matches!(recv_reply(&mut ws), ServerMessage::Error(e) if e.message.contains("exceeds")));

    send(&mut ws, request(8, &Pose::identity(), 8, 8));
    match recv_reply(&mut ws) {
        ServerMessage::ViewResponse(r) => {
            assert_eq!(r.id, 8);
            // Empty map renders black.
            assert!(decode_rgb(&r.color_png).iter().all(|&v| v == 0));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn saved_map_sends_single_status_then_silence() {
    let hub = reconstructed_hub(2);
    let (addr, _) = spawn("127.0.0.1:0", hub, ServerConfig::default()).unwrap();
    let mut ws = connect(addr, "");
    assert!(matches!(recv(&mut ws), ServerMessage::Status(s) if s.frame_index == 0));
    if let MaybeTlsStream::Plain(s) = ws.get_mut() {
        s.set_read_timeout(Some(Duration::from_millis(300))).unwrap();
    }
    match ws.read() {
        Err(tungstenite::Error::Io(e)) => {
            assert!(matches!(
                e.kind(),
                std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
            ))
        }
        other => panic!("expected silence, got {other:?}"),
    }
}

fn collect_statuses(ws: &mut Client, until_frame: u32, stop_after: Option<usize>) -> Vec<u32> {
    let mut seen = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(300);
    while Instant::now() < deadline {
        if let ServerMessage::Status(s) = recv(ws) {
            seen.push(s.frame_index);
            if s.frame_index == until_frame || Some(seen.len()) == stop_after {
                break;
            }
        }
    }
    seen
}

fn live_run(frames: usize) -> (SocketAddr, Arc<SnapshotHub<f64>>, std::thread::JoinHandle<()>) {
    let data = SyntheticScene::new(tiny_spec(frames)).unwrap().dataset().unwrap();
    let hub = SnapshotHub::new(Snapshot {
        frame_index: 0,
        map: Arc::new(GaussianMap::new()),
        pose: Pose::identity(),
        camera: data.camera,
    });
    let (addr, _) = spawn("127.0.0.1:0", Arc::clone(&hub), ServerConfig::default()).unwrap();
    let run_hub = Arc::clone(&hub);
    let frames = data.frames;
    let camera = data.camera;
    let runner = std::thread::spawn(move || {
        // Give the test a moment to connect before frame 0 is published.
        std::thread::sleep(Duration::from_millis(200));
        let paced = frames.into_iter().map(|f| {
            std::thread::sleep(Duration::from_millis(5));
            Ok(f)
        });
        pipeline::run(paced, camera, &fast_config(), Some(run_hub)).unwrap();
    });
    (addr, hub, runner)
}

#[test]
fn fifty_frame_run_streams_fifty_statuses() {
    let (addr, hub, runner) = live_run(50);
    let mut ws = connect(addr, "");
    let seen = collect_statuses(&mut ws, 49, None);
    runner.join().unwrap();
    assert_eq!(seen, (0..50).collect::<Vec<u32>>());
    assert_eq!(hub.status_count(), 50);
}

#[test]
fn reconnect_resumes_without_duplicates() {
    let (addr, _hub, runner) = live_run(50);
    let mut first = connect(addr, "");
    let mut seen = collect_statuses(&mut first, 49, Some(20));
    drop(first);
    let last = *seen.last().unwrap();
    let mut second = connect(addr, &format!("?since={last}"));
    seen.extend(collect_statuses(&mut second, 49, None));
    runner.join().unwrap();
    assert_eq!(seen, (0..50).collect::<Vec<u32>>());
}
