use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use convoi::metrics::TrajectorySource;
use convoi::runlog::{replay_mismatch, RunLog};
use convoi::service::{spawn, ServiceConfig};
use convoi::sim::RunOptions;
use convoi::world::scenario::Scenario;

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const ROOM: &str = r#"
schema_version = 1
name = "room"
goal = [8.0, 0.0]

[[terrain]]
class = "indoor_floor"
rect = [-2.0, -3.0, 10.0, 3.0]

[[obstacle]]
kind = "wall"
rect = [-2.0, 3.0, 10.0, 3.3]
"#;

async fn next_of(ws: &mut Ws, kind: &str) -> Value {
    let fut = async {
        while let Some(msg) = ws.next().await {
            if let Message::Text(t) = msg.unwrap() {
                let v: Value = serde_json::from_str(&t).unwrap();
                assert_eq!(v["version"], 1);
                if v["type"] == kind {
                    return v;
                }
            }
        }
        panic!("socket closed before a {kind} message");
    };
    tokio::time::timeout(Duration::from_secs(10), fut)
        .await
        .unwrap_or_else(|_| panic!("no {kind} message within 10 s"))
}

async fn send(ws: &mut Ws, msg: Value) {
    ws.send(Message::Text(msg.to_string())).await.unwrap();
}

#[test]
fn teleop_session_records_a_replayable_log() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::from_toml_str(ROOM, "room.toml").unwrap();
    let cfg = ServiceConfig {
        port: 0,
        record_dir: dir.path().to_path_buf(),
    };
    let handle = spawn(scenario, RunOptions::default(), cfg).unwrap();
    let url = format!("ws://127.0.0.1:{}/ws", handle.addr.port());
    // the service owns its runtime; the clients get their own
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(session(&url));
    handle.stop();
}

async fn session(url: &str) {
    let (mut ctl, _) = connect_async(url).await.unwrap();
    let hello = next_of(&mut ctl, "world_static").await;
    assert_eq!(hello["payload"]["role"], "controller");
    assert_eq!(hello["payload"]["scenario"], "room");
    assert_eq!(hello["payload"]["goal"], json!([8.0, 0.0]));
    assert_eq!(hello["payload"]["obstacles"][0]["kind"], "wall");

    let (mut viewer, _) = connect_async(url).await.unwrap();
    assert_eq!(next_of(&mut viewer, "world_static").await["payload"]["role"], "viewer");
    send(&mut viewer, json!({"type": "teleop_cmd", "payload": {"v": 0.3, "omega": 0.0}})).await;
    assert!(next_of(&mut viewer, "error").await["payload"]["message"].is_string());

    // malformed input is answered, not fatal
    ctl.send(Message::Text("{not json".into())).await.unwrap();
    next_of(&mut ctl, "error").await;
    send(&mut ctl, json!({"type": "teleop_cmd", "payload": {"v": 0.3, "omega": 0.0, "x": 1}})).await;
    next_of(&mut ctl, "error").await;

    let state = next_of(&mut ctl, "state").await;
    assert_eq!(state["payload"]["mode"], "teleop");
    send(&mut ctl, json!({"type": "record_start", "payload": {"name": "gt"}})).await;
    for _ in 0..25 {
        send(&mut ctl, json!({"type": "teleop_cmd", "payload": {"v": 5.0, "omega": 0.0}})).await;
        let s = next_of(&mut ctl, "state").await;
        assert!(s["payload"]["cmd"]["v"].as_f64().unwrap() <= 0.3 + 1e-9, "clamped to v_max");
        tokio::time::sleep(Duration::from_millis(80)).await;
    }
    let moving = next_of(&mut ctl, "state").await;
    assert_eq!(moving["payload"]["recording"], true);
    assert!(moving["payload"]["pose"]["x"].as_f64().unwrap() > 0.2, "{moving}");

    send(&mut ctl, json!({"type": "record_stop"})).await;
    let path = loop {
        let s = next_of(&mut ctl, "state").await;
        if let Some(p) = s["payload"]["last_recording"].as_str() {
            assert_eq!(s["payload"]["recording"], false);
            break p.to_string();
        }
    };
    assert!(path.ends_with("gt/run.jsonl"), "{path}");
    let log = RunLog::read(std::path::Path::new(&path)).unwrap();
    assert_eq!(log.header.source, TrajectorySource::Teleop);
    assert!(log.ticks.len() > 10);
    assert_eq!(replay_mismatch(&log), None);

    // teleop commands are refused while the navigator drives
    send(&mut ctl, json!({"type": "mode", "payload": {"mode": "autonomous"}})).await;
    loop {
        if next_of(&mut ctl, "state").await["payload"]["mode"] == "autonomous" {
            break;
        }
    }
    send(&mut ctl, json!({"type": "teleop_cmd", "payload": {"v": 0.3, "omega": 0.0}})).await;
    next_of(&mut ctl, "error").await;

    // the viewer takes over when the controller leaves
    ctl.close(None).await.unwrap();
    drop(ctl);
    assert_eq!(next_of(&mut viewer, "world_static").await["payload"]["role"], "controller");
}
