use std::net::TcpStream;
use std::thread;

use crossbeam_channel::unbounded;
use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};

use roadtrain::config::ScenarioConfig;
use roadtrain::control::serve_websocket;
use roadtrain::sim::{run_live, Simulation};

fn ask(ws: &mut WebSocket<MaybeTlsStream<TcpStream>>, req: &str) -> Value {
    ws.send(Message::text(req)).unwrap();
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            _ => continue,
        }
    }
}

#[test]
fn json_commands_over_websocket() {
    let mut cfg = ScenarioConfig {
        n_followers: 3,
        duration_s: 30,
        scripted: false,
        ..Default::default()
    };
    cfg.medium.loss_max = 0.0;
    let mut sim = Simulation::new(cfg).unwrap();
    let (tx, rx) = unbounded();
    let (addr, _server) = serve_websocket("127.0.0.1:0", tx).unwrap();
    let runner = thread::spawn(move || {
        run_live(&mut sim, rx, 1000.0);
        sim
    });
    let (mut ws, _) = connect(format!("ws://{addr}")).unwrap();

    assert_eq!(ask(&mut ws, r#"{"verb":"PAUSE"}"#), json!({"ok": true, "verb": "PAUSE"}));
    let snap = ask(&mut ws, r#"{"verb":"SNAPSHOT"}"#);
    assert_eq!(snap["mode"], "mpr");
    assert_eq!(snap["paused"], true);
    assert_eq!(snap["train"], json!([1]));
    let vehicles = snap["vehicles"].as_array().unwrap();
    assert_eq!(vehicles.len(), 4);
    assert_eq!(vehicles[0]["id"], 1);
    assert_eq!(vehicles[0]["lane"], "RIGHT");
    assert_eq!(vehicles[0]["mode"], "LEAD");
    assert!(vehicles[0]["x"].is_number() && vehicles[0]["v"].is_number());
    let t_paused = snap["t_ms"].as_u64().unwrap();

    assert_eq!(
        ask(&mut ws, r#"{"verb":"JOIN","node":3}"#),
        json!({"ok": true, "verb": "JOIN", "node": 3})
    );
    let err = ask(&mut ws, r#"{"verb":"LEAVE","node":2}"#);
    assert_eq!(err["error"], "IllegalState");
    assert_eq!(ask(&mut ws, r#"{"verb":"JOIN","node":9}"#)["error"], "UnknownNode");
    assert_eq!(ask(&mut ws, r#"{"verb":"JOIN","node":1}"#)["error"], "NotAFollower");
    assert_eq!(ask(&mut ws, r#"{"verb":"JOIN"}"#)["error"], "BadRequest");
    assert_eq!(ask(&mut ws, "not json")["error"], "BadRequest");
    let still = ask(&mut ws, r#"{"verb":"SNAPSHOT"}"#);
    assert_eq!(still["t_ms"].as_u64(), Some(t_paused), "clock stopped while paused");

    assert_eq!(ask(&mut ws, r#"{"verb":"RESUME"}"#)["ok"], true);
    let sim = runner.join().unwrap();
    assert!(sim.is_done());
    assert_eq!(sim.train().iter().map(|n| n.get()).collect::<Vec<_>>(), vec![1, 3]);
    ws.close(None).ok();
}
