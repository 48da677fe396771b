//! Operator control API: JSON commands over a WebSocket, or one command per
//! line on stdin. Both transports hand requests to the simulation loop over a
//! channel and wait for its reply.

use std::io::{self, BufRead};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{bounded, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tungstenite::Message;

use crate::net::NodeId;
use crate::sim::Snapshot;

const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ControlVerb {
    Join,
    Leave,
    Snapshot,
    Pause,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlCommand {
    pub verb: ControlVerb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", content = "detail")]
pub enum ControlError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("node {0} does not exist")]
    UnknownNode(u16),
    #[error("the lead truck takes no join or leave commands")]
    NotAFollower,
    #[error("{0}")]
    IllegalState(String),
    #[error("simulation is not running")]
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ControlReply {
    Ack {
        ok: bool,
        verb: ControlVerb,
        #[serde(skip_serializing_if = "Option::is_none")]
        node: Option<NodeId>,
    },
    Snapshot(Box<Snapshot>),
    Error(ControlError),
}

impl ControlReply {
    pub fn ack(cmd: ControlCommand) -> ControlReply {
        ControlReply::Ack {
            ok: true,
            verb: cmd.verb,
            node: cmd.node,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }
}

impl ControlCommand {
    pub fn new(verb: ControlVerb, node: Option<NodeId>) -> ControlCommand {
        ControlCommand { verb, node }
    }

    pub fn parse_json(text: &str) -> Result<ControlCommand, ControlError> {
        let cmd: ControlCommand =
            serde_json::from_str(text).map_err(|e| ControlError::BadRequest(e.to_string()))?;
        cmd.check()
    }

    /// Accepts JSON or the short form `join 3`, `leave 3`, `snapshot`, `pause`, `resume`.
    pub fn parse_line(line: &str) -> Result<ControlCommand, ControlError> {
        let line = line.trim();
        if line.starts_with('{') {
            return Self::parse_json(line);
        }
        let mut words = line.split_whitespace();
        let verb = match words.next().map(str::to_ascii_lowercase).as_deref() {
            Some("join" | "j") => ControlVerb::Join,
            Some("leave" | "l") => ControlVerb::Leave,
            Some("snapshot" | "s") => ControlVerb::Snapshot,
            Some("pause") => ControlVerb::Pause,
            Some("resume") => ControlVerb::Resume,
            _ => return Err(ControlError::BadRequest(format!("unknown command {line:?}"))),
        };
        let node = match words.next() {
            None => None,
            Some(w) => {
                let raw: u16 = w
                    .parse()
                    .map_err(|_| ControlError::BadRequest(format!("bad node id {w:?}")))?;
                Some(NodeId::new(raw).ok_or(ControlError::UnknownNode(raw))?)
            }
        };
        if words.next().is_some() {
            return Err(ControlError::BadRequest("trailing words".into()));
        }
        ControlCommand { verb, node }.check()
    }

    fn check(self) -> Result<ControlCommand, ControlError> {
        match (self.verb, self.node) {
            (ControlVerb::Join | ControlVerb::Leave, None) => {
                Err(ControlError::BadRequest("JOIN and LEAVE need a node".into()))
            }
            (ControlVerb::Join | ControlVerb::Leave, Some(n)) if n.is_lead() => {
                Err(ControlError::NotAFollower)
            }
            _ => Ok(self),
        }
    }
}

/// A command plus the channel its reply goes back on.
pub type Request = (ControlCommand, Sender<ControlReply>);

/// Sends one request and waits for the answer.
pub fn call(tx: &Sender<Request>, cmd: ControlCommand) -> ControlReply {
    let (reply_tx, reply_rx) = bounded(1);
    if tx.send((cmd, reply_tx)).is_err() {
        return ControlReply::Error(ControlError::Unavailable);
    }
    reply_rx
        .recv_timeout(REPLY_TIMEOUT)
        .unwrap_or(ControlReply::Error(ControlError::Unavailable))
}

/// Answer to one line of request text.
pub fn handle_text(tx: &Sender<Request>, text: &str) -> ControlReply {
    match ControlCommand::parse_json(text) {
        Ok(cmd) => call(tx, cmd),
        Err(e) => ControlReply::Error(e),
    }
}

fn serve_connection(stream: TcpStream, tx: Sender<Request>) {
    let peer = stream.peer_addr().ok();
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("websocket handshake with {peer:?} failed: {e}");
            return;
        }
    };
    loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(_) => return,
        };
        let reply = match msg {
            Message::Text(t) => handle_text(&tx, t.as_str()),
            Message::Binary(b) => match std::str::from_utf8(&b) {
                Ok(t) => handle_text(&tx, t),
                Err(_) => ControlReply::Error(ControlError::BadRequest("not UTF-8".into())),
            },
            Message::Close(_) => return,
            _ => continue,
        };
        if ws.send(Message::text(reply.to_json())).is_err() {
            return;
        }
    }
}

/// Starts a WebSocket control server. Returns the bound address.
pub fn serve_websocket(
    addr: impl ToSocketAddrs,
    tx: Sender<Request>,
) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = thread::spawn(move || {
        for stream in listener.incoming() {
            match stream {
                Ok(s) => {
                    let tx = tx.clone();
                    thread::spawn(move || serve_connection(s, tx));
                }
                Err(e) => log::warn!("control accept failed: {e}"),
            }
        }
    });
    Ok((local, handle))
}

/// Reads commands from stdin until EOF, printing each reply as a JSON line.
pub fn spawn_stdin(tx: Sender<Request>) -> JoinHandle<()> {
    thread::spawn(move || {
        let stdin = io::stdin();
        for line in stdin.lock().lines() {
            let Ok(line) = line else { return };
            if line.trim().is_empty() {
                continue;
            }
            let reply = match ControlCommand::parse_line(&line) {
                Ok(cmd) => call(&tx, cmd),
                Err(e) => ControlReply::Error(e),
            };
            println!("{}", reply.to_json());
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(i: u16) -> NodeId {
        NodeId::new(i).unwrap()
    }

    #[test]
    fn parses_json_requests() {
        assert_eq!(
            ControlCommand::parse_json(r#"{"verb":"JOIN","node":3}"#),
            Ok(ControlCommand::new(ControlVerb::Join, Some(id(3))))
        );
        assert_eq!(
            ControlCommand::parse_json(r#"{"verb":"SNAPSHOT"}"#),
            Ok(ControlCommand::new(ControlVerb::Snapshot, None))
        );
        assert!(matches!(
            ControlCommand::parse_json(r#"{"verb":"JOIN"}"#),
            Err(ControlError::BadRequest(_))
        ));
        assert_eq!(
            ControlCommand::parse_json(r#"{"verb":"LEAVE","node":1}"#),
            Err(ControlError::NotAFollower)
        );
        assert!(ControlCommand::parse_json(r#"{"verb":"FLY"}"#).is_err());
        assert!(ControlCommand::parse_json(r#"{"verb":"JOIN","node":0}"#).is_err());
    }

    #[test]
    fn parses_short_lines() {
        assert_eq!(
            ControlCommand::parse_line("join 4"),
            Ok(ControlCommand::new(ControlVerb::Join, Some(id(4))))
        );
        assert_eq!(
            ControlCommand::parse_line("  PAUSE "),
            Ok(ControlCommand::new(ControlVerb::Pause, None))
        );
        assert!(ControlCommand::parse_line("leave").is_err());
        assert!(ControlCommand::parse_line("join x").is_err());
        assert!(ControlCommand::parse_line("join 2 3").is_err());
    }

    #[test]
    fn reply_shapes() {
        let ack = ControlReply::ack(ControlCommand::new(ControlVerb::Join, Some(id(3))));
        assert_eq!(ack.to_json(), r#"{"ok":true,"verb":"JOIN","node":3}"#);
        let err = ControlReply::Error(ControlError::IllegalState("not FREE".into()));
        assert_eq!(err.to_json(), r#"{"error":"IllegalState","detail":"not FREE"}"#);
        let err = ControlReply::Error(ControlError::UnknownNode(42));
        assert_eq!(err.to_json(), r#"{"error":"UnknownNode","detail":42}"#);
    }
}
