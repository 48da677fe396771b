//! Newline-delimited JSON event log.

use std::io::{self, BufWriter, Write};

use serde::Serialize;

use crate::config::LogLevel;
use crate::control::{ControlError, ControlVerb};
use crate::metrics::Record;
use crate::net::NodeId;
use crate::node::NodeEvent;

/// Events raised by the driver rather than by a node.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Started {
        mode: &'static str,
        n_vehicles: usize,
        seed: u64,
    },
    Command {
        verb: ControlVerb,
        #[serde(skip_serializing_if = "Option::is_none")]
        target: Option<NodeId>,
        scripted: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        rejected: Option<ControlError>,
    },
    /// First line of a per-node log in multi-process runs.
    NodeUp {
        mode: &'static str,
        port: u16,
    },
    Overlap {
        a: NodeId,
        b: NodeId,
    },
    DecodeFailed {
        to: NodeId,
        reason: String,
    },
    Finished {
        total_tx: u64,
    },
}

#[derive(Serialize)]
struct Line<'a, T: Serialize> {
    t: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    node: Option<NodeId>,
    #[serde(flatten)]
    body: &'a T,
}

enum Sink {
    Memory(Vec<u8>),
    Stream(BufWriter<Box<dyn Write + Send>>),
}

pub struct EventLog {
    level: LogLevel,
    sink: Sink,
    lines: u64,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("level", &self.level)
            .field("lines", &self.lines)
            .finish()
    }
}

impl EventLog {
    pub fn memory(level: LogLevel) -> EventLog {
        EventLog {
            level,
            sink: Sink::Memory(Vec::new()),
            lines: 0,
        }
    }

    pub fn stream(level: LogLevel, w: Box<dyn Write + Send>) -> EventLog {
        EventLog {
            level,
            sink: Sink::Stream(BufWriter::new(w)),
            lines: 0,
        }
    }

    pub fn level(&self) -> LogLevel {
        self.level
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    /// The log so far, for in-memory logs.
    pub fn contents(&self) -> Option<&[u8]> {
        match &self.sink {
            Sink::Memory(v) => Some(v),
            Sink::Stream(_) => None,
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match &mut self.sink {
            Sink::Memory(_) => Ok(()),
            Sink::Stream(w) => w.flush(),
        }
    }

    fn write<T: Serialize>(&mut self, t: u64, node: Option<NodeId>, body: &T) {
        let mut line = serde_json::to_vec(&Line { t, node, body }).expect("log line serializes");
        line.push(b'\n');
        self.lines += 1;
        match &mut self.sink {
            Sink::Memory(v) => v.extend_from_slice(&line),
            Sink::Stream(w) => {
                if let Err(e) = w.write_all(&line) {
                    log::error!("event log write failed: {e}");
                }
            }
        }
    }

    pub fn node_event(&mut self, t: u64, node: NodeId, ev: &NodeEvent) {
        let wanted = match ev {
            NodeEvent::Received { .. } => LogLevel::Full,
            _ => LogLevel::Control,
        };
        if self.level >= wanted {
            self.write(t, Some(node), ev);
        }
    }

    pub fn sim_event(&mut self, t: u64, ev: &SimEvent) {
        if self.level >= LogLevel::Control {
            self.write(t, None, ev);
        }
    }

    /// A driver event attributed to one node, as in per-node logs.
    pub fn node_sim_event(&mut self, t: u64, node: NodeId, ev: &SimEvent) {
        if self.level >= LogLevel::Control {
            self.write(t, Some(node), ev);
        }
    }

    pub fn record(&mut self, t: u64, rec: &Record) {
        let wanted = match rec {
            Record::Latency { .. } => LogLevel::Control,
            _ => LogLevel::Full,
        };
        if self.level >= wanted {
            self.write(t, None, rec);
        }
    }
}
