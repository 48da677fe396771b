//! Run measures: round-trip latency from lead echoes, received throughput and
//! NORMAL delivery loss, plus the per-run report.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::NodeId;
use crate::node::Scheme;
use crate::packets::{Packet, PacketKind};

pub const CSV_HEADER: &str = "mode,n,avg_latency_ms,throughput_Bps,loss_rate,total_tx";

/// One transmission by `node`. `reach` is set for NORMAL originations: how many
/// nodes were reachable from the sender at that moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SendRecord {
    pub node: NodeId,
    pub source: NodeId,
    pub seq: u32,
    pub kind: PacketKind,
    pub t_ms: u64,
    pub size: usize,
    pub origin: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiveRecord {
    pub receiver: NodeId,
    pub source: NodeId,
    pub seq: u32,
    pub kind: PacketKind,
    pub t_ms: u64,
    pub size: usize,
    /// First copy of this NORMAL at the receiver.
    #[serde(default)]
    pub fresh: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
pub enum Record {
    Send(SendRecord),
    Receive(ReceiveRecord),
    Latency { t_ms: u64, seq: u32, rtt_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no echo round trips were matched")]
pub struct NoSamples;

pub fn avg_latency(rtts_ms: &[u64]) -> Result<f64, NoSamples> {
    if rtts_ms.is_empty() {
        return Err(NoSamples);
    }
    Ok(rtts_ms.iter().sum::<u64>() as f64 / rtts_ms.len() as f64)
}

/// Received bytes per second. Zero for an empty interval.
pub fn throughput(received_bytes: u64, duration_s: f64) -> f64 {
    if duration_s > 0.0 {
        received_bytes as f64 / duration_s
    } else {
        0.0
    }
}

/// `1 - delivered / expected`, clamped to `[0, 1]`. Nothing expected means nothing lost.
pub fn loss_rate(delivered: u64, expected: u64) -> f64 {
    if expected == 0 {
        return 0.0;
    }
    (1.0 - delivered as f64 / expected as f64).clamp(0.0, 1.0)
}

/// Whether a follower sends this NORMAL back to the lead: only packets heard
/// straight from the lead, one in `every`. `counter` counts the candidates.
pub fn latency_echo_decision(pkt: &Packet, counter: &mut u32, every: u32) -> bool {
    if pkt.kind() != PacketKind::Normal
        || pkt.source() != NodeId::LEAD
        || pkt.header.prev_hop != NodeId::LEAD
        || every == 0
    {
        return false;
    }
    *counter += 1;
    *counter % every == 0
}

/// Streaming accumulator over records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tally {
    pub total_tx: u64,
    pub received_bytes: u64,
    pub expected_normals: u64,
    pub fresh_normals: u64,
    pub rtts_ms: Vec<u64>,
}

impl Tally {
    pub fn add(&mut self, rec: &Record) {
        match rec {
            Record::Send(s) => {
                self.total_tx += 1;
                if let Some(r) = s.reach {
                    self.expected_normals += r as u64;
                }
            }
            Record::Receive(r) => {
                self.received_bytes += r.size as u64;
                if r.kind == PacketKind::Normal && r.fresh {
                    self.fresh_normals += 1;
                }
            }
            Record::Latency { rtt_ms, .. } => self.rtts_ms.push(*rtt_ms),
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.total_tx += other.total_tx;
        self.received_bytes += other.received_bytes;
        self.expected_normals += other.expected_normals;
        self.fresh_normals += other.fresh_normals;
        self.rtts_ms.extend_from_slice(&other.rtts_ms);
    }

    pub fn report(&self, mode: Scheme, n_vehicles: usize, duration_s: f64) -> RunReport {
        RunReport {
            mode,
            n_vehicles,
            avg_latency_ms: avg_latency(&self.rtts_ms).ok(),
            throughput_bps: throughput(self.received_bytes, duration_s),
            loss_rate: loss_rate(self.fresh_normals, self.expected_normals),
            total_tx: self.total_tx,
            latency_samples: self.rtts_ms.len(),
            duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Scheme,
    pub n_vehicles: usize,
    /// Mean matched round trip; absent when no echo came back.
    pub avg_latency_ms: Option<f64>,
    pub throughput_bps: f64,
    pub loss_rate: f64,
    pub total_tx: u64,
    pub latency_samples: usize,
    pub duration_s: f64,
}

impl RunReport {
    /// CSV row without the header. Missing latency is an empty field.
    pub fn csv_row(&self) -> String {
        let lat = self
            .avg_latency_ms
            .map_or(String::new(), |l| format!("{l:.3}"));
        format!(
            "{},{},{},{:.3},{:.6},{}",
            self.mode.name(),
            self.n_vehicles,
            lat,
            self.throughput_bps,
            self.loss_rate,
            self.total_tx
        )
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode            {}", self.mode.name());
        let _ = writeln!(s, "vehicles        {}", self.n_vehicles);
        let _ = writeln!(s, "duration        {:.1} s", self.duration_s);
        match self.avg_latency_ms {
            Some(l) => {
                let _ = writeln!(
                    s,
                    "avg latency     {l:.3} ms (round trip, {} echoes)",
                    self.latency_samples
                );
            }
            None => {
                let _ = writeln!(s, "avg latency     n/a (no echoes)");
            }
        }
        let _ = writeln!(s, "throughput      {:.1} B/s", self.throughput_bps);
        let _ = writeln!(
            s,
            "loss rate       {:.4} (first copies / originations x reachable receivers)",
            self.loss_rate
        );
        let _ = writeln!(s, "transmissions   {}", self.total_tx);
        s
    }
}

pub fn reports_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("reading log: {0}")]
    Io(#[from] io::Error),
    #[error("log {log} line {line}: {reason}")]
    BadLine {
        log: usize,
        line: usize,
        reason: String,
    },
    #[error("no log names the forwarding scheme; pass it explicitly")]
    UnknownMode,
}

/// Rebuilds a run report from per-node NDJSON logs. The vehicle count is the
/// number of distinct nodes seen and the duration the latest timestamp.
pub fn merge_logs<R: BufRead>(
    logs: impl IntoIterator<Item = R>,
    mode: Option<Scheme>,
) -> Result<RunReport, MergeError> {
    let mut tally = Tally::default();
    let mut nodes = BTreeSet::new();
    let mut seen_mode = mode;
    let mut last_t = 0u64;
    for (log, reader) in logs.into_iter().enumerate() {
        for (line, text) in reader.lines().enumerate() {
            let text = text?;
            if text.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| MergeError::BadLine {
                log,
                line: line + 1,
                reason,
            };
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            last_t = last_t.max(v["t"].as_u64().unwrap_or(0));
            if let Some(n) = v["node"].as_u64() {
                nodes.insert(n);
            }
            if v.get("rec").is_some() {
                let rec: Record = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
                tally.add(&rec);
            } else if seen_mode.is_none() && (v["event"] == "node_up" || v["event"] == "started") {
                seen_mode = serde_json::from_value(v["mode"].clone()).ok();
            }
        }
    }
    let mode = seen_mode.ok_or(MergeError::UnknownMode)?;
    Ok(tally.report(mode, nodes.len(), last_t as f64 / 1000.0))
}
