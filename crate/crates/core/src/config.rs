//! Scenario configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlCommand, ControlVerb};
use crate::net::{MediumConfig, NodeId};
use crate::node::{NodeConfig, Scheme};
use crate::olsr::TieBreak;

pub const MAX_FOLLOWERS: usize = 10;
/// Followers start this far apart on the left lane, ahead of the lead.
pub const FOLLOWER_SPACING_M: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Inproc,
    Udp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Off,
    /// Control-plane events: mode and train changes, special packets, latency.
    Control,
    /// Also every transmission and reception.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timers {
    pub normal_ms: u64,
    pub hello_ms: u64,
    pub tc_ms: u64,
    pub registry_read_ms: u64,
    pub registry_write_s: u64,
}

impl Default for Timers {
    fn default() -> Self {
        Timers {
            normal_ms: 10,
            hello_ms: 20,
            tc_ms: 30,
            registry_read_ms: 50,
            registry_write_s: 5,
        }
    }
}

/// An operator command replayed at a fixed virtual time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedCommand {
    pub at_ms: u64,
    pub verb: ControlVerb,
    #[serde(default)]
    pub node: Option<NodeId>,
}

impl TimedCommand {
    pub fn command(&self) -> ControlCommand {
        ControlCommand {
            verb: self.verb,
            node: self.node,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Scheme,
    pub transport: Transport,
    pub n_followers: usize,
    pub duration_s: u64,
    pub seed: u64,
    pub medium: MediumConfig,
    pub timers: Timers,
    pub scripted: bool,
    /// Per follower, 5 or 10 m. Missing entries default to 5 m.
    pub follower_lengths: Vec<f64>,
    /// Lowest-id tie break in MPR selection instead of a seeded random pick.
    pub deterministic_mpr: bool,
    pub initial_speed: f64,
    pub form_timeout_ms: u64,
    pub echo_every: u32,
    pub neighbor_hold_ms: u64,
    pub topology_hold_ms: u64,
    pub log_level: LogLevel,
    pub lead_x: f64,
    /// Starting positions of the followers; by default `30 m * k` for follower k.
    pub follower_x: Option<Vec<f64>>,
    pub commands: Vec<TimedCommand>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Scheme::Mpr,
            transport: Transport::Inproc,
            n_followers: 4,
            duration_s: 300,
            seed: 0,
            medium: MediumConfig::default(),
            timers: Timers::default(),
            scripted: true,
            follower_lengths: Vec::new(),
            deterministic_mpr: false,
            initial_speed: 30.0,
            form_timeout_ms: 8000,
            echo_every: 10,
            neighbor_hold_ms: 100,
            topology_hold_ms: 90,
            log_level: LogLevel::Control,
            lead_x: 10.0,
            follower_x: None,
            commands: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_followers == 0 || self.n_followers > MAX_FOLLOWERS {
            return invalid(format!(
                "n_followers must be between 1 and {MAX_FOLLOWERS}, got {}",
                self.n_followers
            ));
        }
        if self.duration_s == 0 {
            return invalid("duration_s must be positive");
        }
        let t = &self.timers;
        for (name, v) in [
            ("normal_ms", t.normal_ms),
            ("hello_ms", t.hello_ms),
            ("tc_ms", t.tc_ms),
            ("registry_read_ms", t.registry_read_ms),
            ("registry_write_s", t.registry_write_s),
            ("form_timeout_ms", self.form_timeout_ms),
            ("neighbor_hold_ms", self.neighbor_hold_ms),
            ("topology_hold_ms", self.topology_hold_ms),
        ] {
            if v == 0 {
                return invalid(format!("{name} must be positive"));
            }
        }
        self.medium
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.follower_lengths.len() > self.n_followers {
            return invalid("more follower_lengths than followers");
        }
        if let Some(l) = self.follower_lengths.iter().find(|&&l| l != 5.0 && l != 10.0) {
            return invalid(format!("follower length must be 5 or 10, got {l}"));
        }
        if let Some(xs) = &self.follower_x {
            if xs.len() != self.n_followers {
                return invalid("follower_x must list every follower");
            }
        }
        if !(self.initial_speed >= 0.0 && self.initial_speed.is_finite()) {
            return invalid("initial_speed must be non-negative");
        }
        for c in &self.commands {
            match (c.verb, c.node) {
                (ControlVerb::Join | ControlVerb::Leave, None) => {
                    return invalid(format!("command at {} ms needs a node", c.at_ms))
                }
                (ControlVerb::Join | ControlVerb::Leave, Some(n))
                    if n.is_lead() || n.get() as usize > self.n_followers + 1 =>
                {
                    return invalid(format!("command at {} ms targets a non-follower {n}", c.at_ms))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n_vehicles(&self) -> usize {
        self.n_followers + 1
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_s * 1000
    }

    pub fn follower_length(&self, k: usize) -> f64 {
        self.follower_lengths.get(k).copied().unwrap_or(5.0)
    }

    /// Starting x of follower `k` (0-based).
    pub fn follower_start(&self, k: usize) -> f64 {
        match &self.follower_x {
            Some(xs) => xs[k],
            None => FOLLOWER_SPACING_M * (k + 1) as f64,
        }
    }

    pub fn node_config(&self) -> NodeConfig {
        NodeConfig {
            scheme: self.mode,
            normal_ms: self.timers.normal_ms,
            hello_ms: self.timers.hello_ms,
            tc_ms: self.timers.tc_ms,
            neighbor_hold_ms: self.neighbor_hold_ms,
            topology_hold_ms: self.topology_hold_ms,
            tie: if self.deterministic_mpr {
                TieBreak::LowestId
            } else {
                TieBreak::Random
            },
            form_timeout_ms: self.form_timeout_ms,
            echo_every: self.echo_every,
            special_hold_ms: 1000,
            seed: self.seed,
        }
    }
}
