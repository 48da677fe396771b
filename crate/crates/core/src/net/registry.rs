//! Shared node registry file.
//!
//! One line per node, space separated, in the form
//! `Node <id> <host>, <port> <x> <y> links <id> <id> ...`. Every access takes an
//! advisory lock on a sidecar `<file>.lock`, shared for reads and exclusive for
//! writes; writers replace the whole file through a rename so readers never see
//! a half-written line.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use super::geometry::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub node: NodeId,
    pub host: String,
    pub port: u16,
    pub x: f64,
    pub y: f64,
    pub links: Vec<NodeId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed registry line {line:?}: {reason}")]
pub struct ParseError {
    pub line: String,
    pub reason: &'static str,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry I/O: {0}")]
    Io(#[from] io::Error),
    #[error("no lead truck registered; start the leading node first")]
    NoLead,
    #[error("node id space exhausted")]
    Exhausted,
}

impl fmt::Display for RegistryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Node {} {}, {} {} {} links",
            self.node, self.host, self.port, self.x, self.y
        )?;
        for l in &self.links {
            write!(f, " {l}")?;
        }
        Ok(())
    }
}

impl FromStr for RegistryEntry {
    type Err = ParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseError {
            line: line.to_string(),
            reason,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 7 {
            return Err(err("too few fields"));
        }
        if tokens[0] != "Node" {
            return Err(err("missing Node keyword"));
        }
        let node = tokens[1]
            .parse::<u16>()
            .ok()
            .and_then(NodeId::new)
            .ok_or_else(|| err("bad node id"))?;
        let host = tokens[2]
            .strip_suffix(',')
            .filter(|h| !h.is_empty())
            .ok_or_else(|| err("host must end with a comma"))?;
        let port = tokens[3].parse().map_err(|_| err("bad port"))?;
        let x: f64 = tokens[4].parse().map_err(|_| err("bad x"))?;
        let y: f64 = tokens[5].parse().map_err(|_| err("bad y"))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(err("non-finite coordinate"));
        }
        if tokens[6] != "links" {
            return Err(err("missing links keyword"));
        }
        let links = tokens[7..]
            .iter()
            .map(|t| t.parse::<u16>().ok().and_then(NodeId::new))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err("bad link id"))?;
        Ok(RegistryEntry {
            node,
            host: host.to_string(),
            port,
            x,
            y,
            links,
        })
    }
}

/// Handle on a registry file. Cheap to clone; holds no open descriptors.
#[derive(Debug, Clone)]
pub struct Registry {
    path: PathBuf,
    lock_path: PathBuf,
}

impl Registry {
    pub fn new(path: impl Into<PathBuf>) -> Registry {
        let path = path.into();
        let mut lock = path.clone().into_os_string();
        lock.push(".lock");
        Registry {
            path,
            lock_path: lock.into(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn lock_file(&self) -> io::Result<File> {
        OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(&self.lock_path)
    }

    /// Erases the registry. The lead truck does this once at startup.
    pub fn truncate(&self) -> Result<(), RegistryError> {
        let lock = self.lock_file()?;
        lock.lock()?;
        let res = self.replace_contents(&[]);
        lock.unlock()?;
        res
    }

    pub fn read(&self) -> Result<Vec<RegistryEntry>, RegistryError> {
        let lock = self.lock_file()?;
        lock.lock_shared()?;
        let res = self.read_unlocked();
        lock.unlock()?;
        res
    }

    /// Replaces (or appends) the line for `entry.node`.
    pub fn write(&self, entry: &RegistryEntry) -> Result<(), RegistryError> {
        let lock = self.lock_file()?;
        lock.lock()?;
        let res = self.upsert_unlocked(entry);
        lock.unlock()?;
        res
    }

    /// Registers a follower: requires the lead to be present and assigns the next free id.
    pub fn register_follower(
        &self,
        make_entry: impl FnOnce(NodeId) -> RegistryEntry,
    ) -> Result<RegistryEntry, RegistryError> {
        let lock = self.lock_file()?;
        lock.lock()?;
        let res = (|| {
            let entries = self.read_unlocked()?;
            if !entries.iter().any(|e| e.node.is_lead()) {
                return Err(RegistryError::NoLead);
            }
            let next = entries.iter().map(|e| e.node.get()).max().unwrap_or(1) + 1;
            let id = NodeId::new(next).ok_or(RegistryError::Exhausted)?;
            let entry = make_entry(id);
            self.upsert_unlocked(&entry)?;
            Ok(entry)
        })();
        lock.unlock()?;
        res
    }

    fn read_unlocked(&self) -> Result<Vec<RegistryEntry>, RegistryError> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| match l.parse::<RegistryEntry>() {
                Ok(e) => Some(e),
                Err(e) => {
                    log::warn!("skipping registry line: {e}");
                    None
                }
            })
            .collect())
    }

    fn upsert_unlocked(&self, entry: &RegistryEntry) -> Result<(), RegistryError> {
        let mut entries = self.read_unlocked()?;
        match entries.iter_mut().find(|e| e.node == entry.node) {
            Some(slot) => *slot = entry.clone(),
            None => entries.push(entry.clone()),
        }
        entries.sort_by_key(|e| e.node);
        self.replace_contents(&entries)
    }

    fn replace_contents(&self, entries: &[RegistryEntry]) -> Result<(), RegistryError> {
        let mut tmp = self.path.clone().into_os_string();
        tmp.push(format!(".tmp{}", std::process::id()));
        let tmp = PathBuf::from(tmp);
        {
            let mut f = File::create(&tmp)?;
            for e in entries {
                writeln!(f, "{e}")?;
            }
            f.sync_data()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(i: u16) -> NodeId {
        NodeId::new(i).unwrap()
    }

    #[test]
    fn parses_table_rows() {
        let e: RegistryEntry = "Node 2 tux055, 10011 80 120 links 1 3 4".parse().unwrap();
        assert_eq!(e.node, id(2));
        assert_eq!(e.host, "tux055");
        assert_eq!(e.port, 10011);
        assert_eq!((e.x, e.y), (80.0, 120.0));
        assert_eq!(e.links, vec![id(1), id(3), id(4)]);
        assert_eq!(e.to_string(), "Node 2 tux055, 10011 80 120 links 1 3 4");
    }

    #[test]
    fn empty_links_round_trip() {
        let e: RegistryEntry = "Node 7 localhost, 4000 12.5 5 links".parse().unwrap();
        assert!(e.links.is_empty());
        assert_eq!(e.to_string().parse::<RegistryEntry>().unwrap(), e);
    }

    #[test]
    fn rejects_malformed_lines() {
        for bad in [
            "",
            "Node x tux, 1 2 3 links",
            "Node 1 tux 10 2 3 links",
            "Vehicle 1 tux, 10 2 3 links",
            "Node 1 tux, 10 2 3 link",
            "Node 1 tux, 99999 2 3 links",
            "Node 1 tux, 10 2 3 links 0",
        ] {
            assert!(bad.parse::<RegistryEntry>().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn write_then_read_matches_table_row() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::new(dir.path().join("vanet.conf"));
        assert!(reg.read().unwrap().is_empty());
        let lead = RegistryEntry {
            node: id(1),
            host: "tux055".into(),
            port: 10010,
            x: 50.0,
            y: 120.0,
            links: vec![id(2)],
        };
        reg.write(&lead).unwrap();
        let back = reg.read().unwrap();
        assert_eq!(back, vec![lead.clone()]);
        assert_eq!(
            fs::read_to_string(reg.path()).unwrap(),
            "Node 1 tux055, 10010 50 120 links 2\n"
        );
    }

    #[test]
    fn write_replaces_own_line() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::new(dir.path().join("r"));
        let mut e = RegistryEntry {
            node: id(1),
            host: "h".into(),
            port: 1,
            x: 0.0,
            y: 0.0,
            links: vec![],
        };
        reg.write(&e).unwrap();
        e.x = 42.25;
        reg.write(&e).unwrap();
        assert_eq!(reg.read().unwrap(), vec![e]);
    }

    #[test]
    fn malformed_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::new(dir.path().join("r"));
        fs::write(
            reg.path(),
            "garbage\nNode 1 h, 1 0 0 links\nNode 2 h, 2 0 5 links 1\n",
        )
        .unwrap();
        let got = reg.read().unwrap();
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn follower_refuses_without_lead() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::new(dir.path().join("r"));
        let res = reg.register_follower(|id| RegistryEntry {
            node: id,
            host: "h".into(),
            port: 2,
            x: 0.0,
            y: 0.0,
            links: vec![],
        });
        assert!(matches!(res, Err(RegistryError::NoLead)));
    }

    #[test]
    fn concurrent_writers_both_land() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::new(dir.path().join("r"));
        let handles: Vec<_> = (1..=2u16)
            .map(|i| {
                let reg = reg.clone();
                std::thread::spawn(move || {
                    for k in 0..50 {
                        reg.write(&RegistryEntry {
                            node: id(i),
                            host: "h".into(),
                            port: 1000 + i,
                            x: k as f64,
                            y: 0.0,
                            links: vec![],
                        })
                        .unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let got = reg.read().unwrap();
        assert_eq!(got.iter().map(|e| e.node.get()).collect::<Vec<_>>(), vec![1, 2]);
        assert!(got.iter().all(|e| e.x == 49.0));
    }
}
