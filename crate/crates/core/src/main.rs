use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crossbeam_channel::unbounded;

use roadtrain::config::{LogLevel, ScenarioConfig, TimedCommand, Transport};
use roadtrain::control::{self, ControlCommand};
use roadtrain::metrics::{merge_logs, reports_csv, RunReport};
use roadtrain::net::Registry;
use roadtrain::node::{Scheme, Verb};
use roadtrain::sim::{run_live, EventLog, Simulation};
use roadtrain::udp::{run_node, NodeControl, NodeRole, UdpNodeOptions};

#[derive(Parser)]
#[command(name = "roadtrain", version, about = "Road-train VANET simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full scenario and print its report.
    Simulate(SimulateArgs),
    /// Run a single vehicle as a UDP node.
    Node(NodeArgs),
    /// Merge per-node logs into a report.
    Report(ReportArgs),
    /// Sweep vehicle counts and schemes, one CSV row per run.
    Batch(BatchArgs),
}

/// Overrides for every scenario field. Unset flags keep the file or default value.
#[derive(Args, Debug, Default)]
struct ScenarioArgs {
    /// TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    #[arg(long)]
    n_followers: Option<usize>,
    #[arg(long)]
    duration_s: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    range_m: Option<f64>,
    #[arg(long)]
    loss_max: Option<f64>,
    #[arg(long)]
    per_hop_delay_ms: Option<u64>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    normal_ms: Option<u64>,
    #[arg(long)]
    hello_ms: Option<u64>,
    #[arg(long)]
    tc_ms: Option<u64>,
    #[arg(long)]
    registry_read_ms: Option<u64>,
    #[arg(long)]
    registry_write_s: Option<u64>,
    /// Built-in join/leave script on or off.
    #[arg(long)]
    scripted: Option<bool>,
    /// Comma-separated, each 5 or 10.
    #[arg(long, value_delimiter = ',')]
    follower_lengths: Option<Vec<f64>>,
    #[arg(long)]
    deterministic_mpr: Option<bool>,
    #[arg(long)]
    initial_speed: Option<f64>,
    #[arg(long)]
    form_timeout_ms: Option<u64>,
    #[arg(long)]
    echo_every: Option<u32>,
    #[arg(long)]
    neighbor_hold_ms: Option<u64>,
    #[arg(long)]
    topology_hold_ms: Option<u64>,
    #[arg(long, value_enum)]
    log_level: Option<LevelArg>,
    #[arg(long)]
    lead_x: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    follower_x: Option<Vec<f64>>,
    /// Timed command `<ms>:<VERB>[:<node>]`, e.g. `1500:JOIN:3`. Repeatable.
    #[arg(long = "command", value_parser = parse_timed)]
    commands: Vec<TimedCommand>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Rba,
    Mpr,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransportArg {
    Inproc,
    Udp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LevelArg {
    Off,
    Control,
    Full,
}

impl From<ModeArg> for Scheme {
    fn from(m: ModeArg) -> Scheme {
        match m {
            ModeArg::Rba => Scheme::Rba,
            ModeArg::Mpr => Scheme::Mpr,
        }
    }
}

fn parse_timed(s: &str) -> Result<TimedCommand, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let (at, verb, node) = match parts[..] {
        [at, verb] => (at, verb, None),
        [at, verb, node] => (at, verb, Some(node)),
        _ => return Err("expected <ms>:<VERB>[:<node>]".into()),
    };
    let at_ms = at.parse().map_err(|_| format!("bad time {at:?}"))?;
    let line = match node {
        Some(n) => format!("{verb} {n}"),
        None => verb.to_string(),
    };
    let cmd = ControlCommand::parse_line(&line).map_err(|e| e.to_string())?;
    Ok(TimedCommand {
        at_ms,
        verb: cmd.verb,
        node: cmd.node,
    })
}

impl ScenarioArgs {
    fn build(&self) -> Result<ScenarioConfig> {
        let mut c = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v.into(); })*
            };
        }
        set! {
            n_followers => c.n_followers,
            duration_s => c.duration_s,
            seed => c.seed,
            range_m => c.medium.range_m,
            loss_max => c.medium.loss_max,
            per_hop_delay_ms => c.medium.per_hop_delay_ms,
            rng_seed => c.medium.rng_seed,
            normal_ms => c.timers.normal_ms,
            hello_ms => c.timers.hello_ms,
            tc_ms => c.timers.tc_ms,
            registry_read_ms => c.timers.registry_read_ms,
            registry_write_s => c.timers.registry_write_s,
            scripted => c.scripted,
            follower_lengths => c.follower_lengths,
            deterministic_mpr => c.deterministic_mpr,
            initial_speed => c.initial_speed,
            form_timeout_ms => c.form_timeout_ms,
            echo_every => c.echo_every,
            neighbor_hold_ms => c.neighbor_hold_ms,
            topology_hold_ms => c.topology_hold_ms,
            lead_x => c.lead_x,
        }
        if let Some(m) = self.mode {
            c.mode = m.into();
        }
        if let Some(t) = self.transport {
            c.transport = match t {
                TransportArg::Inproc => Transport::Inproc,
                TransportArg::Udp => Transport::Udp,
            };
        }
        if let Some(l) = self.log_level {
            c.log_level = match l {
                LevelArg::Off => LogLevel::Off,
                LevelArg::Control => LogLevel::Control,
                LevelArg::Full => LogLevel::Full,
            };
        }
        if let Some(xs) = &self.follower_x {
            c.follower_x = Some(xs.clone());
        }
        c.commands.extend(self.commands.iter().copied());
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Event log (NDJSON). In UDP mode, a directory for the per-node logs.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the CSV report here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Serve the WebSocket control API on this address, e.g. 127.0.0.1:9001.
    #[arg(long)]
    ws: Option<String>,
    /// Read control commands from stdin.
    #[arg(long)]
    stdin: bool,
    /// Pace the virtual clock against the wall clock.
    #[arg(long)]
    live: bool,
    /// Virtual milliseconds per wall millisecond when live.
    #[arg(long, default_value_t = 1.0)]
    speedup: f64,
    /// Registry file for UDP mode.
    #[arg(long, default_value = "roadtrain.registry")]
    registry: PathBuf,
}

#[derive(Args)]
struct NodeArgs {
    #[arg(long = "type", value_enum)]
    kind: NodeType,
    #[arg(long)]
    x: Option<f64>,
    #[arg(long)]
    speed: Option<f64>,
    /// Vehicle length for followers, 5 or 10.
    #[arg(long, default_value_t = 5.0)]
    length: f64,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, default_value = "roadtrain.registry")]
    registry: PathBuf,
    /// Per-node log (NDJSON) for the report subcommand.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Take `join` / `leave` lines on stdin.
    #[arg(long)]
    stdin: bool,
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum NodeType {
    Leading,
    Follow,
}

#[derive(Args)]
struct ReportArgs {
    /// Per-node NDJSON logs.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Needed only when no log names it.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Vehicle counts, lead included.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_enum, default_values_t = [ModeArg::Rba, ModeArg::Mpr])]
    modes: Vec<ModeArg>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn write_csv(reports: &[RunReport], path: Option<&Path>) -> Result<()> {
    let csv = reports_csv(reports);
    match path {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.scenario.build()?;
    let report = match cfg.transport {
        Transport::Inproc => simulate_inproc(&args, cfg)?,
        Transport::Udp => simulate_udp(&args, cfg)?,
    };
    eprint!("{}", report.summary());
    write_csv(&[report], args.csv.as_deref())
}

fn simulate_inproc(args: &SimulateArgs, cfg: ScenarioConfig) -> Result<RunReport> {
    let log = match &args.log {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            EventLog::stream(cfg.log_level, Box::new(f))
        }
        None => EventLog::memory(LogLevel::Off),
    };
    let mut sim = Simulation::with_log(cfg, log)?;
    if args.ws.is_none() && !args.stdin && !args.live {
        return Ok(sim.run_to_end());
    }
    let (tx, rx) = unbounded();
    if let Some(addr) = &args.ws {
        let (bound, _) = control::serve_websocket(addr.as_str(), tx.clone())
            .with_context(|| format!("binding control socket {addr}"))?;
        eprintln!("control API on ws://{bound}");
    }
    if args.stdin {
        control::spawn_stdin(tx.clone());
    }
    drop(tx);
    Ok(run_live(&mut sim, rx, args.speedup))
}

/// Spawns one process per vehicle, lead first, then merges their logs.
fn simulate_udp(args: &SimulateArgs, cfg: ScenarioConfig) -> Result<RunReport> {
    let dir = args.log.clone().unwrap_or_else(|| PathBuf::from("roadtrain-logs"));
    fs::create_dir_all(&dir)?;
    let cfg_path = dir.join("scenario.toml");
    fs::write(&cfg_path, cfg.to_toml())?;
    let exe = std::env::current_exe()?;
    let registry = Registry::new(&args.registry);
    let spawn = |kind: &str, i: usize| -> Result<Child> {
        let mut c = Command::new(&exe);
        c.arg("node")
            .args(["--type", kind])
            .arg("--config")
            .arg(&cfg_path)
            .arg("--registry")
            .arg(&args.registry)
            .arg("--log")
            .arg(dir.join(format!("node{i}.ndjson")));
        if i >= 2 {
            c.args(["--length", &cfg.follower_length(i - 2).to_string()]);
        }
        c.spawn().with_context(|| format!("spawning node {i}"))
    };
    let wait_for = |count: usize| -> Result<()> {
        let deadline = Instant::now() + Duration::from_secs(10);
        while registry.read().map_or(0, |r| r.len()) < count {
            if Instant::now() > deadline {
                bail!("node {count} did not register in time");
            }
            thread::sleep(Duration::from_millis(5));
        }
        Ok(())
    };
    // Clear any previous run so the lead is visibly the first registration.
    registry.truncate()?;
    let mut children = vec![spawn("leading", 1)?];
    wait_for(1)?;
    for i in 2..=cfg.n_vehicles() {
        children.push(spawn("follow", i)?);
        wait_for(i)?;
    }
    for mut c in children {
        let status = c.wait()?;
        if !status.success() {
            bail!("a node exited with {status}");
        }
    }
    let readers = (1..=cfg.n_vehicles())
        .map(|i| File::open(dir.join(format!("node{i}.ndjson"))).map(BufReader::new))
        .collect::<io::Result<Vec<_>>>()?;
    Ok(merge_logs(readers, Some(cfg.mode))?)
}

fn node(args: NodeArgs) -> Result<()> {
    let cfg = args.scenario.build()?;
    let role = match args.kind {
        NodeType::Leading => NodeRole::Leading,
        NodeType::Follow => NodeRole::Follow,
    };
    let mut opts = UdpNodeOptions::new(role, &args.registry, cfg);
    opts.host = args.host;
    opts.port = args.port;
    opts.x = args.x;
    opts.speed = args.speed;
    opts.length = args.length;
    opts.log = args.log;
    let mut ctl = NodeControl::default();
    if args.stdin {
        let (tx, rx) = unbounded();
        ctl.commands = Some(rx);
        thread::spawn(move || {
            for line in io::stdin().lines() {
                let Ok(line) = line else { return };
                let verb = match line.trim().to_ascii_lowercase().as_str() {
                    "join" | "j" => Verb::Join,
                    "leave" | "l" => Verb::Leave,
                    "" => continue,
                    other => {
                        eprintln!("unknown command {other:?}; use join or leave");
                        continue;
                    }
                };
                if tx.send(verb).is_err() {
                    return;
                }
            }
        });
    }
    let summary = run_node(opts, ctl)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "node {} on {}: {} transmissions, link loss {:.4} over {} attempts",
        summary.id,
        summary.addr,
        summary.tally.total_tx,
        summary.link.loss_rate(),
        summary.link.attempts
    )?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let readers = args
        .logs
        .iter()
        .map(|p| {
            File::open(p)
                .map(BufReader::new)
                .with_context(|| format!("opening {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = merge_logs(readers, args.mode.map(Scheme::from))?;
    eprint!("{}", report.summary());
    write_csv(&[report], args.csv.as_deref())
}

fn batch(args: BatchArgs) -> Result<()> {
    let base = args.scenario.build()?;
    if base.transport == Transport::Udp {
        bail!("batch runs in-process only");
    }
    let mut reports = Vec::new();
    for &mode in &args.modes {
        for &n in &args.sizes {
            if n < 2 {
                bail!("a run needs the lead and at least one follower");
            }
            let cfg = ScenarioConfig {
                mode: mode.into(),
                n_followers: n - 1,
                log_level: LogLevel::Off,
                ..base.clone()
            };
            cfg.validate()?;
            let mut sim = Simulation::new(cfg)?;
            let r = sim.run_to_end();
            eprintln!("{} n={n}: {}", r.mode.name(), r.csv_row());
            reports.push(r);
        }
    }
    write_csv(&reports, args.csv.as_deref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Node(a) => node(a),
        Cmd::Report(a) => report(a),
        Cmd::Batch(a) => batch(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
