use std::fs::File;
use std::io::BufReader;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::unbounded;

use roadtrain::config::ScenarioConfig;
use roadtrain::metrics::merge_logs;
use roadtrain::net::Registry;
use roadtrain::node::{Scheme, Verb};
use roadtrain::udp::{run_node, NodeControl, NodeRole, UdpNodeOptions};

fn scenario(mode: Scheme) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        mode,
        n_followers: 2,
        duration_s: 3,
        scripted: false,
        ..Default::default()
    };
    cfg.medium.loss_max = 0.0;
    cfg.timers.registry_read_ms = 10;
    cfg.timers.registry_write_s = 1;
    cfg
}

fn run_trio(mode: Scheme) {
    let dir = tempfile::tempdir().unwrap();
    let reg_path = dir.path().join("nodes.cfg");
    let cfg = scenario(mode);
    let log = |i: u32| dir.path().join(format!("node{i}.ndjson"));

    let mut lead = UdpNodeOptions::new(NodeRole::Leading, &reg_path, cfg.clone());
    lead.log = Some(log(1));
    let lead = thread::spawn(move || run_node(lead, NodeControl::default()).unwrap());
    let registry = Registry::new(&reg_path);
    let deadline = Instant::now() + Duration::from_secs(5);
    while !registry.read().unwrap().iter().any(|e| e.node.is_lead()) {
        assert!(Instant::now() < deadline, "lead never registered");
        thread::sleep(Duration::from_millis(2));
    }

    let mut followers = Vec::new();
    let mut joins = Vec::new();
    for i in 2..=3 {
        let (tx, rx) = unbounded();
        let mut opts = UdpNodeOptions::new(NodeRole::Follow, &reg_path, cfg.clone());
        opts.log = Some(log(i));
        let ctl = NodeControl {
            commands: Some(rx),
            stop: None,
        };
        followers.push(thread::spawn(move || run_node(opts, ctl).unwrap()));
        joins.push(tx);
        while registry.read().unwrap().len() < i as usize {
            thread::sleep(Duration::from_millis(2));
        }
    }
    thread::sleep(Duration::from_millis(200));
    joins[0].send(Verb::Join).unwrap();
    thread::sleep(Duration::from_millis(500));
    joins[1].send(Verb::Join).unwrap();

    let lead = lead.join().unwrap();
    let followers: Vec<_> = followers.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(lead.id.is_lead());
    assert_eq!(followers[0].id.get(), 2);
    assert_eq!(followers[1].id.get(), 3);
    assert!(lead.link.attempts > 0 && lead.link.lost == 0);

    let text = std::fs::read_to_string(log(1)).unwrap();
    let last_train = text
        .lines()
        .filter(|l| l.contains("\"train_changed\""))
        .last()
        .expect("train changed");
    assert!(last_train.contains("\"train\":[1,3,2]"), "{last_train}");

    let readers = (1..=3).map(|i| BufReader::new(File::open(log(i)).unwrap()));
    let report = merge_logs(readers, None).unwrap();
    assert_eq!(report.mode, mode);
    assert_eq!(report.n_vehicles, 3);
    let total: u64 = followers.iter().map(|f| f.tally.total_tx).sum::<u64>() + lead.tally.total_tx;
    assert_eq!(report.total_tx, total);
}

#[test]
fn three_processes_worth_of_nodes_form_a_train_over_udp() {
    run_trio(Scheme::Mpr);
}

#[test]
fn flooding_over_udp() {
    run_trio(Scheme::Rba);
}
