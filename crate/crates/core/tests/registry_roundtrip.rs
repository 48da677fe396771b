use proptest::prelude::*;

use roadtrain::net::{NodeId, Registry, RegistryEntry};

fn entry() -> impl Strategy<Value = RegistryEntry> {
    (
        1..=NodeId::MAX,
        "[a-z][a-z0-9.-]{0,15}",
        any::<u16>(),
        -1e7..1e7f64,
        prop_oneof![Just(0.0), Just(5.0)],
        prop::collection::vec(1..=NodeId::MAX, 0..12),
    )
        .prop_map(|(node, host, port, x, y, links)| RegistryEntry {
            node: NodeId::new(node).unwrap(),
            host,
            port,
            x,
            y,
            links: links.into_iter().map(|l| NodeId::new(l).unwrap()).collect(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn line_format_round_trips(e in entry()) {
        let line = e.to_string();
        prop_assert_eq!(line.parse::<RegistryEntry>(), Ok(e));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn file_write_then_read_is_identity(entries in prop::collection::vec(entry(), 1..8)) {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::new(dir.path().join("nodes.cfg"));
        let mut want = std::collections::BTreeMap::new();
        for e in &entries {
            reg.write(e).unwrap();
            want.insert(e.node, e.clone());
        }
        let got = reg.read().unwrap();
        prop_assert_eq!(got, want.into_values().collect::<Vec<_>>());
    }
}

#[test]
fn lead_truncates_and_followers_number_upwards() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path().join("nodes.cfg"));
    std::fs::write(reg.path(), "Node 7 stale, 1 0 0 links\n").unwrap();
    reg.truncate().unwrap();
    assert!(reg.read().unwrap().is_empty());
    let lead = RegistryEntry {
        node: NodeId::LEAD,
        host: "tux055".into(),
        port: 10010,
        x: 50.0,
        y: 0.0,
        links: vec![],
    };
    reg.write(&lead).unwrap();
    for want in 2..=4u16 {
        let e = reg
            .register_follower(|id| RegistryEntry {
                node: id,
                port: 10010 + id.get(),
                ..lead.clone()
            })
            .unwrap();
        assert_eq!(e.node.get(), want);
    }
    let order: Vec<u16> = reg.read().unwrap().iter().map(|e| e.node.get()).collect();
    assert_eq!(order, vec![1, 2, 3, 4]);
}
