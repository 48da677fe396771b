use std::collections::BTreeMap;

use proptest::prelude::*;

use roadtrain::net::{Lane, NodeId};
use roadtrain::packets::{
    DecodeError, Dest, HelloPayload, LinkStatus, NotifyPayload, NotifyPurpose, Packet, Payload,
    TcPayload, VehicleInfo, WireMode,
};

fn node() -> impl Strategy<Value = NodeId> {
    (1..=NodeId::MAX).prop_map(|n| NodeId::new(n).unwrap())
}

fn vehicle(real: bool) -> impl Strategy<Value = VehicleInfo> {
    let num = move || {
        if real {
            (-1e6..1e6f64).boxed()
        } else {
            any::<f64>().boxed()
        }
    };
    let mode = prop_oneof![
        Just(WireMode::Free),
        Just(WireMode::Form),
        Just(WireMode::Lead),
        node().prop_map(WireMode::Follow),
    ];
    let lane = prop_oneof![Just(Lane::Right), Just(Lane::Left)];
    (num(), lane, num(), num(), num(), num(), num(), mode).prop_map(
        |(x, lane, velocity, acceleration, brake, throttle, length, mode)| VehicleInfo {
            x,
            lane,
            velocity,
            acceleration,
            brake,
            throttle,
            length,
            mode,
        },
    )
}

fn payload(real: bool) -> impl Strategy<Value = Payload> {
    let status = prop_oneof![Just(LinkStatus::Uni), Just(LinkStatus::Bi), Just(LinkStatus::Mpr)];
    let hello = prop::collection::btree_map(node(), status, 0..40).prop_map(|m: BTreeMap<_, _>| {
        Payload::Hello(HelloPayload {
            neighbors: m.into_iter().collect(),
        })
    });
    let tc = (any::<u32>(), prop::collection::vec(node(), 0..40))
        .prop_map(|(tc_seq, selectors)| Payload::Tc(TcPayload { tc_seq, selectors }));
    let gap = if real { (0.0..100.0f64).boxed() } else { any::<f64>().boxed() };
    let purpose = prop_oneof![Just(NotifyPurpose::MakeSpace), Just(NotifyPurpose::Retarget)];
    let notify = (purpose, node(), gap, prop::option::of(node())).prop_map(
        |(purpose, target, gap_m, awaiting)| {
            Payload::Notify(NotifyPayload {
                purpose,
                target,
                gap_m,
                awaiting,
            })
        },
    );
    prop_oneof![
        hello,
        tc,
        vehicle(real).prop_map(Payload::Normal),
        vehicle(real).prop_map(Payload::Join),
        Just(Payload::Leave),
        node().prop_map(|target| Payload::AckJoin { target }),
        notify,
        node().prop_map(|requester| Payload::Ok { requester }),
    ]
}

fn packet(real: bool) -> impl Strategy<Value = Packet> {
    let dest = prop_oneof![Just(Dest::Broadcast), node().prop_map(Dest::Node)];
    (node(), node(), any::<u32>(), dest, payload(real)).prop_map(|(source, prev, seq, dest, p)| {
        let mut pkt = Packet::new(source, seq, dest, p);
        pkt.header.prev_hop = prev;
        pkt
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn decode_inverts_encode(pkt in packet(true)) {
        let bytes = pkt.encode();
        prop_assert_eq!(bytes.len(), pkt.encoded_len());
        prop_assert_eq!(Packet::decode(&bytes), Ok(pkt));
    }

    #[test]
    fn any_float_survives_bit_for_bit(pkt in packet(false)) {
        let bytes = pkt.encode();
        let back = Packet::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn every_strict_prefix_is_rejected(pkt in packet(true), cut in any::<prop::sample::Index>()) {
        let bytes = pkt.encode();
        let n = cut.index(bytes.len());
        prop_assert!(Packet::decode(&bytes[..n]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = Packet::decode(&bytes);
    }

    #[test]
    fn trailing_garbage_is_rejected(pkt in packet(true), extra in prop::collection::vec(any::<u8>(), 1..8)) {
        let mut bytes = pkt.encode();
        bytes.extend(extra);
        prop_assert_eq!(Packet::decode(&bytes), Err(DecodeError::TrailingBytes));
    }
}
