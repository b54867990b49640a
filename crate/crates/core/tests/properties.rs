use proptest::prelude::*;
use serde_json::Value;

use p2p_acl::ledger::{canonical_encode, Args, Chain, ContractId, Transaction};
use p2p_acl::overlay::{ring_route, NetworkState};
use p2p_acl::policy::{detect_attempt_burst, AttemptWindowConfig, Seconds};
use p2p_acl::PeerId;

fn naive_burst(times: &[Seconds], now: Seconds, max: u32, window: Seconds) -> bool {
    let n = times
        .iter()
        .filter(|&&t| t <= now && t + window > now)
        .count();
    n > max as usize
}

fn sorted_times() -> impl Strategy<Value = Vec<Seconds>> {
    prop::collection::vec(0u64..500, 0..20).prop_map(|mut v| {
        v.sort_unstable();
        v
    })
}

fn scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<u64>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        "[a-zA-Z0-9 \"\\\\é]{0,12}".prop_map(Value::from),
    ]
}

fn tx_with(args: Vec<(String, Value)>) -> Transaction {
    Transaction {
        seq: 7,
        caller: PeerId(3),
        contract: ContractId::Register,
        method: "getContract".into(),
        args: args.into_iter().collect::<Args>(),
        timestamp: 99,
    }
}

proptest! {
    #[test]
    fn burst_matches_naive_count(times in sorted_times(), now in 0u64..600, max in 1u32..6, window in 1u64..120) {
        let cfg = AttemptWindowConfig::new(max, window).unwrap();
        prop_assert_eq!(
            detect_attempt_burst(&times, now, &cfg).is_some(),
            naive_burst(&times, now, max, window)
        );
    }

    #[test]
    fn burst_is_shift_invariant(times in sorted_times(), now in 0u64..600, shift in 0u64..1_000_000) {
        let cfg = AttemptWindowConfig::default();
        let shifted: Vec<Seconds> = times.iter().map(|t| t + shift).collect();
        prop_assert_eq!(
            detect_attempt_burst(&times, now, &cfg),
            detect_attempt_burst(&shifted, now + shift, &cfg)
        );
    }

    #[test]
    fn encoding_ignores_insertion_order(entries in prop::collection::btree_map("[a-z_]{1,8}", scalar(), 0..8)) {
        let forward: Vec<_> = entries.clone().into_iter().collect();
        let mut backward = forward.clone();
        backward.reverse();
        let a = canonical_encode(&tx_with(forward)).unwrap();
        let b = canonical_encode(&tx_with(backward)).unwrap();
        prop_assert_eq!(&a, &b);
        let back: Transaction = serde_json::from_slice(&a).unwrap();
        prop_assert_eq!(canonical_encode(&back).unwrap(), a);
    }

    #[test]
    fn ring_route_is_shortest(n in 1usize..40, i in 0usize..40, j in 0usize..40) {
        let (i, j) = (i % n, j % n);
        let path = ring_route(i, j, n);
        let forward = (j + n - i) % n;
        prop_assert_eq!(path.len() - 1, forward.min(n - forward));
        prop_assert_eq!(path[0], i);
        prop_assert_eq!(*path.last().unwrap(), j);
    }

    #[test]
    fn churn_keeps_invariants(n in 1usize..7, ops in prop::collection::vec((any::<bool>(), 0usize..64, 0usize..7), 0..80)) {
        let mut net = NetworkState::build(n, &vec![1; n]).unwrap();
        for (join, pick, group) in ops {
            if join {
                let id = PeerId(100 + pick as u64);
                let _ = net.join(id, group % n);
            } else {
                let present: Vec<PeerId> = net.peers().map(|p| p.id).collect();
                if !present.is_empty() {
                    net.leave(present[pick % present.len()]).unwrap();
                }
            }
            prop_assert!(net.check_invariants().is_ok(), "{:?}", net.check_invariants());
        }
    }

    #[test]
    fn chain_lines_round_trip(blocks in 1usize..6, per in 1usize..4) {
        let mut chain = Chain::new();
        let mut seq = 0;
        for _ in 0..blocks {
            let txs = (0..per)
                .map(|_| {
                    seq += 1;
                    let mut tx = tx_with(vec![("n".into(), Value::from(seq))]);
                    tx.seq = seq;
                    tx
                })
                .collect();
            chain.append(txs).unwrap();
        }
        let text = chain.to_block_lines();
        let parsed = Chain::from_block_lines(text.as_bytes()).unwrap();
        prop_assert_eq!(parsed.to_block_lines(), text);
    }
}
