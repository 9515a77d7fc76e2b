mod common;

use std::collections::BTreeSet;

use common::{provision, KEY};
use karakasa::adversary::{
    copies_required, rewrite_campaign, tamper_block, AttackPlan, Mutation, TxLocation,
};
use karakasa::chain::codec::encode_transaction;
use karakasa::chain::{make_placement_chain, make_synthetic_chain};
use karakasa::chord::RingId;
use karakasa::cluster::{Cluster, ClusterConfig, ClusterError, NodeSpec, VerifiedChain};
use karakasa::experiments::{
    exp_attack, exp_replication, exp_storage, AttackParams, StorageParams,
};
use karakasa::metrics::{measure_messages, measure_storage, Mode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn placement(blocks: usize, seed: u64) -> VerifiedChain {
    VerifiedChain::new(make_placement_chain(blocks, seed).unwrap()).unwrap()
}

#[test]
fn single_node_counts_and_messages() {
    let chain = placement(25, 1);
    let mut cluster = Cluster::provision(
        &[NodeSpec::new("solo")],
        &chain,
        KEY,
        ClusterConfig::with_replicas(0),
    )
    .unwrap();
    let dist = measure_storage(&cluster);
    assert_eq!((dist.mean, dist.total, dist.stddev), (25.0, 25, 0.0));

    assert_eq!(measure_messages(cluster.trace()).total(), 0);
    let solo = cluster.node_ids()[0];
    cluster.get_block(solo, &chain.blocks()[7].id()).unwrap();
    let totals = measure_messages(cluster.trace());
    assert_eq!(
        (totals.lookup_hops, totals.transfers, totals.stabilize),
        (0, 1, 0)
    );
}

/// Block-count noise fades as the chain grows, leaving only the spread of
/// arc lengths on the ring, which the test computes from the node ids.
#[test]
fn spread_shrinks_toward_the_arc_length_spread() {
    let chain_small = placement(500, 3);
    let chain_large = placement(20_000, 3);
    let small = provision(50, &chain_small, 0);
    let large = provision(50, &chain_large, 0);
    let cv = |c: &Cluster| {
        let d = measure_storage(c);
        d.stddev / d.mean
    };
    let ids: Vec<f64> = small
        .node_ids()
        .iter()
        .map(|i| i.as_u128() as f64)
        .collect();
    let ring = 2f64.powi(64);
    let arcs: Vec<f64> = (0..ids.len())
        .map(|k| (ids[k] - ids[(k + ids.len() - 1) % ids.len()]).rem_euclid(ring) / ring)
        .collect();
    let m = 1.0 / ids.len() as f64;
    let arc_cv = (arcs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / ids.len() as f64).sqrt() / m;
    let (cv_small, cv_large) = (cv(&small), cv(&large));
    assert!(cv_large < cv_small, "{cv_small:.3} -> {cv_large:.3}");
    assert!((cv_large - arc_cv).abs() < (cv_small - arc_cv).abs());
    assert!(
        (cv_large - arc_cv).abs() < 0.05,
        "{cv_large:.3} vs arcs {arc_cv:.3}"
    );
}

#[test]
fn join_messages_match_hops_plus_one_per_block() {
    let chain = VerifiedChain::new(make_synthetic_chain(5000, 2, 42).unwrap()).unwrap();
    let mut cluster = provision(1000, &chain, 0);

    // mean hops from an independent sample of random lookups
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ids = cluster.node_ids();
    let samples = 20_000;
    let hops: u64 = (0..samples)
        .map(|_| {
            let origin = ids[rng.gen_range(0..ids.len())];
            let key = RingId::from_u128(rng.gen::<u64>() as u128);
            cluster.ring().lookup(origin, key).unwrap().hops
        })
        .sum();
    let mean_hops = hops as f64 / samples as f64;

    let mark = cluster.trace().len();
    let report = cluster
        .join_cluster(NodeSpec::new("newcomer"), KEY)
        .unwrap();
    let totals = measure_messages(&cluster.trace().since(mark));
    assert_eq!(report.lookup_hops + report.transfers, report.messages);
    assert_eq!(report.transfers, 5000);
    assert!(totals.total() >= report.messages);
    let expected = 5000.0 * (mean_hops + 1.0);
    let rel = (report.messages as f64 - expected).abs() / expected;
    assert!(rel < 0.10, "messages {} vs {expected:.0}", report.messages);
}

#[test]
fn replication_at_r0_matches_the_storage_sweep() {
    let p = StorageParams {
        nodes: vec![200],
        block_count: 3000,
        replicas: vec![0],
        seed: 5,
        mode: Mode::PlacementOnly,
    };
    let a = exp_storage(&p).unwrap();
    let b = exp_replication(&p).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(
        (a[0].measured, a[0].estimated),
        (b[0].measured, b[0].estimated)
    );
}

#[test]
fn tampering_the_only_copy_is_unrecoverable() {
    let chain = placement(5, 2);
    let mut cluster = provision(6, &chain, 0);
    let id = chain.blocks()[1].id();
    let holder = cluster.holders(&id).unwrap()[0];
    let requester = cluster.node_ids()[0];
    tamper_block(&mut cluster, holder, &id, &Mutation::identity()).unwrap();
    assert_eq!(
        cluster.get_block(requester, &id).unwrap().block,
        chain.blocks()[1]
    );
    tamper_block(&mut cluster, holder, &id, &Mutation::set_byte(10, 0)).unwrap();
    tamper_block(&mut cluster, holder, &id, &Mutation::set_byte(11, 0)).unwrap();
    assert_eq!(
        cluster.get_block(requester, &id),
        Err(ClusterError::AllReplicasCorrupt(id))
    );
}

/// Over every compromised subset of a small cluster: a block with an honest
/// copy left is always served as the original; a block whose every copy was
/// rewritten is reported corrupt, never served forged.
#[test]
fn attack_safety_is_exhaustive_on_small_clusters() {
    let chain = VerifiedChain::new(make_synthetic_chain(3, 3, 8).unwrap()).unwrap();
    let base = provision(6, &chain, 1);
    let ids = base.node_ids();
    let tx = encode_transaction(&chain.blocks()[1].transactions()[1]);
    let mutation = Mutation::flip_byte(&tx, tx.len() - 1);
    let mut cases = 0;
    for mask in 0u32..(1 << ids.len()) {
        let compromised: BTreeSet<RingId> = (0..ids.len())
            .filter(|k| mask & (1 << k) != 0)
            .map(|k| ids[k])
            .collect();
        let mut cluster = base.clone();
        let plan = AttackPlan {
            target: TxLocation {
                height: 1,
                position: 1,
            },
            compromised: compromised.clone(),
            mutation: mutation.clone(),
        };
        let report = rewrite_campaign(&mut cluster, &plan).unwrap();
        assert!(report.detected, "mask {mask:b}");
        assert_eq!(report.blocks_required, copies_required(1, 1));
        let honest = ids
            .iter()
            .find(|n| !compromised.contains(n))
            .copied()
            .unwrap_or(ids[0]);
        for original in &chain.blocks()[1..] {
            let id = original.id();
            let all_rewritten = cluster
                .holders(&id)
                .unwrap()
                .iter()
                .all(|h| compromised.contains(h));
            match cluster.get_block(honest, &id) {
                Ok(f) => {
                    assert!(!all_rewritten, "mask {mask:b}");
                    assert_eq!(&f.block, original);
                }
                Err(ClusterError::AllReplicasCorrupt(_)) => assert!(all_rewritten, "mask {mask:b}"),
                Err(e) => panic!("mask {mask:b}: {e}"),
            }
        }
        if !report.fully_consistent {
            assert_eq!(report.fork_rejected, None);
        }
        cases += 1;
    }
    assert_eq!(cases, 64);
}

#[test]
fn partial_compromise_is_always_detected() {
    let (rows, reports) = exp_attack(&AttackParams {
        n_nodes: 60,
        replicas: 2,
        stack_depth: 4,
        fractions: vec![0.0, 0.3, 0.6, 0.9, 1.0],
        trials: 100,
        seed: 42,
    })
    .unwrap();
    assert_eq!(reports.len(), 500);
    assert!(reports
        .iter()
        .all(|r| r.detected && r.blocks_required == 15));
    let zero: Vec<_> = reports.iter().take(100).collect();
    assert!(zero.iter().all(|r| r.copies_reached == 0));
    let full: Vec<_> = reports.iter().skip(400).collect();
    assert!(full
        .iter()
        .all(|r| r.fully_consistent && r.fork_rejected == Some(true)));
    let rate = rows
        .iter()
        .find(|r| r.metric == "detection_rate:f=0.600")
        .unwrap();
    assert_eq!(rate.measured, 1.0);
}

proptest! {
    #[test]
    fn required_copies_grow_in_both_arguments(r in 0usize..50, s in 0usize..50) {
        prop_assert!(copies_required(r + 1, s) > copies_required(r, s));
        prop_assert!(copies_required(r, s + 1) > copies_required(r, s));
    }
}
