mod common;

use common::{flatten, provision, replay, run_churn, storage_violations, KEY};
use karakasa::adversary::{tamper_block, Mutation};
use karakasa::chain::{make_synthetic_chain, Block};
use karakasa::cluster::{ClusterError, NodeSpec, VerifiedChain};

fn chain(blocks: usize, seed: u64) -> VerifiedChain {
    VerifiedChain::new(make_synthetic_chain(blocks, 4, seed).unwrap()).unwrap()
}

#[test]
fn churn_scripts_keep_storage_and_utxo_invariants() {
    for (seed, replicas) in [(1u64, 0usize), (2, 1), (3, 3)] {
        let chain = chain(30, seed);
        let mut cluster = provision(10, &chain, replicas);
        let outcome = run_churn(&mut cluster, &chain, 50, seed);
        assert_eq!(outcome.events, 50);
        assert!(outcome.joins > 0 && outcome.leaves > 0, "{outcome:?}");
        assert_eq!(outcome.failures > 0, replicas > 0, "{outcome:?}");
        assert!(outcome.violations.is_empty(), "{:?}", outcome.violations);
    }
}

#[test]
fn every_node_can_fetch_every_block_after_churn() {
    let chain = chain(20, 9);
    let mut cluster = provision(8, &chain, 2);
    run_churn(&mut cluster, &chain, 30, 9);
    for node in cluster.node_ids() {
        for b in chain.blocks() {
            let got = cluster.get_block(node, &b.id()).unwrap();
            assert_eq!(&got.block, b);
            assert_eq!(got.attempts, 1);
        }
    }
}

#[test]
fn failing_every_holder_in_turn_is_survivable() {
    let chain = chain(6, 4);
    let cluster = provision(12, &chain, 1);
    let target: &Block = &chain.blocks()[3];
    let holders = cluster.holders(&target.id()).unwrap();
    let survivor = cluster
        .node_ids()
        .into_iter()
        .find(|n| !holders.contains(n))
        .unwrap();

    // repair after each failure re-creates the lost copy
    let mut c = cluster.clone();
    for h in &holders {
        c.fail_node(*h).unwrap();
    }
    assert_eq!(&c.get_block(survivor, &target.id()).unwrap().block, target);

    // with both copies corrupted first, repair has no verified source
    let mut c = cluster.clone();
    for h in &holders {
        tamper_block(&mut c, *h, &target.id(), &Mutation::set_byte(0, 0x55)).unwrap();
    }
    c.fail_node(holders[0]).unwrap();
    assert_eq!(
        c.get_block(survivor, &target.id()).unwrap_err(),
        ClusterError::AllReplicasCorrupt(target.id())
    );
}

#[test]
fn repair_restores_a_tampered_copy_only_from_a_verified_source() {
    let chain = chain(8, 5);
    let mut cluster = provision(10, &chain, 2);
    let target = chain.blocks()[2].id();
    let holders = cluster.holders(&target).unwrap();
    tamper_block(
        &mut cluster,
        holders[1],
        &target,
        &Mutation::set_byte(90, 0x00),
    )
    .unwrap();
    // the primary leaves; the next holder set must be filled with good bytes
    cluster.leave_cluster(holders[0]).unwrap();
    let requester = cluster.node_ids()[0];
    let got = cluster.get_block(requester, &target).unwrap();
    assert_eq!(got.block, chain.blocks()[2]);
    let v = storage_violations(&cluster, &chain);
    assert!(v.is_empty(), "{v:?}");
}

#[test]
fn joining_twice_with_the_same_address_collides() {
    let chain = chain(4, 6);
    let mut cluster = provision(5, &chain, 1);
    let first = cluster.join_cluster(NodeSpec::new("twin"), KEY).unwrap();
    assert_eq!(
        cluster
            .join_cluster(NodeSpec::new("twin"), KEY)
            .unwrap_err(),
        ClusterError::IdCollision(first.node)
    );
    assert_eq!(
        flatten(cluster.state(first.node).unwrap().utxoset()),
        replay(chain.blocks())
    );
}
