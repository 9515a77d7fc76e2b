//! Oracles and scenario drivers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use karakasa::chain::{Block, Hash256, UtxoSet};
use karakasa::cluster::{Cluster, ClusterConfig, NodeSpec, VerifiedChain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KEY: &[u8] = b"test-cluster-key";

/// Unspent outputs as (txid, index) -> (amount, script), replayed from
/// genesis without any validation.
pub type PlainUtxo = BTreeMap<(Hash256, u32), (u64, Vec<u8>)>;

pub fn replay(blocks: &[Block]) -> PlainUtxo {
    let mut live = PlainUtxo::new();
    for b in blocks {
        for tx in b.transactions() {
            if !tx.is_coinbase() {
                for i in tx.inputs() {
                    live.remove(&(i.prev_out.txid, i.prev_out.index));
                }
            }
            for (k, o) in tx.outputs().iter().enumerate() {
                live.insert((tx.txid(), k as u32), (o.amount, o.locking_script.clone()));
            }
        }
    }
    live
}

pub fn flatten(utxo: &UtxoSet) -> PlainUtxo {
    utxo.iter()
        .map(|(op, out)| {
            (
                (op.txid, op.index),
                (out.amount, out.locking_script.clone()),
            )
        })
        .collect()
}

/// Brute-force successor over sorted ids.
pub fn scan_successor(ids: &BTreeSet<u128>, key: u128) -> u128 {
    ids.range(key..)
        .next()
        .or_else(|| ids.iter().next())
        .copied()
        .unwrap()
}

pub fn provision(n: usize, chain: &VerifiedChain, replicas: usize) -> Cluster {
    let specs: Vec<NodeSpec> = (0..n).map(|i| NodeSpec::new(format!("node-{i}"))).collect();
    Cluster::provision(&specs, chain, KEY, ClusterConfig::with_replicas(replicas)).unwrap()
}

#[derive(Debug, Default)]
pub struct ChurnOutcome {
    pub events: usize,
    pub joins: usize,
    pub leaves: usize,
    pub failures: usize,
    pub violations: Vec<String>,
}

/// Checks the storage invariants: every chain block is stored, nothing
/// else is, copies sit exactly on their holders, and the copy count is
/// `(R_eff + 1) × blocks`.
pub fn storage_violations(cluster: &Cluster, chain: &VerifiedChain) -> Vec<String> {
    let mut out = Vec::new();
    let want: BTreeSet<Hash256> = chain.blocks().iter().map(|b| b.id()).collect();
    let have: BTreeSet<Hash256> = cluster.stored_ids().into_iter().collect();
    if want != have {
        out.push(format!(
            "shard union has {} ids, chain has {}",
            have.len(),
            want.len()
        ));
    }
    let expected = (cluster.effective_replicas() + 1) * chain.blocks().len();
    if cluster.total_copies() != expected {
        out.push(format!(
            "{} copies, expected {expected}",
            cluster.total_copies()
        ));
    }
    for id in &want {
        let mut holders = cluster.holders(id).unwrap();
        holders.sort();
        if cluster.nodes_with_copy(id) != holders {
            out.push(format!("copies of {id} off their holders"));
        }
    }
    out
}

/// A seeded script of `events` joins, graceful leaves and abrupt failures
/// (only when replicas exist),
/// checking the storage invariants after each and every joiner's UTXO set
/// against an independent replay.
pub fn run_churn(
    cluster: &mut Cluster,
    chain: &VerifiedChain,
    events: usize,
    seed: u64,
) -> ChurnOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let oracle = replay(chain.blocks());
    let mut out = ChurnOutcome::default();
    let mut next_addr = 0;
    for step in 0..events {
        let n = cluster.len();
        let roll = rng.gen_range(0..10);
        if n <= 3 || (roll < 5 && n < 40) {
            let spec = NodeSpec::new(format!("churn-{seed}-{next_addr}"));
            next_addr += 1;
            let report = cluster.join_cluster(spec, KEY).unwrap();
            let got = flatten(cluster.state(report.node).unwrap().utxoset());
            if got != oracle {
                out.violations
                    .push(format!("step {step}: joiner UTXO set differs from replay"));
            }
            out.joins += 1;
        } else {
            let ids = cluster.node_ids();
            let victim = ids[rng.gen_range(0..ids.len())];
            // without replicas an abrupt failure loses blocks by design
            if roll < 8 || cluster.effective_replicas() == 0 {
                cluster.leave_cluster(victim).unwrap();
                out.leaves += 1;
            } else {
                cluster.fail_node(victim).unwrap();
                out.failures += 1;
            }
        }
        out.events += 1;
        for v in storage_violations(cluster, chain) {
            out.violations.push(format!("step {step}: {v}"));
        }
    }
    out
}
