//! Experiment runners behind the command-line tool. Each returns rows in a
//! deterministic order; trials may run in parallel.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::adversary::{
    rewrite_campaign, AdversaryError, AttackPlan, CampaignReport, Mutation, TxLocation,
};
use crate::chain::codec::encode_transaction;
use crate::chain::{make_placement_chain, make_synthetic_chain, ChainError, InvalidParams};
use crate::cluster::{Cluster, ClusterConfig, ClusterError, NodeSpec, VerifiedChain};
use crate::metrics::{
    estimate_blocks_per_node, measure_storage, ConfigError, ExperimentConfig, Mode,
};

pub const CSV_HEADER: [&str; 11] = [
    "experiment",
    "n_nodes",
    "block_count",
    "replicas",
    "suc",
    "seed",
    "trial",
    "metric",
    "measured",
    "estimated",
    "unit",
];

/// Transactions per generated full-content block, coinbase included.
pub const TXS_PER_BLOCK: usize = 4;

pub const CLUSTER_KEY: &[u8] = b"karakasa-cluster-key";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid configuration: {0}")]
    Params(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<InvalidParams> for ExperimentError {
    fn from(e: InvalidParams) -> Self {
        ExperimentError::Params(e.to_string())
    }
}

impl ExperimentError {
    /// 2 for configuration errors, 3 for invariant violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Params(_) => 2,
            ExperimentError::Invariant(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub n_nodes: usize,
    pub block_count: u64,
    pub replicas: usize,
    pub suc: usize,
    pub seed: u64,
    /// Trial number; aggregate rows use 0.
    pub trial: usize,
    pub metric: String,
    pub measured: f64,
    pub estimated: f64,
    pub unit: String,
}

impl ResultRow {
    pub fn relative_error(&self) -> f64 {
        if self.estimated == 0.0 {
            (self.measured - self.estimated).abs()
        } else {
            ((self.measured - self.estimated) / self.estimated).abs()
        }
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reports<W: Write>(reports: &[CampaignReport], out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn node_specs(n: usize, seed: u64) -> Vec<NodeSpec> {
    (0..n)
        .map(|i| NodeSpec::new(format!("node-{seed}-{i}")))
        .collect()
}

fn build_chain(block_count: u64, seed: u64, mode: Mode) -> Result<VerifiedChain, ExperimentError> {
    let count = usize::try_from(block_count).map_err(|_| ConfigError::NoBlocks)?;
    let blocks = match mode {
        Mode::PlacementOnly => make_placement_chain(count, seed)?,
        Mode::FullContent => make_synthetic_chain(count, TXS_PER_BLOCK, seed)?,
    };
    Ok(VerifiedChain::new(blocks)?)
}

fn cluster_config(cfg: &ExperimentConfig) -> ClusterConfig {
    ClusterConfig {
        id_bits: 64,
        replicas: cfg.replicas,
        suc: cfg.suc,
    }
}

#[derive(Clone, Debug)]
pub struct StorageParams {
    pub nodes: Vec<usize>,
    pub block_count: u64,
    pub replicas: Vec<usize>,
    pub seed: u64,
    pub mode: Mode,
}

fn storage_row(
    experiment: &str,
    chain: &VerifiedChain,
    cfg: ExperimentConfig,
) -> Result<ResultRow, ExperimentError> {
    cfg.validate()?;
    let cluster = Cluster::provision(
        &node_specs(cfg.n_nodes, cfg.seed),
        chain,
        CLUSTER_KEY,
        cluster_config(&cfg),
    )?;
    let dist = measure_storage(&cluster);
    let expected_total = (cfg.replicas + 1) * chain.blocks().len();
    if dist.total != expected_total {
        return Err(ExperimentError::Invariant(format!(
            "stored {} copies, expected {expected_total}",
            dist.total
        )));
    }
    let estimate = estimate_blocks_per_node(&cfg);
    Ok(ResultRow {
        experiment: experiment.into(),
        n_nodes: cfg.n_nodes,
        block_count: cfg.block_count,
        replicas: cfg.replicas,
        suc: cfg.suc,
        seed: cfg.seed,
        trial: 0,
        metric: "mean_blocks_per_node".into(),
        measured: dist.mean,
        estimated: *estimate.numer() as f64 / *estimate.denom() as f64,
        unit: "blocks".into(),
    })
}

fn storage_sweep(experiment: &str, p: &StorageParams) -> Result<Vec<ResultRow>, ExperimentError> {
    let configs: Vec<ExperimentConfig> = p
        .nodes
        .iter()
        .flat_map(|&n| {
            p.replicas
                .iter()
                .map(move |&r| ExperimentConfig::new(p.block_count, n, r, p.seed, p.mode))
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    let chain = build_chain(p.block_count, p.seed, p.mode)?;
    // one provisioned cluster at a time keeps memory bounded at 512000 blocks
    configs
        .into_iter()
        .map(|cfg| storage_row(experiment, &chain, cfg))
        .collect()
}

/// Per-node storage as the cluster grows (replication fixed).
pub fn exp_storage(p: &StorageParams) -> Result<Vec<ResultRow>, ExperimentError> {
    storage_sweep("storage", p)
}

/// Per-node storage as the replica count grows (cluster size fixed).
pub fn exp_replication(p: &StorageParams) -> Result<Vec<ResultRow>, ExperimentError> {
    storage_sweep("replication", p)
}

#[derive(Clone, Debug)]
pub struct UtxoBuildParams {
    pub n_nodes: usize,
    pub block_counts: Vec<u64>,
    pub trials: usize,
    pub replicas: usize,
    pub seed: u64,
}

/// Expected messages to rebuild a UTXO set from `block_count` blocks in an
/// `n`-node ring: one transfer per block plus Chord's average path length
/// of `log2(n) / 2` lookup hops.
pub fn estimate_join_messages(block_count: u64, n: usize) -> f64 {
    block_count as f64 * ((n as f64).log2() / 2.0 + 1.0)
}

/// A fresh node joins an `n_nodes` cluster and fetches every block.
pub fn exp_utxo_build(p: &UtxoBuildParams) -> Result<Vec<ResultRow>, ExperimentError> {
    if p.trials == 0 {
        return Err(ExperimentError::Params("trials must be at least 1".into()));
    }
    for &count in &p.block_counts {
        ExperimentConfig::new(count, p.n_nodes, p.replicas, p.seed, Mode::FullContent)
            .validate()?;
    }
    let mut rows = Vec::new();
    for &count in &p.block_counts {
        let cfg = ExperimentConfig::new(count, p.n_nodes, p.replicas, p.seed, Mode::FullContent);
        let chain = build_chain(count, p.seed, Mode::FullContent)?;
        let base = Cluster::provision(
            &node_specs(p.n_nodes, p.seed),
            &chain,
            CLUSTER_KEY,
            cluster_config(&cfg),
        )?;
        let trial_rows: Vec<Result<ResultRow, ExperimentError>> = (1..=p.trials)
            .into_par_iter()
            .map(|trial| {
                let mut cluster = base.clone();
                let spec = NodeSpec::new(format!("joiner-{}-{count}-{trial}", p.seed));
                let report = cluster.join_cluster(spec, CLUSTER_KEY)?;
                let state = cluster.state(report.node).expect("joined");
                if state.utxoset() != chain.utxoset() {
                    return Err(ExperimentError::Invariant(
                        "joined node's UTXO set differs from the chain replay".into(),
                    ));
                }
                Ok(ResultRow {
                    experiment: "utxo_build".into(),
                    n_nodes: p.n_nodes,
                    block_count: count,
                    replicas: p.replicas,
                    suc: cfg.suc,
                    seed: p.seed,
                    trial,
                    metric: "join_messages".into(),
                    measured: report.messages as f64,
                    estimated: estimate_join_messages(count, p.n_nodes),
                    unit: "messages".into(),
                })
            })
            .collect();
        for row in trial_rows {
            rows.push(row?);
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct AttackParams {
    pub n_nodes: usize,
    pub replicas: usize,
    pub stack_depth: usize,
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

/// Probability that a uniformly chosen `k`-subset of `n` nodes contains
/// `h` specific nodes.
fn all_compromised_probability(n: usize, k: usize, h: usize) -> f64 {
    if h > k {
        return 0.0;
    }
    (0..h).map(|i| (k - i) as f64 / (n - i) as f64).product()
}

/// Transaction-rewriting campaigns at increasing compromised fractions.
/// The target is transaction 1 of block 1 with `stack_depth` blocks on
/// top; the mutation redirects its last output.
pub fn exp_attack(
    p: &AttackParams,
) -> Result<(Vec<ResultRow>, Vec<CampaignReport>), ExperimentError> {
    if p.trials == 0 {
        return Err(ExperimentError::Params("trials must be at least 1".into()));
    }
    if let Some(f) = p.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(ExperimentError::Params(format!(
            "fraction {f} outside [0, 1]"
        )));
    }
    let block_count = p.stack_depth as u64 + 2;
    let cfg = ExperimentConfig::new(
        block_count,
        p.n_nodes,
        p.replicas,
        p.seed,
        Mode::FullContent,
    );
    cfg.validate()?;
    let chain = build_chain(block_count, p.seed, Mode::FullContent)?;
    let base = Cluster::provision(
        &node_specs(p.n_nodes, p.seed),
        &chain,
        CLUSTER_KEY,
        cluster_config(&cfg),
    )?;
    let target = TxLocation {
        height: 1,
        position: 1,
    };
    let target_tx = chain.blocks()[1]
        .transactions()
        .get(1)
        .ok_or(AdversaryError::TargetNotFound)?;
    let encoded = encode_transaction(target_tx);
    let mutation = Mutation::flip_byte(&encoded, encoded.len() - 1);
    let affected = &chain.blocks()[1..];
    let mut distinct_holders = BTreeSet::new();
    for b in affected {
        distinct_holders.extend(base.holders(&b.id())?);
    }
    let node_ids = base.node_ids();

    let mut rows = Vec::new();
    let mut all_reports = Vec::new();
    for (fi, &fraction) in p.fractions.iter().enumerate() {
        let k = (fraction * p.n_nodes as f64).round() as usize;
        let reports: Vec<Result<CampaignReport, ExperimentError>> = (1..=p.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    p.seed
                        ^ ((fi as u64) << 32)
                        ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                );
                let compromised: BTreeSet<_> = sample(&mut rng, node_ids.len(), k)
                    .into_iter()
                    .map(|i| node_ids[i])
                    .collect();
                let mut cluster = base.clone();
                let plan = AttackPlan {
                    target,
                    compromised,
                    mutation: mutation.clone(),
                };
                Ok(rewrite_campaign(&mut cluster, &plan)?)
            })
            .collect();
        let reports: Vec<CampaignReport> = reports.into_iter().collect::<Result<_, _>>()?;
        let trials = reports.len() as f64;
        let rate = |pred: &dyn Fn(&CampaignReport) -> bool| {
            reports.iter().filter(|r| pred(r)).count() as f64 / trials
        };
        let mean = |f: &dyn Fn(&CampaignReport) -> u64| {
            reports.iter().map(|r| f(r) as f64).sum::<f64>() / trials
        };
        let required = reports[0].blocks_required as f64;
        let row = |metric: &str, measured: f64, estimated: f64, unit: &str| ResultRow {
            experiment: "attack".into(),
            n_nodes: p.n_nodes,
            block_count,
            replicas: p.replicas,
            suc: cfg.suc,
            seed: p.seed,
            trial: 0,
            metric: format!("{metric}:f={fraction:.3}"),
            measured,
            estimated,
            unit: unit.into(),
        };
        rows.push(row("detection_rate", rate(&|r| r.detected), 1.0, "ratio"));
        rows.push(row(
            "blocks_required",
            mean(&|r| r.copies_stored),
            required,
            "copies",
        ));
        rows.push(row(
            "copies_reached",
            mean(&|r| r.copies_reached),
            required * k as f64 / p.n_nodes as f64,
            "copies",
        ));
        rows.push(row(
            "fully_consistent_rate",
            rate(&|r| r.fully_consistent),
            all_compromised_probability(p.n_nodes, k, distinct_holders.len()),
            "ratio",
        ));
        all_reports.extend(reports);
    }
    Ok((rows, all_reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypergeometric_edge_cases() {
        assert_eq!(all_compromised_probability(10, 10, 3), 1.0);
        assert_eq!(all_compromised_probability(10, 2, 3), 0.0);
        assert!((all_compromised_probability(10, 5, 1) - 0.5).abs() < 1e-12);
        assert!((all_compromised_probability(4, 2, 2) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExperimentError::from(ConfigError::NoBlocks).exit_code(), 2);
        assert_eq!(ExperimentError::Invariant("x".into()).exit_code(), 3);
    }

    #[test]
    fn join_estimate() {
        assert!((estimate_join_messages(1000, 1024) - 6000.0).abs() < 1e-9);
    }
}
