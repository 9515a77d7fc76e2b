//! Closed-form storage and message estimates, and the measurements the
//! simulator compares them with.
//!
//! Estimates are exact: byte counts are integers or exact rationals, and
//! 1 MB is 10^6 bytes.

pub mod stats;
mod trace;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{HEADER_LEN, MAX_BLOCK_SIZE};
use crate::cluster::Cluster;

pub use trace::{
    measure_messages, measure_operation, MessageTotals, MessageTrace, Operation, TraceEntry,
};

/// Exact byte quantity.
pub type Bytes = Ratio<u128>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    PlacementOnly,
    FullContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("block_count must be at least 1")]
    NoBlocks,
    #[error("n_nodes must be at least 1")]
    NoNodes,
    #[error("suc ({suc}) must not exceed n_nodes - 1 ({max})")]
    TooManySuccessors { suc: usize, max: usize },
    #[error("replicas ({replicas}) must not exceed suc ({suc})")]
    TooManyReplicas { replicas: usize, suc: usize },
    #[error("block_size must be between 1 and {MAX_BLOCK_SIZE}")]
    BadBlockSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ExperimentConfig {
    pub block_size: u64,
    pub block_count: u64,
    pub n_nodes: usize,
    pub suc: usize,
    pub replicas: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl ExperimentConfig {
    /// 1 MB blocks, `suc = max(replicas, 8)` capped at `n_nodes - 1`.
    pub fn new(
        block_count: u64,
        n_nodes: usize,
        replicas: usize,
        seed: u64,
        mode: Mode,
    ) -> ExperimentConfig {
        ExperimentConfig {
            block_size: MAX_BLOCK_SIZE,
            block_count,
            n_nodes,
            suc: replicas.max(8).min(n_nodes.saturating_sub(1)),
            replicas,
            seed,
            mode,
        }
    }

    /// Checks `BlockCount ≥ 1`, `Suc ≤ N − 1` and `R ≤ Suc`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.block_count == 0 {
            return Err(ConfigError::NoBlocks);
        }
        if self.n_nodes == 0 {
            return Err(ConfigError::NoNodes);
        }
        if self.block_size == 0 || self.block_size > MAX_BLOCK_SIZE {
            return Err(ConfigError::BadBlockSize);
        }
        if self.suc > self.n_nodes - 1 {
            return Err(ConfigError::TooManySuccessors {
                suc: self.suc,
                max: self.n_nodes - 1,
            });
        }
        if self.replicas > self.suc {
            return Err(ConfigError::TooManyReplicas {
                replicas: self.replicas,
                suc: self.suc,
            });
        }
        Ok(())
    }
}

/// Storage a full node needs: `block_count × block_size`.
pub fn estimate_full_node(cfg: &ExperimentConfig) -> Bytes {
    Bytes::from_integer(u128::from(cfg.block_count) * u128::from(cfg.block_size))
}

/// Storage per cluster node: `block_count × block_size × (R + 1) / N`.
pub fn estimate_karakasa(cfg: &ExperimentConfig) -> Bytes {
    estimate_full_node(cfg) * (cfg.replicas as u128 + 1) / cfg.n_nodes.max(1) as u128
}

/// Blocks per cluster node: `block_count × (R + 1) / N`.
pub fn estimate_blocks_per_node(cfg: &ExperimentConfig) -> Ratio<u128> {
    Ratio::new(
        u128::from(cfg.block_count) * (cfg.replicas as u128 + 1),
        cfg.n_nodes.max(1) as u128,
    )
}

/// Storage of a header-only node: `block_count × 80`.
pub fn estimate_spv(block_count: u64) -> u128 {
    u128::from(block_count) * HEADER_LEN as u128
}

/// Cluster size beyond which the whole cluster stores fewer bytes than the
/// same number of header-only nodes: `floor(block_size / header_size)`.
/// The cluster total (`block_count × block_size`) is below the header-only
/// total (`N × block_count × header_size`) exactly when `N` exceeds it.
pub fn spv_crossover_nodes(block_size: u64, header_size: u64) -> u64 {
    block_size / header_size
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StorageDistribution {
    pub counts: Vec<usize>,
    pub total: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: usize,
    pub max: usize,
}

impl StorageDistribution {
    pub fn from_counts(counts: Vec<usize>) -> StorageDistribution {
        let total: usize = counts.iter().sum();
        let n = counts.len().max(1) as f64;
        let mean = total as f64 / n;
        let var = counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        StorageDistribution {
            min: counts.iter().copied().min().unwrap_or(0),
            max: counts.iter().copied().max().unwrap_or(0),
            counts,
            total,
            mean,
            stddev: var.sqrt(),
        }
    }

    pub fn bytes(&self, block_size: u64) -> Vec<u128> {
        self.counts
            .iter()
            .map(|&c| c as u128 * u128::from(block_size))
            .collect()
    }

    pub fn mean_bytes(&self, block_size: u64) -> Bytes {
        Bytes::new(
            self.total as u128 * u128::from(block_size),
            self.counts.len().max(1) as u128,
        )
    }
}

/// Exact per-node block counts.
pub fn measure_storage(cluster: &Cluster) -> StorageDistribution {
    StorageDistribution::from_counts(cluster.shard_counts().into_iter().map(|(_, c)| c).collect())
}
