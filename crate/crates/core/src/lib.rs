//! Simulator for a blockchain whose block storage is sharded across a
//! Chord DHT cluster with neighbor replication.
//!
//! Nodes keep only the UTXO set and a lightweight header index locally and
//! fetch blocks from the cluster by their header hash, checking every
//! response against the requested id.

pub mod adversary;
pub mod chain;
pub mod chord;
pub mod cluster;
pub mod experiments;
pub mod metrics;
