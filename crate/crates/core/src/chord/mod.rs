//! Chord ring simulation with a global view of membership.
//!
//! Routing tables are materialized per node and rebuilt by [`ChordRing::stabilize`];
//! lookups walk the tables iteratively and count one message per node queried.

mod id;
mod ring;

use thiserror::Error;

pub(crate) use id::space_id;
pub use id::{in_half_open, in_open, ring_id, IdSpace, RingId};
pub use ring::{
    replica_set, responsible_node, ChordRing, Lookup, OverlayNode, RoutingTable, StabilizeStats,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChordError {
    #[error("identifier width {0} outside 1..=160")]
    BadM(u32),
    #[error("ring is empty")]
    EmptyRing,
    #[error("{needed} distinct nodes needed, ring has {available}")]
    NotEnoughNodes { needed: usize, available: usize },
    #[error("routing tables are stale; stabilize first")]
    NotStabilized,
    #[error("node id {0} already present")]
    IdCollision(RingId),
    #[error("unknown node {0}")]
    UnknownNode(RingId),
}
