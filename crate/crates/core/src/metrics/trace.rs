use serde::Serialize;

/// Cluster operation a message was spent on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Operation {
    GetBlock,
    StoreBlock,
    Stabilize,
    Repair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub op: Operation,
    pub lookup_hops: u64,
    pub transfers: u64,
    pub stabilize: u64,
}

/// Append-only log of message charges.
#[derive(Clone, Debug, Default)]
pub struct MessageTrace {
    entries: Vec<TraceEntry>,
}

impl MessageTrace {
    pub fn new() -> MessageTrace {
        MessageTrace::default()
    }

    pub fn record(&mut self, entry: TraceEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries recorded after position `mark`, as a separate trace.
    pub fn since(&self, mark: usize) -> MessageTrace {
        MessageTrace {
            entries: self.entries[mark.min(self.entries.len())..].to_vec(),
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MessageTotals {
    pub lookup_hops: u64,
    pub transfers: u64,
    pub stabilize: u64,
}

impl MessageTotals {
    pub fn total(&self) -> u64 {
        self.lookup_hops + self.transfers + self.stabilize
    }
}

pub fn measure_messages(trace: &MessageTrace) -> MessageTotals {
    trace
        .entries()
        .iter()
        .fold(MessageTotals::default(), |acc, e| MessageTotals {
            lookup_hops: acc.lookup_hops + e.lookup_hops,
            transfers: acc.transfers + e.transfers,
            stabilize: acc.stabilize + e.stabilize,
        })
}

/// Totals restricted to one operation kind.
pub fn measure_operation(trace: &MessageTrace, op: Operation) -> MessageTotals {
    let mut filtered = MessageTrace::new();
    for e in trace.entries().iter().filter(|e| e.op == op) {
        filtered.record(*e);
    }
    measure_messages(&filtered)
}
