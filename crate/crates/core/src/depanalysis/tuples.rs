use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ControlDag;
use crate::tracer::{Event, Trace};

/// A maximal contiguous accessed range. `end` is inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemTuple {
    pub start: u64,
    pub end: u64,
    pub access_count: u64,
    pub byte_count: u64,
    pub task: usize,
}

/// Access ranges of one node keyed by start address. Overlapping or
/// byte-adjacent ranges are merged on insert.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TupleSet {
    task: usize,
    // start -> (end inclusive, access count)
    ranges: BTreeMap<u64, (u64, u64)>,
}

impl TupleSet {
    pub fn new(task: usize) -> Self {
        Self {
            task,
            ranges: BTreeMap::new(),
        }
    }

    /// Records `accesses` accesses covering `bytes` bytes from `addr`.
    pub fn insert(&mut self, addr: u64, bytes: u64, accesses: u64) {
        if bytes == 0 {
            return;
        }
        let mut start = addr;
        let mut end = addr + bytes - 1;
        let mut count = accesses;
        let touching: Vec<u64> = self
            .ranges
            .range(..=end.saturating_add(1))
            .rev()
            .take_while(|(_, &(e, _))| e.saturating_add(1) >= start)
            .map(|(&s, _)| s)
            .collect();
        for s in touching {
            let (e, c) = self.ranges.remove(&s).expect("present");
            start = start.min(s);
            end = end.max(e);
            count += c;
        }
        self.ranges.insert(start, (end, count));
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = MemTuple> + '_ {
        self.ranges
            .iter()
            .map(|(&start, &(end, access_count))| MemTuple {
                start,
                end,
                access_count,
                byte_count: end - start + 1,
                task: self.task,
            })
    }

    pub fn total_bytes(&self) -> u64 {
        self.ranges.iter().map(|(s, (e, _))| e - s + 1).sum()
    }

    /// Whether any byte of `[start, end]` is covered.
    pub fn covers_any(&self, start: u64, end: u64) -> bool {
        self.ranges
            .range(..=end)
            .next_back()
            .is_some_and(|(_, &(e, _))| e >= start)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeTuples {
    pub loads: TupleSet,
    pub stores: TupleSet,
}

/// Per-node load and store sets. Intrinsics expand to a load of the source
/// range (copy, move) and a store of the destination range.
pub fn build_tuple_sets(trace: &Trace, dag: &ControlDag) -> Vec<NodeTuples> {
    dag.nodes
        .iter()
        .map(|node| {
            let mut t = NodeTuples {
                loads: TupleSet::new(node.index),
                stores: TupleSet::new(node.index),
            };
            for e in &trace.events[node.events.clone()] {
                match e.event {
                    Event::Load { addr, bytes } => t.loads.insert(addr, bytes, 1),
                    Event::Store { addr, bytes } => t.stores.insert(addr, bytes, 1),
                    Event::MemCpy { src, dst, bytes } | Event::MemMove { src, dst, bytes } => {
                        t.loads.insert(src, bytes, 1);
                        t.stores.insert(dst, bytes, 1);
                    }
                    Event::MemSet { dst, bytes } => t.stores.insert(dst, bytes, 1),
                    _ => {}
                }
            }
            t
        })
        .collect()
}
