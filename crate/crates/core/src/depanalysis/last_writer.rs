use std::collections::{BTreeMap, BTreeSet};

use super::{ControlDag, NodeTuples};

/// Disjoint address intervals mapped to the node that last stored to them.
/// Intervals are inclusive on both ends.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LastWriterMap {
    // start -> (end, writer)
    segments: BTreeMap<u64, (u64, usize)>,
}

impl LastWriterMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Segments overlapping `[start, end]`, clipped to it, in address order.
    pub fn query(&self, start: u64, end: u64) -> Vec<(u64, u64, usize)> {
        let mut hits: Vec<(u64, u64, usize)> = self
            .segments
            .range(..=end)
            .rev()
            .take_while(|(_, &(e, _))| e >= start)
            .map(|(&s, &(e, w))| (s.max(start), e.min(end), w))
            .collect();
        hits.reverse();
        hits
    }

    /// Records `writer` as the last writer of `[start, end]`, splitting any
    /// partially covered segment so its uncovered remainder keeps its writer.
    pub fn assign(&mut self, start: u64, end: u64, writer: usize) {
        let covered: Vec<(u64, u64, usize)> = self
            .segments
            .range(..=end)
            .rev()
            .take_while(|(_, &(e, _))| e >= start)
            .map(|(&s, &(e, w))| (s, e, w))
            .collect();
        for (s, e, w) in covered {
            self.segments.remove(&s);
            if s < start {
                self.segments.insert(s, (start - 1, w));
            }
            if e > end {
                self.segments.insert(end + 1, (e, w));
            }
        }
        self.segments.insert(start, (end, writer));
    }

    pub fn segments(&self) -> impl Iterator<Item = (u64, u64, usize)> + '_ {
        self.segments.iter().map(|(&s, &(e, w))| (s, e, w))
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segments are well formed and pairwise disjoint.
    pub fn is_disjoint(&self) -> bool {
        let mut prev_end: Option<u64> = None;
        for (s, e, _) in self.segments() {
            if s > e || prev_end.is_some_and(|p| p >= s) {
                return false;
            }
            prev_end = Some(e);
        }
        true
    }
}

/// Read-after-write dependences over the Control DAG's nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataDag {
    pub node_count: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl DataDag {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            edges: BTreeSet::new(),
        }
    }

    /// Parent lists indexed by node.
    pub fn parents(&self) -> Vec<Vec<usize>> {
        let mut p = vec![Vec::new(); self.node_count];
        for &(w, r) in &self.edges {
            p[r].push(w);
        }
        p
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut c = vec![Vec::new(); self.node_count];
        for &(w, r) in &self.edges {
            c[w].push(r);
        }
        c
    }
}

/// Visits nodes in serial order: each load range picks up edges from its
/// recorded last writers, then the node's stores overwrite the map.
pub fn build_data_dag(dag: &ControlDag, tuples: &[NodeTuples]) -> DataDag {
    let mut map = LastWriterMap::new();
    let mut out = DataDag::new(dag.len());
    for (node, t) in tuples.iter().enumerate() {
        for load in t.loads.iter() {
            for (_, _, w) in map.query(load.start, load.end) {
                if w != node {
                    out.edges.insert((w, node));
                }
            }
        }
        for store in t.stores.iter() {
            map.assign(store.start, store.end, node);
        }
        debug_assert!(map.is_disjoint());
    }
    out
}
