//! Fork-join schedule generation.
//!
//! Nodes of the Control DAG are regrouped into alternating Type-1 and Type-2
//! regions: every Type-1 node whose Data DAG parents are scheduled forms the
//! next serial region, then every ready Type-2 node joins one parallel
//! region guarded by a counter barrier. Empty regions are dropped.

mod emit;
mod safety;

use serde::{Deserialize, Serialize};

use crate::depanalysis::{ControlDag, DataDag};
use crate::tir::TaskKind;

pub use emit::{
    emit_parallel_program, EmitError, ParallelProgram, Section, TaskDescriptor, TaskOp,
};
pub use safety::{
    schedule_with_repair, verify_reorder_safety, Hazard, HazardKind, RepairError, SafetyReport,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub kind: TaskKind,
    /// Control DAG indices, ascending.
    pub tasks: Vec<usize>,
}

impl Region {
    /// Barrier count for a parallel region.
    pub fn counter_target(&self) -> Option<usize> {
        (self.kind == TaskKind::Type2).then_some(self.tasks.len())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleDag {
    pub regions: Vec<Region>,
}

impl ScheduleDag {
    /// Region position of every node.
    pub fn region_of(&self, node_count: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; node_count];
        for (r, region) in self.regions.iter().enumerate() {
            for &t in &region.tasks {
                if t < node_count {
                    out[t] = Some(r);
                }
            }
        }
        out
    }

    /// Sizes of the Type-2 regions in order.
    pub fn parallel_widths(&self) -> Vec<usize> {
        self.regions
            .iter()
            .filter(|r| r.kind == TaskKind::Type2)
            .map(|r| r.tasks.len())
            .collect()
    }

    /// Every Data DAG edge goes from an earlier region to a later one.
    pub fn respects(&self, ddag: &DataDag) -> bool {
        let region = self.region_of(ddag.node_count);
        ddag.edges
            .iter()
            .all(|&(w, r)| match (region[w], region[r]) {
                (Some(a), Some(b)) => a < b,
                _ => false,
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("dependence cycle among nodes {0:?}")]
    Cycle(Vec<usize>),
    #[error("edge ({0}, {1}) refers to a node outside the graph")]
    BadEdge(usize, usize),
}

pub fn generate_schedule(cdag: &ControlDag, ddag: &DataDag) -> Result<ScheduleDag, ScheduleError> {
    let n = cdag.len();
    if let Some(&(w, r)) = ddag.edges.iter().find(|&&(w, r)| w >= n || r >= n) {
        return Err(ScheduleError::BadEdge(w, r));
    }
    let parents = ddag.parents();
    let mut scheduled = vec![false; n];
    let mut remaining = n;
    let mut regions = Vec::new();
    let ready = |i: usize, scheduled: &[bool]| parents[i].iter().all(|&p| scheduled[p]);

    while remaining > 0 {
        // Both steps take the nodes that are ready when the step begins, so a
        // region never contains a parent of one of its own members.
        let serial: Vec<usize> = (0..n)
            .filter(|&i| !scheduled[i] && cdag.kind(i) == TaskKind::Type1 && ready(i, &scheduled))
            .collect();
        for &i in &serial {
            scheduled[i] = true;
        }
        remaining -= serial.len();

        let parallel: Vec<usize> = (0..n)
            .filter(|&i| !scheduled[i] && cdag.kind(i) == TaskKind::Type2 && ready(i, &scheduled))
            .collect();
        for &i in &parallel {
            scheduled[i] = true;
        }
        remaining -= parallel.len();

        if serial.is_empty() && parallel.is_empty() {
            return Err(ScheduleError::Cycle(
                (0..n).filter(|&i| !scheduled[i]).collect(),
            ));
        }
        if !serial.is_empty() {
            regions.push(Region {
                kind: TaskKind::Type1,
                tasks: serial,
            });
        }
        if !parallel.is_empty() {
            regions.push(Region {
                kind: TaskKind::Type2,
                tasks: parallel,
            });
        }
    }
    Ok(ScheduleDag { regions })
}
