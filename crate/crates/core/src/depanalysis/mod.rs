//! Task graphs from a dynamic trace.
//!
//! The Control DAG is the serial chain of executed tasks. Each node's memory
//! accesses are coalesced into load and store [`TupleSet`]s, and a sweep with
//! a [`LastWriterMap`] turns them into read-after-write edges (the Data DAG).

mod export;
mod last_writer;
mod tuples;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::tir::TaskKind;
use crate::tracer::{Event, Trace};

pub use export::{DagDocument, ExportNode};
pub use last_writer::{build_data_dag, DataDag, LastWriterMap};
pub use tuples::{build_tuple_sets, MemTuple, NodeTuples, TupleSet};

/// Kernel id given to synthetic nodes holding out-of-task memory traffic.
pub const GLUE_KERNEL: &str = "GLUE";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagNode {
    pub index: usize,
    pub task_kind: TaskKind,
    pub kernel_id: String,
    pub bb_ids: Vec<u32>,
    /// Static site of the task; `None` for glue nodes.
    pub site_id: Option<String>,
    /// Positions in the trace's event list covered by this node.
    #[serde(skip)]
    pub events: Range<usize>,
}

impl DagNode {
    pub fn is_glue(&self) -> bool {
        self.site_id.is_none() && self.kernel_id == GLUE_KERNEL
    }
}

/// Tasks in serial execution order; edges are `i -> i+1`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ControlDag {
    pub nodes: Vec<DagNode>,
}

impl ControlDag {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.nodes.len()).map(|i| (i - 1, i))
    }

    pub fn kind(&self, i: usize) -> TaskKind {
        self.nodes[i].task_kind
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DagError {
    #[error("seq {seq}: task entered while another task is open")]
    NestedEnter { seq: u64 },
    #[error("seq {seq}: task exit without a matching enter")]
    UnmatchedExit { seq: u64 },
    #[error("trace ends inside the task entered at seq {seq}")]
    Unterminated { seq: u64 },
}

fn is_memory(e: &Event) -> bool {
    matches!(
        e,
        Event::Load { .. }
            | Event::Store { .. }
            | Event::MemCpy { .. }
            | Event::MemSet { .. }
            | Event::MemMove { .. }
    )
}

/// One node per TaskEnter/TaskExit span. Memory events outside any span
/// become a synthetic Type-1 glue node per basic block, so that within every
/// node all loads precede all stores.
pub fn build_control_dag(trace: &Trace) -> Result<ControlDag, DagError> {
    let mut nodes: Vec<DagNode> = Vec::new();
    let mut open_task: Option<(usize, u64)> = None;
    let mut open_glue: Option<usize> = None;
    let mut outer_bb: Option<u32> = None;

    for (pos, e) in trace.events.iter().enumerate() {
        match &e.event {
            Event::TaskEnter {
                task_kind,
                kernel_id,
                site_id,
            } => {
                if open_task.is_some() {
                    return Err(DagError::NestedEnter { seq: e.seq });
                }
                open_glue = None;
                open_task = Some((nodes.len(), e.seq));
                nodes.push(DagNode {
                    index: nodes.len(),
                    task_kind: *task_kind,
                    kernel_id: kernel_id.clone(),
                    bb_ids: Vec::new(),
                    site_id: Some(site_id.clone()),
                    events: pos..pos + 1,
                });
            }
            Event::TaskExit => {
                let Some((i, _)) = open_task.take() else {
                    return Err(DagError::UnmatchedExit { seq: e.seq });
                };
                nodes[i].events.end = pos + 1;
            }
            Event::BbEnter { bb } => match open_task {
                Some((i, _)) => {
                    if !nodes[i].bb_ids.contains(bb) {
                        nodes[i].bb_ids.push(*bb);
                    }
                }
                None => {
                    outer_bb = Some(*bb);
                    open_glue = None;
                }
            },
            Event::BbExit { .. } => {
                if open_task.is_none() {
                    outer_bb = None;
                    open_glue = None;
                }
            }
            ev if is_memory(ev) => {
                if open_task.is_some() {
                    continue;
                }
                let g = match open_glue {
                    Some(g) => g,
                    None => {
                        let g = nodes.len();
                        nodes.push(DagNode {
                            index: g,
                            task_kind: TaskKind::Type1,
                            kernel_id: GLUE_KERNEL.to_string(),
                            bb_ids: outer_bb.into_iter().collect(),
                            site_id: None,
                            events: pos..pos + 1,
                        });
                        open_glue = Some(g);
                        g
                    }
                };
                nodes[g].events.end = pos + 1;
            }
            _ => {}
        }
    }
    if let Some((_, seq)) = open_task {
        return Err(DagError::Unterminated { seq });
    }
    Ok(ControlDag { nodes })
}

/// Control DAG, tuple sets and Data DAG of one trace.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub control: ControlDag,
    pub tuples: Vec<NodeTuples>,
    pub data: DataDag,
}

pub fn analyze(trace: &Trace) -> Result<Analysis, DagError> {
    let control = build_control_dag(trace)?;
    let tuples = build_tuple_sets(trace, &control);
    let data = build_data_dag(&control, &tuples);
    Ok(Analysis {
        control,
        tuples,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tir::bench::running_example;
    use crate::tir::exec::Inputs;
    use crate::tracer::interpret_and_trace;

    #[test]
    fn running_example_is_a_six_node_chain() {
        let (_, trace) = interpret_and_trace(&running_example(2), &Inputs::seeded(0)).unwrap();
        let dag = build_control_dag(&trace).unwrap();
        assert_eq!(dag.len(), 6);
        assert_eq!(
            dag.edges().collect::<Vec<_>>(),
            vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]
        );
        let kinds: Vec<&str> = dag.nodes.iter().map(|n| n.kernel_id.as_str()).collect();
        assert_eq!(
            kinds,
            [
                "READ_DATA",
                "FFT",
                "WRITE_DATA",
                "READ_DATA",
                "FFT",
                "WRITE_DATA"
            ]
        );
        assert!(dag.nodes.iter().all(|n| !n.bb_ids.is_empty()));

        let a = analyze(&trace).unwrap();
        assert_eq!(
            a.data.edges.iter().copied().collect::<Vec<_>>(),
            vec![(0, 1), (1, 2), (3, 4), (4, 5)]
        );
        for i in [1, 4] {
            assert_eq!(a.tuples[i].loads.total_bytes(), 16_384);
            assert_eq!(a.tuples[i].stores.total_bytes(), 16_384);
        }
    }

    #[test]
    fn empty_trace_gives_empty_dag() {
        let dag = build_control_dag(&Trace::new("", Default::default())).unwrap();
        assert!(dag.is_empty());
    }

    #[test]
    fn glue_blocks_become_synthetic_nodes() {
        let mut t = Trace::new("", Default::default());
        t.push(Event::BbEnter { bb: 7 });
        t.push(Event::MemSet { dst: 100, bytes: 8 });
        t.push(Event::BbExit { bb: 7 });
        t.push(Event::BbEnter { bb: 8 });
        t.push(Event::MemCpy {
            src: 100,
            dst: 200,
            bytes: 8,
        });
        t.push(Event::BbExit { bb: 8 });
        t.push(Event::TaskEnter {
            task_kind: TaskKind::Type2,
            kernel_id: "FFT".into(),
            site_id: "main:2".into(),
        });
        t.push(Event::BbEnter { bb: 9 });
        t.push(Event::Load {
            addr: 200,
            bytes: 8,
        });
        t.push(Event::BbExit { bb: 9 });
        t.push(Event::TaskExit);
        let dag = build_control_dag(&t).unwrap();
        assert_eq!(dag.len(), 3);
        assert!(dag.nodes[0].is_glue() && dag.nodes[1].is_glue());
        assert_eq!(dag.nodes[0].bb_ids, vec![7]);
        assert_eq!(dag.nodes[1].bb_ids, vec![8]);
        assert_eq!(dag.nodes[0].events, 1..2);
        assert_eq!(dag.nodes[1].events, 4..5);
        assert_eq!(dag.nodes[2].events, 6..11);
        let a = analyze(&t).unwrap();
        assert_eq!(
            a.data.edges.iter().copied().collect::<Vec<_>>(),
            vec![(0, 1), (1, 2)]
        );
    }

    /// A block that overwrites bytes and a following block that reads them
    /// back depend on each other, not on the earlier writer.
    #[test]
    fn consecutive_glue_blocks_see_each_others_stores() {
        let mut t = Trace::new("", Default::default());
        t.push(Event::TaskEnter {
            task_kind: TaskKind::Type1,
            kernel_id: "READ_DATA".into(),
            site_id: "main:0".into(),
        });
        t.push(Event::BbEnter { bb: 0 });
        t.push(Event::Store { addr: 0, bytes: 16 });
        t.push(Event::BbExit { bb: 0 });
        t.push(Event::TaskExit);
        t.push(Event::BbEnter { bb: 1 });
        t.push(Event::MemSet { dst: 0, bytes: 16 });
        t.push(Event::BbExit { bb: 1 });
        t.push(Event::BbEnter { bb: 2 });
        t.push(Event::MemMove {
            src: 0,
            dst: 8,
            bytes: 16,
        });
        t.push(Event::BbExit { bb: 2 });
        let a = analyze(&t).unwrap();
        assert_eq!(a.control.len(), 3);
        assert_eq!(
            a.data.edges.iter().copied().collect::<Vec<_>>(),
            vec![(1, 2)]
        );
    }

    #[test]
    fn unbalanced_spans_are_rejected() {
        let mut t = Trace::new("", Default::default());
        t.push(Event::TaskExit);
        assert_eq!(
            build_control_dag(&t),
            Err(DagError::UnmatchedExit { seq: 0 })
        );
        let mut t = Trace::new("", Default::default());
        t.push(Event::TaskEnter {
            task_kind: TaskKind::Type1,
            kernel_id: "X".into(),
            site_id: "main:0".into(),
        });
        assert_eq!(
            build_control_dag(&t),
            Err(DagError::Unterminated { seq: 0 })
        );
    }
}
