//! Byte-level check that running regions in order (parallel regions with
//! unordered members) reads and leaves exactly what the serial order does.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{generate_schedule, ScheduleDag, ScheduleError};
use crate::depanalysis::{ControlDag, DataDag, LastWriterMap, NodeTuples, TupleSet};
use crate::tir::TaskKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    /// A load observes a different last writer than in serial order.
    StaleRead,
    /// Two members of one parallel region touch the same bytes and at least
    /// one of them writes.
    Race,
    /// Final memory contents come from a different writer.
    FinalWrite,
}

/// An ordering `first` before `second` (`first < second`) that the schedule
/// fails to guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hazard {
    pub first: usize,
    pub second: usize,
    pub kind: HazardKind,
    pub addr: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub hazards: Vec<Hazard>,
}

impl SafetyReport {
    pub fn is_ok(&self) -> bool {
        self.hazards.is_empty()
    }
}

type Segments = Vec<(u64, u64, usize)>;

/// Elementary sub-ranges of `[start, end]` where the writer assignment of
/// `a` and `b` differ, as `(addr, writer in a, writer in b)`.
fn diff(
    start: u64,
    end: u64,
    a: &[(u64, u64, usize)],
    b: &[(u64, u64, usize)],
) -> Vec<(u64, Option<usize>, Option<usize>)> {
    let mut cuts: BTreeSet<u64> = BTreeSet::new();
    cuts.insert(start);
    for &(s, e, _) in a.iter().chain(b) {
        cuts.insert(s.max(start));
        if e < end {
            cuts.insert(e + 1);
        }
    }
    let owner = |segs: &[(u64, u64, usize)], x: u64| {
        segs.iter()
            .find(|&&(s, e, _)| s <= x && x <= e)
            .map(|s| s.2)
    };
    let mut out = Vec::new();
    for &x in cuts.range(start..=end) {
        let (wa, wb) = (owner(a, x), owner(b, x));
        if wa != wb && !out.iter().any(|&(_, pa, pb)| (pa, pb) == (wa, wb)) {
            out.push((x, wa, wb));
        }
    }
    out
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn overlap_addr(a: &TupleSet, b: &TupleSet) -> Option<u64> {
    a.iter().find(|t| b.covers_any(t.start, t.end)).map(|t| {
        b.iter()
            .find(|u| u.start <= t.end && t.start <= u.end)
            .map_or(t.start, |u| u.start.max(t.start))
    })
}

pub fn verify_reorder_safety(
    cdag: &ControlDag,
    tuples: &[NodeTuples],
    sched: &ScheduleDag,
) -> SafetyReport {
    let n = cdag.len().min(tuples.len());
    let mut hazards = BTreeSet::new();

    // Reference: what every load sees in serial order.
    let mut serial = LastWriterMap::new();
    let mut seen: Vec<Vec<Segments>> = Vec::with_capacity(n);
    for t in &tuples[..n] {
        seen.push(
            t.loads
                .iter()
                .map(|l| serial.query(l.start, l.end))
                .collect(),
        );
        for s in t.stores.iter() {
            serial.assign(s.start, s.end, s.task);
        }
    }

    let mut map = LastWriterMap::new();
    let check_loads = |node: usize, map: &LastWriterMap, hazards: &mut BTreeSet<Hazard>| {
        for (j, l) in tuples[node].loads.iter().enumerate() {
            let got = map.query(l.start, l.end);
            if got == seen[node][j] {
                continue;
            }
            for (addr, expect, actual) in diff(l.start, l.end, &seen[node][j], &got) {
                let (first, second) = match (expect, actual) {
                    (_, Some(x)) if x > node => (node, x),
                    (Some(y), Some(x)) => ordered(x, y),
                    (Some(y), None) => ordered(y, node),
                    (None, Some(x)) => ordered(x, node),
                    (None, None) => continue,
                };
                hazards.insert(Hazard {
                    first,
                    second,
                    kind: HazardKind::StaleRead,
                    addr,
                });
            }
        }
    };

    for region in &sched.regions {
        let members: Vec<usize> = region.tasks.iter().copied().filter(|&t| t < n).collect();
        match region.kind {
            TaskKind::Type1 => {
                for &t in &members {
                    check_loads(t, &map, &mut hazards);
                    for s in tuples[t].stores.iter() {
                        map.assign(s.start, s.end, t);
                    }
                }
            }
            TaskKind::Type2 => {
                for &t in &members {
                    check_loads(t, &map, &mut hazards);
                }
                for (i, &a) in members.iter().enumerate() {
                    for &b in &members[i + 1..] {
                        let (ta, tb) = (&tuples[a], &tuples[b]);
                        let conflict = overlap_addr(&ta.stores, &tb.stores)
                            .or_else(|| overlap_addr(&ta.loads, &tb.stores))
                            .or_else(|| overlap_addr(&ta.stores, &tb.loads));
                        if let Some(addr) = conflict {
                            let (first, second) = ordered(a, b);
                            hazards.insert(Hazard {
                                first,
                                second,
                                kind: HazardKind::Race,
                                addr,
                            });
                        }
                    }
                }
                for &t in &members {
                    for s in tuples[t].stores.iter() {
                        map.assign(s.start, s.end, t);
                    }
                }
            }
        }
    }

    let expect: Segments = serial.segments().collect();
    let actual: Segments = map.segments().collect();
    if expect != actual {
        let lo = expect.iter().chain(&actual).map(|s| s.0).min().unwrap_or(0);
        let hi = expect.iter().chain(&actual).map(|s| s.1).max().unwrap_or(0);
        for (addr, e, a) in diff(lo, hi, &expect, &actual) {
            if let (Some(x), Some(y)) = (e, a) {
                let (first, second) = ordered(x, y);
                hazards.insert(Hazard {
                    first,
                    second,
                    kind: HazardKind::FinalWrite,
                    addr,
                });
            }
        }
    }

    SafetyReport {
        hazards: hazards.into_iter().collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RepairError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("ordering edges did not remove hazards {0:?}")]
    Stuck(Vec<Hazard>),
}

/// Schedule plus the ordering edges that had to be added to make it safe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Repaired {
    pub schedule: ScheduleDag,
    pub data: DataDag,
    pub added: Vec<(usize, usize)>,
}

/// Generates a schedule and, while it is unsafe, adds an ordering edge for
/// every reported hazard and regenerates.
pub fn schedule_with_repair(
    cdag: &ControlDag,
    ddag: &DataDag,
    tuples: &[NodeTuples],
) -> Result<Repaired, RepairError> {
    let mut data = ddag.clone();
    let mut added = Vec::new();
    loop {
        let schedule = generate_schedule(cdag, &data)?;
        let report = verify_reorder_safety(cdag, tuples, &schedule);
        if report.is_ok() {
            return Ok(Repaired {
                schedule,
                data,
                added,
            });
        }
        let before = data.edges.len();
        for h in &report.hazards {
            if data.edges.insert((h.first, h.second)) {
                added.push((h.first, h.second));
            }
        }
        if data.edges.len() == before {
            return Err(RepairError::Stuck(report.hazards));
        }
        log::debug!(
            "schedule repair: {} ordering edge(s) added",
            data.edges.len() - before
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depanalysis::{build_data_dag, DagNode};
    use crate::schedgen::Region;

    fn node(i: usize, kind: TaskKind) -> DagNode {
        DagNode {
            index: i,
            task_kind: kind,
            kernel_id: "X".into(),
            bb_ids: vec![0],
            site_id: Some(format!("main:{i}")),
            events: 0..0,
        }
    }

    /// Inclusive (start, end) ranges.
    type Ranges<'a> = &'a [(u64, u64)];

    /// One (loads, stores) pair per node.
    fn tuples(spec: &[(Ranges, Ranges)]) -> Vec<NodeTuples> {
        spec.iter()
            .enumerate()
            .map(|(i, (loads, stores))| {
                let mut t = NodeTuples {
                    loads: TupleSet::new(i),
                    stores: TupleSet::new(i),
                };
                for &(a, n) in *loads {
                    t.loads.insert(a, n, 1);
                }
                for &(a, n) in *stores {
                    t.stores.insert(a, n, 1);
                }
                t
            })
            .collect()
    }

    /// Node 0 (Type-2) reads X, node 1 (Type-1) overwrites X. RAW-only
    /// analysis gives no edge, so the Type-1 writer is hoisted first.
    #[test]
    fn hoisted_writer_is_reported_and_repaired() {
        let cdag = ControlDag {
            nodes: vec![
                node(0, TaskKind::Type2),
                node(1, TaskKind::Type1),
                node(2, TaskKind::Type1),
            ],
        };
        let t = tuples(&[
            (&[(100, 8)], &[(200, 8)]),
            (&[], &[(100, 8)]),
            (&[(200, 8)], &[]),
        ]);
        let ddag = build_data_dag(&cdag, &t);
        assert_eq!(ddag.edges.iter().copied().collect::<Vec<_>>(), vec![(0, 2)]);
        let sched = generate_schedule(&cdag, &ddag).unwrap();
        assert_eq!(sched.regions[0].tasks, vec![1]);
        let report = verify_reorder_safety(&cdag, &t, &sched);
        assert_eq!(
            report.hazards,
            vec![Hazard {
                first: 0,
                second: 1,
                kind: HazardKind::StaleRead,
                addr: 100
            }]
        );
        let fixed = schedule_with_repair(&cdag, &ddag, &t).unwrap();
        assert_eq!(fixed.added, vec![(0, 1)]);
        assert!(verify_reorder_safety(&cdag, &t, &fixed.schedule).is_ok());
    }

    #[test]
    fn independent_single_region_is_safe() {
        let cdag = ControlDag {
            nodes: (0..3).map(|i| node(i, TaskKind::Type2)).collect(),
        };
        let t = tuples(&[
            (&[(0, 8)], &[(100, 8)]),
            (&[(8, 8)], &[(108, 8)]),
            (&[(16, 8)], &[(116, 8)]),
        ]);
        let sched = ScheduleDag {
            regions: vec![Region {
                kind: TaskKind::Type2,
                tasks: vec![0, 1, 2],
            }],
        };
        assert!(verify_reorder_safety(&cdag, &t, &sched).is_ok());
    }

    #[test]
    fn same_region_write_write_is_a_race() {
        let cdag = ControlDag {
            nodes: (0..2).map(|i| node(i, TaskKind::Type2)).collect(),
        };
        let t = tuples(&[(&[(0, 8)], &[(100, 8)]), (&[(8, 8)], &[(104, 8)])]);
        let sched = generate_schedule(&cdag, &build_data_dag(&cdag, &t)).unwrap();
        let report = verify_reorder_safety(&cdag, &t, &sched);
        assert!(report
            .hazards
            .iter()
            .any(|h| h.kind == HazardKind::Race && (h.first, h.second) == (0, 1)));
        let fixed = schedule_with_repair(&cdag, &build_data_dag(&cdag, &t), &t).unwrap();
        assert_eq!(fixed.schedule.parallel_widths(), vec![1, 1]);
    }
}
