//! Per-task execution records shared by the runtime and the simulator.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::platform::Platform;
use crate::runtime::Policy;
use crate::tir::{read_json, write_json, TirIoError};

pub const CSV_HEADER: &str = "instance,node,kernel,pe,start_ns,end_ns";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanttEntry {
    pub instance_id: usize,
    /// Control DAG index of the task within its program.
    pub node: usize,
    pub kernel: String,
    pub pe: usize,
    pub start_ns: u64,
    pub end_ns: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanttLog {
    pub entries: Vec<GanttEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum GanttError {
    #[error("gantt line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GanttLog {
    /// Stable sort by (pe, start).
    pub fn sort(&mut self) {
        self.entries.sort_by_key(|e| (e.pe, e.start_ns));
    }

    pub fn for_instance(&self, instance_id: usize) -> impl Iterator<Item = &GanttEntry> {
        self.entries
            .iter()
            .filter(move |e| e.instance_id == instance_id)
    }

    /// Pairs of entries that share a PE and overlap in time.
    pub fn pe_overlaps(&self) -> Vec<(&GanttEntry, &GanttEntry)> {
        let mut by_pe: BTreeMap<usize, Vec<&GanttEntry>> = BTreeMap::new();
        for e in &self.entries {
            by_pe.entry(e.pe).or_default().push(e);
        }
        let mut out = Vec::new();
        for list in by_pe.values_mut() {
            list.sort_by_key(|e| (e.start_ns, e.end_ns));
            for w in list.windows(2) {
                if w[1].start_ns < w[0].end_ns {
                    out.push((w[0], w[1]));
                }
            }
        }
        out
    }

    /// Last task end minus first task start, per instance.
    pub fn app_spans(&self) -> BTreeMap<usize, u64> {
        let mut bounds: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
        for e in &self.entries {
            let b = bounds
                .entry(e.instance_id)
                .or_insert((e.start_ns, e.end_ns));
            b.0 = b.0.min(e.start_ns);
            b.1 = b.1.max(e.end_ns);
        }
        bounds.into_iter().map(|(k, (s, e))| (k, e - s)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.instance_id, e.node, e.kernel, e.pe, e.start_ns, e.end_ns
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, GanttError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(GanttError::Parse {
                    line: 1,
                    msg: format!("expected header `{CSV_HEADER}`"),
                })
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| GanttError::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| err(format!("`{s}`: {e}")))
            };
            entries.push(GanttEntry {
                instance_id: num(f[0])? as usize,
                node: num(f[1])? as usize,
                kernel: f[2].to_string(),
                pe: num(f[3])? as usize,
                start_ns: num(f[4])?,
                end_ns: num(f[5])?,
            });
        }
        Ok(Self { entries })
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), GanttError> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn load_csv(path: &Path) -> Result<Self, GanttError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Discrete-event simulation.
    Virtual,
    /// Concurrent runtime pacing tasks by their modeled durations.
    ModelTime,
    /// Concurrent runtime with measured timestamps.
    Wall,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Virtual => "virtual",
            RunMode::ModelTime => "model-time",
            RunMode::Wall => "wall",
        })
    }
}

/// One parallel section of one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub instance_id: usize,
    /// Index into the program's sections.
    pub section: usize,
    pub tasks: usize,
    /// When the section's tasks became ready.
    pub start_ns: u64,
    /// When the barrier was met.
    pub end_ns: u64,
    /// Most tasks of the section run back to back on a single PE.
    pub rounds: usize,
}

impl PhaseRecord {
    pub fn span_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeUsage {
    pub pe: usize,
    pub name: String,
    pub tasks: usize,
    pub busy_ns: u64,
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mode: RunMode,
    pub policy: Policy,
    pub platform: String,
    /// Completion time of the last instance, from time zero.
    pub makespan_ns: u64,
    pub app_spans: BTreeMap<usize, u64>,
    /// Completion time of each instance, including trailing host work.
    pub completion_ns: BTreeMap<usize, u64>,
    pub pe_utilization: Vec<PeUsage>,
    pub phases: Vec<PhaseRecord>,
}

impl Stats {
    pub fn compute(
        mode: RunMode,
        policy: Policy,
        platform: &Platform,
        gantt: &GanttLog,
        completion_ns: BTreeMap<usize, u64>,
        mut phases: Vec<PhaseRecord>,
    ) -> Self {
        let makespan_ns = completion_ns
            .values()
            .copied()
            .chain(gantt.entries.iter().map(|e| e.end_ns))
            .max()
            .unwrap_or(0);
        let pe_utilization = platform
            .pes
            .iter()
            .map(|pe| {
                let mine = gantt.entries.iter().filter(|e| e.pe == pe.id);
                let (tasks, busy_ns) =
                    mine.fold((0, 0), |(n, b), e| (n + 1, b + (e.end_ns - e.start_ns)));
                PeUsage {
                    pe: pe.id,
                    name: pe.name.clone(),
                    tasks,
                    busy_ns,
                    utilization: if makespan_ns == 0 {
                        0.0
                    } else {
                        busy_ns as f64 / makespan_ns as f64
                    },
                }
            })
            .collect();
        phases.sort_by_key(|p| (p.instance_id, p.section));
        Self {
            mode,
            policy,
            platform: platform.name.clone(),
            makespan_ns,
            app_spans: gantt.app_spans(),
            completion_ns,
            pe_utilization,
            phases,
        }
    }

    pub fn load(path: &Path) -> Result<Self, TirIoError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), TirIoError> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(instance_id: usize, pe: usize, start_ns: u64, end_ns: u64) -> GanttEntry {
        GanttEntry {
            instance_id,
            node: 0,
            kernel: "FFT".into(),
            pe,
            start_ns,
            end_ns,
        }
    }

    #[test]
    fn csv_round_trip() {
        let log = GanttLog {
            entries: vec![entry(0, 1, 0, 128), entry(1, 0, 5, 25_005)],
        };
        let text = log.to_csv();
        assert!(text.starts_with("instance,node,kernel,pe,start_ns,end_ns\n"));
        assert_eq!(GanttLog::from_csv(&text).unwrap(), log);
        let bad = text.replace("25005", "x");
        assert!(matches!(
            GanttLog::from_csv(&bad),
            Err(GanttError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn spans_and_overlaps() {
        let log = GanttLog {
            entries: vec![entry(0, 0, 10, 20), entry(0, 1, 0, 15), entry(1, 0, 19, 30)],
        };
        assert_eq!(log.app_spans(), BTreeMap::from([(0, 20), (1, 11)]));
        assert_eq!(log.pe_overlaps().len(), 1);
    }
}
