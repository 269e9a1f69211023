//! Job submissions and the `.wl.json` workload format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::schedgen::ParallelProgram;
use crate::tir::exec::Inputs;
use crate::tir::{read_json, write_json, TirIoError};

/// One application instance handed to an engine.
#[derive(Clone, Debug)]
pub struct JobSubmission {
    pub instance_id: usize,
    pub program: Arc<ParallelProgram>,
    pub arrival_ns: u64,
    pub inputs: Inputs,
}

impl JobSubmission {
    /// `count` instances of `program` arriving together, numbered from
    /// `first_id`; instance `k` reads with seed `seed + k`.
    pub fn batch(
        program: &Arc<ParallelProgram>,
        count: usize,
        arrival_ns: u64,
        first_id: usize,
        seed: u64,
    ) -> Vec<Self> {
        (0..count)
            .map(|k| JobSubmission {
                instance_id: first_id + k,
                program: Arc::clone(program),
                arrival_ns,
                inputs: Inputs::seeded(seed + k as u64),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadEntry {
    /// `.ppar.json` file, relative to the workload file.
    pub program_path: PathBuf,
    #[serde(default)]
    pub arrival_ns: u64,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Io(#[from] TirIoError),
    #[error("workload entry {index}: arrival {arrival_ns} ns precedes the previous entry")]
    Unordered { index: usize, arrival_ns: u64 },
    #[error("workload entry {index}: count must be positive")]
    ZeroCount { index: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Workload {
    pub entries: Vec<WorkloadEntry>,
}

impl Workload {
    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let wl: Workload = read_json(path)?;
        wl.check()?;
        Ok(wl)
    }

    pub fn save(&self, path: &Path) -> Result<(), TirIoError> {
        write_json(path, self)
    }

    pub fn check(&self) -> Result<(), WorkloadError> {
        let mut last = 0;
        for (index, e) in self.entries.iter().enumerate() {
            if e.count == 0 {
                return Err(WorkloadError::ZeroCount { index });
            }
            if e.arrival_ns < last {
                return Err(WorkloadError::Unordered {
                    index,
                    arrival_ns: e.arrival_ns,
                });
            }
            last = e.arrival_ns;
        }
        Ok(())
    }

    /// Loads every referenced program once and expands entries into
    /// numbered submissions. Relative paths resolve against `base`.
    pub fn submissions(&self, base: &Path) -> Result<Vec<JobSubmission>, WorkloadError> {
        self.check()?;
        let mut programs: BTreeMap<PathBuf, Arc<ParallelProgram>> = BTreeMap::new();
        let mut jobs = Vec::new();
        for e in &self.entries {
            let path = base.join(&e.program_path);
            let program = match programs.get(&path) {
                Some(p) => Arc::clone(p),
                None => {
                    let p = Arc::new(ParallelProgram::load(&path)?);
                    programs.insert(path, Arc::clone(&p));
                    p
                }
            };
            let first = jobs.len();
            jobs.extend(JobSubmission::batch(
                &program,
                e.count,
                e.arrival_ns,
                first,
                e.seed.unwrap_or(first as u64),
            ));
        }
        Ok(jobs)
    }
}
