use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::platform::{Platform, Timing};
use crate::tir::KernelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Minimum execution time.
    Met,
    /// Round robin.
    Rr,
    /// Earliest finish time.
    Eft,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Met, Policy::Rr, Policy::Eft];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Met => "met",
            Policy::Rr => "rr",
            Policy::Eft => "eft",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "met" => Ok(Policy::Met),
            "rr" => Ok(Policy::Rr),
            "eft" => Ok(Policy::Eft),
            other => Err(format!(
                "unknown scheduler `{other}` (expected met, rr or eft)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SchedError {
    #[error("no processing element supports {0}")]
    NoSupportingPe(String),
}

/// Task-to-PE mapping with the round-robin pointer shared by all instances.
#[derive(Clone, Debug)]
pub struct Scheduler {
    pub policy: Policy,
    rr_next: usize,
}

impl Scheduler {
    pub fn new(policy: Policy) -> Self {
        Self { policy, rr_next: 0 }
    }

    /// Picks a PE for `kernel` given when each PE's queue drains.
    pub fn decide(
        &mut self,
        kernel: &KernelSpec,
        now: u64,
        pe_available: &[u64],
        platform: &Platform,
        timing: Timing,
    ) -> Result<usize, SchedError> {
        let supporting = |i: &usize| platform.pes[*i].supports(kernel);
        let n = platform.pes.len();
        let none = || SchedError::NoSupportingPe(kernel.cost_key());
        match self.policy {
            Policy::Met => (0..n)
                .filter(supporting)
                .min_by_key(|&i| (platform.pes[i].exec_time(kernel).unwrap_or(u64::MAX), i))
                .ok_or_else(none),
            Policy::Rr => {
                let pick = (0..n)
                    .map(|k| (self.rr_next + k) % n)
                    .find(supporting)
                    .ok_or_else(none)?;
                self.rr_next = (pick + 1) % n;
                Ok(pick)
            }
            Policy::Eft => (0..n)
                .filter(supporting)
                .min_by_key(|&i| {
                    let dur = platform.duration(i, kernel, timing).unwrap_or(u64::MAX / 2);
                    (pe_available[i].max(now).saturating_add(dur), i)
                })
                .ok_or_else(none),
        }
    }
}

/// Assigns a batch of ready tasks in FIFO order, updating queue drain times
/// as each assignment is made.
pub fn scheduler_decide(
    ready: &[&KernelSpec],
    now: u64,
    pe_available: &mut [u64],
    platform: &Platform,
    scheduler: &mut Scheduler,
    timing: Timing,
) -> Result<Vec<usize>, SchedError> {
    ready
        .iter()
        .map(|k| {
            let pe = scheduler.decide(k, now, pe_available, platform, timing)?;
            let dur = platform.duration(pe, k, timing).unwrap_or(0);
            pe_available[pe] = pe_available[pe].max(now) + dur;
            Ok(pe)
        })
        .collect()
}
