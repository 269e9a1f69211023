//! Processing-element inventory and modeled execution times.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tir::{read_json, write_json, KernelSpec, TirIoError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PeKind {
    Cpu,
    /// Runs only the listed kernel ids (or exact cost keys such as `FFT-512`).
    Accelerator {
        supported: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pe {
    pub id: usize,
    pub name: String,
    pub kind: PeKind,
    /// Duration by cost key (`FFT-512`) or kernel id (`FFT`).
    #[serde(default)]
    pub exec_ns: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_exec_ns: Option<u64>,
    #[serde(default)]
    pub dispatch_overhead_ns: u64,
}

impl Pe {
    pub fn is_accelerator(&self) -> bool {
        matches!(self.kind, PeKind::Accelerator { .. })
    }

    pub fn supports(&self, kernel: &KernelSpec) -> bool {
        let listed = match &self.kind {
            PeKind::Cpu => true,
            PeKind::Accelerator { supported } => supported
                .iter()
                .any(|k| k == kernel.kernel_id() || *k == kernel.cost_key()),
        };
        listed && self.exec_time(kernel).is_some()
    }

    /// Table lookup: exact cost key, then kernel id, then the PE default.
    pub fn exec_time(&self, kernel: &KernelSpec) -> Option<u64> {
        self.exec_ns
            .get(&kernel.cost_key())
            .or_else(|| self.exec_ns.get(kernel.kernel_id()))
            .copied()
            .or(self.default_exec_ns)
    }
}

/// Which modeled costs an engine charges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    /// Charge `host_cost_ns` for Type-1 work on the host.
    pub host_costs: bool,
    /// Charge dispatch and accelerator transfer overheads.
    pub overheads: bool,
}

impl Timing {
    /// Kernel durations only.
    pub const BARE: Timing = Timing {
        host_costs: false,
        overheads: false,
    };
    pub const FULL: Timing = Timing {
        host_costs: true,
        overheads: true,
    };
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub name: String,
    pub pes: Vec<Pe>,
    /// Cost of staging a task's data to and from an accelerator.
    #[serde(default)]
    pub transfer_overhead_ns: u64,
    /// Host-side cost of Type-1 kernels by cost key or kernel id; missing
    /// kernels cost nothing.
    #[serde(default)]
    pub host_cost_ns: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PlatformError {
    #[error("platform has no CPU core")]
    NoCpu,
    #[error("PE at position {position} has id {id}; ids must equal positions")]
    BadId { position: usize, id: usize },
    #[error("PE {pe}: zero duration for `{key}`")]
    ZeroDuration { pe: usize, key: String },
    #[error("unknown platform preset `{0}` (expected one of: {list})", list = PRESETS.join(", "))]
    UnknownPreset(String),
}

pub const PRESETS: &[&str] = &["3cpu1fft", "4fft", "8fft", "xeon8"];

const FFT_SIZES: [u32; 4] = [128, 256, 512, 2048];

impl Platform {
    pub fn validate(&self) -> Result<(), PlatformError> {
        if !self.pes.iter().any(|p| p.kind == PeKind::Cpu) {
            return Err(PlatformError::NoCpu);
        }
        for (i, pe) in self.pes.iter().enumerate() {
            if pe.id != i {
                return Err(PlatformError::BadId {
                    position: i,
                    id: pe.id,
                });
            }
            if let Some((key, _)) = pe.exec_ns.iter().find(|(_, &v)| v == 0) {
                return Err(PlatformError::ZeroDuration {
                    pe: i,
                    key: key.clone(),
                });
            }
            if pe.default_exec_ns == Some(0) {
                return Err(PlatformError::ZeroDuration {
                    pe: i,
                    key: "default".into(),
                });
            }
        }
        Ok(())
    }

    /// Modeled duration of `kernel` on `pe`, including overheads when enabled.
    pub fn duration(&self, pe: usize, kernel: &KernelSpec, timing: Timing) -> Option<u64> {
        let p = &self.pes[pe];
        let exec = p.exec_time(kernel)?;
        if !timing.overheads {
            return Some(exec);
        }
        let transfer = if p.is_accelerator() {
            self.transfer_overhead_ns
        } else {
            0
        };
        Some(exec + transfer + p.dispatch_overhead_ns)
    }

    pub fn host_cost(&self, kernel: Option<&KernelSpec>, timing: Timing) -> u64 {
        if !timing.host_costs {
            return 0;
        }
        let Some(k) = kernel else { return 0 };
        self.host_cost_ns
            .get(&k.cost_key())
            .or_else(|| self.host_cost_ns.get(k.kernel_id()))
            .copied()
            .unwrap_or(0)
    }

    /// Fastest modeled duration of `kernel` over all supporting PEs.
    pub fn best_duration(&self, kernel: &KernelSpec, timing: Timing) -> Option<u64> {
        (0..self.pes.len())
            .filter(|&i| self.pes[i].supports(kernel))
            .filter_map(|i| self.duration(i, kernel, timing))
            .min()
    }

    /// Copy without disk I/O costs on the host.
    pub fn without_io_costs(&self) -> Platform {
        let mut p = self.clone();
        p.host_cost_ns
            .retain(|k, _| k != "READ_DATA" && k != "WRITE_DATA");
        p
    }

    pub fn load(path: &Path) -> Result<Self, TirIoError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), TirIoError> {
        write_json(path, self)
    }

    pub fn preset(name: &str) -> Result<Platform, PlatformError> {
        let cpu = |id: usize, exec_ns: BTreeMap<String, u64>, default_exec_ns: Option<u64>| Pe {
            id,
            name: format!("cpu{id}"),
            kind: PeKind::Cpu,
            exec_ns,
            default_exec_ns,
            dispatch_overhead_ns: 0,
        };
        let fft_acc = |id: usize, n: usize, exec_ns: BTreeMap<String, u64>| Pe {
            id,
            name: format!("fft{n}"),
            kind: PeKind::Accelerator {
                supported: vec!["FFT".into()],
            },
            exec_ns,
            default_exec_ns: None,
            dispatch_overhead_ns: 0,
        };
        let io_costs = || {
            BTreeMap::from([
                ("READ_DATA".to_string(), 2_000),
                ("WRITE_DATA".to_string(), 2_000),
            ])
        };
        match name {
            "3cpu1fft" => {
                let mut cpu_table: BTreeMap<String, u64> = FFT_SIZES
                    .iter()
                    .map(|&n| (format!("FFT-{n}"), 15_000 * n as u64 / 512))
                    .collect();
                cpu_table.insert("GEMM".into(), 6_000);
                let acc_table = FFT_SIZES
                    .iter()
                    .map(|&n| (format!("FFT-{n}"), 10_000 * n as u64 / 512))
                    .collect();
                let mut pes: Vec<Pe> = (0..3).map(|i| cpu(i, cpu_table.clone(), None)).collect();
                pes.push(fft_acc(3, 0, acc_table));
                Ok(Platform {
                    name: name.into(),
                    pes,
                    transfer_overhead_ns: 2_000,
                    host_cost_ns: io_costs(),
                })
            }
            "4fft" | "8fft" => {
                let k = if name == "4fft" { 4 } else { 8 };
                let mut pes = vec![cpu(0, BTreeMap::new(), Some(25_000))];
                for n in 0..k {
                    pes.push(fft_acc(
                        n + 1,
                        n,
                        BTreeMap::from([("FFT".to_string(), 128)]),
                    ));
                }
                Ok(Platform {
                    name: name.into(),
                    pes,
                    transfer_overhead_ns: 0,
                    host_cost_ns: io_costs(),
                })
            }
            "xeon8" => Ok(Platform {
                name: name.into(),
                pes: (0..8)
                    .map(|i| cpu(i, BTreeMap::new(), Some(25_000)))
                    .collect(),
                transfer_overhead_ns: 0,
                host_cost_ns: io_costs(),
            }),
            other => Err(PlatformError::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cpus = self.pes.iter().filter(|p| !p.is_accelerator()).count();
        write!(
            f,
            "{} ({} CPU, {} accelerator)",
            self.name,
            cpus,
            self.pes.len() - cpus
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            Platform::preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(
            Platform::preset("gpu"),
            Err(PlatformError::UnknownPreset(_))
        ));
    }

    #[test]
    fn accelerator_admission_and_lookup_order() {
        let p = Platform::preset("3cpu1fft").unwrap();
        let fft = KernelSpec::Fft {
            points: 512,
            inverse: false,
        };
        let gemm = KernelSpec::Gemm { m: 4, k: 4, n: 64 };
        assert!(p.pes[3].supports(&fft));
        assert!(!p.pes[3].supports(&gemm));
        assert!(p.pes[0].supports(&gemm));
        assert_eq!(p.duration(3, &fft, Timing::BARE), Some(10_000));
        assert_eq!(p.duration(3, &fft, Timing::FULL), Some(12_000));
        assert_eq!(p.duration(0, &fft, Timing::FULL), Some(15_000));
        assert_eq!(p.best_duration(&fft, Timing::FULL), Some(12_000));
    }

    #[test]
    fn missing_cpu_is_rejected() {
        let mut p = Platform::preset("4fft").unwrap();
        p.pes.remove(0);
        for (i, pe) in p.pes.iter_mut().enumerate() {
            pe.id = i;
        }
        assert_eq!(p.validate(), Err(PlatformError::NoCpu));
    }
}
