//! Generators for the benchmark applications.
//!
//! Each program is written the way a user would write it serially: loops
//! over pulses or symbols, helper subroutines, and (for the running example)
//! a function-pointer slot. The numeric kernels are simplified, but kernel
//! types, sizes and dependence shape follow the reference applications.

use std::fmt;

use super::{
    Buffer, ElemOp, ElementKind, Function, KernelSpec, Slice, SlotChoice, Statement, TirProgram,
    TripSource,
};

pub const BENCHMARK_NAMES: &[&str] = &[
    "running_example",
    "pulse_doppler",
    "wifi_tx",
    "radar_correlator",
    "temporal_mitigation",
];

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BenchError {
    #[error("unknown benchmark `{0}` (expected one of: {list})", list = BENCHMARK_NAMES.join(", "))]
    Unknown(String),
    #[error("pulse_doppler supports 4 or 256 pulses, not {0}")]
    UnsupportedPulses(u32),
    #[error("running_example needs at least one iteration")]
    ZeroIterations,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BenchParams {
    /// Pulse count for `pulse_doppler` (default 4).
    pub n_pulses: Option<u32>,
    /// Loop trip count for `running_example` (default 2).
    pub n_iter: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Benchmark {
    RunningExample { n_iter: u64 },
    PulseDoppler { n_pulses: u32 },
    WifiTx,
    RadarCorrelator,
    TemporalMitigation,
}

impl Benchmark {
    pub fn from_name(name: &str, params: &BenchParams) -> Result<Self, BenchError> {
        match name {
            "running_example" => {
                let n_iter = params.n_iter.unwrap_or(2);
                if n_iter == 0 {
                    return Err(BenchError::ZeroIterations);
                }
                Ok(Benchmark::RunningExample { n_iter })
            }
            "pulse_doppler" => match params.n_pulses.unwrap_or(4) {
                n @ (4 | 256) => Ok(Benchmark::PulseDoppler { n_pulses: n }),
                n => Err(BenchError::UnsupportedPulses(n)),
            },
            "wifi_tx" => Ok(Benchmark::WifiTx),
            "radar_correlator" => Ok(Benchmark::RadarCorrelator),
            "temporal_mitigation" => Ok(Benchmark::TemporalMitigation),
            other => Err(BenchError::Unknown(other.to_string())),
        }
    }

    /// The five application configurations of the evaluation suite.
    pub fn suite() -> [Benchmark; 5] {
        [
            Benchmark::PulseDoppler { n_pulses: 4 },
            Benchmark::PulseDoppler { n_pulses: 256 },
            Benchmark::WifiTx,
            Benchmark::RadarCorrelator,
            Benchmark::TemporalMitigation,
        ]
    }

    pub fn build(self) -> TirProgram {
        match self {
            Benchmark::RunningExample { n_iter } => running_example(n_iter),
            Benchmark::PulseDoppler { n_pulses } => pulse_doppler(n_pulses),
            Benchmark::WifiTx => wifi_tx(),
            Benchmark::RadarCorrelator => radar_correlator(),
            Benchmark::TemporalMitigation => temporal_mitigation(),
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Benchmark::RunningExample { .. } => f.write_str("running_example"),
            Benchmark::PulseDoppler { n_pulses } => write!(f, "pulse_doppler_{n_pulses}"),
            Benchmark::WifiTx => f.write_str("wifi_tx"),
            Benchmark::RadarCorrelator => f.write_str("radar_correlator"),
            Benchmark::TemporalMitigation => f.write_str("temporal_mitigation"),
        }
    }
}

pub fn build_benchmark(name: &str, params: &BenchParams) -> Result<TirProgram, BenchError> {
    Benchmark::from_name(name, params).map(Benchmark::build)
}

const C: u64 = 8;

fn fft(points: u32) -> KernelSpec {
    KernelSpec::Fft {
        points,
        inverse: false,
    }
}

fn ifft(points: u32) -> KernelSpec {
    KernelSpec::Fft {
        points,
        inverse: true,
    }
}

/// Loop over `a[i]` reading input, transforming it through a function-pointer
/// slot, and writing `b[i]`. The trip count and the slot binding are runtime
/// values, so neither is known statically.
pub fn running_example(n_iter: u64) -> TirProgram {
    const SAMPLES: u64 = 2048;
    let block = SAMPLES * C;
    let mut p = TirProgram::new(
        "running_example",
        vec![
            Buffer::new("a", ElementKind::Complex32, n_iter * SAMPLES),
            Buffer::new("b", ElementKind::Complex32, n_iter * SAMPLES),
        ],
        vec![
            Statement::BindSlot {
                slot: "fft_slot".into(),
                choice: SlotChoice::RuntimeValue("fft_mode".into()),
            },
            Statement::Loop {
                var: "i".into(),
                trip: TripSource::RuntimeValue("n_iter".into()),
                body: vec![
                    Statement::CallFn {
                        function: "read_input".into(),
                        args: vec![Slice::new("a", 0, block).indexed("i", block)],
                    },
                    Statement::CallFn {
                        function: "process".into(),
                        args: vec![
                            Slice::new("a", 0, block).indexed("i", block),
                            Slice::new("b", 0, block).indexed("i", block),
                        ],
                    },
                    Statement::call(
                        "write_output",
                        KernelSpec::WriteData { stream: 1 },
                        vec![Slice::new("b", 0, block).indexed("i", block)],
                        vec![],
                    ),
                ],
            },
        ],
    );
    p.functions.insert(
        "read_input".into(),
        Function {
            params: vec!["dst".into()],
            body: vec![Statement::call(
                "read",
                KernelSpec::ReadData { stream: 0 },
                vec![],
                vec![Slice::new("dst", 0, block)],
            )],
        },
    );
    p.functions.insert(
        "process".into(),
        Function {
            params: vec!["src".into(), "dst".into()],
            body: vec![Statement::IndirectCall {
                slot: "fft_slot".into(),
                candidates: vec![fft(SAMPLES as u32), ifft(SAMPLES as u32)],
                reads: vec![Slice::new("src", 0, block)],
                writes: vec![Slice::new("dst", 0, block)],
            }],
        },
    );
    p.runtime_values.insert("n_iter".into(), n_iter);
    p.runtime_values.insert("fft_mode".into(), 0);
    p
}

/// Per pulse: transform the received and reference pulses, correlate in the
/// frequency domain, return to time domain, window, and take the Doppler FFT.
pub fn pulse_doppler(n_pulses: u32) -> TirProgram {
    const N: u32 = 256;
    let block = N as u64 * C;
    let n = n_pulses as u64;
    let per_pulse = |id: &str| Buffer::new(id, ElementKind::Complex32, n * N as u64);
    let at = |id: &str| Slice::new(id, 0, block).indexed("p", block);
    let body = vec![
        Statement::call(
            "read_rx",
            KernelSpec::ReadData { stream: 0 },
            vec![],
            vec![at("rx")],
        ),
        Statement::call(
            "read_ref",
            KernelSpec::ReadData { stream: 1 },
            vec![],
            vec![at("ref")],
        ),
        Statement::call("fft_rx", fft(N), vec![at("rx")], vec![at("rx_f")]),
        Statement::call("fft_ref", fft(N), vec![at("ref")], vec![at("ref_f")]),
        Statement::call(
            "correlate",
            KernelSpec::Correlate,
            vec![at("rx_f"), at("ref_f")],
            vec![at("corr_f")],
        ),
        Statement::call("ifft", ifft(N), vec![at("corr_f")], vec![at("corr")]),
        Statement::call(
            "window",
            KernelSpec::Elemwise { op: ElemOp::Mul },
            vec![at("corr"), Slice::new("win", 0, block)],
            vec![at("shaped")],
        ),
        Statement::call(
            "doppler_fft",
            fft(N),
            vec![at("shaped")],
            vec![at("doppler")],
        ),
        Statement::call(
            "write",
            KernelSpec::WriteData { stream: 3 },
            vec![at("doppler")],
            vec![],
        ),
    ];
    let buffers = vec![
        Buffer::new("win", ElementKind::Complex32, N as u64),
        per_pulse("rx"),
        per_pulse("ref"),
        per_pulse("rx_f"),
        per_pulse("ref_f"),
        per_pulse("corr_f"),
        per_pulse("corr"),
        per_pulse("shaped"),
        per_pulse("doppler"),
    ];
    TirProgram::new(
        format!("pulse_doppler_{n_pulses}"),
        buffers,
        vec![
            Statement::call(
                "read_window",
                KernelSpec::ReadData { stream: 2 },
                vec![],
                vec![Slice::new("win", 0, block)],
            ),
            Statement::Loop {
                var: "p".into(),
                trip: TripSource::Constant(n),
                body,
            },
        ],
    )
}

/// Scramble, interleave and modulate an 80-byte payload, then build ten
/// OFDM symbols (pilot insertion plus a 128-point IFFT each).
pub fn wifi_tx() -> TirProgram {
    const PAYLOAD: u64 = 80;
    const SYMBOLS: u64 = 10;
    const DATA_PER_SYMBOL: u64 = 64;
    const POINTS: u32 = 128;
    let sym_bytes = POINTS as u64 * C;
    let data_bytes = DATA_PER_SYMBOL * C;
    let mut p = TirProgram::new(
        "wifi_tx",
        vec![
            Buffer::new("payload", ElementKind::Byte, PAYLOAD),
            Buffer::new("scrambled", ElementKind::Byte, PAYLOAD),
            Buffer::new("interleaved", ElementKind::Byte, PAYLOAD),
            Buffer::new("mapped", ElementKind::Complex32, PAYLOAD * 8),
            Buffer::new("freq", ElementKind::Complex32, SYMBOLS * POINTS as u64),
            Buffer::new("time", ElementKind::Complex32, SYMBOLS * POINTS as u64),
        ],
        vec![
            Statement::call(
                "read_payload",
                KernelSpec::ReadData { stream: 0 },
                vec![],
                vec![Slice::new("payload", 0, PAYLOAD)],
            ),
            Statement::CallFn {
                function: "encode".into(),
                args: vec![],
            },
            Statement::Loop {
                var: "s".into(),
                trip: TripSource::Constant(SYMBOLS),
                body: vec![
                    Statement::call(
                        "pilot_insert",
                        KernelSpec::PilotInsert {
                            out_len: POINTS,
                            pilot_every: 8,
                        },
                        vec![Slice::new("mapped", 0, data_bytes).indexed("s", data_bytes)],
                        vec![Slice::new("freq", 0, sym_bytes).indexed("s", sym_bytes)],
                    ),
                    Statement::call(
                        "ifft",
                        ifft(POINTS),
                        vec![Slice::new("freq", 0, sym_bytes).indexed("s", sym_bytes)],
                        vec![Slice::new("time", 0, sym_bytes).indexed("s", sym_bytes)],
                    ),
                ],
            },
            Statement::call(
                "write_frame",
                KernelSpec::WriteData { stream: 1 },
                vec![Slice::new("time", 0, SYMBOLS * sym_bytes)],
                vec![],
            ),
        ],
    );
    p.functions.insert(
        "encode".into(),
        Function {
            params: vec![],
            body: vec![
                Statement::call(
                    "scramble",
                    KernelSpec::Scrambler { seed: 0x5d },
                    vec![Slice::new("payload", 0, PAYLOAD)],
                    vec![Slice::new("scrambled", 0, PAYLOAD)],
                ),
                Statement::call(
                    "interleave",
                    KernelSpec::Interleaver { cols: 16 },
                    vec![Slice::new("scrambled", 0, PAYLOAD)],
                    vec![Slice::new("interleaved", 0, PAYLOAD)],
                ),
                Statement::call(
                    "modulate",
                    KernelSpec::Modulate,
                    vec![Slice::new("interleaved", 0, PAYLOAD)],
                    vec![Slice::new("mapped", 0, PAYLOAD * 64)],
                ),
            ],
        },
    );
    p
}

/// Transform received and reference pulses, correlate, return to the time
/// domain and take the power of each lag.
pub fn radar_correlator() -> TirProgram {
    const N: u32 = 512;
    let block = N as u64 * C;
    TirProgram::new(
        "radar_correlator",
        vec![
            Buffer::new("signals", ElementKind::Complex32, 2 * N as u64),
            Buffer::new("spectra", ElementKind::Complex32, 2 * N as u64),
            Buffer::new("product", ElementKind::Complex32, N as u64),
            Buffer::new("lags", ElementKind::Complex32, N as u64),
            Buffer::new("power", ElementKind::Complex32, N as u64),
        ],
        vec![
            Statement::call(
                "read_rx",
                KernelSpec::ReadData { stream: 0 },
                vec![],
                vec![Slice::new("signals", 0, block)],
            ),
            Statement::call(
                "read_ref",
                KernelSpec::ReadData { stream: 1 },
                vec![],
                vec![Slice::new("signals", block, block)],
            ),
            Statement::Loop {
                var: "k".into(),
                trip: TripSource::Constant(2),
                body: vec![Statement::call(
                    "fft",
                    fft(N),
                    vec![Slice::new("signals", 0, block).indexed("k", block)],
                    vec![Slice::new("spectra", 0, block).indexed("k", block)],
                )],
            },
            Statement::call(
                "correlate",
                KernelSpec::Correlate,
                vec![
                    Slice::new("spectra", 0, block),
                    Slice::new("spectra", block, block),
                ],
                vec![Slice::new("product", 0, block)],
            ),
            Statement::call(
                "ifft",
                ifft(N),
                vec![Slice::new("product", 0, block)],
                vec![Slice::new("lags", 0, block)],
            ),
            Statement::call(
                "power",
                KernelSpec::Elemwise { op: ElemOp::Mag2 },
                vec![Slice::new("lags", 0, block)],
                vec![Slice::new("power", 0, block)],
            ),
            Statement::call(
                "write",
                KernelSpec::WriteData { stream: 2 },
                vec![Slice::new("power", 0, block)],
                vec![],
            ),
        ],
    )
}

/// Estimate two interference terms with independent 4x4 by 4x64 products,
/// subtract them, and project the residual.
pub fn temporal_mitigation() -> TirProgram {
    const ROWS: u32 = 4;
    const COLS: u32 = 64;
    let weights = (ROWS * ROWS) as u64 * C;
    let signal = (ROWS * COLS) as u64 * C;
    let gemm = KernelSpec::Gemm {
        m: ROWS,
        k: ROWS,
        n: COLS,
    };
    let w = |id: &str| Buffer::new(id, ElementKind::Complex32, (ROWS * ROWS) as u64);
    let s = |id: &str| Buffer::new(id, ElementKind::Complex32, (ROWS * COLS) as u64);
    let read = |name: &str, id: &str, stream: u32, len: u64| {
        Statement::call(
            name,
            KernelSpec::ReadData { stream },
            vec![],
            vec![Slice::new(id, 0, len)],
        )
    };
    TirProgram::new(
        "temporal_mitigation",
        vec![
            w("w1"),
            w("w2"),
            w("w3"),
            s("s"),
            s("x"),
            s("e1"),
            s("e2"),
            s("resid"),
            s("y"),
        ],
        vec![
            read("read_w1", "w1", 0, weights),
            read("read_w2", "w2", 1, weights),
            read("read_w3", "w3", 2, weights),
            read("read_s", "s", 3, signal),
            read("read_x", "x", 4, signal),
            Statement::call(
                "estimate_1",
                gemm.clone(),
                vec![Slice::new("w1", 0, weights), Slice::new("s", 0, signal)],
                vec![Slice::new("e1", 0, signal)],
            ),
            Statement::call(
                "estimate_2",
                gemm.clone(),
                vec![Slice::new("w2", 0, weights), Slice::new("x", 0, signal)],
                vec![Slice::new("e2", 0, signal)],
            ),
            Statement::call(
                "cancel",
                KernelSpec::Elemwise { op: ElemOp::Sub },
                vec![Slice::new("e2", 0, signal), Slice::new("e1", 0, signal)],
                vec![Slice::new("resid", 0, signal)],
            ),
            Statement::call(
                "project",
                gemm,
                vec![Slice::new("w3", 0, weights), Slice::new("resid", 0, signal)],
                vec![Slice::new("y", 0, signal)],
            ),
            Statement::call(
                "write",
                KernelSpec::WriteData { stream: 5 },
                vec![Slice::new("y", 0, signal)],
                vec![],
            ),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tir::exec::{interpret, Inputs};
    use crate::tir::validate_program;

    #[test]
    fn every_benchmark_validates() {
        let mut all: Vec<Benchmark> = Benchmark::suite().to_vec();
        all.push(Benchmark::RunningExample { n_iter: 2 });
        for b in all {
            let p = b.build();
            let report = validate_program(&p);
            assert!(report.is_ok(), "{b}: {report}");
        }
    }

    #[test]
    fn rejects_unknown_names_and_pulse_counts() {
        assert_eq!(
            build_benchmark("fm_radio", &BenchParams::default()),
            Err(BenchError::Unknown("fm_radio".into()))
        );
        let params = BenchParams {
            n_pulses: Some(16),
            ..Default::default()
        };
        assert_eq!(
            build_benchmark("pulse_doppler", &params),
            Err(BenchError::UnsupportedPulses(16))
        );
    }

    #[test]
    fn serial_interpretation_is_bit_reproducible() {
        for b in [
            Benchmark::RunningExample { n_iter: 2 },
            Benchmark::PulseDoppler { n_pulses: 4 },
            Benchmark::WifiTx,
            Benchmark::RadarCorrelator,
            Benchmark::TemporalMitigation,
        ] {
            let p = b.build();
            let first = interpret(&p, &Inputs::seeded(7)).unwrap();
            let second = interpret(&p, &Inputs::seeded(7)).unwrap();
            assert_eq!(first, second, "{b}");
            assert!(!first.written.is_empty(), "{b} produced no output");
        }
    }
}
