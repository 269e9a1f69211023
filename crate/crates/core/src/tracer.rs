//! Instrumented interpretation: program outputs plus a dynamic trace of task
//! spans, basic blocks and byte-addressed memory accesses.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tir::exec::{
    walk, ConcreteCall, ConcreteSlice, ExecError, GlueOp, Inputs, Machine, Outputs, Visitor,
};
use crate::tir::{TaskKind, TirProgram};

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    TaskEnter {
        task_kind: TaskKind,
        kernel_id: String,
        site_id: String,
    },
    TaskExit,
    BbEnter {
        bb: u32,
    },
    BbExit {
        bb: u32,
    },
    Load {
        addr: u64,
        bytes: u64,
    },
    Store {
        addr: u64,
        bytes: u64,
    },
    MemCpy {
        src: u64,
        dst: u64,
        bytes: u64,
    },
    MemSet {
        dst: u64,
        bytes: u64,
    },
    MemMove {
        src: u64,
        dst: u64,
        bytes: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub program_hash: String,
    #[serde(default)]
    pub runtime_values: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(program_hash: impl Into<String>, runtime_values: BTreeMap<String, u64>) -> Self {
        Self {
            header: TraceHeader {
                version: TRACE_VERSION,
                program_hash: program_hash.into(),
                runtime_values,
            },
            events: Vec::new(),
        }
    }

    /// Appends an event with the next sequence number.
    pub fn push(&mut self, event: Event) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { seq, event });
    }

    pub fn task_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.event, Event::TaskEnter { .. }))
            .count()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("missing trace header")]
    MissingHeader,
    #[error("line {line}: bad header: {msg}")]
    Header { line: usize, msg: String },
    #[error("unsupported trace version {0}")]
    Version(u32),
    #[error("line {line}: malformed event after seq {}: {msg}", fmt_seq(*last_seq))]
    Malformed {
        line: usize,
        last_seq: Option<u64>,
        msg: String,
    },
    #[error("line {line}: seq {seq} does not follow {}", fmt_seq(*last_seq))]
    Sequence {
        line: usize,
        seq: u64,
        last_seq: Option<u64>,
    },
    #[error("trace truncated: task span still open after seq {}", fmt_seq(*last_seq))]
    Truncated { last_seq: Option<u64> },
}

fn fmt_seq(seq: Option<u64>) -> String {
    seq.map_or_else(|| "(none)".to_string(), |s| s.to_string())
}

pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut sink, &trace.header)?;
    sink.write_all(b"\n")?;
    for e in &trace.events {
        serde_json::to_writer(&mut sink, e)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn read_trace<R: BufRead>(source: R) -> Result<Trace, TraceIoError> {
    let mut lines = source.lines().enumerate();
    let header: TraceHeader = loop {
        let Some((i, line)) = lines.next() else {
            return Err(TraceIoError::MissingHeader);
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line).map_err(|e| TraceIoError::Header {
            line: i + 1,
            msg: e.to_string(),
        })?;
    };
    if header.version != TRACE_VERSION {
        return Err(TraceIoError::Version(header.version));
    }
    let mut events: Vec<TraceEvent> = Vec::new();
    let mut open = false;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let last_seq = events.last().map(|e| e.seq);
        let e: TraceEvent = serde_json::from_str(&line).map_err(|err| TraceIoError::Malformed {
            line: i + 1,
            last_seq,
            msg: err.to_string(),
        })?;
        if last_seq.is_some_and(|s| e.seq <= s) {
            return Err(TraceIoError::Sequence {
                line: i + 1,
                seq: e.seq,
                last_seq,
            });
        }
        match e.event {
            Event::TaskEnter { .. } if open => {
                return Err(TraceIoError::Malformed {
                    line: i + 1,
                    last_seq,
                    msg: "task entered inside another task".into(),
                })
            }
            Event::TaskEnter { .. } => open = true,
            Event::TaskExit if !open => {
                return Err(TraceIoError::Malformed {
                    line: i + 1,
                    last_seq,
                    msg: "task exit without matching enter".into(),
                })
            }
            Event::TaskExit => open = false,
            _ => {}
        }
        events.push(e);
    }
    if open {
        return Err(TraceIoError::Truncated {
            last_seq: events.last().map(|e| e.seq),
        });
    }
    Ok(Trace { header, events })
}

pub fn save_trace(trace: &Trace, path: &Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_trace(trace, std::io::BufWriter::new(file))
}

pub fn load_trace(path: &Path) -> Result<Trace, TraceIoError> {
    let file = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(file))
}

struct Tracer {
    machine: Machine,
    trace: Trace,
}

impl Tracer {
    fn accesses(&mut self, slices: &[ConcreteSlice], store: bool) {
        let layout = self.machine.layout();
        for s in slices {
            let base = layout.address(s);
            let elem = layout.element_kind(&s.buffer).size();
            let mut off = 0;
            while off < s.len {
                let bytes = elem.min(s.len - off);
                let event = if store {
                    Event::Store {
                        addr: base + off,
                        bytes,
                    }
                } else {
                    Event::Load {
                        addr: base + off,
                        bytes,
                    }
                };
                let seq = self.trace.events.len() as u64;
                self.trace.events.push(TraceEvent { seq, event });
                off += bytes;
            }
        }
    }
}

impl Visitor for Tracer {
    fn enter_block(&mut self, bb: u32) {
        self.trace.push(Event::BbEnter { bb });
    }

    fn exit_block(&mut self, bb: u32) {
        self.trace.push(Event::BbExit { bb });
    }

    fn task(&mut self, call: &ConcreteCall<'_>) -> Result<(), ExecError> {
        self.trace.push(Event::TaskEnter {
            task_kind: call.kernel.task_kind(),
            kernel_id: call.kernel.kernel_id().to_string(),
            site_id: call.site.to_string(),
        });
        self.trace.push(Event::BbEnter { bb: call.bb });
        self.accesses(&call.reads, false);
        self.machine.task(call)?;
        self.accesses(&call.writes, true);
        self.trace.push(Event::BbExit { bb: call.bb });
        self.trace.push(Event::TaskExit);
        Ok(())
    }

    fn glue(&mut self, site: &str, bb: u32, op: &GlueOp) -> Result<(), ExecError> {
        let layout = self.machine.layout();
        let event = match op {
            GlueOp::Fill { dst, .. } => Event::MemSet {
                dst: layout.address(dst),
                bytes: dst.len,
            },
            GlueOp::Copy { src, dst } => Event::MemCpy {
                src: layout.address(src),
                dst: layout.address(dst),
                bytes: dst.len,
            },
            GlueOp::Move { src, dst } => Event::MemMove {
                src: layout.address(src),
                dst: layout.address(dst),
                bytes: dst.len,
            },
        };
        self.trace.push(event);
        self.machine.glue(site, bb, op)
    }
}

/// Runs `program` serially, recording every task span and memory access.
pub fn interpret_and_trace(
    program: &TirProgram,
    inputs: &Inputs,
) -> Result<(Outputs, Trace), ExecError> {
    let mut tracer = Tracer {
        machine: Machine::new(&program.buffers, inputs),
        trace: Trace::new(program.hash(), program.runtime_values.clone()),
    };
    walk(program, &mut tracer)?;
    Ok((tracer.machine.into_outputs(), tracer.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tir::bench::running_example;
    use crate::tir::exec::interpret;
    use crate::tir::{Buffer, ElementKind, KernelSpec, Slice, Statement};

    fn round_trip(t: &Trace) -> Trace {
        let mut buf = Vec::new();
        write_trace(t, &mut buf).unwrap();
        read_trace(buf.as_slice()).unwrap()
    }

    #[test]
    fn running_example_has_six_task_spans() {
        let p = running_example(2);
        let (out, trace) = interpret_and_trace(&p, &Inputs::seeded(1)).unwrap();
        assert_eq!(trace.task_count(), 6);
        assert_eq!(out, interpret(&p, &Inputs::seeded(1)).unwrap());
        assert_eq!(round_trip(&trace), trace);
    }

    #[test]
    fn empty_program_has_no_events_and_header_only_file() {
        let p = TirProgram::new("empty", vec![], vec![]);
        let (_, trace) = interpret_and_trace(&p, &Inputs::seeded(0)).unwrap();
        assert!(trace.events.is_empty());
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        assert_eq!(round_trip(&trace), trace);
    }

    #[test]
    fn fft_span_loads_then_stores_its_footprint() {
        let p = TirProgram::new(
            "fft",
            vec![
                Buffer::new("x", ElementKind::Complex32, 2048),
                Buffer::new("y", ElementKind::Complex32, 2048),
            ],
            vec![Statement::call(
                "fft",
                KernelSpec::Fft {
                    points: 2048,
                    inverse: false,
                },
                vec![Slice::new("x", 0, 16_384)],
                vec![Slice::new("y", 0, 16_384)],
            )],
        );
        let (_, trace) = interpret_and_trace(&p, &Inputs::seeded(0)).unwrap();
        let loaded: u64 = trace
            .events
            .iter()
            .filter_map(|e| match e.event {
                Event::Load { bytes, .. } => Some(bytes),
                _ => None,
            })
            .sum();
        let stored: u64 = trace
            .events
            .iter()
            .filter_map(|e| match e.event {
                Event::Store { bytes, .. } => Some(bytes),
                _ => None,
            })
            .sum();
        assert_eq!((loaded, stored), (16_384, 16_384));
        let first_store = trace
            .events
            .iter()
            .position(|e| matches!(e.event, Event::Store { .. }));
        let last_load = trace
            .events
            .iter()
            .rposition(|e| matches!(e.event, Event::Load { .. }));
        assert!(last_load < first_store);
    }

    #[test]
    fn truncated_file_names_last_valid_seq() {
        let (_, trace) = interpret_and_trace(&running_example(2), &Inputs::seeded(1)).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: Vec<&str> = text.lines().take(40).collect();
        let mut partial = cut.join("\n");
        partial.push_str("\n{\"seq\":40,\"ki");
        match read_trace(partial.as_bytes()) {
            Err(TraceIoError::Malformed { line, last_seq, .. }) => {
                assert_eq!(line, 41);
                assert_eq!(last_seq, Some(38));
            }
            other => panic!("unexpected {other:?}"),
        }
        let clean = cut.join("\n");
        match read_trace(clean.as_bytes()) {
            Err(TraceIoError::Truncated { last_seq }) => assert_eq!(last_seq, Some(38)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
