//! Task-level intermediate representation.
//!
//! A [`TirProgram`] is a serially written application: a set of buffers, a
//! set of functions made of [`Statement`]s, and an entry function. Compute
//! happens only inside task calls; everything else is control flow (loops,
//! subroutine calls, function-pointer slots) or small glue intrinsics.

pub mod bench;
pub mod exec;
pub mod kernels;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use validate::{validate_program, ValidationReport, Violation};

/// Storage kind of a buffer's elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    /// Interleaved (re, im) `f32` pairs, 8 bytes per sample.
    Complex32,
    Float32,
    Byte,
}

impl ElementKind {
    pub fn size(self) -> u64 {
        match self {
            ElementKind::Complex32 => 8,
            ElementKind::Float32 => 4,
            ElementKind::Byte => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub id: String,
    pub size_bytes: u64,
    pub element_kind: ElementKind,
}

impl Buffer {
    pub fn new(id: impl Into<String>, element_kind: ElementKind, elements: u64) -> Self {
        Self {
            id: id.into(),
            size_bytes: elements * element_kind.size(),
            element_kind,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Light auxiliary work, run serially by the host.
    Type1,
    /// Compute-heavy kernel eligible for parallel or accelerator execution.
    Type2,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Type1 => "type1",
            TaskKind::Type2 => "type2",
        })
    }
}

/// Unary and binary element-wise operations on complex arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    /// `|z|^2` in the real lane, zero imaginary.
    Mag2,
    Conj,
    Copy,
}

impl ElemOp {
    pub fn arity(self) -> usize {
        match self {
            ElemOp::Add | ElemOp::Sub | ElemOp::Mul => 2,
            ElemOp::Mag2 | ElemOp::Conj | ElemOp::Copy => 1,
        }
    }
}

/// A registered kernel together with its parameters.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KernelSpec {
    Fft {
        points: u32,
        #[serde(default)]
        inverse: bool,
    },
    Gemm {
        m: u32,
        k: u32,
        n: u32,
    },
    Scrambler {
        seed: u8,
    },
    Interleaver {
        cols: u32,
    },
    Modulate,
    PilotInsert {
        out_len: u32,
        pilot_every: u32,
    },
    Correlate,
    Elemwise {
        op: ElemOp,
    },
    ReadData {
        stream: u32,
    },
    WriteData {
        stream: u32,
    },
}

impl KernelSpec {
    pub fn kernel_id(&self) -> &'static str {
        match self {
            KernelSpec::Fft { .. } => "FFT",
            KernelSpec::Gemm { .. } => "GEMM",
            KernelSpec::Scrambler { .. } => "SCRAMBLER",
            KernelSpec::Interleaver { .. } => "INTERLEAVER",
            KernelSpec::Modulate => "MODULATE",
            KernelSpec::PilotInsert { .. } => "PILOT_INSERT",
            KernelSpec::Correlate => "CORRELATE",
            KernelSpec::Elemwise { .. } => "ELEMWISE",
            KernelSpec::ReadData { .. } => "READ_DATA",
            KernelSpec::WriteData { .. } => "WRITE_DATA",
        }
    }

    pub fn task_kind(&self) -> TaskKind {
        match self {
            KernelSpec::Fft { .. } | KernelSpec::Gemm { .. } => TaskKind::Type2,
            _ => TaskKind::Type1,
        }
    }

    /// Key used to look up modeled execution times, e.g. `FFT-256` or `GEMM-4x4x64`.
    pub fn cost_key(&self) -> String {
        match self {
            KernelSpec::Fft { points, .. } => format!("FFT-{points}"),
            KernelSpec::Gemm { m, k, n } => format!("GEMM-{m}x{k}x{n}"),
            other => other.kernel_id().to_string(),
        }
    }

    /// Disk I/O kernels; excluded from "tasks-only" timing.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            KernelSpec::ReadData { .. } | KernelSpec::WriteData { .. }
        )
    }
}

/// One term of an induction-dependent offset: `stride * var`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexTerm {
    pub var: String,
    pub stride: u64,
}

/// A byte range of a buffer (or of a function parameter).
///
/// The effective offset is `offset + sum(stride * value(var))` over `index`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slice {
    pub buffer: String,
    pub offset: u64,
    pub len: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub index: Vec<IndexTerm>,
}

impl Slice {
    pub fn new(buffer: impl Into<String>, offset: u64, len: u64) -> Self {
        Self {
            buffer: buffer.into(),
            offset,
            len,
            index: Vec::new(),
        }
    }

    /// The whole of `buf`.
    pub fn whole(buf: &Buffer) -> Self {
        Self::new(buf.id.clone(), 0, buf.size_bytes)
    }

    pub fn indexed(mut self, var: impl Into<String>, stride: u64) -> Self {
        self.index.push(IndexTerm {
            var: var.into(),
            stride,
        });
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripSource {
    Constant(u64),
    RuntimeValue(String),
}

/// Selector written into an indirect-call slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotChoice {
    Constant(u64),
    RuntimeValue(String),
    LoopVar(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Statement {
    CallTask {
        name: String,
        kernel: KernelSpec,
        reads: Vec<Slice>,
        writes: Vec<Slice>,
    },
    Loop {
        var: String,
        trip: TripSource,
        body: Vec<Statement>,
    },
    /// Call through a function-pointer slot; the target is `candidates[bound choice]`.
    IndirectCall {
        slot: String,
        candidates: Vec<KernelSpec>,
        reads: Vec<Slice>,
        writes: Vec<Slice>,
    },
    CallFn {
        function: String,
        args: Vec<Slice>,
    },
    BindSlot {
        slot: String,
        choice: SlotChoice,
    },
    /// memset-style glue outside any task.
    Fill {
        dst: Slice,
        value: u8,
    },
    /// memcpy-style glue; ranges must not overlap.
    Copy {
        src: Slice,
        dst: Slice,
    },
    /// memmove-style glue; ranges may overlap.
    Move {
        src: Slice,
        dst: Slice,
    },
}

impl Statement {
    pub fn call(
        name: impl Into<String>,
        kernel: KernelSpec,
        reads: Vec<Slice>,
        writes: Vec<Slice>,
    ) -> Self {
        Statement::CallTask {
            name: name.into(),
            kernel,
            reads,
            writes,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<String>,
    pub body: Vec<Statement>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TirProgram {
    pub name: String,
    pub buffers: Vec<Buffer>,
    pub functions: BTreeMap<String, Function>,
    pub entry: String,
    #[serde(default)]
    pub runtime_values: BTreeMap<String, u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum TirIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, TirIoError> {
    let text = std::fs::read_to_string(path).map_err(|source| TirIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| TirIoError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TirIoError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| TirIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl TirProgram {
    /// A program with only an entry function.
    pub fn new(name: impl Into<String>, buffers: Vec<Buffer>, entry_body: Vec<Statement>) -> Self {
        let mut functions = BTreeMap::new();
        functions.insert(
            "main".to_string(),
            Function {
                params: Vec::new(),
                body: entry_body,
            },
        );
        Self {
            name: name.into(),
            buffers,
            functions,
            entry: "main".to_string(),
            runtime_values: BTreeMap::new(),
        }
    }

    pub fn buffer(&self, id: &str) -> Option<&Buffer> {
        self.buffers.iter().find(|b| b.id == id)
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("serializable");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self, TirIoError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), TirIoError> {
        write_json(path, self)
    }
}
