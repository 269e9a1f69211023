//! Serial interpretation of task IR.
//!
//! [`walk`] resolves control flow (loops, subroutine calls, function-pointer
//! slots, parameter binding) and hands every executed task call and glue
//! intrinsic to a [`Visitor`] with fully concrete byte ranges. The
//! [`Machine`] visitor owns buffer memory and performs the computation;
//! tracing and profiling wrap or replace it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::kernels::{kernel_exec, read_data, KernelError};
use super::{
    Buffer, ElementKind, Function, KernelSpec, Slice, SlotChoice, Statement, TirProgram, TripSource,
};

/// First buffer base address; keeps address zero unused.
pub const ADDRESS_BASE: u64 = 0x1_0000;
/// Buffer base alignment.
pub const ADDRESS_ALIGN: u64 = 64;

const MAX_CALL_DEPTH: usize = 256;

/// A resolved byte range of a named buffer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConcreteSlice {
    pub buffer: String,
    pub offset: u64,
    pub len: u64,
}

impl ConcreteSlice {
    pub fn new(buffer: impl Into<String>, offset: u64, len: u64) -> Self {
        Self {
            buffer: buffer.into(),
            offset,
            len,
        }
    }

    pub fn overlaps(&self, other: &ConcreteSlice) -> bool {
        self.buffer == other.buffer
            && self.offset < other.offset + other.len
            && other.offset < self.offset + self.len
    }
}

/// A glue intrinsic with resolved operands.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GlueOp {
    Fill {
        dst: ConcreteSlice,
        value: u8,
    },
    Copy {
        src: ConcreteSlice,
        dst: ConcreteSlice,
    },
    Move {
        src: ConcreteSlice,
        dst: ConcreteSlice,
    },
}

/// One executed task call.
#[derive(Clone, Debug)]
pub struct ConcreteCall<'a> {
    pub site: &'a str,
    pub bb: u32,
    pub name: &'a str,
    pub kernel: &'a KernelSpec,
    pub reads: Vec<ConcreteSlice>,
    pub writes: Vec<ConcreteSlice>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("entry function `{0}` is not defined")]
    MissingEntry(String),
    #[error("{site}: call to undefined function `{function}`")]
    UnknownFunction { site: String, function: String },
    #[error("{site}: `{function}` takes {expected} argument(s), got {got}")]
    ArgCount {
        site: String,
        function: String,
        expected: usize,
        got: usize,
    },
    #[error("{site}: runtime value `{key}` is not bound")]
    UnboundRuntimeValue { site: String, key: String },
    #[error("{site}: loop variable `{var}` is not in scope")]
    UnknownVar { site: String, var: String },
    #[error("{site}: slot `{slot}` called before it was bound")]
    UnboundSlot { site: String, slot: String },
    #[error(
        "{site}: slot `{slot}` holds choice {choice} but only {candidates} candidate(s) exist"
    )]
    BadSlotChoice {
        site: String,
        slot: String,
        choice: u64,
        candidates: usize,
    },
    #[error("{site}: unknown buffer `{buffer}`")]
    UnknownBuffer { site: String, buffer: String },
    #[error("{site}: access [{offset}, {offset}+{len}) is outside `{buffer}` ({size} bytes)")]
    OutOfRange {
        site: String,
        buffer: String,
        offset: u64,
        len: u64,
        size: u64,
    },
    #[error("{site}: {source}")]
    Kernel {
        site: String,
        #[source]
        source: KernelError,
    },
    #[error("{site}: call depth exceeds {MAX_CALL_DEPTH} (recursive program?)")]
    CallDepth { site: String },
    #[error("{site}: {msg}")]
    Observer { site: String, msg: String },
}

/// Static site id and basic-block id of one statement, mirroring the
/// statement tree of a function.
#[derive(Clone, Debug)]
pub struct SiteNode {
    pub site: String,
    pub bb: u32,
    pub children: Vec<SiteNode>,
}

/// Site ids have the form `function:i.j.k`, the path of statement indices
/// through nested loop bodies.
pub fn site_tree(program: &TirProgram) -> BTreeMap<String, Vec<SiteNode>> {
    fn build(fname: &str, prefix: &str, stmts: &[Statement], next_bb: &mut u32) -> Vec<SiteNode> {
        stmts
            .iter()
            .enumerate()
            .map(|(i, stmt)| {
                let path = if prefix.is_empty() {
                    i.to_string()
                } else {
                    format!("{prefix}.{i}")
                };
                let bb = *next_bb;
                *next_bb += 1;
                let children = match stmt {
                    Statement::Loop { body, .. } => build(fname, &path, body, next_bb),
                    _ => Vec::new(),
                };
                SiteNode {
                    site: format!("{fname}:{path}"),
                    bb,
                    children,
                }
            })
            .collect()
    }
    let mut next_bb = 0;
    program
        .functions
        .iter()
        .map(|(name, f)| (name.clone(), build(name, "", &f.body, &mut next_bb)))
        .collect()
}

/// Callbacks invoked by [`walk`] in execution order.
pub trait Visitor {
    /// A non-task statement starts executing (one basic block per statement;
    /// loops report one block per iteration).
    fn enter_block(&mut self, _bb: u32) {}
    fn exit_block(&mut self, _bb: u32) {}
    fn loop_trip(&mut self, _site: &str, _trip: u64) -> Result<(), ExecError> {
        Ok(())
    }
    fn indirect_call(
        &mut self,
        _site: &str,
        _slot: &str,
        _target: &KernelSpec,
    ) -> Result<(), ExecError> {
        Ok(())
    }
    fn call_fn(&mut self, _site: &str, _function: &str) {}
    fn task(&mut self, call: &ConcreteCall<'_>) -> Result<(), ExecError>;
    fn glue(&mut self, site: &str, bb: u32, op: &GlueOp) -> Result<(), ExecError>;
}

#[derive(Default)]
struct Frame {
    vars: HashMap<String, u64>,
    params: HashMap<String, ConcreteSlice>,
}

struct Walker<'p> {
    program: &'p TirProgram,
    sites: &'p BTreeMap<String, Vec<SiteNode>>,
    sizes: HashMap<&'p str, u64>,
    slots: HashMap<String, u64>,
}

/// Interprets `program` from its entry function, reporting every step to `visitor`.
pub fn walk<V: Visitor>(program: &TirProgram, visitor: &mut V) -> Result<(), ExecError> {
    let entry = program
        .functions
        .get(&program.entry)
        .ok_or_else(|| ExecError::MissingEntry(program.entry.clone()))?;
    let sites = site_tree(program);
    let mut walker = Walker {
        program,
        sites: &sites,
        sizes: program
            .buffers
            .iter()
            .map(|b| (b.id.as_str(), b.size_bytes))
            .collect(),
        slots: HashMap::new(),
    };
    walker.block(
        &entry.body,
        &sites[&program.entry],
        &mut Frame::default(),
        0,
        visitor,
    )
}

impl<'p> Walker<'p> {
    fn block<V: Visitor>(
        &mut self,
        stmts: &'p [Statement],
        sites: &'p [SiteNode],
        frame: &mut Frame,
        depth: usize,
        v: &mut V,
    ) -> Result<(), ExecError> {
        for (stmt, node) in stmts.iter().zip(sites) {
            self.statement(stmt, node, frame, depth, v)?;
        }
        Ok(())
    }

    fn statement<V: Visitor>(
        &mut self,
        stmt: &'p Statement,
        node: &'p SiteNode,
        frame: &mut Frame,
        depth: usize,
        v: &mut V,
    ) -> Result<(), ExecError> {
        let site = node.site.as_str();
        match stmt {
            Statement::CallTask {
                name,
                kernel,
                reads,
                writes,
            } => self.task(site, node.bb, name, kernel, reads, writes, frame, v),
            Statement::IndirectCall {
                slot,
                candidates,
                reads,
                writes,
            } => {
                let choice = *self.slots.get(slot).ok_or_else(|| ExecError::UnboundSlot {
                    site: site.to_string(),
                    slot: slot.clone(),
                })?;
                let kernel =
                    candidates
                        .get(choice as usize)
                        .ok_or_else(|| ExecError::BadSlotChoice {
                            site: site.to_string(),
                            slot: slot.clone(),
                            choice,
                            candidates: candidates.len(),
                        })?;
                v.indirect_call(site, slot, kernel)?;
                self.task(site, node.bb, slot, kernel, reads, writes, frame, v)
            }
            Statement::Loop { var, trip, body } => {
                let trip = match trip {
                    TripSource::Constant(n) => *n,
                    TripSource::RuntimeValue(key) => self.runtime_value(site, key)?,
                };
                v.loop_trip(site, trip)?;
                let shadowed = frame.vars.get(var).copied();
                for i in 0..trip {
                    v.enter_block(node.bb);
                    v.exit_block(node.bb);
                    frame.vars.insert(var.clone(), i);
                    self.block(body, &node.children, frame, depth, v)?;
                }
                match shadowed {
                    Some(old) => frame.vars.insert(var.clone(), old),
                    None => frame.vars.remove(var),
                };
                Ok(())
            }
            Statement::CallFn { function, args } => {
                let callee: &'p Function =
                    self.program.functions.get(function).ok_or_else(|| {
                        ExecError::UnknownFunction {
                            site: site.to_string(),
                            function: function.clone(),
                        }
                    })?;
                if callee.params.len() != args.len() {
                    return Err(ExecError::ArgCount {
                        site: site.to_string(),
                        function: function.clone(),
                        expected: callee.params.len(),
                        got: args.len(),
                    });
                }
                if depth + 1 >= MAX_CALL_DEPTH {
                    return Err(ExecError::CallDepth {
                        site: site.to_string(),
                    });
                }
                v.enter_block(node.bb);
                v.exit_block(node.bb);
                v.call_fn(site, function);
                let mut inner = Frame::default();
                for (param, arg) in callee.params.iter().zip(args) {
                    inner
                        .params
                        .insert(param.clone(), self.resolve(site, arg, frame)?);
                }
                let sites = self.sites.get(function).map_or(&[][..], Vec::as_slice);
                self.block(&callee.body, sites, &mut inner, depth + 1, v)
            }
            Statement::BindSlot { slot, choice } => {
                let value = match choice {
                    SlotChoice::Constant(n) => *n,
                    SlotChoice::RuntimeValue(key) => self.runtime_value(site, key)?,
                    SlotChoice::LoopVar(var) => self.var(site, var, frame)?,
                };
                v.enter_block(node.bb);
                v.exit_block(node.bb);
                self.slots.insert(slot.clone(), value);
                Ok(())
            }
            Statement::Fill { dst, value } => {
                let op = GlueOp::Fill {
                    dst: self.resolve(site, dst, frame)?,
                    value: *value,
                };
                self.glue(site, node.bb, &op, v)
            }
            Statement::Copy { src, dst } => {
                let op = GlueOp::Copy {
                    src: self.resolve(site, src, frame)?,
                    dst: self.resolve(site, dst, frame)?,
                };
                self.glue(site, node.bb, &op, v)
            }
            Statement::Move { src, dst } => {
                let op = GlueOp::Move {
                    src: self.resolve(site, src, frame)?,
                    dst: self.resolve(site, dst, frame)?,
                };
                self.glue(site, node.bb, &op, v)
            }
        }
    }

    fn glue<V: Visitor>(
        &self,
        site: &str,
        bb: u32,
        op: &GlueOp,
        v: &mut V,
    ) -> Result<(), ExecError> {
        v.enter_block(bb);
        v.glue(site, bb, op)?;
        v.exit_block(bb);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn task<V: Visitor>(
        &self,
        site: &str,
        bb: u32,
        name: &str,
        kernel: &KernelSpec,
        reads: &[Slice],
        writes: &[Slice],
        frame: &Frame,
        v: &mut V,
    ) -> Result<(), ExecError> {
        let reads = reads
            .iter()
            .map(|s| self.resolve(site, s, frame))
            .collect::<Result<Vec<_>, _>>()?;
        let writes = writes
            .iter()
            .map(|s| self.resolve(site, s, frame))
            .collect::<Result<Vec<_>, _>>()?;
        let read_lens: Vec<u64> = reads.iter().map(|s| s.len).collect();
        let write_lens: Vec<u64> = writes.iter().map(|s| s.len).collect();
        kernel
            .check_io(&read_lens, &write_lens)
            .map_err(|source| ExecError::Kernel {
                site: site.to_string(),
                source,
            })?;
        v.task(&ConcreteCall {
            site,
            bb,
            name,
            kernel,
            reads,
            writes,
        })
    }

    fn runtime_value(&self, site: &str, key: &str) -> Result<u64, ExecError> {
        self.program
            .runtime_values
            .get(key)
            .copied()
            .ok_or_else(|| ExecError::UnboundRuntimeValue {
                site: site.to_string(),
                key: key.to_string(),
            })
    }

    fn var(&self, site: &str, var: &str, frame: &Frame) -> Result<u64, ExecError> {
        frame
            .vars
            .get(var)
            .copied()
            .ok_or_else(|| ExecError::UnknownVar {
                site: site.to_string(),
                var: var.to_string(),
            })
    }

    fn resolve(
        &self,
        site: &str,
        slice: &Slice,
        frame: &Frame,
    ) -> Result<ConcreteSlice, ExecError> {
        let mut offset = slice.offset;
        for term in &slice.index {
            offset += term.stride * self.var(site, &term.var, frame)?;
        }
        let out_of_range = |buffer: &str, size: u64| ExecError::OutOfRange {
            site: site.to_string(),
            buffer: buffer.to_string(),
            offset,
            len: slice.len,
            size,
        };
        if let Some(base) = frame.params.get(&slice.buffer) {
            if offset
                .checked_add(slice.len)
                .is_none_or(|end| end > base.len)
            {
                return Err(out_of_range(&slice.buffer, base.len));
            }
            return Ok(ConcreteSlice::new(
                base.buffer.clone(),
                base.offset + offset,
                slice.len,
            ));
        }
        let size =
            *self
                .sizes
                .get(slice.buffer.as_str())
                .ok_or_else(|| ExecError::UnknownBuffer {
                    site: site.to_string(),
                    buffer: slice.buffer.clone(),
                })?;
        if offset.checked_add(slice.len).is_none_or(|end| end > size) {
            return Err(out_of_range(&slice.buffer, size));
        }
        Ok(ConcreteSlice::new(slice.buffer.clone(), offset, slice.len))
    }
}

/// Flat address assignment: declaration order, 64-byte aligned.
#[derive(Clone, Debug)]
pub struct Layout {
    buffers: Vec<Buffer>,
    index: HashMap<String, usize>,
    bases: Vec<u64>,
}

impl Layout {
    pub fn new(buffers: &[Buffer]) -> Self {
        let mut bases = Vec::with_capacity(buffers.len());
        let mut next = ADDRESS_BASE;
        for b in buffers {
            bases.push(next);
            next = (next + b.size_bytes).div_ceil(ADDRESS_ALIGN) * ADDRESS_ALIGN;
        }
        Self {
            buffers: buffers.to_vec(),
            index: buffers
                .iter()
                .enumerate()
                .map(|(i, b)| (b.id.clone(), i))
                .collect(),
            bases,
        }
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn position(&self, buffer: &str) -> Option<usize> {
        self.index.get(buffer).copied()
    }

    pub fn base(&self, buffer: &str) -> Option<u64> {
        self.position(buffer).map(|i| self.bases[i])
    }

    pub fn address(&self, slice: &ConcreteSlice) -> u64 {
        self.base(&slice.buffer)
            .expect("slice of a declared buffer")
            + slice.offset
    }

    pub fn element_kind(&self, buffer: &str) -> ElementKind {
        self.buffers[self.position(buffer).expect("declared buffer")].element_kind
    }

    /// Buffer containing `addr`, with its base address.
    pub fn locate(&self, addr: u64) -> Option<(&Buffer, u64)> {
        let i = self.bases.partition_point(|&b| b <= addr).checked_sub(1)?;
        let b = &self.buffers[i];
        (addr < self.bases[i] + b.size_bytes).then_some((b, self.bases[i]))
    }
}

/// Data supplied to a program run. `ReadData` draws from a deterministic
/// source keyed by `seed`; `buffers` optionally pre-loads buffer images.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inputs {
    pub seed: u64,
    #[serde(default)]
    pub buffers: BTreeMap<String, Vec<u8>>,
}

impl Inputs {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            buffers: BTreeMap::new(),
        }
    }
}

/// Everything a run produces: the final memory image and every `WriteData` record.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    pub memory: BTreeMap<String, Vec<u8>>,
    /// Keyed by `s{stream}:{buffer}+{offset}`.
    pub written: BTreeMap<String, Vec<u8>>,
}

/// Buffer memory plus the I/O state of one program instance.
#[derive(Clone, Debug)]
pub struct Machine {
    layout: Layout,
    memory: Vec<Vec<u8>>,
    written: BTreeMap<String, Vec<u8>>,
    seed: u64,
}

impl Machine {
    pub fn new(buffers: &[Buffer], inputs: &Inputs) -> Self {
        let layout = Layout::new(buffers);
        let memory = buffers
            .iter()
            .map(|b| {
                let mut bytes = vec![0u8; b.size_bytes as usize];
                if let Some(init) = inputs.buffers.get(&b.id) {
                    let n = init.len().min(bytes.len());
                    bytes[..n].copy_from_slice(&init[..n]);
                }
                bytes
            })
            .collect();
        Self {
            layout,
            memory,
            written: BTreeMap::new(),
            seed: inputs.seed,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn read(&self, s: &ConcreteSlice) -> &[u8] {
        let i = self.layout.position(&s.buffer).expect("declared buffer");
        &self.memory[i][s.offset as usize..(s.offset + s.len) as usize]
    }

    pub fn write(&mut self, s: &ConcreteSlice, bytes: &[u8]) {
        let i = self.layout.position(&s.buffer).expect("declared buffer");
        self.memory[i][s.offset as usize..(s.offset + s.len) as usize].copy_from_slice(bytes);
    }

    /// Copies out the read operands of a call.
    pub fn gather(&self, reads: &[ConcreteSlice]) -> Vec<Vec<u8>> {
        reads.iter().map(|s| self.read(s).to_vec()).collect()
    }

    /// Executes one task call in place.
    pub fn run_call(
        &mut self,
        kernel: &KernelSpec,
        reads: &[ConcreteSlice],
        writes: &[ConcreteSlice],
    ) -> Result<(), KernelError> {
        match kernel {
            KernelSpec::ReadData { stream } => {
                kernel.check_io(&[], &writes.iter().map(|s| s.len).collect::<Vec<_>>())?;
                let w = &writes[0];
                let data = read_data(
                    self.seed,
                    *stream,
                    w.offset,
                    w.len,
                    self.layout.element_kind(&w.buffer),
                );
                self.write(w, &data);
            }
            KernelSpec::WriteData { stream } => {
                kernel.check_io(&reads.iter().map(|s| s.len).collect::<Vec<_>>(), &[])?;
                let r = &reads[0];
                let bytes = self.read(r).to_vec();
                self.written
                    .insert(format!("s{stream}:{}+{}", r.buffer, r.offset), bytes);
            }
            _ => {
                let inputs = self.gather(reads);
                let views: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
                let lens: Vec<u64> = writes.iter().map(|s| s.len).collect();
                let outputs = kernel_exec(kernel, &views, &lens)?;
                self.scatter(writes, &outputs);
            }
        }
        Ok(())
    }

    /// Writes kernel results back.
    pub fn scatter(&mut self, writes: &[ConcreteSlice], outputs: &[Vec<u8>]) {
        for (w, bytes) in writes.iter().zip(outputs) {
            self.write(w, bytes);
        }
    }

    pub fn run_glue(&mut self, op: &GlueOp) {
        match op {
            GlueOp::Fill { dst, value } => {
                let bytes = vec![*value; dst.len as usize];
                self.write(dst, &bytes);
            }
            GlueOp::Copy { src, dst } | GlueOp::Move { src, dst } => {
                let bytes = self.read(src).to_vec();
                self.write(dst, &bytes);
            }
        }
    }

    pub fn into_outputs(self) -> Outputs {
        Outputs {
            memory: self
                .layout
                .buffers
                .iter()
                .map(|b| b.id.clone())
                .zip(self.memory)
                .collect(),
            written: self.written,
        }
    }
}

impl Visitor for Machine {
    fn task(&mut self, call: &ConcreteCall<'_>) -> Result<(), ExecError> {
        self.run_call(call.kernel, &call.reads, &call.writes)
            .map_err(|source| ExecError::Kernel {
                site: call.site.to_string(),
                source,
            })
    }

    fn glue(&mut self, _site: &str, _bb: u32, op: &GlueOp) -> Result<(), ExecError> {
        self.run_glue(op);
        Ok(())
    }
}

/// Plain serial interpretation.
pub fn interpret(program: &TirProgram, inputs: &Inputs) -> Result<Outputs, ExecError> {
    let mut machine = Machine::new(&program.buffers, inputs);
    walk(program, &mut machine)?;
    Ok(machine.into_outputs())
}
