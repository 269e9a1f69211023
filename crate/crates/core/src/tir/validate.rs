use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use super::exec::{site_tree, SiteNode};
use super::kernels::KernelError;
use super::{KernelSpec, Slice, Statement, TirProgram, TripSource};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    MissingEntry(String),
    DuplicateBuffer(String),
    BadBufferSize {
        buffer: String,
        size: u64,
    },
    DanglingBuffer {
        site: String,
        buffer: String,
    },
    SliceOutOfRange {
        site: String,
        buffer: String,
        end: u64,
        size: u64,
    },
    Misaligned {
        site: String,
        buffer: String,
        element: u64,
    },
    EmptySlice {
        site: String,
    },
    UnknownFunction {
        site: String,
        function: String,
    },
    ArgCount {
        site: String,
        function: String,
        expected: usize,
        got: usize,
    },
    Recursion(Vec<String>),
    UnboundSlot {
        site: String,
        slot: String,
    },
    EmptyCandidates {
        site: String,
        slot: String,
    },
    UnknownVar {
        site: String,
        var: String,
    },
    EmptyLoop {
        site: String,
    },
    Kernel {
        site: String,
        error: KernelError,
    },
    CopyOverlap {
        site: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingEntry(e) => write!(f, "missing entry function `{e}`"),
            Violation::DuplicateBuffer(b) => write!(f, "buffer `{b}` declared more than once"),
            Violation::BadBufferSize { buffer, size } => {
                write!(
                    f,
                    "buffer `{buffer}`: size {size} is zero or not a multiple of its element size"
                )
            }
            Violation::DanglingBuffer { site, buffer } => {
                write!(f, "{site}: reference to undeclared buffer `{buffer}`")
            }
            Violation::SliceOutOfRange {
                site,
                buffer,
                end,
                size,
            } => {
                write!(
                    f,
                    "{site}: slice of `{buffer}` ends at byte {end}, past its {size} bytes"
                )
            }
            Violation::Misaligned {
                site,
                buffer,
                element,
            } => {
                write!(
                    f,
                    "{site}: slice of `{buffer}` is not aligned to its {element}-byte elements"
                )
            }
            Violation::EmptySlice { site } => write!(f, "{site}: zero-length slice"),
            Violation::UnknownFunction { site, function } => {
                write!(f, "{site}: call to undefined function `{function}`")
            }
            Violation::ArgCount {
                site,
                function,
                expected,
                got,
            } => write!(
                f,
                "{site}: `{function}` takes {expected} argument(s), got {got}"
            ),
            Violation::Recursion(cycle) => write!(f, "recursive call chain {}", cycle.join(" -> ")),
            Violation::UnboundSlot { site, slot } => {
                write!(f, "{site}: slot `{slot}` may be called before it is bound")
            }
            Violation::EmptyCandidates { site, slot } => {
                write!(f, "{site}: slot `{slot}` has no candidate kernels")
            }
            Violation::UnknownVar { site, var } => {
                write!(f, "{site}: loop variable `{var}` is not in scope")
            }
            Violation::EmptyLoop { site } => write!(f, "{site}: loop body is empty"),
            Violation::Kernel { site, error } => write!(f, "{site}: {error}"),
            Violation::CopyOverlap { site } => {
                write!(f, "{site}: copy source and destination overlap")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Static checks. Never fails; problems are reported as data.
pub fn validate_program(p: &TirProgram) -> ValidationReport {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for b in &p.buffers {
        if !seen.insert(b.id.as_str()) {
            out.push(Violation::DuplicateBuffer(b.id.clone()));
        }
        if b.size_bytes == 0 || b.size_bytes % b.element_kind.size() != 0 {
            out.push(Violation::BadBufferSize {
                buffer: b.id.clone(),
                size: b.size_bytes,
            });
        }
    }
    if !p.functions.contains_key(&p.entry) {
        out.push(Violation::MissingEntry(p.entry.clone()));
        return ValidationReport { violations: out };
    }
    if let Some(cycle) = find_recursion(p) {
        out.push(Violation::Recursion(cycle));
        return ValidationReport { violations: out };
    }
    let sites = site_tree(p);
    let mut checker = Checker {
        program: p,
        sites: &sites,
        out: Vec::new(),
    };
    let mut ctx = Ctx::default();
    checker.block(
        &p.entry,
        &p.functions[&p.entry].body,
        &sites[&p.entry],
        &mut ctx,
    );
    out.extend(checker.out);
    ValidationReport { violations: out }
}

fn find_recursion(p: &TirProgram) -> Option<Vec<String>> {
    fn callees(stmts: &[Statement], acc: &mut Vec<String>) {
        for s in stmts {
            match s {
                Statement::CallFn { function, .. } => acc.push(function.clone()),
                Statement::Loop { body, .. } => callees(body, acc),
                _ => {}
            }
        }
    }
    let graph: BTreeMap<&str, Vec<String>> = p
        .functions
        .iter()
        .map(|(name, f)| {
            let mut acc = Vec::new();
            callees(&f.body, &mut acc);
            (name.as_str(), acc)
        })
        .collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<&str, u8> = HashMap::new();
    fn dfs<'a>(
        node: &'a str,
        graph: &'a BTreeMap<&str, Vec<String>>,
        state: &mut HashMap<&'a str, u8>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        state.insert(node, 1);
        stack.push(node);
        for next in graph.get(node).into_iter().flatten() {
            let Some((key, _)) = graph.get_key_value(next.as_str()) else {
                continue;
            };
            match state.get(key).copied().unwrap_or(0) {
                1 => {
                    let start = stack.iter().position(|n| n == key).unwrap_or(0);
                    let mut cycle: Vec<String> =
                        stack[start..].iter().map(|s| s.to_string()).collect();
                    cycle.push(key.to_string());
                    return Some(cycle);
                }
                0 => {
                    if let Some(c) = dfs(key, graph, state, stack) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        stack.pop();
        state.insert(node, 2);
        None
    }
    for name in graph.keys() {
        if state.get(name).copied().unwrap_or(0) == 0 {
            if let Some(c) = dfs(name, &graph, &mut state, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

#[derive(Clone, Default)]
struct Ctx {
    /// Loop variable -> largest value it can take, if known.
    vars: HashMap<String, Option<u64>>,
    /// Parameter -> byte length of the bound argument.
    params: HashMap<String, u64>,
    bound_slots: HashSet<String>,
}

struct Checker<'a> {
    program: &'a TirProgram,
    sites: &'a BTreeMap<String, Vec<SiteNode>>,
    out: Vec<Violation>,
}

impl<'a> Checker<'a> {
    // The same statement is visited once per call site; report it once.
    fn push(&mut self, v: Violation) {
        if !self.out.contains(&v) {
            self.out.push(v);
        }
    }

    fn block(&mut self, fname: &str, stmts: &'a [Statement], sites: &'a [SiteNode], ctx: &mut Ctx) {
        for (stmt, node) in stmts.iter().zip(sites) {
            self.statement(fname, stmt, node, ctx);
        }
    }

    fn statement(&mut self, fname: &str, stmt: &'a Statement, node: &'a SiteNode, ctx: &mut Ctx) {
        let site = node.site.as_str();
        match stmt {
            Statement::CallTask {
                kernel,
                reads,
                writes,
                ..
            } => self.task(site, kernel, reads, writes, ctx),
            Statement::IndirectCall {
                slot,
                candidates,
                reads,
                writes,
            } => {
                if !ctx.bound_slots.contains(slot) {
                    self.push(Violation::UnboundSlot {
                        site: site.into(),
                        slot: slot.clone(),
                    });
                }
                if candidates.is_empty() {
                    self.push(Violation::EmptyCandidates {
                        site: site.into(),
                        slot: slot.clone(),
                    });
                }
                for k in candidates {
                    self.task(site, k, reads, writes, ctx);
                }
            }
            Statement::Loop { var, trip, body } => {
                if body.is_empty() {
                    self.push(Violation::EmptyLoop { site: site.into() });
                }
                let max = match trip {
                    TripSource::Constant(n) => Some(*n),
                    TripSource::RuntimeValue(key) => self.program.runtime_values.get(key).copied(),
                };
                let mut inner = ctx.clone();
                inner
                    .vars
                    .insert(var.clone(), max.map(|n| n.saturating_sub(1)));
                self.block(fname, body, &node.children, &mut inner);
                ctx.bound_slots = inner.bound_slots;
            }
            Statement::CallFn { function, args } => {
                for a in args {
                    self.slice(site, a, ctx, None);
                }
                let Some(callee) = self.program.functions.get(function) else {
                    self.push(Violation::UnknownFunction {
                        site: site.into(),
                        function: function.clone(),
                    });
                    return;
                };
                if callee.params.len() != args.len() {
                    self.push(Violation::ArgCount {
                        site: site.into(),
                        function: function.clone(),
                        expected: callee.params.len(),
                        got: args.len(),
                    });
                    return;
                }
                let mut inner = Ctx {
                    vars: HashMap::new(),
                    params: callee
                        .params
                        .iter()
                        .cloned()
                        .zip(args.iter().map(|a| a.len))
                        .collect(),
                    bound_slots: std::mem::take(&mut ctx.bound_slots),
                };
                let sites = self
                    .sites
                    .get(function.as_str())
                    .map_or(&[][..], Vec::as_slice);
                self.block(function, &callee.body, sites, &mut inner);
                ctx.bound_slots = inner.bound_slots;
            }
            Statement::BindSlot { slot, choice } => {
                if let super::SlotChoice::LoopVar(var) = choice {
                    if !ctx.vars.contains_key(var) {
                        self.push(Violation::UnknownVar {
                            site: site.into(),
                            var: var.clone(),
                        });
                    }
                }
                ctx.bound_slots.insert(slot.clone());
            }
            Statement::Fill { dst, .. } => self.slice(site, dst, ctx, None),
            Statement::Copy { src, dst } | Statement::Move { src, dst } => {
                self.slice(site, src, ctx, None);
                self.slice(site, dst, ctx, None);
                if matches!(stmt, Statement::Copy { .. })
                    && src.buffer == dst.buffer
                    && src.index.is_empty()
                    && dst.index.is_empty()
                    && src.offset < dst.offset + dst.len
                    && dst.offset < src.offset + src.len
                {
                    self.push(Violation::CopyOverlap { site: site.into() });
                }
            }
        }
    }

    fn task(
        &mut self,
        site: &str,
        kernel: &KernelSpec,
        reads: &[Slice],
        writes: &[Slice],
        ctx: &Ctx,
    ) {
        let element = match kernel {
            KernelSpec::Scrambler { .. }
            | KernelSpec::Interleaver { .. }
            | KernelSpec::ReadData { .. } => None,
            KernelSpec::WriteData { .. } => None,
            KernelSpec::Modulate => Some(1),
            _ => Some(8),
        };
        for r in reads {
            self.slice(site, r, ctx, element);
        }
        for w in writes {
            let element = match kernel {
                KernelSpec::Modulate => Some(8),
                _ => element,
            };
            self.slice(site, w, ctx, element);
        }
        let read_lens: Vec<u64> = reads.iter().map(|s| s.len).collect();
        let write_lens: Vec<u64> = writes.iter().map(|s| s.len).collect();
        if let Err(error) = kernel.check_io(&read_lens, &write_lens) {
            self.push(Violation::Kernel {
                site: site.into(),
                error,
            });
        }
    }

    fn slice(&mut self, site: &str, s: &Slice, ctx: &Ctx, element: Option<u64>) {
        if s.len == 0 {
            self.push(Violation::EmptySlice { site: site.into() });
        }
        let mut max_offset = Some(s.offset);
        for term in &s.index {
            match ctx.vars.get(&term.var) {
                None => {
                    self.push(Violation::UnknownVar {
                        site: site.into(),
                        var: term.var.clone(),
                    });
                    max_offset = None;
                }
                Some(bound) => {
                    max_offset = match (max_offset, bound) {
                        (Some(o), Some(b)) => Some(o + term.stride * b),
                        _ => None,
                    };
                }
            }
        }
        let limit = if let Some(len) = ctx.params.get(&s.buffer) {
            *len
        } else if let Some(buf) = self.program.buffer(&s.buffer) {
            if let Some(elem) = element {
                let elem = elem.max(buf.element_kind.size());
                let strides_aligned = s.index.iter().all(|t| t.stride % elem == 0);
                if !s.offset.is_multiple_of(elem) || !s.len.is_multiple_of(elem) || !strides_aligned
                {
                    self.push(Violation::Misaligned {
                        site: site.into(),
                        buffer: s.buffer.clone(),
                        element: elem,
                    });
                }
            }
            buf.size_bytes
        } else {
            self.push(Violation::DanglingBuffer {
                site: site.into(),
                buffer: s.buffer.clone(),
            });
            return;
        };
        if let Some(end) = max_offset.and_then(|o| o.checked_add(s.len)) {
            if end > limit {
                self.push(Violation::SliceOutOfRange {
                    site: site.into(),
                    buffer: s.buffer.clone(),
                    end,
                    size: limit,
                });
            }
        }
    }
}
