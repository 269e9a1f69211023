//! Profile-guided flattening.
//!
//! A first instrumented run records loop trip counts, function-pointer
//! targets and subroutine calls. [`flatten`] then unrolls every loop that
//! (transitively) performs Type-2 work, inlines all subroutines and replaces
//! indirect calls with direct task calls, so each Type-2 task of the run
//! becomes its own statement with fixed operands.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tir::exec::{
    site_tree, walk, ConcreteCall, ExecError, GlueOp, Inputs, Machine, SiteNode, Visitor,
};
use crate::tir::{
    read_json, write_json, Function, IndexTerm, KernelSpec, Slice, Statement, TaskKind, TirIoError,
    TirProgram, TripSource,
};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileData {
    pub loop_trips: BTreeMap<String, u64>,
    pub indirect_targets: BTreeMap<String, KernelSpec>,
    pub call_inline_map: BTreeMap<String, String>,
}

impl ProfileData {
    pub fn load(path: &Path) -> Result<Self, TirIoError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), TirIoError> {
        write_json(path, self)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("polymorphic indirect call: slot `{slot}` resolved to {first} and later to {second}")]
    PolymorphicSlot {
        slot: String,
        first: String,
        second: String,
    },
    #[error("{site}: loop performs Type-2 work but has no profiled trip count")]
    MissingLoopProfile { site: String },
    #[error("{site}: slot `{slot}` has no profiled target")]
    MissingSlotProfile { site: String, slot: String },
    #[error("{site}: call to undefined function `{function}`")]
    UnknownFunction { site: String, function: String },
    #[error("{site}: loop variable `{var}` is not in scope")]
    UnknownVar { site: String, var: String },
    #[error("{site}: subroutine nesting exceeds {MAX_INLINE_DEPTH} (recursive program?)")]
    InlineDepth { site: String },
}

const MAX_INLINE_DEPTH: usize = 256;

struct Profiler {
    machine: Machine,
    data: ProfileData,
    polymorphic: Option<PreprocessError>,
}

impl Visitor for Profiler {
    fn loop_trip(&mut self, site: &str, trip: u64) -> Result<(), ExecError> {
        self.data.loop_trips.insert(site.to_string(), trip);
        Ok(())
    }

    fn indirect_call(
        &mut self,
        site: &str,
        slot: &str,
        target: &KernelSpec,
    ) -> Result<(), ExecError> {
        match self.data.indirect_targets.get(slot) {
            Some(prev) if prev != target => {
                let err = PreprocessError::PolymorphicSlot {
                    slot: slot.to_string(),
                    first: describe(prev),
                    second: describe(target),
                };
                let msg = err.to_string();
                self.polymorphic = Some(err);
                Err(ExecError::Observer {
                    site: site.to_string(),
                    msg,
                })
            }
            Some(_) => Ok(()),
            None => {
                self.data
                    .indirect_targets
                    .insert(slot.to_string(), target.clone());
                Ok(())
            }
        }
    }

    fn call_fn(&mut self, site: &str, function: &str) {
        self.data
            .call_inline_map
            .insert(site.to_string(), function.to_string());
    }

    fn task(&mut self, call: &ConcreteCall<'_>) -> Result<(), ExecError> {
        self.machine.task(call)
    }

    fn glue(&mut self, site: &str, bb: u32, op: &GlueOp) -> Result<(), ExecError> {
        self.machine.glue(site, bb, op)
    }
}

fn describe(k: &KernelSpec) -> String {
    match k {
        KernelSpec::Fft { inverse: true, .. } => format!("I{}", k.cost_key()),
        _ => k.cost_key(),
    }
}

/// Instrumented run recording trip counts, slot targets and subroutine calls.
pub fn profile(program: &TirProgram, inputs: &Inputs) -> Result<ProfileData, PreprocessError> {
    let mut p = Profiler {
        machine: Machine::new(&program.buffers, inputs),
        data: ProfileData::default(),
        polymorphic: None,
    };
    match walk(program, &mut p) {
        Ok(()) => Ok(p.data),
        Err(e) => Err(p.polymorphic.take().unwrap_or(PreprocessError::Exec(e))),
    }
}

/// A straight-line program plus the original site of every statement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlattenedProgram {
    #[serde(flatten)]
    pub program: TirProgram,
    /// Flattened site id -> original site id.
    pub site_map: BTreeMap<String, String>,
}

impl FlattenedProgram {
    pub fn load(path: &Path) -> Result<Self, TirIoError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), TirIoError> {
        write_json(path, self)
    }
}

/// Original-site tree parallel to the emitted statements.
struct Origin {
    site: String,
    children: Vec<Origin>,
}

#[derive(Clone)]
enum Binding {
    Value(u64),
    Renamed(String),
}

#[derive(Clone, Default)]
struct Scope {
    vars: HashMap<String, Binding>,
    params: HashMap<String, Slice>,
}

struct Flattener<'a> {
    program: &'a TirProgram,
    profile: &'a ProfileData,
    sites: BTreeMap<String, Vec<SiteNode>>,
    heavy: HashMap<String, bool>,
    used_vars: HashSet<String>,
}

pub fn flatten(
    program: &TirProgram,
    profile: &ProfileData,
) -> Result<FlattenedProgram, PreprocessError> {
    let entry = program
        .functions
        .get(&program.entry)
        .ok_or_else(|| PreprocessError::Exec(ExecError::MissingEntry(program.entry.clone())))?;
    let mut f = Flattener {
        program,
        profile,
        sites: site_tree(program),
        heavy: HashMap::new(),
        used_vars: HashSet::new(),
    };
    let sites = f.sites.get(&program.entry).cloned().unwrap_or_default();
    let emitted = f.block(&entry.body, &sites, &Scope::default(), 0)?;
    let (body, origins): (Vec<Statement>, Vec<Origin>) = emitted.into_iter().unzip();

    let mut out = TirProgram::new(program.name.clone(), program.buffers.clone(), body);
    out.entry = program.entry.clone();
    if out.entry != "main" {
        let main = out.functions.remove("main").expect("just created");
        out.functions.insert(out.entry.clone(), main);
    }
    out.runtime_values = program.runtime_values.clone();

    let mut site_map = BTreeMap::new();
    fn pair(new: &[SiteNode], old: &[Origin], map: &mut BTreeMap<String, String>) {
        for (n, o) in new.iter().zip(old) {
            map.insert(n.site.clone(), o.site.clone());
            pair(&n.children, &o.children, map);
        }
    }
    let new_sites = site_tree(&out);
    pair(&new_sites[&out.entry], &origins, &mut site_map);
    Ok(FlattenedProgram {
        program: out,
        site_map,
    })
}

impl<'a> Flattener<'a> {
    fn block(
        &mut self,
        stmts: &'a [Statement],
        sites: &[SiteNode],
        scope: &Scope,
        depth: usize,
    ) -> Result<Vec<(Statement, Origin)>, PreprocessError> {
        let mut out = Vec::new();
        for (stmt, node) in stmts.iter().zip(sites) {
            self.statement(stmt, node, scope, depth, &mut out)?;
        }
        Ok(out)
    }

    fn statement(
        &mut self,
        stmt: &'a Statement,
        node: &SiteNode,
        scope: &Scope,
        depth: usize,
        out: &mut Vec<(Statement, Origin)>,
    ) -> Result<(), PreprocessError> {
        let site = node.site.as_str();
        let leaf = |s: Statement| {
            (
                s,
                Origin {
                    site: site.to_string(),
                    children: Vec::new(),
                },
            )
        };
        match stmt {
            Statement::CallTask {
                name,
                kernel,
                reads,
                writes,
            } => {
                out.push(leaf(Statement::CallTask {
                    name: name.clone(),
                    kernel: kernel.clone(),
                    reads: self.slices(site, reads, scope)?,
                    writes: self.slices(site, writes, scope)?,
                }));
            }
            Statement::IndirectCall {
                slot,
                reads,
                writes,
                ..
            } => {
                let kernel = self.profile.indirect_targets.get(slot).ok_or_else(|| {
                    PreprocessError::MissingSlotProfile {
                        site: site.to_string(),
                        slot: slot.clone(),
                    }
                })?;
                out.push(leaf(Statement::CallTask {
                    name: slot.clone(),
                    kernel: kernel.clone(),
                    reads: self.slices(site, reads, scope)?,
                    writes: self.slices(site, writes, scope)?,
                }));
            }
            Statement::BindSlot { .. } => {}
            Statement::Fill { dst, value } => out.push(leaf(Statement::Fill {
                dst: self.slice(site, dst, scope)?,
                value: *value,
            })),
            Statement::Copy { src, dst } => out.push(leaf(Statement::Copy {
                src: self.slice(site, src, scope)?,
                dst: self.slice(site, dst, scope)?,
            })),
            Statement::Move { src, dst } => out.push(leaf(Statement::Move {
                src: self.slice(site, src, scope)?,
                dst: self.slice(site, dst, scope)?,
            })),
            Statement::CallFn { function, args } => {
                let callee: &'a Function =
                    self.program.functions.get(function).ok_or_else(|| {
                        PreprocessError::UnknownFunction {
                            site: site.to_string(),
                            function: function.clone(),
                        }
                    })?;
                if depth + 1 >= MAX_INLINE_DEPTH {
                    return Err(PreprocessError::InlineDepth {
                        site: site.to_string(),
                    });
                }
                let mut inner = Scope::default();
                for (param, arg) in callee.params.iter().zip(args) {
                    inner
                        .params
                        .insert(param.clone(), self.slice(site, arg, scope)?);
                }
                let sites = self.sites.get(function).cloned().unwrap_or_default();
                out.extend(self.block(&callee.body, &sites, &inner, depth + 1)?);
            }
            Statement::Loop { var, trip, body } => {
                let profiled = self.profile.loop_trips.get(site).copied();
                if self.is_heavy_block(body)? {
                    let n = profiled.ok_or_else(|| PreprocessError::MissingLoopProfile {
                        site: site.to_string(),
                    })?;
                    for i in 0..n {
                        let mut inner = scope.clone();
                        inner.vars.insert(var.clone(), Binding::Value(i));
                        out.extend(self.block(body, &node.children, &inner, depth)?);
                    }
                } else if profiled == Some(0) {
                } else {
                    let fresh = self.fresh_var(var);
                    let mut inner = scope.clone();
                    inner
                        .vars
                        .insert(var.clone(), Binding::Renamed(fresh.clone()));
                    let emitted = self.block(body, &node.children, &inner, depth)?;
                    let (body, children): (Vec<Statement>, Vec<Origin>) =
                        emitted.into_iter().unzip();
                    let trip = match trip {
                        TripSource::Constant(n) => TripSource::Constant(*n),
                        TripSource::RuntimeValue(key) => TripSource::RuntimeValue(key.clone()),
                    };
                    out.push((
                        Statement::Loop {
                            var: fresh,
                            trip,
                            body,
                        },
                        Origin {
                            site: site.to_string(),
                            children,
                        },
                    ));
                }
            }
        }
        Ok(())
    }

    fn fresh_var(&mut self, var: &str) -> String {
        let mut name = var.to_string();
        let mut n = 0;
        while self.used_vars.contains(&name) {
            n += 1;
            name = format!("{var}_{n}");
        }
        self.used_vars.insert(name.clone());
        name
    }

    fn slices(
        &self,
        site: &str,
        slices: &[Slice],
        scope: &Scope,
    ) -> Result<Vec<Slice>, PreprocessError> {
        slices.iter().map(|s| self.slice(site, s, scope)).collect()
    }

    /// Rewrites a slice into the flattened namespace: induction values folded
    /// into the offset, renamed loop variables, parameters replaced by their
    /// argument ranges.
    fn slice(&self, site: &str, s: &Slice, scope: &Scope) -> Result<Slice, PreprocessError> {
        let mut offset = s.offset;
        let mut index = Vec::new();
        for term in &s.index {
            match scope.vars.get(&term.var) {
                Some(Binding::Value(v)) => offset += term.stride * v,
                Some(Binding::Renamed(name)) => index.push(IndexTerm {
                    var: name.clone(),
                    stride: term.stride,
                }),
                None => {
                    return Err(PreprocessError::UnknownVar {
                        site: site.to_string(),
                        var: term.var.clone(),
                    })
                }
            }
        }
        Ok(match scope.params.get(&s.buffer) {
            Some(base) => {
                let mut merged = base.index.clone();
                merged.extend(index);
                Slice {
                    buffer: base.buffer.clone(),
                    offset: base.offset + offset,
                    len: s.len,
                    index: merged,
                }
            }
            None => Slice {
                buffer: s.buffer.clone(),
                offset,
                len: s.len,
                index,
            },
        })
    }

    fn is_heavy_block(&mut self, stmts: &[Statement]) -> Result<bool, PreprocessError> {
        for s in stmts {
            if self.is_heavy(s)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Whether a statement performs Type-2 work, looking through loops,
    /// subroutine calls and profiled slot targets.
    fn is_heavy(&mut self, stmt: &Statement) -> Result<bool, PreprocessError> {
        Ok(match stmt {
            Statement::CallTask { kernel, .. } => kernel.task_kind() == TaskKind::Type2,
            Statement::IndirectCall {
                slot, candidates, ..
            } => match self.profile.indirect_targets.get(slot) {
                Some(k) => k.task_kind() == TaskKind::Type2,
                None => candidates.iter().any(|k| k.task_kind() == TaskKind::Type2),
            },
            Statement::Loop { body, .. } => self.is_heavy_block(body)?,
            Statement::CallFn { function, .. } => {
                if let Some(&h) = self.heavy.get(function) {
                    return Ok(h);
                }
                let Some(callee) = self.program.functions.get(function) else {
                    return Ok(false);
                };
                let h = self.is_heavy_block(&callee.body)?;
                self.heavy.insert(function.clone(), h);
                h
            }
            _ => false,
        })
    }
}
