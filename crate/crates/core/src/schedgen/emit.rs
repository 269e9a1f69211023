//! Lowering a schedule back to a program: serial sections for Type-1 work
//! and counter-barrier parallel sections for Type-2 work.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SafetyReport, ScheduleDag};
use crate::depanalysis::{ControlDag, GLUE_KERNEL};
use crate::preprocess::FlattenedProgram;
use crate::tir::exec::{
    walk, ConcreteCall, ConcreteSlice, ExecError, GlueOp, Inputs, Machine, Outputs, Visitor,
};
use crate::tir::kernels::KernelError;
use crate::tir::{read_json, write_json, Buffer, KernelSpec, TaskKind, TirIoError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TaskOp {
    Call {
        name: String,
        kernel: KernelSpec,
        reads: Vec<ConcreteSlice>,
        writes: Vec<ConcreteSlice>,
    },
    /// memset/memcpy/memmove work of one basic block outside any task.
    Glue { ops: Vec<GlueOp> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    /// Control DAG index.
    pub node: usize,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<String>,
    #[serde(flatten)]
    pub op: TaskOp,
}

impl TaskDescriptor {
    pub fn kernel(&self) -> Option<&KernelSpec> {
        match &self.op {
            TaskOp::Call { kernel, .. } => Some(kernel),
            TaskOp::Glue { .. } => None,
        }
    }

    pub fn kernel_id(&self) -> &str {
        self.kernel().map_or(GLUE_KERNEL, KernelSpec::kernel_id)
    }

    /// Runs this task against `machine`.
    pub fn execute(&self, machine: &mut Machine) -> Result<(), KernelError> {
        match &self.op {
            TaskOp::Call {
                kernel,
                reads,
                writes,
                ..
            } => machine.run_call(kernel, reads, writes),
            TaskOp::Glue { ops } => {
                for op in ops {
                    machine.run_glue(op);
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "snake_case")]
pub enum Section {
    Serial {
        tasks: Vec<TaskDescriptor>,
    },
    Parallel {
        tasks: Vec<TaskDescriptor>,
        counter_target: usize,
    },
}

impl Section {
    pub fn tasks(&self) -> &[TaskDescriptor] {
        match self {
            Section::Serial { tasks } | Section::Parallel { tasks, .. } => tasks,
        }
    }

    pub fn is_parallel(&self) -> bool {
        matches!(self, Section::Parallel { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelProgram {
    pub name: String,
    /// Hash of the flattened program this was generated from.
    pub source_hash: String,
    pub buffers: Vec<Buffer>,
    pub sections: Vec<Section>,
}

impl ParallelProgram {
    pub fn load(path: &Path) -> Result<Self, TirIoError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), TirIoError> {
        write_json(path, self)
    }

    pub fn task_count(&self) -> usize {
        self.sections.iter().map(|s| s.tasks().len()).sum()
    }

    pub fn parallel_widths(&self) -> Vec<usize> {
        self.sections
            .iter()
            .filter_map(|s| match s {
                Section::Parallel { counter_target, .. } => Some(*counter_target),
                Section::Serial { .. } => None,
            })
            .collect()
    }

    /// Serial execution of the sections in order. `order` picks the order
    /// in which the members of each parallel section run.
    pub fn execute<F>(&self, inputs: &Inputs, mut order: F) -> Result<Outputs, KernelError>
    where
        F: FnMut(usize, usize) -> Vec<usize>,
    {
        let mut machine = Machine::new(&self.buffers, inputs);
        for (k, section) in self.sections.iter().enumerate() {
            let tasks = section.tasks();
            let seq: Vec<usize> = if section.is_parallel() {
                order(k, tasks.len())
            } else {
                (0..tasks.len()).collect()
            };
            for i in seq {
                tasks[i].execute(&mut machine)?;
            }
        }
        Ok(machine.into_outputs())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("schedule is not reorder-safe ({} hazard(s), first between nodes {} and {})",
        .0.hazards.len(),
        .0.hazards.first().map_or(0, |h| h.first),
        .0.hazards.first().map_or(0, |h| h.second))]
    Unsafe(SafetyReport),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("program executes {found} task instance(s) but the Control DAG has {expected}")]
    Count { expected: usize, found: usize },
    #[error("node {node}: Control DAG says {expected}, program executes {found}")]
    Mismatch {
        node: usize,
        expected: String,
        found: String,
    },
    #[error("schedule places node {0} outside the Control DAG or more than once")]
    BadSchedule(usize),
}

/// Enumerates the concrete task instances of a program without computing.
#[derive(Default)]
struct Instances {
    items: Vec<TaskDescriptor>,
}

impl Visitor for Instances {
    fn task(&mut self, call: &ConcreteCall<'_>) -> Result<(), ExecError> {
        self.items.push(TaskDescriptor {
            node: self.items.len(),
            kind: call.kernel.task_kind(),
            site_id: Some(call.site.to_string()),
            op: TaskOp::Call {
                name: call.name.to_string(),
                kernel: call.kernel.clone(),
                reads: call.reads.clone(),
                writes: call.writes.clone(),
            },
        });
        Ok(())
    }

    fn glue(&mut self, _site: &str, _bb: u32, op: &GlueOp) -> Result<(), ExecError> {
        self.items.push(TaskDescriptor {
            node: self.items.len(),
            kind: TaskKind::Type1,
            site_id: None,
            op: TaskOp::Glue {
                ops: vec![op.clone()],
            },
        });
        Ok(())
    }
}

pub fn emit_parallel_program(
    fp: &FlattenedProgram,
    cdag: &ControlDag,
    sched: &ScheduleDag,
    safety: &SafetyReport,
) -> Result<ParallelProgram, EmitError> {
    if !safety.is_ok() {
        return Err(EmitError::Unsafe(safety.clone()));
    }
    let mut inst = Instances::default();
    walk(&fp.program, &mut inst)?;
    if inst.items.len() != cdag.len() {
        return Err(EmitError::Count {
            expected: cdag.len(),
            found: inst.items.len(),
        });
    }
    for (d, n) in inst.items.iter().zip(&cdag.nodes) {
        if d.kind != n.task_kind || d.kernel_id() != n.kernel_id {
            return Err(EmitError::Mismatch {
                node: n.index,
                expected: format!("{} {}", n.task_kind, n.kernel_id),
                found: format!("{} {}", d.kind, d.kernel_id()),
            });
        }
    }

    let mut slots: Vec<Option<TaskDescriptor>> = inst.items.into_iter().map(Some).collect();
    let mut sections: Vec<Section> = Vec::new();
    for region in &sched.regions {
        let mut tasks = Vec::with_capacity(region.tasks.len());
        for &t in &region.tasks {
            let d = slots
                .get_mut(t)
                .and_then(Option::take)
                .ok_or(EmitError::BadSchedule(t))?;
            tasks.push(d);
        }
        match (region.kind, sections.last_mut()) {
            // Adjacent serial regions carry no barrier between them.
            (TaskKind::Type1, Some(Section::Serial { tasks: prev })) => prev.extend(tasks),
            (TaskKind::Type1, _) => sections.push(Section::Serial { tasks }),
            (TaskKind::Type2, _) => sections.push(Section::Parallel {
                counter_target: tasks.len(),
                tasks,
            }),
        }
    }
    if let Some(missing) = slots.iter().position(Option::is_some) {
        return Err(EmitError::BadSchedule(missing));
    }
    Ok(ParallelProgram {
        name: fp.program.name.clone(),
        source_hash: fp.program.hash(),
        buffers: fp.program.buffers.clone(),
        sections,
    })
}
