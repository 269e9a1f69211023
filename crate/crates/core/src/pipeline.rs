//! The analysis half of the tool flow in one call: validate, profile,
//! flatten, trace, analyze, schedule and emit.

use crate::depanalysis::{analyze, Analysis, DagError};
use crate::preprocess::{flatten, profile, FlattenedProgram, PreprocessError, ProfileData};
use crate::schedgen::{
    emit_parallel_program, schedule_with_repair, verify_reorder_safety, EmitError, ParallelProgram,
    RepairError, ScheduleDag,
};
use crate::tir::exec::{ExecError, Inputs, Outputs};
use crate::tir::{validate_program, TirProgram, ValidationReport};
use crate::tracer::{interpret_and_trace, Trace};

#[derive(Clone, Debug)]
pub struct CompileOptions {
    /// Inputs for the profiling and tracing runs.
    pub inputs: Inputs,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            inputs: Inputs::seeded(0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub profile: ProfileData,
    pub flat: FlattenedProgram,
    /// Trace of the flattened program.
    pub trace: Trace,
    pub analysis: Analysis,
    pub schedule: ScheduleDag,
    /// Ordering edges added on top of the Data DAG to make the schedule safe.
    pub ordering_edges: Vec<(usize, usize)>,
    pub parallel: ParallelProgram,
    /// Outputs of the traced serial run.
    pub serial_outputs: Outputs,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid program:\n{0}")]
    Validation(ValidationReport),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Emit(#[from] EmitError),
}

pub fn compile(program: &TirProgram, opts: &CompileOptions) -> Result<Compiled, PipelineError> {
    let report = validate_program(program);
    if !report.is_ok() {
        return Err(PipelineError::Validation(report));
    }
    let prof = profile(program, &opts.inputs)?;
    let flat = flatten(program, &prof)?;
    let (serial_outputs, trace) = interpret_and_trace(&flat.program, &opts.inputs)?;
    let analysis = analyze(&trace)?;
    let repaired = schedule_with_repair(&analysis.control, &analysis.data, &analysis.tuples)?;
    let safety = verify_reorder_safety(&analysis.control, &analysis.tuples, &repaired.schedule);
    let parallel = emit_parallel_program(&flat, &analysis.control, &repaired.schedule, &safety)?;
    Ok(Compiled {
        profile: prof,
        flat,
        trace,
        analysis,
        schedule: repaired.schedule,
        ordering_edges: repaired.added,
        parallel,
        serial_outputs,
    })
}
