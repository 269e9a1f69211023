//! One function per tool stage. Each reads its inputs from disk and writes
//! its artifacts, so `pipeline` and the individual subcommands share code.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use taskweave::depanalysis::{analyze, Analysis, DagDocument};
use taskweave::gantt::{GanttLog, Stats};
use taskweave::platform::{Platform, Timing, PRESETS};
use taskweave::preprocess::{flatten, profile, FlattenedProgram, ProfileData};
use taskweave::report::{self, ReportBundle};
use taskweave::runtime::{run_workload, Clock, Policy, RunOptions};
use taskweave::schedgen::{
    emit_parallel_program, schedule_with_repair, verify_reorder_safety, ParallelProgram,
};
use taskweave::sim::{replay, simulate, SimConfig};
use taskweave::tir::bench::{build_benchmark, BenchParams};
use taskweave::tir::exec::{Inputs, Outputs};
use taskweave::tir::{validate_program, TirProgram};
use taskweave::tracer::{interpret_and_trace, load_trace, save_trace, Trace};
use taskweave::workload::{JobSubmission, Workload};

use crate::failure::{CliResult, Failure, Tag};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .io()
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .io()
}

/// A platform file, or the name of a built-in preset.
pub fn load_platform(spec: &str) -> CliResult<Platform> {
    let path = Path::new(spec);
    let platform = if path.exists() {
        Platform::load(path).io()?
    } else {
        let name = spec.strip_suffix(".plat.json").unwrap_or(spec);
        let name = Path::new(name)
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or(name);
        if !PRESETS.contains(&name) {
            return Err(Failure::io(anyhow!(
                "{spec}: no such platform file or preset (presets: {})",
                PRESETS.join(", ")
            )));
        }
        log::info!("{spec} not found; using built-in preset {name}");
        Platform::preset(name).io()?
    };
    platform
        .validate()
        .with_context(|| format!("platform {spec}"))
        .invalid()?;
    Ok(platform)
}

pub fn load_program(path: &Path) -> CliResult<TirProgram> {
    let program = TirProgram::load(path).io()?;
    let report = validate_program(&program);
    if !report.is_ok() {
        return Err(Failure::invalid(anyhow!(
            "{}: invalid program:\n{report}",
            path.display()
        )));
    }
    Ok(program)
}

/// File stem without any of the tool's double extensions.
pub fn stem(path: &Path) -> String {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("program");
    for ext in [
        ".flat.tir.json",
        ".tir.json",
        ".ppar.json",
        ".trace.jsonl",
        ".json",
    ] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_string();
        }
    }
    name.to_string()
}

pub fn bench_gen(name: &str, params: &BenchParams, out: &Path) -> CliResult<TirProgram> {
    let program = build_benchmark(name, params).io()?;
    program.save(out).io()?;
    log::info!("wrote {}", out.display());
    Ok(program)
}

pub fn trace(program_path: &Path, seed: u64, out: &Path) -> CliResult<Trace> {
    let program = load_program(program_path)?;
    let (_, trace) = interpret_and_trace(&program, &Inputs::seeded(seed))
        .with_context(|| format!("tracing {}", program_path.display()))
        .invalid()?;
    save_trace(&trace, out)
        .with_context(|| format!("writing {}", out.display()))
        .io()?;
    log::info!(
        "{}: {} events, {} tasks",
        out.display(),
        trace.events.len(),
        trace.task_count()
    );
    Ok(trace)
}

pub struct Preprocessed {
    pub profile_path: PathBuf,
    pub flat_path: PathBuf,
}

pub fn preprocess(program_path: &Path, seed: u64, out_dir: &Path) -> CliResult<Preprocessed> {
    let program = load_program(program_path)?;
    let prof = profile(&program, &Inputs::seeded(seed)).invalid()?;
    let flat = flatten(&program, &prof).invalid()?;
    ensure_dir(out_dir)?;
    let name = stem(program_path);
    let profile_path = out_dir.join(format!("{name}.profile.json"));
    let flat_path = out_dir.join(format!("{name}.flat.tir.json"));
    prof.save(&profile_path).io()?;
    flat.save(&flat_path).io()?;
    Ok(Preprocessed {
        profile_path,
        flat_path,
    })
}

/// Profile file produced earlier, for re-running only the flattening.
pub fn flatten_with(
    program_path: &Path,
    profile_path: &Path,
    out: &Path,
) -> CliResult<FlattenedProgram> {
    let program = load_program(program_path)?;
    let prof = ProfileData::load(profile_path).io()?;
    let flat = flatten(&program, &prof).invalid()?;
    flat.save(out).io()?;
    Ok(flat)
}

fn load_analysis(trace_path: &Path) -> CliResult<(Trace, Analysis)> {
    let trace = load_trace(trace_path)
        .with_context(|| format!("reading {}", trace_path.display()))
        .io()?;
    let analysis = analyze(&trace)
        .with_context(|| trace_path.display().to_string())
        .invalid()?;
    Ok((trace, analysis))
}

pub fn analyze_trace(trace_path: &Path, out_dir: &Path) -> CliResult<String> {
    let (_, a) = load_analysis(trace_path)?;
    ensure_dir(out_dir)?;
    let control = DagDocument::control(&a.control);
    let data = DagDocument::data(&a.control, &a.data);
    control.save(&out_dir.join("control_dag.json")).io()?;
    data.save(&out_dir.join("data_dag.json")).io()?;
    write_text(&out_dir.join("control_dag.dot"), &control.to_dot("control"))?;
    write_text(&out_dir.join("data_dag.dot"), &data.to_dot("data"))?;
    let mut summary = format!(
        "control dag: {} nodes, {} edges\ndata dag: {} edges\n",
        a.control.len(),
        a.control.edges().count(),
        a.data.edges.len()
    );
    for (w, r) in &a.data.edges {
        summary.push_str(&format!("  {w} -> {r}\n"));
    }
    Ok(summary)
}

pub fn schedule(flat_path: &Path, trace_path: &Path, out: &Path) -> CliResult<ParallelProgram> {
    let flat = FlattenedProgram::load(flat_path).io()?;
    let (trace, a) = load_analysis(trace_path)?;
    if trace.header.program_hash != flat.program.hash() {
        return Err(Failure::invalid(anyhow!(
            "{} was not produced from {}",
            trace_path.display(),
            flat_path.display()
        )));
    }
    let repaired = schedule_with_repair(&a.control, &a.data, &a.tuples).invalid()?;
    if !repaired.added.is_empty() {
        log::warn!(
            "added {} ordering edge(s) to make the schedule safe",
            repaired.added.len()
        );
    }
    let safety = verify_reorder_safety(&a.control, &a.tuples, &repaired.schedule);
    let parallel =
        emit_parallel_program(&flat, &a.control, &repaired.schedule, &safety).invalid()?;
    parallel.save(out).io()?;
    Ok(parallel)
}

/// Jobs from a workload file, or `count` copies of one program.
pub fn jobs(
    workload: Option<&Path>,
    program: Option<&Path>,
    count: usize,
    seed: u64,
) -> CliResult<Vec<JobSubmission>> {
    match (workload, program) {
        (Some(w), _) => {
            let wl = Workload::load(w).io()?;
            wl.submissions(w.parent().unwrap_or(Path::new("."))).io()
        }
        (None, Some(p)) => {
            let program = Arc::new(ParallelProgram::load(p).io()?);
            Ok(JobSubmission::batch(&program, count.max(1), 0, 0, seed))
        }
        (None, None) => Err(Failure::io(anyhow!(
            "either --workload or --program is required"
        ))),
    }
}

fn reference(job: &JobSubmission) -> CliResult<Outputs> {
    job.program
        .execute(&job.inputs, |_, n| (0..n).collect())
        .with_context(|| format!("serial reference for instance {}", job.instance_id))
        .invalid()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Engine {
    Run,
    Sim,
}

#[derive(Clone, Copy, Debug)]
pub struct ExecConfig {
    pub engine: Engine,
    pub policy: Policy,
    /// Runtime only: pace tasks by modeled durations instead of wall time.
    pub model_time: bool,
    pub timing: Timing,
    pub jitter_ns: u64,
    pub seed: u64,
}

pub struct Executed {
    pub gantt: GanttLog,
    pub stats: Stats,
}

/// Runs or simulates `jobs`, checks every instance against its serial
/// reference, and writes `gantt.csv` and `stats.json` into `out_dir`.
pub fn execute(
    jobs: &[JobSubmission],
    platform: &Platform,
    cfg: ExecConfig,
    out_dir: Option<&Path>,
) -> CliResult<Executed> {
    let (gantt, stats, outputs) = match cfg.engine {
        Engine::Sim => {
            let r =
                simulate(jobs, platform, cfg.policy, SimConfig { timing: cfg.timing }).invalid()?;
            let outputs = jobs
                .iter()
                .map(|j| replay(&j.program, &r.gantt, j.instance_id, &j.inputs).invalid())
                .collect::<CliResult<Vec<_>>>()?;
            (r.gantt, r.stats, outputs)
        }
        Engine::Run => {
            let clock = if cfg.model_time {
                Clock::ModelTime
            } else {
                Clock::Wall {
                    jitter_max_ns: cfg.jitter_ns,
                    seed: cfg.seed,
                }
            };
            let r = run_workload(
                jobs,
                platform,
                cfg.policy,
                RunOptions {
                    clock,
                    timing: cfg.timing,
                },
            )
            .invalid()?;
            let outputs = jobs
                .iter()
                .map(|j| r.outputs[&j.instance_id].clone())
                .collect();
            (r.gantt, r.stats, outputs)
        }
    };
    for (job, out) in jobs.iter().zip(&outputs) {
        if *out != reference(job)? {
            return Err(Failure::invalid(anyhow!(
                "instance {}: parallel outputs differ from the serial reference",
                job.instance_id
            )));
        }
    }
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        gantt
            .save_csv(&dir.join("gantt.csv"))
            .with_context(|| format!("writing {}", dir.join("gantt.csv").display()))
            .io()?;
        stats.save(&dir.join("stats.json")).io()?;
    }
    Ok(Executed { gantt, stats })
}

pub fn write_report(bundle: &ReportBundle, out_dir: &Path) -> CliResult<()> {
    ensure_dir(out_dir)?;
    write_text(&out_dir.join("gantt.svg"), &bundle.svg)?;
    write_text(&out_dir.join("gantt.txt"), &bundle.ascii)?;
    write_text(&out_dir.join("report.txt"), &bundle.text())?;
    let json = serde_json::to_string_pretty(bundle).io()?;
    write_text(&out_dir.join("report.json"), &(json + "\n"))
}

/// Whole-application and tasks-only reductions of one program under `policy`.
pub fn reductions(
    programs: &[Arc<ParallelProgram>],
    platform: &Platform,
    policy: Policy,
    overheads: bool,
) -> CliResult<Vec<report::Reduction>> {
    programs
        .iter()
        .map(|p| report::reduction(p, platform, policy, overheads).invalid())
        .collect()
}
