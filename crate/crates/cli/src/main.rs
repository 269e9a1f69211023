mod failure;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use taskweave::gantt::{GanttLog, Stats};
use taskweave::platform::{Platform, Timing};
use taskweave::report::{self, ReportBundle};
use taskweave::runtime::Policy;
use taskweave::tir::bench::{BenchParams, BENCHMARK_NAMES};
use taskweave::workload::JobSubmission;

use failure::{CliResult, Failure, Tag};
use stages::{Engine, ExecConfig};

#[derive(Parser)]
#[command(
    name = "taskweave",
    version,
    about = "Extract task parallelism from serial task programs and run it on a modeled heterogeneous platform"
)]
struct Cli {
    /// Seed for generated inputs and runtime jitter.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark program generators.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Platform descriptions.
    #[command(subcommand)]
    Platform(PlatformCmd),
    /// Interpret a program and record its memory trace.
    Trace {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Profile a program and flatten it.
    Preprocess {
        #[arg(long)]
        program: PathBuf,
        /// Reuse an existing profile instead of profiling again.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Build the control and data DAGs from a trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Schedule a flattened program into fork-join sections.
    Schedule {
        #[arg(long)]
        flat: PathBuf,
        /// Trace of the flattened program.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute parallel programs on the concurrent runtime.
    Run(ExecArgs),
    /// Execute parallel programs in the discrete-event simulator.
    Simulate(ExecArgs),
    /// Render Gantt charts and comparison tables.
    Report(ReportArgs),
    /// Every stage from benchmark generation to report.
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Write a benchmark program.
    Gen {
        #[arg(long)]
        bench: String,
        /// Pulse count for pulse_doppler.
        #[arg(long)]
        pulses: Option<u32>,
        /// Trip count for running_example.
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List benchmark names.
    List,
}

#[derive(Subcommand)]
enum PlatformCmd {
    /// Write a preset platform file.
    Gen {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct JobArgs {
    /// Workload file listing programs and arrivals.
    #[arg(long, conflicts_with = "program")]
    workload: Option<PathBuf>,
    /// A single parallel program.
    #[arg(long)]
    program: Option<PathBuf>,
    /// Instances of --program, all arriving at time zero.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Platform file or preset name.
    #[arg(long)]
    platform: String,
}

#[derive(Args, Clone)]
struct TimingArgs {
    /// Charge accelerator transfer and dispatch overheads.
    #[arg(long)]
    overheads: bool,
    /// Charge host time for Type-1 work.
    #[arg(long)]
    host_costs: bool,
}

#[derive(Args, Clone)]
struct ExecArgs {
    #[command(flatten)]
    jobs: JobArgs,
    #[arg(long, default_value = "eft")]
    sched: Policy,
    /// Pace tasks by modeled durations (runtime only).
    #[arg(long)]
    model_time: bool,
    /// Upper bound of the random delay before each task (wall-clock runtime only).
    #[arg(long, default_value_t = 0)]
    jitter_ns: u64,
    #[command(flatten)]
    timing: TimingArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Existing Gantt log to render.
    #[arg(long)]
    gantt: Option<PathBuf>,
    /// Statistics written next to the Gantt log.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Platform file or preset name.
    #[arg(long)]
    platform: String,
    /// Re-execute the jobs under each listed policy and tabulate makespans.
    #[arg(long, value_delimiter = ',')]
    compare: Vec<Policy>,
    /// Add whole-application and tasks-only reductions against serial execution.
    #[arg(long)]
    reduction: bool,
    #[arg(long, conflicts_with = "program")]
    workload: Option<PathBuf>,
    #[arg(long)]
    program: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, value_enum, default_value = "sim")]
    engine: Engine,
    #[arg(long)]
    model_time: bool,
    #[command(flatten)]
    timing: TimingArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    bench: String,
    #[arg(long)]
    pulses: Option<u32>,
    #[arg(long)]
    iters: Option<u64>,
    /// Platform file or preset name.
    #[arg(long)]
    platform: String,
    #[arg(long, default_value = "eft")]
    sched: Policy,
    #[arg(long, value_enum, default_value = "sim")]
    engine: Engine,
    #[arg(long)]
    model_time: bool,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    jitter_ns: u64,
    #[command(flatten)]
    timing: TimingArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn timing(t: &TimingArgs, engine: Engine) -> Timing {
    // The runtime charges everything unless told otherwise; the simulator
    // charges kernel time only.
    match engine {
        Engine::Run if !t.overheads && !t.host_costs => Timing::FULL,
        _ => Timing {
            host_costs: t.host_costs,
            overheads: t.overheads,
        },
    }
}

fn exec_cmd(args: &ExecArgs, engine: Engine, seed: u64) -> CliResult<()> {
    let platform = stages::load_platform(&args.jobs.platform)?;
    let jobs = stages::jobs(
        args.jobs.workload.as_deref(),
        args.jobs.program.as_deref(),
        args.jobs.count,
        seed,
    )?;
    let cfg = ExecConfig {
        engine,
        policy: args.sched,
        model_time: args.model_time,
        timing: timing(&args.timing, engine),
        jitter_ns: args.jitter_ns,
        seed,
    };
    let done = stages::execute(&jobs, &platform, cfg, Some(&args.out))?;
    println!(
        "{} instance(s), {} ({}): makespan {} ns; outputs match serial reference",
        jobs.len(),
        args.sched,
        done.stats.mode,
        done.stats.makespan_ns
    );
    Ok(())
}

fn report_cmd(args: &ReportArgs, seed: u64) -> CliResult<()> {
    let platform = stages::load_platform(&args.platform)?;
    let needs_jobs = !args.compare.is_empty() || args.reduction;
    let jobs = if needs_jobs {
        stages::jobs(
            args.workload.as_deref(),
            args.program.as_deref(),
            args.count,
            seed,
        )?
    } else {
        Vec::new()
    };
    let mut gantt = match &args.gantt {
        Some(p) => {
            Some(GanttLog::load_csv(p).map_err(|e| Failure::io(anyhow!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    if !args.compare.is_empty() {
        let mut runs: Vec<(Policy, Stats)> = Vec::new();
        for &policy in &args.compare {
            let cfg = ExecConfig {
                engine: args.engine,
                policy,
                model_time: args.model_time,
                timing: timing(&args.timing, args.engine),
                jitter_ns: 0,
                seed,
            };
            let done = stages::execute(&jobs, &platform, cfg, None)?;
            if args.gantt.is_none() {
                gantt = Some(done.gantt);
            }
            runs.push((policy, done.stats));
        }
        let refs: Vec<(Policy, &Stats)> = runs.iter().map(|(p, s)| (*p, s)).collect();
        rows = report::makespan_rows(&refs);
    } else if let Some(path) = &args.stats {
        let stats = Stats::load(path).io()?;
        rows = report::makespan_rows(&[(stats.policy, &stats)]);
    }
    let reductions = if args.reduction {
        let mut programs: Vec<Arc<_>> = Vec::new();
        for j in &jobs {
            if !programs.iter().any(|p| Arc::ptr_eq(p, &j.program)) {
                programs.push(Arc::clone(&j.program));
            }
        }
        let policy = args.compare.first().copied().unwrap_or(Policy::Eft);
        stages::reductions(&programs, &platform, policy, args.timing.overheads)?
    } else {
        Vec::new()
    };
    let gantt = gantt.unwrap_or_default();
    let bundle = ReportBundle {
        svg: report::gantt_svg(&gantt, &platform),
        ascii: report::gantt_ascii(&gantt, &platform, 72),
        makespans: rows,
        reductions,
    };
    stages::write_report(&bundle, &args.out)?;
    print!("{}", bundle.text());
    Ok(())
}

fn pipeline_cmd(args: &PipelineArgs, seed: u64) -> CliResult<()> {
    let out = &args.out;
    stages::ensure_dir(out)?;
    let platform = stages::load_platform(&args.platform)?;
    let params = BenchParams {
        n_pulses: args.pulses,
        n_iter: args.iters,
    };
    let program = taskweave::tir::bench::build_benchmark(&args.bench, &params).io()?;
    let name = program.name.clone();
    let tir = out.join(format!("{name}.tir.json"));
    stages::bench_gen(&args.bench, &params, &tir)?;
    stages::trace(&tir, seed, &out.join(format!("{name}.trace.jsonl")))?;
    let pre = stages::preprocess(&tir, seed, out)?;
    let flat_trace = out.join(format!("{name}.flat.trace.jsonl"));
    stages::trace(&pre.flat_path, seed, &flat_trace)?;
    let dag_summary = stages::analyze_trace(&flat_trace, out)?;
    let ppar = out.join(format!("{name}.ppar.json"));
    let parallel = Arc::new(stages::schedule(&pre.flat_path, &flat_trace, &ppar)?);
    let jobs = JobSubmission::batch(&parallel, args.count.max(1), 0, 0, seed);
    let cfg = ExecConfig {
        engine: args.engine,
        policy: args.sched,
        model_time: args.model_time,
        timing: timing(&args.timing, args.engine),
        jitter_ns: args.jitter_ns,
        seed,
    };
    let done = stages::execute(&jobs, &platform, cfg, Some(out))?;
    let reductions = stages::reductions(
        &[Arc::clone(&parallel)],
        &platform,
        args.sched,
        args.timing.overheads,
    )?;
    let bundle = ReportBundle {
        svg: report::gantt_svg(&done.gantt, &platform),
        ascii: report::gantt_ascii(&done.gantt, &platform, 72),
        makespans: report::makespan_rows(&[(args.sched, &done.stats)]),
        reductions,
    };
    stages::write_report(&bundle, out)?;
    let widths = parallel.parallel_widths();
    println!("{name} on {platform}");
    print!("{dag_summary}");
    println!("type-2 regions: {} with widths {widths:?}", widths.len());
    print!("{}", bundle.text());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Bench(BenchCmd::List) => {
            for name in BENCHMARK_NAMES {
                println!("{name}");
            }
        }
        Command::Bench(BenchCmd::Gen {
            bench,
            pulses,
            iters,
            out,
        }) => {
            let params = BenchParams {
                n_pulses: pulses,
                n_iter: iters,
            };
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{bench}.tir.json")));
            let p = stages::bench_gen(&bench, &params, &out)?;
            println!(
                "{}: {} ({} buffers)",
                out.display(),
                p.name,
                p.buffers.len()
            );
        }
        Command::Platform(PlatformCmd::Gen { preset, out }) => {
            let p = Platform::preset(&preset).io()?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{preset}.plat.json")));
            p.save(&out).io()?;
            println!("{}: {p}", out.display());
        }
        Command::Trace { program, out } => {
            let out = out.unwrap_or_else(|| {
                PathBuf::from(format!("{}.trace.jsonl", stages::stem(&program)))
            });
            let t = stages::trace(&program, seed, &out)?;
            println!(
                "{}: {} events, {} tasks",
                out.display(),
                t.events.len(),
                t.task_count()
            );
        }
        Command::Preprocess {
            program,
            profile,
            out,
        } => match profile {
            Some(prof) => {
                stages::ensure_dir(&out)?;
                let flat_path = out.join(format!("{}.flat.tir.json", stages::stem(&program)));
                stages::flatten_with(&program, &prof, &flat_path)?;
                println!("{}", flat_path.display());
            }
            None => {
                let pre = stages::preprocess(&program, seed, &out)?;
                println!(
                    "{}\n{}",
                    pre.profile_path.display(),
                    pre.flat_path.display()
                );
            }
        },
        Command::Analyze { trace, out } => print!("{}", stages::analyze_trace(&trace, &out)?),
        Command::Schedule { flat, trace, out } => {
            let out =
                out.unwrap_or_else(|| PathBuf::from(format!("{}.ppar.json", stages::stem(&flat))));
            let p = stages::schedule(&flat, &trace, &out)?;
            println!(
                "{}: {} sections, type-2 widths {:?}",
                out.display(),
                p.sections.len(),
                p.parallel_widths()
            );
        }
        Command::Run(args) => exec_cmd(&args, Engine::Run, seed)?,
        Command::Simulate(args) => exec_cmd(&args, Engine::Sim, seed)?,
        Command::Report(args) => report_cmd(&args, seed)?,
        Command::Pipeline(args) => pipeline_cmd(&args, seed)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TASKWEAVE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
