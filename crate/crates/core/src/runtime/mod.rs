//! Concurrent execution of parallel programs on an emulated heterogeneous
//! platform.
//!
//! One manager owns the ready queue and scheduler state, one host thread
//! per instance runs the serial sections and waits on counter barriers, and
//! one worker thread per in-flight Type-2 task runs the kernel.

pub mod barrier;
pub mod policy;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, Scope, ScopedJoinHandle};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use barrier::{BarrierCancelled, BarrierOverflow, CounterBarrier};
pub use policy::{scheduler_decide, Policy, SchedError, Scheduler};

use crate::gantt::{GanttEntry, GanttLog, PhaseRecord, RunMode, Stats};
use crate::platform::{Platform, Timing};
use crate::schedgen::{Section, TaskDescriptor, TaskOp};
use crate::sim::{Engine, SimError, Step};
use crate::tir::exec::{Machine, Outputs};
use crate::tir::kernels::{kernel_exec, KernelError};
pub use crate::workload::JobSubmission;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    /// Tasks occupy exactly their modeled durations on a virtual timeline.
    ModelTime,
    /// Measured timestamps; each task is delayed by a random amount up to
    /// `jitter_max_ns` drawn from `seed`.
    Wall { jitter_max_ns: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub clock: Clock,
    pub timing: Timing,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            clock: Clock::ModelTime,
            timing: Timing::FULL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outputs: BTreeMap<usize, Outputs>,
    pub gantt: GanttLog,
    pub stats: Stats,
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("instance {instance_id} node {node}: no PE registers {kernel}")]
    Unregistered {
        instance_id: usize,
        node: usize,
        kernel: String,
    },
    #[error("PE {pe} was assigned {kernel}, which it does not support")]
    Unsupported { pe: usize, kernel: String },
    #[error("instance {instance_id} node {node}: {source}")]
    Kernel {
        instance_id: usize,
        node: usize,
        source: KernelError,
    },
    #[error(transparent)]
    Engine(#[from] SimError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Barrier(#[from] BarrierOverflow),
    #[error("{0} thread exited unexpectedly")]
    Lost(&'static str),
}

enum HostMsg {
    Fork {
        job: usize,
        section: usize,
        barrier: Arc<CounterBarrier>,
    },
    Done {
        job: usize,
    },
    Failed {
        job: usize,
        node: usize,
        error: KernelError,
    },
}

/// Every barrier a host has created, so a failing run can release them.
#[derive(Default)]
struct Barriers {
    cancelled: bool,
    live: Vec<Arc<CounterBarrier>>,
}

#[derive(Default)]
struct Registry(Mutex<Barriers>);

impl Registry {
    fn register(&self, b: &Arc<CounterBarrier>) {
        let mut g = self.0.lock().expect("registry lock");
        if g.cancelled {
            b.cancel();
        } else {
            g.live.push(Arc::clone(b));
        }
    }

    fn cancel_all(&self) {
        let mut g = self.0.lock().expect("registry lock");
        g.cancelled = true;
        for b in g.live.drain(..) {
            b.cancel();
        }
    }
}

/// Serial sections run in place; each parallel section is handed to the
/// manager whole before the host waits on its barrier.
fn host_thread(
    job: usize,
    sections: &[Section],
    machine: &Mutex<Machine>,
    registry: &Registry,
    send: impl Fn(HostMsg),
) {
    for (k, section) in sections.iter().enumerate() {
        match section {
            Section::Serial { tasks } => {
                for t in tasks {
                    let r = t.execute(&mut machine.lock().expect("machine lock"));
                    if let Err(error) = r {
                        send(HostMsg::Failed {
                            job,
                            node: t.node,
                            error,
                        });
                        return;
                    }
                }
            }
            Section::Parallel { counter_target, .. } => {
                let barrier = Arc::new(CounterBarrier::new(*counter_target));
                registry.register(&barrier);
                send(HostMsg::Fork {
                    job,
                    section: k,
                    barrier: Arc::clone(&barrier),
                });
                if barrier.wait().is_err() {
                    return;
                }
            }
        }
    }
    send(HostMsg::Done { job });
}

/// Runs one task, holding the instance lock only to move data in and out.
fn run_task(task: &TaskDescriptor, machine: &Mutex<Machine>) -> Result<(), KernelError> {
    match &task.op {
        TaskOp::Call {
            kernel,
            reads,
            writes,
            ..
        } if !kernel.is_io() => {
            let inputs = machine.lock().expect("machine lock").gather(reads);
            let views: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
            let lens: Vec<u64> = writes.iter().map(|s| s.len).collect();
            let outputs = kernel_exec(kernel, &views, &lens)?;
            machine
                .lock()
                .expect("machine lock")
                .scatter(writes, &outputs);
            Ok(())
        }
        _ => task.execute(&mut machine.lock().expect("machine lock")),
    }
}

/// Releases blocked hosts if the manager unwinds, so the scope can join.
struct CancelOnPanic<'a>(&'a Registry);

impl Drop for CancelOnPanic<'_> {
    fn drop(&mut self) {
        if thread::panicking() {
            self.0.cancel_all();
        }
    }
}

fn check_registered(jobs: &[JobSubmission], platform: &Platform) -> Result<(), RuntimeError> {
    for j in jobs {
        for t in j
            .program
            .sections
            .iter()
            .filter(|s| s.is_parallel())
            .flat_map(Section::tasks)
        {
            let supported = t
                .kernel()
                .is_some_and(|k| platform.pes.iter().any(|pe| pe.supports(k)));
            if !supported {
                return Err(RuntimeError::Unregistered {
                    instance_id: j.instance_id,
                    node: t.node,
                    kernel: t
                        .kernel()
                        .map_or_else(|| t.kernel_id().to_string(), |k| k.cost_key()),
                });
            }
        }
    }
    Ok(())
}

fn check_admission(
    platform: &Platform,
    pe: usize,
    task: &TaskDescriptor,
) -> Result<(), RuntimeError> {
    match task.kernel() {
        Some(k) if platform.pes[pe].supports(k) => Ok(()),
        _ => Err(RuntimeError::Unsupported {
            pe,
            kernel: task.kernel_id().to_string(),
        }),
    }
}

/// Executes every submission to completion and returns each instance's
/// outputs with the Gantt log and statistics.
pub fn run_workload(
    jobs: &[JobSubmission],
    platform: &Platform,
    policy: Policy,
    options: RunOptions,
) -> Result<RunResult, RuntimeError> {
    check_registered(jobs, platform)?;
    let machines: Vec<Mutex<Machine>> = jobs
        .iter()
        .map(|j| Mutex::new(Machine::new(&j.program.buffers, &j.inputs)))
        .collect();
    let registry = Registry::default();
    let (gantt, completion, phases, mode) = thread::scope(|s| {
        let _guard = CancelOnPanic(&registry);
        let result = match options.clock {
            Clock::ModelTime => model_time(
                s,
                jobs,
                platform,
                policy,
                options.timing,
                &machines,
                &registry,
            ),
            Clock::Wall {
                jitter_max_ns,
                seed,
            } => wall(
                s,
                jobs,
                platform,
                policy,
                options.timing,
                &machines,
                &registry,
                jitter_max_ns,
                seed,
            ),
        };
        if result.is_err() {
            registry.cancel_all();
        }
        result
    })?;
    let outputs = jobs
        .iter()
        .zip(machines)
        .map(|(j, m)| {
            (
                j.instance_id,
                m.into_inner().expect("machine lock").into_outputs(),
            )
        })
        .collect();
    let stats = Stats::compute(mode, policy, platform, &gantt, completion, phases);
    log::info!(
        "ran {} instance(s) under {policy} ({mode}): makespan {} ns",
        jobs.len(),
        stats.makespan_ns
    );
    Ok(RunResult {
        outputs,
        gantt,
        stats,
    })
}

type Timeline = (GanttLog, BTreeMap<usize, u64>, Vec<PhaseRecord>, RunMode);

/// Drives the shared virtual-time engine; hosts and workers do the real
/// work in between engine steps.
fn model_time<'scope, 'env>(
    s: &'scope Scope<'scope, 'env>,
    jobs: &'env [JobSubmission],
    platform: &'env Platform,
    policy: Policy,
    timing: Timing,
    machines: &'env [Mutex<Machine>],
    registry: &'env Registry,
) -> Result<Timeline, RuntimeError> {
    let mut engine = Engine::new(jobs, platform, policy, timing);
    let mut inboxes: Vec<Option<mpsc::Receiver<HostMsg>>> = (0..jobs.len()).map(|_| None).collect();
    let mut barriers: Vec<Option<Arc<CounterBarrier>>> = vec![None; jobs.len()];
    let mut workers: HashMap<
        (usize, usize, usize),
        ScopedJoinHandle<'scope, Result<(), KernelError>>,
    > = HashMap::new();
    while let Some(step) = engine.step()? {
        match step {
            Step::HostResume { job, time_ns } => {
                let rx = inboxes[job].get_or_insert_with(|| {
                    let (tx, rx) = mpsc::channel();
                    let sections = &jobs[job].program.sections;
                    let machine = &machines[job];
                    s.spawn(move || {
                        host_thread(job, sections, machine, registry, |m| drop(tx.send(m)))
                    });
                    rx
                });
                match rx.recv().map_err(|_| RuntimeError::Lost("host"))? {
                    HostMsg::Fork {
                        section, barrier, ..
                    } => {
                        barriers[job] = Some(barrier);
                        engine.host_reached(job, time_ns, Some(section))?;
                    }
                    HostMsg::Done { .. } => engine.host_reached(job, time_ns, None)?,
                    HostMsg::Failed { node, error, .. } => {
                        return Err(RuntimeError::Kernel {
                            instance_id: jobs[job].instance_id,
                            node,
                            source: error,
                        })
                    }
                }
            }
            Step::TaskStart {
                job,
                section,
                task,
                pe,
                ..
            } => {
                let desc = &jobs[job].program.sections[section].tasks()[task];
                check_admission(platform, pe, desc)?;
                let barrier = barriers[job].clone().expect("open section");
                let machine = &machines[job];
                let handle = s.spawn(move || {
                    let r = run_task(desc, machine);
                    barrier.increment().expect("barrier within target");
                    r
                });
                workers.insert((job, section, task), handle);
            }
            Step::TaskFinish {
                job, section, task, ..
            } => {
                let handle = workers
                    .remove(&(job, section, task))
                    .expect("started worker");
                handle
                    .join()
                    .map_err(|_| RuntimeError::Lost("worker"))?
                    .map_err(|source| RuntimeError::Kernel {
                        instance_id: jobs[job].instance_id,
                        node: jobs[job].program.sections[section].tasks()[task].node,
                        source,
                    })?;
            }
        }
    }
    let (gantt, completion, phases) = engine.finish()?;
    Ok((gantt, completion, phases, RunMode::ModelTime))
}

enum WallMsg {
    Arrive(usize),
    Host(HostMsg),
    Completed {
        job: usize,
        section: usize,
        task: usize,
        pe: usize,
        start_ns: u64,
        end_ns: u64,
        result: Result<(), KernelError>,
    },
}

struct Queued {
    job: usize,
    section: usize,
    task: usize,
    jitter: Duration,
    barrier: Arc<CounterBarrier>,
}

struct OpenPhase {
    record: usize,
    outstanding: usize,
    load: BTreeMap<usize, usize>,
}

/// Measured execution: arrivals are injected at their offsets, tasks are
/// mapped on enqueue and each PE drains its own FIFO one task at a time.
#[allow(clippy::too_many_arguments)]
fn wall<'scope, 'env>(
    s: &'scope Scope<'scope, 'env>,
    jobs: &'env [JobSubmission],
    platform: &'env Platform,
    policy: Policy,
    timing: Timing,
    machines: &'env [Mutex<Machine>],
    registry: &'env Registry,
    jitter_max_ns: u64,
    seed: u64,
) -> Result<Timeline, RuntimeError> {
    let t0 = Instant::now();
    let elapsed = move || t0.elapsed().as_nanos() as u64;
    let (tx, rx) = mpsc::channel::<WallMsg>();
    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    {
        let tx = tx.clone();
        let mut order: Vec<usize> = (0..jobs.len()).collect();
        order.sort_by_key(|&j| jobs[j].arrival_ns);
        s.spawn(move || {
            for job in order {
                let due = t0 + Duration::from_nanos(jobs[job].arrival_ns);
                let wait = due.saturating_duration_since(Instant::now());
                if matches!(
                    stop_rx.recv_timeout(wait),
                    Err(RecvTimeoutError::Disconnected) | Ok(())
                ) {
                    return;
                }
                if tx.send(WallMsg::Arrive(job)).is_err() {
                    return;
                }
            }
        });
    }
    let _stop = stop_tx;

    let mut scheduler = Scheduler::new(policy);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pe = platform.pes.len();
    let mut pe_avail = vec![0u64; n_pe];
    let mut pe_queue: Vec<VecDeque<Queued>> = (0..n_pe).map(|_| VecDeque::new()).collect();
    let mut pe_busy = vec![false; n_pe];
    let mut open: HashMap<(usize, usize), OpenPhase> = HashMap::new();
    let mut phases: Vec<PhaseRecord> = Vec::new();
    let mut entries = Vec::new();
    let mut completion = BTreeMap::new();
    let mut in_flight = 0usize;

    let start_on = |pe: usize, q: Queued| {
        let tx = tx.clone();
        let desc = &jobs[q.job].program.sections[q.section].tasks()[q.task];
        let machine = &machines[q.job];
        s.spawn(move || {
            thread::sleep(q.jitter);
            let start_ns = elapsed();
            let result = run_task(desc, machine);
            let end_ns = elapsed().max(start_ns + 1);
            // Report before releasing the host so the manager sees this
            // completion ahead of the host's next fork.
            let _ = tx.send(WallMsg::Completed {
                job: q.job,
                section: q.section,
                task: q.task,
                pe,
                start_ns,
                end_ns,
                result,
            });
            q.barrier.increment().expect("barrier within target");
        });
    };

    while completion.len() < jobs.len() || in_flight > 0 {
        let msg = rx.recv().map_err(|_| RuntimeError::Lost("manager"))?;
        match msg {
            WallMsg::Arrive(job) => {
                let tx = tx.clone();
                let sections = &jobs[job].program.sections;
                let machine = &machines[job];
                s.spawn(move || {
                    host_thread(job, sections, machine, registry, |m| {
                        drop(tx.send(WallMsg::Host(m)))
                    })
                });
            }
            WallMsg::Host(HostMsg::Fork {
                job,
                section,
                barrier,
            }) => {
                let now = elapsed();
                let tasks = jobs[job].program.sections[section].tasks();
                phases.push(PhaseRecord {
                    instance_id: jobs[job].instance_id,
                    section,
                    tasks: tasks.len(),
                    start_ns: now,
                    end_ns: now,
                    rounds: 0,
                });
                open.insert(
                    (job, section),
                    OpenPhase {
                        record: phases.len() - 1,
                        outstanding: tasks.len(),
                        load: BTreeMap::new(),
                    },
                );
                for (task, desc) in tasks.iter().enumerate() {
                    let kernel = desc.kernel().ok_or_else(|| RuntimeError::Unsupported {
                        pe: 0,
                        kernel: desc.kernel_id().to_string(),
                    })?;
                    let pe = scheduler.decide(kernel, now, &pe_avail, platform, timing)?;
                    check_admission(platform, pe, desc)?;
                    let dur = platform.duration(pe, kernel, timing).unwrap_or(0);
                    pe_avail[pe] = pe_avail[pe].max(now) + dur;
                    if let Some(phase) = open.get_mut(&(job, section)) {
                        *phase.load.entry(pe).or_default() += 1;
                    }
                    let jitter = Duration::from_nanos(if jitter_max_ns == 0 {
                        0
                    } else {
                        rng.gen_range(0..=jitter_max_ns)
                    });
                    in_flight += 1;
                    let q = Queued {
                        job,
                        section,
                        task,
                        jitter,
                        barrier: Arc::clone(&barrier),
                    };
                    if pe_busy[pe] {
                        pe_queue[pe].push_back(q);
                    } else {
                        pe_busy[pe] = true;
                        start_on(pe, q);
                    }
                }
            }
            WallMsg::Host(HostMsg::Done { job }) => {
                completion.insert(jobs[job].instance_id, elapsed());
            }
            WallMsg::Host(HostMsg::Failed { job, node, error }) => {
                return Err(RuntimeError::Kernel {
                    instance_id: jobs[job].instance_id,
                    node,
                    source: error,
                });
            }
            WallMsg::Completed {
                job,
                section,
                task,
                pe,
                start_ns,
                end_ns,
                result,
            } => {
                in_flight -= 1;
                let desc = &jobs[job].program.sections[section].tasks()[task];
                result.map_err(|source| RuntimeError::Kernel {
                    instance_id: jobs[job].instance_id,
                    node: desc.node,
                    source,
                })?;
                entries.push(GanttEntry {
                    instance_id: jobs[job].instance_id,
                    node: desc.node,
                    kernel: desc
                        .kernel()
                        .map_or_else(|| desc.kernel_id().to_string(), |k| k.cost_key()),
                    pe,
                    start_ns,
                    end_ns,
                });
                if let Some(phase) = open.get_mut(&(job, section)) {
                    phase.outstanding -= 1;
                    let rec = &mut phases[phase.record];
                    rec.end_ns = rec.end_ns.max(end_ns);
                    if phase.outstanding == 0 {
                        rec.rounds = phase.load.values().copied().max().unwrap_or(0);
                        open.remove(&(job, section));
                    }
                }
                match pe_queue[pe].pop_front() {
                    Some(q) => start_on(pe, q),
                    None => pe_busy[pe] = false,
                }
            }
        }
    }
    let mut gantt = GanttLog { entries };
    gantt.sort();
    Ok((gantt, completion, phases, RunMode::Wall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{compile, CompileOptions};
    use crate::sim::{simulate, SimConfig};
    use crate::tir::bench::Benchmark;

    fn jobs(b: Benchmark, count: usize) -> (Vec<JobSubmission>, Vec<Outputs>) {
        let compiled = compile(&b.build(), &CompileOptions::default()).unwrap();
        let p = Arc::new(compiled.parallel);
        let jobs = JobSubmission::batch(&p, count, 0, 0, 0);
        let serial = jobs
            .iter()
            .map(|j| p.execute(&j.inputs, |_, n| (0..n).collect()).unwrap())
            .collect();
        (jobs, serial)
    }

    #[test]
    fn model_time_matches_simulation() {
        let (jobs, serial) = jobs(Benchmark::RadarCorrelator, 3);
        let plat = Platform::preset("3cpu1fft").unwrap();
        for policy in Policy::ALL {
            let run = run_workload(
                &jobs,
                &plat,
                policy,
                RunOptions {
                    clock: Clock::ModelTime,
                    timing: Timing::BARE,
                },
            )
            .unwrap();
            let sim = simulate(&jobs, &plat, policy, SimConfig::default()).unwrap();
            assert_eq!(run.gantt, sim.gantt, "{policy}");
            for (k, out) in serial.iter().enumerate() {
                assert_eq!(&run.outputs[&k], out);
            }
        }
    }

    #[test]
    fn wall_clock_run_is_functionally_exact() {
        let (jobs, serial) = jobs(Benchmark::PulseDoppler { n_pulses: 4 }, 2);
        let plat = Platform::preset("4fft").unwrap();
        let run = run_workload(
            &jobs,
            &plat,
            Policy::Eft,
            RunOptions {
                clock: Clock::Wall {
                    jitter_max_ns: 50_000,
                    seed: 7,
                },
                timing: Timing::FULL,
            },
        )
        .unwrap();
        for (k, out) in serial.iter().enumerate() {
            assert_eq!(&run.outputs[&k], out);
        }
        assert!(run.gantt.pe_overlaps().is_empty());
        assert_eq!(run.gantt.entries.len(), 32);
        assert_eq!(run.stats.mode, RunMode::Wall);
    }

    #[test]
    fn met_serializes_ffts_on_the_accelerator() {
        let (jobs, _) = jobs(Benchmark::RadarCorrelator, 4);
        let plat = Platform::preset("3cpu1fft").unwrap();
        let run = run_workload(&jobs, &plat, Policy::Met, RunOptions::default()).unwrap();
        assert!(run.gantt.entries.iter().all(|e| e.pe == 3));
        assert!(run.gantt.pe_overlaps().is_empty());
    }

    #[test]
    fn unregistered_kernel_is_rejected() {
        let (jobs, _) = jobs(Benchmark::TemporalMitigation, 1);
        let mut plat = Platform::preset("4fft").unwrap();
        plat.pes[0].default_exec_ns = None;
        let err = run_workload(&jobs, &plat, Policy::Eft, RunOptions::default()).unwrap_err();
        assert!(matches!(err, RuntimeError::Unregistered { .. }), "{err}");
    }
}
