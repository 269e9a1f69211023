//! Discrete-event virtual-time execution of parallel programs over a
//! modeled platform.
//!
//! [`Engine`] owns the event queue, PE availability and the scheduler. It
//! is driven step by step: [`simulate`] answers host steps directly, while
//! the model-time runtime answers them from real host threads.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use crate::gantt::{GanttEntry, GanttLog, PhaseRecord, RunMode, Stats};
use crate::platform::{Platform, Timing};
use crate::runtime::{Policy, SchedError, Scheduler};
use crate::schedgen::ParallelProgram;
use crate::tir::exec::{Inputs, Outputs};
use crate::tir::kernels::KernelError;
use crate::workload::JobSubmission;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub timing: Timing,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            timing: Timing::BARE,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("instance {instance_id}: section {section} task {task} has no kernel to time")]
    Untimed {
        instance_id: usize,
        section: usize,
        task: usize,
    },
    #[error("instance {instance_id}: host reached section {reported:?}, expected {expected:?}")]
    Protocol {
        instance_id: usize,
        reported: Option<usize>,
        expected: Option<usize>,
    },
    #[error("engine stepped while waiting on the host of instance {0}")]
    HostPending(usize),
    #[error("instance {0} never completed")]
    Incomplete(usize),
    #[error("replay: no gantt entry for instance {instance_id} node {node}")]
    MissingEntry { instance_id: usize, node: usize },
    #[error("replay: {0}")]
    Kernel(#[from] KernelError),
}

/// Tie-break order for simultaneous events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Finish,
    Arrival,
    Ready,
    Start,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct SimEvent {
    time_ns: u64,
    kind: EventKind,
    job: usize,
    node: usize,
    seq: u64,
    section: usize,
    task: usize,
    pe: usize,
    end_ns: u64,
}

/// What the engine needs its driver to observe or do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// The host of `job` runs from `time_ns` (arrival or barrier met). The
    /// driver must answer with [`Engine::host_reached`].
    HostResume { job: usize, time_ns: u64 },
    TaskStart {
        job: usize,
        section: usize,
        task: usize,
        pe: usize,
        time_ns: u64,
    },
    TaskFinish {
        job: usize,
        section: usize,
        task: usize,
        pe: usize,
        time_ns: u64,
    },
}

#[derive(Clone, Debug, Default)]
struct JobState {
    /// Next section the host will run.
    pos: usize,
    outstanding: usize,
    phase: Option<usize>,
    completion: Option<u64>,
}

/// Output of [`Engine::finish`].
pub type Finished = (GanttLog, BTreeMap<usize, u64>, Vec<PhaseRecord>);

pub struct Engine<'a> {
    jobs: &'a [JobSubmission],
    platform: &'a Platform,
    timing: Timing,
    scheduler: Scheduler,
    heap: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
    ready: VecDeque<(usize, usize, usize)>,
    pe_avail: Vec<u64>,
    state: Vec<JobState>,
    steps: VecDeque<Step>,
    awaiting: Option<usize>,
    entries: Vec<GanttEntry>,
    phases: Vec<PhaseRecord>,
    phase_load: Vec<BTreeMap<usize, usize>>,
}

impl<'a> Engine<'a> {
    pub fn new(
        jobs: &'a [JobSubmission],
        platform: &'a Platform,
        policy: Policy,
        timing: Timing,
    ) -> Self {
        let mut engine = Self {
            jobs,
            platform,
            timing,
            scheduler: Scheduler::new(policy),
            heap: BinaryHeap::new(),
            seq: 0,
            ready: VecDeque::new(),
            pe_avail: vec![0; platform.pes.len()],
            state: vec![JobState::default(); jobs.len()],
            steps: VecDeque::new(),
            awaiting: None,
            entries: Vec::new(),
            phases: Vec::new(),
            phase_load: Vec::new(),
        };
        for (job, j) in jobs.iter().enumerate() {
            engine.push(SimEvent {
                time_ns: j.arrival_ns,
                kind: EventKind::Arrival,
                job,
                node: 0,
                seq: 0,
                section: 0,
                task: 0,
                pe: 0,
                end_ns: 0,
            });
        }
        engine
    }

    fn push(&mut self, mut ev: SimEvent) {
        ev.seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(ev));
    }

    pub fn jobs(&self) -> &'a [JobSubmission] {
        self.jobs
    }

    /// Index of the next parallel section the host of `job` will reach.
    pub fn next_parallel(&self, job: usize) -> Option<usize> {
        let pos = self.state[job].pos;
        self.jobs[job].program.sections[pos..]
            .iter()
            .position(|s| s.is_parallel())
            .map(|k| k + pos)
    }

    pub fn step(&mut self) -> Result<Option<Step>, SimError> {
        if let Some(job) = self.awaiting {
            return Err(SimError::HostPending(self.jobs[job].instance_id));
        }
        loop {
            if let Some(step) = self.steps.pop_front() {
                if let Step::HostResume { job, .. } = step {
                    self.awaiting = Some(job);
                }
                return Ok(Some(step));
            }
            let Some(Reverse(ev)) = self.heap.pop() else {
                return Ok(None);
            };
            match ev.kind {
                EventKind::Arrival => self.steps.push_back(Step::HostResume {
                    job: ev.job,
                    time_ns: ev.time_ns,
                }),
                EventKind::Ready => {
                    self.ready.push_back((ev.job, ev.section, ev.task));
                    self.dispatch(ev.time_ns)?;
                }
                EventKind::Start => {
                    let task = &self.jobs[ev.job].program.sections[ev.section].tasks()[ev.task];
                    self.entries.push(GanttEntry {
                        instance_id: self.jobs[ev.job].instance_id,
                        node: task.node,
                        kernel: task
                            .kernel()
                            .map_or_else(|| task.kernel_id().to_string(), |k| k.cost_key()),
                        pe: ev.pe,
                        start_ns: ev.time_ns,
                        end_ns: ev.end_ns,
                    });
                    self.steps.push_back(Step::TaskStart {
                        job: ev.job,
                        section: ev.section,
                        task: ev.task,
                        pe: ev.pe,
                        time_ns: ev.time_ns,
                    });
                    self.push(SimEvent {
                        time_ns: ev.end_ns,
                        kind: EventKind::Finish,
                        ..ev
                    });
                }
                EventKind::Finish => {
                    self.steps.push_back(Step::TaskFinish {
                        job: ev.job,
                        section: ev.section,
                        task: ev.task,
                        pe: ev.pe,
                        time_ns: ev.time_ns,
                    });
                    let st = &mut self.state[ev.job];
                    st.outstanding -= 1;
                    if st.outstanding == 0 {
                        let phase = st.phase.take().expect("open phase");
                        self.phases[phase].end_ns = ev.time_ns;
                        self.steps.push_back(Step::HostResume {
                            job: ev.job,
                            time_ns: ev.time_ns,
                        });
                    }
                }
            }
        }
    }

    /// Maps every queued task to a PE, committing it to that PE's queue.
    fn dispatch(&mut self, now: u64) -> Result<(), SimError> {
        while let Some((job, section, task)) = self.ready.pop_front() {
            let desc = &self.jobs[job].program.sections[section].tasks()[task];
            let kernel = desc.kernel().ok_or(SimError::Untimed {
                instance_id: self.jobs[job].instance_id,
                section,
                task,
            })?;
            let pe =
                self.scheduler
                    .decide(kernel, now, &self.pe_avail, self.platform, self.timing)?;
            let dur = self
                .platform
                .duration(pe, kernel, self.timing)
                .ok_or_else(|| SchedError::NoSupportingPe(kernel.cost_key()))?;
            let start = self.pe_avail[pe].max(now);
            self.pe_avail[pe] = start + dur;
            let phase = self.state[job].phase.expect("open phase");
            *self.phase_load[phase].entry(pe).or_default() += 1;
            let node = desc.node;
            self.push(SimEvent {
                time_ns: start,
                kind: EventKind::Start,
                job,
                node,
                seq: 0,
                section,
                task,
                pe,
                end_ns: start + dur,
            });
        }
        Ok(())
    }

    /// The host of `job`, resumed at `time_ns`, ran its serial sections and
    /// stopped at parallel section `next` (or finished).
    pub fn host_reached(
        &mut self,
        job: usize,
        time_ns: u64,
        next: Option<usize>,
    ) -> Result<(), SimError> {
        if self.awaiting != Some(job) {
            return Err(SimError::Protocol {
                instance_id: self.jobs[job].instance_id,
                reported: next,
                expected: None,
            });
        }
        let expected = self.next_parallel(job);
        if next != expected {
            return Err(SimError::Protocol {
                instance_id: self.jobs[job].instance_id,
                reported: next,
                expected,
            });
        }
        self.awaiting = None;
        let program = &self.jobs[job].program;
        let end = next.unwrap_or(program.sections.len());
        let cost: u64 = program.sections[self.state[job].pos..end]
            .iter()
            .flat_map(|s| s.tasks())
            .map(|t| self.platform.host_cost(t.kernel(), self.timing))
            .sum();
        let t = time_ns + cost;
        let Some(k) = next else {
            let st = &mut self.state[job];
            st.pos = end;
            st.completion = Some(t);
            return Ok(());
        };
        let tasks = program.sections[k].tasks();
        self.phases.push(PhaseRecord {
            instance_id: self.jobs[job].instance_id,
            section: k,
            tasks: tasks.len(),
            start_ns: t,
            end_ns: t,
            rounds: 0,
        });
        self.phase_load.push(BTreeMap::new());
        let st = &mut self.state[job];
        st.pos = k + 1;
        st.outstanding = tasks.len();
        st.phase = Some(self.phases.len() - 1);
        for (i, task) in tasks.iter().enumerate() {
            let node = task.node;
            self.push(SimEvent {
                time_ns: t,
                kind: EventKind::Ready,
                job,
                node,
                seq: 0,
                section: k,
                task: i,
                pe: 0,
                end_ns: 0,
            });
        }
        Ok(())
    }

    /// Gantt log sorted by (pe, start), completion time per instance, and
    /// phase records.
    pub fn finish(self) -> Result<Finished, SimError> {
        let mut completion = BTreeMap::new();
        for (job, st) in self.state.iter().enumerate() {
            let id = self.jobs[job].instance_id;
            completion.insert(id, st.completion.ok_or(SimError::Incomplete(id))?);
        }
        let mut phases = self.phases;
        for (p, load) in phases.iter_mut().zip(&self.phase_load) {
            p.rounds = load.values().copied().max().unwrap_or(0);
        }
        let mut gantt = GanttLog {
            entries: self.entries,
        };
        gantt.sort();
        Ok((gantt, completion, phases))
    }
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub gantt: GanttLog,
    pub stats: Stats,
}

pub fn simulate(
    jobs: &[JobSubmission],
    platform: &Platform,
    policy: Policy,
    config: SimConfig,
) -> Result<SimResult, SimError> {
    let mut engine = Engine::new(jobs, platform, policy, config.timing);
    while let Some(step) = engine.step()? {
        if let Step::HostResume { job, time_ns } = step {
            let next = engine.next_parallel(job);
            engine.host_reached(job, time_ns, next)?;
        }
    }
    let (gantt, completion, phases) = engine.finish()?;
    let stats = Stats::compute(
        RunMode::Virtual,
        policy,
        platform,
        &gantt,
        completion,
        phases,
    );
    log::info!(
        "simulated {} instance(s) under {policy}: makespan {} ns",
        jobs.len(),
        stats.makespan_ns
    );
    Ok(SimResult { gantt, stats })
}

/// Executes one instance's program serially, running the members of each
/// parallel section in the order the schedule started them.
pub fn replay(
    program: &ParallelProgram,
    gantt: &GanttLog,
    instance_id: usize,
    inputs: &Inputs,
) -> Result<Outputs, SimError> {
    let starts: BTreeMap<usize, (u64, usize)> = gantt
        .for_instance(instance_id)
        .map(|e| (e.node, (e.start_ns, e.pe)))
        .collect();
    let mut missing = None;
    let outputs = program.execute(inputs, |k, n| {
        let tasks = program.sections[k].tasks();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| {
            let node = tasks[i].node;
            match starts.get(&node) {
                Some(&(start, pe)) => (start, pe, node),
                None => {
                    missing.get_or_insert(node);
                    (u64::MAX, 0, node)
                }
            }
        });
        order
    })?;
    if let Some(node) = missing {
        return Err(SimError::MissingEntry { instance_id, node });
    }
    Ok(outputs)
}
