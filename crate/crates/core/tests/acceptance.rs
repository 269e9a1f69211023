//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use taskweave::depanalysis::{analyze, GLUE_KERNEL};
use taskweave::gantt::PhaseRecord;
use taskweave::pipeline::{compile, CompileOptions, Compiled};
use taskweave::platform::{Platform, Timing};
use taskweave::report::reduction;
use taskweave::runtime::{run_workload, Clock, CounterBarrier, Policy, RunOptions};
use taskweave::schedgen::Region;
use taskweave::sim::{replay, simulate, SimConfig};
use taskweave::tir::bench::{running_example, Benchmark};
use taskweave::tir::exec::interpret;
use taskweave::tir::TaskKind;
use taskweave::tracer::{interpret_and_trace, Event, Trace};
use taskweave::workload::JobSubmission;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn compiled(b: Benchmark) -> Compiled {
    compile(&b.build(), &CompileOptions::default()).unwrap_or_else(|e| panic!("{b}: {e}"))
}

fn running_example_pipeline() -> Check {
    let start = Instant::now();
    let c = compile(&running_example(2), &CompileOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let kernels: Vec<&str> = c
        .analysis
        .control
        .nodes
        .iter()
        .map(|n| n.kernel_id.as_str())
        .collect();
    let expected = [
        "READ_DATA",
        "FFT",
        "WRITE_DATA",
        "READ_DATA",
        "FFT",
        "WRITE_DATA",
    ];
    ensure!(kernels == expected, "task sequence {kernels:?}");
    let chain: Vec<(usize, usize)> = c.analysis.control.edges().collect();
    ensure!(
        chain == vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)],
        "control edges {chain:?}"
    );
    let data: Vec<(usize, usize)> = c.analysis.data.edges.iter().copied().collect();
    ensure!(
        data == vec![(0, 1), (1, 2), (3, 4), (4, 5)],
        "data edges {data:?}"
    );
    let regions = vec![
        Region {
            kind: TaskKind::Type1,
            tasks: vec![0, 3],
        },
        Region {
            kind: TaskKind::Type2,
            tasks: vec![1, 4],
        },
        Region {
            kind: TaskKind::Type1,
            tasks: vec![2, 5],
        },
    ];
    ensure!(
        c.schedule.regions == regions,
        "regions {:?}",
        c.schedule.regions
    );
    ensure!(
        c.schedule.regions[1].counter_target() == Some(2),
        "counter target"
    );
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "regions [T1{{0,3}}, T2{{1,4}}, T1{{2,5}}] in {elapsed:.2?}"
    ))
}

fn disjoint_writers_feed_one_reader() -> Check {
    let mut t = Trace::new("", Default::default());
    let task = |t: &mut Trace, name: &str, body: &[Event]| {
        t.push(Event::TaskEnter {
            task_kind: TaskKind::Type2,
            kernel_id: name.into(),
            site_id: format!("main:{name}"),
        });
        t.push(Event::BbEnter { bb: 0 });
        for e in body {
            t.push(e.clone());
        }
        t.push(Event::BbExit { bb: 0 });
        t.push(Event::TaskExit);
    };
    task(
        &mut t,
        "A",
        &[Event::Store {
            addr: 0x1000,
            bytes: 64,
        }],
    );
    task(
        &mut t,
        "B",
        &[Event::Store {
            addr: 0x2000,
            bytes: 64,
        }],
    );
    task(
        &mut t,
        "C",
        &[
            Event::Load {
                addr: 0x1000,
                bytes: 64,
            },
            Event::Load {
                addr: 0x2000,
                bytes: 64,
            },
        ],
    );
    let a = analyze(&t).map_err(|e| e.to_string())?;
    let edges: Vec<(usize, usize)> = a.data.edges.iter().copied().collect();
    ensure!(edges == vec![(0, 2), (1, 2)], "edges {edges:?}");
    Ok("edges {A->C, B->C}".into())
}

fn benchmark_phase_structure() -> Check {
    let start = Instant::now();
    let expected: [(Benchmark, Vec<usize>); 5] = [
        (Benchmark::PulseDoppler { n_pulses: 4 }, vec![8, 4, 4]),
        (
            Benchmark::PulseDoppler { n_pulses: 256 },
            vec![512, 256, 256],
        ),
        (Benchmark::WifiTx, vec![10]),
        (Benchmark::RadarCorrelator, vec![2, 1]),
        (Benchmark::TemporalMitigation, vec![2, 1]),
    ];
    let mut seen = Vec::new();
    for (b, widths) in expected {
        let c = compiled(b);
        let got = c.schedule.parallel_widths();
        ensure!(got == widths, "{b}: widths {got:?}, expected {widths:?}");
        ensure!(
            c.parallel.parallel_widths() == widths,
            "{b}: emitted widths differ"
        );
        seen.push(format!("{b} {got:?}"));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{} in {elapsed:.2?}", seen.join(", ")))
}

fn simulated_round_structure() -> Check {
    let cases = [
        (4, "4fft", vec![2, 1, 1]),
        (4, "8fft", vec![1, 1, 1]),
        (256, "8fft", vec![64, 32, 32]),
    ];
    let mut seen = Vec::new();
    for (pulses, plat, rounds) in cases {
        let p = Arc::new(compiled(Benchmark::PulseDoppler { n_pulses: pulses }).parallel);
        let jobs = JobSubmission::batch(&p, 1, 0, 0, 0);
        let platform = Platform::preset(plat).unwrap();
        let r = simulate(&jobs, &platform, Policy::Eft, SimConfig::default())
            .map_err(|e| e.to_string())?;
        let spans: Vec<u64> = r.stats.phases.iter().map(PhaseRecord::span_ns).collect();
        let want: Vec<u64> = rounds.iter().map(|&k| k as u64 * 128).collect();
        let got_rounds: Vec<usize> = r.stats.phases.iter().map(|p| p.rounds).collect();
        ensure!(
            spans == want,
            "pd{pulses} on {plat}: spans {spans:?}, expected {want:?}"
        );
        ensure!(
            got_rounds == rounds,
            "pd{pulses} on {plat}: rounds {got_rounds:?}"
        );
        seen.push(format!("pd{pulses}/{plat} {rounds:?}"));
    }
    Ok(seen.join(", "))
}

fn random_programs_match_byte_oracle() -> Check {
    let start = Instant::now();
    let mut edges = 0;
    for seed in 0..250 {
        let program = common::random_program(seed);
        let (_, trace) = interpret_and_trace(&program, &taskweave::tir::exec::Inputs::seeded(seed))
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let a = analyze(&trace).map_err(|e| format!("seed {seed}: {e}"))?;
        let (nodes, oracle) = common::oracle_edges(&trace);
        ensure!(
            a.control.len() == nodes,
            "seed {seed}: {} nodes, oracle {nodes}",
            a.control.len()
        );
        ensure!(
            a.data.edges == oracle,
            "seed {seed}: edges {:?}, oracle {oracle:?}",
            a.data.edges
        );
        ensure!(
            a.control
                .nodes
                .iter()
                .filter(|n| n.kernel_id == GLUE_KERNEL)
                .all(|n| n.is_glue()),
            "seed {seed}: glue"
        );
        edges += oracle.len();
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("250 programs, {edges} edges, in {elapsed:.2?}"))
}

fn parallel_outputs_match_serial() -> Check {
    let platform = Platform::preset("3cpu1fft").unwrap();
    let mut checked = 0;
    for b in Benchmark::suite() {
        let source = b.build();
        let p = Arc::new(compiled(b).parallel);
        for policy in Policy::ALL {
            for run in 0..20u64 {
                let jobs = JobSubmission::batch(&p, 2, 0, 0, 1000 * run);
                let wall = run_workload(
                    &jobs,
                    &platform,
                    policy,
                    RunOptions {
                        clock: Clock::Wall {
                            jitter_max_ns: 20_000,
                            seed: run,
                        },
                        timing: Timing::FULL,
                    },
                )
                .map_err(|e| format!("{b} {policy} run {run}: {e}"))?;
                let sim = simulate(
                    &jobs,
                    &platform,
                    policy,
                    SimConfig {
                        timing: Timing::FULL,
                    },
                )
                .map_err(|e| e.to_string())?;
                for job in &jobs {
                    let serial = interpret(&source, &job.inputs).map_err(|e| e.to_string())?;
                    let k = job.instance_id;
                    ensure!(
                        wall.outputs[&k] == serial,
                        "{b} {policy} run {run}: runtime instance {k} differs"
                    );
                    let replayed =
                        replay(&p, &sim.gantt, k, &job.inputs).map_err(|e| e.to_string())?;
                    ensure!(
                        replayed == serial,
                        "{b} {policy} run {run}: replay of instance {k} differs"
                    );
                    checked += 2;
                }
            }
        }
    }
    Ok(format!("{checked} instance comparisons, 0 mismatches"))
}

fn scheduler_ordering() -> Check {
    let p = Arc::new(compiled(Benchmark::RadarCorrelator).parallel);
    let jobs = JobSubmission::batch(&p, 100, 0, 0, 0);
    let platform = Platform::preset("3cpu1fft").unwrap();
    let mut makespan = BTreeMap::new();
    for policy in Policy::ALL {
        let r = run_workload(&jobs, &platform, policy, RunOptions::default())
            .map_err(|e| e.to_string())?;
        makespan.insert(policy.to_string(), r.stats.makespan_ns);
    }
    let (met, rr, eft) = (makespan["met"], makespan["rr"], makespan["eft"]);
    let ratio = met as f64 / eft as f64;
    ensure!(
        eft <= rr && rr < met,
        "makespans met {met} rr {rr} eft {eft}"
    );
    ensure!(ratio >= 1.3, "MET/EFT {ratio:.2}");
    Ok(format!(
        "met {met} ns, rr {rr} ns, eft {eft} ns, MET/EFT {ratio:.2}x"
    ))
}

fn pulse_doppler_task_reduction() -> Check {
    let platform = Platform::preset("8fft").unwrap();
    let mut seen = Vec::new();
    for pulses in [4, 256] {
        let p = Arc::new(compiled(Benchmark::PulseDoppler { n_pulses: pulses }).parallel);
        let r = reduction(&p, &platform, Policy::Eft, false).map_err(|e| e.to_string())?;
        ensure!(
            r.tasks_pct >= 75.0,
            "pd{pulses}: tasks-only reduction {:.2}%",
            r.tasks_pct
        );
        seen.push(format!("pd{pulses} {:.2}%", r.tasks_pct));
    }
    Ok(seen.join(", "))
}

fn runtime_matches_simulator() -> Check {
    let mut compared = 0;
    for b in Benchmark::suite() {
        let p = Arc::new(compiled(b).parallel);
        let jobs = JobSubmission::batch(&p, 3, 0, 0, 0);
        for plat in ["3cpu1fft", "8fft"] {
            let platform = Platform::preset(plat).unwrap();
            for policy in Policy::ALL {
                let opts = RunOptions {
                    clock: Clock::ModelTime,
                    timing: Timing::BARE,
                };
                let run = run_workload(&jobs, &platform, policy, opts)
                    .map_err(|e| format!("{b} {plat} {policy}: {e}"))?;
                let sim = simulate(&jobs, &platform, policy, SimConfig::default())
                    .map_err(|e| e.to_string())?;
                let assign = |g: &taskweave::gantt::GanttLog| {
                    g.entries
                        .iter()
                        .map(|e| ((e.instance_id, e.node), e.pe))
                        .collect::<BTreeMap<_, _>>()
                };
                ensure!(
                    assign(&run.gantt) == assign(&sim.gantt),
                    "{b} {plat} {policy}: assignments differ"
                );
                ensure!(
                    run.gantt == sim.gantt,
                    "{b} {plat} {policy}: timelines differ"
                );
                compared += 1;
            }
        }
    }
    Ok(format!(
        "{compared} (benchmark, platform, policy) runs identical"
    ))
}

fn barrier_stress() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for target in [1usize, 2, 10, 512] {
        for trial in 0..1000 {
            let barrier = CounterBarrier::new(target);
            let mut order: Vec<usize> = (0..target).collect();
            order.shuffle(&mut rng);
            let queue = Mutex::new(order);
            let done = Mutex::new(Vec::new());
            let workers = target.min(8);
            let (queue, done, barrier) = (&queue, &done, &barrier);
            let pauses: Vec<u32> = (0..workers).map(|_| rng.gen_range(0..4)).collect();
            let early = thread::scope(|s| {
                for &pause in &pauses {
                    s.spawn(move || loop {
                        let Some(id) = queue.lock().unwrap().pop() else {
                            break;
                        };
                        for _ in 0..pause {
                            thread::yield_now();
                        }
                        done.lock().unwrap().push(id);
                        barrier.increment().expect("no overflow");
                    });
                }
                barrier.wait().expect("not cancelled");
                barrier.count() != target
            });
            ensure!(!early, "target {target} trial {trial}: resumed early");
            let ids: BTreeSet<usize> = done.lock().unwrap().iter().copied().collect();
            ensure!(
                ids.len() == target && barrier.count() == target,
                "target {target} trial {trial}: lost increments"
            );
            ensure!(
                barrier.increment().is_err(),
                "target {target} trial {trial}: extra completion accepted"
            );
        }
    }
    Ok("4 targets x 1000 trials".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("running_example_pipeline", running_example_pipeline),
        (
            "disjoint_writers_feed_one_reader",
            disjoint_writers_feed_one_reader,
        ),
        ("benchmark_phase_structure", benchmark_phase_structure),
        ("simulated_round_structure", simulated_round_structure),
        (
            "random_programs_match_byte_oracle",
            random_programs_match_byte_oracle,
        ),
        (
            "parallel_outputs_match_serial",
            parallel_outputs_match_serial,
        ),
        ("scheduler_ordering", scheduler_ordering),
        ("pulse_doppler_task_reduction", pulse_doppler_task_reduction),
        ("runtime_matches_simulator", runtime_matches_simulator),
        ("barrier_stress", barrier_stress),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", k + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
