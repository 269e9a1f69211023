mod common;

use std::sync::Arc;

use proptest::prelude::*;
use taskweave::depanalysis::analyze;
use taskweave::pipeline::{compile, CompileOptions};
use taskweave::platform::{Pe, PeKind, Platform};
use taskweave::runtime::Policy;
use taskweave::schedgen::ParallelProgram;
use taskweave::sim::{replay, simulate, SimConfig};
use taskweave::tir::exec::{interpret, Inputs};
use taskweave::tir::{Buffer, ElementKind, KernelSpec, Slice, Statement, TirProgram};
use taskweave::tracer::interpret_and_trace;
use taskweave::workload::JobSubmission;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn data_dag_matches_byte_oracle(seed in any::<u64>()) {
        let program = common::random_program(seed);
        let (_, trace) = interpret_and_trace(&program, &Inputs::seeded(seed)).unwrap();
        let a = analyze(&trace).unwrap();
        let (nodes, edges) = common::oracle_edges(&trace);
        prop_assert_eq!(a.control.len(), nodes);
        prop_assert_eq!(a.data.edges, edges);
    }

    /// Any order of the members of each parallel section gives the serial result.
    #[test]
    fn parallel_sections_commute(seed in any::<u64>(), rotate in 0usize..8) {
        let program = common::random_program(seed);
        let inputs = Inputs::seeded(seed);
        let c = compile(&program, &CompileOptions { inputs: inputs.clone() }).unwrap();
        prop_assert!(c.schedule.respects(&c.analysis.data));
        let serial = interpret(&program, &inputs).unwrap();
        let reversed = c.parallel.execute(&inputs, |_, n| (0..n).rev().collect()).unwrap();
        prop_assert_eq!(&reversed, &serial);
        let rotated = c.parallel.execute(&inputs, |_, n| (0..n).map(|i| (i + rotate) % n).collect()).unwrap();
        prop_assert_eq!(&rotated, &serial);
    }

    #[test]
    fn simulated_schedules_replay_to_serial(seed in any::<u64>(), policy in prop::sample::select(Policy::ALL.to_vec())) {
        let program = common::random_program(seed);
        let c = compile(&program, &CompileOptions::default()).unwrap();
        let p = Arc::new(c.parallel);
        let jobs = JobSubmission::batch(&p, 2, 0, 0, seed);
        let plat = Platform::preset("xeon8").unwrap();
        let r = simulate(&jobs, &plat, policy, SimConfig::default()).unwrap();
        prop_assert!(r.gantt.pe_overlaps().is_empty());
        for job in &jobs {
            let out = replay(&p, &r.gantt, job.instance_id, &job.inputs).unwrap();
            prop_assert_eq!(out, interpret(&program, &job.inputs).unwrap());
        }
    }

    /// p uniform tasks on k uniform PEs finish ceil(p/k) task durations after the region starts.
    #[test]
    fn phase_round_law(p in 1u64..40, k in 1usize..9, dur in 1u64..500) {
        let program = independent_ffts(p);
        let c = compile(&program, &CompileOptions::default()).unwrap();
        prop_assert_eq!(c.parallel.parallel_widths(), vec![p as usize]);
        let plat = uniform_accelerators(k, dur);
        let parallel: Arc<ParallelProgram> = Arc::new(c.parallel);
        let jobs = JobSubmission::batch(&parallel, 1, 0, 0, 0);
        for policy in Policy::ALL {
            let r = simulate(&jobs, &plat, policy, SimConfig::default()).unwrap();
            let phase = &r.stats.phases[0];
            let expect = if policy == Policy::Met { p } else { p.div_ceil(k as u64) };
            prop_assert_eq!(phase.span_ns(), expect * dur, "{}", policy);
        }
    }
}

fn independent_ffts(count: u64) -> TirProgram {
    let block = 8 * 8;
    let body = (0..count)
        .map(|i| {
            Statement::call(
                "fft",
                KernelSpec::Fft {
                    points: 8,
                    inverse: false,
                },
                vec![Slice::new("x", i * block, block)],
                vec![Slice::new("y", i * block, block)],
            )
        })
        .collect();
    TirProgram::new(
        "independent_ffts",
        vec![
            Buffer::new("x", ElementKind::Complex32, count * 8),
            Buffer::new("y", ElementKind::Complex32, count * 8),
        ],
        body,
    )
}

fn uniform_accelerators(k: usize, dur: u64) -> Platform {
    let pes = (0..k)
        .map(|id| Pe {
            id,
            name: format!("acc{id}"),
            kind: PeKind::Accelerator {
                supported: vec!["FFT".into()],
            },
            exec_ns: [("FFT".to_string(), dur)].into(),
            default_exec_ns: None,
            dispatch_overhead_ns: 0,
        })
        .collect();
    Platform {
        name: "uniform".into(),
        pes,
        transfer_overhead_ns: 0,
        host_cost_ns: Default::default(),
    }
}
