//! Random aliasing programs and a byte-granular dependence oracle.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use taskweave::tir::{Buffer, ElemOp, ElementKind, KernelSpec, Slice, Statement, TirProgram};
use taskweave::tracer::{Event, Trace};

const SAMPLE: u64 = 8;
const SIZES: [u64; 4] = [8, 16, 32, 64];

/// Up to 8 complex buffers and up to 40 top-level statements. Offsets come
/// from a coarse grid so slices overlap often.
pub fn random_program(seed: u64) -> TirProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buffers: Vec<Buffer> = (0..rng.gen_range(1..=8))
        .map(|i| {
            Buffer::new(
                format!("b{i}"),
                ElementKind::Complex32,
                *SIZES.choose(&mut rng).unwrap(),
            )
        })
        .collect();
    let count = rng.gen_range(1..=40);
    let body = (0..count)
        .map(|_| random_statement(&mut rng, &buffers))
        .collect();
    TirProgram::new(format!("random_{seed}"), buffers, body)
}

fn slice(rng: &mut ChaCha8Rng, buffers: &[Buffer], samples: u64) -> Slice {
    let fits: Vec<&Buffer> = buffers
        .iter()
        .filter(|b| b.size_bytes >= samples * SAMPLE)
        .collect();
    let buf = fits.choose(rng).expect("an 8-sample buffer exists");
    let room = buf.size_bytes / SAMPLE - samples;
    let offset = if rng.gen_bool(0.5) {
        rng.gen_range(0..=room) / 4 * 4
    } else {
        rng.gen_range(0..=room)
    };
    Slice::new(buf.id.clone(), offset * SAMPLE, samples * SAMPLE)
}

fn disjoint(a: &Slice, b: &Slice) -> bool {
    a.buffer != b.buffer || a.offset + a.len <= b.offset || b.offset + b.len <= a.offset
}

fn random_statement(rng: &mut ChaCha8Rng, buffers: &[Buffer]) -> Statement {
    let samples = rng.gen_range(1..=8);
    match rng.gen_range(0..8) {
        0 => {
            let op = *[ElemOp::Add, ElemOp::Sub, ElemOp::Mul].choose(rng).unwrap();
            let reads = vec![slice(rng, buffers, samples), slice(rng, buffers, samples)];
            Statement::call(
                "binary",
                KernelSpec::Elemwise { op },
                reads,
                vec![slice(rng, buffers, samples)],
            )
        }
        1 => {
            let op = *[ElemOp::Mag2, ElemOp::Conj, ElemOp::Copy]
                .choose(rng)
                .unwrap();
            let reads = vec![slice(rng, buffers, samples)];
            Statement::call(
                "unary",
                KernelSpec::Elemwise { op },
                reads,
                vec![slice(rng, buffers, samples)],
            )
        }
        2 => Statement::call(
            "fft",
            KernelSpec::Fft {
                points: 8,
                inverse: rng.gen_bool(0.5),
            },
            vec![slice(rng, buffers, 8)],
            vec![slice(rng, buffers, 8)],
        ),
        3 => Statement::call(
            "read",
            KernelSpec::ReadData {
                stream: rng.gen_range(0..3),
            },
            vec![],
            vec![slice(rng, buffers, samples)],
        ),
        4 => Statement::call(
            "write",
            KernelSpec::WriteData {
                stream: rng.gen_range(0..3),
            },
            vec![slice(rng, buffers, samples)],
            vec![],
        ),
        5 => Statement::Fill {
            dst: slice(rng, buffers, samples),
            value: rng.gen(),
        },
        op => {
            let src = slice(rng, buffers, samples);
            let dst = slice(rng, buffers, samples);
            if op == 6 && disjoint(&src, &dst) {
                Statement::Copy { src, dst }
            } else {
                Statement::Move { src, dst }
            }
        }
    }
}

/// Read-after-write edges recomputed byte by byte. A node is one task span,
/// or the memory traffic of one basic block outside any task.
pub fn oracle_edges(trace: &Trace) -> (usize, BTreeSet<(usize, usize)>) {
    let mut nodes: Vec<(Vec<u64>, Vec<u64>)> = Vec::new();
    let mut in_task = false;
    let mut glue_open = false;
    for e in &trace.events {
        match &e.event {
            Event::TaskEnter { .. } => {
                nodes.push(Default::default());
                in_task = true;
                glue_open = false;
            }
            Event::TaskExit => in_task = false,
            Event::BbEnter { .. } | Event::BbExit { .. } => {
                if !in_task {
                    glue_open = false;
                }
            }
            ev => {
                if !in_task && !glue_open {
                    nodes.push(Default::default());
                    glue_open = true;
                }
                let (loads, stores) = nodes.last_mut().unwrap();
                match *ev {
                    Event::Load { addr, bytes } => loads.extend(addr..addr + bytes),
                    Event::Store { addr, bytes } => stores.extend(addr..addr + bytes),
                    Event::MemSet { dst, bytes } => stores.extend(dst..dst + bytes),
                    Event::MemCpy { src, dst, bytes } | Event::MemMove { src, dst, bytes } => {
                        loads.extend(src..src + bytes);
                        stores.extend(dst..dst + bytes);
                    }
                    _ => unreachable!(),
                }
            }
        }
    }
    let mut writer: HashMap<u64, usize> = HashMap::new();
    let mut edges = BTreeSet::new();
    for (n, (loads, stores)) in nodes.iter().enumerate() {
        for &b in loads {
            if let Some(&w) = writer.get(&b) {
                if w != n {
                    edges.insert((w, n));
                }
            }
        }
        for &b in stores {
            writer.insert(b, n);
        }
    }
    (nodes.len(), edges)
}
