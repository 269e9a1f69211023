//! Human-readable renderings of execution results.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gantt::{GanttLog, Stats};
use crate::platform::{Platform, Timing};
use crate::runtime::Policy;
use crate::schedgen::ParallelProgram;
use crate::sim::{simulate, SimConfig, SimError};
use crate::tir::TaskKind;
use crate::workload::JobSubmission;

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

/// One lane per PE; tasks coloured by instance id modulo 10.
pub fn gantt_svg(gantt: &GanttLog, platform: &Platform) -> String {
    const LANE: u64 = 28;
    const LABEL: u64 = 90;
    const PLOT: u64 = 900;
    let end = gantt
        .entries
        .iter()
        .map(|e| e.end_ns)
        .max()
        .unwrap_or(0)
        .max(1);
    let x = |t: u64| LABEL as f64 + t as f64 * PLOT as f64 / end as f64;
    let height = LANE * platform.pes.len() as u64 + 30;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="monospace" font-size="11">"#,
        LABEL + PLOT + 10
    );
    for pe in &platform.pes {
        let y = pe.id as u64 * LANE;
        let _ = writeln!(svg, r#"<text x="4" y="{}">{}</text>"#, y + 18, pe.name);
        let _ = writeln!(
            svg,
            r##"<line x1="{LABEL}" y1="{0}" x2="{1}" y2="{0}" stroke="#ddd"/>"##,
            y + LANE,
            LABEL + PLOT
        );
    }
    for e in &gantt.entries {
        let (x0, x1) = (x(e.start_ns), x(e.end_ns));
        let _ = writeln!(
            svg,
            r#"<rect x="{x0:.2}" y="{}" width="{:.2}" height="{}" fill="{}"><title>instance {} node {} {} [{}, {}) ns</title></rect>"#,
            e.pe as u64 * LANE + 4,
            (x1 - x0).max(0.5),
            LANE - 8,
            PALETTE[e.instance_id % 10],
            e.instance_id,
            e.node,
            e.kernel,
            e.start_ns,
            e.end_ns
        );
    }
    let axis = LANE * platform.pes.len() as u64 + 20;
    let _ = writeln!(svg, r#"<text x="{LABEL}" y="{axis}">0</text>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{axis}" text-anchor="end">{end} ns</text>"#,
        LABEL + PLOT
    );
    svg.push_str("</svg>\n");
    svg
}

/// Text Gantt: one row per PE, each column a time slice showing the
/// instance id modulo 10 of the task occupying it.
pub fn gantt_ascii(gantt: &GanttLog, platform: &Platform, columns: usize) -> String {
    let columns = columns.max(1);
    let end = gantt
        .entries
        .iter()
        .map(|e| e.end_ns)
        .max()
        .unwrap_or(0)
        .max(1);
    let label = platform.pes.iter().map(|p| p.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for pe in &platform.pes {
        let mut row = vec!['.'; columns];
        for e in gantt.entries.iter().filter(|e| e.pe == pe.id) {
            let c0 = (e.start_ns as u128 * columns as u128 / end as u128) as usize;
            let c1 =
                ((e.end_ns as u128 * columns as u128).div_ceil(end as u128) as usize).min(columns);
            for cell in &mut row[c0.min(columns - 1)..c1.max(c0 + 1).min(columns)] {
                *cell = char::from_digit((e.instance_id % 10) as u32, 10).expect("digit");
            }
        }
        let _ = writeln!(
            out,
            "{:>label$} |{}|",
            pe.name,
            row.iter().collect::<String>()
        );
    }
    let _ = writeln!(
        out,
        "{:>label$}  0{:>width$}",
        "",
        format!("{end} ns"),
        width = columns
    );
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MakespanRow {
    pub policy: Policy,
    pub makespan_ns: u64,
    /// Slowest makespan in the comparison divided by this one.
    pub speedup: f64,
}

pub fn makespan_rows(runs: &[(Policy, &Stats)]) -> Vec<MakespanRow> {
    let slowest = runs.iter().map(|(_, s)| s.makespan_ns).max().unwrap_or(0);
    runs.iter()
        .map(|(policy, s)| MakespanRow {
            policy: *policy,
            makespan_ns: s.makespan_ns,
            speedup: if s.makespan_ns == 0 {
                1.0
            } else {
                slowest as f64 / s.makespan_ns as f64
            },
        })
        .collect()
}

pub fn makespan_table(rows: &[MakespanRow]) -> String {
    let mut out = String::from("policy  makespan_ns   makespan_ms  speedup\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6}  {:>11}  {:>12.3}  {:>6.2}x",
            r.policy.to_string(),
            r.makespan_ns,
            r.makespan_ns as f64 / 1e6,
            r.speedup
        );
    }
    out
}

/// Serial baseline against one simulated parallel run of a single instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub app: String,
    pub serial_whole_ns: u64,
    pub parallel_whole_ns: u64,
    pub whole_pct: f64,
    pub serial_tasks_ns: u64,
    pub parallel_tasks_ns: u64,
    pub tasks_pct: f64,
}

pub fn reduction_pct(serial: u64, parallel: u64) -> f64 {
    if serial == 0 {
        0.0
    } else {
        (serial as f64 - parallel as f64) / serial as f64 * 100.0
    }
}

/// Every task back to back on one PE: Type-2 work at its fastest modeled
/// duration, Type-1 work at its host cost.
pub fn serial_time(
    program: &ParallelProgram,
    platform: &Platform,
    timing: Timing,
) -> Result<u64, SimError> {
    let mut total = 0;
    for t in program.sections.iter().flat_map(|s| s.tasks()) {
        total += match (t.kind, t.kernel()) {
            (TaskKind::Type2, Some(k)) => platform
                .best_duration(k, timing)
                .ok_or_else(|| crate::runtime::SchedError::NoSupportingPe(k.cost_key()))?,
            (_, k) => platform.host_cost(k, timing),
        };
    }
    Ok(total)
}

/// Whole-application figures charge host costs; tasks-only figures drop
/// disk I/O from both sides.
pub fn reduction(
    program: &Arc<ParallelProgram>,
    platform: &Platform,
    policy: Policy,
    overheads: bool,
) -> Result<Reduction, SimError> {
    let timing = Timing {
        host_costs: true,
        overheads,
    };
    let jobs = JobSubmission::batch(program, 1, 0, 0, 0);
    let measure = |plat: &Platform| -> Result<(u64, u64), SimError> {
        let serial = serial_time(program, plat, timing)?;
        let parallel = simulate(&jobs, plat, policy, SimConfig { timing })?
            .stats
            .makespan_ns;
        Ok((serial, parallel))
    };
    let (serial_whole_ns, parallel_whole_ns) = measure(platform)?;
    let (serial_tasks_ns, parallel_tasks_ns) = measure(&platform.without_io_costs())?;
    Ok(Reduction {
        app: program.name.clone(),
        serial_whole_ns,
        parallel_whole_ns,
        whole_pct: reduction_pct(serial_whole_ns, parallel_whole_ns),
        serial_tasks_ns,
        parallel_tasks_ns,
        tasks_pct: reduction_pct(serial_tasks_ns, parallel_tasks_ns),
    })
}

pub fn reduction_table(rows: &[Reduction]) -> String {
    let width = rows.iter().map(|r| r.app.len()).max().unwrap_or(3).max(3);
    let mut out = format!("{:<width$}  whole_app_%  tasks_only_%\n", "app");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>11.2}  {:>12.2}",
            r.app, r.whole_pct, r.tasks_pct
        );
    }
    out
}

/// Everything `report` writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub svg: String,
    pub ascii: String,
    pub makespans: Vec<MakespanRow>,
    pub reductions: Vec<Reduction>,
}

impl ReportBundle {
    pub fn text(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.ascii);
        if !self.makespans.is_empty() {
            out.push('\n');
            out.push_str(&makespan_table(&self.makespans));
        }
        if !self.reductions.is_empty() {
            out.push('\n');
            out.push_str(&reduction_table(&self.reductions));
        }
        out
    }
}
