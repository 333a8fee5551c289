//! Results CSV, trajectory dumps and the summary report.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use trajopt_core::basis::SampledTrajectory;

use crate::error::BenchResult;
use crate::metrics::RunMetrics;
use crate::runner::{RunRecord, SolverKind};

pub const RESULTS_FILE: &str = "results.csv";

/// One row of the results file, columns in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub solver: SolverKind,
    pub seed: u64,
    pub success: bool,
    pub smoothness: f64,
    pub tracking: f64,
    pub arc_length: f64,
    pub iters: usize,
    pub residual_final: f64,
    pub min_clearance: f64,
    pub wall_time_ms: f64,
}

impl From<&RunRecord> for ResultRow {
    fn from(r: &RunRecord) -> Self {
        let m = &r.metrics;
        Self {
            scenario_id: r.scenario_id.clone(),
            solver: r.solver,
            seed: r.seed,
            success: m.success,
            smoothness: m.smoothness,
            tracking: m.tracking,
            arc_length: m.arc_length,
            iters: m.iterations,
            residual_final: m.residual_final,
            min_clearance: m.min_clearance,
            wall_time_ms: m.wall_time_ms,
        }
    }
}

impl ResultRow {
    pub fn into_record(self) -> RunRecord {
        let dump = Some(RunRecord::dump_name(&self.scenario_id, self.solver, self.seed));
        RunRecord {
            scenario_id: self.scenario_id,
            solver: self.solver,
            seed: self.seed,
            metrics: RunMetrics {
                smoothness: self.smoothness,
                tracking: self.tracking,
                arc_length: self.arc_length,
                success: self.success,
                iterations: self.iters,
                wall_time_ms: self.wall_time_ms,
                residual_final: self.residual_final,
                min_clearance: self.min_clearance,
            },
            dump,
        }
    }
}

pub fn write_results<W: Write>(w: W, records: &[RunRecord]) -> BenchResult<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(ResultRow::from(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(r: R) -> BenchResult<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ResultRow>() {
        out.push(row?.into_record());
    }
    Ok(out)
}

/// Appends to `dir/results.csv`, writing the header only for a new file.
pub fn append_result(dir: &Path, record: &RunRecord) -> BenchResult<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(RESULTS_FILE);
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    out.serialize(ResultRow::from(record))?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DumpRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    psi: Option<f64>,
}

/// Writes `t,x,y,z,psi` rows; agents follow each other in order.
pub fn write_trajectory_dump<W: Write>(w: W, trajs: &[SampledTrajectory]) -> BenchResult<()> {
    let mut out = csv::Writer::from_writer(w);
    for traj in trajs {
        for k in 0..traj.len() {
            let p = traj.position(k);
            out.serialize(DumpRow {
                t: traj.t[k],
                x: p[0],
                y: p[1],
                z: p[2],
                psi: traj.psi.as_ref().map(|h| h.pos[k]),
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per (scenario kind, solver) aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: String,
    pub solver: SolverKind,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_smoothness: f64,
    pub mean_tracking: f64,
    pub mean_arc_length: f64,
    pub mean_iters: f64,
    pub mean_wall_time_ms: f64,
}

/// Scenario ids are `kind-seed`.
fn kind_of(scenario_id: &str) -> &str {
    scenario_id.rsplit_once('-').map_or(scenario_id, |(k, _)| k)
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, &'static str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((kind_of(&r.scenario_id).to_string(), r.solver.name()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let n = g.len() as f64;
            let mean = |f: fn(&RunMetrics) -> f64| g.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
            let successes = g.iter().filter(|r| r.metrics.success).count();
            SummaryRow {
                kind: kind_of(&g[0].scenario_id).to_string(),
                solver: g[0].solver,
                runs: g.len(),
                successes,
                success_rate: successes as f64 / n,
                mean_smoothness: mean(|m| m.smoothness),
                mean_tracking: mean(|m| m.tracking),
                mean_arc_length: mean(|m| m.arc_length),
                mean_iters: mean(|m| m.iterations as f64),
                mean_wall_time_ms: mean(|m| m.wall_time_ms),
            }
        })
        .collect()
}

/// Reads `dir/results.csv` and writes the grouped summary to `out`.
pub fn report(dir: &Path, out: &Path) -> BenchResult<Vec<SummaryRow>> {
    let records = read_results(File::open(dir.join(RESULTS_FILE))?)?;
    let rows = summarize(&records);
    let mut w = csv::Writer::from_path(out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
