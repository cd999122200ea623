//! Single-run experiment driver: feed a generated dataset through the
//! filter and record per-step truth, estimates and existence summaries.

use crate::engine::{Engine, StepEstimate, TrackKind};
use crate::harness::config::{ScenarioConfig, Variant};
use crate::harness::dataset::RunTruth;
use crate::harness::HarnessError;
use crate::priors::MtState;
use std::io::Write;
use std::path::Path;

/// Per-step record of one run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub step: usize,
    pub truth_mt: MtState,
    pub estimate: StepEstimate,
    pub wall_ms: f64,
}

impl RunRecord {
    pub fn position_error(&self) -> f64 {
        (self.estimate.mt.p - self.truth_mt.p).norm()
    }
}

/// Run the filter over one dataset. Step failures abort the run and are
/// surfaced with the step index.
pub fn run_slam(
    cfg: &ScenarioConfig,
    truth: &RunTruth,
    variant: Variant,
    master_seed: u64,
) -> Result<Vec<RunRecord>, HarnessError> {
    let engine = cfg.engine(variant)?;
    let mut state = engine.init(master_seed, truth.run);
    let mut records = Vec::with_capacity(cfg.steps);
    for (i, obs) in truth.observations.iter().enumerate() {
        let start = std::time::Instant::now();
        let (next, estimate) = engine
            .step(&state, obs, master_seed, truth.run)
            .map_err(|e| HarnessError::Config(format!("run {} step {}: {e}", truth.run, i + 1)))?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        records.push(RunRecord {
            step: i + 1,
            truth_mt: truth.mt[i],
            estimate,
            wall_ms,
        });
        state = next;
    }
    Ok(records)
}

/// Estimates CSV: one row per step with the state estimate, per-anchor noise
/// estimates and the direct-path existence.
pub fn write_estimates(records: &[RunRecord], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let j_count = records
        .first()
        .map(|r| r.estimate.noise.len())
        .unwrap_or(0);
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("estimates.csv"))?);
    let mut header =
        String::from("step,px_m,py_m,pz_m,vx_mps,vy_mps,vz_mps,pos_error_m,los_existence");
    for j in 0..j_count {
        header.push_str(&format!(",eta_pa{j}"));
    }
    header.push_str(",n_tracks,n_declared");
    writeln!(f, "{header}")?;
    for r in records {
        let est = &r.estimate;
        let los = est
            .tracks
            .iter()
            .find(|t| t.kind == TrackKind::Los)
            .map(|t| t.existence)
            .unwrap_or(0.0);
        let n_declared = est
            .tracks
            .iter()
            .filter(|t| t.declared && t.kind == TrackKind::Surface)
            .count();
        let mut row = format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.step,
            est.mt.p.x,
            est.mt.p.y,
            est.mt.p.z,
            est.mt.v.x,
            est.mt.v.y,
            est.mt.v.z,
            r.position_error(),
            los,
        );
        for eta in &est.noise {
            row.push_str(&format!(",{eta:.9e}"));
        }
        row.push_str(&format!(
            ",{},{}",
            est.tracks.len(),
            n_declared
        ));
        writeln!(f, "{row}")?;
    }
    Ok(())
}

/// Track CSV: one row per (step, track) with continuous estimates, existence
/// and per-anchor ray probabilities.
pub fn write_tracks(records: &[RunRecord], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let j_count = records
        .first()
        .map(|r| r.estimate.noise.len())
        .unwrap_or(0);
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("tracks.csv"))?);
    let mut header =
        String::from("step,track_id,kind,existence,declared,sfv_x_m,sfv_y_m,sfv_z_m,gamma,mu_re,mu_im");
    for j in 0..j_count {
        header.push_str(&format!(",ppr_pa{j}"));
    }
    writeln!(f, "{header}")?;
    for r in records {
        for t in &r.estimate.tracks {
            let kind = match t.kind {
                TrackKind::Los => "los",
                TrackKind::Surface => "surface",
            };
            let sfv = t.psfv.unwrap_or_else(crate::geometry::Vec3::zeros);
            let mut row = format!(
                "{},{},{},{:.9},{},{:.9},{:.9},{:.9},{:.9e},{:.9e},{:.9e}",
                r.step,
                t.id,
                kind,
                t.existence,
                t.declared as u8,
                sfv.x,
                sfv.y,
                sfv.z,
                t.gamma,
                t.mu.re,
                t.mu.im,
            );
            for p in &t.ppr {
                row.push_str(&format!(",{p:.9}"));
            }
            writeln!(f, "{row}")?;
        }
    }
    Ok(())
}

/// Wall-clock per step. Kept in its own file: timings are the one output
/// that cannot be byte-identical across reruns.
pub fn write_timings(records: &[RunRecord], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("timings.csv"))?);
    writeln!(f, "step,wall_ms")?;
    for r in records {
        writeln!(f, "{},{:.3}", r.step, r.wall_ms)?;
    }
    Ok(())
}
