//! Synthetic data generation and dataset files.
//!
//! Each Monte-Carlo run owns its trajectory and feature random walks: the
//! first state is drawn from the transition kernel off the fictional start
//! state, amplitudes are drawn per (component, step, anchor) around their
//! shared means, visibility rules gate components by zeroing the amplitude,
//! and the noise variance is set from the requested SNR against the
//! sum-channel power of the first snapshot.
//!
//! Observations are stored as interleaved re/im doubles (little endian) with
//! a JSON sidecar carrying the shape; truth and visibility go to CSV.

use crate::channel::{generate_observation, snr_noise_variance, Observation, PathTruth};
use crate::geometry::{SfvPosition, Vec3};
use crate::harness::config::{ScenarioConfig, TrajectoryConfig};
use crate::harness::HarnessError;
use crate::priors::{ncv_build, sample_mt_transition, sample_sfv_walk, MtState};
use crate::rngs::{entity, stream_rng};
use num_complex::Complex64;
use std::io::Write;
use std::path::Path;

/// Ground truth and observations of one run.
#[derive(Debug, Clone)]
pub struct RunTruth {
    pub run: u64,
    /// Mobile-terminal state per step (index 0 is step 1).
    pub mt: Vec<MtState>,
    /// Feature positions per step and surface.
    pub sfvs: Vec<Vec<SfvPosition>>,
    /// Amplitudes per step, anchor and component (direct path first).
    pub amplitudes: Vec<Vec<Vec<Complex64>>>,
    /// Visibility per step, anchor and component.
    pub visible: Vec<Vec<Vec<bool>>>,
    pub noise_var: f64,
    /// Observations per step and anchor.
    pub observations: Vec<Vec<Observation>>,
}

impl RunTruth {
    pub fn visible_count(&self, step_idx: usize, j: usize) -> usize {
        self.visible[step_idx][j].iter().filter(|&&v| v).count()
    }
}

fn trajectory(
    cfg: &ScenarioConfig,
    master_seed: u64,
    run: u64,
) -> Result<Vec<MtState>, HarnessError> {
    let n = cfg.steps;
    match &cfg.trajectory {
        TrajectoryConfig::RandomNcv {
            start_position_m,
            start_velocity_mps,
        } => {
            let ncv = ncv_build(cfg.dt_s, cfg.sigma_v)?;
            let mut rng = stream_rng(master_seed, &[run, entity::TRAJECTORY]);
            let mut state = MtState {
                p: Vec3::from_row_slice(start_position_m),
                v: Vec3::from_row_slice(start_velocity_mps),
            };
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                state = sample_mt_transition(&state, &ncv, &mut rng);
                out.push(state);
            }
            Ok(out)
        }
        TrajectoryConfig::Waypoints { points } => {
            let mut out = Vec::with_capacity(n);
            for step in 1..=n {
                let pos = interpolate(points, step);
                let next = interpolate(points, step + 1);
                let v = (next - pos) / cfg.dt_s;
                out.push(MtState { p: pos, v });
            }
            Ok(out)
        }
    }
}

fn interpolate(points: &[super::config::Waypoint], step: usize) -> Vec3 {
    let at = |w: &super::config::Waypoint| Vec3::from_row_slice(&w.position_m);
    if step <= points[0].step {
        return at(&points[0]);
    }
    for w in points.windows(2) {
        if step <= w[1].step {
            let t = (step - w[0].step) as f64 / (w[1].step - w[0].step) as f64;
            return at(&w[0]) * (1.0 - t) + at(&w[1]) * t;
        }
    }
    at(points.last().unwrap())
}

fn visibility_table(cfg: &ScenarioConfig) -> Vec<Vec<Vec<bool>>> {
    let k_tilde = cfg.surfaces.len() + 1;
    let mut table = vec![vec![vec![true; k_tilde]; cfg.anchors.len()]; cfg.steps];
    for rule in &cfg.visibility {
        for step in rule.from_step..=rule.to_step.min(cfg.steps) {
            if step == 0 {
                continue;
            }
            table[step - 1][rule.anchor][rule.component] = rule.visible;
        }
    }
    table
}

/// Generate the full truth and observation set of one run.
pub fn generate_dataset(
    cfg: &ScenarioConfig,
    master_seed: u64,
    run: u64,
) -> Result<RunTruth, HarnessError> {
    let model = cfg.steering_model()?;
    let n = cfg.steps;
    let j_count = cfg.anchors.len();
    let k_tilde = cfg.surfaces.len() + 1;

    let mt = trajectory(cfg, master_seed, run)?;

    // feature random walks off the configured surfaces
    let mut sfvs = Vec::with_capacity(n);
    let mut rng_sfv = stream_rng(master_seed, &[run, entity::SFV_WALK]);
    let mut current = cfg.true_sfvs()?;
    for _ in 0..n {
        current = current
            .iter()
            .map(|s| sample_sfv_walk(s, cfg.filter.sigma_sfv, &mut rng_sfv))
            .collect();
        sfvs.push(current.clone());
    }

    // amplitudes per (step, anchor, component) around the shared means
    let mut amplitudes = Vec::with_capacity(n);
    let mut rng_amp = stream_rng(master_seed, &[run, entity::AMPLITUDES]);
    let means: Vec<Complex64> = std::iter::once(&cfg.los_amplitude)
        .chain(cfg.surfaces.iter().map(|s| &s.amplitude))
        .map(|a| Complex64::new(a.mean[0], a.mean[1]))
        .collect();
    let vars: Vec<f64> = std::iter::once(&cfg.los_amplitude)
        .chain(cfg.surfaces.iter().map(|s| &s.amplitude))
        .map(|a| a.var)
        .collect();
    for _ in 0..n {
        let mut per_step = Vec::with_capacity(j_count);
        for _ in 0..j_count {
            let per_anchor: Vec<Complex64> = (0..k_tilde)
                .map(|k| means[k] + crate::channel::complex_normal(&mut rng_amp, vars[k]))
                .collect();
            per_step.push(per_anchor);
        }
        amplitudes.push(per_step);
    }

    let visible = visibility_table(cfg);

    // noise variance from the SNR against the first snapshot's channel power
    let paths_at = |step_idx: usize, j: usize| -> Vec<PathTruth> {
        (0..k_tilde)
            .map(|k| PathTruth {
                psfv: if k == 0 {
                    None
                } else {
                    Some(sfvs[step_idx][k - 1])
                },
                amplitude: amplitudes[step_idx][j][k],
                visible: visible[step_idx][j][k],
            })
            .collect()
    };
    // the SNR reference uses anchor-wise paths of the first step
    let noise_var = {
        let per_anchor: Vec<Vec<PathTruth>> = (0..j_count).map(|j| paths_at(0, j)).collect();
        snr_from_paths(&model, &mt[0].p, &per_anchor, cfg.snr_db)?
    };

    let mut observations = Vec::with_capacity(n);
    for step_idx in 0..n {
        let mut per_step = Vec::with_capacity(j_count);
        for j in 0..j_count {
            let mut rng = stream_rng(master_seed, &[run, step_idx as u64 + 1, entity::NOISE, j as u64]);
            per_step.push(generate_observation(
                &model,
                j,
                step_idx + 1,
                &mt[step_idx].p,
                &paths_at(step_idx, j),
                noise_var,
                &mut rng,
            )?);
        }
        observations.push(per_step);
    }

    Ok(RunTruth {
        run,
        mt,
        sfvs,
        amplitudes,
        visible,
        noise_var,
        observations,
    })
}

/// Sum-channel power over anchors with per-anchor path lists.
fn snr_from_paths(
    model: &crate::channel::SteeringModel,
    p_mt: &Vec3,
    per_anchor: &[Vec<PathTruth>],
    snr_db: f64,
) -> Result<f64, HarnessError> {
    // reuse the single-list helper anchor by anchor
    let nz = model.observation_len() as f64;
    let mut total = 0.0;
    for (j, paths) in per_anchor.iter().enumerate() {
        let mut values = vec![Complex64::new(0.0, 0.0); model.observation_len()];
        for path in paths {
            if !path.visible {
                continue;
            }
            let psi = model.evaluate(j, p_mt, path.psfv.as_ref())?;
            for (v, &p) in values.iter_mut().zip(psi.as_slice()) {
                *v += path.amplitude * p;
            }
        }
        total += values.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    let p_ch = total / (nz * per_anchor.len() as f64);
    if p_ch <= 0.0 {
        return Err(HarnessError::Channel(
            crate::channel::ChannelError::ZeroChannelPower,
        ));
    }
    let _ = snr_noise_variance; // kept as the single-anchor-list entry point
    Ok(p_ch / 10f64.powf(snr_db / 10.0))
}

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

/// Write observations as interleaved re/im doubles plus a JSON sidecar.
pub fn write_observations(truth: &RunTruth, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let n = truth.observations.len();
    let j_count = truth.observations.first().map(|o| o.len()).unwrap_or(0);
    let nz = truth.observations[0][0].values.len();
    let mut bin = Vec::with_capacity(n * j_count * nz * 16);
    for per_step in &truth.observations {
        for obs in per_step {
            for v in &obs.values {
                bin.extend_from_slice(&v.re.to_le_bytes());
                bin.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    std::fs::write(dir.join("observations.bin"), bin)?;
    let sidecar = serde_json::json!({
        "shape": [n, j_count, nz],
        "dtype": "complex128",
        "layout": "interleaved_re_im",
        "endianness": "little",
        "noise_var": truth.noise_var,
    });
    std::fs::write(
        dir.join("observations.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// Read observations back from the binary blob and sidecar.
pub fn read_observations(dir: &Path) -> Result<Vec<Vec<Observation>>, HarnessError> {
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("observations.json"))?)?;
    let shape = sidecar["shape"]
        .as_array()
        .ok_or_else(|| HarnessError::Config("sidecar missing shape".into()))?;
    let (n, j_count, nz) = (
        shape[0].as_u64().unwrap() as usize,
        shape[1].as_u64().unwrap() as usize,
        shape[2].as_u64().unwrap() as usize,
    );
    let bin = std::fs::read(dir.join("observations.bin"))?;
    if bin.len() != n * j_count * nz * 16 {
        return Err(HarnessError::Config(format!(
            "observations.bin has {} bytes, expected {}",
            bin.len(),
            n * j_count * nz * 16
        )));
    }
    let mut cursor = 0;
    let mut read_f64 = |bytes: &[u8]| {
        let v = f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
        cursor += 8;
        v
    };
    let mut out = Vec::with_capacity(n);
    for step in 0..n {
        let mut per_step = Vec::with_capacity(j_count);
        for j in 0..j_count {
            let values = (0..nz)
                .map(|_| {
                    let re = read_f64(&bin);
                    let im = read_f64(&bin);
                    Complex64::new(re, im)
                })
                .collect();
            per_step.push(Observation {
                values,
                pa_index: j,
                time_index: step + 1,
            });
        }
        out.push(per_step);
    }
    Ok(out)
}

/// Truth CSV: one row per step with the terminal state, feature positions
/// and per-anchor visible-path counts.
pub fn write_truth(truth: &RunTruth, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let k = truth.sfvs.first().map(|s| s.len()).unwrap_or(0);
    let j_count = truth.visible.first().map(|v| v.len()).unwrap_or(0);
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("truth.csv"))?);
    let mut header = String::from("step,px_m,py_m,pz_m,vx_mps,vy_mps,vz_mps");
    for kk in 1..=k {
        header.push_str(&format!(",sfv{kk}_x_m,sfv{kk}_y_m,sfv{kk}_z_m"));
    }
    for j in 0..j_count {
        header.push_str(&format!(",visible_paths_pa{j}"));
    }
    header.push_str(",noise_var");
    writeln!(f, "{header}")?;
    for (i, mt) in truth.mt.iter().enumerate() {
        let mut row = format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            i + 1,
            mt.p.x,
            mt.p.y,
            mt.p.z,
            mt.v.x,
            mt.v.y,
            mt.v.z
        );
        for s in &truth.sfvs[i] {
            let v = s.vector();
            row.push_str(&format!(",{:.9},{:.9},{:.9}", v.x, v.y, v.z));
        }
        for j in 0..j_count {
            row.push_str(&format!(",{}", truth.visible_count(i, j)));
        }
        row.push_str(&format!(",{:.12e}", truth.noise_var));
        writeln!(f, "{row}")?;
    }
    Ok(())
}

/// Visibility CSV: full gating table, one row per (step, anchor, component).
pub fn write_visibility(truth: &RunTruth, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("visibility.csv"))?);
    writeln!(f, "step,anchor,component,visible")?;
    for (i, per_step) in truth.visible.iter().enumerate() {
        for (j, per_anchor) in per_step.iter().enumerate() {
            for (k, &vis) in per_anchor.iter().enumerate() {
                writeln!(f, "{},{},{},{}", i + 1, j, k, vis as u8)?;
            }
        }
    }
    Ok(())
}
