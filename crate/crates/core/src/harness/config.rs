//! Scenario configuration: one JSON document describing the physics, the
//! scene, the filter knobs and the experiment sizes.
//!
//! Physical quantities have no defaults and all carry SI units in their
//! field names. Algorithmic knobs (thresholds, particle counts, transition
//! shapes) default to the values used throughout the experiments and can be
//! overridden per scenario.

use crate::channel::{ResponseFamily, RfParams, SteeringModel, Wavefront};
use crate::engine::{Engine, EngineParams, MtPrior, Thresholds};
use crate::geometry::{template_layout, PaConfig, RotMat, SfvPosition, Vec3};
use crate::harness::HarnessError;
use crate::priors::{BoxSupport, DummySupport, ExistenceParams, PfTransitionParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfConfig {
    pub fc_hz: f64,
    pub bandwidth_hz: f64,
    pub nf: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub position_m: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
    pub ny: usize,
    pub nz: usize,
    /// Element spacing in carrier wavelengths.
    pub spacing_wavelengths: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeConfig {
    /// Lumped complex amplitude mean, shared across anchors.
    pub mean: [f64; 2],
    /// Amplitude variance around the mean, per anchor and step.
    pub var: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    /// Mirror image of the origin across the surface, meters.
    pub sfv_m: [f64; 3],
    pub amplitude: AmplitudeConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryConfig {
    /// States drawn forward from the kinematic transition kernel, starting
    /// from a draw off the fictional start state.
    RandomNcv {
        start_position_m: [f64; 3],
        start_velocity_mps: [f64; 3],
    },
    /// Piecewise-linear interpolation between per-step waypoints; velocities
    /// from segment slopes.
    Waypoints { points: Vec<Waypoint> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub step: usize,
    pub position_m: [f64; 3],
}

/// One visibility override: component `k` (0 is the direct path) at anchor
/// `j` is forced to the given state over the step range (inclusive).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityRule {
    pub component: usize,
    pub anchor: usize,
    pub from_step: usize,
    pub to_step: usize,
    pub visible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseConfig {
    pub wavefront: Wavefront,
    pub family: ResponseFamily,
}

fn default_n_particles() -> usize {
    5000
}
fn default_n_grid() -> usize {
    2000
}
fn default_t_dec() -> f64 {
    0.5
}
fn default_t_pru() -> f64 {
    0.1
}
fn default_ps() -> f64 {
    0.8
}
fn default_ps_pr() -> f64 {
    0.9
}
fn default_pr_rev() -> f64 {
    0.1
}
fn default_pb_pr() -> f64 {
    0.9
}
fn default_mu_b() -> f64 {
    0.5
}
fn default_partitions() -> usize {
    1
}
fn default_gamma_max() -> f64 {
    5.0
}
fn default_mu_max() -> f64 {
    0.001
}
fn default_c_gamma() -> f64 {
    1000.0
}
fn default_sigma_mu() -> f64 {
    0.03
}
fn default_sigma_sfv() -> f64 {
    0.004
}
fn default_c_eta() -> f64 {
    10.0
}
fn default_eta_min() -> f64 {
    1e-9
}
fn default_eta_max() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    #[serde(default = "default_n_grid")]
    pub n_grid: usize,
    #[serde(default = "default_t_dec")]
    pub t_dec: f64,
    #[serde(default = "default_t_pru")]
    pub t_pru: f64,
    #[serde(default = "default_ps")]
    pub ps: f64,
    #[serde(default = "default_ps_pr")]
    pub ps_pr: f64,
    #[serde(default = "default_pr_rev")]
    pub pr_rev: f64,
    #[serde(default = "default_pb_pr")]
    pub pb_pr: f64,
    #[serde(default = "default_mu_b")]
    pub mu_b: f64,
    #[serde(default = "default_partitions")]
    pub partitions: usize,
    #[serde(default = "default_gamma_max")]
    pub gamma_max: f64,
    #[serde(default = "default_mu_max")]
    pub mu_max: f64,
    #[serde(default = "default_c_gamma")]
    pub c_gamma: f64,
    #[serde(default = "default_sigma_mu")]
    pub sigma_mu: f64,
    #[serde(default = "default_sigma_sfv")]
    pub sigma_sfv: f64,
    #[serde(default = "default_c_eta")]
    pub c_eta: f64,
    #[serde(default = "default_eta_min")]
    pub eta_min: f64,
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    /// Initial mobile-terminal support; explicit 3-D bounds, meters.
    pub mt_position_min_m: [f64; 3],
    pub mt_position_max_m: [f64; 3],
    pub mt_velocity_min_mps: [f64; 3],
    pub mt_velocity_max_mps: [f64; 3],
    /// Feature region of interest; defaults to the doubled terminal box.
    #[serde(default)]
    pub roi_min_m: Option<[f64; 3]>,
    #[serde(default)]
    pub roi_max_m: Option<[f64; 3]>,
}

fn default_pseudo_var() -> f64 {
    1e6
}
fn default_crlb_draws() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrlbConfig {
    #[serde(default = "default_pseudo_var")]
    pub pseudo_var: f64,
    #[serde(default = "default_crlb_draws")]
    pub mc_draws: usize,
}

impl Default for CrlbConfig {
    fn default() -> Self {
        CrlbConfig {
            pseudo_var: default_pseudo_var(),
            mc_draws: default_crlb_draws(),
        }
    }
}

/// Estimator variant: the full coherent method or the zero-mean reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Nzm,
    Zm,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nzm" => Ok(Variant::Nzm),
            "zm" => Ok(Variant::Zm),
            other => Err(format!("unknown variant '{other}' (expected nzm or zm)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rf: RfConfig,
    pub anchors: Vec<AnchorConfig>,
    pub los_amplitude: AmplitudeConfig,
    pub surfaces: Vec<SurfaceConfig>,
    pub response: ResponseConfig,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub visibility: Vec<VisibilityRule>,
    pub snr_db: f64,
    pub steps: usize,
    pub mc_runs: usize,
    pub dt_s: f64,
    /// Kinematic process-noise standard deviation, m/s².
    pub sigma_v: f64,
    pub filter: FilterConfig,
    #[serde(default)]
    pub crlb: CrlbConfig,
}

impl ScenarioConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.anchors.is_empty() {
            return fail("anchors: need at least one anchor".into());
        }
        if self.steps == 0 {
            return fail("steps: must be at least 1".into());
        }
        if self.mc_runs == 0 {
            return fail("mc_runs: must be at least 1".into());
        }
        if self.rf.nf < 2 {
            return fail(format!("rf.nf: need at least 2 frequency bins, got {}", self.rf.nf));
        }
        if self.rf.fc_hz <= 0.0 || self.rf.bandwidth_hz <= 0.0 {
            return fail("rf: carrier and bandwidth must be positive".into());
        }
        if self.dt_s <= 0.0 {
            return fail(format!("dt_s: must be positive, got {}", self.dt_s));
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if a.ny < 1 || a.nz < 1 {
                return fail(format!("anchors[{i}]: array counts must be at least 1"));
            }
            if a.spacing_wavelengths <= 0.0 {
                return fail(format!("anchors[{i}]: spacing must be positive"));
            }
        }
        for (i, s) in self.surfaces.iter().enumerate() {
            let v = Vec3::new(s.sfv_m[0], s.sfv_m[1], s.sfv_m[2]);
            if v.norm() == 0.0 {
                return fail(format!("surfaces[{i}].sfv_m: must be nonzero"));
            }
            if s.amplitude.var < 0.0 {
                return fail(format!("surfaces[{i}].amplitude.var: must be nonnegative"));
            }
        }
        for (i, r) in self.visibility.iter().enumerate() {
            if r.anchor >= self.anchors.len() {
                return fail(format!("visibility[{i}].anchor: out of range"));
            }
            if r.component > self.surfaces.len() {
                return fail(format!("visibility[{i}].component: out of range"));
            }
            if r.from_step > r.to_step {
                return fail(format!("visibility[{i}]: from_step > to_step"));
            }
        }
        if let TrajectoryConfig::Waypoints { points } = &self.trajectory {
            if points.is_empty() {
                return fail("trajectory.points: need at least one waypoint".into());
            }
            for w in points.windows(2) {
                if w[1].step <= w[0].step {
                    return fail("trajectory.points: steps must be strictly increasing".into());
                }
            }
        }
        let f = &self.filter;
        for (name, p) in [
            ("ps", f.ps),
            ("ps_pr", f.ps_pr),
            ("pr_rev", f.pr_rev),
            ("pb_pr", f.pb_pr),
            ("t_dec", f.t_dec),
            ("t_pru", f.t_pru),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("filter.{name}: probability out of [0,1]: {p}"));
            }
        }
        if f.n_particles == 0 {
            return fail("filter.n_particles: must be positive".into());
        }
        if f.eta_min <= 0.0 || f.eta_max <= f.eta_min {
            return fail("filter: need 0 < eta_min < eta_max".into());
        }
        for i in 0..3 {
            if f.mt_position_max_m[i] <= f.mt_position_min_m[i] {
                return fail(format!("filter.mt_position bounds: axis {i} empty"));
            }
        }
        Ok(())
    }

    pub fn rf_params(&self) -> Result<RfParams, HarnessError> {
        Ok(RfParams::new(self.rf.fc_hz, self.rf.bandwidth_hz, self.rf.nf)?)
    }

    pub fn pa_configs(&self) -> Result<Vec<PaConfig>, HarnessError> {
        let rf = self.rf_params()?;
        self.anchors
            .iter()
            .map(|a| {
                let d = a.spacing_wavelengths * rf.wavelength;
                Ok(PaConfig {
                    position: Vec3::new(a.position_m[0], a.position_m[1], a.position_m[2]),
                    orientation: RotMat::from_yaw_pitch_roll(
                        a.yaw_deg.to_radians(),
                        a.pitch_deg.to_radians(),
                        a.roll_deg.to_radians(),
                    ),
                    geometry: template_layout(a.ny, a.nz, d, d)?,
                })
            })
            .collect()
    }

    pub fn steering_model(&self) -> Result<SteeringModel, HarnessError> {
        Ok(SteeringModel {
            rf: self.rf_params()?,
            pas: self.pa_configs()?,
            wavefront: self.response.wavefront,
            family: self.response.family,
        })
    }

    pub fn true_sfvs(&self) -> Result<Vec<SfvPosition>, HarnessError> {
        self.surfaces
            .iter()
            .map(|s| {
                SfvPosition::try_new(Vec3::new(s.sfv_m[0], s.sfv_m[1], s.sfv_m[2]))
                    .map_err(HarnessError::from)
            })
            .collect()
    }

    pub fn roi(&self) -> BoxSupport {
        match (self.filter.roi_min_m, self.filter.roi_max_m) {
            (Some(min), Some(max)) => BoxSupport { min, max },
            _ => {
                // doubled terminal support, the mirror image of a box
                let f = &self.filter;
                BoxSupport {
                    min: [
                        2.0 * f.mt_position_min_m[0],
                        2.0 * f.mt_position_min_m[1],
                        2.0 * f.mt_position_min_m[2],
                    ],
                    max: [
                        2.0 * f.mt_position_max_m[0],
                        2.0 * f.mt_position_max_m[1],
                        2.0 * f.mt_position_max_m[2],
                    ],
                }
            }
        }
    }

    pub fn engine(&self, variant: Variant) -> Result<Engine, HarnessError> {
        let f = &self.filter;
        let params = EngineParams {
            n_particles: f.n_particles,
            n_grid: f.n_grid,
            thresholds: Thresholds {
                t_dec: f.t_dec,
                t_pru: f.t_pru,
            },
            zero_mean: variant == Variant::Zm,
            mt_prior: MtPrior {
                position: BoxSupport {
                    min: f.mt_position_min_m,
                    max: f.mt_position_max_m,
                },
                velocity: BoxSupport {
                    min: f.mt_velocity_min_mps,
                    max: f.mt_velocity_max_mps,
                },
            },
            eta_min: f.eta_min,
            eta_max: f.eta_max,
            existence: ExistenceParams {
                ps: f.ps,
                ps_pr: f.ps_pr,
                pr_rev: f.pr_rev,
                pb_pr: f.pb_pr,
                mu_b: f.mu_b,
                partition_fractions: vec![1.0 / f.partitions as f64; f.partitions],
            },
            dummy: DummySupport {
                roi: self.roi(),
                gamma_max: f.gamma_max,
                mu_max: f.mu_max,
            },
            pf_trans: PfTransitionParams {
                c_gamma: f.c_gamma,
                sigma_mu: f.sigma_mu,
                sigma_sfv: f.sigma_sfv,
            },
            c_eta: f.c_eta,
            dt: self.dt_s,
            sigma_v: self.sigma_v,
        };
        Ok(Engine::new(self.steering_model()?, params)?)
    }
}
