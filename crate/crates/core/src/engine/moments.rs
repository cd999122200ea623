//! Particle-approximated moment terms of the update messages.
//!
//! For each anchor the bundle carries, per track: the prior masses, the
//! ζ-weighted mean vector, the mass-weighted mean vector, the cross-feature
//! covariance column and the ray-update spike. Steering vectors pair the
//! p-th mobile-terminal particle with the p-th feature particle, which keeps
//! the per-step cost linear in the particle count.
//!
//! Each covariance column is scaled so its outer product reproduces the
//! exact second central moment of the existence-bit mixture built from the
//! same atoms: a feature with on-probability `πW` and per-particle power
//! `γ + |μ|² p̈` contributes `πW (γ + |μ|² p̈)` to the covariance, hence the
//! mass factors sit inside the square root.

use super::{Engine, EngineError, PredictedState};
use num_complex::Complex64;

/// Per-track moment data at one anchor.
#[derive(Debug, Clone)]
pub struct TrackMoments {
    /// Predicted feature existence mass `W = Σ w_α`.
    pub w_mass: f64,
    /// Predicted ray existence `ζ(1)`.
    pub zeta1: f64,
    /// `1 − ζ(1)`: ray nonexistence given feature existence.
    pub pdot_j: f64,
    /// `1 − W`: feature nonexistence.
    pub pdot: f64,
    /// `1 − ζ(1)·W`: joint path nonexistence.
    pub pddot: f64,
    /// Mass-weighted mean vector `W Σ_p w_β μ^p ψ^p` (no ζ factor).
    pub mu4: Vec<Complex64>,
    /// ζ-weighted mean vector `ζ(1) · mu4`.
    pub mu3: Vec<Complex64>,
    /// Cross-feature covariance column
    /// `Σ_p w_β sqrt(ζW (γ^p + |μ^p|² p̈)) ψ^p`.
    pub m_col: Vec<Complex64>,
    /// Ray-update spike `Σ_p w_β sqrt(W (γ^p + |μ^p|² (1−W))) ψ^p`.
    pub m_omega: Vec<Complex64>,
}

/// Moment bundle for one anchor.
#[derive(Debug, Clone)]
pub struct PaMoments {
    pub j: usize,
    /// Prior mean of the noise variance at this anchor.
    pub etabar: f64,
    pub tracks: Vec<TrackMoments>,
    /// `Σ_s mu3`, the total predicted signal mean.
    pub sum_mu3: Vec<Complex64>,
}

impl PaMoments {
    /// `Σ_{s'≠s} mu3`, the interference mean seen by track `s`.
    pub fn interference_mean(&self, s: usize) -> Vec<Complex64> {
        let mut out = self.sum_mu3.clone();
        for (o, m) in out.iter_mut().zip(&self.tracks[s].mu3) {
            *o -= m;
        }
        out
    }

    /// Covariance columns of all tracks except `s`.
    pub fn cross_columns(&self, s: usize) -> Vec<Vec<Complex64>> {
        self.tracks
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != s)
            .map(|(_, t)| t.m_col.clone())
            .collect()
    }

    /// Covariance columns of all tracks.
    pub fn all_columns(&self) -> Vec<Vec<Complex64>> {
        self.tracks.iter().map(|t| t.m_col.clone()).collect()
    }
}

/// Steering vector of track `s` at anchor `j`, paired particle `p`.
pub(super) fn paired_steering(
    engine: &Engine,
    predicted: &PredictedState,
    s: usize,
    j: usize,
    p: usize,
) -> Result<Vec<Complex64>, EngineError> {
    let x = &predicted.mt.particles[p];
    let pf = &predicted.tracks[s].set.particles[p];
    Ok(engine
        .steering
        .evaluate(j, &x.p, pf.psfv.as_ref())?
        .0)
}

/// Assemble the moment bundle for anchor `j` from the prediction-stage
/// messages. Cost O(P · Nz · S̃) plus the steering evaluations.
pub fn moment_terms(
    engine: &Engine,
    predicted: &PredictedState,
    j: usize,
) -> Result<PaMoments, EngineError> {
    let nz = engine.steering.observation_len();
    let n = predicted.mt.len();
    let zero_mean = engine.params.zero_mean;
    let w_beta = &predicted.mt.weights;

    let mut tracks = Vec::with_capacity(predicted.tracks.len());
    let mut sum_mu3 = vec![Complex64::new(0.0, 0.0); nz];
    for (s, track) in predicted.tracks.iter().enumerate() {
        let w_mass: f64 = track.set.total_weight();
        let zeta1 = track.zeta1[j];
        let pdot_j = 1.0 - zeta1;
        let pdot = 1.0 - w_mass;
        let pddot = 1.0 - zeta1 * w_mass;

        let mut mu4 = vec![Complex64::new(0.0, 0.0); nz];
        let mut m_col = vec![Complex64::new(0.0, 0.0); nz];
        let mut m_omega = vec![Complex64::new(0.0, 0.0); nz];
        let kappa_scale = (zeta1 * w_mass).max(0.0);
        let omega_scale = w_mass.max(0.0);
        for p in 0..n {
            let psi = paired_steering(engine, predicted, s, j, p)?;
            let pf = &track.set.particles[p];
            let mu = if zero_mean {
                Complex64::new(0.0, 0.0)
            } else {
                pf.mu
            };
            let wb = w_beta[p];
            let mean_w = w_mass * wb * mu;
            let col_w = wb * (kappa_scale * (pf.gamma + mu.norm_sqr() * pddot)).max(0.0).sqrt();
            let omg_w = wb * (omega_scale * (pf.gamma + mu.norm_sqr() * pdot)).max(0.0).sqrt();
            for i in 0..nz {
                mu4[i] += mean_w * psi[i];
                m_col[i] += col_w * psi[i];
                m_omega[i] += omg_w * psi[i];
            }
        }
        let mu3: Vec<Complex64> = mu4.iter().map(|&v| v * zeta1).collect();
        for i in 0..nz {
            sum_mu3[i] += mu3[i];
        }
        tracks.push(TrackMoments {
            w_mass,
            zeta1,
            pdot_j,
            pdot,
            pddot,
            mu4,
            mu3,
            m_col,
            m_omega,
        });
        let _ = s;
    }

    Ok(PaMoments {
        j,
        etabar: predicted.etabar[j],
        tracks,
        sum_mu3,
    })
}

/// Per-particle spike scale of the feature update under the existence
/// hypothesis: `q = ζ(1) (γ^p + |μ^p|² (1−ζ(1)))`, the exact second moment
/// of the ray bit at the paired sample.
pub(super) fn kappa_spike_scale(tm: &TrackMoments, gamma: f64, mu_norm_sqr: f64) -> f64 {
    tm.zeta1 * (gamma + mu_norm_sqr * tm.pdot_j)
}

/// Per-particle covariance column of the mobile-terminal update:
/// `sqrt(ζW (γ^p + |μ^p|² p̈))` on the paired steering vector.
pub(super) fn iota_column_scale(tm: &TrackMoments, gamma: f64, mu_norm_sqr: f64) -> f64 {
    (tm.zeta1 * tm.w_mass * (gamma + mu_norm_sqr * tm.pddot)).max(0.0).sqrt()
}

/// Per-particle mean weight of the mobile-terminal update: `ζW μ^p`.
pub(super) fn iota_mean_scale(tm: &TrackMoments, mu: Complex64) -> Complex64 {
    mu * (tm.zeta1 * tm.w_mass)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::channel::{ResponseFamily, SteeringModel, Wavefront};
    use crate::engine::{EngineParams, MtPrior, ParticleSet, PredictedTrack, Thresholds, TrackKind};
    use crate::geometry::{template_layout, PaConfig, RotMat, SfvPosition, Vec3};
    use crate::priors::{
        BoxSupport, DummySupport, ExistenceParams, MtState, PfContinuous, PfTransitionParams,
    };

    pub(crate) fn tiny_engine(n_pa: usize) -> Engine {
        let rf = crate::channel::RfParams::new(3.5e9, 100e6, 2).unwrap();
        let lambda = rf.wavelength;
        let pas = (0..n_pa)
            .map(|j| PaConfig {
                position: Vec3::new(-2.0 + 4.0 * j as f64, -1.5, 0.5),
                orientation: RotMat::about_z(0.3 * j as f64),
                geometry: template_layout(2, 2, lambda / 2.0, lambda / 2.0).unwrap(),
            })
            .collect();
        let steering = SteeringModel {
            rf,
            pas,
            wavefront: Wavefront::Planar,
            family: ResponseFamily::UnitModulus,
        };
        let roi = BoxSupport {
            min: [-8.0, -8.0, -2.0],
            max: [8.0, 8.0, 2.0],
        };
        let params = EngineParams {
            n_particles: 2,
            n_grid: 16,
            thresholds: Thresholds {
                t_dec: 0.5,
                t_pru: 0.1,
            },
            zero_mean: false,
            mt_prior: MtPrior {
                position: BoxSupport {
                    min: [-3.5, -1.0, -1.0],
                    max: [4.5, 4.5, 1.0],
                },
                velocity: BoxSupport {
                    min: [-1.0; 3],
                    max: [1.0; 3],
                },
            },
            eta_min: 1e-9,
            eta_max: 1e-4,
            existence: ExistenceParams {
                ps: 0.8,
                ps_pr: 0.9,
                pr_rev: 0.1,
                pb_pr: 0.9,
                mu_b: 0.5,
                partition_fractions: vec![1.0],
            },
            dummy: DummySupport {
                roi,
                gamma_max: 5.0,
                mu_max: 0.001,
            },
            pf_trans: PfTransitionParams {
                c_gamma: 1000.0,
                sigma_mu: 0.03,
                sigma_sfv: 0.004,
            },
            c_eta: 10.0,
            dt: 0.1,
            sigma_v: 0.5,
        };
        Engine::new(steering, params).unwrap()
    }

    pub(crate) fn predicted_fixture(engine: &Engine, n_particles: usize) -> PredictedState {
        let j = engine.n_anchors();
        let mt = ParticleSet {
            particles: (0..n_particles)
                .map(|p| MtState {
                    p: Vec3::new(1.0 + 0.1 * p as f64, 2.0, 0.3),
                    v: Vec3::zeros(),
                })
                .collect(),
            weights: vec![1.0 / n_particles as f64; n_particles],
        };
        let mt_mean = mt.particles[0];
        let track = PredictedTrack {
            id: 7,
            kind: TrackKind::Surface,
            set: ParticleSet {
                particles: (0..n_particles)
                    .map(|p| PfContinuous {
                        psfv: Some(
                            SfvPosition::try_new(Vec3::new(6.0 + 0.01 * p as f64, 0.5, 0.0))
                                .unwrap(),
                        ),
                        gamma: 0.02 + 0.01 * p as f64,
                        mu: Complex64::new(0.4, -0.1 * p as f64),
                    })
                    .collect(),
                weights: vec![0.3 / n_particles as f64; n_particles],
            },
            zeta1: vec![0.7; j],
        };
        PredictedState {
            step: 1,
            mt,
            mt_mean,
            noise: (0..j)
                .map(|_| ParticleSet {
                    particles: vec![1e-4; n_particles],
                    weights: vec![1.0 / n_particles as f64; n_particles],
                })
                .collect(),
            etabar: vec![1e-4; j],
            tracks: vec![track],
            next_track_id: 8,
        }
    }

    #[test]
    fn single_particle_mean_term_is_weighted_steering() {
        // P = 1: μ̃₃ = ζ(1) · w_α · μ · ψ exactly
        let engine = tiny_engine(1);
        let predicted = predicted_fixture(&engine, 1);
        let b = moment_terms(&engine, &predicted, 0).unwrap();
        let tm = &b.tracks[0];
        let psi = paired_steering(&engine, &predicted, 0, 0, 0).unwrap();
        let pf = &predicted.tracks[0].set.particles[0];
        let w_alpha = 0.3;
        for i in 0..psi.len() {
            let expect = psi[i] * pf.mu * w_alpha * 0.7;
            assert!((tm.mu3[i] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn zeta_zero_kills_zeta_weighted_terms() {
        let engine = tiny_engine(1);
        let mut predicted = predicted_fixture(&engine, 2);
        predicted.tracks[0].zeta1 = vec![0.0];
        let b = moment_terms(&engine, &predicted, 0).unwrap();
        let tm = &b.tracks[0];
        assert!(tm.mu3.iter().all(|v| v.norm() == 0.0));
        assert!(tm.m_col.iter().all(|v| v.norm() == 0.0));
        // ω spike does not carry ζ and must survive
        assert!(tm.m_omega.iter().any(|v| v.norm() > 0.0));
    }

    #[test]
    fn two_particle_terms_match_hand_sum() {
        let engine = tiny_engine(1);
        let predicted = predicted_fixture(&engine, 2);
        let b = moment_terms(&engine, &predicted, 0).unwrap();
        let tm = &b.tracks[0];
        let track = &predicted.tracks[0];
        let w_mass = track.set.total_weight();
        let zeta1 = 0.7;
        let pddot = 1.0 - zeta1 * w_mass;

        let nz = engine.steering.observation_len();
        let mut mu3 = vec![Complex64::new(0.0, 0.0); nz];
        let mut m_col = vec![Complex64::new(0.0, 0.0); nz];
        for p in 0..2 {
            let psi = paired_steering(&engine, &predicted, 0, 0, p).unwrap();
            let pf = &track.set.particles[p];
            let wb = predicted.mt.weights[p];
            let cw = wb * (zeta1 * w_mass * (pf.gamma + pf.mu.norm_sqr() * pddot)).sqrt();
            for i in 0..nz {
                mu3[i] += zeta1 * w_mass * wb * pf.mu * psi[i];
                m_col[i] += cw * psi[i];
            }
        }
        for i in 0..nz {
            assert!((tm.mu3[i] - mu3[i]).norm() < 1e-13);
            assert!((tm.m_col[i] - m_col[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn zero_mean_variant_drops_mean_vectors() {
        let mut engine = tiny_engine(1);
        engine.params.zero_mean = true;
        let predicted = predicted_fixture(&engine, 2);
        let b = moment_terms(&engine, &predicted, 0).unwrap();
        assert!(b.sum_mu3.iter().all(|v| v.norm() == 0.0));
        assert!(b.tracks[0].mu4.iter().all(|v| v.norm() == 0.0));
        // covariance columns keep the γ part
        assert!(b.tracks[0].m_col.iter().any(|v| v.norm() > 0.0));
    }
}
