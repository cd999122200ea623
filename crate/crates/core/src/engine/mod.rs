//! The particle-based belief-propagation SLAM filter.
//!
//! One step runs the message phases in series: (i) prediction messages from
//! the previous beliefs, (ii) prior messages into the likelihood factors,
//! (iii) moment-matched update messages back to every state variable, then
//! belief normalization, feature birth, resampling/regularization, track
//! management and estimation. Every message is computed exactly once.
//!
//! Per-particle likelihood evaluations run data-parallel with results
//! collected in particle order and reduced sequentially, so single- and
//! multi-threaded runs produce identical output. All sampling draws from
//! stream-keyed generators owned by the step.

mod birth;
mod moments;
mod resample;
mod update;

pub use birth::{birth_proposal, residual_projector, BirthProposal, ResidualProjector};
pub use moments::{moment_terms, PaMoments, TrackMoments};
pub use resample::{kernel_bandwidth, regularize, resample_systematic};
pub use update::{
    iota_logs, kappa_logs, logistic, logsumexp, nu_logs, omega_logs, update_mt, update_noise,
    update_pf, update_pr, PfUpdate,
};

use crate::channel::{Observation, SteeringModel};
use crate::geometry::Vec3;
use crate::priors::{
    ncv_build, sample_mt_transition, sample_pf_transition, BoxSupport, DummySupport,
    ExistenceParams, MtState, NcvModel, PfContinuous, PfTransitionParams,
};
use crate::rngs::{entity, stream_rng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("particle set is empty")]
    EmptyParticleSet,
    #[error("particle weights sum to zero")]
    ZeroMass,
    #[error(transparent)]
    Prior(#[from] crate::priors::PriorError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
}

/// Weighted particle cloud representing one belief. Weights sum to 1 for the
/// mobile-terminal and noise beliefs and to the existence probability for
/// feature beliefs.
#[derive(Debug, Clone)]
pub struct ParticleSet<T> {
    pub particles: Vec<T>,
    pub weights: Vec<f64>,
}

impl<T> ParticleSet<T> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Rescale weights to the given total mass.
    pub fn set_mass(&mut self, mass: f64) -> Result<(), EngineError> {
        let total = self.total_weight();
        if total <= 0.0 {
            return Err(EngineError::ZeroMass);
        }
        let k = mass / total;
        for w in &mut self.weights {
            *w *= k;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackKind {
    /// The direct path; never pruned.
    Los,
    Surface,
}

/// One potential feature with its existence mass and per-anchor ray
/// visibility probabilities.
#[derive(Debug, Clone)]
pub struct PfTrack {
    pub id: u64,
    pub kind: TrackKind,
    pub set: ParticleSet<PfContinuous>,
    /// Posterior ray existence probability per anchor.
    pub ppr: Vec<f64>,
    pub declared: bool,
}

impl PfTrack {
    pub fn existence(&self) -> f64 {
        self.set.total_weight()
    }
}

/// Full filter state after one step.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub step: usize,
    pub mt: ParticleSet<MtState>,
    /// One noise-variance belief per anchor.
    pub noise: Vec<ParticleSet<f64>>,
    pub los: PfTrack,
    pub features: Vec<PfTrack>,
    pub next_track_id: u64,
}

impl FilterState {
    /// All tracks, direct path first.
    pub fn tracks(&self) -> Vec<&PfTrack> {
        std::iter::once(&self.los).chain(self.features.iter()).collect()
    }

    pub fn tracks_mut(&mut self) -> Vec<&mut PfTrack> {
        std::iter::once(&mut self.los)
            .chain(self.features.iter_mut())
            .collect()
    }
}

/// Thresholds for declaration and pruning.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_dec: f64,
    pub t_pru: f64,
}

/// Uniform support of the initial mobile-terminal belief.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtPrior {
    pub position: BoxSupport,
    pub velocity: BoxSupport,
}

/// All filter knobs. Physical quantities come from the scenario; these are
/// the algorithmic parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineParams {
    pub n_particles: usize,
    /// Candidate count of the birth-proposal spectrum grid.
    pub n_grid: usize,
    pub thresholds: Thresholds,
    /// Zero-mean variant: amplitude means are forced out of all message
    /// moments, reducing fusion to noncoherent operation.
    pub zero_mean: bool,
    pub mt_prior: MtPrior,
    pub eta_min: f64,
    pub eta_max: f64,
    pub existence: ExistenceParams,
    pub dummy: DummySupport,
    pub pf_trans: PfTransitionParams,
    /// Gamma-kernel shape of the noise-variance transition.
    pub c_eta: f64,
    pub dt: f64,
    pub sigma_v: f64,
}

/// The filter with its fixed infrastructure model.
#[derive(Debug, Clone)]
pub struct Engine {
    pub steering: SteeringModel,
    pub params: EngineParams,
    pub ncv: NcvModel,
}

/// Prediction-stage representation of one track.
#[derive(Debug, Clone)]
pub struct PredictedTrack {
    pub id: u64,
    pub kind: TrackKind,
    /// Particles with survival-scaled weights; total mass is the predicted
    /// existence probability.
    pub set: ParticleSet<PfContinuous>,
    /// Predicted ray existence ζ(1) per anchor.
    pub zeta1: Vec<f64>,
}

/// Output of the prediction phase: every prior message the likelihood
/// factors consume.
#[derive(Debug, Clone)]
pub struct PredictedState {
    pub step: usize,
    pub mt: ParticleSet<MtState>,
    pub mt_mean: MtState,
    pub noise: Vec<ParticleSet<f64>>,
    /// Prior noise-variance mean per anchor.
    pub etabar: Vec<f64>,
    pub tracks: Vec<PredictedTrack>,
    pub next_track_id: u64,
}

/// Per-step point estimates and existence summaries.
#[derive(Debug, Clone)]
pub struct TrackEstimate {
    pub id: u64,
    pub kind: TrackKind,
    pub existence: f64,
    pub declared: bool,
    pub psfv: Option<Vec3>,
    pub gamma: f64,
    pub mu: num_complex::Complex64,
    pub ppr: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepEstimate {
    pub step: usize,
    pub mt: MtState,
    pub noise: Vec<f64>,
    pub tracks: Vec<TrackEstimate>,
}

impl Engine {
    pub fn new(steering: SteeringModel, params: EngineParams) -> Result<Self, EngineError> {
        let ncv = ncv_build(params.dt, params.sigma_v)?;
        Ok(Engine {
            steering,
            params,
            ncv,
        })
    }

    pub fn n_anchors(&self) -> usize {
        self.steering.n_anchors()
    }

    /// Draw the initial beliefs. The direct-path track is introduced like a
    /// newborn feature: amplitude hyperparameters from the birth hyperpriors,
    /// existence at the partition birth probability.
    pub fn init(&self, master_seed: u64, run: u64) -> FilterState {
        let p = &self.params;
        let n = p.n_particles;
        let mut rng = stream_rng(master_seed, &[run, 0, entity::FILTER_INIT]);
        let mt = ParticleSet {
            particles: (0..n)
                .map(|_| MtState {
                    p: p.mt_prior.position.sample(&mut rng),
                    v: p.mt_prior.velocity.sample(&mut rng),
                })
                .collect(),
            weights: vec![1.0 / n as f64; n],
        };
        let noise = (0..self.n_anchors())
            .map(|_| ParticleSet {
                particles: (0..n)
                    .map(|_| rng.gen_range(p.eta_min..=p.eta_max))
                    .collect(),
                weights: vec![1.0 / n as f64; n],
            })
            .collect();
        let p_b = p.existence.birth_prob(0);
        let los = PfTrack {
            id: 0,
            kind: TrackKind::Los,
            set: ParticleSet {
                particles: (0..n)
                    .map(|_| {
                        let (gamma, mu) = p.dummy.sample_hyper(&mut rng);
                        PfContinuous {
                            psfv: None,
                            gamma,
                            mu,
                        }
                    })
                    .collect(),
                weights: vec![p_b / n as f64; n],
            },
            ppr: vec![p.existence.pb_pr; self.n_anchors()],
            declared: false,
        };
        FilterState {
            step: 0,
            mt,
            noise,
            los,
            features: Vec::new(),
            next_track_id: 1,
        }
    }

    /// Phase (i)/(ii): propagate every belief through its transition kernel.
    /// Weights are carried; feature masses are scaled by the survival
    /// probability and ray probabilities pass through the two-state kernel.
    pub fn predict(
        &self,
        state: &FilterState,
        master_seed: u64,
        run: u64,
    ) -> Result<PredictedState, EngineError> {
        if state.mt.is_empty() {
            return Err(EngineError::EmptyParticleSet);
        }
        let step = state.step as u64 + 1;
        let p = &self.params;

        let mut rng = stream_rng(master_seed, &[run, step, entity::PREDICT_MT]);
        let mt = ParticleSet {
            particles: state
                .mt
                .particles
                .iter()
                .map(|x| sample_mt_transition(x, &self.ncv, &mut rng))
                .collect(),
            weights: state.mt.weights.clone(),
        };
        let mt_mean = weighted_mt_mean(&mt);

        let mut rng = stream_rng(master_seed, &[run, step, entity::PREDICT_NOISE]);
        let mut noise = Vec::with_capacity(state.noise.len());
        let mut etabar = Vec::with_capacity(state.noise.len());
        for set in &state.noise {
            let particles = set
                .particles
                .iter()
                .map(|&eta| crate::priors::sample_gamma_transition(eta, p.c_eta, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let next = ParticleSet {
                particles,
                weights: set.weights.clone(),
            };
            etabar.push(
                next.particles
                    .iter()
                    .zip(&next.weights)
                    .map(|(&e, &w)| e * w)
                    .sum(),
            );
            noise.push(next);
        }

        let mut rng = stream_rng(master_seed, &[run, step, entity::PREDICT_PF]);
        let mut tracks = Vec::new();
        for track in state.tracks() {
            let particles = track
                .set
                .particles
                .iter()
                .map(|pf| sample_pf_transition(pf, &p.pf_trans, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let weights: Vec<f64> = track
                .set
                .weights
                .iter()
                .map(|w| p.existence.ps * w)
                .collect();
            let zeta1 = track
                .ppr
                .iter()
                .map(|&b| crate::priors::pr_transition(b, p.existence.ps_pr, p.existence.pr_rev).0)
                .collect();
            tracks.push(PredictedTrack {
                id: track.id,
                kind: track.kind,
                set: ParticleSet { particles, weights },
                zeta1,
            });
        }

        Ok(PredictedState {
            step: state.step + 1,
            mt,
            mt_mean,
            noise,
            etabar,
            tracks,
            next_track_id: state.next_track_id,
        })
    }

    /// One full filter step.
    pub fn step(
        &self,
        state: &FilterState,
        observations: &[Observation],
        master_seed: u64,
        run: u64,
    ) -> Result<(FilterState, StepEstimate), EngineError> {
        assert_eq!(observations.len(), self.n_anchors());
        let predicted = self.predict(state, master_seed, run)?;
        let step = predicted.step as u64;

        // phase (iii): update messages, one moment bundle per anchor
        let bundles: Vec<PaMoments> = (0..self.n_anchors())
            .map(|j| moment_terms(self, &predicted, j))
            .collect::<Result<Vec<_>, _>>()?;

        let mt_post = update_mt(self, &predicted, observations, &bundles)?;

        let mut tracks_post = Vec::with_capacity(predicted.tracks.len());
        for (s, track) in predicted.tracks.iter().enumerate() {
            let upd: PfUpdate = update_pf(self, &predicted, s, observations, &bundles)?;
            let ppr: Vec<f64> = (0..self.n_anchors())
                .map(|j| update_pr(self, &predicted, s, j, observations, &bundles))
                .collect();
            tracks_post.push(PfTrack {
                id: track.id,
                kind: track.kind,
                set: ParticleSet {
                    particles: track.set.particles.clone(),
                    weights: upd.weights,
                },
                ppr,
                declared: false,
            });
        }

        let noise_post = (0..self.n_anchors())
            .map(|j| update_noise(self, &predicted, j, &observations[j], &bundles[j]))
            .collect::<Result<Vec<_>, _>>()?;

        // birth of one new feature per partition from the residual spectrum
        let mut rng_birth = stream_rng(master_seed, &[run, step, entity::BIRTH]);
        let mut next_track_id = predicted.next_track_id;
        let mut newborns = Vec::new();
        for q in 0..self.params.existence.partition_fractions.len() {
            let proposal = birth_proposal(
                self,
                &predicted,
                &tracks_post,
                observations,
                q,
                &mut rng_birth,
            )?;
            newborns.push(PfTrack {
                id: next_track_id,
                kind: TrackKind::Surface,
                set: proposal.set,
                ppr: vec![self.params.existence.pb_pr; self.n_anchors()],
                declared: false,
            });
            next_track_id += 1;
        }

        // resample and regularize every belief
        let mut rng_res = stream_rng(master_seed, &[run, step, entity::RESAMPLE]);
        let mut rng_reg = stream_rng(master_seed, &[run, step, entity::REGULARIZE]);
        let mut mt = resample::resample_mt(&mt_post, &mut rng_res)?;
        resample::regularize_mt(&mt_post, &mut mt, &mut rng_reg);

        let mut noise = Vec::with_capacity(noise_post.len());
        for set in &noise_post {
            let mut res = resample::resample_eta(set, &mut rng_res)?;
            resample::regularize_eta(set, &mut res, &mut rng_reg);
            noise.push(res);
        }

        let mut all_tracks: Vec<PfTrack> = tracks_post;
        all_tracks.extend(newborns);
        let mut resampled_tracks = Vec::with_capacity(all_tracks.len());
        for track in &all_tracks {
            let existence = track.existence();
            if existence <= 0.0 && track.kind == TrackKind::Surface {
                // dead newborn or collapsed track; keep for pruning below
                resampled_tracks.push(track.clone());
                continue;
            }
            let mut set = resample::resample_pf(&track.set, &mut rng_res)?;
            resample::regularize_pf(&track.set, &mut set, &mut rng_reg);
            resampled_tracks.push(PfTrack {
                set,
                ..track.clone()
            });
        }

        // manage: declare and prune (the direct path is exempt from pruning)
        let t = self.params.thresholds;
        let mut los = None;
        let mut features = Vec::new();
        for mut track in resampled_tracks {
            track.declared = track.existence() > t.t_dec;
            match track.kind {
                TrackKind::Los => los = Some(track),
                TrackKind::Surface => {
                    if track.existence() >= t.t_pru {
                        features.push(track);
                    }
                }
            }
        }

        let new_state = FilterState {
            step: predicted.step,
            mt,
            noise,
            los: los.expect("direct-path track is never pruned"),
            features,
            next_track_id,
        };
        let estimate = estimate(&new_state);
        Ok((new_state, estimate))
    }
}

fn weighted_mt_mean(set: &ParticleSet<MtState>) -> MtState {
    let total = set.total_weight();
    let mut acc = nalgebra::Vector6::zeros();
    for (x, &w) in set.particles.iter().zip(&set.weights) {
        acc += x.as_vector() * w;
    }
    MtState::from_vector(&(acc / total))
}

/// MMSE estimates: weighted means, with feature states conditioned on
/// existence (weights renormalized by the existence mass).
pub fn estimate(state: &FilterState) -> StepEstimate {
    let mt = weighted_mt_mean(&state.mt);
    let noise = state
        .noise
        .iter()
        .map(|set| {
            let total = set.total_weight();
            set.particles
                .iter()
                .zip(&set.weights)
                .map(|(&e, &w)| e * w)
                .sum::<f64>()
                / total
        })
        .collect();
    let tracks = state
        .tracks()
        .into_iter()
        .map(|track| {
            let existence = track.existence();
            let scale = if existence > 0.0 { 1.0 / existence } else { 0.0 };
            let mut psfv = Vec3::zeros();
            let mut gamma = 0.0;
            let mut mu = num_complex::Complex64::new(0.0, 0.0);
            let mut has_psfv = false;
            for (pf, &w) in track.set.particles.iter().zip(&track.set.weights) {
                let w = w * scale;
                if let Some(s) = &pf.psfv {
                    psfv += s.vector() * w;
                    has_psfv = true;
                }
                gamma += pf.gamma * w;
                mu += pf.mu * w;
            }
            TrackEstimate {
                id: track.id,
                kind: track.kind,
                existence,
                declared: track.declared,
                psfv: has_psfv.then_some(psfv),
                gamma,
                mu,
                ppr: track.ppr.clone(),
            }
        })
        .collect();
    StepEstimate {
        step: state.step,
        mt,
        noise,
        tracks,
    }
}

use rand::Rng;
