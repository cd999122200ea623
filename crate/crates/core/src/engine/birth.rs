//! Feature birth: residual projection and the coherent spectrum proposal.
//!
//! New features are proposed where the observation residual (the part of the
//! signal not explained by the direct path or legacy features) carries the
//! most coherently-summed matched-filter power. The proposal is a Gaussian
//! mode-matched to the spectrum peak and moment-matched to its spread;
//! importance weights convert the draws back to the uniform birth prior.

use super::update::logsumexp;
use super::{Engine, EngineError, ParticleSet, PfTrack, PredictedState};
use crate::channel::Observation;
use crate::fastmsg::cdot;
use crate::geometry::{SfvPosition, Vec3};
use crate::priors::PfContinuous;
use nalgebra::{Cholesky, DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Orthogonal projector onto the complement of a steering-column span.
/// Rank-deficient spans fall back to a ridge-regularized pseudo-inverse.
pub struct ResidualProjector {
    columns: Vec<Vec<Complex64>>,
    /// Cholesky factor of the (possibly regularized) Gram matrix.
    gram_chol: Option<Cholesky<Complex64, nalgebra::Dyn>>,
    pub regularized: bool,
    nz: usize,
}

/// Build `Π⊥ = I − Ψ Ψ†` from the steering matrix columns.
pub fn residual_projector(columns: Vec<Vec<Complex64>>, nz: usize) -> ResidualProjector {
    if columns.is_empty() {
        return ResidualProjector {
            columns,
            gram_chol: None,
            regularized: false,
            nz,
        };
    }
    let l = columns.len();
    let mut gram = DMatrix::zeros(l, l);
    for i in 0..l {
        for k in 0..l {
            gram[(i, k)] = cdot(&columns[i], &columns[k]);
        }
    }
    // near-singular Gram factors may sneak through Cholesky with a tiny
    // positive pivot; treat those as rank-deficient too
    let pivot_floor = (1e-12 * gram.trace().re / l as f64).sqrt();
    let mut regularized = false;
    let chol = match Cholesky::new(gram.clone()) {
        Some(c) if c.l_dirty().diagonal().iter().all(|d| d.re > pivot_floor) => c,
        _ => {
            regularized = true;
            let ridge = 1e-10 * gram.trace().re.max(1e-300);
            for i in 0..l {
                gram[(i, i)] += Complex64::new(ridge, 0.0);
            }
            Cholesky::new(gram).expect("ridge-regularized Gram is positive definite")
        }
    };
    ResidualProjector {
        columns,
        gram_chol: Some(chol),
        regularized,
        nz,
    }
}

impl ResidualProjector {
    /// `Π⊥ z = z − Ψ (ΨᴴΨ)⁻¹ Ψᴴ z`.
    pub fn apply(&self, z: &[Complex64]) -> Vec<Complex64> {
        let Some(chol) = &self.gram_chol else {
            return z.to_vec();
        };
        let l = self.columns.len();
        let proj = DVector::from_iterator(l, self.columns.iter().map(|c| cdot(c, z)));
        let coeff = chol.solve(&proj);
        let mut out = z.to_vec();
        for (k, col) in self.columns.iter().enumerate() {
            let a = coeff[k];
            for (o, &c) in out.iter_mut().zip(col) {
                *o -= a * c;
            }
        }
        out
    }

    /// Materialized Nz×Nz projector matrix.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::identity(self.nz, self.nz);
        for col in 0..self.nz {
            let mut e = vec![Complex64::new(0.0, 0.0); self.nz];
            e[col] = Complex64::new(1.0, 0.0);
            let p = self.apply(&e);
            for row in 0..self.nz {
                m[(row, col)] = p[row];
            }
        }
        m
    }
}

/// Result of the birth proposal: the Gaussian parameters and the newborn
/// particle set with importance weights summing to the birth probability.
pub struct BirthProposal {
    pub mean: Vec3,
    pub cov: Matrix3<f64>,
    pub set: ParticleSet<PfContinuous>,
    /// Normalized spectrum weights over the candidate grid.
    pub candidate_weights: Vec<f64>,
}

/// Coherent matched-filter spectrum of stacked residuals at a candidate
/// feature position: `|Σ_j z̃ⱼᴴ ψⱼ(x̂, p) / Nz|²`.
fn spectrum_power(
    engine: &Engine,
    residuals: &[Vec<Complex64>],
    mt_pos: &Vec3,
    candidate: &Vec3,
) -> Result<f64, EngineError> {
    let nz = engine.steering.observation_len() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    let Ok(sfv) = SfvPosition::try_new(*candidate) else {
        return Ok(0.0);
    };
    for (j, res) in residuals.iter().enumerate() {
        match engine.steering.evaluate(j, mt_pos, Some(&sfv)) {
            Ok(psi) => acc += cdot(res, psi.as_slice()) / nz,
            Err(_) => return Ok(0.0), // degenerate candidate carries no power
        }
    }
    Ok(acc.norm_sqr())
}

/// Propose one newborn feature for partition `q`.
///
/// Candidates are drawn uniformly in the partition, weighted by the coherent
/// spectrum, mode-matched (peak candidate, lowest index on ties) for the
/// mean and moment-matched for the covariance. Particles are drawn from the
/// Gaussian; importance weights restore the uniform birth prior and are
/// normalized to total mass `p_B`. An all-zero residual degenerates to
/// uniform candidate weights.
pub fn birth_proposal<R: Rng + ?Sized>(
    engine: &Engine,
    predicted: &PredictedState,
    posterior_tracks: &[PfTrack],
    observations: &[Observation],
    q: usize,
    rng: &mut R,
) -> Result<BirthProposal, EngineError> {
    let params = &engine.params;
    let nz = engine.steering.observation_len();
    let n_grid = params.n_grid.max(1);
    let mt_pos = predicted.mt_mean.p;

    // signal subspace: direct path plus the estimated legacy features
    let mut columns: Vec<Option<SfvPosition>> = Vec::new();
    for track in posterior_tracks {
        let existence = track.existence();
        if existence <= 0.0 {
            continue;
        }
        match track.kind {
            super::TrackKind::Los => columns.push(None),
            super::TrackKind::Surface => {
                let mut acc = Vec3::zeros();
                for (pf, &w) in track.set.particles.iter().zip(&track.set.weights) {
                    if let Some(s) = &pf.psfv {
                        acc += s.vector() * (w / existence);
                    }
                }
                if let Ok(s) = SfvPosition::try_new(acc) {
                    columns.push(Some(s));
                }
            }
        }
    }

    // residual per anchor
    let mut residuals = Vec::with_capacity(observations.len());
    for (j, obs) in observations.iter().enumerate() {
        let mut cols_j = Vec::new();
        for psfv in &columns {
            if let Ok(psi) = engine.steering.evaluate(j, &mt_pos, psfv.as_ref()) {
                cols_j.push(psi.0);
            }
        }
        let projector = residual_projector(cols_j, nz);
        residuals.push(projector.apply(&obs.values));
    }

    // candidate grid and spectrum weights
    let roi = &params.dummy.roi;
    let candidates: Vec<Vec3> = (0..n_grid).map(|_| roi.sample(rng)).collect();
    let mut powers = Vec::with_capacity(n_grid);
    for c in &candidates {
        powers.push(spectrum_power(engine, &residuals, &mt_pos, c)?);
    }
    let total: f64 = powers.iter().sum();
    let (weights, peak_idx) = if total > 0.0 {
        let w: Vec<f64> = powers.iter().map(|p| p / total).collect();
        let mut best = 0usize;
        for (i, p) in powers.iter().enumerate() {
            if *p > powers[best] {
                best = i;
            }
        }
        (w, best)
    } else {
        (vec![1.0 / n_grid as f64; n_grid], 0)
    };

    let mean = candidates[peak_idx];
    let mut cov = Matrix3::zeros();
    for (c, &w) in candidates.iter().zip(&weights) {
        let d = c - mean;
        cov += w * d * d.transpose();
    }

    // draw particles from N(mean, cov)
    let l = {
        let eig = cov.symmetric_eigen();
        let mut l = Matrix3::zeros();
        for k in 0..3 {
            let ev = eig.eigenvalues[k].max(1e-30);
            let col = eig.eigenvectors.column(k) * ev.sqrt();
            for i in 0..3 {
                l[(i, k)] = col[i];
            }
        }
        l
    };
    let n = params.n_particles;
    let p_b = params.existence.birth_prob(q);
    let mut particles = Vec::with_capacity(n);
    let mut log_iw = Vec::with_capacity(n);
    let log_det_cov: f64 = {
        let eig = cov.symmetric_eigen();
        eig.eigenvalues.iter().map(|&e| e.max(1e-30).ln()).sum()
    };
    let inv = {
        let reg = cov + Matrix3::identity() * 1e-30;
        reg.try_inverse().unwrap_or_else(Matrix3::identity)
    };
    for _ in 0..n {
        let xi = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let pos = mean + l * xi;
        let (gamma, mu) = params.dummy.sample_hyper(rng);
        let inside = roi.contains(&pos) && SfvPosition::try_new(pos).is_ok();
        // importance weight ∝ 1/proposal density inside the prior support
        let log_w = if inside {
            let d = pos - mean;
            let quad = (d.transpose() * inv * d)[(0, 0)];
            // −log N(pos; mean, cov) up to constants that cancel
            0.5 * quad + 0.5 * log_det_cov
        } else {
            f64::NEG_INFINITY
        };
        log_iw.push(log_w);
        particles.push(PfContinuous {
            psfv: SfvPosition::try_new(pos).ok(),
            gamma,
            mu,
        });
    }
    // keep only particles with a valid surface position
    let log_norm = logsumexp(&log_iw);
    let weights_out: Vec<f64> = if log_norm.is_finite() {
        log_iw.iter().map(|l| p_b * (l - log_norm).exp()).collect()
    } else {
        vec![p_b / n as f64; n]
    };
    // particles that fell outside the support keep zero weight but need a
    // valid position for later transitions; replace them by the mean
    let fallback = SfvPosition::try_new(mean)
        .unwrap_or_else(|_| SfvPosition::try_new(Vec3::new(1e-6, 0.0, 0.0)).unwrap());
    for pf in &mut particles {
        if pf.psfv.is_none() {
            pf.psfv = Some(fallback);
        }
    }

    Ok(BirthProposal {
        mean,
        cov,
        set: ParticleSet {
            particles,
            weights: weights_out,
        },
        candidate_weights: weights,
    })
}
