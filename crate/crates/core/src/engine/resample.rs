//! Systematic resampling and kernel regularization.

use super::{EngineError, ParticleSet};
use crate::priors::{MtState, PfContinuous};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Systematic resampling: one uniform offset, a stratified sweep of the
/// cumulative weights. Particle `p` is copied `⌊Pw⌋` or `⌈Pw⌉` times.
pub fn resample_systematic<T: Clone, R: Rng + ?Sized>(
    set: &ParticleSet<T>,
    rng: &mut R,
) -> Result<ParticleSet<T>, EngineError> {
    let n = set.len();
    if n == 0 {
        return Err(EngineError::EmptyParticleSet);
    }
    let mass = set.total_weight();
    if mass <= 0.0 {
        return Err(EngineError::ZeroMass);
    }
    let start: f64 = rng.gen_range(0.0..1.0) / n as f64;
    let mut particles = Vec::with_capacity(n);
    let mut cumulative = set.weights[0] / mass;
    let mut idx = 0usize;
    for k in 0..n {
        let u = start + k as f64 / n as f64;
        while u > cumulative && idx + 1 < n {
            idx += 1;
            cumulative += set.weights[idx] / mass;
        }
        particles.push(set.particles[idx].clone());
    }
    Ok(ParticleSet {
        particles,
        weights: vec![mass / n as f64; n],
    })
}

/// Gaussian-kernel bandwidth for dimension `d` and particle count `p`:
/// `(4/((d+2)p))^(1/(d+4))`.
pub fn kernel_bandwidth(d: usize, p: usize) -> f64 {
    (4.0 / ((d as f64 + 2.0) * p as f64)).powf(1.0 / (d as f64 + 4.0))
}

/// Weighted second central moment of vector-encoded particles.
fn weighted_cov(vectors: &[Vec<f64>], weights: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let d = vectors[0].len();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (v, &w) in vectors.iter().zip(weights) {
        for i in 0..d {
            mean[i] += v[i] * w / total;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (v, &w) in vectors.iter().zip(weights) {
        for i in 0..d {
            for k in 0..d {
                cov[(i, k)] += w / total * (v[i] - mean[i]) * (v[k] - mean[k]);
            }
        }
    }
    (mean, cov)
}

/// Square root of a PSD matrix via symmetric eigendecomposition; negative
/// eigenvalues from roundoff are clamped, and an all-zero covariance gets a
/// tiny diagonal floor so the kernel never degenerates to exact duplicates.
fn cov_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let eig = cov.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = if max_ev > 0.0 { 0.0 } else { 1e-30 };
    let mut out = DMatrix::zeros(d, d);
    for k in 0..d {
        let ev = eig.eigenvalues[k].max(floor);
        let col = eig.eigenvectors.column(k) * ev.sqrt();
        for i in 0..d {
            out[(i, k)] = col[i];
        }
    }
    out
}

/// Generic regularization: perturb each particle by `h · L ξ` with `L` the
/// square root of the pre-resampling belief covariance.
pub fn regularize<T, R, Enc, Dec>(
    belief: &ParticleSet<T>,
    resampled: &mut ParticleSet<T>,
    dim: usize,
    enc: Enc,
    dec: Dec,
    rng: &mut R,
) where
    R: Rng + ?Sized,
    Enc: Fn(&T) -> Vec<f64>,
    Dec: Fn(&mut T, &[f64]),
{
    let p = resampled.len();
    if p == 0 || belief.total_weight() <= 0.0 {
        return;
    }
    let vectors: Vec<Vec<f64>> = belief.particles.iter().map(&enc).collect();
    let (_, cov) = weighted_cov(&vectors, &belief.weights);
    let l = cov_sqrt(&cov);
    let h = kernel_bandwidth(dim, p);
    for particle in &mut resampled.particles {
        let xi: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut delta = vec![0.0; dim];
        for i in 0..dim {
            for k in 0..dim {
                delta[i] += h * l[(i, k)] * xi[k];
            }
        }
        let mut v = enc(particle);
        for i in 0..dim {
            v[i] += delta[i];
        }
        dec(particle, &v);
    }
}

fn enc_mt(x: &MtState) -> Vec<f64> {
    x.as_vector().iter().cloned().collect()
}

fn dec_mt(x: &mut MtState, v: &[f64]) {
    *x = MtState::from_vector(&nalgebra::Vector6::from_row_slice(v));
}

pub fn resample_mt<R: Rng + ?Sized>(
    set: &ParticleSet<MtState>,
    rng: &mut R,
) -> Result<ParticleSet<MtState>, EngineError> {
    resample_systematic(set, rng)
}

pub fn regularize_mt<R: Rng + ?Sized>(
    belief: &ParticleSet<MtState>,
    resampled: &mut ParticleSet<MtState>,
    rng: &mut R,
) {
    regularize(belief, resampled, 6, enc_mt, dec_mt, rng);
}

fn enc_pf(pf: &PfContinuous) -> Vec<f64> {
    match &pf.psfv {
        Some(s) => {
            let v = s.vector();
            vec![v.x, v.y, v.z, pf.gamma, pf.mu.re, pf.mu.im]
        }
        None => vec![pf.gamma, pf.mu.re, pf.mu.im],
    }
}

fn dec_pf(pf: &mut PfContinuous, v: &[f64]) {
    if pf.psfv.is_some() {
        let pos = crate::geometry::Vec3::new(v[0], v[1], v[2]);
        if let Ok(s) = crate::geometry::SfvPosition::try_new(pos) {
            pf.psfv = Some(s);
        }
        pf.gamma = v[3].abs();
        pf.mu = num_complex::Complex64::new(v[4], v[5]);
    } else {
        pf.gamma = v[0].abs();
        pf.mu = num_complex::Complex64::new(v[1], v[2]);
    }
}

pub fn resample_pf<R: Rng + ?Sized>(
    set: &ParticleSet<PfContinuous>,
    rng: &mut R,
) -> Result<ParticleSet<PfContinuous>, EngineError> {
    resample_systematic(set, rng)
}

pub fn regularize_pf<R: Rng + ?Sized>(
    belief: &ParticleSet<PfContinuous>,
    resampled: &mut ParticleSet<PfContinuous>,
    rng: &mut R,
) {
    let dim = belief
        .particles
        .first()
        .map(|pf| if pf.psfv.is_some() { 6 } else { 3 })
        .unwrap_or(0);
    if dim == 0 {
        return;
    }
    regularize(belief, resampled, dim, enc_pf, dec_pf, rng);
}

pub fn resample_eta<R: Rng + ?Sized>(
    set: &ParticleSet<f64>,
    rng: &mut R,
) -> Result<ParticleSet<f64>, EngineError> {
    resample_systematic(set, rng)
}

pub fn regularize_eta<R: Rng + ?Sized>(
    belief: &ParticleSet<f64>,
    resampled: &mut ParticleSet<f64>,
    rng: &mut R,
) {
    regularize(
        belief,
        resampled,
        1,
        |&e| vec![e],
        |e, v| *e = v[0].abs().max(1e-300),
        rng,
    );
}
