//! State-transition and birth densities: sampling, density evaluation and
//! the Poisson→Bernoulli birth conversion.
//!
//! All kernels are stateless; the caller owns the RNG streams so that
//! sampling stays reproducible under any evaluation order.

use crate::geometry::{SfvPosition, Vec3};
use nalgebra::{Matrix3, Matrix6, Matrix6x3, Vector6};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("gamma transition needs positive mean and shape (mean={mean}, shape={shape})")]
    InvalidGamma { mean: f64, shape: f64 },
}

/// Mobile-terminal kinematic state: position and velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtState {
    pub p: Vec3,
    pub v: Vec3,
}

impl MtState {
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        MtState {
            p: Vec3::new(x[0], x[1], x[2]),
            v: Vec3::new(x[3], x[4], x[5]),
        }
    }
}

/// Nearly-constant-velocity transition model. The process noise enters as a
/// white acceleration shared between the position and velocity blocks, so
/// `Q = σ_v² Γ Γᵀ` has rank 3.
#[derive(Debug, Clone)]
pub struct NcvModel {
    pub dt: f64,
    pub sigma_v: f64,
    pub f: Matrix6<f64>,
    pub q: Matrix6<f64>,
    pub gain: Matrix6x3<f64>,
}

pub fn ncv_build(dt: f64, sigma_v: f64) -> Result<NcvModel, PriorError> {
    if dt <= 0.0 {
        return Err(PriorError::NonPositiveDt(dt));
    }
    let mut f = Matrix6::identity();
    f[(0, 3)] = dt;
    f[(1, 4)] = dt;
    f[(2, 5)] = dt;
    let mut gain = Matrix6x3::zeros();
    let half_dt2 = dt * dt / 2.0;
    for i in 0..3 {
        gain[(i, i)] = half_dt2;
        gain[(i + 3, i)] = dt;
    }
    let q = sigma_v * sigma_v * gain * gain.transpose();
    Ok(NcvModel {
        dt,
        sigma_v,
        f,
        q,
        gain,
    })
}

impl NcvModel {
    pub fn propagate_mean(&self, x: &MtState) -> MtState {
        MtState::from_vector(&(self.f * x.as_vector()))
    }

    /// Standard deviation of each position coordinate one step ahead.
    pub fn position_step_std(&self) -> f64 {
        self.sigma_v * self.dt * self.dt / 2.0
    }

    pub fn velocity_step_std(&self) -> f64 {
        self.sigma_v * self.dt
    }
}

/// Draw the next kinematic state: `x' = F x + Γ a`, `a ~ N(0, σ_v² I₃)`.
pub fn sample_mt_transition<R: Rng + ?Sized>(x: &MtState, model: &NcvModel, rng: &mut R) -> MtState {
    let accel = Vec3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * model.sigma_v;
    MtState::from_vector(&(model.f * x.as_vector() + model.gain * accel))
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-d * d / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

impl NcvModel {
    /// Density of a single position coordinate one step ahead; the transition
    /// covariance is rank-3, so densities are only proper on the marginals.
    pub fn position_marginal_pdf(&self, next_pi: f64, prev: &MtState, axis: usize) -> f64 {
        let mean = prev.p[axis] + prev.v[axis] * self.dt;
        let std = self.position_step_std();
        normal_pdf(next_pi, mean, std * std)
    }

    pub fn velocity_marginal_pdf(&self, next_vi: f64, prev: &MtState, axis: usize) -> f64 {
        let mean = prev.v[axis];
        let std = self.velocity_step_std();
        normal_pdf(next_vi, mean, std * std)
    }
}

/// Draw from `Gamma(shape = c, scale = prev/c)`; mean `prev`, variance
/// `prev²/c`.
pub fn sample_gamma_transition<R: Rng + ?Sized>(
    prev: f64,
    shape: f64,
    rng: &mut R,
) -> Result<f64, PriorError> {
    if prev <= 0.0 || shape <= 0.0 {
        return Err(PriorError::InvalidGamma { mean: prev, shape });
    }
    let dist = Gamma::new(shape, prev / shape).map_err(|_| PriorError::InvalidGamma {
        mean: prev,
        shape,
    })?;
    Ok(dist.sample(rng))
}

/// Complex Gaussian step `CN(prev, σ_μ²)`.
pub fn sample_mu_transition<R: Rng + ?Sized>(
    prev: Complex64,
    sigma_mu: f64,
    rng: &mut R,
) -> Complex64 {
    if sigma_mu == 0.0 {
        return prev;
    }
    prev + crate::channel::complex_normal(rng, sigma_mu * sigma_mu)
}

/// Isotropic Gaussian random-walk step on the SFV position.
pub fn sample_sfv_walk<R: Rng + ?Sized>(
    prev: &SfvPosition,
    sigma_sfv: f64,
    rng: &mut R,
) -> SfvPosition {
    let step = Vec3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * sigma_sfv;
    // the origin has measure zero; fall back to the previous point if hit
    SfvPosition::try_new(prev.vector() + step).unwrap_or(*prev)
}

/// Poisson→Bernoulli birth conversion: `p_B = μ/(1+μ)` for partition mean μ.
pub fn birth_bernoulli(mu_b: f64) -> f64 {
    mu_b / (1.0 + mu_b)
}

/// Potential-propagation-ray prediction:
/// `ζ(1) = p_s^PR b + p_rev (1−b)` and `ζ(0) = 1 − ζ(1)`.
pub fn pr_transition(prev_prob: f64, ps_pr: f64, pr_rev: f64) -> (f64, f64) {
    let zeta1 = ps_pr * prev_prob + pr_rev * (1.0 - prev_prob);
    (zeta1, 1.0 - zeta1)
}

/// Continuous potential-feature state: SFV position (absent for the direct
/// path), amplitude variance and complex amplitude mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfContinuous {
    pub psfv: Option<SfvPosition>,
    pub gamma: f64,
    pub mu: Complex64,
}

/// Transition hyperparameters for the feature state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PfTransitionParams {
    /// Gamma-kernel shape for the amplitude variance.
    pub c_gamma: f64,
    /// Complex Gaussian step size for the amplitude mean.
    pub sigma_mu: f64,
    /// Random-walk step for the SFV position, meters.
    pub sigma_sfv: f64,
}

/// One survival-branch transition draw of the full continuous feature state.
pub fn sample_pf_transition<R: Rng + ?Sized>(
    prev: &PfContinuous,
    params: &PfTransitionParams,
    rng: &mut R,
) -> Result<PfContinuous, PriorError> {
    Ok(PfContinuous {
        psfv: prev
            .psfv
            .as_ref()
            .map(|s| sample_sfv_walk(s, params.sigma_sfv, rng)),
        gamma: sample_gamma_transition(prev.gamma.max(1e-300), params.c_gamma, rng)?,
        mu: sample_mu_transition(prev.mu, params.sigma_mu, rng),
    })
}

/// Existence bookkeeping probabilities. Partition volumes must sum to the
/// region-of-interest volume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExistenceParams {
    /// Feature survival probability.
    pub ps: f64,
    /// Ray survival probability.
    pub ps_pr: f64,
    /// Ray revival probability.
    pub pr_rev: f64,
    /// Ray birth probability for newborn features.
    pub pb_pr: f64,
    /// Poisson mean of feature births over the whole region.
    pub mu_b: f64,
    /// Fractional volumes of the birth partitions (sum 1).
    pub partition_fractions: Vec<f64>,
}

impl ExistenceParams {
    /// Bernoulli birth probability of partition `q`.
    pub fn birth_prob(&self, q: usize) -> f64 {
        birth_bernoulli(self.mu_b * self.partition_fractions[q])
    }
}

/// Axis-aligned box, used for the feature region of interest and for the
/// mobile-terminal prior support.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoxSupport {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxSupport {
    pub fn volume(&self) -> f64 {
        (0..3).map(|i| self.max[i] - self.min[i]).product()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        Vec3::new(
            rng.gen_range(self.min[0]..=self.max[0]),
            rng.gen_range(self.min[1]..=self.max[1]),
            rng.gen_range(self.min[2]..=self.max[2]),
        )
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        )
    }
}

/// Support of the uniform dummy density for nonexistent features:
/// ROI × [0, γ_max] × disc(μ_max). The dummy value is the reciprocal of the
/// support volume, constant inside and zero outside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DummySupport {
    pub roi: BoxSupport,
    pub gamma_max: f64,
    pub mu_max: f64,
}

impl DummySupport {
    pub fn density(&self) -> f64 {
        let vol =
            self.roi.volume() * self.gamma_max * std::f64::consts::PI * self.mu_max * self.mu_max;
        1.0 / vol
    }

    /// Draw the amplitude hyperparameters from the birth hyperpriors:
    /// γ ~ U(0, γ_max), μ uniform on the disc of radius μ_max.
    pub fn sample_hyper<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Complex64) {
        let gamma = rng.gen_range(0.0..self.gamma_max);
        let r = self.mu_max * rng.gen::<f64>().sqrt();
        let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        (gamma, Complex64::from_polar(r, phi))
    }
}

/// Predicted weights of a legacy-feature message: survival branch mass is
/// `p_s` times the prior existence mass; the remainder goes to the dummy
/// branch, so total mass is conserved.
pub fn pf_predict_weights(prior_weights: &[f64], ps: f64) -> (Vec<f64>, f64) {
    let survive: Vec<f64> = prior_weights.iter().map(|w| ps * w).collect();
    let mass: f64 = survive.iter().sum();
    (survive, 1.0 - mass)
}

pub fn rotation_from_euler(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Matrix3<f64> {
    *crate::geometry::RotMat::from_yaw_pitch_roll(
        yaw_deg.to_radians(),
        pitch_deg.to_radians(),
        roll_deg.to_radians(),
    )
    .matrix()
}
