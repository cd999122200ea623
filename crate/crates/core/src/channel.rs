//! Array-response synthesis and generative measurement simulation.
//!
//! Observations are stacked frequency × antenna snapshots per physical
//! anchor. The planar-wavefront response factorizes as a Kronecker product
//! of a frequency response in delay and a spatial response in the arrival
//! angles; an exact spherical-wavefront kernel is available as an optional
//! alternative. Index layout throughout: entry `i*na + m` is frequency bin
//! `i`, antenna `m`, with the antenna index running y-major over the URA.

use crate::geometry::{
    local_ray, spherical_params, GeometryError, PaConfig, SfvPosition, UraGeometry, Vec3,
    SPEED_OF_LIGHT,
};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("need at least two frequency bins, got {0}")]
    TooFewBins(usize),
    #[error("carrier and bandwidth must be positive")]
    InvalidRf,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("channel power is zero; SNR-referenced noise variance undefined")]
    ZeroChannelPower,
}

/// RF front-end parameters shared by all anchors.
#[derive(Debug, Clone)]
pub struct RfParams {
    pub fc: f64,
    pub bandwidth: f64,
    pub nf: usize,
    /// Baseband frequency grid, symmetric about 0.
    pub base_freqs: Vec<f64>,
    pub wavelength: f64,
}

impl RfParams {
    /// Equally spaced bins covering `bandwidth`: `f_i = (i − (nf−1)/2) Δf`
    /// with `Δf = bandwidth/(nf−1)`.
    pub fn new(fc: f64, bandwidth: f64, nf: usize) -> Result<Self, ChannelError> {
        if nf < 2 {
            return Err(ChannelError::TooFewBins(nf));
        }
        if fc <= 0.0 || bandwidth <= 0.0 {
            return Err(ChannelError::InvalidRf);
        }
        let df = bandwidth / (nf as f64 - 1.0);
        let mid = (nf as f64 - 1.0) / 2.0;
        let base_freqs = (0..nf).map(|i| (i as f64 - mid) * df).collect();
        Ok(RfParams {
            fc,
            bandwidth,
            nf,
            base_freqs,
            wavelength: SPEED_OF_LIGHT / fc,
        })
    }
}

/// Complex response vector of length `nf * ny * nz`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(pub Vec<Complex64>);

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }
}

/// One stacked snapshot received by one anchor.
#[derive(Debug, Clone)]
pub struct Observation {
    pub values: Vec<Complex64>,
    pub pa_index: usize,
    pub time_index: usize,
}

#[inline]
pub fn cis(phase: f64) -> Complex64 {
    let (s, c) = phase.sin_cos();
    Complex64::new(c, s)
}

/// Frequency response in delay: `b_i = exp(−j 2π f_i τ)` over the symmetric
/// baseband grid (flat unit-modulus pilot spectrum).
pub fn delay_response(tau: f64, rf: &RfParams) -> Vec<Complex64> {
    rf.base_freqs
        .iter()
        .map(|&f| cis(-2.0 * std::f64::consts::PI * f * tau))
        .collect()
}

/// Derivative of [`delay_response`] with respect to the delay.
pub fn delay_response_derivative(tau: f64, rf: &RfParams) -> Vec<Complex64> {
    let b = delay_response(tau, rf);
    rf.base_freqs
        .iter()
        .zip(&b)
        .map(|(&f, &bi)| Complex64::new(0.0, -2.0 * std::f64::consts::PI * f) * bi)
        .collect()
}

/// Horizontal URA response `a_y = exp(j 2π p_y sinθ sinφ / λ)`.
pub fn spatial_response_y(theta: f64, phi: f64, geom: &UraGeometry, lambda: f64) -> Vec<Complex64> {
    let k = 2.0 * std::f64::consts::PI / lambda * theta.sin() * phi.sin();
    geom.y_positions.iter().map(|&y| cis(k * y)).collect()
}

/// Vertical URA response `a_z = exp(j 2π p_z cosθ / λ)`.
pub fn spatial_response_z(theta: f64, geom: &UraGeometry, lambda: f64) -> Vec<Complex64> {
    let k = 2.0 * std::f64::consts::PI / lambda * theta.cos();
    geom.z_positions.iter().map(|&z| cis(k * z)).collect()
}

/// Full spatial response `a = a_y ⊗ a_z`, y index slow.
pub fn spatial_response(theta: f64, phi: f64, geom: &UraGeometry, lambda: f64) -> Vec<Complex64> {
    kron(
        &spatial_response_y(theta, phi, geom, lambda),
        &spatial_response_z(theta, geom, lambda),
    )
}

pub fn kron(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &ai in a {
        for &bi in b {
            out.push(ai * bi);
        }
    }
    out
}

/// Planar-wavefront response for a local ray: `(b(τ) ⊗ a(θ,φ)) e^{−j2π fc τ}`,
/// optionally scaled by the free-space loss `λ/(4π‖r'‖)`.
pub fn planar_response(
    ray: &Vec3,
    rf: &RfParams,
    geom: &UraGeometry,
    unit_modulus: bool,
) -> Result<SteeringVector, ChannelError> {
    let sp = spherical_params(ray)?;
    let b = delay_response(sp.delay, rf);
    let a = spatial_response(sp.elevation, sp.azimuth, geom, rf.wavelength);
    let carrier = cis(-2.0 * std::f64::consts::PI * rf.fc * sp.delay);
    let scale = if unit_modulus {
        carrier
    } else {
        carrier * (rf.wavelength / (4.0 * std::f64::consts::PI * ray.norm()))
    };
    let mut out = kron(&b, &a);
    for v in &mut out {
        *v *= scale;
    }
    Ok(SteeringVector(out))
}

/// Exact spherical-wavefront unit-modulus response: per-element passband
/// phases from the true element-to-source distances. Works directly on the
/// local ray and the array template, which is equivalent to mirroring the
/// layout for bounce paths.
pub fn spherical_response(
    ray: &Vec3,
    rf: &RfParams,
    geom: &UraGeometry,
) -> Result<SteeringVector, ChannelError> {
    let na = geom.n_elements();
    let mut dist = Vec::with_capacity(na);
    for m in 0..na {
        let d = (ray - geom.template.column(m)).norm();
        if d == 0.0 {
            return Err(ChannelError::Geometry(GeometryError::DegenerateRay));
        }
        dist.push(d);
    }
    let mut out = Vec::with_capacity(rf.nf * na);
    for &f in &rf.base_freqs {
        let fpb = rf.fc + f;
        for &d in &dist {
            out.push(cis(-2.0 * std::f64::consts::PI / SPEED_OF_LIGHT * fpb * d));
        }
    }
    Ok(SteeringVector(out))
}

/// Which wavefront model parameterizes the steering vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wavefront {
    Planar,
    Spherical,
}

/// Whether responses are unit-modulus (lumped amplitudes carry all gain) or
/// carry the free-space path loss explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFamily {
    UnitModulus,
    PathLoss,
}

/// Steering-vector factory for a fixed infrastructure.
#[derive(Debug, Clone)]
pub struct SteeringModel {
    pub rf: RfParams,
    pub pas: Vec<PaConfig>,
    pub wavefront: Wavefront,
    pub family: ResponseFamily,
}

impl SteeringModel {
    pub fn n_anchors(&self) -> usize {
        self.pas.len()
    }

    pub fn observation_len(&self) -> usize {
        self.rf.nf * self.pas[0].geometry.n_elements()
    }

    /// Response of anchor `j` to a source at `p_mt`, either direct
    /// (`psfv = None`) or bounced off the given surface.
    pub fn evaluate(
        &self,
        j: usize,
        p_mt: &Vec3,
        psfv: Option<&SfvPosition>,
    ) -> Result<SteeringVector, ChannelError> {
        let pa = &self.pas[j];
        let ray = local_ray(*p_mt, psfv, pa)?;
        match self.wavefront {
            Wavefront::Planar => planar_response(
                &ray,
                &self.rf,
                &pa.geometry,
                self.family == ResponseFamily::UnitModulus,
            ),
            Wavefront::Spherical => spherical_response(&ray, &self.rf, &pa.geometry),
        }
    }
}

/// One propagation path in the generative model.
#[derive(Debug, Clone)]
pub struct PathTruth {
    /// `None` is the direct path.
    pub psfv: Option<SfvPosition>,
    pub amplitude: Complex64,
    pub visible: bool,
}

/// Draw a circularly symmetric complex normal with variance `var`
/// (two real normals scaled by `sqrt(var/2)`).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Synthesize one snapshot: visible paths weighted by their amplitudes plus
/// i.i.d. circular complex Gaussian noise of the given variance per entry.
pub fn generate_observation<R: Rng + ?Sized>(
    model: &SteeringModel,
    j: usize,
    time_index: usize,
    p_mt: &Vec3,
    paths: &[PathTruth],
    noise_var: f64,
    rng: &mut R,
) -> Result<Observation, ChannelError> {
    let nz = model.observation_len();
    let mut values = vec![Complex64::new(0.0, 0.0); nz];
    for path in paths {
        if !path.visible || path.amplitude == Complex64::new(0.0, 0.0) {
            continue;
        }
        let psi = model.evaluate(j, p_mt, path.psfv.as_ref())?;
        for (v, &p) in values.iter_mut().zip(psi.as_slice()) {
            *v += path.amplitude * p;
        }
    }
    if noise_var > 0.0 {
        for v in &mut values {
            *v += complex_normal(rng, noise_var);
        }
    }
    Ok(Observation {
        values,
        pa_index: j,
        time_index,
    })
}

/// Mean channel power per entry across anchors:
/// `P = (1/(Nz·J)) Σ_j ‖Σ_k ϱ_k ψ_k^{(j)}‖²`.
pub fn channel_power(
    model: &SteeringModel,
    p_mt: &Vec3,
    paths: &[PathTruth],
) -> Result<f64, ChannelError> {
    let nz = model.observation_len();
    let j_count = model.n_anchors();
    let mut total = 0.0;
    for j in 0..j_count {
        let mut values = vec![Complex64::new(0.0, 0.0); nz];
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
    Ok(total / (nz as f64 * j_count as f64))
}

/// Noise variance that realizes the requested SNR against the sum-channel
/// power at the reference state: `η = P_ch / 10^(snr_db/10)`.
pub fn snr_noise_variance(
    model: &SteeringModel,
    p_mt: &Vec3,
    paths: &[PathTruth],
    snr_db: f64,
) -> Result<f64, ChannelError> {
    let p_ch = channel_power(model, p_mt, paths)?;
    if p_ch <= 0.0 {
        return Err(ChannelError::ZeroChannelPower);
    }
    Ok(p_ch / 10f64.powf(snr_db / 10.0))
}
