//! Channel Fisher information under the complex Gaussian snapshot model.
//!
//! The information matrix follows the Slepian–Bangs form: every channel
//! parameter owns a complex score atom (the derivative of the noise-free
//! signal with respect to that parameter), and the FIM is `2/η` times the
//! real part of the atom Gram matrix. The noise variance decouples with
//! `[F]_ηη = Nz/η²`.

use super::LocalLayout;
use crate::channel::{delay_response, delay_response_derivative, kron, spatial_response_y, spatial_response_z, RfParams};
use crate::geometry::UraGeometry;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// One multipath component in channel coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ComponentParams {
    pub elevation: f64,
    pub azimuth: f64,
    pub delay: f64,
    /// Total phase including the carrier term.
    pub phase: f64,
    /// Path-loss-absorbed amplitude modulus.
    pub modulus: f64,
}

/// Channel parameters of one anchor: all components plus the noise variance.
#[derive(Debug, Clone)]
pub struct ChannelParams {
    pub components: Vec<ComponentParams>,
    pub eta: f64,
}

/// Unit-modulus response atom `b(τ) ⊗ a_y(θ,φ) ⊗ a_z(θ)` without the
/// carrier-phase factor.
pub fn response_atom(
    delay: f64,
    elevation: f64,
    azimuth: f64,
    rf: &RfParams,
    geom: &UraGeometry,
) -> Vec<Complex64> {
    let b = delay_response(delay, rf);
    let ay = spatial_response_y(elevation, azimuth, geom, rf.wavelength);
    let az = spatial_response_z(elevation, geom, rf.wavelength);
    kron(&b, &kron(&ay, &az))
}

/// Analytic derivatives of the response atom with respect to elevation,
/// azimuth and delay. The vertical response does not depend on azimuth, so
/// that term vanishes identically.
pub fn response_derivatives(
    delay: f64,
    elevation: f64,
    azimuth: f64,
    rf: &RfParams,
    geom: &UraGeometry,
) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
    let lambda = rf.wavelength;
    let b = delay_response(delay, rf);
    let b_dot = delay_response_derivative(delay, rf);
    let ay = spatial_response_y(elevation, azimuth, geom, lambda);
    let az = spatial_response_z(elevation, geom, lambda);

    let k = 2.0 * std::f64::consts::PI / lambda;
    let ay_del: Vec<Complex64> = geom
        .y_positions
        .iter()
        .zip(&ay)
        .map(|(&y, &a)| Complex64::new(0.0, k * elevation.cos() * azimuth.sin() * y) * a)
        .collect();
    let ay_daz: Vec<Complex64> = geom
        .y_positions
        .iter()
        .zip(&ay)
        .map(|(&y, &a)| Complex64::new(0.0, k * elevation.sin() * azimuth.cos() * y) * a)
        .collect();
    let az_del: Vec<Complex64> = geom
        .z_positions
        .iter()
        .zip(&az)
        .map(|(&z, &a)| Complex64::new(0.0, -k * elevation.sin() * z) * a)
        .collect();

    let d_el = {
        let mut v = kron(&b, &kron(&ay_del, &az));
        let second = kron(&b, &kron(&ay, &az_del));
        for (x, y) in v.iter_mut().zip(second) {
            *x += y;
        }
        v
    };
    let d_az = kron(&b, &kron(&ay_daz, &az));
    let d_tau = kron(&b_dot, &kron(&ay, &az));
    (d_el, d_az, d_tau)
}

/// Channel FIM of one anchor: dimension `5(K+1)+1`, symmetric, with all
/// signal-parameter rows decoupled from the noise variance.
pub fn channel_fim(params: &ChannelParams, rf: &RfParams, geom: &UraGeometry) -> DMatrix<f64> {
    let k_tilde = params.components.len();
    let layout = LocalLayout { k_tilde };
    let dim = layout.dim();
    let nz = rf.nf * geom.n_elements();
    let mut atoms: Vec<Vec<Complex64>> = vec![Vec::new(); dim - 1];

    for (k, comp) in params.components.iter().enumerate() {
        let rho = Complex64::from_polar(comp.modulus, comp.phase);
        let psi = response_atom(comp.delay, comp.elevation, comp.azimuth, rf, geom);
        let (d_el, d_az, d_tau) =
            response_derivatives(comp.delay, comp.elevation, comp.azimuth, rf, geom);
        atoms[layout.el(k)] = d_el.iter().map(|&v| rho * v).collect();
        atoms[layout.az(k)] = d_az.iter().map(|&v| rho * v).collect();
        atoms[layout.delay(k)] = d_tau.iter().map(|&v| rho * v).collect();
        atoms[layout.phase(k)] = psi
            .iter()
            .map(|&v| Complex64::new(0.0, 1.0) * rho * v)
            .collect();
        atoms[layout.modulus(k)] = psi
            .iter()
            .map(|&v| Complex64::from_polar(1.0, comp.phase) * v)
            .collect();
    }

    let mut fim = DMatrix::zeros(dim, dim);
    let scale = 2.0 / params.eta;
    for i in 0..dim - 1 {
        if atoms[i].is_empty() {
            continue;
        }
        for l in i..dim - 1 {
            if atoms[l].is_empty() {
                continue;
            }
            let v = crate::fastmsg::cdot(&atoms[i], &atoms[l]).re * scale;
            fim[(i, l)] = v;
            fim[(l, i)] = v;
        }
    }
    fim[(layout.eta(), layout.eta())] = nz as f64 / (params.eta * params.eta);
    fim
}
