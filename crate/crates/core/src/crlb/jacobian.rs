//! Jacobian matrices mapping Fisher information from anchor-local channel
//! parameters onto the global parameter vector.
//!
//! Position columns chain the gradient of (elevation, azimuth, delay,
//! carrier phase) with respect to the local ray through the Householder and
//! rotation transforms. Surface-feature columns differentiate the full
//! anchor-to-mirrored-source map including the dependence of the reflection
//! operator on the feature position; dropping that term biases the angle
//! columns by enough to fail a finite-difference check. Velocity rows are
//! zero, which leaves the snapshot information matrix rank-deficient until
//! the kinematic prior couples position and velocity across time.

use super::fim::{ChannelParams, ComponentParams};
use super::{GlobalLayout, LocalLayout};
use crate::geometry::{local_ray, GeometryError, PaConfig, SfvPosition, Vec3, SPEED_OF_LIGHT};
use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;

/// Scene-level truth needed to evaluate the bound at one time step.
#[derive(Debug, Clone)]
pub struct GlobalGeometry {
    pub mt: Vec3,
    pub sfvs: Vec<SfvPosition>,
    /// Lumped complex amplitudes per anchor and component (direct path
    /// first); an amplitude of zero encodes an obstructed ray.
    pub amplitudes: Vec<Vec<Complex64>>,
    pub eta: f64,
}

/// Gradients of the spherical channel coordinates with respect to the local
/// ray.
fn ray_gradients(ray: &Vec3, wavelength: f64) -> Result<[Vec3; 4], GeometryError> {
    let (rx, ry, rz) = (ray.x, ray.y, ray.z);
    let rho2 = rx * rx + ry * ry;
    if rho2 == 0.0 {
        return Err(GeometryError::DegenerateRay);
    }
    let n = ray.norm();
    let g_el = Vec3::new(rx * rz, ry * rz, -rho2) / (n * n * rho2.sqrt());
    let g_az = Vec3::new(-ry, rx, 0.0) / rho2;
    let g_tau = ray / (SPEED_OF_LIGHT * n);
    let g_phase = ray * (-2.0 * std::f64::consts::PI / (wavelength * n));
    Ok([g_el, g_az, g_tau, g_phase])
}

/// Derivative of the anchor-to-mirrored-source vector `r̃ = H(u) p + u − p_a`
/// with respect to the feature position `u` (standard row-per-output
/// orientation).
pub fn sfv_range_jacobian(p_mt: &Vec3, u: &Vec3) -> Matrix3<f64> {
    let n2 = u.norm_squared();
    let s = u.dot(p_mt);
    Matrix3::identity() * (1.0 - 2.0 * s / n2) - 2.0 / n2 * (u * p_mt.transpose())
        + 4.0 * s / (n2 * n2) * (u * u.transpose())
}

/// Local channel parameters of anchor `j` implied by the scene truth. The
/// carrier phase folds into the amplitude phase; path loss is already lumped
/// into the amplitude moduli.
pub fn local_channel_params(
    geometry: &GlobalGeometry,
    pa: &PaConfig,
    j: usize,
    wavelength: f64,
) -> Result<ChannelParams, GeometryError> {
    let mut components = Vec::with_capacity(geometry.sfvs.len() + 1);
    for k in 0..=geometry.sfvs.len() {
        let psfv = if k == 0 { None } else { Some(&geometry.sfvs[k - 1]) };
        let ray = local_ray(geometry.mt, psfv, pa)?;
        let sp = crate::geometry::spherical_params(&ray)?;
        let rho = geometry.amplitudes[j][k];
        components.push(ComponentParams {
            elevation: sp.elevation,
            azimuth: sp.azimuth,
            delay: sp.delay,
            phase: -2.0 * std::f64::consts::PI / wavelength * ray.norm() + rho.arg(),
            modulus: rho.norm(),
        });
    }
    Ok(ChannelParams {
        components,
        eta: geometry.eta,
    })
}

/// Jacobian `∂η_chᵀ/∂η_g` of anchor `j` (global dimension × local
/// dimension).
pub fn jacobian(
    geometry: &GlobalGeometry,
    pa: &PaConfig,
    j: usize,
    layout: &GlobalLayout,
    wavelength: f64,
) -> Result<DMatrix<f64>, GeometryError> {
    let k_tilde = geometry.sfvs.len() + 1;
    let local = LocalLayout { k_tilde };
    let mut jac = DMatrix::zeros(layout.dim(), local.dim());
    let rot = pa.orientation.matrix();

    for k in 0..k_tilde {
        let psfv = if k == 0 {
            None
        } else {
            Some(&geometry.sfvs[k - 1])
        };
        let ray = local_ray(geometry.mt, psfv, pa)?;
        let grads = ray_gradients(&ray, wavelength)?;
        let house = psfv
            .map(crate::geometry::householder)
            .unwrap_or_else(Matrix3::identity);
        let cols = [
            local.el(k),
            local.az(k),
            local.delay(k),
            local.phase(k),
        ];
        for (grad, &col) in grads.iter().zip(&cols) {
            // position block: ∂θch/∂p = H R (∂θch/∂r')
            let dp = house * rot * grad;
            for i in 0..3 {
                jac[(i, col)] = dp[i];
            }
            // feature block: full derivative of u ↦ θch(Rᵀ(H(u)p + u − p_a))
            if let Some(s) = psfv {
                let m = sfv_range_jacobian(&geometry.mt, &s.vector());
                let du = m.transpose() * rot * grad;
                let row0 = layout.sfv_offset() + 3 * (k - 1);
                for i in 0..3 {
                    jac[(row0 + i, col)] = du[i];
                }
            }
        }
        // nuisance mappings
        jac[(layout.phase_row(j, k), local.phase(k))] = 1.0;
        jac[(layout.modulus_row(j, k), local.modulus(k))] = 1.0;
    }
    jac[(layout.eta_offset(), local.eta())] = 1.0;
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RfParams;
    use crate::crlb::PhaseMode;
    use crate::geometry::{template_layout, RotMat};
    use rand::Rng;

    fn setup(seed: u64) -> (GlobalGeometry, PaConfig, RfParams) {
        let mut rng = crate::rngs::stream_rng(seed, &[0x3ac0]);
        let rf = RfParams::new(3.5e9, 100e6, 3).unwrap();
        let lambda = rf.wavelength;
        let pa = PaConfig {
            position: Vec3::new(-2.0 - rng.gen::<f64>(), -1.0, 0.5),
            orientation: RotMat::from_yaw_pitch_roll(
                rng.gen::<f64>() * 1.5,
                rng.gen::<f64>() * 0.4 - 0.2,
                rng.gen::<f64>() * 0.4 - 0.2,
            ),
            geometry: template_layout(2, 2, lambda / 2.0, lambda / 2.0).unwrap(),
        };
        let geometry = GlobalGeometry {
            mt: Vec3::new(
                1.0 + rng.gen::<f64>() * 2.0,
                1.5 + rng.gen::<f64>(),
                0.2 + 0.4 * rng.gen::<f64>(),
            ),
            sfvs: vec![
                SfvPosition::try_new(Vec3::new(
                    6.0 + rng.gen::<f64>(),
                    1.0 + rng.gen::<f64>(),
                    0.3 * rng.gen::<f64>(),
                ))
                .unwrap(),
                SfvPosition::try_new(Vec3::new(
                    -0.5 * rng.gen::<f64>() - 0.2,
                    7.0 + rng.gen::<f64>(),
                    0.2 * rng.gen::<f64>(),
                ))
                .unwrap(),
            ],
            amplitudes: vec![vec![
                Complex64::new(0.9, 0.1),
                Complex64::new(0.4, -0.3),
                Complex64::new(-0.2, 0.5),
            ]],
            eta: 1e-4,
        };
        (geometry, pa, rf)
    }

    /// Central finite differences of the local channel map with respect to a
    /// global coordinate.
    fn fd_column(
        geometry: &GlobalGeometry,
        pa: &PaConfig,
        wavelength: f64,
        perturb: &dyn Fn(&mut GlobalGeometry, f64),
        k: usize,
    ) -> [f64; 4] {
        let h = 1e-6;
        let eval = |delta: f64| {
            let mut g = geometry.clone();
            perturb(&mut g, delta);
            let params = local_channel_params(&g, pa, 0, wavelength).unwrap();
            let c = &params.components[k];
            [c.elevation, c.azimuth, c.delay, c.phase]
        };
        let hi = eval(h);
        let lo = eval(-h);
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = (hi[i] - lo[i]) / (2.0 * h);
        }
        out
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for seed in 0..20 {
            let (geometry, pa, rf) = setup(seed);
            let layout = GlobalLayout {
                n_components: 2,
                n_anchors: 1,
                mode: PhaseMode::Coherent,
            };
            let jac = jacobian(&geometry, &pa, 0, &layout, rf.wavelength).unwrap();
            let local = LocalLayout { k_tilde: 3 };

            for k in 0..3 {
                // position block
                for axis in 0..3 {
                    let fd = fd_column(
                        &geometry,
                        &pa,
                        rf.wavelength,
                        &|g, d| g.mt[axis] += d,
                        k,
                    );
                    let cols = [local.el(k), local.az(k), local.delay(k), local.phase(k)];
                    for (i, &col) in cols.iter().enumerate() {
                        let analytic = jac[(axis, col)];
                        let scale = fd[i].abs().max(1e-9);
                        assert!(
                            (analytic - fd[i]).abs() / scale < 1e-5,
                            "seed {seed} comp {k} axis {axis} param {i}: {analytic} vs {}",
                            fd[i]
                        );
                    }
                }
                // feature block (bounce components only)
                if k >= 1 {
                    for axis in 0..3 {
                        let fd = fd_column(
                            &geometry,
                            &pa,
                            rf.wavelength,
                            &|g, d| {
                                let mut v = g.sfvs[k - 1].vector();
                                v[axis] += d;
                                g.sfvs[k - 1] = SfvPosition::try_new(v).unwrap();
                            },
                            k,
                        );
                        let row = layout.sfv_offset() + 3 * (k - 1) + axis;
                        let cols = [local.el(k), local.az(k), local.delay(k), local.phase(k)];
                        for (i, &col) in cols.iter().enumerate() {
                            let analytic = jac[(row, col)];
                            let scale = fd[i].abs().max(1e-9);
                            assert!(
                                (analytic - fd[i]).abs() / scale < 1e-5,
                                "seed {seed} comp {k} sfv axis {axis} param {i}: {analytic} vs {}",
                                fd[i]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn los_delay_column_is_unit_ray_over_c() {
        // identity rotation, direct path: ∂τ/∂p = r'/(c‖r'‖)
        let rf = RfParams::new(3.5e9, 100e6, 3).unwrap();
        let lambda = rf.wavelength;
        let pa = PaConfig {
            position: Vec3::zeros(),
            orientation: RotMat::identity(),
            geometry: template_layout(2, 2, lambda / 2.0, lambda / 2.0).unwrap(),
        };
        let geometry = GlobalGeometry {
            mt: Vec3::new(3.0, 4.0, 0.0),
            sfvs: vec![],
            amplitudes: vec![vec![Complex64::new(1.0, 0.0)]],
            eta: 1e-4,
        };
        let layout = GlobalLayout {
            n_components: 0,
            n_anchors: 1,
            mode: PhaseMode::Coherent,
        };
        let jac = jacobian(&geometry, &pa, 0, &layout, rf.wavelength).unwrap();
        let local = LocalLayout { k_tilde: 1 };
        let expect = Vec3::new(3.0, 4.0, 0.0) / (5.0 * SPEED_OF_LIGHT);
        for i in 0..3 {
            assert!((jac[(i, local.delay(0))] - expect[i]).abs() < 1e-20);
        }
        // phase column: −(2π/λ) times the unit ray, norm 2π/λ
        let mut norm = 0.0;
        for i in 0..3 {
            norm += jac[(i, local.phase(0))].powi(2);
        }
        let norm = norm.sqrt();
        let expect = 2.0 * std::f64::consts::PI / rf.wavelength;
        assert!((norm - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn velocity_rows_are_zero() {
        let (geometry, pa, rf) = setup(1);
        let layout = GlobalLayout {
            n_components: 2,
            n_anchors: 1,
            mode: PhaseMode::Noncoherent,
        };
        let jac = jacobian(&geometry, &pa, 0, &layout, rf.wavelength).unwrap();
        for row in 3..6 {
            for col in 0..jac.ncols() {
                assert_eq!(jac[(row, col)], 0.0);
            }
        }
    }
}
