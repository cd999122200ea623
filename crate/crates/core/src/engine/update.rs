//! Moment-matched update messages and belief reweighting.
//!
//! Every Gaussian evaluation runs in the log domain with per-belief
//! max-subtraction before exponentiation; at observation lengths in the
//! hundreds the raw exponents overflow otherwise.
//!
//! The per-message log evaluators (`iota_logs`, `kappa_logs`, `omega_logs`,
//! `nu_logs`) are the single implementation of the fast message math; the
//! belief updates compose them and the test oracles call them directly.

use super::moments::{
    iota_column_scale, iota_mean_scale, kappa_spike_scale, paired_steering, PaMoments,
};
use super::{Engine, EngineError, ParticleSet, PredictedState};
use crate::channel::Observation;
use crate::fastmsg::{eval_message, GramCache, MessageKind};
use num_complex::Complex64;
use rayon::prelude::*;

pub fn logsumexp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sub(z: &[Complex64], m: &[Complex64]) -> Vec<Complex64> {
    z.iter().zip(m).map(|(&a, &b)| a - b).collect()
}

/// Per-particle log values of the mobile-terminal update message at one
/// anchor. Each particle owns its factor columns (one per track, evaluated
/// at the paired samples), so the small factorization is rebuilt per
/// particle while the bundle supplies the masses.
pub fn iota_logs(
    engine: &Engine,
    predicted: &PredictedState,
    bundle: &PaMoments,
    observation: &Observation,
) -> Vec<f64> {
    let n = predicted.mt.len();
    let nz = engine.steering.observation_len();
    let zero_mean = engine.params.zero_mean;
    let j = bundle.j;
    let z = &observation.values;
    (0..n)
        .into_par_iter()
        .map(|p| {
            let mut columns = Vec::with_capacity(bundle.tracks.len());
            let mut mean = vec![Complex64::new(0.0, 0.0); nz];
            for (s, tm) in bundle.tracks.iter().enumerate() {
                let psi = paired_steering(engine, predicted, s, j, p)
                    .expect("steering evaluation cannot fail on predicted support");
                let pf = &predicted.tracks[s].set.particles[p];
                let mu = if zero_mean {
                    Complex64::new(0.0, 0.0)
                } else {
                    pf.mu
                };
                let col_scale = iota_column_scale(tm, pf.gamma, mu.norm_sqr());
                let mean_scale = iota_mean_scale(tm, mu);
                let mut col = Vec::with_capacity(nz);
                for i in 0..nz {
                    col.push(psi[i] * col_scale);
                    mean[i] += psi[i] * mean_scale;
                }
                columns.push(col);
            }
            let base = GramCache::new(nz, columns).factorize(bundle.etabar);
            let err = sub(z, &mean);
            eval_message(MessageKind::Iota, &base, None, &err)
        })
        .collect()
}

/// Feature update message at one anchor: per-particle log values under the
/// existence hypothesis plus the particle-independent null-hypothesis value.
/// The base factorization over the cross-feature columns is shared by all
/// particles.
pub fn kappa_logs(
    engine: &Engine,
    predicted: &PredictedState,
    s: usize,
    bundle: &PaMoments,
    observation: &Observation,
) -> (Vec<f64>, f64) {
    let n = predicted.mt.len();
    let nz = engine.steering.observation_len();
    let zero_mean = engine.params.zero_mean;
    let j = bundle.j;
    let track = &predicted.tracks[s];
    let tm = &bundle.tracks[s];

    let base = GramCache::new(nz, bundle.cross_columns(s)).factorize(bundle.etabar);
    let z_res = sub(&observation.values, &bundle.interference_mean(s));
    let log_null = eval_message(MessageKind::Kappa, &base, None, &z_res);

    let logs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let psi = paired_steering(engine, predicted, s, j, p)
                .expect("steering evaluation cannot fail on predicted support");
            let pf = &track.set.particles[p];
            let mu = if zero_mean {
                Complex64::new(0.0, 0.0)
            } else {
                pf.mu
            };
            let q = kappa_spike_scale(tm, pf.gamma, mu.norm_sqr());
            let own_mean = mu * tm.zeta1;
            let err: Vec<Complex64> = z_res
                .iter()
                .zip(&psi)
                .map(|(&r, &ps)| r - own_mean * ps)
                .collect();
            eval_message(MessageKind::Kappa, &base, Some((&psi, q)), &err)
        })
        .collect();
    (logs, log_null)
}

/// Ray update message at one anchor: log values of the visibility and
/// blockage branches.
pub fn omega_logs(engine: &Engine, s: usize, bundle: &PaMoments, observation: &Observation) -> (f64, f64) {
    let nz = engine.steering.observation_len();
    let tm = &bundle.tracks[s];
    let base = GramCache::new(nz, bundle.cross_columns(s)).factorize(bundle.etabar);
    let z_res = sub(&observation.values, &bundle.interference_mean(s));
    let err1 = sub(&z_res, &tm.mu4);
    let log_w1 = eval_message(MessageKind::Omega, &base, Some((&tm.m_omega, 1.0)), &err1);
    let log_w0 = eval_message(MessageKind::Omega, &base, None, &z_res);
    (log_w1, log_w0)
}

/// Noise-variance update message: per-particle log values at one anchor.
/// The Gram matrix over all feature columns is shared; each particle
/// re-factorizes the small system at its own isotropic level.
pub fn nu_logs(
    engine: &Engine,
    predicted: &PredictedState,
    j: usize,
    bundle: &PaMoments,
    observation: &Observation,
) -> Vec<f64> {
    let nz = engine.steering.observation_len();
    let gram = GramCache::new(nz, bundle.all_columns());
    let err = sub(&observation.values, &bundle.sum_mu3);
    predicted.noise[j]
        .particles
        .par_iter()
        .map(|&eta| {
            let base = gram.factorize(eta.max(1e-300));
            eval_message(MessageKind::Nu, &base, None, &err)
        })
        .collect()
}

/// Mobile-terminal belief update: per particle, the product over anchors of
/// the moment-matched state update message, normalized to total mass one.
pub fn update_mt(
    engine: &Engine,
    predicted: &PredictedState,
    observations: &[Observation],
    bundles: &[PaMoments],
) -> Result<ParticleSet<crate::priors::MtState>, EngineError> {
    let n = predicted.mt.len();
    let mut log_lik = vec![0.0; n];
    for bundle in bundles {
        let logs = iota_logs(engine, predicted, bundle, &observations[bundle.j]);
        for (acc, l) in log_lik.iter_mut().zip(&logs) {
            *acc += l;
        }
    }
    let logw: Vec<f64> = predicted
        .mt
        .weights
        .iter()
        .zip(&log_lik)
        .map(|(&w, &l)| w.ln() + l)
        .collect();
    let norm = logsumexp(&logw);
    if !norm.is_finite() {
        return Err(EngineError::ZeroMass);
    }
    Ok(ParticleSet {
        particles: predicted.mt.particles.clone(),
        weights: logw.iter().map(|l| (l - norm).exp()).collect(),
    })
}

/// Feature update result: new belief weights (summing to the posterior
/// existence probability) and the normalization breakdown.
#[derive(Debug, Clone)]
pub struct PfUpdate {
    pub weights: Vec<f64>,
    pub existence: f64,
}

/// Feature belief update for track `s`: weights multiply the product over
/// anchors of the existence-hypothesis feature message; the normalization
/// adds the nonexistence branch carried by the constant null message.
pub fn update_pf(
    engine: &Engine,
    predicted: &PredictedState,
    s: usize,
    observations: &[Observation],
    bundles: &[PaMoments],
) -> Result<PfUpdate, EngineError> {
    let n = predicted.mt.len();
    let track = &predicted.tracks[s];
    let w_mass = track.set.total_weight();

    let mut log_k1 = vec![0.0; n];
    let mut log_k0 = 0.0;
    for bundle in bundles {
        let (logs, null) = kappa_logs(engine, predicted, s, bundle, &observations[bundle.j]);
        for (acc, l) in log_k1.iter_mut().zip(&logs) {
            *acc += l;
        }
        log_k0 += null;
    }

    let mut logw: Vec<f64> = track
        .set
        .weights
        .iter()
        .zip(&log_k1)
        .map(|(&w, &l)| if w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let log_null = if w_mass < 1.0 {
        (1.0 - w_mass).ln() + log_k0
    } else {
        f64::NEG_INFINITY
    };
    logw.push(log_null);
    let log_norm = logsumexp(&logw);
    logw.pop();
    if !log_norm.is_finite() {
        return Err(EngineError::ZeroMass);
    }
    let weights: Vec<f64> = logw.iter().map(|l| (l - log_norm).exp()).collect();
    let existence = 1.0 - (log_null - log_norm).exp();
    Ok(PfUpdate { weights, existence })
}

/// Ray-visibility update for track `s` at anchor `j`: the posterior is the
/// logistic of prior log-odds plus the message log-likelihood ratio, which
/// is algebraically identical to the two-branch normalization.
pub fn update_pr(
    engine: &Engine,
    _predicted: &PredictedState,
    s: usize,
    j: usize,
    observations: &[Observation],
    bundles: &[PaMoments],
) -> f64 {
    let bundle = &bundles[j];
    let zeta1 = bundle.tracks[s].zeta1;
    if zeta1 <= 0.0 {
        return 0.0;
    }
    if zeta1 >= 1.0 {
        return 1.0;
    }
    let (log_w1, log_w0) = omega_logs(engine, s, bundle, &observations[j]);
    let u = (zeta1 / (1.0 - zeta1)).ln() + log_w1 - log_w0;
    if u.is_nan() {
        // both branches vanished; keep the prior
        return zeta1;
    }
    logistic(u)
}

pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Noise-variance belief update at anchor `j`.
pub fn update_noise(
    engine: &Engine,
    predicted: &PredictedState,
    j: usize,
    observation: &Observation,
    bundle: &PaMoments,
) -> Result<ParticleSet<f64>, EngineError> {
    let set = &predicted.noise[j];
    let log_lik = nu_logs(engine, predicted, j, bundle, observation);
    let logw: Vec<f64> = set
        .weights
        .iter()
        .zip(&log_lik)
        .map(|(&w, &l)| w.ln() + l)
        .collect();
    let norm = logsumexp(&logw);
    if !norm.is_finite() {
        return Err(EngineError::ZeroMass);
    }
    Ok(ParticleSet {
        particles: set.particles.clone(),
        weights: logw.iter().map(|l| (l - norm).exp()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::moments::moment_terms;
    use crate::engine::moments::tests::{predicted_fixture, tiny_engine};

    fn obs_from(values: Vec<Complex64>, j: usize) -> Observation {
        Observation {
            values,
            pa_index: j,
            time_index: 1,
        }
    }

    fn noise_only_observations(engine: &Engine, scale: f64) -> Vec<Observation> {
        let nz = engine.steering.observation_len();
        let mut rng = crate::rngs::stream_rng(11, &[0x0b5]);
        (0..engine.n_anchors())
            .map(|j| {
                obs_from(
                    (0..nz)
                        .map(|_| crate::channel::complex_normal(&mut rng, scale))
                        .collect(),
                    j,
                )
            })
            .collect()
    }

    #[test]
    fn mt_update_weights_normalized() {
        let engine = tiny_engine(2);
        let predicted = predicted_fixture(&engine, 4);
        let obs = noise_only_observations(&engine, 1e-4);
        let bundles: Vec<_> = (0..2)
            .map(|j| moment_terms(&engine, &predicted, j).unwrap())
            .collect();
        let post = update_mt(&engine, &predicted, &obs, &bundles).unwrap();
        let total: f64 = post.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mt_update_noise_only_posterior_equals_prior() {
        // no features: likelihood is particle-independent, so the posterior
        // weights must equal the prior weights
        let engine = tiny_engine(1);
        let mut predicted = predicted_fixture(&engine, 3);
        predicted.tracks.clear();
        predicted.mt.weights = vec![0.5, 0.3, 0.2];
        let obs = noise_only_observations(&engine, 1e-4);
        let bundles = vec![moment_terms(&engine, &predicted, 0).unwrap()];
        let post = update_mt(&engine, &predicted, &obs, &bundles).unwrap();
        for (w, expect) in post.weights.iter().zip([0.5, 0.3, 0.2]) {
            assert!((w - expect).abs() < 1e-12, "{w} vs {expect}");
        }
    }

    #[test]
    fn mt_update_prefers_true_state_on_clean_los() {
        let engine = tiny_engine(2);
        let mut predicted = predicted_fixture(&engine, 2);
        predicted.tracks.clear();
        // add a direct-path track with confident existence and visibility
        let true_mt = predicted.mt.particles[0];
        predicted.tracks.push(crate::engine::PredictedTrack {
            id: 0,
            kind: crate::engine::TrackKind::Los,
            set: ParticleSet {
                particles: vec![
                    crate::priors::PfContinuous {
                        psfv: None,
                        gamma: 1e-4,
                        mu: Complex64::new(1.0, 0.0),
                    };
                    2
                ],
                weights: vec![0.5; 2],
            },
            zeta1: vec![1.0; 2],
        });
        // far particle
        predicted.mt.particles[1].p += crate::geometry::Vec3::new(1.5, -1.0, 0.2);
        let obs: Vec<Observation> = (0..2)
            .map(|j| {
                let psi = engine.steering.evaluate(j, &true_mt.p, None).unwrap();
                obs_from(psi.0, j)
            })
            .collect();
        let bundles: Vec<_> = (0..2)
            .map(|j| moment_terms(&engine, &predicted, j).unwrap())
            .collect();
        let post = update_mt(&engine, &predicted, &obs, &bundles).unwrap();
        assert!(
            post.weights[0] > post.weights[1],
            "true particle should dominate: {:?}",
            post.weights
        );
    }

    #[test]
    fn pf_update_uninformative_keeps_prior_existence() {
        // zero amplitude statistics make both hypothesis branches coincide
        let engine = tiny_engine(1);
        let mut predicted = predicted_fixture(&engine, 3);
        for pf in &mut predicted.tracks[0].set.particles {
            pf.gamma = 0.0;
            pf.mu = Complex64::new(0.0, 0.0);
        }
        predicted.tracks[0].set.weights = vec![0.2; 3]; // W = 0.6
        let obs = noise_only_observations(&engine, 1e-4);
        let bundles = vec![moment_terms(&engine, &predicted, 0).unwrap()];
        let upd = update_pf(&engine, &predicted, 0, &obs, &bundles).unwrap();
        assert!((upd.existence - 0.6).abs() < 1e-9, "{}", upd.existence);
        let sum: f64 = upd.weights.iter().sum();
        assert!((sum - upd.existence).abs() < 1e-12);
    }

    #[test]
    fn pf_update_full_mass_stays_full() {
        let engine = tiny_engine(1);
        let mut predicted = predicted_fixture(&engine, 2);
        predicted.tracks[0].set.weights = vec![0.5; 2]; // W = 1
        let obs = noise_only_observations(&engine, 1e-4);
        let bundles = vec![moment_terms(&engine, &predicted, 0).unwrap()];
        let upd = update_pf(&engine, &predicted, 0, &obs, &bundles).unwrap();
        assert!((upd.existence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pr_update_edge_cases() {
        let engine = tiny_engine(1);
        let mut predicted = predicted_fixture(&engine, 2);
        let obs = noise_only_observations(&engine, 1e-4);

        predicted.tracks[0].zeta1 = vec![1.0];
        let bundles = vec![moment_terms(&engine, &predicted, 0).unwrap()];
        assert_eq!(update_pr(&engine, &predicted, 0, 0, &obs, &bundles), 1.0);

        predicted.tracks[0].zeta1 = vec![0.0];
        let bundles = vec![moment_terms(&engine, &predicted, 0).unwrap()];
        assert_eq!(update_pr(&engine, &predicted, 0, 0, &obs, &bundles), 0.0);
    }

    #[test]
    fn pr_update_equals_two_branch_normalization() {
        let engine = tiny_engine(2);
        let predicted = predicted_fixture(&engine, 3);
        let obs = noise_only_observations(&engine, 1e-4);
        let bundles: Vec<_> = (0..2)
            .map(|j| moment_terms(&engine, &predicted, j).unwrap())
            .collect();
        for j in 0..2 {
            let p = update_pr(&engine, &predicted, 0, j, &obs, &bundles);
            let zeta1 = bundles[j].tracks[0].zeta1;
            let (l1, l0) = omega_logs(&engine, 0, &bundles[j], &obs[j]);
            let m = l1.max(l0);
            let w1 = zeta1 * (l1 - m).exp();
            let w0 = (1.0 - zeta1) * (l0 - m).exp();
            let direct = w1 / (w1 + w0);
            assert!((p - direct).abs() < 1e-12, "sigmoid {p} vs direct {direct}");
        }
    }

    #[test]
    fn ppr_revival_from_tiny_prior() {
        // ζ(1) = 1e-6 with a log-likelihood ratio of ~10⁹ magnitude revives
        // the ray: posterior > 0.99
        let u = (1e-6f64 / (1.0 - 1e-6)).ln() + 1e9f64.ln();
        assert!(logistic(u) > 0.99);
        // and the paper-scale case: log-LR ≥ 20.7 beats prior 1e-6
        let u = (1e-6f64 / (1.0 - 1e-6)).ln() + 20.7;
        assert!(logistic(u) > 0.99, "posterior {}", logistic(u));
    }

    #[test]
    fn noise_update_normalized_and_peaks_near_truth() {
        let engine = tiny_engine(1);
        let mut predicted = predicted_fixture(&engine, 40);
        predicted.tracks.clear();
        let eta_true = 3e-5;
        let n = 40;
        predicted.noise[0] = ParticleSet {
            particles: (0..n)
                .map(|i| eta_true * 10f64.powf(-2.0 + 4.0 * i as f64 / (n - 1) as f64))
                .collect(),
            weights: vec![1.0 / n as f64; n],
        };
        let nz = engine.steering.observation_len();
        let mut rng = crate::rngs::stream_rng(5, &[1]);
        let mut values = vec![Complex64::new(0.0, 0.0); nz];
        for v in &mut values {
            *v = crate::channel::complex_normal(&mut rng, eta_true);
        }
        let obs = obs_from(values, 0);
        let bundle = moment_terms(&engine, &predicted, 0).unwrap();
        let post = update_noise(&engine, &predicted, 0, &obs, &bundle).unwrap();
        let total: f64 = post.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let mean: f64 = post
            .particles
            .iter()
            .zip(&post.weights)
            .map(|(&e, &w)| e * w)
            .sum();
        assert!(
            mean > eta_true / 5.0 && mean < eta_true * 5.0,
            "posterior mean {mean} vs true {eta_true}"
        );
    }
}
