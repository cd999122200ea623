//! Posterior information recursion and bound extraction.

use super::{GlobalLayout, InfoMatrix};
use nalgebra::DMatrix;

/// Inverse through a symmetric eigendecomposition with an eigenvalue floor
/// of `1e-12 · max |λ|`, which keeps near-singular recursion states usable
/// without exploding.
pub fn floored_inverse(m: &InfoMatrix) -> InfoMatrix {
    let n = m.nrows();
    let sym = (m + m.transpose()) / 2.0;
    let eig = sym.symmetric_eigen();
    let max_abs = eig
        .eigenvalues
        .iter()
        .map(|e| e.abs())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let floor = 1e-12 * max_abs;
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let ev = eig.eigenvalues[k].max(floor);
        let col = eig.eigenvectors.column(k);
        for i in 0..n {
            for l in 0..n {
                out[(i, l)] += col[i] * col[l] / ev;
            }
        }
    }
    (&out + out.transpose()) / 2.0
}

/// Linear Gaussian process model over the global parameter vector:
/// block-diagonal kinematics, feature random walk and pseudo-priors for the
/// nuisance phases, moduli and noise variance.
#[derive(Debug, Clone)]
pub struct ProcessModel {
    pub f: InfoMatrix,
    pub q: InfoMatrix,
}

impl ProcessModel {
    /// Assemble `F` and `Q` for the given layout. Phases, moduli and the
    /// noise variance get zero dynamics with large pseudo-variances, so the
    /// prior injects negligible information about them while keeping the
    /// recursion invertible.
    pub fn new(
        layout: &GlobalLayout,
        f_kin: &nalgebra::Matrix6<f64>,
        q_kin: &nalgebra::Matrix6<f64>,
        sigma_sfv: f64,
        pseudo_var: f64,
    ) -> Self {
        let d = layout.dim();
        let mut f = DMatrix::zeros(d, d);
        let mut q = DMatrix::zeros(d, d);
        for i in 0..6 {
            for k in 0..6 {
                f[(i, k)] = f_kin[(i, k)];
                q[(i, k)] = q_kin[(i, k)];
            }
        }
        for i in 0..3 * layout.n_components {
            let r = layout.sfv_offset() + i;
            f[(r, r)] = 1.0;
            q[(r, r)] = sigma_sfv * sigma_sfv;
        }
        for r in layout.phase_offset()..layout.eta_offset() + 1 {
            q[(r, r)] = pseudo_var;
        }
        ProcessModel { f, q }
    }
}

/// One step of the bound series.
#[derive(Debug, Clone)]
pub struct BoundStep {
    pub step: usize,
    pub peb: f64,
    pub meb: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BoundSeries {
    pub steps: Vec<BoundStep>,
}

/// Run the posterior information recursion over a sequence of snapshot
/// information matrices:
/// `J_{n|n−1} = (F J⁻¹ Fᵀ + Q)⁻¹`, `J_{n|n} = J_g(n) + J_{n|n−1}`,
/// with position and per-feature mapping bounds extracted from the floored
/// inverse of each posterior matrix.
pub fn pcrlb_recursion(
    snapshots: &[InfoMatrix],
    model: &ProcessModel,
    j_init: &InfoMatrix,
    layout: &GlobalLayout,
) -> BoundSeries {
    let mut j_post = j_init.clone();
    let mut steps = Vec::with_capacity(snapshots.len());
    for (n, j_g) in snapshots.iter().enumerate() {
        let predicted = if n == 0 {
            j_init.clone()
        } else {
            let cov = &model.f * floored_inverse(&j_post) * model.f.transpose() + &model.q;
            floored_inverse(&cov)
        };
        j_post = j_g + predicted;
        let pcrlb = floored_inverse(&j_post);
        let peb = (0..3).map(|i| pcrlb[(i, i)]).sum::<f64>().sqrt();
        let meb = (0..layout.n_components)
            .map(|k| {
                let o = layout.sfv_offset() + 3 * k;
                (0..3).map(|i| pcrlb[(o + i, o + i)]).sum::<f64>().sqrt()
            })
            .collect();
        steps.push(BoundStep {
            step: n + 1,
            peb,
            meb,
        });
    }
    BoundSeries { steps }
}

/// Sample mean of snapshot information matrices over prior draws.
pub fn mc_expectation<F>(draws: usize, mut snapshot: F) -> InfoMatrix
where
    F: FnMut(usize) -> InfoMatrix,
{
    assert!(draws >= 1);
    let mut acc = snapshot(0);
    for d in 1..draws {
        acc += snapshot(d);
    }
    acc / draws as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crlb::PhaseMode;
    use approx::assert_relative_eq;

    #[test]
    fn floored_inverse_matches_plain_inverse_when_regular() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = floored_inverse(&m);
        let expect = m.try_inverse().unwrap();
        assert_relative_eq!(inv[(0, 0)], expect[(0, 0)], max_relative = 1e-12);
        assert_relative_eq!(inv[(1, 0)], expect[(1, 0)], max_relative = 1e-12);
    }

    #[test]
    fn floored_inverse_handles_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let inv = floored_inverse(&m);
        assert_relative_eq!(inv[(0, 0)], 1.0, max_relative = 1e-9);
        assert!(inv[(1, 1)].is_finite());
        assert!(inv[(1, 1)] > 1e10);
    }

    #[test]
    fn constant_bound_without_information_flow() {
        // J_g = 0, Q = 0, F = I: the bound must stay constant
        let layout = GlobalLayout {
            n_components: 0,
            n_anchors: 1,
            mode: PhaseMode::Coherent,
        };
        let d = layout.dim();
        let model = ProcessModel {
            f: DMatrix::identity(d, d),
            q: DMatrix::zeros(d, d),
        };
        let j_init = DMatrix::identity(d, d) * 2.0;
        let snapshots = vec![DMatrix::zeros(d, d); 5];
        let series = pcrlb_recursion(&snapshots, &model, &j_init, &layout);
        let first = series.steps[0].peb;
        for s in &series.steps {
            assert_relative_eq!(s.peb, first, max_relative = 1e-9);
        }
        assert_relative_eq!(first, (3.0 / 2.0f64).sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn scalar_riccati_hand_iteration() {
        // one-dimensional toy: J_pred = 1/(J⁻¹ + q), J_post = j_g + J_pred
        let layout = GlobalLayout {
            n_components: 0,
            n_anchors: 1,
            mode: PhaseMode::Coherent,
        };
        let d = layout.dim();
        // isolate coordinate 0 by keeping everything else static with huge info
        let mut j_init = DMatrix::identity(d, d) * 1e12;
        j_init[(0, 0)] = 2.0;
        let mut f = DMatrix::identity(d, d);
        f[(0, 0)] = 1.0;
        let mut q = DMatrix::zeros(d, d);
        q[(0, 0)] = 0.5;
        let model = ProcessModel { f, q };
        let mut j_g = DMatrix::zeros(d, d);
        j_g[(0, 0)] = 1.5;
        let snapshots = vec![j_g.clone(), j_g.clone(), j_g];
        let series = pcrlb_recursion(&snapshots, &model, &j_init, &layout);

        // hand iteration
        let mut j: f64 = 2.0 + 1.5; // step 1 adds the snapshot to j_init
        let mut hand = vec![j];
        for _ in 0..2 {
            let pred = 1.0 / (1.0 / j + 0.5);
            j = pred + 1.5;
            hand.push(j);
        }
        for (s, expect_info) in series.steps.iter().zip(hand) {
            let var = 1.0 / expect_info;
            // coordinate 0 is one of the three position coordinates; the
            // other two keep variance 1e-12
            let expect_peb = (var + 2e-12f64).sqrt();
            assert_relative_eq!(s.peb, expect_peb, max_relative = 1e-6);
        }
    }

    #[test]
    fn mc_expectation_draws_one_is_single_eval() {
        let m = mc_expectation(1, |_| DMatrix::identity(3, 3) * 7.0);
        assert_relative_eq!(m[(0, 0)], 7.0);
        let m = mc_expectation(4, |d| DMatrix::identity(2, 2) * d as f64);
        assert_relative_eq!(m[(0, 0)], 1.5); // mean of 0,1,2,3
    }
}
