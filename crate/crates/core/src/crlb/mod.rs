//! Posterior Cramér–Rao bounds for the joint localization-and-mapping
//! problem: channel Fisher information, Jacobian chains from channel
//! parameters to geometric parameters, the snapshot information matrix and
//! the posterior information recursion.
//!
//! The bound code uses the unit-modulus response family with the carrier
//! phase pulled out as an explicit parameter; path loss is absorbed into the
//! amplitude moduli. Two phase models are supported: `Coherent` shares each
//! component phase across anchors, `Noncoherent` gives every anchor its own
//! copy, which costs the cross-anchor aperture after nuisance inversion.

mod fim;
mod jacobian;
mod recursion;

pub use fim::{channel_fim, response_atom, response_derivatives, ChannelParams, ComponentParams};
pub use jacobian::{jacobian, local_channel_params, sfv_range_jacobian, GlobalGeometry};
pub use recursion::{
    floored_inverse, mc_expectation, pcrlb_recursion, BoundSeries, BoundStep, ProcessModel,
};

use crate::channel::RfParams;
use crate::geometry::{GeometryError, PaConfig};
use serde::{Deserialize, Serialize};

/// Classic snapshot information matrix: the sum over anchors of the channel
/// FIM propagated through the parameter-mapping Jacobians,
/// `Σ_j G_j F_ch^{(j)} G_jᵀ`. Velocity rows stay identically zero.
pub fn snapshot_fim(
    geometry: &GlobalGeometry,
    pas: &[PaConfig],
    rf: &RfParams,
    layout: &GlobalLayout,
) -> Result<InfoMatrix, GeometryError> {
    let d = layout.dim();
    let mut total = nalgebra::DMatrix::zeros(d, d);
    for (j, pa) in pas.iter().enumerate() {
        let params = local_channel_params(geometry, pa, j, rf.wavelength)?;
        let f_ch = channel_fim(&params, rf, &pa.geometry);
        let g = jacobian(geometry, pa, j, layout, rf.wavelength)?;
        total += &g * f_ch * g.transpose();
    }
    Ok((&total + total.transpose()) / 2.0)
}

/// Symmetric information matrix over the global parameter vector.
pub type InfoMatrix = nalgebra::DMatrix<f64>;

/// Whether component phases are shared across anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    Coherent,
    Noncoherent,
}

/// Dimension bookkeeping for the global parameter vector
/// `[x (6) | sfv (3K) | phases (Dφ) | moduli (JK̃) | η (1)]`.
#[derive(Debug, Clone, Copy)]
pub struct GlobalLayout {
    pub n_components: usize,
    pub n_anchors: usize,
    pub mode: PhaseMode,
}

impl GlobalLayout {
    pub fn k_tilde(&self) -> usize {
        self.n_components + 1
    }

    pub fn phase_dim(&self) -> usize {
        match self.mode {
            PhaseMode::Coherent => self.k_tilde(),
            PhaseMode::Noncoherent => self.k_tilde() * self.n_anchors,
        }
    }

    pub fn dim(&self) -> usize {
        6 + 3 * self.n_components + self.phase_dim() + self.n_anchors * self.k_tilde() + 1
    }

    pub fn sfv_offset(&self) -> usize {
        6
    }

    pub fn phase_offset(&self) -> usize {
        6 + 3 * self.n_components
    }

    pub fn moduli_offset(&self) -> usize {
        self.phase_offset() + self.phase_dim()
    }

    pub fn eta_offset(&self) -> usize {
        self.moduli_offset() + self.n_anchors * self.k_tilde()
    }

    /// Row of the global phase parameter of component `k` as seen by anchor
    /// `j`.
    pub fn phase_row(&self, j: usize, k_tilde_idx: usize) -> usize {
        match self.mode {
            PhaseMode::Coherent => self.phase_offset() + k_tilde_idx,
            PhaseMode::Noncoherent => self.phase_offset() + j * self.k_tilde() + k_tilde_idx,
        }
    }

    pub fn modulus_row(&self, j: usize, k_tilde_idx: usize) -> usize {
        self.moduli_offset() + j * self.k_tilde() + k_tilde_idx
    }
}

/// Local channel-parameter layout `[el (K̃) | az (K̃) | τ (K̃) | φ (K̃) |
/// a (K̃) | η]`.
#[derive(Debug, Clone, Copy)]
pub struct LocalLayout {
    pub k_tilde: usize,
}

impl LocalLayout {
    pub fn dim(&self) -> usize {
        5 * self.k_tilde + 1
    }
    pub fn el(&self, k: usize) -> usize {
        k
    }
    pub fn az(&self, k: usize) -> usize {
        self.k_tilde + k
    }
    pub fn delay(&self, k: usize) -> usize {
        2 * self.k_tilde + k
    }
    pub fn phase(&self, k: usize) -> usize {
        3 * self.k_tilde + k
    }
    pub fn modulus(&self, k: usize) -> usize {
        4 * self.k_tilde + k
    }
    pub fn eta(&self) -> usize {
        5 * self.k_tilde
    }
}
