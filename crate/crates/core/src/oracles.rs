//! Reference computations that do not share code paths with the solvers:
//! exhaustive loss-pattern enumeration and the closed-form scalar optimum
//! of the consensus analysis.

use crate::graphs::{
    check_probability, lossy_laplacian, Edge, EdgeIndexer, Graph, GraphError, LossMask,
};
use crate::linalg::Matrix;
use crate::model::ConsensusVariant;
use alloc::vec::Vec;

/// Largest edge count accepted by [`loss_moments_by_enumeration`].
pub const MAX_ENUMERATED_EDGES: usize = 24;

/// `(E[L̃], E[L̃ᵀL̃])` for topology `g` by summing over all `2^|E|` loss
/// patterns, weighted by their probabilities.
pub fn loss_moments_by_enumeration(g: &Graph, p: f64) -> Result<(Matrix, Matrix), GraphError> {
    check_probability(p)?;
    let edges: Vec<Edge> = g.edges().collect();
    let m = edges.len();
    assert!(m <= MAX_ENUMERATED_EDGES, "too many edges to enumerate");
    let idx = EdgeIndexer::new(g);
    let n = g.n_vertices();
    let mut first = Matrix::zeros(n, n);
    let mut second = Matrix::zeros(n, n);
    let mut active = Vec::with_capacity(m);
    for pattern in 0u64..(1u64 << m) {
        let k = pattern.count_ones();
        let weight = libm::pow(p, k as f64) * libm::pow(1.0 - p, (m as u32 - k) as f64);
        if weight == 0.0 {
            continue;
        }
        active.clear();
        active.extend((0..m).filter(|b| pattern >> b & 1 == 1).map(|b| edges[b]));
        let lt = lossy_laplacian(g, &LossMask::with_active(&idx, &active));
        first.axpy(weight, &lt);
        second.axpy(weight, &(&lt.transpose() * &lt));
    }
    Ok((first, second))
}

/// Optimum of the agent-count-independent LMIs for the scalar consensus
/// example, checked only at the two interval endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptimum {
    /// Smallest admissible `Q`.
    pub q_star: f64,
    /// Smallest admissible `trace(Z_1)`.
    pub gamma_sq: f64,
    /// `√((N-1) γ²)`
    pub h2_bound: f64,
    /// Endpoint at which the `Q` constraint binds.
    pub binding_lambda: f64,
}

/// `1 - (1 - pκλ)² - 2p(1-p)λκ²`: the factor multiplying `Q` in the
/// scalar stability constraint.
pub fn consensus_stability_margin(kappa: f64, p: f64, lambda: f64) -> f64 {
    let a_bar = 1.0 - p * kappa * lambda;
    1.0 - a_bar * a_bar - 2.0 * p * (1.0 - p) * lambda * kappa * kappa
}

/// Closed-form optimum for the deflated consensus analysis, or `None` when
/// the stability factor is not positive at an endpoint (no certificate).
///
/// Standard variant: `Q ≥ λ²/d(λ)` at both endpoints and `Z_1 ≥ Q`.
/// Swapped variant: `Q ≥ 1/d(λ)` at both endpoints and `Z_1 ≥ λ² Q`.
pub fn consensus_closed_form(
    variant: ConsensusVariant,
    kappa: f64,
    p: f64,
    lambda_lo: f64,
    lambda_hi: f64,
    n_agents: usize,
) -> Option<ScalarOptimum> {
    let mut q_star = f64::NEG_INFINITY;
    let mut binding_lambda = lambda_lo;
    for lambda in [lambda_lo, lambda_hi] {
        let d = consensus_stability_margin(kappa, p, lambda);
        if !(d > 0.0) {
            return None;
        }
        let numerator = match variant {
            ConsensusVariant::Standard => lambda * lambda,
            ConsensusVariant::Swapped => 1.0,
        };
        let q = numerator / d;
        if q > q_star {
            q_star = q;
            binding_lambda = lambda;
        }
    }
    let top = lambda_lo.max(lambda_hi);
    let gamma_sq = match variant {
        ConsensusVariant::Standard => q_star,
        ConsensusVariant::Swapped => top * top * q_star,
    };
    let h2_bound = libm::sqrt((n_agents as f64 - 1.0) * gamma_sq);
    Some(ScalarOptimum {
        q_star,
        gamma_sq,
        h2_bound,
        binding_lambda,
    })
}
