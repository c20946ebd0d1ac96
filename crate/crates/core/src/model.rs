//! Decomposable switched jump-linear model of a homogeneous multi-agent
//! system.
//!
//! Every system matrix has the form `I_N ⊗ M^d + L̃ ⊗ M^c + L ⊗ M^p` where
//! `L̃` is the lossy Laplacian of the current loss pattern and `L` the
//! Laplacian of the current topology.

use alloc::vec::Vec;

use thiserror::Error;

use crate::graphs::{
    self, check_probability, laplacian, lossy_laplacian, switching_index, Edge, EdgeIndexer,
    GraphError, GraphFamily, LossMask, SwitchingIndex,
};
use crate::linalg::Matrix;

/// Largest per-topology edge count that [`mode_distribution`] enumerates.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("block {name} is {found_rows}x{found_cols}, expected {rows}x{cols}")]
    BlockShape {
        name: &'static str,
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("pattern matrices must be {n}x{n}")]
    PatternShape { n: usize },
    #[error("topology index {index} out of range (family has {len})")]
    TopologyIndex { index: usize, len: usize },
    #[error(
        "topology {index} has {edges} edges; enumerating 2^{edges} loss patterns exceeds the cap \
         of {cap} edges, use the agent-count-independent analysis instead"
    )]
    EnumerationCap {
        index: usize,
        edges: usize,
        cap: usize,
    },
    #[error("consensus gain must be positive and finite, got {0}")]
    InvalidGain(f64),
    #[error("disagreement projection needs at least two agents")]
    TooFewAgents,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// The decoupled, lossy-coupled and deterministically-coupled parts of one
/// system matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTriple {
    /// Multiplies `I_N`.
    pub decoupled: Matrix,
    /// Multiplies the lossy Laplacian `L̃`.
    pub coupled: Matrix,
    /// Multiplies the topology Laplacian `L`.
    pub pattern: Matrix,
}

impl BlockTriple {
    pub fn new(decoupled: Matrix, coupled: Matrix, pattern: Matrix) -> Self {
        BlockTriple {
            decoupled,
            coupled,
            pattern,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        BlockTriple::new(
            Matrix::zeros(rows, cols),
            Matrix::zeros(rows, cols),
            Matrix::zeros(rows, cols),
        )
    }

    pub fn scalars(decoupled: f64, coupled: f64, pattern: f64) -> Self {
        BlockTriple::new(
            Matrix::scalar(decoupled),
            Matrix::scalar(coupled),
            Matrix::scalar(pattern),
        )
    }

    pub fn shape(&self) -> (usize, usize) {
        self.decoupled.shape()
    }

    /// `I_N ⊗ M^d + L̃ ⊗ M^c + L ⊗ M^p`
    pub fn assemble(&self, l_tilde: &Matrix, l_j: &Matrix) -> Matrix {
        let n = l_j.rows();
        let mut m = Matrix::identity(n).kron(&self.decoupled);
        m.axpy(1.0, &l_tilde.kron(&self.coupled));
        m.axpy(1.0, &l_j.kron(&self.pattern));
        m
    }

    /// `M^d + λ (p M^c + M^p)`
    pub fn reduced(&self, p: f64, lambda: f64) -> Matrix {
        let mut m = self.decoupled.clone();
        m.axpy(lambda * p, &self.coupled);
        m.axpy(lambda, &self.pattern);
        m
    }

    fn check(&self, name: [&'static str; 3], rows: usize, cols: usize) -> Result<(), ModelError> {
        for (m, name) in [&self.decoupled, &self.coupled, &self.pattern]
            .into_iter()
            .zip(name)
        {
            if m.shape() != (rows, cols) {
                return Err(ModelError::BlockShape {
                    name,
                    rows,
                    cols,
                    found_rows: m.rows(),
                    found_cols: m.cols(),
                });
            }
        }
        Ok(())
    }
}

/// Per-agent blocks of the four system matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposableMatrices {
    pub a: BlockTriple,
    pub b: BlockTriple,
    pub c: BlockTriple,
    pub d: BlockTriple,
}

impl DecomposableMatrices {
    /// Checks `A: n_x×n_x`, `B: n_x×n_w`, `C: n_z×n_x`, `D: n_z×n_w` with
    /// dimensions read off `A^d`, `B^d` and `C^d`.
    pub fn new(
        a: BlockTriple,
        b: BlockTriple,
        c: BlockTriple,
        d: BlockTriple,
    ) -> Result<Self, ModelError> {
        let n_x = a.decoupled.rows();
        let n_w = b.decoupled.cols();
        let n_z = c.decoupled.rows();
        a.check(["A^d", "A^c", "A^p"], n_x, n_x)?;
        b.check(["B^d", "B^c", "B^p"], n_x, n_w)?;
        c.check(["C^d", "C^c", "C^p"], n_z, n_x)?;
        d.check(["D^d", "D^c", "D^p"], n_z, n_w)?;
        Ok(DecomposableMatrices { a, b, c, d })
    }

    pub fn n_x(&self) -> usize {
        self.a.decoupled.rows()
    }

    pub fn n_w(&self) -> usize {
        self.b.decoupled.cols()
    }

    pub fn n_z(&self) -> usize {
        self.c.decoupled.rows()
    }
}

/// Which of the two consensus set-ups from the performance study to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusVariant {
    /// Disturbance enters each agent, output is the consensus error `L x`.
    Standard,
    /// Input and output exchanged: `B^p = C^d = 1`, `B^d = C^p = 0`.
    Swapped,
}

/// First-order consensus `x⁺ = x + u + w` under
/// `u_i = κ Σ α_ij (x_j - x_i)`.
///
/// The output is always computed with the topology Laplacian, never the
/// lossy one, so `C^c = 0`.
pub fn consensus_example(kappa: f64) -> Result<DecomposableMatrices, ModelError> {
    consensus_variant(kappa, ConsensusVariant::Standard)
}

pub fn consensus_variant(
    kappa: f64,
    variant: ConsensusVariant,
) -> Result<DecomposableMatrices, ModelError> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(ModelError::InvalidGain(kappa));
    }
    let a = BlockTriple::scalars(1.0, -kappa, 0.0);
    let (b, c) = match variant {
        ConsensusVariant::Standard => (
            BlockTriple::scalars(1.0, 0.0, 0.0),
            BlockTriple::scalars(0.0, 0.0, 1.0),
        ),
        ConsensusVariant::Swapped => (
            BlockTriple::scalars(0.0, 0.0, 1.0),
            BlockTriple::scalars(1.0, 0.0, 0.0),
        ),
    };
    DecomposableMatrices::new(a, b, c, BlockTriple::zeros(1, 1))
}

/// A full problem instance: topology family, transmission probability and
/// agent blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedMas {
    pub family: GraphFamily,
    pub p: f64,
    pub blocks: DecomposableMatrices,
}

impl SwitchedMas {
    pub fn new(
        family: GraphFamily,
        p: f64,
        blocks: DecomposableMatrices,
    ) -> Result<Self, ModelError> {
        check_probability(p)?;
        Ok(SwitchedMas { family, p, blocks })
    }

    pub fn n_agents(&self) -> usize {
        self.family.n_vertices()
    }

    fn topology(&self, j: usize) -> Result<&graphs::Graph, ModelError> {
        self.family
            .graphs()
            .get(j)
            .ok_or(ModelError::TopologyIndex {
                index: j,
                len: self.family.len(),
            })
    }
}

/// Full-size system matrices for one `(σ, ν)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrices {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl ModeMatrices {
    /// Restricts to the disagreement space: every matrix `M` becomes
    /// `(Uᵀ ⊗ I) M (U ⊗ I)` with `U` from [`disagreement_projection`].
    pub fn project(&self, u: &Matrix, blocks: &DecomposableMatrices) -> ModeMatrices {
        let (n_x, n_w, n_z) = (blocks.n_x(), blocks.n_w(), blocks.n_z());
        let ux = u.kron(&Matrix::identity(n_x));
        let uw = u.kron(&Matrix::identity(n_w));
        let uz = u.kron(&Matrix::identity(n_z));
        let sandwich = |left: &Matrix, m: &Matrix, right: &Matrix| &(&left.transpose() * m) * right;
        ModeMatrices {
            a: sandwich(&ux, &self.a, &ux),
            b: sandwich(&ux, &self.b, &uw),
            c: sandwich(&uz, &self.c, &ux),
            d: sandwich(&uz, &self.d, &uw),
        }
    }
}

/// Assembles `A, B, C, D` for lossy Laplacian `l_tilde` and topology
/// Laplacian `l_j`.
pub fn assemble_mode(
    blocks: &DecomposableMatrices,
    l_tilde: &Matrix,
    l_j: &Matrix,
) -> Result<ModeMatrices, ModelError> {
    let n = l_j.rows();
    if !l_j.is_square() || l_tilde.shape() != (n, n) {
        return Err(ModelError::PatternShape { n });
    }
    Ok(ModeMatrices {
        a: blocks.a.assemble(l_tilde, l_j),
        b: blocks.b.assemble(l_tilde, l_j),
        c: blocks.c.assemble(l_tilde, l_j),
        d: blocks.d.assemble(l_tilde, l_j),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub index: SwitchingIndex,
    pub probability: f64,
    pub lossy_laplacian: Matrix,
}

/// Distribution of the stochastic mode given topology `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDistribution {
    pub topology: usize,
    pub laplacian: Matrix,
    pub modes: Vec<Mode>,
}

impl ModeDistribution {
    pub fn total_probability(&self) -> f64 {
        self.modes.iter().map(|m| m.probability).sum()
    }

    /// `Σ_i t_i L̃_i`
    pub fn mean_laplacian(&self) -> Matrix {
        let n = self.laplacian.rows();
        let mut acc = Matrix::zeros(n, n);
        for m in &self.modes {
            acc.axpy(m.probability, &m.lossy_laplacian);
        }
        acc
    }
}

pub fn mode_distribution(mas: &SwitchedMas, j: usize) -> Result<ModeDistribution, ModelError> {
    mode_distribution_with_cap(mas, j, DEFAULT_ENUMERATION_CAP)
}

/// Enumerates all loss patterns of topology `j`'s edges with their
/// probabilities `p^active (1-p)^lost`. Zero-probability patterns are
/// dropped, so `p = 1` yields a single mode.
pub fn mode_distribution_with_cap(
    mas: &SwitchedMas,
    j: usize,
    cap: usize,
) -> Result<ModeDistribution, ModelError> {
    let g = mas.topology(j)?;
    let m = g.n_edges();
    if m > cap {
        return Err(ModelError::EnumerationCap {
            index: j,
            edges: m,
            cap,
        });
    }
    let idx = EdgeIndexer::for_family(&mas.family);
    let edges: Vec<Edge> = g.edges().collect();
    let p = mas.p;
    let mut modes = Vec::new();
    let mut active = Vec::with_capacity(m);
    for pattern in 0u64..(1u64 << m) {
        let k = pattern.count_ones() as i32;
        let probability = libm::pow(p, k as f64) * libm::pow(1.0 - p, (m as i32 - k) as f64);
        if probability == 0.0 {
            continue;
        }
        active.clear();
        active.extend(
            edges
                .iter()
                .enumerate()
                .filter(|(b, _)| pattern >> b & 1 == 1)
                .map(|(_, e)| *e),
        );
        let mask = LossMask::with_active(&idx, &active);
        modes.push(Mode {
            index: switching_index(&mask, g, &idx),
            probability,
            lossy_laplacian: lossy_laplacian(g, &mask),
        });
    }
    Ok(ModeDistribution {
        topology: j,
        laplacian: laplacian(g),
        modes,
    })
}

/// Orthonormal basis `U` (`N × (N-1)`) of the complement of the all-ones
/// vector. Column `k` is the Helmert contrast
/// `(1, …, 1, -k, 0, …) / √(k(k+1))`.
pub fn disagreement_projection(n_agents: usize) -> Result<Matrix, ModelError> {
    if n_agents < 2 {
        return Err(ModelError::TooFewAgents);
    }
    let mut u = Matrix::zeros(n_agents, n_agents - 1);
    for col in 0..n_agents - 1 {
        let k = (col + 1) as f64;
        let norm = libm::sqrt(k * (k + 1.0));
        for row in 0..=col {
            u[(row, col)] = 1.0 / norm;
        }
        u[(col + 1, col)] = -k / norm;
    }
    Ok(u)
}
