//! Undirected communication graphs, their Laplacians and the Bernoulli
//! packet-loss layer on top of them.
//!
//! Vertices are 0-based here; the text formats in the companion crate use
//! 1-based labels.
//!
//! Loss is symmetric: one Bernoulli variable per unordered edge, so the
//! lossy Laplacian of an undirected graph stays symmetric.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

/// Slack applied when testing eigenvalues against family bounds.
pub const SPECTRAL_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph must have at least one vertex")]
    NoVertices,
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("edge {{{0}, {1}}} references a vertex outside 0..{2}")]
    VertexOutOfRange(usize, usize, usize),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),
    #[error("graph family is empty")]
    EmptyFamily,
    #[error("graph {index} has {found} vertices, expected {expected}")]
    VertexCountMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid spectral bounds [{lo}, {hi}]: need 0 < lo <= hi")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("graph {index} violates the spectral bounds: nonzero eigenvalues span [{min}, {max}]")]
    BoundsViolated { index: usize, min: f64, max: f64 },
    #[error("graph {0} is disconnected")]
    Disconnected(usize),
    #[error("circulant graph on {n} vertices needs 1 <= k_forward <= {max}, got {k}")]
    CirculantRange { n: usize, k: usize, max: usize },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Unordered vertex pair stored as `(min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge(usize, usize);

impl Edge {
    /// Normalizes the pair. Self-loops are representable here and rejected
    /// by [`Graph::new`].
    pub fn new(i: usize, j: usize) -> Edge {
        if i <= j {
            Edge(i, j)
        } else {
            Edge(j, i)
        }
    }

    pub fn lo(self) -> usize {
        self.0
    }

    pub fn hi(self) -> usize {
        self.1
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}}}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_vertices: usize,
    edges: BTreeSet<Edge>,
}

impl Graph {
    pub fn new<I>(n_vertices: usize, edges: I) -> Result<Graph, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n_vertices == 0 {
            return Err(GraphError::NoVertices);
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if i >= n_vertices || j >= n_vertices {
                return Err(GraphError::VertexOutOfRange(i, j, n_vertices));
            }
            let e = Edge::new(i, j);
            if !set.insert(e) {
                return Err(GraphError::DuplicateEdge(e.lo(), e.hi()));
            }
        }
        Ok(Graph {
            n_vertices,
            edges: set,
        })
    }

    pub fn empty(n_vertices: usize) -> Result<Graph, GraphError> {
        Graph::new(n_vertices, core::iter::empty())
    }

    pub fn complete(n_vertices: usize) -> Result<Graph, GraphError> {
        let edges = (0..n_vertices).flat_map(|i| ((i + 1)..n_vertices).map(move |j| (i, j)));
        Graph::new(n_vertices, edges)
    }

    pub fn path(n_vertices: usize) -> Result<Graph, GraphError> {
        Graph::new(n_vertices, (1..n_vertices).map(|i| (i - 1, i)))
    }

    pub fn cycle(n_vertices: usize) -> Result<Graph, GraphError> {
        if n_vertices < 3 {
            return Graph::path(n_vertices);
        }
        Graph::new(
            n_vertices,
            (0..n_vertices).map(|i| (i, (i + 1) % n_vertices)),
        )
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains(&self, e: Edge) -> bool {
        self.edges.contains(&e)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.lo() == v || e.hi() == v)
            .count()
    }
}

/// Graph Laplacian `D - A`.
pub fn laplacian(g: &Graph) -> Matrix {
    let n = g.n_vertices();
    let mut l = Matrix::zeros(n, n);
    for e in g.edges() {
        let (i, j) = (e.lo(), e.hi());
        l[(i, j)] = -1.0;
        l[(j, i)] = -1.0;
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
    }
    l
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn spectrum(m: &Matrix) -> Result<Vec<f64>, GraphError> {
    Ok(linalg::sym_eigenvalues(m)?)
}

/// Circulant graph where vertex `i` links to `i ± 1, …, i ± k_forward`
/// (mod `n`).
pub fn circulant_graph(n: usize, k_forward: usize) -> Result<Graph, GraphError> {
    let max = n.saturating_sub(1) / 2;
    if k_forward == 0 || k_forward > max {
        return Err(GraphError::CirculantRange {
            n,
            k: k_forward,
            max,
        });
    }
    let edges = (0..n).flat_map(|i| (1..=k_forward).map(move |d| (i, (i + d) % n)));
    Graph::new(n, edges)
}

/// Spectral summary of one family member.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpectrumReport {
    pub index: usize,
    /// `λ_2`, or `None` for a single-vertex graph.
    pub min_nonzero: Option<f64>,
    /// `λ_N`, or `None` for a single-vertex graph.
    pub max: Option<f64>,
    pub within_bounds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyReport {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub graphs: Vec<GraphSpectrumReport>,
    pub pass: bool,
    /// Minimum `λ_2` over the family.
    pub tightest_lo: f64,
    /// Maximum `λ_N` over the family.
    pub tightest_hi: f64,
}

impl FamilyReport {
    pub fn violations(&self) -> impl Iterator<Item = &GraphSpectrumReport> {
        self.graphs.iter().filter(|g| !g.within_bounds)
    }
}

/// Checks every graph's nonzero Laplacian spectrum `λ_2..λ_N` against
/// `[lo, hi]` with [`SPECTRAL_SLACK`] tolerance.
pub fn validate_family(graphs: &[Graph], lo: f64, hi: f64) -> Result<FamilyReport, GraphError> {
    if graphs.is_empty() {
        return Err(GraphError::EmptyFamily);
    }
    let mut reports = Vec::with_capacity(graphs.len());
    let mut tightest_lo = f64::INFINITY;
    let mut tightest_hi = f64::NEG_INFINITY;
    for (index, g) in graphs.iter().enumerate() {
        let eig = spectrum(&laplacian(g))?;
        let (min_nonzero, max) = if eig.len() >= 2 {
            (Some(eig[1]), eig.last().copied())
        } else {
            (None, None)
        };
        let within_bounds = match (min_nonzero, max) {
            (Some(a), Some(b)) => a >= lo - SPECTRAL_SLACK && b <= hi + SPECTRAL_SLACK,
            _ => true,
        };
        if let Some(a) = min_nonzero {
            tightest_lo = tightest_lo.min(a);
        }
        if let Some(b) = max {
            tightest_hi = tightest_hi.max(b);
        }
        reports.push(GraphSpectrumReport {
            index,
            min_nonzero,
            max,
            within_bounds,
        });
    }
    let bounds_ok = lo > 0.0 && lo <= hi;
    Ok(FamilyReport {
        lambda_lo: lo,
        lambda_hi: hi,
        pass: bounds_ok && reports.iter().all(|r| r.within_bounds),
        graphs: reports,
        tightest_lo,
        tightest_hi,
    })
}

/// The admissible topology family together with its Laplacian eigenvalue
/// bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFamily {
    graphs: Vec<Graph>,
    lambda_lo: f64,
    lambda_hi: f64,
    bounds_verified: bool,
}

impl GraphFamily {
    /// Builds a family whose user-supplied bounds must contain every member's
    /// nonzero spectrum.
    pub fn new(graphs: Vec<Graph>, lambda_lo: f64, lambda_hi: f64) -> Result<Self, GraphError> {
        let family = GraphFamily::with_configured_bounds(graphs, lambda_lo, lambda_hi)?;
        if let Some(bad) = family.validate()?.violations().next() {
            return Err(GraphError::BoundsViolated {
                index: bad.index,
                min: bad.min_nonzero.unwrap_or(f64::NAN),
                max: bad.max.unwrap_or(f64::NAN),
            });
        }
        Ok(GraphFamily {
            bounds_verified: true,
            ..family
        })
    }

    /// Builds a family with bounds taken as configuration. Structural
    /// invariants are enforced but the spectral containment is not; call
    /// [`GraphFamily::validate`] to inspect it.
    pub fn with_configured_bounds(
        graphs: Vec<Graph>,
        lambda_lo: f64,
        lambda_hi: f64,
    ) -> Result<Self, GraphError> {
        let first = graphs.first().ok_or(GraphError::EmptyFamily)?;
        let n = first.n_vertices();
        for (index, g) in graphs.iter().enumerate() {
            if g.n_vertices() != n {
                return Err(GraphError::VertexCountMismatch {
                    index,
                    expected: n,
                    found: g.n_vertices(),
                });
            }
        }
        if !(lambda_lo > 0.0 && lambda_lo <= lambda_hi && lambda_hi.is_finite()) {
            return Err(GraphError::InvalidBounds {
                lo: lambda_lo,
                hi: lambda_hi,
            });
        }
        Ok(GraphFamily {
            graphs,
            lambda_lo,
            lambda_hi,
            bounds_verified: false,
        })
    }

    /// Builds a family with the tightest bounds: min `λ_2` and max `λ_N`.
    pub fn with_exact_bounds(graphs: Vec<Graph>) -> Result<Self, GraphError> {
        let report = validate_family(&graphs, 1.0, 1.0)?;
        for r in &report.graphs {
            if matches!(r.min_nonzero, Some(l2) if l2 <= SPECTRAL_SLACK) {
                return Err(GraphError::Disconnected(r.index));
            }
        }
        if !report.tightest_lo.is_finite() {
            // Single-vertex graphs carry no nonzero eigenvalues.
            return Err(GraphError::InvalidBounds {
                lo: report.tightest_lo,
                hi: report.tightest_hi,
            });
        }
        GraphFamily::new(graphs, report.tightest_lo, report.tightest_hi)
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, j: usize) -> &Graph {
        &self.graphs[j]
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.graphs[0].n_vertices()
    }

    pub fn lambda_lo(&self) -> f64 {
        self.lambda_lo
    }

    pub fn lambda_hi(&self) -> f64 {
        self.lambda_hi
    }

    /// Whether the bounds were checked against the spectra at construction.
    pub fn bounds_verified(&self) -> bool {
        self.bounds_verified
    }

    pub fn validate(&self) -> Result<FamilyReport, GraphError> {
        validate_family(&self.graphs, self.lambda_lo, self.lambda_hi)
    }
}

/// `(V, E⁰)` with `E⁰` the union of all member edge sets.
pub fn union_edge_set(f: &GraphFamily) -> Graph {
    let mut edges = BTreeSet::new();
    for g in f.graphs() {
        edges.extend(g.edges());
    }
    Graph {
        n_vertices: f.n_vertices(),
        edges,
    }
}

/// Bijection from the union edge set onto `1..=|E⁰|`, lexicographic in
/// `(min, max)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeIndexer {
    edges: Vec<Edge>,
}

impl EdgeIndexer {
    pub fn new(union: &Graph) -> EdgeIndexer {
        EdgeIndexer {
            edges: union.edges().collect(),
        }
    }

    pub fn for_family(f: &GraphFamily) -> EdgeIndexer {
        EdgeIndexer::new(&union_edge_set(f))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// 1-based index `μ(e)`.
    pub fn mu(&self, e: Edge) -> Option<usize> {
        self.edges.binary_search(&e).ok().map(|p| p + 1)
    }

    /// Edge with 1-based index `mu`.
    pub fn edge(&self, mu: usize) -> Option<Edge> {
        mu.checked_sub(1).and_then(|p| self.edges.get(p).copied())
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Zero-based positions of `g`'s edges in the canonical order, or `None`
    /// if `g` has an edge outside `E⁰`.
    pub fn positions(&self, g: &Graph) -> Option<Vec<usize>> {
        g.edges().map(|e| self.mu(e).map(|m| m - 1)).collect()
    }
}

/// One realisation of the loss variables: an activity flag per edge of
/// `E⁰`, stored in [`EdgeIndexer`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossMask {
    edges: Vec<Edge>,
    active: Vec<bool>,
}

impl LossMask {
    pub fn from_flags(idx: &EdgeIndexer, active: Vec<bool>) -> LossMask {
        assert_eq!(active.len(), idx.len(), "mask length must equal |E0|");
        LossMask {
            edges: idx.edges.clone(),
            active,
        }
    }

    pub fn all_active(idx: &EdgeIndexer) -> LossMask {
        LossMask::from_flags(idx, vec![true; idx.len()])
    }

    pub fn all_lost(idx: &EdgeIndexer) -> LossMask {
        LossMask::from_flags(idx, vec![false; idx.len()])
    }

    /// Mask with exactly the listed edges active.
    pub fn with_active(idx: &EdgeIndexer, active: &[Edge]) -> LossMask {
        let mut m = LossMask::all_lost(idx);
        for e in active {
            if let Some(mu) = idx.mu(*e) {
                m.active[mu - 1] = true;
            }
        }
        m
    }

    /// Activity of `e`; edges outside `E⁰` are reported inactive.
    pub fn is_active(&self, e: Edge) -> bool {
        self.edges
            .binary_search(&e)
            .map(|p| self.active[p])
            .unwrap_or(false)
    }

    pub fn flags(&self) -> &[bool] {
        &self.active
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
}

/// Draws each edge of `E⁰` independently active with probability `p`.
pub fn sample_loss_mask<R: Rng + ?Sized>(
    idx: &EdgeIndexer,
    p: f64,
    rng: &mut R,
) -> Result<LossMask, GraphError> {
    check_probability(p)?;
    let mut active = Vec::with_capacity(idx.len());
    fill_bernoulli(&mut active, idx.len(), p, rng);
    Ok(LossMask::from_flags(idx, active))
}

pub(crate) fn fill_bernoulli<R: Rng + ?Sized>(out: &mut Vec<bool>, n: usize, p: f64, rng: &mut R) {
    out.clear();
    out.extend((0..n).map(|_| rng.gen::<f64>() < p));
}

pub(crate) fn check_probability(p: f64) -> Result<(), GraphError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(GraphError::InvalidProbability(p))
    }
}

/// Stochastic switching index `σ = 1 + Σ α 2^(μ-1)` over the active edges of
/// the current topology. Stored as a little-endian bit vector of `σ - 1`
/// because `|E⁰|` routinely exceeds 128.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SwitchingIndex {
    offset_bits: Vec<u64>,
}

impl SwitchingIndex {
    fn from_words(mut words: Vec<u64>) -> Self {
        while words.last() == Some(&0) {
            words.pop();
        }
        SwitchingIndex { offset_bits: words }
    }

    /// The index `1` (no active edge).
    pub fn one() -> Self {
        SwitchingIndex {
            offset_bits: Vec::new(),
        }
    }

    /// `σ` as an integer if it fits in 128 bits.
    pub fn value(&self) -> Option<u128> {
        if self.offset_bits.len() > 2 {
            return None;
        }
        let lo = self.offset_bits.first().copied().unwrap_or(0) as u128;
        let hi = self.offset_bits.get(1).copied().unwrap_or(0) as u128;
        (hi << 64 | lo).checked_add(1)
    }

    /// Whether edge number `mu` (1-based) contributes.
    pub fn has_edge(&self, mu: usize) -> bool {
        let bit = mu - 1;
        self.offset_bits
            .get(bit / 64)
            .is_some_and(|w| w >> (bit % 64) & 1 == 1)
    }

    fn to_decimal(&self) -> String {
        // σ = offset + 1; add one with carry first.
        let mut words = self.offset_bits.clone();
        let mut carry = true;
        for w in words.iter_mut() {
            if !carry {
                break;
            }
            let (v, c) = w.overflowing_add(1);
            *w = v;
            carry = c;
        }
        if carry {
            words.push(1);
        }
        let mut digits = Vec::new();
        while words.iter().any(|w| *w != 0) {
            let mut rem: u128 = 0;
            for w in words.iter_mut().rev() {
                let cur = (rem << 64) | *w as u128;
                *w = (cur / 10) as u64;
                rem = cur % 10;
            }
            digits.push(b'0' + rem as u8);
        }
        digits.reverse();
        String::from_utf8(digits).unwrap_or_default()
    }
}

impl fmt::Display for SwitchingIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal())
    }
}

/// Switching index of `mask` restricted to the edges of topology `g_j`.
pub fn switching_index(mask: &LossMask, g_j: &Graph, idx: &EdgeIndexer) -> SwitchingIndex {
    let mut words = vec![0u64; idx.len().div_ceil(64)];
    for e in g_j.edges() {
        if let Some(mu) = idx.mu(e) {
            if mask.is_active(e) {
                let bit = mu - 1;
                words[bit / 64] |= 1 << (bit % 64);
            }
        }
    }
    SwitchingIndex::from_words(words)
}

/// Laplacian of the graph that actually exchanges information: edges of
/// `g_j` that are active in `mask`.
pub fn lossy_laplacian(g_j: &Graph, mask: &LossMask) -> Matrix {
    let n = g_j.n_vertices();
    let mut l = Matrix::zeros(n, n);
    for e in g_j.edges() {
        if mask.is_active(e) {
            let (i, j) = (e.lo(), e.hi());
            l[(i, j)] = -1.0;
            l[(j, i)] = -1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
    }
    l
}

/// Conditional expectations `(E[L̃], E[L̃ᵀL̃])` given topology `g_j`:
/// `p L` and `p² L² + 2p(1-p) L`.
pub fn expected_laplacians(g_j: &Graph, p: f64) -> Result<(Matrix, Matrix), GraphError> {
    check_probability(p)?;
    let l = laplacian(g_j);
    let mean = l.scale(p);
    let mut second = (&l * &l).scale(p * p);
    second.axpy(2.0 * p * (1.0 - p), &l);
    Ok((mean, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn laplacian_small_cases() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        assert_eq!(
            laplacian(&g),
            Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]])
        );
        assert_eq!(laplacian(&Graph::empty(3).unwrap()), Matrix::zeros(3, 3));
        let c = circulant_graph(20, 7).unwrap();
        let l = laplacian(&c);
        assert!((0..20).all(|i| l[(i, i)] == 14.0));
    }

    #[test]
    fn graph_rejects_bad_edges() {
        assert_eq!(Graph::new(3, [(1, 1)]), Err(GraphError::SelfLoop(1)));
        assert_eq!(
            Graph::new(3, [(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge(0, 1))
        );
        assert!(matches!(
            Graph::new(3, [(0, 3)]),
            Err(GraphError::VertexOutOfRange(..))
        ));
        assert_eq!(Graph::empty(0), Err(GraphError::NoVertices));
    }

    #[test]
    fn spectrum_examples() {
        let s = spectrum(&Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]])).unwrap();
        assert!(s[0].abs() < 1e-14 && (s[1] - 2.0).abs() < 1e-14);
        let s = spectrum(&laplacian(&Graph::cycle(4).unwrap())).unwrap();
        for (a, b) in s.iter().zip([0.0, 2.0, 2.0, 4.0]) {
            assert!((a - b).abs() < 1e-12, "{s:?}");
        }
        assert_eq!(spectrum(&Matrix::identity(3)).unwrap(), vec![1.0; 3]);
        let bad = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(spectrum(&bad).is_err());
    }

    #[test]
    fn circulant_examples() {
        assert_eq!(circulant_graph(20, 1).unwrap().n_edges(), 20);
        assert_eq!(circulant_graph(20, 3).unwrap().n_edges(), 60);
        assert_eq!(circulant_graph(5, 2).unwrap(), Graph::complete(5).unwrap());
        assert!(circulant_graph(20, 10).is_err());
        assert!(circulant_graph(20, 0).is_err());
        let g = circulant_graph(20, 3).unwrap();
        assert!((0..20).all(|v| g.degree(v) == 6));
    }

    #[test]
    fn family_validation_examples() {
        let report = validate_family(&[Graph::cycle(20).unwrap()], 2.68, 18.24).unwrap();
        assert!(!report.pass);
        let l2 = report.graphs[0].min_nonzero.unwrap();
        assert!((l2 - (2.0 - 2.0 * libm::cos(2.0 * core::f64::consts::PI / 20.0))).abs() < 1e-12);

        assert!(
            validate_family(&[Graph::complete(4).unwrap()], 4.0, 4.0)
                .unwrap()
                .pass
        );
        let r = validate_family(&[Graph::cycle(4).unwrap()], 2.0, 4.0).unwrap();
        assert!(r.pass);
        assert!((r.tightest_lo - 2.0).abs() < 1e-12 && (r.tightest_hi - 4.0).abs() < 1e-12);
        assert_eq!(validate_family(&[], 1.0, 2.0), Err(GraphError::EmptyFamily));
    }

    #[test]
    fn family_constructors() {
        let cyc = Graph::cycle(20).unwrap();
        assert!(matches!(
            GraphFamily::new(vec![cyc.clone()], 2.68, 18.24),
            Err(GraphError::BoundsViolated { index: 0, .. })
        ));
        let f = GraphFamily::with_configured_bounds(vec![cyc.clone()], 2.68, 18.24).unwrap();
        assert!(!f.bounds_verified());
        assert!(!f.validate().unwrap().pass);
        assert!(matches!(
            GraphFamily::with_configured_bounds(vec![cyc], 3.0, 2.0),
            Err(GraphError::InvalidBounds { .. })
        ));
        let exact = GraphFamily::with_exact_bounds(vec![
            Graph::cycle(4).unwrap(),
            Graph::complete(4).unwrap(),
        ])
        .unwrap();
        assert!(exact.bounds_verified());
        assert!((exact.lambda_lo() - 2.0).abs() < 1e-12);
        assert!((exact.lambda_hi() - 4.0).abs() < 1e-12);
        assert_eq!(
            GraphFamily::with_exact_bounds(vec![Graph::empty(3).unwrap()]),
            Err(GraphError::Disconnected(0))
        );
        assert!(matches!(
            GraphFamily::with_configured_bounds(
                vec![Graph::cycle(4).unwrap(), Graph::cycle(5).unwrap()],
                1.0,
                4.0
            ),
            Err(GraphError::VertexCountMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn union_examples() {
        let f = GraphFamily::with_exact_bounds(vec![
            Graph::cycle(4).unwrap(),
            Graph::complete(4).unwrap(),
        ])
        .unwrap();
        assert_eq!(union_edge_set(&f), Graph::complete(4).unwrap());
        let one = GraphFamily::with_exact_bounds(vec![Graph::cycle(5).unwrap()]).unwrap();
        assert_eq!(union_edge_set(&one), Graph::cycle(5).unwrap());
        let split = GraphFamily::with_configured_bounds(
            vec![
                Graph::new(3, [(0, 1)]).unwrap(),
                Graph::new(3, [(1, 2)]).unwrap(),
            ],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(union_edge_set(&split), Graph::path(3).unwrap());
    }

    #[test]
    fn indexer_is_lexicographic() {
        let idx = EdgeIndexer::new(&Graph::complete(4).unwrap());
        assert_eq!(idx.mu(Edge::new(0, 1)), Some(1));
        assert_eq!(idx.mu(Edge::new(3, 0)), Some(3));
        assert_eq!(idx.mu(Edge::new(2, 3)), Some(6));
        assert_eq!(idx.edge(4), Some(Edge::new(1, 2)));
        assert_eq!(idx.edge(0), None);
    }

    #[test]
    fn mask_sampling_extremes_and_rate() {
        let idx = EdgeIndexer::new(&Graph::complete(4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(sample_loss_mask(&idx, 1.0, &mut rng)
            .unwrap()
            .flags()
            .iter()
            .all(|b| *b));
        assert!(sample_loss_mask(&idx, 0.0, &mut rng)
            .unwrap()
            .flags()
            .iter()
            .all(|b| !*b));
        assert!(sample_loss_mask(&idx, 1.5, &mut rng).is_err());

        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            let m = sample_loss_mask(&idx, 0.5, &mut rng).unwrap();
            for (c, a) in counts.iter_mut().zip(m.flags()) {
                *c += *a as usize;
            }
        }
        for c in counts {
            let rate = c as f64 / draws as f64;
            assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
        }
    }

    #[test]
    fn mask_sampling_is_seed_deterministic() {
        let idx = EdgeIndexer::new(&circulant_graph(20, 7).unwrap());
        let a = sample_loss_mask(&idx, 0.3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = sample_loss_mask(&idx, 0.3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn switching_index_examples() {
        let k4 = Graph::complete(4).unwrap();
        let idx = EdgeIndexer::new(&k4);
        assert_eq!(
            switching_index(&LossMask::all_lost(&idx), &k4, &idx).value(),
            Some(1)
        );
        // μ({0,3}) = 3 → σ = 1 + 2².
        let m = LossMask::with_active(&idx, &[Edge::new(0, 3)]);
        assert_eq!(switching_index(&m, &k4, &idx).value(), Some(5));
        // Edge {0,3} is not part of this topology.
        let path = Graph::path(4).unwrap();
        assert_eq!(switching_index(&m, &path, &idx).value(), Some(1));
        assert_eq!(
            switching_index(&LossMask::all_active(&idx), &k4, &idx).value(),
            Some(64)
        );
    }

    #[test]
    fn switching_index_beyond_u128() {
        let g = circulant_graph(20, 7).unwrap();
        let idx = EdgeIndexer::new(&g);
        assert_eq!(idx.len(), 140);
        let sigma = switching_index(&LossMask::all_active(&idx), &g, &idx);
        assert_eq!(sigma.value(), None);
        assert!(sigma.has_edge(140) && sigma.has_edge(1));
        // 2^140 = 1393796574908163946345982392040522594123776
        assert_eq!(
            alloc::format!("{sigma}"),
            "1393796574908163946345982392040522594123776"
        );
        assert_eq!(alloc::format!("{}", SwitchingIndex::one()), "1");
    }

    #[test]
    fn lossy_laplacian_examples() {
        let c4 = Graph::cycle(4).unwrap();
        let idx = EdgeIndexer::new(&c4);
        assert_eq!(
            lossy_laplacian(&c4, &LossMask::all_active(&idx)),
            laplacian(&c4)
        );
        assert_eq!(
            lossy_laplacian(&c4, &LossMask::all_lost(&idx)),
            Matrix::zeros(4, 4)
        );
        // Losing {0,1} leaves the path 1–2–3–0.
        let kept: Vec<Edge> = c4.edges().filter(|e| *e != Edge::new(0, 1)).collect();
        let m = LossMask::with_active(&idx, &kept);
        let path = Graph::new(4, [(1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(lossy_laplacian(&c4, &m), laplacian(&path));
    }

    #[test]
    fn expected_laplacian_limits() {
        let g = Graph::cycle(5).unwrap();
        let l = laplacian(&g);
        let (m1, m2) = expected_laplacians(&g, 1.0).unwrap();
        assert_eq!(m1, l);
        assert_eq!(m2, &l * &l);
        let (z1, z2) = expected_laplacians(&g, 0.0).unwrap();
        assert!(z1.is_zero() && z2.is_zero());
        assert!(expected_laplacians(&g, -0.1).is_err());
    }
}
