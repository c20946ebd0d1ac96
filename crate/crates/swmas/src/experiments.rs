//! Experiment drivers shared by the CLI and the integration tests.
//!
//! Independent cells run in parallel with rayon; results are collected in
//! grid order so output never depends on scheduling.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use swmas_core::graphs::{
    circulant_graph, expected_laplacians, laplacian, Graph, GraphError, GraphFamily,
};
use swmas_core::lmi::{
    solve_bound, verify_certificate_lifting, BoundInstance, LmiCertificate, LmiError,
};
use swmas_core::model::{consensus_variant, ConsensusVariant, DecomposableMatrices, SwitchedMas};
use swmas_core::montecarlo::{
    combine, McConfig, McError, McEstimate, Simulator, SwitchingSequence,
};
use swmas_core::oracles::{consensus_closed_form, loss_moments_by_enumeration};
use swmas_core::sdp::SolveOptions;

use crate::report::{cell, Header};

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `1/n, 2/n, …, 1`: an evenly spaced grid on `(0, 1]`.
pub fn probability_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

/// Circulant graphs on `n` vertices with `1..=k_max` forward neighbours.
pub fn circulant_family_graphs(n: usize, k_max: usize) -> Result<Vec<Graph>, GraphError> {
    (1..=k_max).map(|k| circulant_graph(n, k)).collect()
}

/// Best bound, or `None` when the LMIs have no solution at these settings.
pub fn bound_or_none(
    inst: &BoundInstance,
    deflated: bool,
) -> Result<Option<LmiCertificate>, LmiError> {
    match solve_bound(inst, deflated, &SolveOptions::default()) {
        Ok(cert) => Ok(Some(cert)),
        Err(LmiError::NoCertificate { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct ContourConfig {
    pub n_agents: usize,
    pub kappa: f64,
    pub p: f64,
    pub variant: ConsensusVariant,
    pub lo_grid: Vec<f64>,
    pub hi_grid: Vec<f64>,
}

impl ContourConfig {
    /// Square grid of `resolution` points per axis on `(0, N]`.
    pub fn square(
        n_agents: usize,
        kappa: f64,
        p: f64,
        variant: ConsensusVariant,
        resolution: usize,
    ) -> Self {
        let top = n_agents as f64;
        let grid = linspace(top / resolution as f64, top, resolution);
        ContourConfig {
            n_agents,
            kappa,
            p,
            variant,
            lo_grid: grid.clone(),
            hi_grid: grid,
        }
    }

    pub fn header(&self) -> Header {
        Header::new("contour")
            .with("n_agents", self.n_agents)
            .with("kappa", self.kappa)
            .with("p", self.p)
            .with("variant", variant_name(self.variant))
            .with("lo_grid", crate::report::list(&self.lo_grid))
            .with("hi_grid", crate::report::list(&self.hi_grid))
    }
}

pub fn variant_name(v: ConsensusVariant) -> &'static str {
    match v {
        ConsensusVariant::Standard => "consensus",
        ConsensusVariant::Swapped => "swapped",
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourCell {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// `None` where no certificate exists.
    pub gamma: Option<f64>,
}

/// Minimal `γ` over the admissible part (`λ̲ ≤ λ̄`) of the grid, rows
/// ordered by `λ̄` then `λ̲`.
pub fn contour(cfg: &ContourConfig) -> Result<Vec<ContourCell>, LmiError> {
    let blocks = consensus_variant(cfg.kappa, cfg.variant)?;
    let cells: Vec<(f64, f64)> = cfg
        .hi_grid
        .iter()
        .flat_map(|&hi| {
            cfg.lo_grid
                .iter()
                .filter(move |&&lo| lo <= hi)
                .map(move |&lo| (lo, hi))
        })
        .collect();
    cells
        .par_iter()
        .map(|&(lo, hi)| {
            let inst = BoundInstance::new(cfg.n_agents, lo, hi, cfg.p, blocks.clone())?;
            Ok(ContourCell {
                lambda_lo: lo,
                lambda_hi: hi,
                gamma: bound_or_none(&inst, true)?.map(|c| c.gamma),
            })
        })
        .collect()
}

pub fn contour_csv(cells: &[ContourCell], header: &Header) -> String {
    let mut out = header.render();
    out.push_str("lambda_lo,lambda_hi,gamma\n");
    for c in cells {
        writeln!(out, "{},{},{}", c.lambda_lo, c.lambda_hi, cell(c.gamma)).unwrap();
    }
    out
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Candidate sequences: constant on every topology, round-robin with
/// `period`, and one uniform random sequence per seed.
pub fn default_sequences(
    n_topologies: usize,
    period: usize,
    random_seeds: &[u64],
    horizon: usize,
) -> Vec<SwitchingSequence> {
    let mut seqs: Vec<_> = (0..n_topologies)
        .map(|j| SwitchingSequence::constant(j, horizon))
        .collect();
    seqs.push(SwitchingSequence::sequential(period, horizon));
    seqs.extend(
        random_seeds
            .iter()
            .map(|&s| SwitchingSequence::random(s, horizon)),
    );
    seqs
}

#[derive(Debug, Clone)]
pub struct SpanConfig {
    pub family: GraphFamily,
    pub blocks: DecomposableMatrices,
    pub p_grid: Vec<f64>,
    pub sequences: Vec<SwitchingSequence>,
    pub mc: McConfig,
    /// Analyse and simulate only the disagreement dynamics.
    pub deflate: bool,
}

#[derive(Debug, Clone)]
pub struct SpanPoint {
    pub p: f64,
    pub certificate: Option<LmiCertificate>,
    /// One estimate per sequence, in input order.
    pub estimates: Vec<McEstimate>,
}

impl SpanPoint {
    pub fn h2_bound(&self) -> Option<f64> {
        self.certificate.as_ref().map(|c| c.h2_bound)
    }

    /// Smallest and largest estimated norm (square root of energy).
    pub fn mc_range(&self) -> (f64, f64) {
        let norms = self.estimates.iter().map(|e| e.mean.max(0.0).sqrt());
        norms.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpanError {
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Mc(#[from] McError),
}

/// Bound and simulated norms for every `p` in the grid.
pub fn span(cfg: &SpanConfig) -> Result<Vec<SpanPoint>, SpanError> {
    if cfg.sequences.is_empty() {
        return Err(McError::NoSequences.into());
    }
    cfg.mc.validate()?;
    let systems = cfg
        .p_grid
        .iter()
        .map(|&p| {
            SwitchedMas::new(cfg.family.clone(), p, cfg.blocks.clone()).map_err(LmiError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let certificates = systems
        .par_iter()
        .map(|mas| bound_or_none(&BoundInstance::from_mas(mas)?, cfg.deflate))
        .collect::<Result<Vec<_>, _>>()?;

    let k = cfg.family.len();
    let realized = cfg
        .sequences
        .iter()
        .map(|s| s.realize(k, cfg.mc.horizon))
        .collect::<Result<Vec<_>, _>>()?;
    let n_channels = cfg.family.n_vertices() * cfg.blocks.n_w();
    let jobs: Vec<(usize, usize, usize)> = (0..systems.len())
        .flat_map(|pi| {
            (0..realized.len()).flat_map(move |si| (0..n_channels).map(move |c| (pi, si, c)))
        })
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(pi, si, c)| {
            Simulator::new(&systems[pi], cfg.deflate)?.channel(&realized[si], c, &cfg.mc)
        })
        .collect::<Result<Vec<_>, McError>>()?;

    let mut it = results.into_iter();
    let mut points = Vec::with_capacity(systems.len());
    for (pi, certificate) in certificates.into_iter().enumerate() {
        let mut estimates = Vec::with_capacity(realized.len());
        for _ in 0..realized.len() {
            let mut per_channel = Vec::with_capacity(n_channels);
            let mut tail = false;
            for _ in 0..n_channels {
                let (est, t) = it.next().expect("one result per job");
                tail |= t;
                per_channel.push(est);
            }
            estimates.push(combine(per_channel, tail));
        }
        points.push(SpanPoint {
            p: cfg.p_grid[pi],
            certificate,
            estimates,
        });
    }
    Ok(points)
}

/// `p, h2_bound, h2_mc_min, h2_mc_max` per grid point.
pub fn span_csv(points: &[SpanPoint], header: &Header) -> String {
    let mut out = header.render();
    out.push_str("p,h2_bound,h2_mc_min,h2_mc_max\n");
    for pt in points {
        let (lo, hi) = pt.mc_range();
        writeln!(out, "{},{},{},{}", pt.p, cell(pt.h2_bound()), lo, hi).unwrap();
    }
    out
}

/// `p, sequence_id, h2sq_mean, stderr` per grid point and sequence.
pub fn span_aggregate_csv(
    points: &[SpanPoint],
    sequences: &[SwitchingSequence],
    header: &Header,
) -> String {
    let mut out = header.render();
    out.push_str("p,sequence_id,h2sq_mean,stderr,tail_exceeded\n");
    for pt in points {
        for (seq, est) in sequences.iter().zip(&pt.estimates) {
            writeln!(
                out,
                "{},{},{},{},{}",
                pt.p,
                seq.id(),
                est.mean,
                est.stderr,
                est.tail_exceeded
            )
            .unwrap();
        }
    }
    out
}

/// `p, sequence_id, channel, draw, energy` for every simulated response.
pub fn span_draws_csv(
    points: &[SpanPoint],
    sequences: &[SwitchingSequence],
    header: &Header,
) -> String {
    let mut out = header.render();
    out.push_str("p,sequence_id,channel,draw,energy\n");
    for pt in points {
        for (seq, est) in sequences.iter().zip(&pt.estimates) {
            for ch in &est.per_channel {
                for (d, e) in ch.energies.iter().enumerate() {
                    writeln!(out, "{},{},{},{},{}", pt.p, seq.id(), ch.channel, d, e).unwrap();
                }
            }
        }
    }
    out
}

/// Random connected graph: a random spanning tree plus extra edges, with
/// at most `max_edges` edges in total (at least `n - 1`).
pub fn random_connected_graph<R: Rng>(
    n: usize,
    max_edges: usize,
    rng: &mut R,
) -> Result<Graph, GraphError> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges: Vec<(usize, usize)> = (1..n)
        .map(|i| (order[rng.gen_range(0..i)], order[i]))
        .collect();
    let all = n * (n - 1) / 2;
    let target = rng.gen_range(n - 1..=max_edges.max(n - 1).min(all));
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !edges.contains(&(a, b)) && !edges.contains(&(b, a)))
        .collect();
    candidates.shuffle(rng);
    edges.extend(candidates.into_iter().take(target - (n - 1)));
    Graph::new(n, edges)
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Seeds the random graphs of the loss-moment check.
    pub seed: u64,
    /// Coefficient of the variance term in the second-moment formula under
    /// test. Anything other than 2 corrupts it (used to test the checker).
    pub variance_coefficient: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            variance_coefficient: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Largest discrepancy, or largest residual eigenvalue for LMI checks.
    pub residual: f64,
}

/// Loss-moment formula under test, perturbed when the coefficient is not 2.
fn formula_moments(
    g: &Graph,
    p: f64,
    coefficient: f64,
) -> Result<(swmas_core::Matrix, swmas_core::Matrix), GraphError> {
    let (first, mut second) = expected_laplacians(g, p)?;
    if coefficient != 2.0 {
        second.axpy((coefficient - 2.0) * p * (1.0 - p), &laplacian(g));
    }
    Ok((first, second))
}

/// Small-instance self-check: loss moments by enumeration, the scalar
/// closed form against the SDP, and lifting of certificates to the
/// mode-enumerated LMIs for 3 to 5 agents.
pub fn verify(cfg: &VerifyConfig) -> anyhow::Result<Vec<Check>> {
    let mut checks = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for n in [3usize, 4, 5] {
        for trial in 0..3 {
            let g = random_connected_graph(n, 8, &mut rng)?;
            let mut worst: f64 = 0.0;
            for p in [0.1, 0.5, 0.9] {
                let (e1, e2) = loss_moments_by_enumeration(&g, p)?;
                let (f1, f2) = formula_moments(&g, p, cfg.variance_coefficient)?;
                worst = worst.max(e1.max_abs_diff(&f1)).max(e2.max_abs_diff(&f2));
            }
            checks.push(Check {
                name: format!("loss moments, N={n}, graph {trial} ({} edges)", g.n_edges()),
                passed: worst <= 1e-12,
                residual: worst,
            });
        }
    }

    for (p, kappa) in [(0.5, 0.1), (0.2, 0.05), (0.9, 0.15), (1.0, 0.1)] {
        let (lo, hi) = (2.68, 18.24);
        let blocks = consensus_variant(kappa, ConsensusVariant::Standard)?;
        let inst = BoundInstance::new(20, lo, hi, p, blocks)?;
        let sdp = bound_or_none(&inst, true)?.map(|c| c.h2_bound);
        let exact = consensus_closed_form(ConsensusVariant::Standard, kappa, p, lo, hi, 20)
            .map(|o| o.h2_bound);
        let (passed, residual) = match (sdp, exact) {
            (Some(a), Some(b)) => {
                let rel = (a - b).abs() / b;
                (rel <= 1e-6, rel)
            }
            (None, None) => (true, 0.0),
            _ => (false, f64::INFINITY),
        };
        checks.push(Check {
            name: format!("scalar closed form, p={p}, kappa={kappa}"),
            passed,
            residual,
        });
    }

    for n in [3usize, 4, 5] {
        let graphs = vec![Graph::path(n)?, Graph::cycle(n)?, Graph::complete(n)?];
        let family = GraphFamily::with_exact_bounds(graphs)?;
        for p in [0.3, 0.7] {
            let mas = SwitchedMas::new(
                family.clone(),
                p,
                consensus_variant(0.1, ConsensusVariant::Standard)?,
            )?;
            let name = format!("lifting, N={n}, p={p}");
            match bound_or_none(&BoundInstance::from_mas(&mas)?, true)? {
                Some(cert) => {
                    let report = verify_certificate_lifting(&mas, &cert)?;
                    checks.push(Check {
                        name,
                        passed: report.passed(),
                        residual: report.max_residual(),
                    });
                }
                None => checks.push(Check {
                    name: name + " (no certificate)",
                    passed: false,
                    residual: f64::INFINITY,
                }),
            }
        }
    }
    Ok(checks)
}
