//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any of them fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swmas::experiments::{
    circulant_family_graphs, contour, default_sequences, linear_fit_r2, probability_grid,
    random_connected_graph, span, ContourConfig, SpanConfig,
};
use swmas_core::graphs::{expected_laplacians, Graph, GraphFamily};
use swmas_core::lmi::{
    solve_bound, solve_h2_bound, verify_certificate_lifting, BoundInstance, ReducedMatrices,
};
use swmas_core::model::{
    consensus_example, BlockTriple, ConsensusVariant, DecomposableMatrices, SwitchedMas,
};
use swmas_core::montecarlo::{estimate_h2, McConfig, SwitchingSequence};
use swmas_core::sdp::{self, AffineMatrixOperator, SdpProblem, SdpStatus, SolveOptions};
use swmas_core::Matrix;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn edge_laplacian(n: usize, a: usize, b: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    m[(a, a)] = 1.0;
    m[(b, b)] = 1.0;
    m[(a, b)] = -1.0;
    m[(b, a)] = -1.0;
    m
}

/// First and second moment of the lossy Laplacian by summing over every
/// loss pattern.
fn enumerate_moments(n: usize, edges: &[(usize, usize)], p: f64) -> (Matrix, Matrix) {
    let m = edges.len();
    let mut first = Matrix::zeros(n, n);
    let mut second = Matrix::zeros(n, n);
    for pattern in 0u32..(1 << m) {
        let mut lt = Matrix::zeros(n, n);
        let mut weight = 1.0;
        for (k, &(a, b)) in edges.iter().enumerate() {
            if pattern & (1 << k) != 0 {
                lt.axpy(1.0, &edge_laplacian(n, a, b));
                weight *= p;
            } else {
                weight *= 1.0 - p;
            }
        }
        first.axpy(weight, &lt);
        second.axpy(weight, &(&lt * &lt));
    }
    (first, second)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let n = rng.gen_range(2..=7);
        let mut pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        pairs.shuffle(&mut rng);
        let m = rng.gen_range(0..=pairs.len().min(8));
        pairs.truncate(m);
        let g = Graph::new(n, pairs.iter().copied()).unwrap();
        for p in [0.1, 0.5, 0.9] {
            let (e1, e2) = enumerate_moments(n, &pairs, p);
            let (f1, f2) = expected_laplacians(&g, p).unwrap();
            worst = worst.max(e1.max_abs_diff(&f1)).max(e2.max_abs_diff(&f2));
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-12 && within(t, Duration::from_secs(10)),
        format!(
            "max entry error {worst:.2e} (tol 1e-12), {:.2?} (limit 10 s)",
            t
        ),
    )
}

fn criterion_2() -> Outcome {
    let (n, kappa, p, lo, hi) = (20usize, 0.1f64, 0.5f64, 2.68f64, 18.24f64);
    let q_star = [lo, hi]
        .iter()
        .map(|&l| {
            l * l / (1.0 - (1.0 - p * kappa * l).powi(2) - 2.0 * p * (1.0 - p) * l * kappa * kappa)
        })
        .fold(f64::MIN, f64::max);
    let expected = ((n - 1) as f64 * q_star).sqrt();
    let start = Instant::now();
    let inst = BoundInstance::new(n, lo, hi, p, consensus_example(kappa).unwrap()).unwrap();
    let cert = solve_bound(&inst, true, &SolveOptions::default());
    let t = start.elapsed();
    match cert {
        Ok(cert) => {
            let rel = (cert.h2_bound - expected).abs() / expected;
            outcome(
                rel < 1e-6 && within(t, Duration::from_secs(1)),
                format!(
                    "h2 bound {:.10} vs closed form {expected:.10}, rel {rel:.2e} (tol 1e-6), {t:.2?} (limit 1 s)",
                    cert.h2_bound
                ),
            )
        }
        Err(e) => outcome(false, format!("solver error: {e}")),
    }
}

fn stable_blocks() -> DecomposableMatrices {
    DecomposableMatrices::new(
        BlockTriple::new(
            Matrix::from_rows(&[&[0.5, 0.1], &[0.0, 0.4]]),
            Matrix::from_rows(&[&[-0.05, 0.0], &[0.02, -0.03]]),
            Matrix::from_rows(&[&[0.0, 0.01], &[0.0, 0.0]]),
        ),
        BlockTriple::new(
            Matrix::from_rows(&[&[1.0], &[0.5]]),
            Matrix::from_rows(&[&[0.0], &[0.1]]),
            Matrix::zeros(2, 1),
        ),
        BlockTriple::new(
            Matrix::from_rows(&[&[1.0, 0.0]]),
            Matrix::zeros(1, 2),
            Matrix::from_rows(&[&[0.1, 0.1]]),
        ),
        BlockTriple::zeros(1, 1),
    )
    .unwrap()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut failure = None;
    for n in 3..=5 {
        for size in [2usize, 3, 3] {
            let graphs: Vec<Graph> = (0..size)
                .map(|_| random_connected_graph(n, n * (n - 1) / 2, &mut rng).unwrap())
                .collect();
            let fam = GraphFamily::with_exact_bounds(graphs).unwrap();
            for p in [0.3, 0.7] {
                for (blocks, deflated) in [
                    (consensus_example(0.1).unwrap(), true),
                    (stable_blocks(), false),
                ] {
                    let mas = SwitchedMas::new(fam.clone(), p, blocks).unwrap();
                    let result = solve_h2_bound(&mas, deflated)
                        .map_err(|e| e.to_string())
                        .and_then(|c| {
                            verify_certificate_lifting(&mas, &c).map_err(|e| e.to_string())
                        });
                    match result {
                        Ok(report) => {
                            checked += 1;
                            worst = worst.max(report.max_residual());
                            if !report.passed() && failure.is_none() {
                                failure = Some(format!("N={n} p={p} deflated={deflated}"));
                            }
                        }
                        Err(e) => {
                            failure.get_or_insert(format!("N={n} p={p}: {e}"));
                        }
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failure.is_none() && worst < 0.0 && within(t, Duration::from_secs(60)),
        format!(
            "{checked} certificates lifted, max residual eigenvalue {worst:.3e}{}, {t:.2?} (limit 60 s)",
            failure.map(|f| format!(", first failure {f}")).unwrap_or_default()
        ),
    )
}

fn criterion_4() -> Outcome {
    let cfg = ContourConfig::square(20, 0.1, 0.5, ConsensusVariant::Standard, 20);
    let cells = match contour(&cfg) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("contour failed: {e}")),
    };
    let mut max_dev: f64 = 0.0;
    let mut missing = 0;
    for &hi in &cfg.hi_grid {
        let row: Vec<f64> = cells
            .iter()
            .filter(|c| c.lambda_hi == hi)
            .filter_map(|c| {
                if c.gamma.is_none() {
                    missing += 1;
                }
                c.gamma
            })
            .collect();
        let (lo, top) = row
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &g| (a.min(g), b.max(g)));
        if !row.is_empty() {
            max_dev = max_dev.max(top - lo);
        }
    }
    let slice: Vec<(f64, f64)> = cells
        .iter()
        .filter(|c| c.lambda_lo == 5.0)
        .filter_map(|c| c.gamma.map(|g| (c.lambda_hi, g)))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = slice.into_iter().unzip();
    let r2 = linear_fit_r2(&x, &y);

    let swapped = ContourConfig::square(20, 0.1, 0.5, ConsensusVariant::Swapped, 20);
    let cells = match contour(&swapped) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("swapped contour failed: {e}")),
    };
    let mut swap_var: f64 = 0.0;
    for &hi in &swapped.hi_grid {
        let row: Vec<f64> = cells
            .iter()
            .filter(|c| c.lambda_hi == hi)
            .filter_map(|c| c.gamma)
            .collect();
        if let (Some(a), Some(b)) = (
            row.iter().copied().reduce(f64::min),
            row.iter().copied().reduce(f64::max),
        ) {
            swap_var = swap_var.max(b - a);
        }
    }
    outcome(
        missing == 0 && max_dev < 1e-6 && r2 > 0.99 && swap_var > 1e-3,
        format!(
            "consensus row deviation {max_dev:.2e} (tol 1e-6), slice R² {r2:.5} (need > 0.99), \
             swapped variation {swap_var:.3} (need > 1e-3), {missing} cells without certificate"
        ),
    )
}

/// Returns the dominance outcome and the degradation outcome.
fn criterion_5() -> (Outcome, Outcome) {
    let start = Instant::now();
    let graphs = circulant_family_graphs(20, 7).unwrap();
    let family = GraphFamily::with_configured_bounds(graphs, 2.68, 18.24).unwrap();
    let mc = McConfig::default();
    let sequences = default_sequences(family.len(), 1, &[1, 2], mc.horizon);
    let cfg = SpanConfig {
        family,
        blocks: consensus_example(0.1).unwrap(),
        p_grid: probability_grid(10),
        sequences,
        mc,
        deflate: true,
    };
    let points = match span(&cfg) {
        Ok(p) => p,
        Err(e) => {
            let fail = || outcome(false, format!("span failed: {e}"));
            return (fail(), fail());
        }
    };
    let t = start.elapsed();

    let mut violations = Vec::new();
    let mut compared = 0;
    let mut worst_margin = f64::INFINITY;
    for pt in &points {
        let Some(bound) = pt.h2_bound() else {
            violations.push(format!("p={}: no certificate", pt.p));
            continue;
        };
        let bound_sq = bound * bound;
        for (seq, est) in cfg.sequences.iter().zip(&pt.estimates) {
            compared += 1;
            let lower = est.mean - 3.0 * est.stderr;
            worst_margin = worst_margin.min(bound_sq - lower);
            if lower > bound_sq {
                violations.push(format!("p={} {}", pt.p, seq.id()));
            }
        }
    }
    let dominance = outcome(
        violations.is_empty() && within(t, Duration::from_secs(600)),
        format!(
            "{compared} (p, sequence) pairs, smallest margin bound² - (mean - 3se) = {worst_margin:.3}, \
             {} violations{}, {t:.1?} (limit 10 min)",
            violations.len(),
            violations.first().map(|v| format!(" (first {v})")).unwrap_or_default()
        ),
    );

    let bound_at = |p: f64| {
        points
            .iter()
            .find(|pt| (pt.p - p).abs() < 1e-12)
            .and_then(|pt| pt.h2_bound())
    };
    let degradation = match (bound_at(0.1), bound_at(0.9)) {
        (Some(a), Some(b)) => outcome(
            a > 2.0 * b,
            format!(
                "bound(0.1) = {a:.4}, bound(0.9) = {b:.4}, ratio {:.4} (need > 2)",
                a / b
            ),
        ),
        _ => outcome(false, "missing bound at p = 0.1 or p = 0.9"),
    };
    (dominance, degradation)
}

fn criterion_6() -> Outcome {
    let blocks = consensus_example(0.1).unwrap();
    let p_bar_zero =
        (1..=40).all(|i| ReducedMatrices::at(&blocks, 1.0, 0.5 * i as f64).p_bar == 0.0);

    let graphs = circulant_family_graphs(20, 7).unwrap();
    let family = GraphFamily::with_configured_bounds(graphs, 2.68, 18.24).unwrap();
    let mas = SwitchedMas::new(family.clone(), 1.0, blocks.clone()).unwrap();
    let mc = McConfig {
        horizon: 400,
        ..McConfig::default()
    };
    let mut zero_variance = true;
    for nu in [
        SwitchingSequence::sequential(1, 400),
        SwitchingSequence::random(1, 400),
    ] {
        let est = estimate_h2(&mas, &nu, &mc).unwrap();
        zero_variance &= est.stderr == 0.0
            && est
                .per_channel
                .iter()
                .all(|c| c.stderr == 0.0 && c.energies.iter().all(|e| *e == c.energies[0]));
    }

    let mas = SwitchedMas::new(family, 0.0, blocks).unwrap();
    let est = estimate_h2(
        &mas,
        &SwitchingSequence::constant(0, 2000),
        &McConfig::default(),
    )
    .unwrap();
    outcome(
        p_bar_zero && zero_variance && est.tail_exceeded,
        format!(
            "p=1: variance weight zero {p_bar_zero}, MC variance zero {zero_variance}; \
             p=0: tail flag {}",
            est.tail_exceeded
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut worst_residual = f64::NEG_INFINITY;
    for _ in 0..100 {
        let a: f64 = rng.gen_range(0.0..2.0);
        let mut prob = SdpProblem::new();
        let q = prob.add_variable(1);
        let mut op = AffineMatrixOperator::new(Matrix::zeros(1, 1));
        op.add_linear_map(&prob, q, |e| e.scale(a * a - 1.0));
        prob.add_constraint(op).unwrap();
        prob.add_positive_definite(q).unwrap();
        let sol = sdp::solve(&prob, &SolveOptions::default()).unwrap();
        let feasible = sol.status == SdpStatus::Optimal;
        if feasible != (a.abs() < 1.0) {
            mismatches += 1;
        }
        if feasible {
            let qv = prob.value(&sol.x, q)[(0, 0)];
            worst_residual = worst_residual.max((a * a - 1.0) * qv).max(-qv);
        }
    }

    // Optimal bound problems across the probability range.
    let blocks = consensus_example(0.1).unwrap();
    for p in probability_grid(10) {
        let inst = BoundInstance::new(20, 2.68, 18.24, p, blocks.clone()).unwrap();
        match solve_bound(&inst, true, &SolveOptions::default()) {
            Ok(cert) => worst_residual = worst_residual.max(cert.max_residual()),
            Err(_) => mismatches += 1,
        }
    }
    let inst = BoundInstance::new(4, 1.0, 4.0, 0.5, stable_blocks()).unwrap();
    match solve_bound(&inst, false, &SolveOptions::default()) {
        Ok(cert) => worst_residual = worst_residual.max(cert.max_residual()),
        Err(_) => mismatches += 1,
    }
    outcome(
        mismatches == 0 && worst_residual < 0.0,
        format!(
            "{mismatches} feasibility mismatches on 100 random a, \
             max residual eigenvalue at reported optima {worst_residual:.3e}"
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 loss moments by enumeration", criterion_1()),
        ("2 scalar closed form", criterion_2()),
        ("3 certificate lifting", criterion_3()),
        ("4 contour structure", criterion_4()),
    ];
    let (dominance, degradation) = criterion_5();
    results.push(("5a Monte-Carlo dominance", dominance));
    results.push(("5b degradation as p -> 0", degradation));
    results.push(("6 degenerate limits", criterion_6()));
    results.push(("7 SDP sanity", criterion_7()));

    let mut failed = 0;
    for (name, r) in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("criterion {name}: {tag} -- {}", r.detail);
        failed += usize::from(!r.passed);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
