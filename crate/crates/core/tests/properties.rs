use proptest::prelude::*;
use swmas_core::graphs::{
    circulant_graph, expected_laplacians, laplacian, lossy_laplacian, spectrum, switching_index,
    Edge, EdgeIndexer, Graph, GraphFamily, LossMask,
};
use swmas_core::linalg::{eig_sym, Matrix};
use swmas_core::lmi::ReducedMatrices;
use swmas_core::model::{disagreement_projection, BlockTriple, DecomposableMatrices};
use swmas_core::oracles::loss_moments_by_enumeration;

/// Graph on `n` vertices with an arbitrary subset of at most `max_edges`
/// of the possible edges.
fn graph_strategy(max_n: usize, max_edges: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n).prop_flat_map(move |n| {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        let k = pairs.len().min(max_edges);
        proptest::sample::subsequence(pairs, 0..=k)
            .prop_map(move |edges| Graph::new(n, edges).unwrap())
    })
}

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

proptest! {
    #[test]
    fn laplacian_is_symmetric_psd_with_zero_row_sums(g in graph_strategy(7, 21)) {
        let l = laplacian(&g);
        for i in 0..g.n_vertices() {
            let row: f64 = l.row(i).iter().sum();
            prop_assert_eq!(row, 0.0);
            prop_assert_eq!(l[(i, i)], g.degree(i) as f64);
        }
        prop_assert!(l.check_symmetric(0.0).is_ok());
        let s = spectrum(&l).unwrap();
        prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(s[0].abs() < 1e-12);
        prop_assert!(s[0] > -1e-12);
    }

    #[test]
    fn loss_moments_match_enumeration(g in graph_strategy(6, 8), p in 0.0..=1.0f64) {
        let (e1, e2) = loss_moments_by_enumeration(&g, p).unwrap();
        let (f1, f2) = expected_laplacians(&g, p).unwrap();
        prop_assert!(e1.max_abs_diff(&f1) <= 1e-12);
        prop_assert!(e2.max_abs_diff(&f2) <= 1e-12);
    }

    #[test]
    fn switching_index_encodes_active_edges(
        g in graph_strategy(6, 15),
        flags in proptest::collection::vec(any::<bool>(), 15),
    ) {
        let union = Graph::complete(g.n_vertices()).unwrap();
        let idx = EdgeIndexer::new(&union);
        let mask = LossMask::from_flags(&idx, flags[..idx.len()].to_vec());
        let sigma = switching_index(&mask, &g, &idx);
        let mut expected: u128 = 1;
        for e in g.edges() {
            let mu = idx.mu(e).unwrap();
            let on = mask.is_active(e);
            prop_assert_eq!(sigma.has_edge(mu), on);
            if on {
                expected += 1 << (mu - 1);
            }
        }
        prop_assert_eq!(sigma.value(), Some(expected));

        // Only edges of the current topology exchange information.
        let lt = lossy_laplacian(&g, &mask);
        let manual = g.edges().filter(|e| mask.is_active(*e)).fold(
            Matrix::zeros(g.n_vertices(), g.n_vertices()),
            |mut acc, e| {
                let single = Graph::new(g.n_vertices(), [(e.lo(), e.hi())]).unwrap();
                acc.axpy(1.0, &laplacian(&single));
                acc
            },
        );
        prop_assert_eq!(lt, manual);
    }

    #[test]
    fn reduced_matrices_are_affine_in_lambda(
        d in matrix_strategy(2, 2),
        c in matrix_strategy(2, 2),
        q in matrix_strategy(2, 2),
        p in 0.0..=1.0f64,
        l1 in 0.0..20.0f64,
        l2 in 0.0..20.0f64,
        t in 0.0..=1.0f64,
    ) {
        let a = BlockTriple::new(d, c, q);
        let blocks = DecomposableMatrices::new(
            a.clone(),
            BlockTriple::zeros(2, 1),
            BlockTriple::zeros(1, 2),
            BlockTriple::zeros(1, 1),
        )
        .unwrap();
        let mid = ReducedMatrices::at(&blocks, p, t * l1 + (1.0 - t) * l2);
        let (r1, r2) = (ReducedMatrices::at(&blocks, p, l1), ReducedMatrices::at(&blocks, p, l2));
        let mut combo = r1.a.scale(t);
        combo.axpy(1.0 - t, &r2.a);
        prop_assert!(mid.a.max_abs_diff(&combo) < 1e-12);
        prop_assert!((mid.p_bar - (t * r1.p_bar + (1.0 - t) * r2.p_bar)).abs() < 1e-12);
    }

    #[test]
    fn projection_keeps_nonzero_spectrum(g in graph_strategy(7, 21)) {
        let n = g.n_vertices();
        let u = disagreement_projection(n).unwrap();
        let utu = &u.transpose() * &u;
        prop_assert!(utu.max_abs_diff(&Matrix::identity(n - 1)) < 1e-12);
        let ones = vec![1.0; n];
        prop_assert!(u.transpose().mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));

        let l = laplacian(&g);
        let reduced = spectrum(&(&(&u.transpose() * &l) * &u)).unwrap();
        let full = spectrum(&l).unwrap();
        for (a, b) in reduced.iter().zip(&full[1..]) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn eigen_decomposition_reconstructs(m in matrix_strategy(5, 5)) {
        let s = m.symmetrize();
        let e = eig_sym(&s).unwrap();
        prop_assert!(e.reconstruct().max_abs_diff(&s) < 1e-10);
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn circulant_spectrum_matches_closed_form() {
    for n in [5usize, 12, 20] {
        for k in 1..=(n - 1) / 2 {
            let g = circulant_graph(n, k).unwrap();
            let mut expected: Vec<f64> = (0..n)
                .map(|m| {
                    let s: f64 = (1..=k)
                        .map(|l| (2.0 * std::f64::consts::PI * (l * m) as f64 / n as f64).cos())
                        .sum();
                    2.0 * k as f64 - 2.0 * s
                })
                .collect();
            expected.sort_by(f64::total_cmp);
            let got = spectrum(&laplacian(&g)).unwrap();
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-9, "n={n} k={k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn configured_circulant_bounds_are_reported_not_enforced() {
    let graphs: Vec<Graph> = (1..=7).map(|k| circulant_graph(20, k).unwrap()).collect();
    assert!(GraphFamily::new(graphs.clone(), 2.68, 18.24).is_err());
    let fam = GraphFamily::with_configured_bounds(graphs, 2.68, 18.24).unwrap();
    assert!(!fam.bounds_verified());
    let report = fam.validate().unwrap();
    assert!(!report.pass);
    let outside: Vec<usize> = report.violations().map(|g| g.index).collect();
    assert_eq!(outside, [0, 1, 2]);
    assert!((report.tightest_hi - 18.2360679).abs() < 1e-6);
}

#[test]
fn edge_indexer_is_lexicographic() {
    let union = Graph::new(4, [(2, 3), (0, 1), (1, 3), (0, 2)]).unwrap();
    let idx = EdgeIndexer::new(&union);
    let order: Vec<Edge> = (1..=idx.len()).map(|mu| idx.edge(mu).unwrap()).collect();
    assert_eq!(
        order,
        [
            Edge::new(0, 1),
            Edge::new(0, 2),
            Edge::new(1, 3),
            Edge::new(2, 3)
        ]
    );
}
