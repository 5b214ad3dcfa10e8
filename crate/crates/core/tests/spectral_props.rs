#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;

use gcc_core::gin::GinConfig;
use gcc_core::graph::Graph;
use gcc_core::spectral::{normalized_laplacian, positional_embedding, symmetric_eig, vertex_features, FeatureLayout};
use gcc_core::synthetic;
use proptest::prelude::*;

fn graphs() -> impl Strategy<Value = Graph> {
    (1usize..24).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..60).prop_map(move |e| Graph::from_edges(n, e).unwrap())
    })
}

fn components(g: &Graph) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; g.num_vertices()];
    let mut out = Vec::new();
    for s in 0..g.num_vertices() {
        if label[s] != usize::MAX {
            continue;
        }
        let mut comp = vec![s];
        label[s] = out.len();
        let mut i = 0;
        while i < comp.len() {
            for &w in g.neighbors(comp[i]) {
                if label[w as usize] == usize::MAX {
                    label[w as usize] = out.len();
                    comp.push(w as usize);
                }
            }
            i += 1;
        }
        out.push(comp);
    }
    out
}

fn is_bipartite_with_edge(g: &Graph, comp: &[usize]) -> bool {
    if comp.len() < 2 {
        return false;
    }
    let mut color = vec![None; g.num_vertices()];
    color[comp[0]] = Some(false);
    let mut stack = vec![comp[0]];
    while let Some(u) = stack.pop() {
        let cu = color[u].unwrap();
        for &w in g.neighbors(u) {
            match color[w as usize] {
                None => {
                    color[w as usize] = Some(!cu);
                    stack.push(w as usize);
                }
                Some(cw) if cw == cu => return false,
                _ => {}
            }
        }
    }
    true
}

fn sorted_close(got: &[f64], mut want: Vec<f64>, tol: f64) {
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < tol, "eigenvalue {g} vs {w}");
    }
}

#[test]
fn known_normalized_spectra() {
    for n in 2..12 {
        let eig = symmetric_eig(&normalized_laplacian(&synthetic::complete(n))).unwrap();
        let mut want = vec![n as f64 / (n - 1) as f64; n - 1];
        want.push(0.0);
        sorted_close(&eig.eigenvalues, want, 1e-10);
    }
    for n in 3..14 {
        let eig = symmetric_eig(&normalized_laplacian(&synthetic::cycle(n))).unwrap();
        let want = (0..n).map(|k| 1.0 - (2.0 * PI * k as f64 / n as f64).cos()).collect();
        sorted_close(&eig.eigenvalues, want, 1e-10);
    }
    for leaves in 1..12 {
        let eig = symmetric_eig(&normalized_laplacian(&synthetic::star(leaves))).unwrap();
        let mut want = vec![1.0; leaves - 1];
        want.extend([0.0, 2.0]);
        sorted_close(&eig.eigenvalues, want, 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn normalized_spectrum_invariants(g in graphs()) {
        let eig = symmetric_eig(&normalized_laplacian(&g)).unwrap();
        let comps = components(&g);
        let tol = 1e-9;
        for w in eig.eigenvalues.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for &l in &eig.eigenvalues {
            prop_assert!(l > -tol && l < 2.0 + tol, "eigenvalue {} outside [0, 2]", l);
        }
        let zeros = eig.eigenvalues.iter().filter(|l| l.abs() < 1e-8).count();
        prop_assert_eq!(zeros, comps.len());
        let twos = eig.eigenvalues.iter().filter(|l| (*l - 2.0).abs() < 1e-8).count();
        let bipartite = comps.iter().filter(|c| is_bipartite_with_edge(&g, c)).count();
        prop_assert_eq!(twos, bipartite);
        let active = (0..g.num_vertices()).filter(|&v| g.degree(v) > 0).count() as f64;
        prop_assert!((eig.eigenvalues.iter().sum::<f64>() - active).abs() < 1e-9);
    }

    #[test]
    fn positional_columns_are_sign_fixed_and_padded(g in graphs(), dim in 1usize..32) {
        let pos = positional_embedding(&g, dim).unwrap();
        let n = g.num_vertices();
        prop_assert_eq!(pos.shape(), (n, dim));
        for c in 0..dim {
            let col: Vec<f64> = (0..n).map(|r| pos.get(r, c)).collect();
            if c >= n {
                prop_assert!(col.iter().all(|&x| x == 0.0));
                continue;
            }
            let norm: f64 = col.iter().map(|x| x * x).sum();
            prop_assert!((norm - 1.0).abs() < 1e-9);
            let max = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let first = col.iter().find(|x| x.abs() == max).unwrap();
            prop_assert!(*first > 0.0);
        }
    }

    #[test]
    fn feature_blocks_have_the_expected_layout(g in graphs()) {
        let layout = GinConfig::default().layout();
        prop_assert_eq!(layout.width(), 49);
        let x = vertex_features(&g, layout).unwrap();
        let p = layout.positional_dim;
        for v in 0..g.num_vertices() {
            let row = x.row(v);
            let onehot = &row[p..p + layout.degree_buckets];
            prop_assert_eq!(onehot.iter().sum::<f64>(), 1.0);
            let bucket = onehot.iter().position(|&b| b == 1.0).unwrap();
            prop_assert_eq!(bucket, g.degree(v).min(layout.degree_buckets - 1));
            prop_assert_eq!(row[layout.width() - 1], if v == 0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn features_follow_relabeling_when_spectrum_is_simple(
        (g, perm) in graphs().prop_flat_map(|g| {
            let n = g.num_vertices();
            (Just(g), Just((1..n).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let eig = symmetric_eig(&normalized_laplacian(&g)).unwrap();
        let n = g.num_vertices();
        let simple = eig.eigenvalues.windows(2).all(|w| w[1] - w[0] > 1e-6);
        let unique_peaks = (0..n).all(|c| {
            let mut m: Vec<f64> = (0..n).map(|r| eig.eigenvectors.get(r, c).abs()).collect();
            m.sort_by(|a, b| b.partial_cmp(a).unwrap());
            m.len() < 2 || m[0] - m[1] > 1e-6
        });
        prop_assume!(simple && unique_peaks);
        let perm: Vec<usize> = std::iter::once(0).chain(perm).collect();
        let layout = FeatureLayout { positional_dim: 8, degree_buckets: 6 };
        let x = vertex_features(&g, layout).unwrap();
        let y = vertex_features(&g.relabel(&perm), layout).unwrap();
        for v in 0..n {
            for (a, b) in x.row(v).iter().zip(y.row(perm[v])) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
