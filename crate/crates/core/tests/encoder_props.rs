#![allow(clippy::needless_range_loop)]

use gcc_core::gin::{encode, encode_with_grads, GinConfig, GinParams, PreparedInstance};
use gcc_core::graph::Graph;
use gcc_core::sampler::{augment, RwrConfig};
use gcc_core::tensor::{l2_norm, Tensor};
use gcc_core::{seeding, synthetic};
use rand::seq::SliceRandom;
use rand::Rng;

fn small_config() -> GinConfig {
    GinConfig {
        num_layers: 3,
        hidden_dim: 6,
        out_dim: 5,
        positional_dim: 4,
        degree_buckets: 5,
        dropout: 0.5,
    }
}

/// Plain-loop evaluation-mode forward pass.
fn reference_forward(params: &GinParams, g: &Graph, x: &Tensor) -> Vec<f64> {
    let affine_relu = |h: &[Vec<f64>], w: &Tensor, b: &Tensor| -> Vec<Vec<f64>> {
        h.iter()
            .map(|row| {
                (0..w.cols())
                    .map(|c| {
                        let s: f64 = row.iter().enumerate().map(|(r, v)| v * w.get(r, c)).sum();
                        (s + b.get(0, c)).max(0.0)
                    })
                    .collect()
            })
            .collect()
    };
    let n = g.num_vertices();
    let mut h: Vec<Vec<f64>> = (0..n).map(|v| x.row(v).to_vec()).collect();
    let t = &params.tensors;
    for l in 0..params.config.num_layers {
        let agg: Vec<Vec<f64>> = (0..n)
            .map(|v| {
                let mut s = h[v].clone();
                for &u in g.neighbors(v) {
                    for (a, b) in s.iter_mut().zip(&h[u as usize]) {
                        *a += b;
                    }
                }
                s
            })
            .collect();
        let z = affine_relu(&agg, &t[4 * l], &t[4 * l + 1]);
        h = affine_relu(&z, &t[4 * l + 2], &t[4 * l + 3]);
    }
    let width = h[0].len();
    let pooled: Vec<f64> = (0..width).map(|c| h.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
    let (w, b) = (&t[t.len() - 2], &t[t.len() - 1]);
    let out: Vec<f64> = (0..w.cols())
        .map(|c| pooled.iter().enumerate().map(|(r, v)| v * w.get(r, c)).sum::<f64>() + b.get(0, c))
        .collect();
    let norm = l2_norm(&out);
    out.into_iter().map(|v| v / norm).collect()
}

fn sampled_subgraphs(count: usize, seed: u64) -> Vec<Graph> {
    let corpus = synthetic::pretrain_corpus(seed, 4);
    let rwr = RwrConfig {
        max_set_size: 48,
        step_budget: 192,
        ..RwrConfig::default()
    };
    let mut rng = seeding::stream(seed, &[1]);
    (0..count)
        .map(|_| {
            let g = &corpus[rng.gen_range(0..corpus.len())];
            augment(g, rng.gen_range(0..g.num_vertices()), &rwr, &mut rng).unwrap().graph
        })
        .collect()
}

#[test]
fn forward_matches_plain_loop_reference() {
    let cfg = GinConfig::default();
    let params = GinParams::init(cfg, 11);
    let mut rng = seeding::stream(0, &[0]);
    for g in sampled_subgraphs(50, 11) {
        let inst = PreparedInstance::from_graph(&g, &cfg).unwrap();
        let got = encode(&params, &inst, false, &mut rng).unwrap().graph_rep;
        let want = reference_forward(&params, &g, &inst.features);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn gradients_match_central_differences_in_both_modes() {
    let cfg = small_config();
    let h = 1e-6;
    for (i, g) in sampled_subgraphs(6, 12).into_iter().enumerate() {
        let mut params = GinParams::init(cfg, 100 + i as u64);
        // zero biases put all-zero rows exactly on a ReLU kink
        let mut jitter = seeding::stream(12, &[100 + i as u64]);
        for t in &mut params.tensors {
            for x in t.data_mut() {
                *x += jitter.gen_range(-0.1..0.1);
            }
        }
        let inst = PreparedInstance::from_graph(&g, &cfg).unwrap();
        let mut up_rng = seeding::stream(12, &[i as u64]);
        let upstream: Vec<f64> = (0..cfg.out_dim).map(|_| up_rng.gen_range(-1.0..1.0)).collect();
        for train in [false, true] {
            // the same stream reproduces the same dropout masks
            let rng = || seeding::stream(77, &[i as u64]);
            let objective = |p: &GinParams| {
                let out = encode(p, &inst, train, &mut rng()).unwrap().graph_rep;
                out.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, analytic) = encode_with_grads(&params, &inst, &upstream, train, &mut rng()).unwrap();
            let mut probe = params.clone();
            for t in 0..probe.tensors.len() {
                for j in 0..probe.tensors[t].len() {
                    let orig = probe.tensors[t].data()[j];
                    probe.tensors[t].data_mut()[j] = orig + h;
                    let plus = objective(&probe);
                    probe.tensors[t].data_mut()[j] = orig - h;
                    let minus = objective(&probe);
                    probe.tensors[t].data_mut()[j] = orig;
                    let fd = (plus - minus) / (2.0 * h);
                    let a = analytic[t].data()[j];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "tensor {t} entry {j} train={train}: {a} vs {fd}");
                }
            }
        }
    }
}

#[test]
fn outputs_are_finite_unit_and_permutation_invariant_on_sampled_subgraphs() {
    let cfg = GinConfig::default();
    let params = GinParams::init(cfg, 13);
    let mut rng = seeding::stream(13, &[2]);
    let mut unused = seeding::stream(0, &[0]);
    for g in sampled_subgraphs(1000, 13) {
        let inst = PreparedInstance::from_graph(&g, &cfg).unwrap();
        let out = encode(&params, &inst, false, &mut unused).unwrap();
        assert!(out.node_reps.is_finite());
        assert!(out.graph_rep.iter().all(|x| x.is_finite()));
        assert!((l2_norm(&out.graph_rep) - 1.0).abs() < 1e-12);

        let n = g.num_vertices();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut rows = Tensor::zeros(n, inst.features.cols());
        for v in 0..n {
            rows.row_mut(perm[v]).copy_from_slice(inst.features.row(v));
        }
        let moved = encode(&params, &PreparedInstance::new(g.relabel(&perm), rows), false, &mut unused).unwrap();
        for (a, b) in out.graph_rep.iter().zip(&moved.graph_rep) {
            assert!((a - b).abs() < 1e-9);
        }
        for v in 0..n {
            for (a, b) in out.node_reps.row(v).iter().zip(moved.node_reps.row(perm[v])) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn degenerate_instances_stay_finite() {
    let cfg = GinConfig::default();
    let params = GinParams::init(cfg, 14);
    let mut rng = seeding::stream(0, &[0]);
    let cases = [
        Graph::empty(1),
        Graph::empty(5),
        synthetic::star(300),
        synthetic::complete(40),
        Graph::from_edges(4, [(1, 2)]).unwrap(),
    ];
    for g in &cases {
        let inst = PreparedInstance::from_graph(g, &cfg).unwrap();
        for train in [false, true] {
            let out = encode(&params, &inst, train, &mut rng).unwrap();
            assert!(out.graph_rep.iter().all(|x| x.is_finite()));
            assert!((l2_norm(&out.graph_rep) - 1.0).abs() < 1e-9);
        }
    }
}

