use gcc_core::contrast::{e2e_step, infonce, moco_step, MocoQueue};
use gcc_core::seeding;
use gcc_core::tensor::{dot, l2_norm, Tensor};
use proptest::prelude::*;

const DIM: usize = 6;

fn unit_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, DIM)
        .prop_filter("nonzero", |v| l2_norm(v) > 0.1)
        .prop_map(|v| {
            let n = l2_norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
}

fn rows(k: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(unit_vec(), k)
}

/// Direct evaluation without max-shifting, fine for moderate logits.
fn naive_infonce(q: &[f64], k: &[f64], negs: &[Vec<f64>], tau: f64) -> f64 {
    let pos = (dot(q, k) / tau).exp();
    let total = pos + negs.iter().map(|n| (dot(q, n) / tau).exp()).sum::<f64>();
    -(pos / total).ln()
}

/// Relative error with a floor of 1e-2: central differences at h = 1e-6 carry
/// about 1e-10 of roundoff, which the floor keeps below 1e-6.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

proptest! {
    #[test]
    fn loss_matches_direct_formula(q in unit_vec(), k in unit_vec(), negs in rows(0..20), tau in 0.2f64..2.0) {
        let out = infonce(&q, &k, &Tensor::from_rows(&negs), tau).unwrap();
        prop_assert!((out.loss - naive_infonce(&q, &k, &negs, tau)).abs() < 1e-12);
        prop_assert!(out.loss >= 0.0);
    }

    #[test]
    fn gradients_match_central_differences(q in unit_vec(), k in unit_vec(), negs in rows(1..8), tau in 0.1f64..1.0) {
        let h = 1e-6;
        let out = infonce(&q, &k, &Tensor::from_rows(&negs), tau).unwrap();
        let loss = |q: &[f64], k: &[f64], n: &[Vec<f64>]| infonce(q, k, &Tensor::from_rows(n), tau).unwrap().loss;
        for i in 0..DIM {
            let (mut a, mut b) = (q.clone(), q.clone());
            a[i] += h;
            b[i] -= h;
            prop_assert!(rel_err(out.grad_q[i], (loss(&a, &k, &negs) - loss(&b, &k, &negs)) / (2.0 * h)) < 1e-6);
            let (mut a, mut b) = (k.clone(), k.clone());
            a[i] += h;
            b[i] -= h;
            prop_assert!(rel_err(out.grad_k_plus[i], (loss(&q, &a, &negs) - loss(&q, &b, &negs)) / (2.0 * h)) < 1e-6);
            for r in 0..negs.len() {
                let (mut a, mut b) = (negs.clone(), negs.clone());
                a[r][i] += h;
                b[r][i] -= h;
                let fd = (loss(&q, &k, &a) - loss(&q, &k, &b)) / (2.0 * h);
                prop_assert!(rel_err(out.grad_negatives.get(r, i), fd) < 1e-6);
            }
        }
    }

    #[test]
    fn negative_order_is_irrelevant(
        (q, k, negs, perm) in (unit_vec(), unit_vec(), rows(1..12)).prop_flat_map(|(q, k, n)| {
            let len = n.len();
            (Just(q), Just(k), Just(n), Just((0..len).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let a = infonce(&q, &k, &Tensor::from_rows(&negs), 0.07).unwrap();
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| negs[i].clone()).collect();
        let b = infonce(&q, &k, &Tensor::from_rows(&shuffled), 0.07).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-12);
        for (x, y) in a.grad_q.iter().zip(&b.grad_q) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        for (j, &i) in perm.iter().enumerate() {
            for (x, y) in a.grad_negatives.row(i).iter().zip(b.grad_negatives.row(j)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_falls_with_positive_similarity_and_rises_with_negatives(
        q in unit_vec(), k in unit_vec(), negs in rows(1..10), extra in unit_vec()
    ) {
        let negs_t = Tensor::from_rows(&negs);
        let base = infonce(&q, &k, &negs_t, 0.5).unwrap().loss;
        // halfway towards q raises q·k₊ without leaving the unit sphere's interior
        let closer: Vec<f64> = k.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        prop_assume!(dot(&q, &closer) > dot(&q, &k) + 1e-9);
        prop_assert!(infonce(&q, &closer, &negs_t, 0.5).unwrap().loss < base);
        let mut more = negs.clone();
        more.push(extra);
        prop_assert!(infonce(&q, &k, &Tensor::from_rows(&more), 0.5).unwrap().loss > base);
    }

    #[test]
    fn in_batch_loss_is_the_row_mean_with_other_keys_as_negatives(
        (qs, ks) in (2usize..7).prop_flat_map(|b| (rows(b..b + 1), rows(b..b + 1))),
        tau in 0.1f64..1.0,
    ) {
        let b = qs.len();
        let (qt, kt) = (Tensor::from_rows(&qs), Tensor::from_rows(&ks));
        let out = e2e_step(&qt, &kt, tau).unwrap();
        let mut mean = 0.0;
        for i in 0..b {
            let negs: Vec<Vec<f64>> = (0..b).filter(|&j| j != i).map(|j| ks[j].clone()).collect();
            let want = naive_infonce(&qs[i], &ks[i], &negs, tau);
            prop_assert!((out.row_losses[i] - want).abs() < 1e-12);
            mean += want / b as f64;
        }
        prop_assert!((out.loss - mean).abs() < 1e-12);

        let h = 1e-6;
        let grad_keys = out.grad_keys.unwrap();
        for r in 0..b {
            for c in 0..DIM {
                let bump = |t: &Tensor, d: f64| {
                    let mut t = t.clone();
                    t.set(r, c, t.get(r, c) + d);
                    t
                };
                let fd_q = (e2e_step(&bump(&qt, h), &kt, tau).unwrap().loss
                    - e2e_step(&bump(&qt, -h), &kt, tau).unwrap().loss) / (2.0 * h);
                prop_assert!(rel_err(out.grad_queries.get(r, c), fd_q) < 1e-6);
                let fd_k = (e2e_step(&qt, &bump(&kt, h), tau).unwrap().loss
                    - e2e_step(&qt, &bump(&kt, -h), tau).unwrap().loss) / (2.0 * h);
                prop_assert!(rel_err(grad_keys.get(r, c), fd_k) < 1e-6);
            }
        }
    }
}

#[test]
fn queue_step_contrasts_against_the_queue_before_enqueueing() {
    let mut rng = seeding::stream(9, &[0]);
    let mut queue = MocoQueue::random(16, DIM, &mut rng);
    let before = queue.storage().clone();
    for r in 0..16 {
        assert!((l2_norm(before.row(r)) - 1.0).abs() < 1e-12);
    }
    let qs = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.6, 0.8, 0.0, 0.0, 0.0]]);
    let ks = Tensor::from_rows(&[vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 0.6, 0.8]]);
    let out = moco_step(&qs, &ks, &mut queue, 0.07).unwrap();
    let queue_rows: Vec<Vec<f64>> = (0..16).map(|r| before.row(r).to_vec()).collect();
    for i in 0..2 {
        let want = naive_infonce(qs.row(i), ks.row(i), &queue_rows, 0.07);
        assert!(rel_err(out.row_losses[i], want) < 1e-12);
    }
    assert!(out.grad_keys.is_none());
    let rows = queue.ordered_rows();
    assert_eq!(&rows[14..], &[ks.row(0).to_vec(), ks.row(1).to_vec()]);
    assert_eq!(queue.write_ptr(), 2);
}

#[test]
fn extreme_temperatures_stay_finite() {
    let q = [1.0, 0.0];
    let negs = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
    for tau in [1e-4, 1e-2, 1e4] {
        let out = infonce(&q, &[0.0, 1.0], &negs, tau).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.grad_q.iter().all(|x| x.is_finite()));
    }
    assert!(infonce(&q, &q, &negs, 0.0).is_err());
}
