use ndgrad::{grad_check, ops, Graph, KeyMask, Reduce, Tensor, Var};
use proptest::prelude::*;

const H: f64 = 1e-5;

/// Deterministic pseudo-random fill in roughly [-1, 1].
fn filled(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Weighted sum so that every output element gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Var {
    let w = g.constant(filled(g.shape(x), seed));
    let y = g.mul(x, w).unwrap();
    g.sum_all(y)
}

#[test]
fn matmul_sum_gradient_is_ones_times_b_transpose() {
    let a = filled(&[2, 3], 1);
    let b = filled(&[3, 4], 2);
    let mut g = Graph::new();
    let av = g.param(a.clone());
    let bv = g.constant(b.clone());
    let c = g.matmul(av, bv).unwrap();
    let s = g.sum_all(c);
    let grads = g.backward(s);
    let expected = ops::matmul(&Tensor::ones(&[2, 4]), &ops::transpose(&b).unwrap()).unwrap();
    assert!(grads.get(av).unwrap().max_abs_diff(&expected) < 1e-14);

    let report = grad_check(
        |g, p| {
            let c = g.matmul(p[0], p[1])?;
            Ok(g.sum_all(c))
        },
        &[a, b],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");
}

#[test]
fn batched_and_broadcast_matmul_gradients() {
    let report = grad_check(
        |g, p| {
            let c = g.matmul(p[0], p[1])?;
            let d = g.matmul(c, p[2])?;
            Ok(weighted_sum(g, d, 9))
        },
        &[filled(&[2, 3, 4], 3), filled(&[2, 4, 2], 4), filled(&[2, 3], 5)],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn softmax_and_masked_softmax_gradients() {
    for mask in [None, Some(KeyMask::causal(3))] {
        let report = grad_check(
            |g, p| {
                let s = g.softmax(p[0], mask.clone())?;
                Ok(weighted_sum(g, s, 11))
            },
            &[filled(&[2, 3, 3], 6)],
            H,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}

#[test]
fn softmax_cross_entropy_three_logits() {
    let report = grad_check(
        |g, p| {
            let ls = g.log_softmax(p[0], None)?;
            let picked = g.pick(ls, &[1])?;
            let s = g.sum_all(picked);
            Ok(g.scale(s, -1.0))
        },
        &[Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap()],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn masked_log_softmax_gradient() {
    let mask = KeyMask::off_diagonal(4).unwrap();
    let report = grad_check(
        |g, p| {
            let ls = g.log_softmax(p[0], Some(mask.clone()))?;
            let picked = g.pick(ls, &[2, 3, 0, 1])?;
            Ok(g.mean_all(picked))
        },
        &[filled(&[4, 4], 7)],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn layer_norm_gradient() {
    let report = grad_check(
        |g, p| {
            let y = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
            Ok(weighted_sum(g, y, 12))
        },
        &[filled(&[3, 5], 8), filled(&[5], 9), filled(&[5], 10)],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn gelu_gradient_at_one() {
    let report = grad_check(
        |g, p| {
            let y = g.gelu(p[0]);
            Ok(g.sum_all(y))
        },
        &[Tensor::scalar(1.0)],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn elementwise_and_structural_gradients() {
    let report = grad_check(
        |g, p| {
            let a = g.add(p[0], p[1])?; // suffix broadcast
            let b = g.mul(a, p[0])?;
            let c = g.sub(b, p[0])?;
            let d = g.mul_scalar(c, p[2])?;
            let e = g.exp(d);
            let f = g.gelu(e);
            let t = g.permute(f, &[1, 0, 2])?;
            let r = g.reshape(t, &[6, 2])?;
            let gat = g.gather(r, &[5, 0, 0, 3], 0)?;
            let cat = g.concat(&[gat, r], 0)?;
            let n = g.normalize_rows(cat)?;
            let m = g.reduce(n, 1, Reduce::Max)?;
            let s = g.reduce(n, 0, Reduce::Mean)?;
            let m = g.sum_all(m);
            let s = weighted_sum(g, s, 13);
            let tot = g.add(m, s)?;
            Ok(tot)
        },
        &[filled(&[2, 3, 2], 14).map(|v| 0.5 * v), filled(&[3, 2], 15), Tensor::scalar(0.7)],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn grad_check_sum_of_squares() {
    let report = grad_check(
        |g, p| {
            let sq = g.mul(p[0], p[0])?;
            Ok(g.sum_all(sq))
        },
        &[Tensor::from_vec(vec![1.0, 2.0])],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-8);
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum_all(sq);
    assert_eq!(g.backward(s).get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn grad_check_rejects_non_finite_objective() {
    let err = grad_check(
        |g, p| {
            let e = g.exp(p[0]);
            Ok(g.sum_all(e))
        },
        &[Tensor::scalar(1000.0)],
        H,
    )
    .unwrap_err();
    assert!(matches!(err, ndgrad::Error::NonFinite { .. }));
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let d = g.detach(x);
    let y = g.mul(x, d).unwrap();
    let s = g.sum_all(y);
    let grads = g.backward(s);
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    assert!(grads.get(d).is_none());
}

#[test]
fn fan_out_accumulates() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let a = g.scale(x, 2.0);
    let b = g.scale(x, 5.0);
    let c = g.add(a, b).unwrap();
    let grads = g.backward(c);
    assert_eq!(grads.get(x).unwrap().item(), 7.0);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let a = g.param(filled(&[4, 8], 21));
        let b = g.param(filled(&[8, 8], 22));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax(c, None).unwrap();
        let l = g.sum_all(s);
        let grads = g.backward(l);
        (g.value(s).clone(), grads.get(b).unwrap().clone())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1.data(), v2.data());
    assert_eq!(g1.data(), g2.data());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(row in prop::collection::vec(-1.0e3f64..1.0e3, 1..32)) {
        let n = row.len();
        let s = ops::softmax(&Tensor::from_vec(row), 0).unwrap();
        prop_assert!((s.sum() - 1.0).abs() < 1e-6, "n={}", n);
        prop_assert!(s.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gather_then_scatter_counts_multiplicity(
        indices in prop::collection::vec(0usize..6, 1..20)
    ) {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[6, 2]));
        let y = g.gather(x, &indices, 0).unwrap();
        let s = g.sum_all(y);
        let grads = g.backward(s);
        let gx = grads.get(x).unwrap();
        for row in 0..6 {
            let count = indices.iter().filter(|&&i| i == row).count() as f64;
            prop_assert_eq!(gx.row(row), &[count, count][..]);
        }
    }
}
