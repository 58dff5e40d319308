mod common;

use common::{check_graph, check_model, kink_distance, rand_batch, rand_tensor, rng};
use moefuse::numkit::{Axis, Graph, Tensor};
use moefuse::{Label, MoeConfig, MoeFusionModel};
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-4;

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..20 {
        let a = rand_tensor(&mut r, &[3, 4], 2.0);
        let b = rand_tensor(&mut r, &[4, 2], 2.0);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.data()[i * 4 + k] * b.data()[k * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[4, 2]);
    let msg = a.matmul(&b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn fd_matmul_add_bias_scale() {
    let mut r = rng(2);
    let inputs = vec![
        rand_tensor(&mut r, &[3, 4], 1.0),
        rand_tensor(&mut r, &[4, 2], 1.0),
        rand_tensor(&mut r, &[2], 1.0),
        rand_tensor(&mut r, &[3, 2], 1.0),
    ];
    let rep = check_graph(&inputs, |g, x| {
        let m = g.matmul(x[0], x[1]).unwrap();
        let b = g.add_bias(m, x[2]).unwrap();
        let s = g.add(b, x[3]).unwrap();
        let s = g.scale(s, -1.5);
        let sq = g.reshape(s, &[6, 1]).unwrap();
        let sq2 = g.reshape(s, &[1, 6]).unwrap();
        // non-linear in every input through a quadratic form
        let q = g.matmul(sq2, sq).unwrap();
        g.sum(q)
    });
    assert_eq!(rep.skipped, 0);
    assert!(rep.max_rel < TOL, "{}", rep.max_rel);
}

#[test]
fn fd_relu_affine() {
    let mut r = rng(3);
    let inputs = vec![
        rand_tensor(&mut r, &[5, 3], 1.0),
        rand_tensor(&mut r, &[3, 4], 1.0),
    ];
    let rep = check_graph(&inputs, |g, x| {
        let z = g.matmul(x[0], x[1]).unwrap();
        let h = g.relu(z);
        let hh = g.reshape(h, &[1, 20]).unwrap();
        let ht = g.reshape(h, &[20, 1]).unwrap();
        let sq = g.matmul(hh, ht).unwrap();
        g.sum(sq)
    });
    assert!(rep.checked > 0);
    assert!(rep.max_rel < TOL, "{}", rep.max_rel);
}

#[test]
fn fd_masked_softmax_and_cross_entropy() {
    let mut r = rng(4);
    let inputs = vec![
        rand_tensor(&mut r, &[4, 5], 2.0),
        rand_tensor(&mut r, &[5, 2], 1.0),
    ];
    let mask: Vec<bool> = (0..20).map(|i| i % 3 != 1).collect();
    let rep = check_graph(&inputs, |g, x| {
        let p = g.masked_softmax(x[0], mask.clone()).unwrap();
        let z = g.matmul(p, x[1]).unwrap();
        g.cross_entropy(z, &[0, 1, 1, 0], &[0.7, 1.3]).unwrap()
    });
    assert_eq!(rep.skipped, 0);
    assert!(rep.max_rel < TOL, "{}", rep.max_rel);
}

#[test]
fn fd_concat_mean_pool() {
    let mut r = rng(5);
    let inputs = vec![
        rand_tensor(&mut r, &[6, 2], 1.0),
        rand_tensor(&mut r, &[6, 3], 1.0),
        rand_tensor(&mut r, &[5, 2], 1.0),
    ];
    let rep = check_graph(&inputs, |g, x| {
        let c = g.concat(&[x[0], x[1]], Axis(1)).unwrap();
        let c3 = g.reshape(c, &[2, 3, 5]).unwrap();
        let pooled = g.mean_pool(c3, Axis(1)).unwrap();
        let z = g.matmul(pooled, x[2]).unwrap();
        g.cross_entropy(z, &[1, 0], &[1.0, 1.0]).unwrap()
    });
    assert!(rep.max_rel < TOL, "{}", rep.max_rel);
}

#[test]
fn fd_gather_scatter_mul_rows() {
    let mut r = rng(6);
    let inputs = vec![
        rand_tensor(&mut r, &[5, 3], 1.0),
        rand_tensor(&mut r, &[5, 4], 1.0),
        rand_tensor(&mut r, &[3, 2], 1.0),
    ];
    let rep = check_graph(&inputs, |g, x| {
        let rows = [0usize, 2, 3];
        let xs = g.gather_rows(x[0], &rows).unwrap();
        let w = g.gather_entries(x[1], &[(0, 1), (2, 3), (3, 0)]).unwrap();
        let y = g.mul_rows(xs, w).unwrap();
        let other = g.gather_rows(x[0], &[1, 2]).unwrap();
        let full = g
            .scatter_rows(5, 3, vec![(y, rows.to_vec()), (other, vec![1, 2])])
            .unwrap();
        let z = g.matmul(full, x[2]).unwrap();
        g.cross_entropy(z, &[0, 1, 1, 0, 1], &[1.0, 2.0]).unwrap()
    });
    assert_eq!(rep.skipped, 0);
    assert!(rep.max_rel < TOL, "{}", rep.max_rel);
}

#[test]
fn fd_full_model_tiny() {
    // S=3, T=2, B=1, n=2, k=2, H=2, head width 4
    let mut r = rng(7);
    let cfg = MoeConfig::new(2, 2, 2).with_geometry(2, 3);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..5 {
        let model = MoeFusionModel::init(cfg, 4, seed).unwrap();
        let batch = rand_batch(&mut r, 1, 2, 3);
        let label = if r.random_bool(0.5) {
            Label::Bonafide
        } else {
            Label::Spoof
        };
        let rep = check_model(&model, &batch, &[label], [1.0, 1.0]);
        worst = worst.max(rep.max_rel);
        checked += rep.checked;
        assert!(rep.checked >= 9 * (rep.checked + rep.skipped) / 10);
    }
    assert!(checked > 0);
    assert!(worst < TOL, "{worst}");
}

#[test]
fn backward_twice_accumulates() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
    let s = g.sum(x);
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).data(), &[2.0, 2.0]);
    g.zero_grad();
    assert_eq!(g.grad(x).data(), &[0.0, 0.0]);
}

#[test]
fn kink_probe_sees_relu_inputs() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![3], vec![0.5, -2e-5, 3.0]).unwrap());
    g.relu(x);
    assert!((kink_distance(&g) - 2e-5).abs() < 1e-18);
}

fn logits_and_mask() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<bool>)> {
    (1usize..5, 1usize..7).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            prop::collection::vec(-30.0f64..30.0, r * c),
            prop::collection::vec(any::<bool>(), r * c),
        )
    })
}

proptest! {
    #[test]
    fn masked_softmax_rows_sum_to_one((r, c, z, mut mask) in logits_and_mask()) {
        for row in 0..r {
            mask[row * c] = true;
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![r, c], z).unwrap());
        let p = g.masked_softmax(x, mask.clone()).unwrap();
        let v = g.value(p);
        for row in 0..r {
            let vals = v.row(row);
            let sum: f64 = vals.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for (j, &pv) in vals.iter().enumerate() {
                if mask[row * c + j] {
                    prop_assert!(pv > 0.0);
                } else {
                    prop_assert_eq!(pv, 0.0);
                }
            }
        }
    }

    #[test]
    fn reshape_inverse_is_identity(dims in prop::collection::vec(1usize..5, 1..4)) {
        let n: usize = dims.iter().product();
        let t = Tensor::new(dims.clone(), (0..n).map(|i| i as f64 * 0.5).collect()).unwrap();
        let back = t.reshape(&[n]).unwrap().reshape(&dims).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn forward_ops_stay_finite(z in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3, 4], z).unwrap());
        let h = g.relu(x);
        let p = g.masked_softmax(x, vec![true; 12]).unwrap();
        let pooled = g.mean_pool(h, Axis(0)).unwrap();
        let s = g.sum(p);
        for id in [h, p, pooled, s] {
            prop_assert!(g.value(id).is_finite());
        }
        g.backward(s).unwrap();
        prop_assert!(g.grad(x).is_finite());
    }
}
