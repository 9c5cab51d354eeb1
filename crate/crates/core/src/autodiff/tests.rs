use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct triple-loop convolution with explicit zero padding.
fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (t_len, c_in) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k as isize - 1) / 2;
    let mut out = vec![0.0; t_len * c_out];
    for t in 0..t_len {
        for o in 0..c_out {
            let mut acc = b.data()[o];
            for c in 0..c_in {
                for tap in 0..k {
                    let src = t as isize + tap as isize - pad;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    acc += x.at(src as usize, c) * w.data()[(o * c_in + c) * k + tap];
                }
            }
            out[t * c_out + o] = acc;
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
    }
}

#[test]
fn conv_zero_weight_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.constant(random_tensor(&mut rng, vec![5, 2]));
    let w = g.constant(Tensor::zeros(vec![3, 2, 3]));
    let b = g.constant(Tensor::zeros(vec![3]));
    let y = g.conv1d(x, w, b).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = random_tensor(&mut rng, vec![6, 1]);
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let w = g.constant(Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
    let b = g.constant(Tensor::zeros(vec![1]));
    let y = g.conv1d(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), input.data());
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let x = random_tensor(&mut rng, vec![7, 2]);
        let w = random_tensor(&mut rng, vec![3, 2, 3]);
        let b = random_tensor(&mut rng, vec![3]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv1d(xv, wv, bv).unwrap();
        assert_close(g.value(y).data(), &conv_oracle(&x, &w, &b), 1e-12);
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![4, 2]));
    let w = g.constant(Tensor::zeros(vec![3, 5, 3]));
    let b = g.constant(Tensor::zeros(vec![3]));
    let err = g.conv1d(x, w, b).unwrap_err().to_string();
    assert!(err.contains("channels"), "{err}");

    let w_even = g.constant(Tensor::zeros(vec![3, 2, 2]));
    assert!(g.conv1d(x, w_even, b).is_err());
    let w_ok = g.constant(Tensor::zeros(vec![3, 2, 3]));
    let b_bad = g.constant(Tensor::zeros(vec![4]));
    let err = g.conv1d(x, w_ok, b_bad).unwrap_err().to_string();
    assert!(err.contains("bias"), "{err}");
}

#[test]
fn leaky_relu_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![-2.0, 0.0, 3.0]));
    let y = g.leaky_relu(x, 0.2);
    assert_close(g.value(y).data(), &[-0.4, 0.0, 3.0], 1e-15);

    let pos = g.constant(Tensor::vector(vec![0.0, 1.5, 7.0]));
    let y = g.leaky_relu(pos, 0.2);
    assert_eq!(g.value(y).data(), &[0.0, 1.5, 7.0]);
}

#[test]
fn leaky_relu_slope_by_finite_difference() {
    let h = 1e-6;
    let f = |x: f64| if x > 0.0 { x } else { 0.2 * x };
    let fd = (f(-1.0 + h) - f(-1.0 - h)) / (2.0 * h);
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![-1.0]));
    let y = g.leaky_relu(x, 0.2);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!((g.grad(x).unwrap()[0] - fd).abs() < 1e-6);
    assert!((fd - 0.2).abs() < 1e-6);
}

#[test]
fn sigmoid_values_and_stability() {
    assert_eq!(sigmoid(0.0), 0.5);
    for x in [700.0, -700.0, 1e3, -1e3] {
        let y = sigmoid(x);
        assert!(y.is_finite() && (0.0..=1.0).contains(&y), "{x} -> {y}");
    }
    assert!(sigmoid(-700.0) > 0.0);
}

#[test]
fn linear_identity_and_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, vec![5, 3]);
    let mut eye = Tensor::zeros(vec![3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(eye));
    let bv = g.constant(Tensor::zeros(vec![3]));
    let y = g.linear(xv, wv, bv).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let zw = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::vector(vec![0.5, -1.5]));
    let y = g.linear(xv, zw, b).unwrap();
    for r in 0..5 {
        assert_eq!(g.value(y).row(r), &[0.5, -1.5]);
    }
}

#[test]
fn linear_matches_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, vec![5, 4]);
    let w = random_tensor(&mut rng, vec![3, 4]);
    let b = random_tensor(&mut rng, vec![3]);
    let mut expected = vec![0.0; 15];
    for t in 0..5 {
        for o in 0..3 {
            expected[t * 3 + o] = b.data()[o] + (0..4).map(|c| x.at(t, c) * w.at(o, c)).sum::<f64>();
        }
    }
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
    let y = g.linear(xv, wv, bv).unwrap();
    assert_close(g.value(y).data(), &expected, 1e-12);

    let bad = g.constant(Tensor::zeros(vec![3, 5]));
    assert!(g.linear(xv, bad, bv).is_err());
}

#[test]
fn softmax_uniform_and_shift_invariant() {
    assert_close(&softmax(&[1.3; 5]), &[0.2; 5], 1e-15);
    let base = [0.3, -1.2, 2.0, 0.0];
    let shifted: Vec<f64> = base.iter().map(|x| x + 1000.0).collect();
    assert_close(&softmax(&base), &softmax(&shifted), 1e-12);
}

#[test]
fn softmax_matches_unnormalized_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        // No max-shift: logits are small enough for plain exp.
        let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        let oracle: Vec<f64> = e.iter().map(|x| x / z).collect();
        let p = softmax(&v);
        assert_close(&p, &oracle, 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

/// Maximum subset mean over all index sets of size `k`, by enumeration.
fn brute_force_topk(col: &[f64], k: usize) -> f64 {
    let t = col.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << t) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let s: f64 = (0..t).filter(|i| mask & (1 << i) != 0).map(|i| col[i]).sum();
        best = best.max(s / k as f64);
    }
    best
}

fn topk_value(col: &[f64], k: usize) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(col.len(), 1, col.to_vec()).unwrap());
    let y = g.topk_mean(x, k).unwrap();
    g.value(y).data()[0]
}

#[test]
fn topk_examples() {
    assert_eq!(topk_value(&[1.0, 5.0, 3.0, 2.0], 2), 4.0);
    let col = [0.5, -1.0, 2.0, 4.5];
    assert!((topk_value(&col, 4) - 1.5).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let col: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
    assert!((topk_value(&col, 3) - brute_force_topk(&col, 3)).abs() <= 1e-12);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![3, 1]));
    assert!(g.topk_mean(x, 0).is_err());
}

#[test]
fn topk_rejects_k_above_t() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![3, 2]));
    assert!(g.topk_mean(x, 4).is_err());
}

#[test]
fn topk_gradient_routes_to_selected_with_low_index_ties() {
    let mut g = Graph::new();
    let x = g.param(Tensor::matrix(4, 1, vec![2.0, 1.0, 2.0, 2.0]).unwrap());
    let y = g.topk_mean(x, 2).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.5, 0.0, 0.5, 0.0]);
}

#[test]
fn backward_sum_gives_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = Graph::new();
    let x = g.param(random_tensor(&mut rng, vec![3, 4]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_half_square_gives_x() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = random_tensor(&mut rng, vec![7]);
    let mut g = Graph::new();
    let x = g.param(t.clone());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let half = g.scale(s, 0.5);
    g.backward(half).unwrap();
    assert_close(g.grad(x).unwrap(), t.data(), 1e-15);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(vec![2]));
    assert!(g.backward(x).is_err());
}

#[test]
fn backward_twice_doubles_and_unused_leaves_stay_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut g = Graph::new();
    let x = g.param(random_tensor(&mut rng, vec![4, 3]));
    let unused = g.param(random_tensor(&mut rng, vec![5]));
    let a = g.param(random_tensor(&mut rng, vec![4]));
    let sa = g.sigmoid(a);
    let m = g.modulate(x, sa).unwrap();
    let v = g.topk_mean(m, 2).unwrap();
    let p = g.softmax(v).unwrap();
    let l = g.log(p, 1e-12);
    let s = g.sum(l);
    g.backward(s).unwrap();
    let once = g.grad(x).unwrap().to_vec();
    g.backward(s).unwrap();
    let twice = g.grad(x).unwrap();
    for (o, t) in once.iter().zip(twice) {
        assert_eq!(2.0 * o, *t);
    }
    assert!(g.grad(unused).unwrap().iter().all(|&v| v == 0.0));
    g.zero_grad();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn background_probability_modes() {
    let row = [0.7; 5];
    assert!((background_probability(&row, BackgroundMode::Softmax) - 0.2).abs() < 1e-15);
    assert!((background_probability(&row, BackgroundMode::Literal) - 0.25).abs() < 1e-15);
}

#[test]
fn gradcheck_exact_on_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_tensor(&mut rng, vec![6]);
    let report = grad_check(
        |g, v| {
            let sq = g.mul(v[0], v[0])?;
            let s = g.sum(sq);
            Ok(g.scale(s, 1.5))
        },
        &[p],
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error() < 1e-9, "{}", report.max_rel_error());
    assert_eq!(report.nonsmooth_count(), 0);
}

#[test]
fn gradcheck_flags_topk_tie_as_nonsmooth() {
    // Entries 0 and 1 tie for the single top slot.
    let p = Tensor::matrix(3, 1, vec![1.0, 1.0, -2.0]).unwrap();
    let report = grad_check(
        |g, v| {
            let t = g.topk_mean(v[0], 1)?;
            Ok(g.sum(t))
        },
        &[p],
        GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.params[0].nonsmooth, vec![0, 1]);
    assert!(report.passed());
}

#[test]
fn gradcheck_flags_abs_kink() {
    // One-sided slopes at 0 are +1 and -1.
    let p = Tensor::vector(vec![0.0, 0.5]);
    let report = grad_check(
        |g, v| {
            let a = g.abs(v[0]);
            Ok(g.sum(a))
        },
        &[p],
        GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.params[0].nonsmooth, vec![0]);
}

/// Every primitive against central differences on 20 random instances.
#[test]
fn primitives_pass_finite_differences() {
    type Builder = fn(&mut Graph, &[Var]) -> crate::Result<Var>;
    let cases: Vec<(&str, Vec<Vec<usize>>, Builder)> = vec![
        ("conv1d", vec![vec![7, 2], vec![3, 2, 3], vec![3]], |g, v| {
            let y = g.conv1d(v[0], v[1], v[2])?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        }),
        ("linear", vec![vec![5, 4], vec![3, 4], vec![3]], |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            let s = g.sigmoid(y);
            Ok(g.sum(s))
        }),
        ("leaky_relu", vec![vec![9]], |g, v| {
            let y = g.leaky_relu(v[0], 0.2);
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        }),
        ("sigmoid", vec![vec![8]], |g, v| {
            let y = g.sigmoid(v[0]);
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        }),
        ("softmax+log", vec![vec![6]], |g, v| {
            let p = g.softmax(v[0])?;
            let l = g.log(p, 1e-12);
            let w = g.mul(l, p)?;
            Ok(g.sum(w))
        }),
        ("topk", vec![vec![8, 3]], |g, v| {
            let y = g.topk_mean(v[0], 3)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        }),
        ("modulate", vec![vec![6, 4], vec![6]], |g, v| {
            let y = g.modulate(v[0], v[1])?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        }),
        ("add+abs+scale", vec![vec![5], vec![5]], |g, v| {
            let y = g.add(v[0], v[1])?;
            let y = g.add_scalar(y, 0.3);
            let a = g.abs(y);
            let s = g.sum(a);
            Ok(g.scale(s, -2.5))
        }),
        ("background softmax", vec![vec![5, 4]], |g, v| {
            let y = g.background_probability(v[0], BackgroundMode::Softmax)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        }),
        ("background literal", vec![vec![5, 4]], |g, v| {
            let y = g.background_probability(v[0], BackgroundMode::Literal)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        }),
        ("reshape", vec![vec![4, 1]], |g, v| {
            let y = g.reshape(v[0], vec![4])?;
            let s = g.sigmoid(y);
            Ok(g.sum(s))
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (name, shapes, build) in cases {
        for instance in 0..20 {
            let params: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s.clone())).collect();
            let report = grad_check(build, &params, GradCheckOptions::default()).unwrap();
            assert!(
                report.passed(),
                "{name} instance {instance}: max rel error {}",
                report.max_rel_error()
            );
        }
    }
}

proptest! {
    #[test]
    fn topk_equals_subset_maximum(
        t in 1usize..=8,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let col: Vec<f64> = (0..t).map(|_| rng.random_range(-10.0..10.0)).collect();
        for k in 1..=t {
            let got = topk_value(&col, k);
            prop_assert!((got - brute_force_topk(&col, k)).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_is_probability_vector(v in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
