use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check;
use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn conv1d_valid_difference_kernel() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
    let w = g.constant(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
    let y = g.conv1d(x, w, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1]);
    assert_eq!(g.value(y).data(), &[-2.0]);
}

#[test]
fn conv1d_identity_kernel_is_identity() {
    let mut g = Graph::new();
    let data = [0.5, -1.0, 2.0, 7.0];
    let x = g.constant(t(&[1, 1, 4], &data));
    let w = g.constant(t(&[1, 1, 1], &[1.0]));
    let y = g.conv1d(x, w, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &data);
}

#[test]
fn conv1d_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xa = Tensor::randn(&[1, 3, 9], 1.0, &mut rng);
    let xb = Tensor::randn(&[1, 3, 9], 1.0, &mut rng);
    let w = Tensor::randn(&[4, 3, 3], 1.0, &mut rng);
    let (a, b) = (1.7, -0.3);
    let run = |x: Tensor| {
        let mut g = Graph::new();
        let x = g.constant(x);
        let w = g.constant(w.clone());
        let y = g.conv1d(x, w, 1, 1).unwrap();
        g.value(y).clone()
    };
    let mix: Vec<f64> = xa.data().iter().zip(xb.data()).map(|(p, q)| a * p + b * q).collect();
    let lhs = run(t(&[1, 3, 9], &mix));
    let (ya, yb) = (run(xa), run(xb));
    for ((l, p), q) in lhs.data().iter().zip(ya.data()).zip(yb.data()) {
        assert!((l - (a * p + b * q)).abs() < 1e-10);
    }
}

#[test]
fn conv_shape_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 5]));
    let w = g.constant(Tensor::zeros(&[3, 4, 3]));
    assert!(matches!(g.conv1d(x, w, 1, 0), Err(TensorError::ShapeMismatch { .. })));
    let w_big = g.constant(Tensor::zeros(&[3, 2, 9]));
    assert!(g.conv1d(x, w_big, 1, 0).is_err());
    let x2 = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w2 = g.constant(Tensor::zeros(&[3, 1, 3, 3]));
    assert!(g.conv2d(x2, w2, Conv2dSpec::new(1, 1)).is_err());
}

#[test]
fn conv2d_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::randn(&[2, 3, 7, 6], 1.0, &mut rng);
    let w = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
    let (s, p) = (2, 1);
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv2d(xv, wv, Conv2dSpec::new(s, p)).unwrap();
    let out = g.value(y);
    let (oh, ow) = (out.shape()[2], out.shape()[3]);
    assert_eq!((oh, ow), (4, 3));
    for n in 0..2 {
        for o in 0..4 {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..3 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let (yy, xx) = ((i * s + ki) as isize - p as isize, (j * s + kj) as isize - p as isize);
                                if (0..7).contains(&yy) && (0..6).contains(&xx) {
                                    acc += w.data()[((o * 3 + c) * 3 + ki) * 3 + kj]
                                        * x.data()[((n * 3 + c) * 7 + yy as usize) * 6 + xx as usize];
                                }
                            }
                        }
                    }
                    let got = out.data()[((n * 4 + o) * oh + i) * ow + j];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_transpose(y)>
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::randn(&[1, 2, 7, 7], 1.0, &mut rng);
    let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
    let spec = Conv2dSpec::new(2, 1);
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let cx = g.conv2d(xv, wv, spec).unwrap();
    let y = Tensor::randn(g.shape(cx), 1.0, &mut rng);
    let yv = g.constant(y.clone());
    let ty = g.conv_transpose2d(yv, wv, spec).unwrap();
    assert_eq!(g.shape(ty), &[1, 2, 7, 7]);
    let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = (0..2)
        .flat_map(|c| (0..7).flat_map(move |i| (0..7).map(move |j| (c, i, j))))
        .map(|(c, i, j)| x.data()[(c * 7 + i) * 7 + j] * g.value(ty).data()[(c * 7 + i) * 7 + j])
        .sum();
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 2], &[0.0, 0.0]));
    let y = g.softmax(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = Tensor::randn(&[4, 5], 3.0, &mut rng);
    let shifted = logits.map(|v| v + 123.456);
    let a = g.constant(logits);
    let b = g.constant(shifted);
    let (pa, pb) = (g.softmax(a).unwrap(), g.softmax(b).unwrap());
    for row in g.value(pa).data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0));
    }
    for (u, v) in g.value(pa).data().iter().zip(g.value(pb).data()) {
        assert!((u - v).abs() < 1e-9);
    }
}

#[test]
fn relu_and_dropout_edges() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[-1.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 2.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = g.dropout(x, 0.0, &mut rng).unwrap();
    assert_eq!(g.value(z).data(), g.value(x).data());
    assert!(g.dropout(x, 1.0, &mut rng).is_err());

    let big = g.constant(Tensor::full(&[10_000], 1.0));
    let d = g.dropout(big, 0.5, &mut rng).unwrap();
    let kept = g.value(d).data().iter().filter(|&&v| v != 0.0).count();
    assert!((4_700..5_300).contains(&kept));
    assert!(g.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn backward_scalar_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.square(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 0.25);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn every_reachable_node_gets_a_gradient() {
    let mut g = Graph::new();
    let a = g.param(Tensor::full(&[1, 3], 0.5));
    let w = g.param(Tensor::full(&[2, 3], 0.1));
    let h = g.linear(a, w).unwrap();
    let s = g.sigmoid(h);
    let l = g.sum(s);
    let grads = g.backward(l).unwrap();
    for v in [a, w, h, s, l] {
        assert_eq!(grads.get(v).unwrap().shape(), g.shape(v));
    }
}

#[test]
fn gradcheck_smoke_per_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let eps = 1e-5;
    let x4 = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut rng);
    let w4 = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
    let r = check(&[x4.clone(), w4.clone()], eps, |g, v| {
        let y = g.conv2d(v[0], v[1], Conv2dSpec::new(2, 1))?;
        let y = g.square(y);
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "conv2d {r:?}");

    let wt = Tensor::randn(&[2, 3, 3, 3], 1.0, &mut rng);
    let r = check(&[x4.clone(), wt], eps, |g, v| {
        let y = g.conv_transpose2d(v[0], v[1], Conv2dSpec::new(2, 1))?;
        let y = g.square(y);
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "conv_transpose2d {r:?}");

    let logits = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let r = check(&[logits], eps, |g, v| g.softmax_cross_entropy(v[0], &[0, 3, 1])).unwrap();
    assert!(r.max_rel_error < 1e-4, "xent {r:?}");
}
