use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn relu_clamps_negatives() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn identity_kernel_conv_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random_tensor(&mut rng, &[2, 3, 5, 7]);
    let mut kernel = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        kernel.data_mut()[c * 3 + c] = 1.0;
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(kernel);
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.conv2d(x, w, b, 1).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn dense_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, &[3, 4]);
    let w = random_tensor(&mut rng, &[4, 2]);
    let b = random_tensor(&mut rng, &[2]);
    let mut expected = vec![0.0; 6];
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = b.data()[j];
            for k in 0..4 {
                acc += x.data()[i * 4 + k] * w.data()[k * 2 + j];
            }
            expected[i * 2 + j] = acc;
        }
    }
    let mut tape = Tape::new();
    let (xi, wi, bi) = (tape.constant(x), tape.constant(w), tape.constant(b));
    let y = tape.dense(xi, wi, bi).unwrap();
    for (a, e) in tape.value(y).data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for stride in [1, 2] {
        let x = random_tensor(&mut rng, &[2, 2, 7, 6]);
        let w = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = random_tensor(&mut rng, &[3]);
        let mut tape = Tape::new();
        let (xi, wi, bi) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xi, wi, bi, stride).unwrap();
        let out = tape.value(y);
        let (oh, ow) = (out.shape()[2], out.shape()[3]);
        assert_eq!((oh, ow), (7usize.div_ceil(stride), 6usize.div_ceil(stride)));
        let pad = |extent: usize, o: usize| ((o - 1) * stride + 3).saturating_sub(extent) / 2;
        let (pt, pl) = (pad(7, oh), pad(6, ow));
        for n in 0..2 {
            for co in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * stride + ky) as isize - pt as isize;
                                    let ix = (ox * stride + kx) as isize - pl as isize;
                                    if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                                        continue;
                                    }
                                    acc += w.data()[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * x.data()[((n * 2 + ci) * 7 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                        let got = out.data()[((n * 3 + co) * oh + oy) * ow + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn sum_of_relu_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![-1.0, 2.0]));
    let r = tape.relu(x).unwrap();
    let s = tape.sum(r).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn squared_difference_gradient_is_twice_residual() {
    let xv = vec![0.5, -1.0, 3.0];
    let yv = vec![1.5, 1.0, -2.0];
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(xv.clone()));
    let y = tape.constant(Tensor::vector(yv.clone()));
    let d = tape.sub(x, y).unwrap();
    let sq = tape.square(d).unwrap();
    let loss = tape.sum(sq).unwrap();
    let g = tape.backward(loss).unwrap();
    for ((gv, a), b) in g.get(x).unwrap().data().iter().zip(&xv).zip(&yv) {
        assert_eq!(*gv, 2.0 * (a - b));
    }
}

#[test]
fn hinge_subgradient_at_zero_is_zero() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![0.0, 1e-300, -1e-300]));
    let h = tape.hinge(x).unwrap();
    let s = tape.sum(h).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
}

#[test]
fn shape_mismatch_names_the_op() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    match tape.add(a, b) {
        Err(Error::Shape { op, .. }) => assert_eq!(op, "add"),
        other => panic!("expected shape error, got {other:?}"),
    }
    let w = tape.constant(Tensor::zeros(&[4, 4]));
    let bias = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(tape.dense(a, w, bias), Err(Error::Shape { op: "dense", .. })));
}

#[test]
fn dead_relu_path_has_exactly_zero_gradient() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::vector(vec![0.3, -0.7, 1.1]));
    let x = tape.constant(Tensor::vector(vec![-1.0, -2.0, -3.0]));
    let prod = tape.mul(w, x).unwrap();
    let shifted = tape.add_scalar(prod, -10.0).unwrap();
    let r = tape.relu(shifted).unwrap();
    let s = tape.sum(r).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(w).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn inputs_precede_outputs() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.square(x).unwrap();
    let z = tape.add(y, x).unwrap();
    let s = tape.mean(z).unwrap();
    for id in [y, z, s] {
        assert!(tape.inputs(id).iter().all(|i| i.index() < id.index()));
    }
}

type Builder = fn(&mut Tape, &[NodeId]) -> crate::error::Result<NodeId>;

/// One scalar-valued graph per op kind, with the parameter shapes to feed it.
fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Builder)> {
    fn weighted_sum(t: &mut Tape, y: NodeId, seed: u64) -> crate::error::Result<NodeId> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = t.value(y).shape().to_vec();
        let w = t.constant(random_tensor(&mut rng, &shape));
        let m = t.mul(y, w)?;
        t.sum(m)
    }
    vec![
        ("conv2d_s1", vec![vec![2, 2, 5, 4], vec![3, 2, 3, 3], vec![3]], |t, p| {
            let y = t.conv2d(p[0], p[1], p[2], 1)?;
            weighted_sum(t, y, 11)
        }),
        ("conv2d_s2", vec![vec![1, 2, 6, 5], vec![2, 2, 3, 3], vec![2]], |t, p| {
            let y = t.conv2d(p[0], p[1], p[2], 2)?;
            weighted_sum(t, y, 12)
        }),
        ("dense", vec![vec![3, 4], vec![4, 2], vec![2]], |t, p| {
            let y = t.dense(p[0], p[1], p[2])?;
            weighted_sum(t, y, 13)
        }),
        ("relu", vec![vec![3, 5]], |t, p| {
            let y = t.relu(p[0])?;
            weighted_sum(t, y, 14)
        }),
        ("add", vec![vec![4], vec![4]], |t, p| {
            let y = t.add(p[0], p[1])?;
            weighted_sum(t, y, 15)
        }),
        ("mul_sub_scale", vec![vec![4], vec![4]], |t, p| {
            let m = t.mul(p[0], p[1])?;
            let d = t.sub(m, p[1])?;
            let y = t.scale(d, -1.7)?;
            weighted_sum(t, y, 16)
        }),
        ("global_avg_pool2d", vec![vec![2, 3, 4, 3]], |t, p| {
            let y = t.global_avg_pool2d(p[0])?;
            weighted_sum(t, y, 17)
        }),
        ("max_pool2d", vec![vec![1, 2, 5, 4]], |t, p| {
            let y = t.max_pool2d(p[0])?;
            weighted_sum(t, y, 18)
        }),
        ("l2_normalize", vec![vec![3, 4]], |t, p| {
            let y = t.l2_normalize(p[0], 1e-12)?;
            weighted_sum(t, y, 19)
        }),
        ("squared_l2_distance", vec![vec![4, 3]], |t, p| {
            let y = t.pairwise_sqdist(p[0])?;
            weighted_sum(t, y, 20)
        }),
        ("hinge_gather_mean", vec![vec![3, 3]], |t, p| {
            let g = t.gather(p[0], vec![0, 4, 8, 1, 1])?;
            let s = t.add_scalar(g, 0.1)?;
            let h = t.hinge(s)?;
            t.mean(h)
        }),
        ("square", vec![vec![5]], |t, p| {
            let y = t.square(p[0])?;
            weighted_sum(t, y, 21)
        }),
        ("softmax_cross_entropy", vec![vec![4, 3]], |t, p| {
            t.softmax_cross_entropy(p[0], &[0, 2, 1, 2])
        }),
    ]
}

#[test]
fn every_op_passes_finite_differences_over_twenty_seeds() {
    for (name, shapes, build) in op_cases() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let params: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
            let report = gradcheck(&params, 1e-5, build).unwrap();
            assert!(
                report.max_relative_error < 1e-4,
                "{name} seed {seed}: relative error {}",
                report.max_relative_error
            );
        }
    }
}

#[test]
fn linear_regression_graph_is_tight() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = vec![random_tensor(&mut rng, &[3, 1]), random_tensor(&mut rng, &[1])];
        let report = gradcheck(&params, 1e-5, |t, p| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let x = t.constant(random_tensor(&mut rng, &[6, 3]));
            let y = t.constant(random_tensor(&mut rng, &[6, 1]));
            let pred = t.dense(x, p[0], p[1])?;
            let r = t.sub(pred, y)?;
            let sq = t.square(r)?;
            t.mean(sq)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "seed {seed}: {}", report.max_relative_error);
    }
}

#[test]
fn l2_normalize_on_unit_sphere_with_orthogonal_gradient() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        let mut u: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        u.iter_mut().zip(&v).for_each(|(a, b)| *a -= dot * b);
        let weights = Tensor::matrix(1, 4, u).unwrap();
        let report = gradcheck(&[Tensor::matrix(1, 4, v).unwrap()], 1e-5, |t, p| {
            let y = t.l2_normalize(p[0], 1e-12)?;
            let w = t.constant(weights.clone());
            let m = t.mul(y, w)?;
            t.sum(m)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "seed {seed}: {}", report.max_relative_error);
    }
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = [random_tensor(&mut rng, &[2, 1, 6, 6]), random_tensor(&mut rng, &[2, 1, 3, 3]), random_tensor(&mut rng, &[2])];
        let mut tape = Tape::new();
        let ids: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let c = tape.conv2d(ids[0], ids[1], ids[2], 2).unwrap();
        let r = tape.relu(c).unwrap();
        let p = tape.global_avg_pool2d(r).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        (tape.value(s).item(), ids.iter().map(|&i| g.get_or_zeros(&tape, i)).collect::<Vec<_>>())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}
