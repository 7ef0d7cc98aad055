use physioattn::gradcheck::{grad_check, relative_error};
use physioattn::{Graph, Mode, Padding, ParamId, ParamStore, PoolKind, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn add_param(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> ParamId {
    store.insert(name, rand_tensor(rng, shape), true)
}

/// `sum(w * v)` with fixed pseudo-random weights so no gradient is trivially constant.
fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let w = rand_tensor(&mut rng, g.shape(v));
    let w = g.input(w);
    let p = g.mul(v, w)?;
    Ok(g.sum_all(p))
}

const TOL: f64 = 1e-4;

fn check_ten_points(build: impl Fn(&mut ParamStore, &mut ChaCha8Rng) -> Box<dyn Fn(&mut Graph) -> Result<Var>>, mode: Mode) {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = build(&mut store, &mut rng);
        let report = grad_check(&mut store, mode, f).unwrap();
        assert!(
            report.max_rel_error < TOL,
            "seed {seed}: max rel err {} ({:?})",
            report.max_rel_error,
            report.per_param
        );
    }
}

fn run(f: impl FnOnce(&mut Graph) -> Result<Var>) -> Tensor {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, Mode::Train);
    let v = f(&mut g).unwrap();
    g.value(v).clone()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

// ---------------------------------------------------------------- conv1d

#[test]
fn conv1d_direct_arithmetic() {
    let out = run(|g| {
        let x = g.input(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
        let w = g.input(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let b = g.input(t(&[1], &[0.0]));
        g.conv1d(x, w, Some(b), 1, Padding::Valid)
    });
    assert_eq!(out.data(), &[-2.0]);
}

#[test]
fn conv1d_zero_kernel_gives_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = run(|g| {
        let x = g.input(rand_tensor(&mut rng, &[2, 3, 11]));
        let w = g.input(Tensor::zeros(&[2, 3, 4]));
        let b = g.input(t(&[2], &[1.5, 1.5]));
        g.conv1d(x, w, Some(b), 2, Padding::Valid)
    });
    assert_eq!(out.shape(), &[2, 2, 4]);
    assert!(out.data().iter().all(|&v| v == 1.5));
}

#[test]
fn conv1d_rejects_bad_shapes() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, Mode::Train);
    let x = g.input(Tensor::zeros(&[1, 2, 8]));
    let w = g.input(Tensor::zeros(&[4, 3, 3]));
    let err = g.conv1d(x, w, None, 1, Padding::Same).unwrap_err();
    assert!(err.to_string().contains("channels"), "{err}");
    let w2 = g.input(Tensor::zeros(&[4, 2, 3]));
    assert!(g.conv1d(x, w2, None, 0, Padding::Same).is_err());
    let long = g.input(Tensor::zeros(&[4, 2, 9]));
    assert!(g.conv1d(x, long, None, 1, Padding::Valid).is_err());
}

#[test]
fn conv1d_strided_same_gradients() {
    check_ten_points(
        |store, rng| {
            let x = add_param(store, rng, "x", &[2, 2, 16]);
            let w = add_param(store, rng, "w", &[3, 2, 3]);
            let b = add_param(store, rng, "b", &[3]);
            Box::new(move |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.conv1d(x, w, Some(b), 2, Padding::Same)?;
                assert_eq!(g.shape(y), &[2, 3, 8]);
                weighted_sum(g, y, 1)
            })
        },
        Mode::Train,
    );
}

#[test]
fn conv1d_wide_input_gradients() {
    // Enough input channels to take the per-tap product path instead of im2col.
    check_ten_points(
        |store, rng| {
            let x = add_param(store, rng, "x", &[2, 10, 11]);
            let w = add_param(store, rng, "w", &[3, 10, 3]);
            let b = add_param(store, rng, "b", &[3]);
            Box::new(move |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.conv1d(x, w, Some(b), 2, Padding::Same)?;
                assert_eq!(g.shape(y), &[2, 3, 6]);
                weighted_sum(g, y, 2)
            })
        },
        Mode::Train,
    );
}

#[test]
fn conv1d_sigmoid_sum_gradients() {
    check_ten_points(
        |store, rng| {
            let x = add_param(store, rng, "x", &[1, 3, 9]);
            let w = add_param(store, rng, "w", &[2, 3, 4]);
            Box::new(move |g| {
                let (x, w) = (g.param(x), g.param(w));
                let y = g.conv1d(x, w, None, 1, Padding::Same)?;
                let s = g.sigmoid(y);
                Ok(g.sum_all(s))
            })
        },
        Mode::Train,
    );
}

#[test]
fn pointwise_conv_gradients() {
    check_ten_points(
        |store, rng| {
            let x = add_param(store, rng, "x", &[2, 4, 5]);
            let w = add_param(store, rng, "w", &[3, 4, 1]);
            let b = add_param(store, rng, "b", &[3]);
            Box::new(move |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.conv1d(x, w, Some(b), 1, Padding::Valid)?;
                weighted_sum(g, y, 2)
            })
        },
        Mode::Train,
    );
}

// ---------------------------------------------------------------- pooling

#[test]
fn pool1d_examples() {
    let x = t(&[1, 1, 4], &[4.0, 1.0, 3.0, 2.0]);
    let mx = run(|g| {
        let v = g.input(x.clone());
        g.pool1d(v, PoolKind::Max, 2, 2, Padding::Valid)
    });
    assert_eq!(mx.data(), &[4.0, 3.0]);
    let av = run(|g| {
        let v = g.input(x.clone());
        g.pool1d(v, PoolKind::Avg, 2, 2, Padding::Valid)
    });
    assert_eq!(av.data(), &[2.5, 2.5]);
}

#[test]
fn pool1d_window_longer_than_input_rejected() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, Mode::Train);
    let x = g.input(Tensor::zeros(&[1, 1, 3]));
    assert!(g.pool1d(x, PoolKind::Max, 4, 1, Padding::Valid).is_err());
}

#[test]
fn avg_pool_of_constant_is_constant() {
    let out = run(|g| {
        let x = g.input(Tensor::full(&[2, 3, 10], 0.75));
        g.pool1d(x, PoolKind::Avg, 3, 2, Padding::Valid)
    });
    assert!(out.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    check_ten_points(
        |store, _| {
            let x = store.insert("x", Tensor::full(&[1, 2, 9], 0.3), true);
            Box::new(move |g| {
                let x = g.param(x);
                let y = g.pool1d(x, PoolKind::Avg, 3, 2, Padding::Valid)?;
                weighted_sum(g, y, 3)
            })
        },
        Mode::Train,
    );
}

#[test]
fn max_pool_ties_route_to_first_index() {
    let mut store = ParamStore::new();
    let x = store.insert("x", t(&[1, 1, 4], &[2.0, 2.0, 1.0, 1.0]), true);
    let mut g = Graph::new(&store, Mode::Train);
    let xv = g.param(x);
    let y = g.pool1d(xv, PoolKind::Max, 2, 2, Padding::Valid).unwrap();
    let s = g.sum_all(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param(x).unwrap(), &[1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn pool_gradients() {
    for kind in [PoolKind::Max, PoolKind::Avg] {
        for padding in [Padding::Valid, Padding::Same] {
            check_ten_points(
                |store, rng| {
                    let x = add_param(store, rng, "x", &[2, 3, 13]);
                    Box::new(move |g| {
                        let x = g.param(x);
                        let y = g.pool1d(x, kind, 3, 2, padding)?;
                        weighted_sum(g, y, 4)
                    })
                },
                Mode::Train,
            );
        }
    }
}

#[test]
fn global_pool_examples() {
    let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
    let avg = run(|g| {
        let v = g.input(x.clone());
        g.global_pool(v, PoolKind::Avg)
    });
    assert_eq!(avg.data(), &[2.0]);
    let mx = run(|g| {
        let v = g.input(x.clone());
        g.global_pool(v, PoolKind::Max)
    });
    assert_eq!(mx.data(), &[3.0]);
}

#[test]
fn global_avg_pool_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[2, 4, 50]);
    let out = run(|g| {
        let v = g.input(x.clone());
        g.global_pool(v, PoolKind::Avg)
    });
    assert_eq!(out.shape(), &[2, 4]);
    for b in 0..2 {
        for c in 0..4 {
            let mut s = 0.0;
            for l in 0..50 {
                s += x.at3(b, c, l);
            }
            assert!((out.at2(b, c) - s / 50.0).abs() < 1e-12);
        }
    }
}

#[test]
fn global_pool_gradients() {
    for kind in [PoolKind::Max, PoolKind::Avg] {
        check_ten_points(
            |store, rng| {
                let x = add_param(store, rng, "x", &[2, 3, 7]);
                Box::new(move |g| {
                    let x = g.param(x);
                    let y = g.global_pool(x, kind)?;
                    weighted_sum(g, y, 5)
                })
            },
            Mode::Train,
        );
    }
}

// ---------------------------------------------------------------- dense

#[test]
fn dense_identity_and_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let mut eye = Tensor::zeros(&[4, 4]);
    for i in 0..4 {
        eye.data_mut()[i * 4 + i] = 1.0;
    }
    let out = run(|g| {
        let (xv, w, b) = (g.input(x.clone()), g.input(eye.clone()), g.input(Tensor::zeros(&[4])));
        g.dense(xv, w, Some(b))
    });
    assert_eq!(out, x);

    let mut store = ParamStore::new();
    let mut pb = physioattn::ParamBuilder::seeded(&mut store, 0);
    physioattn::nn::Dense::new(&mut pb, "fc", 4, 3, physioattn::nn::Feeds::Other);
    assert_eq!(store.count_trainable(), 15);
}

#[test]
fn dense_rejects_mismatch() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, Mode::Train);
    let x = g.input(Tensor::zeros(&[2, 4]));
    let w = g.input(Tensor::zeros(&[5, 3]));
    assert!(g.dense(x, w, None).is_err());
}

#[test]
fn dense_gradients() {
    check_ten_points(
        |store, rng| {
            let x = add_param(store, rng, "x", &[3, 8]);
            let w = add_param(store, rng, "w", &[8, 5]);
            let b = add_param(store, rng, "b", &[5]);
            Box::new(move |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.dense(x, w, Some(b))?;
                weighted_sum(g, y, 6)
            })
        },
        Mode::Train,
    );
}

#[test]
fn linear_function_gradient_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let x = rand_tensor(&mut rng, &[2, 6]);
    let w = add_param(&mut store, &mut rng, "w", &[6, 4]);
    let b = add_param(&mut store, &mut rng, "b", &[4]);
    let report = grad_check(&mut store, Mode::Train, move |g| {
        let (xv, wv, bv) = (g.input(x.clone()), g.param(w), g.param(b));
        let y = g.dense(xv, wv, Some(bv))?;
        Ok(g.sum_all(y))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
}

#[test]
fn frozen_parameter_excluded_from_report() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let w = add_param(&mut store, &mut rng, "w", &[3, 2]);
    let b = add_param(&mut store, &mut rng, "b", &[2]);
    store.set_requires_grad(b, false);
    let x = rand_tensor(&mut rng, &[2, 3]);
    let report = grad_check(&mut store, Mode::Train, move |g| {
        let (xv, wv, bv) = (g.input(x.clone()), g.param(w), g.param(b));
        let y = g.dense(xv, wv, Some(bv))?;
        let y = g.sigmoid(y);
        Ok(g.sum_all(y))
    })
    .unwrap();
    assert!(report.error_for("w").is_some());
    assert!(report.error_for("b").is_none());
}

#[test]
fn grad_check_rejects_non_scalar() {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::zeros(&[2, 2]), true);
    let res = grad_check(&mut store, Mode::Train, move |g| Ok(g.param(w)));
    assert!(res.is_err());
}

// ---------------------------------------------------------------- activations

#[test]
fn activation_examples() {
    let relu = run(|g| {
        let x = g.input(t(&[3], &[-1.0, 0.0, 2.0]));
        Ok(g.relu(x))
    });
    assert_eq!(relu.data(), &[0.0, 0.0, 2.0]);
    let sig = run(|g| {
        let x = g.input(t(&[1], &[0.0]));
        Ok(g.sigmoid(x))
    });
    assert_eq!(sig.data(), &[0.5]);

    let mut store = ParamStore::new();
    let x = store.insert("x", t(&[1], &[0.0]), true);
    let mut g = Graph::new(&store, Mode::Train);
    let xv = g.param(x);
    let y = g.activation(xv, physioattn::Activation::Tanh);
    let s = g.sum_all(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param(x).unwrap(), &[1.0]);
    let h = 1e-5;
    let fd = ((h as f64).tanh() - (-h as f64).tanh()) / (2.0 * h);
    assert!(relative_error(1.0, fd) < 1e-9);
}

#[test]
fn activation_gradients() {
    use physioattn::Activation::*;
    for kind in [Relu, Sigmoid, Tanh] {
        check_ten_points(
            |store, rng| {
                let x = add_param(store, rng, "x", &[4, 6]);
                Box::new(move |g| {
                    let x = g.param(x);
                    let y = g.activation(x, kind);
                    weighted_sum(g, y, 7)
                })
            },
            Mode::Train,
        );
    }
}

// ---------------------------------------------------------------- softmax

#[test]
fn softmax_examples() {
    let even = run(|g| {
        let x = g.input(t(&[2], &[0.0, 0.0]));
        g.softmax(x, 0)
    });
    assert_eq!(even.data(), &[0.5, 0.5]);
    let big = run(|g| {
        let x = g.input(t(&[2], &[1000.0, 0.0]));
        g.softmax(x, 0)
    });
    assert!(big.all_finite());
    assert!((big.data()[0] - 1.0).abs() < 1e-12 && big.data()[1] < 1e-300);
}

#[test]
fn softmax_rows_sum_to_one_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[4, 7]);
    let out = run(|g| {
        let v = g.input(x.clone());
        g.softmax(v, 1)
    });
    for row in out.data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    for axis in [0, 1] {
        check_ten_points(
            |store, rng| {
                let x = add_param(store, rng, "x", &[4, 7]);
                Box::new(move |g| {
                    let x = g.param(x);
                    let y = g.softmax(x, axis)?;
                    weighted_sum(g, y, 8)
                })
            },
            Mode::Train,
        );
    }
}

proptest! {
    #[test]
    fn softmax_normalized_for_large_inputs(vals in prop::collection::vec(-1000.0f64..1000.0, 1..40)) {
        let n = vals.len();
        let out = run(|g| {
            let x = g.input(Tensor::new(&[1, n], vals.clone()).unwrap());
            g.softmax(x, 1)
        });
        prop_assert!(out.all_finite());
        prop_assert!((out.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn window_lengths_follow_closed_form(len in 1usize..=64, k in 1usize..=7, stride in 1usize..=3) {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(Tensor::zeros(&[1, 1, len]));
        let w = g.input(Tensor::zeros(&[1, 1, k]));
        let valid = g.conv1d(x, w, None, stride, Padding::Valid);
        let pooled = g.pool1d(x, PoolKind::Max, k, stride, Padding::Valid);
        if k <= len {
            let want = (len - k) / stride + 1;
            prop_assert_eq!(g.shape(valid.unwrap())[2], want);
            prop_assert_eq!(g.shape(pooled.unwrap())[2], want);
        } else {
            prop_assert!(valid.is_err());
            prop_assert!(pooled.is_err());
        }
        let same = g.conv1d(x, w, None, stride, Padding::Same).unwrap();
        let pad_total = ((len.div_ceil(stride) - 1) * stride + k).saturating_sub(len);
        prop_assert_eq!(g.shape(same)[2], (len + pad_total - k) / stride + 1);
        prop_assert_eq!(g.shape(same)[2], len.div_ceil(stride));
    }
}

// ---------------------------------------------------------------- batchnorm

fn bn_params(store: &mut ParamStore, c: usize, gamma: f64, beta: f64) -> [ParamId; 4] {
    [
        store.insert("gamma", Tensor::full(&[c], gamma), true),
        store.insert("beta", Tensor::full(&[c], beta), true),
        store.insert("rm", Tensor::zeros(&[c]), false),
        store.insert("rv", Tensor::full(&[c], 1.0), false),
    ]
}

fn bn_forward(store: &ParamStore, ids: [ParamId; 4], x: &Tensor, mode: Mode) -> Tensor {
    let mut g = Graph::new(store, mode);
    let xv = g.input(x.clone());
    let (gm, bt) = (g.param(ids[0]), g.param(ids[1]));
    let y = g.batchnorm1d(xv, gm, bt, ids[2], ids[3]).unwrap();
    g.value(y).clone()
}

#[test]
fn batchnorm_fixed_point_and_constant() {
    // Each channel already has zero mean and unit (biased) variance.
    let x = t(&[2, 1, 2], &[1.0, -1.0, 1.0, -1.0]);
    let mut store = ParamStore::new();
    let ids = bn_params(&mut store, 1, 1.0, 0.0);
    let y = bn_forward(&store, ids, &x, Mode::Train);
    assert!(y.max_abs_diff(&x) < 1e-5);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[3, 2, 5]);
    let mut store = ParamStore::new();
    let ids = bn_params(&mut store, 2, 0.0, 5.0);
    let y = bn_forward(&store, ids, &x, Mode::Train);
    assert!(y.data().iter().all(|&v| v == 5.0));
}

#[test]
fn batchnorm_train_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[4, 3, 20]);
    let mut store = ParamStore::new();
    let ids = bn_params(&mut store, 3, 1.0, 0.0);
    let y = bn_forward(&store, ids, &x, Mode::Train);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|b| (0..20).map(move |l| (b, l))).map(|(b, l)| y.at3(b, c, l)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        // epsilon shrinks the variance by var/(var+eps); inputs have var ~ 1/3.
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
}

#[test]
fn batchnorm_running_stats_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[2, 2, 6]);
    let mut store = ParamStore::new();
    let ids = bn_params(&mut store, 2, 1.0, 0.0);
    let updates = {
        let mut g = Graph::new(&store, Mode::Train);
        let xv = g.input(x.clone());
        let (gm, bt) = (g.param(ids[0]), g.param(ids[1]));
        g.batchnorm1d(xv, gm, bt, ids[2], ids[3]).unwrap();
        g.take_buffer_updates()
    };
    assert_eq!(updates.len(), 2);
    let mean0: f64 = (0..2).flat_map(|b| (0..6).map(move |l| (b, l))).map(|(b, l)| x.at3(b, 0, l)).sum::<f64>() / 12.0;
    assert!((updates[0].1[0] - 0.1 * mean0).abs() < 1e-12);
    for (id, v) in updates {
        store.assign(id, &v).unwrap();
    }
    // Eval mode ignores batch statistics.
    let y = bn_forward(&store, ids, &x, Mode::Eval);
    let rm = store.value(ids[2]).data()[0];
    let rv = store.value(ids[3]).data()[0];
    let want = (x.at3(0, 0, 0) - rm) / (rv + 1e-5).sqrt();
    assert!((y.at3(0, 0, 0) - want).abs() < 1e-12);
}

#[test]
fn batchnorm_rejects_single_value_batches() {
    let mut store = ParamStore::new();
    let ids = bn_params(&mut store, 1, 1.0, 0.0);
    let mut g = Graph::new(&store, Mode::Train);
    let xv = g.input(Tensor::zeros(&[1, 1, 1]));
    let (gm, bt) = (g.param(ids[0]), g.param(ids[1]));
    assert!(g.batchnorm1d(xv, gm, bt, ids[2], ids[3]).is_err());
}

#[test]
fn batchnorm_gradients() {
    for mode in [Mode::Train, Mode::Eval] {
        check_ten_points(
            |store, rng| {
                let x = add_param(store, rng, "x", &[3, 2, 5]);
                let gamma = add_param(store, rng, "gamma", &[2]);
                let beta = add_param(store, rng, "beta", &[2]);
                let rm = store.insert("rm", rand_tensor(rng, &[2]), false);
                let rv = store.insert("rv", Tensor::full(&[2], 0.7), false);
                Box::new(move |g| {
                    let (x, gm, bt) = (g.param(x), g.param(gamma), g.param(beta));
                    let y = g.batchnorm1d(x, gm, bt, rm, rv)?;
                    weighted_sum(g, y, 9)
                })
            },
            mode,
        );
    }
}

#[test]
fn layernorm_gradients() {
    check_ten_points(
        |store, rng| {
            let x = add_param(store, rng, "x", &[2, 3, 6]);
            let gamma = add_param(store, rng, "gamma", &[6]);
            let beta = add_param(store, rng, "beta", &[6]);
            Box::new(move |g| {
                let (x, gm, bt) = (g.param(x), g.param(gamma), g.param(beta));
                let y = g.layernorm(x, gm, bt, 1e-6)?;
                weighted_sum(g, y, 10)
            })
        },
        Mode::Train,
    );
}

// ---------------------------------------------------------------- structural ops

#[test]
fn broadcast_and_structural_gradients() {
    check_ten_points(
        |store, rng| {
            let a = add_param(store, rng, "a", &[2, 3, 4]);
            let c = add_param(store, rng, "c", &[2, 3, 1]);
            let s = add_param(store, rng, "s", &[2, 1, 4]);
            let m = add_param(store, rng, "m", &[2, 4, 5]);
            Box::new(move |g| {
                let (a, c, s, m) = (g.param(a), g.param(c), g.param(s), g.param(m));
                let x = g.mul(a, c)?;
                let x = g.add(x, s)?;
                let x = g.mul(x, s)?;
                let cat = g.concat(&[x, a], 1)?;
                let p = g.permute(cat, &[0, 2, 1])?;
                let prod = g.bmm(p, m, true, false)?;
                let r = g.reshape(prod, &[2, 30])?;
                let r = g.scale(r, 0.7);
                weighted_sum(g, r, 11)
            })
        },
        Mode::Train,
    );
}

#[test]
fn bmm_transpose_gradients() {
    for (ta, tb) in [(false, false), (false, true), (true, false), (true, true)] {
        check_ten_points(
            |store, rng| {
                let a = add_param(store, rng, "a", if ta { &[2, 4, 3] } else { &[2, 3, 4] });
                let b = add_param(store, rng, "b", if tb { &[2, 5, 4] } else { &[2, 4, 5] });
                Box::new(move |g| {
                    let (a, b) = (g.param(a), g.param(b));
                    let y = g.bmm(a, b, ta, tb)?;
                    weighted_sum(g, y, 12)
                })
            },
            Mode::Train,
        );
    }
}

#[test]
fn loss_gradients() {
    check_ten_points(
        |store, rng| {
            let z = add_param(store, rng, "z", &[6, 1]);
            let targets: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
            Box::new(move |g| {
                let z = g.param(z);
                g.bce_with_logits(z, &targets)
            })
        },
        Mode::Train,
    );
    check_ten_points(
        |store, rng| {
            let p = add_param(store, rng, "p", &[6, 1]);
            let targets: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
            Box::new(move |g| {
                let p = g.param(p);
                g.rmse(p, &targets)
            })
        },
        Mode::Train,
    );
}

#[test]
fn loss_values() {
    let bce = run(|g| {
        let z = g.input(t(&[2, 1], &[0.0, 0.0]));
        g.bce_with_logits(z, &[0.0, 1.0])
    });
    assert!((bce.data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    let rmse = run(|g| {
        let p = g.input(t(&[2, 1], &[1.0, 5.0]));
        g.rmse(p, &[4.0, 1.0])
    });
    assert!((rmse.data()[0] - 12.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn forward_backward_is_bitwise_deterministic() {
    let grads = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let x = rand_tensor(&mut rng, &[3, 2, 40]);
        let w = add_param(&mut store, &mut rng, "w", &[8, 2, 5]);
        let fc = add_param(&mut store, &mut rng, "fc", &[8, 1]);
        let mut g = Graph::new(&store, Mode::Train);
        let (xv, wv, fv) = (g.input(x), g.param(w), g.param(fc));
        let y = g.conv1d(xv, wv, None, 2, Padding::Same).unwrap();
        let y = g.relu(y);
        let p = g.global_pool(y, PoolKind::Avg).unwrap();
        let z = g.dense(p, fv, None).unwrap();
        let loss = g.bce_with_logits(z, &[1.0, 0.0, 1.0]).unwrap();
        let gr = g.backward(loss).unwrap();
        (gr.param(w).unwrap().to_vec(), gr.param(fc).unwrap().to_vec())
    };
    let (a, b) = (grads(), grads());
    assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn accumulate_adds_into_store() {
    let mut store = ParamStore::new();
    let w = store.insert("w", t(&[2], &[1.0, 2.0]), true);
    for _ in 0..2 {
        let grads = {
            let mut g = Graph::new(&store, Mode::Train);
            let wv = g.param(w);
            let s = g.sum_all(wv);
            g.backward(s).unwrap()
        };
        store.accumulate(&grads);
    }
    assert_eq!(store.get(w).grad.data(), &[2.0, 2.0]);
    store.zero_grad();
    assert_eq!(store.get(w).grad.data(), &[0.0, 0.0]);
}
