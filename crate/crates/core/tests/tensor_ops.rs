use crosslink::autodiff::Tape;
use crosslink::net::spec::{HORIZONTAL_PATHS, SQUARE_PATHS, UP_KERNEL, VERTICAL_PATHS};
use crosslink::tensor::Tensor;
use proptest::prelude::*;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn conv(x: &Tensor<f64>, w: &Tensor<f64>, pad: (usize, usize)) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone(), false), tape.leaf(w.clone(), false));
    let y = tape.conv2d(xv, wv, None, pad).unwrap();
    tape.value(y).clone()
}

/// Direct cross-correlation with zero padding.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: (usize, usize)) -> Tensor<f64> {
    let [n, c, h, wd] = x.dims4().unwrap();
    let [o, _, kh, kw] = w.dims4().unwrap();
    let (oh, ow) = (h + 2 * pad.0 + 1 - kh, wd + 2 * pad.1 + 1 - kw);
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = b[oi];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (sy, sx) = ((y + i) as isize - pad.0 as isize, (xx + j) as isize - pad.1 as isize);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                s += x.data()[((ni * c + ci) * h + sy as usize) * wd + sx as usize]
                                    * w.data()[((oi * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    t(&[n, o, oh, ow], out)
}

#[test]
fn conv_box_sum_of_ones() {
    let y = conv(&Tensor::full([1, 1, 4, 4], 1.0), &Tensor::full([1, 1, 3, 3], 1.0), (1, 1));
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
    assert_eq!(y.data()[5], 9.0);
    assert_eq!(y.data()[0], 4.0);
    assert_eq!(y.data()[1], 6.0);
}

#[test]
fn every_block_kernel_preserves_size() {
    let x = Tensor::from_fn([1, 2, 7, 9], |i| (i as f64 * 0.37).sin());
    let mut pairs: Vec<_> = VERTICAL_PATHS.iter().chain(&HORIZONTAL_PATHS).chain(&SQUARE_PATHS).collect();
    pairs.push(&UP_KERNEL);
    pairs.sort_by_key(|k| (k.kernel, k.padding));
    pairs.dedup();
    assert_eq!(pairs.len(), 7, "distinct (kernel, padding) pairs");
    for k in pairs {
        let w = Tensor::full([3, 2, k.kernel.0, k.kernel.1], 0.1);
        assert_eq!(conv(&x, &w, k.padding).shape(), &[1, 3, 7, 9], "{k}");
    }
    // the 1×1 fusion/shortcut and the 5×5 square path
    assert_eq!(conv(&x, &Tensor::full([1, 2, 1, 1], 1.0), (0, 0)).shape(), &[1, 1, 7, 9]);
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros([1, 2, 4, 4]), false);
    let w = tape.leaf(Tensor::zeros([1, 3, 3, 3]), false);
    let err = tape.conv2d(x, w, None, (1, 1)).unwrap_err().to_string();
    assert!(err.contains("conv2d"), "{err}");
    let w = tape.leaf(Tensor::zeros([1, 2, 7, 7]), false);
    assert!(tape.conv2d(x, w, None, (0, 0)).is_err(), "non-positive output size");
}

#[test]
fn pools_and_upsample_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]), true);
    let m = tape.max_pool2x2(x).unwrap();
    assert_eq!(tape.value(m).data(), &[4.0]);

    let c = tape.leaf(Tensor::full([1, 1, 2, 2], 3.0), true);
    let mc = tape.max_pool2x2(c).unwrap();
    let s = tape.sum(mc);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(c).unwrap(), &[1.0, 0.0, 0.0, 0.0], "ties route to the first element");

    let q = tape.leaf(
        Tensor::from_fn([1, 1, 4, 4], |i| if i / 4 < 2 && i % 4 < 2 { 1.0 } else { 0.0 }),
        false,
    );
    let p1 = tape.avg_pool2x2(q).unwrap();
    let p2 = tape.avg_pool2x2(p1).unwrap();
    assert_eq!(tape.value(p2).data(), &[0.25]);

    let odd = tape.leaf(Tensor::zeros([1, 1, 3, 4]), false);
    assert!(tape.max_pool2x2(odd).is_err());
    assert!(tape.avg_pool2x2(odd).is_err());

    let u = tape.leaf(t(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]), false);
    let up = tape.upsample2x(u).unwrap();
    let v = tape.value(up).data().to_vec();
    assert_eq!(tape.shape(up), &[1, 1, 4, 4]);
    assert_eq!((v[0], v[3], v[12], v[15]), (0.0, 1.0, 2.0, 3.0));
    // half-pixel sample at (0.75, 0.25) in source coordinates for output (2, 1)
    assert!((v[2 * 4 + 1] - (0.25 * 0.75 * 0.0 + 0.25 * 0.25 * 1.0 + 0.75 * 0.75 * 2.0 + 0.75 * 0.25 * 3.0)).abs() < 1e-15);
}

#[test]
fn batchnorm_train_statistics() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn([3, 2, 4, 5], |i| ((i * 7919) % 97) as f64 / 13.0 - 2.0), false);
    let gamma = tape.leaf(Tensor::full([2], 1.0), false);
    let beta = tape.leaf(Tensor::zeros([2]), false);
    let (y, stats) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
    let yv = tape.value(y);
    for c in 0..2 {
        let vals: Vec<f64> = (0..3)
            .flat_map(|n| (0..20).map(move |k| (n * 2 + c) * 20 + k))
            .map(|i| yv.data()[i])
            .collect();
        let mean = vals.iter().sum::<f64>() / 60.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5 * 2.0, "variance {var}");
    }
    assert_eq!(stats.mean.len(), 2);

    let single = tape.leaf(Tensor::zeros([1, 1, 1, 1]), false);
    let g1 = tape.leaf(Tensor::full([1], 1.0), false);
    let b1 = tape.leaf(Tensor::zeros([1]), false);
    assert!(tape.batchnorm_train(single, g1, b1, 1e-5).is_err());
}

#[test]
fn elementwise_basics() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 1, 3], vec![-1.0, 0.0, 2.0]), true);
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s).data()[1], 0.5);

    let r = tape.relu(x);
    let rs = tape.sum(r);
    let g = tape.backward(rs).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0], "relu'(0) = 0");

    let neg = tape.affine(x, -1.0, 0.0);
    let z = tape.add(x, neg).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));

    let parts: Vec<_> = (0..3).map(|_| tape.leaf(Tensor::zeros([1, 32, 2, 2]), false)).collect();
    let cat = tape.concat_channels(&parts).unwrap();
    assert_eq!(tape.shape(cat), &[1, 96, 2, 2]);

    let other = tape.leaf(Tensor::zeros([1, 1, 1, 2]), false);
    assert!(tape.add(x, other).is_err());
    assert!(tape.concat_channels(&[x, other]).is_err());
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[4], vec![1.0, -2.0, 0.5, 3.0]), true);
    let s = tape.sum(x);
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[1.0; 4]);

    let sq = tape.mul(x, x).unwrap();
    let s2 = tape.sum(sq);
    assert_eq!(tape.backward(s2).unwrap().get(x).unwrap(), &[2.0, -4.0, 1.0, 6.0]);

    let Err(err) = tape.backward(sq) else { panic!("non-scalar backward accepted") };
    let err = err.to_string();
    assert!(err.contains("scalar") || err.contains("one element"), "{err}");
}

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_loop(
        x in vec_strategy(2 * 3 * 6 * 5),
        w in vec_strategy(4 * 3 * 3 * 2),
        b in vec_strategy(4),
        ph in 0usize..2,
        pw in 0usize..2,
    ) {
        let xt = t(&[2, 3, 6, 5], x);
        let wt = t(&[4, 3, 3, 2], w);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(xt.clone(), false), tape.leaf(wt.clone(), false), tape.leaf(t(&[4], b.clone()), false));
        let y = tape.conv2d(xv, wv, Some(bv), (ph, pw)).unwrap();
        let want = naive_conv(&xt, &wt, &b, (ph, pw));
        prop_assert_eq!(tape.shape(y), want.shape());
        prop_assert!(tape.value(y).max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn conv_is_linear(
        x in vec_strategy(2 * 8 * 8),
        y in vec_strategy(2 * 8 * 8),
        w in vec_strategy(3 * 2 * 5 * 3),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let (xt, yt, wt) = (t(&[1, 2, 8, 8], x), t(&[1, 2, 8, 8], y), t(&[3, 2, 5, 3], w));
        let mix = Tensor::from_fn([1, 2, 8, 8], |i| a * xt.data()[i] + b * yt.data()[i]);
        let lhs = conv(&mix, &wt, (2, 1));
        let (cx, cy) = (conv(&xt, &wt, (2, 1)), conv(&yt, &wt, (2, 1)));
        let rhs = Tensor::from_fn(cx.shape().to_vec(), |i| a * cx.data()[i] + b * cy.data()[i]);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn avg_pool_preserves_mean(x in vec_strategy(2 * 3 * 8 * 8)) {
        let xt = t(&[2, 3, 8, 8], x);
        let mut tape = Tape::new();
        let v = tape.leaf(xt.clone(), false);
        let p = tape.avg_pool2x2(v).unwrap();
        prop_assert!((tape.value(p).mean() - xt.mean()).abs() < 1e-12);
    }

    #[test]
    fn constant_maps_stay_constant(c in -5.0f64..5.0) {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::full([1, 2, 4, 6], c), false);
        let up = tape.upsample2x(v).unwrap();
        let ap = tape.avg_pool2x2(v).unwrap();
        prop_assert!(tape.value(up).data().iter().all(|&y| (y - c).abs() < 1e-14));
        prop_assert!(tape.value(ap).data().iter().all(|&y| (y - c).abs() < 1e-14));
    }

    #[test]
    fn repeated_forward_is_bitwise_identical(x in vec_strategy(1 * 2 * 6 * 6), w in vec_strategy(2 * 2 * 3 * 3)) {
        let (xt, wt) = (t(&[1, 2, 6, 6], x), t(&[2, 2, 3, 3], w));
        let a = conv(&xt, &wt, (1, 1));
        let b = conv(&xt, &wt, (1, 1));
        prop_assert_eq!(a.data(), b.data());
    }
}
