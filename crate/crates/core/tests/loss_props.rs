use crosslink::autodiff::Tape;
use crosslink::loss::{self, LossWeights, BCE_CLAMP, DICE_EPS};
use crosslink::tensor::Tensor;
use proptest::prelude::*;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn atn(v: &[f64], h: &[f64], m: &[f64], side: usize) -> f64 {
    let mut tape = Tape::new();
    let a = tape.leaf(t(&[1, 1, side, side], v.to_vec()), true);
    let b = tape.leaf(t(&[1, 1, side, side], h.to_vec()), true);
    let l = loss::attention_loss(&mut tape, a, b, &t(&[1, 1, side, side], m.to_vec())).unwrap();
    tape.value(l.loss).data()[0]
}

/// Direct evaluation: negative normalized triple correlation of the centered maps.
fn attention_oracle(v: &[f64], h: &[f64], m: &[f64]) -> f64 {
    let center = |x: &[f64]| {
        let mu = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|e| e - mu).collect::<Vec<_>>()
    };
    let (tv, th, tm) = (center(v), center(h), center(m));
    let num: f64 = (0..tv.len()).map(|i| tv[i] * th[i] * tm[i]).sum();
    let sq = |x: &[f64]| x.iter().map(|e| e * e).sum::<f64>();
    -num / (sq(&tv) * sq(&th) * sq(&tm)).sqrt()
}

fn probs(tape: &mut Tape<f64>, p: &[f64], shape: &[usize]) -> crosslink::autodiff::Var {
    tape.leaf(t(shape, p.to_vec()), true)
}

#[test]
fn attention_worked_examples() {
    let a = [1.0, 0.0, 0.0, 0.0];
    let l = atn(&a, &a, &a, 2);
    assert!((l + 0.375 / 0.75f64.powf(1.5)).abs() < 1e-12);
    assert!((l + 0.57735).abs() < 1e-5);

    let checker = [1.0, 0.0, 1.0, 0.0];
    assert!(atn(&checker, &checker, &checker, 2).abs() < 1e-15);
}

#[test]
fn attention_degenerate_maps_contribute_zero() {
    let mut tape = Tape::new();
    let flat = tape.leaf(Tensor::full([2, 1, 2, 2], 0.3), true);
    let var = tape.leaf(t(&[2, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]), true);
    let mask = t(&[2, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let l = loss::attention_loss(&mut tape, flat, var, &mask).unwrap();
    assert_eq!(l.degenerate, 2);
    assert_eq!(tape.value(l.loss).data()[0], 0.0);
    let g = tape.backward(l.loss).unwrap();
    assert!(g.get(flat).map_or(true, |g| g.iter().all(|&x| x == 0.0)));
}

#[test]
fn bce_examples() {
    let mut tape = Tape::new();
    let g = t(&[1, 1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]);
    let p = probs(&mut tape, &[1.0, 0.0, 1.0, 0.0], &[1, 1, 2, 2]);
    let l = loss::bce_loss(&mut tape, p, &g).unwrap();
    assert!(tape.value(l).data()[0] <= 1e-6);

    let half = probs(&mut tape, &[0.5; 4], &[1, 1, 2, 2]);
    let l = loss::bce_loss(&mut tape, half, &g).unwrap();
    assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

    let bad = probs(&mut tape, &[0.5; 3], &[1, 1, 1, 3]);
    assert!(loss::bce_loss(&mut tape, bad, &g).is_err());
}

#[test]
fn dice_examples() {
    let mut tape = Tape::new();
    let ones = Tensor::full([1, 1, 4, 4], 1.0);
    let p = tape.leaf(ones.clone(), true);
    let l = loss::dice_loss(&mut tape, p, &ones, DICE_EPS).unwrap();
    let n = 16.0;
    assert!((tape.value(l).data()[0] - DICE_EPS / (2.0 * n + DICE_EPS)).abs() < 1e-15);

    let zeros = tape.leaf(Tensor::zeros([1, 1, 4, 4]), true);
    let l = loss::dice_loss(&mut tape, zeros, &ones, DICE_EPS).unwrap();
    assert_eq!(tape.value(l).data()[0], 1.0);
}

#[test]
fn pool_mask_examples() {
    let quadrant = Tensor::from_fn([1, 1, 4, 4], |i| if i / 4 < 2 && i % 4 < 2 { 1.0 } else { 0.0 });
    assert_eq!(loss::pool_mask(&quadrant).unwrap().data(), &[0.25]);
    let ones = loss::pool_mask(&Tensor::<f64>::full([1, 1, 8, 8], 1.0)).unwrap();
    assert_eq!(ones.shape(), &[1, 1, 2, 2]);
    assert!(ones.data().iter().all(|&v| v == 1.0));
    assert!(loss::pool_mask(&Tensor::<f64>::zeros([1, 1, 6, 8])).is_err());
}

#[test]
fn attention_map_examples() {
    let mut tape = Tape::<f64>::new();
    let c = tape.leaf(Tensor::full([1, 3, 2, 2], 0.7), false);
    let a = loss::attention_map(&mut tape, c).unwrap();
    assert!(tape.value(a).data().iter().all(|&v| (v - 1.0).abs() < 1e-7));

    let one = tape.leaf(Tensor::from_fn([1, 2, 3, 3], |i| if i % 9 == 4 { 2.0 } else { 0.0 }), false);
    let a = loss::attention_map(&mut tape, one).unwrap();
    let v = tape.value(a).data();
    assert!((v[4] - 1.0).abs() < 1e-8);
    assert!(v.iter().enumerate().all(|(i, &x)| i == 4 || x == 0.0));
}

#[test]
fn weights_must_be_on_simplex() {
    assert!(LossWeights::new(0.4, 0.1, 0.5).is_ok());
    assert_eq!(LossWeights::default(), LossWeights::new(0.4, 0.1, 0.5).unwrap());
    assert!(LossWeights::new(0.5, 0.5, 0.5).is_err());
    assert!(LossWeights::new(1.2, -0.2, 0.0).is_err());
    assert!(LossWeights::new(1.0 - 1e-10, 0.0, 0.0).is_ok());
}

#[test]
fn cls_only_weights_give_bce_exactly() {
    let mut tape = Tape::new();
    let logits = tape.leaf(Tensor::from_fn([1, 1, 8, 8], |i| ((i * 31) % 17) as f64 / 4.0 - 2.0), true);
    let gt = Tensor::from_fn([1, 1, 8, 8], |i| f64::from((i * 7) % 5 == 0));
    let f = tape.leaf(Tensor::from_fn([1, 2, 2, 2], |i| i as f64 * 0.1), false);
    let l = loss::total_loss(&mut tape, logits, &gt, (f, f), LossWeights::new(1.0, 0.0, 0.0).unwrap()).unwrap();
    let v = l.values(&tape);
    assert_eq!(v.total, v.cls);
    assert!(v.dice > 0.0 && v.atn != 0.0, "the other terms are still logged");
}

fn unit(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn attention_bounded_invariant_and_symmetric(
        v in unit(16), h in unit(16), m in unit(16),
        a in 0.01f64..10.0, b in -5.0f64..5.0,
    ) {
        let l = atn(&v, &h, &m, 4);
        prop_assert!(l.abs() <= 1.0 + 1e-12);
        prop_assert!((l - attention_oracle(&v, &h, &m)).abs() < 1e-12);
        prop_assert_eq!(l, atn(&h, &v, &m, 4));
        let aff = |x: &[f64]| x.iter().map(|e| a * e + b).collect::<Vec<_>>();
        prop_assert!((atn(&aff(&v), &h, &m, 4) - l).abs() < 1e-9);
        prop_assert!((atn(&v, &aff(&h), &m, 4) - l).abs() < 1e-9);
        prop_assert!((atn(&v, &h, &aff(&m), 4) - l).abs() < 1e-9);
    }

    #[test]
    fn bce_matches_pixel_loop(p in prop::collection::vec(0.0f64..1.0, 64), g in prop::collection::vec(any::<bool>(), 64)) {
        let gt: Vec<f64> = g.iter().map(|&b| f64::from(b)).collect();
        let mut tape = Tape::new();
        let pv = probs(&mut tape, &p, &[1, 1, 8, 8]);
        let l = loss::bce_loss(&mut tape, pv, &t(&[1, 1, 8, 8], gt.clone())).unwrap();
        let oracle = -p.iter().zip(&gt).map(|(&pi, &gi)| {
            let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            gi * pc.ln() + (1.0 - gi) * (1.0 - pc).ln()
        }).sum::<f64>() / 64.0;
        let got = tape.value(l).data()[0];
        prop_assert!(got >= 0.0);
        prop_assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn dice_matches_pixel_loop(p in prop::collection::vec(0.0f64..1.0, 64), g in prop::collection::vec(any::<bool>(), 64)) {
        let gt: Vec<f64> = g.iter().map(|&b| f64::from(b)).collect();
        let mut tape = Tape::new();
        let pv = probs(&mut tape, &p, &[1, 1, 8, 8]);
        let l = loss::dice_loss(&mut tape, pv, &t(&[1, 1, 8, 8], gt.clone()), DICE_EPS).unwrap();
        let inter: f64 = p.iter().zip(&gt).map(|(a, b)| a * b).sum();
        let total: f64 = p.iter().sum::<f64>() + gt.iter().sum::<f64>();
        let oracle = 1.0 - 2.0 * inter / (total + DICE_EPS);
        let got = tape.value(l).data()[0];
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn total_is_weighted_sum_of_components(
        logits in prop::collection::vec(-4.0f64..4.0, 64),
        g in prop::collection::vec(any::<bool>(), 64),
        feats in prop::collection::vec(0.0f64..1.0, 2 * 3 * 4 * 4),
        w0 in 0.0f64..1.0, w1 in 0.0f64..1.0,
    ) {
        let (a, b) = (w0.min(w1), w0.max(w1));
        let w = LossWeights::new(a, b - a, 1.0 - b).unwrap();
        let gt = Tensor::from_fn([1, 1, 8, 8], |i| f64::from(g[i]));
        let mut tape = Tape::new();
        let lv = tape.leaf(t(&[1, 1, 8, 8], logits), true);
        let fv = tape.leaf(t(&[1, 3, 4, 4], feats[..48].to_vec()), true);
        let fh = tape.leaf(t(&[1, 3, 4, 4], feats[48..].to_vec()), true);
        let l = loss::total_loss(&mut tape, lv, &gt, (fv, fh), w).unwrap();
        let v = l.values(&tape);
        prop_assert!((v.total - (w.cls * v.cls + w.dice * v.dice + w.atn * v.atn)).abs() < 1e-12);
    }

    #[test]
    fn attention_map_in_unit_interval(f in prop::collection::vec(0.0f64..5.0, 2 * 4 * 6 * 6)) {
        let mut tape = Tape::new();
        let v = tape.leaf(t(&[2, 4, 6, 6], f), false);
        let a = loss::attention_map(&mut tape, v).unwrap();
        prop_assert_eq!(tape.shape(a), &[2, 1, 6, 6]);
        prop_assert!(tape.value(a).data().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn pool_mask_preserves_mean(g in prop::collection::vec(any::<bool>(), 2 * 16 * 8)) {
        let gt = Tensor::from_fn([2, 1, 16, 8], |i| f64::from(g[i]));
        let m = loss::pool_mask(&gt).unwrap();
        prop_assert_eq!(m.shape(), &[2, 1, 4, 2]);
        prop_assert!((m.mean() - gt.mean()).abs() < 1e-12);
        prop_assert!(m.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
