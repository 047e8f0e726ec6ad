use crosslink::metrics::*;
use proptest::prelude::*;

fn mask(h: usize, w: usize, bits: &[bool]) -> BinaryMask {
    BinaryMask::new(h, w, bits.iter().map(|&b| u8::from(b)).collect()).unwrap()
}

/// Independent boundary: foreground with a background 4-neighbour or touching the edge.
fn boundary_oracle(h: usize, w: usize, bits: &[bool]) -> Vec<(f64, f64)> {
    let at = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && bits[y as usize * w + x as usize];
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if at(y, x) && [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)].iter().any(|&(a, b)| !at(a, b)) {
                out.push((y as f64, x as f64));
            }
        }
    }
    out
}

fn hausdorff_oracle(h: usize, w: usize, a: &[bool], b: &[bool], s: (f64, f64)) -> Option<f64> {
    let (ba, bb) = (boundary_oracle(h, w, a), boundary_oracle(h, w, b));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let d = |p: &(f64, f64), q: &(f64, f64)| ((s.0 * (p.0 - q.0)).powi(2) + (s.1 * (p.1 - q.1)).powi(2)).sqrt();
    let directed = |x: &[(f64, f64)], y: &[(f64, f64)]| {
        x.iter()
            .map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Some(directed(&ba, &bb).max(directed(&bb, &ba)))
}

#[test]
fn confusion_examples() {
    let ones = mask(4, 4, &[true; 16]);
    let c = confusion(&MaskPair::new(ones.clone(), ones.clone()).unwrap());
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (16, 0, 0, 0));
    let zeros = BinaryMask::zeros(4, 4);
    let c = confusion(&MaskPair::new(zeros.clone(), ones).unwrap());
    assert_eq!((c.tp, c.tn), (0, 0));
    assert!(MaskPair::new(zeros, BinaryMask::zeros(4, 5)).is_err());
    assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
}

#[test]
fn rate_examples() {
    let c = ConfusionCounts { tp: 8, fp: 2, tn: 242, fn_: 4 };
    let r = |v: Option<f64>| (v.unwrap() * 100.0).round() / 100.0;
    assert_eq!(r(dsc(&c)), 72.73);
    assert_eq!(r(sensitivity(&c)), 66.67);
    assert_eq!(r(over_rate(&c)), 16.67);
    assert_eq!(r(under_rate(&c)), 33.33);

    let perfect = ConfusionCounts { tp: 5, fp: 0, tn: 11, fn_: 0 };
    assert_eq!((dsc(&perfect), over_rate(&perfect), under_rate(&perfect)), (Some(100.0), Some(0.0), Some(0.0)));
    let missed = ConfusionCounts { tp: 0, fp: 0, tn: 11, fn_: 5 };
    assert_eq!((dsc(&missed), under_rate(&missed), over_rate(&missed)), (Some(0.0), Some(100.0), Some(0.0)));
    let empty_gt = ConfusionCounts { tp: 0, fp: 3, tn: 13, fn_: 0 };
    assert_eq!((sensitivity(&empty_gt), over_rate(&empty_gt), under_rate(&empty_gt)), (None, None, None));
}

#[test]
fn hausdorff_examples() {
    let mut a = BinaryMask::zeros(5, 5);
    let mut b = BinaryMask::zeros(5, 5);
    a.set(0, 0, true);
    b.set(3, 4, true);
    assert_eq!(hausdorff(&MaskPair::new(a.clone(), b.clone()).unwrap()), Some(5.0));
    assert_eq!(hausdorff(&MaskPair::new(a.clone(), a.clone()).unwrap()), Some(0.0));
    assert_eq!(hausdorff(&MaskPair::new(a.clone(), BinaryMask::zeros(5, 5)).unwrap()), None);
    let scaled = MaskPair::with_spacing(a, b, (2.0, 0.5)).unwrap();
    assert_eq!(hausdorff(&scaled), Some((36.0f64 + 4.0).sqrt()));
}

#[test]
fn stratification_examples() {
    let case = |id: &str, frac_px: usize, hit: usize| {
        let gt: Vec<bool> = (0..100).map(|i| i < frac_px).collect();
        let pred: Vec<bool> = (0..100).map(|i| i < hit).collect();
        CaseMetrics::compute(id, &MaskPair::new(mask(10, 10, &pred), mask(10, 10, &gt)).unwrap())
    };
    // 1% target, DSC 2*1/(1+... ) computed via the library; 10% target separately
    let small = case("a", 1, 1);
    let large = case("b", 10, 5);
    let rows = stratify(&[small.clone(), large.clone()], &[0.0, 0.02, 1.0]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].count, 1);
    assert_eq!(rows[0].dsc.mean, small.dsc);
    assert_eq!(rows[1].dsc.mean, large.dsc);

    let one_bin = stratify(&[small.clone(), large.clone()], &[0.0, 1.0]).unwrap();
    assert_eq!(one_bin[0].dsc.mean, aggregate(&[small, large]).dsc.mean);
    assert!(validate_bins(&[0.0, 0.02, 0.02]).is_err());
    assert!(validate_bins(&DEFAULT_BINS).is_ok());
}

#[test]
fn report_marks_undefined() {
    let empty = BinaryMask::zeros(4, 4);
    let c = CaseMetrics::compute("0001", &MaskPair::new(empty.clone(), empty).unwrap());
    let table = report_table(&[c], ',');
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("id,dsc,sen,spe,or,ur,hd"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("0001,NA,NA,100"), "{row}");
    assert!(table.contains("undefined"));
}

fn bits(len: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(prop::bool::weighted(0.3), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rates_match_pixel_loops(p in bits(32 * 32), g in bits(32 * 32)) {
        let pair = MaskPair::new(mask(32, 32, &p), mask(32, 32, &g)).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..p.len() {
            match (p[i], g[i]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let c = confusion(&pair);
        prop_assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fn_));
        let pct = |n: u64, d: u64| (d > 0).then(|| 100.0 * n as f64 / d as f64);
        prop_assert_eq!(dsc(&c), pct(2 * tp, 2 * tp + fp + fn_));
        prop_assert_eq!(sensitivity(&c), pct(tp, tp + fn_));
        prop_assert_eq!(specificity(&c), pct(tn, tn + fp));
        prop_assert_eq!(over_rate(&c), pct(fp, tp + fn_));
        prop_assert_eq!(under_rate(&c), pct(fn_, tp + fn_));
        if tp + fn_ > 0 {
            prop_assert!((sensitivity(&c).unwrap() + under_rate(&c).unwrap() - 100.0).abs() < 1e-12);
        }
        for v in [dsc(&c), sensitivity(&c), specificity(&c), under_rate(&c)].into_iter().flatten() {
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }

    #[test]
    fn dsc_symmetric_and_or_ur_swap(p in bits(16 * 16), g in bits(16 * 16)) {
        let (pm, gm) = (mask(16, 16, &p), mask(16, 16, &g));
        let fwd = confusion(&MaskPair::new(pm.clone(), gm.clone()).unwrap());
        let rev = confusion(&MaskPair::new(gm, pm).unwrap());
        prop_assert_eq!(dsc(&fwd), dsc(&rev));
        // FP of (pred, gt) is FN of (gt, pred); both normalized by their own |G|
        prop_assert_eq!(fwd.fp, rev.fn_);
    }

    #[test]
    fn hausdorff_matches_brute_force(
        h in 1usize..=24, w in 1usize..=24,
        seed in prop::collection::vec(prop::bool::weighted(0.2), 24 * 24 * 2),
        sy in 0.5f64..2.0, sx in 0.5f64..2.0,
    ) {
        let (a, b) = (&seed[..h * w], &seed[24 * 24..24 * 24 + h * w]);
        let pair = MaskPair::with_spacing(mask(h, w, a), mask(h, w, b), (sy, sx)).unwrap();
        prop_assert_eq!(hausdorff(&pair), hausdorff_oracle(h, w, a, b, (sy, sx)));
    }

    #[test]
    fn hausdorff_symmetric_and_triangle(a in bits(12 * 12), b in bits(12 * 12), c in bits(12 * 12)) {
        let (ma, mb, mc) = (mask(12, 12, &a), mask(12, 12, &b), mask(12, 12, &c));
        let hd = |x: &BinaryMask, y: &BinaryMask| hausdorff(&MaskPair::new(x.clone(), y.clone()).unwrap());
        prop_assert_eq!(hd(&ma, &mb), hd(&mb, &ma));
        if let (Some(ab), Some(bc), Some(ac)) = (hd(&ma, &mb), hd(&mb, &mc), hd(&ma, &mc)) {
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
