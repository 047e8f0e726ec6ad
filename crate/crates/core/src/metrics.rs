//! Overlap and boundary-distance metrics between binary masks.
//!
//! Rates are percentages. A metric whose denominator is zero is `None` and is
//! excluded from means (and counted) rather than treated as zero.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Default area-fraction bin edges for stratified reporting.
pub const DEFAULT_BINS: [f64; 4] = [0.0, 0.006, 0.02, 1.0];
/// Probability threshold used to binarize network output.
pub const THRESHOLD: f64 = 0.5;

/// Row-major `H×W` mask with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "mask {height}×{width} needs {} values, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| p > 1) {
            return Err(Error::InvalidArgument(format!("mask values must be 0 or 1, found {bad}")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0; height * width],
        }
    }

    /// Foreground where `p ≥ threshold`.
    pub fn from_probabilities(height: usize, width: usize, probs: &[f64], threshold: f64) -> Result<Self> {
        Self::new(height, width, probs.iter().map(|&p| u8::from(p >= threshold)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.pixels[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.pixels[y * self.width + x] = u8::from(on);
    }

    pub fn area(&self) -> usize {
        self.pixels.iter().map(|&p| p as usize).sum()
    }

    pub fn area_fraction(&self) -> f64 {
        if self.pixels.is_empty() {
            0.0
        } else {
            self.area() as f64 / self.pixels.len() as f64
        }
    }

    /// Foreground pixels with a background 4-neighbour or touching the image edge.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !self.get(y, x) {
                    continue;
                }
                let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
                if edge
                    || !self.get(y - 1, x)
                    || !self.get(y + 1, x)
                    || !self.get(y, x - 1)
                    || !self.get(y, x + 1)
                {
                    out.push((y, x));
                }
            }
        }
        out
    }
}

/// Prediction and ground truth of equal size, with physical pixel spacing `(sy, sx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub prediction: BinaryMask,
    pub ground_truth: BinaryMask,
    pub spacing: (f64, f64),
}

impl MaskPair {
    pub fn new(prediction: BinaryMask, ground_truth: BinaryMask) -> Result<Self> {
        Self::with_spacing(prediction, ground_truth, (1.0, 1.0))
    }

    pub fn with_spacing(prediction: BinaryMask, ground_truth: BinaryMask, spacing: (f64, f64)) -> Result<Self> {
        if (prediction.height, prediction.width) != (ground_truth.height, ground_truth.width) {
            return Err(Error::InvalidArgument(format!(
                "mask size mismatch: prediction {}×{}, ground truth {}×{}",
                prediction.height, prediction.width, ground_truth.height, ground_truth.width
            )));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0 && spacing.0.is_finite() && spacing.1.is_finite()) {
            return Err(Error::InvalidArgument(format!("pixel spacing must be positive, got {spacing:?}")));
        }
        Ok(Self {
            prediction,
            ground_truth,
            spacing,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

pub fn confusion(pair: &MaskPair) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pair.prediction.pixels.iter().zip(&pair.ground_truth.pixels) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    c
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// `2TP / (2TP + FP + FN)`.
pub fn dsc(c: &ConfusionCounts) -> Option<f64> {
    pct(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// `TP / (TP + FN)`.
pub fn sensitivity(c: &ConfusionCounts) -> Option<f64> {
    pct(c.tp, c.tp + c.fn_)
}

/// `TN / (TN + FP)`.
pub fn specificity(c: &ConfusionCounts) -> Option<f64> {
    pct(c.tn, c.tn + c.fp)
}

/// `FP / |G|`.
pub fn over_rate(c: &ConfusionCounts) -> Option<f64> {
    pct(c.fp, c.tp + c.fn_)
}

/// `FN / |G|`.
pub fn under_rate(c: &ConfusionCounts) -> Option<f64> {
    pct(c.fn_, c.tp + c.fn_)
}

/// Symmetric Hausdorff distance between the two boundary sets, in spacing units.
/// `None` when either mask is empty.
pub fn hausdorff(pair: &MaskPair) -> Option<f64> {
    let a = pair.prediction.boundary();
    let b = pair.ground_truth.boundary();
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let (sy, sx) = pair.spacing;
    let sq = |p: (usize, usize), q: (usize, usize)| {
        let dy = (p.0 as f64 - q.0 as f64) * sy;
        let dx = (p.1 as f64 - q.1 as f64) * sx;
        dy * dy + dx * dx
    };
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        from.iter()
            .map(|&p| to.iter().map(|&q| sq(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Some(directed(&a, &b).max(directed(&b, &a)).sqrt())
}

/// All per-case metrics; rates in percent, `hd` in spacing units.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CaseMetrics {
    pub id: String,
    pub counts: ConfusionCounts,
    pub gt_area_fraction: f64,
    pub dsc: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub or: Option<f64>,
    pub ur: Option<f64>,
    pub hd: Option<f64>,
}

impl CaseMetrics {
    pub fn compute(id: impl Into<String>, pair: &MaskPair) -> Self {
        let c = confusion(pair);
        Self {
            id: id.into(),
            counts: c,
            gt_area_fraction: pair.ground_truth.area_fraction(),
            dsc: dsc(&c),
            sen: sensitivity(&c),
            spe: specificity(&c),
            or: over_rate(&c),
            ur: under_rate(&c),
            hd: hausdorff(pair),
        }
    }

    fn columns(&self) -> [Option<f64>; 6] {
        [self.dsc, self.sen, self.spe, self.or, self.ur, self.hd]
    }
}

/// Mean of the defined values and the number of undefined ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanStat {
    pub mean: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

impl MeanStat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let (mut sum, mut defined, mut undefined) = (0.0, 0, 0);
        for v in values {
            match v {
                Some(x) => {
                    sum += x;
                    defined += 1;
                }
                None => undefined += 1,
            }
        }
        Self {
            mean: (defined > 0).then(|| sum / defined as f64),
            defined,
            undefined,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aggregate {
    pub cases: usize,
    pub dsc: MeanStat,
    pub sen: MeanStat,
    pub spe: MeanStat,
    pub or: MeanStat,
    pub ur: MeanStat,
    pub hd: MeanStat,
}

pub fn aggregate(cases: &[CaseMetrics]) -> Aggregate {
    let col = |i: usize| MeanStat::of(cases.iter().map(|c| c.columns()[i]));
    Aggregate {
        cases: cases.len(),
        dsc: col(0),
        sen: col(1),
        spe: col(2),
        or: col(3),
        ur: col(4),
        hd: col(5),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

/// Delimiter-separated table: header `id,dsc,sen,spe,or,ur,hd`, one row per case,
/// then a `mean` row and an `undefined` row of per-column undefined counts.
/// Undefined values are written as `NA`.
pub fn report_table(cases: &[CaseMetrics], delimiter: char) -> String {
    let d = delimiter;
    let mut out = format!("id{d}dsc{d}sen{d}spe{d}or{d}ur{d}hd\n");
    for c in cases {
        out.push_str(&c.id);
        for v in c.columns() {
            let _ = write!(out, "{d}{}", cell(v));
        }
        out.push('\n');
    }
    let agg = aggregate(cases);
    let stats = [agg.dsc, agg.sen, agg.spe, agg.or, agg.ur, agg.hd];
    out.push_str("mean");
    for s in &stats {
        let _ = write!(out, "{d}{}", cell(s.mean));
    }
    out.push_str("\nundefined");
    for s in &stats {
        let _ = write!(out, "{d}{}", s.undefined);
    }
    out.push('\n');
    out
}

/// One area-fraction bin `[lo, hi)` (the last bin also includes `hi`).
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BinRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub dsc: MeanStat,
}

pub fn validate_bins(bins: &[f64]) -> Result<()> {
    if bins.len() < 2 {
        return Err(Error::InvalidArgument("need at least two bin edges".into()));
    }
    if bins.windows(2).any(|w| !(w[0] < w[1])) || bins.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin edges must be finite and strictly increasing, got {bins:?}")));
    }
    Ok(())
}

/// Groups cases by ground-truth area fraction and averages DSC per bin.
/// Cases outside every bin are dropped.
pub fn stratify(cases: &[CaseMetrics], bins: &[f64]) -> Result<Vec<BinRow>> {
    validate_bins(bins)?;
    let last = bins.len() - 2;
    Ok(bins
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let members: Vec<&CaseMetrics> = cases
                .iter()
                .filter(|c| {
                    let f = c.gt_area_fraction;
                    f >= w[0] && (f < w[1] || (i == last && f <= w[1]))
                })
                .collect();
            BinRow {
                lo: w[0],
                hi: w[1],
                count: members.len(),
                dsc: MeanStat::of(members.iter().map(|c| c.dsc)),
            }
        })
        .collect())
}

pub fn stratified_report(pairs: &[MaskPair], bins: &[f64]) -> Result<Vec<BinRow>> {
    let cases: Vec<CaseMetrics> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| CaseMetrics::compute(i.to_string(), p))
        .collect();
    stratify(&cases, bins)
}

/// Header `bin_lo,bin_hi,count,mean_dsc,undefined`, area fractions in percent.
pub fn bin_table(rows: &[BinRow], delimiter: char) -> String {
    let d = delimiter;
    let mut out = format!("bin_lo_pct{d}bin_hi_pct{d}count{d}mean_dsc{d}undefined\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}{d}{}{d}{}{d}{}{d}{}",
            r.lo * 100.0,
            r.hi * 100.0,
            r.count,
            cell(r.dsc.mean),
            r.dsc.undefined
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::zeros(h, w);
        for &(y, x) in on {
            m.set(y, x, true);
        }
        m
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = BinaryMask::new(4, 4, vec![1; 16]).unwrap();
        let c = confusion(&MaskPair::new(gt.clone(), gt.clone()).unwrap());
        assert_eq!(c, ConfusionCounts { tp: 16, fp: 0, tn: 0, fn_: 0 });
        assert_eq!(dsc(&c), Some(100.0));
        assert_eq!(over_rate(&c), Some(0.0));
        assert_eq!(under_rate(&c), Some(0.0));

        let c = confusion(&MaskPair::new(BinaryMask::zeros(4, 4), gt).unwrap());
        assert_eq!(dsc(&c), Some(0.0));
        assert_eq!(under_rate(&c), Some(100.0));
        assert_eq!(over_rate(&c), Some(0.0));
    }

    #[test]
    fn hand_counted_rates() {
        let c = ConfusionCounts { tp: 8, fp: 2, tn: 242, fn_: 4 };
        assert!((dsc(&c).unwrap() - 72.727_272_727).abs() < 1e-6);
        assert!((sensitivity(&c).unwrap() - 66.666_666_667).abs() < 1e-6);
        assert!((over_rate(&c).unwrap() - 16.666_666_667).abs() < 1e-6);
        assert!((under_rate(&c).unwrap() - 33.333_333_333).abs() < 1e-6);
    }

    #[test]
    fn empty_ground_truth_is_undefined() {
        let c = confusion(&MaskPair::new(BinaryMask::zeros(3, 3), BinaryMask::zeros(3, 3)).unwrap());
        assert_eq!(sensitivity(&c), None);
        assert_eq!(over_rate(&c), None);
        assert_eq!(under_rate(&c), None);
        assert_eq!(dsc(&c), None);
        assert_eq!(specificity(&c), Some(100.0));
    }

    #[test]
    fn hausdorff_single_pixels() {
        let pair = MaskPair::new(mask(5, 6, &[(0, 0)]), mask(5, 6, &[(3, 4)])).unwrap();
        assert_eq!(hausdorff(&pair), Some(5.0));
        let scaled = MaskPair::with_spacing(mask(5, 6, &[(0, 0)]), mask(5, 6, &[(3, 4)]), (2.0, 0.5)).unwrap();
        assert_eq!(hausdorff(&scaled), Some((36.0f64 + 4.0).sqrt()));
        let same = MaskPair::new(mask(4, 4, &[(1, 1), (1, 2)]), mask(4, 4, &[(1, 1), (1, 2)])).unwrap();
        assert_eq!(hausdorff(&same), Some(0.0));
        assert_eq!(hausdorff(&MaskPair::new(BinaryMask::zeros(2, 2), mask(2, 2, &[(0, 0)])).unwrap()), None);
    }

    #[test]
    fn interior_pixels_are_not_boundary() {
        let full = BinaryMask::new(5, 5, vec![1; 25]).unwrap();
        let b = full.boundary();
        assert_eq!(b.len(), 16);
        assert!(!b.contains(&(2, 2)));
    }

    #[test]
    fn rejects_mismatched_sizes_and_values() {
        assert!(MaskPair::new(BinaryMask::zeros(2, 3), BinaryMask::zeros(3, 2)).is_err());
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
        assert!(validate_bins(&[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn two_cases_in_separate_bins() {
        let case = |f: f64, d: f64| CaseMetrics {
            id: String::new(),
            counts: ConfusionCounts::default(),
            gt_area_fraction: f,
            dsc: Some(d),
            sen: None,
            spe: None,
            or: None,
            ur: None,
            hd: None,
        };
        let rows = stratify(&[case(0.003, 0.8), case(0.01, 0.4)], &DEFAULT_BINS).unwrap();
        assert_eq!(rows[0].dsc.mean, Some(0.8));
        assert_eq!(rows[1].dsc.mean, Some(0.4));
        assert_eq!(rows[2].count, 0);
        assert_eq!(rows[2].dsc.mean, None);
    }

    #[test]
    fn table_marks_undefined() {
        let pair = MaskPair::new(BinaryMask::zeros(2, 2), BinaryMask::zeros(2, 2)).unwrap();
        let t = report_table(&[CaseMetrics::compute("0007", &pair)], ',');
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "id,dsc,sen,spe,or,ur,hd");
        assert_eq!(lines[1], "0007,NA,NA,100.0000,NA,NA,NA");
        assert_eq!(lines[2], "mean,NA,NA,100.0000,NA,NA,NA");
        assert_eq!(lines[3], "undefined,1,1,0,1,1,1");
    }
}
