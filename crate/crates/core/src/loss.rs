//! Segmentation losses: pixel BCE, soft Dice, and the attention correlation
//! loss tying the two encoder branches to the pooled ground truth.
//!
//! All losses are recorded on the tape as fused operations with closed-form
//! gradients. Reductions average over the batch.

use crate::autodiff::{sigmoid, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::{Element, Tensor};

pub const BCE_CLAMP: f64 = 1e-7;
pub const DICE_EPS: f64 = 1e-5;
/// Added to the per-map maximum when normalizing attention maps.
pub const ATTENTION_NORM_EPS: f64 = 1e-8;
pub const DEFAULT_ATTENTION_BLOCK: usize = 3;

/// Convex weights `(λ_cls, λ_dice, λ_atn)` of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub dice: f64,
    pub atn: f64,
}

impl LossWeights {
    pub const SIMPLEX_TOL: f64 = 1e-9;

    pub fn new(cls: f64, dice: f64, atn: f64) -> Result<Self> {
        let w = Self { cls, dice, atn };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.cls, self.dice, self.atn];
        if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative, got ({}, {}, {})",
                self.cls, self.dice, self.atn
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > Self::SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "loss weights must sum to 1 (±{}), got ({}, {}, {}) summing to {sum}",
                Self::SIMPLEX_TOL,
                self.cls,
                self.dice,
                self.atn
            )));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    /// `(0.4, 0.1, 0.5)`.
    fn default() -> Self {
        Self {
            cls: 0.4,
            dice: 0.1,
            atn: 0.5,
        }
    }
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, "shape", format!("prediction {a:?} vs ground truth {b:?}")));
    }
    Ok(())
}

fn batch_planes(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [n, rest @ ..] if *n > 0 => Ok((*n, rest.iter().product())),
        _ => Err(Error::shape(op, "N", format!("expected a batch axis, got {shape:?}"))),
    }
}

struct Bce<T> {
    target: Tensor<T>,
}

impl<T: Element> Function<T> for Bce<T> {
    fn name(&self) -> &'static str {
        "bce_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
        let scale = grad[0] / T::of(inputs[0].len() as f64);
        let dp = inputs[0]
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&p, &g)| {
                if p < lo || p > hi {
                    T::zero()
                } else {
                    scale * ((T::one() - g) / (T::one() - p) - g / p)
                }
            })
            .collect();
        vec![Some(dp)]
    }
}

fn bce_value<T: Element>(p: &[T], g: &[T]) -> T {
    let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
    let total: f64 = p
        .iter()
        .zip(g)
        .map(|(&p, &g)| {
            let pc = p.max(lo).min(hi);
            -(g * pc.ln() + (T::one() - g) * (T::one() - pc).ln()).as_f64()
        })
        .sum();
    T::of(total / p.len() as f64)
}

/// Mean binary cross-entropy of probabilities `p` against a binary target.
/// Probabilities are clamped to `[1e-7, 1 − 1e-7]` before the logarithms.
pub fn bce_loss<T: Element>(tape: &mut Tape<T>, p: Var, target: &Tensor<T>) -> Result<Var> {
    check_same("bce_loss", tape.shape(p), target.shape())?;
    let value = bce_value(tape.value(p).data(), target.data());
    Ok(tape.custom(&[p], Tensor::scalar(value), Box::new(Bce { target: target.clone() })))
}

struct SigmoidBce<T> {
    target: Tensor<T>,
}

impl<T: Element> Function<T> for SigmoidBce<T> {
    fn name(&self) -> &'static str {
        "bce_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let scale = grad[0] / T::of(inputs[0].len() as f64);
        let dz = inputs[0]
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&z, &g)| scale * (sigmoid(z) - g))
            .collect();
        vec![Some(dz)]
    }
}

/// BCE of `sigmoid(logits)`. The value uses the clamped probabilities; the
/// gradient is `(σ(z) − g)/N`, which also flows through saturated pixels.
pub fn bce_with_logits<T: Element>(tape: &mut Tape<T>, logits: Var, target: &Tensor<T>) -> Result<Var> {
    check_same("bce_loss", tape.shape(logits), target.shape())?;
    let probs: Vec<T> = tape.value(logits).data().iter().map(|&z| sigmoid(z)).collect();
    let value = bce_value(&probs, target.data());
    Ok(tape.custom(&[logits], Tensor::scalar(value), Box::new(SigmoidBce { target: target.clone() })))
}

struct Dice<T> {
    target: Tensor<T>,
    eps: T,
}

impl<T: Element> Dice<T> {
    /// Per-image `(Σ p·g, Σ(p+g) + ε)`.
    fn terms(&self, p: &[T], batch: usize) -> Vec<(T, T)> {
        let plane = p.len() / batch;
        (0..batch)
            .map(|n| {
                let r = n * plane..(n + 1) * plane;
                let (mut inter, mut total) = (T::zero(), T::zero());
                for (&pi, &gi) in p[r.clone()].iter().zip(&self.target.data()[r]) {
                    inter = inter + pi * gi;
                    total = total + pi + gi;
                }
                (inter, total + self.eps)
            })
            .collect()
    }
}

impl<T: Element> Function<T> for Dice<T> {
    fn name(&self) -> &'static str {
        "dice_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let p = inputs[0].data();
        let batch = inputs[0].shape()[0];
        let plane = p.len() / batch;
        let two = T::of(2.0);
        let scale = grad[0] / T::of(batch as f64);
        let mut dp = vec![T::zero(); p.len()];
        for (n, (inter, denom)) in self.terms(p, batch).into_iter().enumerate() {
            let shared = two * inter / (denom * denom);
            for i in n * plane..(n + 1) * plane {
                dp[i] = scale * (shared - two * self.target.data()[i] / denom);
            }
        }
        vec![Some(dp)]
    }
}

/// Soft Dice loss `1 − 2Σpg / (Σ(p+g) + ε)`, per image, averaged over the batch.
pub fn dice_loss<T: Element>(tape: &mut Tape<T>, p: Var, target: &Tensor<T>, eps: f64) -> Result<Var> {
    check_same("dice_loss", tape.shape(p), target.shape())?;
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("dice smoothing must be positive, got {eps}")));
    }
    let (batch, _) = batch_planes("dice_loss", target.shape())?;
    let op = Dice {
        target: target.clone(),
        eps: T::of(eps),
    };
    let terms = op.terms(tape.value(p).data(), batch);
    let mean = terms
        .iter()
        .map(|&(inter, denom)| (T::one() - T::of(2.0) * inter / denom).as_f64())
        .sum::<f64>()
        / batch as f64;
    Ok(tape.custom(&[p], Tensor::scalar(T::of(mean)), Box::new(op)))
}

struct AttentionMapOp {
    argmax: Vec<usize>,
    /// Per image: maximal channel mean plus the normalization epsilon.
    denom: Vec<f64>,
}

impl<T: Element> Function<T> for AttentionMapOp {
    fn name(&self) -> &'static str {
        "attention_map"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [n, c, h, w] = inputs[0].dims4().expect("rank checked");
        let hw = h * w;
        let inv_c = 1.0 / c as f64;
        let mut df = vec![T::zero(); inputs[0].len()];
        for b in 0..n {
            let a = &out.data()[b * hw..(b + 1) * hw];
            let g = &grad[b * hw..(b + 1) * hw];
            let d = self.denom[b];
            // a_i = m_i / (m_j + eps), j the argmax
            let mut dm: Vec<f64> = g.iter().map(|gi| gi.as_f64() / d).collect();
            let cross: f64 = g.iter().zip(a).map(|(gi, ai)| gi.as_f64() * ai.as_f64()).sum();
            dm[self.argmax[b]] -= cross / d;
            for ch in 0..c {
                let dst = &mut df[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (o, &v) in dst.iter_mut().zip(&dm) {
                    *o = T::of(v * inv_c);
                }
            }
        }
        vec![Some(df)]
    }
}

/// Single-channel importance map from non-negative features: channel mean,
/// divided by the per-image maximum plus `1e-8`. Values lie in `[0, 1]`.
pub fn attention_map<T: Element>(tape: &mut Tape<T>, features: Var) -> Result<Var> {
    let [n, c, h, w] = tape
        .value(features)
        .dims4()
        .map_err(|_| Error::shape("attention_map", "rank", "expected N×C×h×w features"))?;
    if c == 0 {
        return Err(Error::shape("attention_map", "C", "no channels"));
    }
    let hw = h * w;
    let f = tape.value(features).data();
    let inv_c = 1.0 / c as f64;
    let mut out = vec![T::zero(); n * hw];
    let mut argmax = vec![0; n];
    let mut denoms = vec![0.0; n];
    for b in 0..n {
        let mut means = vec![0.0f64; hw];
        for ch in 0..c {
            for (m, &v) in means.iter_mut().zip(&f[(b * c + ch) * hw..(b * c + ch + 1) * hw]) {
                *m += v.as_f64();
            }
        }
        means.iter_mut().for_each(|m| *m *= inv_c);
        let mut j = 0;
        for (i, &m) in means.iter().enumerate() {
            if m > means[j] {
                j = i;
            }
        }
        argmax[b] = j;
        let denom = means[j] + ATTENTION_NORM_EPS;
        denoms[b] = denom;
        for (o, &m) in out[b * hw..(b + 1) * hw].iter_mut().zip(&means) {
            *o = T::of(m / denom);
        }
    }
    let value = Tensor::new([n, 1, h, w], out)?;
    Ok(tape.custom(&[features], value, Box::new(AttentionMapOp { argmax, denom: denoms })))
}

/// Downsamples a binary ground truth (`N×1×H×W`) by two successive 2×2 average pools.
pub fn pool_mask<T: Element>(ground_truth: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = ground_truth.dims4()?;
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            "pool_mask",
            "H/W",
            format!("ground truth {h}×{w} must be divisible by 4"),
        ));
    }
    let mut half = vec![T::zero(); n * c * h * w / 4];
    kernels::avg_pool2x2_forward(n * c, h, w, ground_truth.data(), &mut half);
    let mut quarter = vec![T::zero(); n * c * h * w / 16];
    kernels::avg_pool2x2_forward(n * c, h / 2, w / 2, &half, &mut quarter);
    Tensor::new([n, c, h / 4, w / 4], quarter)
}

/// Per-image centered statistics of the attention correlation.
struct Centered {
    tv: Vec<f64>,
    th: Vec<f64>,
    tm: Vec<f64>,
    nv: f64,
    nh: f64,
    nm: f64,
    s: f64,
}

fn center<T: Element>(x: &[T]) -> Option<Vec<f64>> {
    let (lo, hi) = x.iter().fold((x[0], x[0]), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return None;
    }
    let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / x.len() as f64;
    Some(x.iter().map(|v| v.as_f64() - mean).collect())
}

fn centered<T: Element>(v: &[T], h: &[T], m: &[T]) -> Option<Centered> {
    let (tv, th, tm) = (center(v)?, center(h)?, center(m)?);
    let sq = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>();
    let (nv, nh, nm) = (sq(&tv), sq(&th), sq(&tm));
    if nv == 0.0 || nh == 0.0 || nm == 0.0 {
        return None;
    }
    let s = tv.iter().zip(&th).zip(&tm).map(|((a, b), c)| a * b * c).sum();
    Some(Centered {
        tv,
        th,
        tm,
        nv,
        nh,
        nm,
        s,
    })
}

impl Centered {
    fn loss(&self) -> f64 {
        -self.s / (self.nv * self.nh * self.nm).sqrt()
    }
}

struct AttentionLossOp<T> {
    mask: Tensor<T>,
}

impl<T: Element> Function<T> for AttentionLossOp<T> {
    fn name(&self) -> &'static str {
        "attention_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (av, ah) = (inputs[0].data(), inputs[1].data());
        let batch = inputs[0].shape()[0];
        let plane = av.len() / batch;
        let scale = grad[0].as_f64() / batch as f64;
        let mut dv = vec![T::zero(); av.len()];
        let mut dh = vec![T::zero(); ah.len()];
        for b in 0..batch {
            let r = b * plane..(b + 1) * plane;
            let Some(c) = centered(&av[r.clone()], &ah[r.clone()], &self.mask.data()[r.clone()]) else {
                continue;
            };
            let d = (c.nv * c.nh * c.nm).sqrt();
            // ∂L/∂t_v = −t_h·t_m/D + S·t_v/(D·‖t_v‖²), then remove the mean (centering Jacobian)
            let raw_v: Vec<f64> = (0..plane)
                .map(|i| -c.th[i] * c.tm[i] / d + c.s * c.tv[i] / (d * c.nv))
                .collect();
            let raw_h: Vec<f64> = (0..plane)
                .map(|i| -c.tv[i] * c.tm[i] / d + c.s * c.th[i] / (d * c.nh))
                .collect();
            let mv = raw_v.iter().sum::<f64>() / plane as f64;
            let mh = raw_h.iter().sum::<f64>() / plane as f64;
            for (i, idx) in r.enumerate() {
                dv[idx] = T::of(scale * (raw_v[i] - mv));
                dh[idx] = T::of(scale * (raw_h[i] - mh));
            }
        }
        vec![Some(dv), Some(dh)]
    }
}

/// Attention loss output: the scalar and how many images contributed zero
/// because one of their maps was constant.
#[derive(Clone, Copy, Debug)]
pub struct AttentionLoss {
    pub loss: Var,
    pub degenerate: usize,
}

/// Negative normalized triple correlation of the mean-centered vertical map,
/// horizontal map and pooled mask, averaged over the batch. Images with any
/// constant map contribute 0 with zero gradient.
pub fn attention_loss<T: Element>(tape: &mut Tape<T>, a_v: Var, a_h: Var, mask: &Tensor<T>) -> Result<AttentionLoss> {
    check_same("attention_loss", tape.shape(a_v), tape.shape(a_h))?;
    check_same("attention_loss", tape.shape(a_v), mask.shape())?;
    let (batch, plane) = batch_planes("attention_loss", mask.shape())?;
    if plane == 0 {
        return Err(Error::shape("attention_loss", "H/W", "empty maps"));
    }
    let (v, h, m) = (tape.value(a_v).data(), tape.value(a_h).data(), mask.data());
    let mut total = 0.0;
    let mut degenerate = 0;
    for b in 0..batch {
        let r = b * plane..(b + 1) * plane;
        match centered(&v[r.clone()], &h[r.clone()], &m[r]) {
            Some(c) => total += c.loss(),
            None => degenerate += 1,
        }
    }
    let value = Tensor::scalar(T::of(total / batch as f64));
    let loss = tape.custom(&[a_v, a_h], value, Box::new(AttentionLossOp { mask: mask.clone() }));
    Ok(AttentionLoss { loss, degenerate })
}

/// The weighted objective and its components.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub total: Var,
    pub cls: Var,
    pub dice: Var,
    pub atn: Var,
    pub degenerate: usize,
}

/// Scalar values of a [`LossBreakdown`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub cls: f64,
    pub dice: f64,
    pub atn: f64,
}

impl LossBreakdown {
    pub fn values<T: Element>(&self, tape: &Tape<T>) -> LossValues {
        let get = |v: Var| tape.value(v).data()[0].as_f64();
        LossValues {
            total: get(self.total),
            cls: get(self.cls),
            dice: get(self.dice),
            atn: get(self.atn),
        }
    }
}

/// `λ_cls·BCE + λ_dice·Dice + λ_atn·L_atn`, with the sigmoid applied to `logits`
/// and attention maps derived from the given post-ReLU feature pair.
pub fn total_loss<T: Element>(
    tape: &mut Tape<T>,
    logits: Var,
    ground_truth: &Tensor<T>,
    features: (Var, Var),
    weights: LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let cls = bce_with_logits(tape, logits, ground_truth)?;
    let p = tape.sigmoid(logits);
    let dice = dice_loss(tape, p, ground_truth, DICE_EPS)?;
    let a_v = attention_map(tape, features.0)?;
    let a_h = if features.1 == features.0 {
        a_v
    } else {
        attention_map(tape, features.1)?
    };
    let scale = ground_truth.shape()[2] / tape.shape(a_v)[2];
    let mut mask = ground_truth.clone();
    let mut s = scale;
    while s > 1 {
        let [n, c, h, w] = mask.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("total_loss", "H/W", "ground truth not divisible to feature resolution"));
        }
        let mut half = vec![T::zero(); n * c * h * w / 4];
        kernels::avg_pool2x2_forward(n * c, h, w, mask.data(), &mut half);
        mask = Tensor::new([n, c, h / 2, w / 2], half)?;
        s /= 2;
    }
    let atn = attention_loss(tape, a_v, a_h, &mask)?;
    let total = tape.weighted_sum(&[
        (cls, T::of(weights.cls)),
        (dice, T::of(weights.dice)),
        (atn.loss, T::of(weights.atn)),
    ])?;
    Ok(LossBreakdown {
        total,
        cls,
        dice,
        atn: atn.loss,
        degenerate: atn.degenerate,
    })
}
