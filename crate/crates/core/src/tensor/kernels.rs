//! Forward and backward kernels on raw `N×C×H×W` buffers.
//!
//! These are shape-checked by the callers in [`crate::autodiff`]; here every
//! function assumes consistent extents.

use super::Element;

/// Geometry of a stride-1 zero-padded 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    /// Output `(H', W')`, or `None` when non-positive.
    pub fn output_size(&self) -> Option<(usize, usize)> {
        let h = (self.height + 2 * self.padding.0).checked_sub(self.kernel.0)? + 1;
        let w = (self.width + 2 * self.padding.1).checked_sub(self.kernel.1)? + 1;
        Some((h, w))
    }

    fn out_hw(&self) -> (usize, usize) {
        self.output_size().expect("validated conv geometry")
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    /// 1×1 kernels without padding read the input plane directly.
    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.padding == (0, 0)
    }
}

/// Unfolds one image (`C×H×W`) into a `(C·Kh·Kw) × (H'·W')` column matrix.
fn im2col<T: Element>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let (kh, kw) = g.kernel;
    let (ph, pw) = g.padding;
    let (h, w) = (g.height, g.width);
    for c in 0..g.in_channels {
        let plane = &image[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((c * kh + i) * kw + j) * ho * wo..][..ho * wo];
                // valid ox satisfy 0 <= ox + j - pw < w
                let x_lo = pw.saturating_sub(j).min(wo);
                let x_hi = (w + pw).saturating_sub(j).min(wo).max(x_lo);
                for oy in 0..ho {
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    let iy = oy + i;
                    if iy < ph || iy - ph >= h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(iy - ph) * w..(iy - ph + 1) * w];
                    dst[..x_lo].fill(T::zero());
                    dst[x_hi..].fill(T::zero());
                    if x_hi > x_lo {
                        let sx = x_lo + j - pw;
                        dst[x_lo..x_hi].copy_from_slice(&src[sx..sx + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back onto one image, accumulating overlaps.
fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let (kh, kw) = g.kernel;
    let (ph, pw) = g.padding;
    let (h, w) = (g.height, g.width);
    for c in 0..g.in_channels {
        let plane = &mut image[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((c * kh + i) * kw + j) * ho * wo..][..ho * wo];
                let x_lo = pw.saturating_sub(j).min(wo);
                let x_hi = (w + pw).saturating_sub(j).min(wo).max(x_lo);
                if x_hi == x_lo {
                    continue;
                }
                for oy in 0..ho {
                    let iy = oy + i;
                    if iy < ph || iy - ph >= h {
                        continue;
                    }
                    let sx = x_lo + j - pw;
                    let dst = &mut plane[(iy - ph) * w + sx..][..x_hi - x_lo];
                    for (d, &s) in dst.iter_mut().zip(&row[oy * wo + x_lo..oy * wo + x_hi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// `out = conv(input, weight) + bias`, cross-correlation with zero padding.
pub fn conv2d_forward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let (ho, wo) = g.out_hw();
    let plane_in = g.in_channels * g.height * g.width;
    let plane_out = g.out_channels * ho * wo;
    let k = g.patch_len();
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ho * wo] };
    for n in 0..g.batch {
        let image = &input[n * plane_in..(n + 1) * plane_in];
        let dst = &mut out[n * plane_out..(n + 1) * plane_out];
        match bias {
            Some(b) => {
                for (o, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                    chunk.fill(b[o]);
                }
            }
            None => dst.fill(T::zero()),
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(g, image, &mut cols);
            &cols
        };
        T::gemm(
            g.out_channels,
            k,
            ho * wo,
            T::one(),
            weight,
            (k, 1),
            cols_ref,
            (ho * wo, 1),
            T::one(),
            dst,
            (ho * wo, 1),
        );
    }
}

/// Accumulates gradients of a convolution into whichever buffers are given.
pub fn conv2d_backward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
    mut grad_bias: Option<&mut [T]>,
) {
    let (ho, wo) = g.out_hw();
    let plane_in = g.in_channels * g.height * g.width;
    let plane_out = g.out_channels * ho * wo;
    let k = g.patch_len();
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * ho * wo] };
    for n in 0..g.batch {
        let image = &input[n * plane_in..(n + 1) * plane_in];
        let dy = &grad_out[n * plane_out..(n + 1) * plane_out];
        if let Some(db) = grad_bias.as_deref_mut() {
            for (o, chunk) in dy.chunks(ho * wo).enumerate() {
                db[o] = db[o] + chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = grad_weight.as_deref_mut() {
            let cols_ref: &[T] = if pointwise {
                image
            } else {
                im2col(g, image, &mut cols);
                &cols
            };
            // dW[o, p] += Σ_q dY[o, q] · cols[p, q]
            T::gemm(
                g.out_channels,
                ho * wo,
                k,
                T::one(),
                dy,
                (ho * wo, 1),
                cols_ref,
                (1, ho * wo),
                T::one(),
                dw,
                (k, 1),
            );
        }
        if let Some(dx) = grad_input.as_deref_mut() {
            let dx = &mut dx[n * plane_in..(n + 1) * plane_in];
            if pointwise {
                T::gemm(
                    k,
                    g.out_channels,
                    ho * wo,
                    T::one(),
                    weight,
                    (1, k),
                    dy,
                    (ho * wo, 1),
                    T::one(),
                    dx,
                    (ho * wo, 1),
                );
            } else {
                // dcols = Wᵀ · dY, then fold back
                T::gemm(
                    k,
                    g.out_channels,
                    ho * wo,
                    T::one(),
                    weight,
                    (1, k),
                    dy,
                    (ho * wo, 1),
                    T::zero(),
                    &mut cols,
                    (ho * wo, 1),
                );
                col2im(g, &cols, dx);
            }
        }
    }
}

/// 2×2/stride-2 max pooling over `planes` planes of `h×w`.
/// Returns flat argmax indices into `input`; ties keep the first element in scan order.
pub fn max_pool2x2_forward<T: Element>(
    planes: usize,
    h: usize,
    w: usize,
    input: &[T],
    out: &mut [T],
) -> Vec<u32> {
    let (ho, wo) = (h / 2, w / 2);
    let mut argmax = vec![0u32; planes * ho * wo];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                out[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
    argmax
}

pub fn avg_pool2x2_forward<T: Element>(planes: usize, h: usize, w: usize, input: &[T], out: &mut [T]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                out[(p * ho + oy) * wo + ox] =
                    (input[top] + input[top + 1] + input[top + w] + input[top + w + 1]) * quarter;
            }
        }
    }
}

pub fn avg_pool2x2_backward<T: Element>(planes: usize, h: usize, w: usize, grad_out: &[T], grad_in: &mut [T]) {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let g = grad_out[(p * ho + oy) * wo + ox] * quarter;
                let top = base + 2 * oy * w + 2 * ox;
                for idx in [top, top + 1, top + w, top + w + 1] {
                    grad_in[idx] = grad_in[idx] + g;
                }
            }
        }
    }
}

/// Source taps for one output index of a 2× half-pixel bilinear resample.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

fn upsample_taps<T: Element>(len: usize) -> Vec<Tap<T>> {
    (0..2 * len)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            Tap {
                lo,
                hi,
                frac: T::of(src - lo as f64),
            }
        })
        .collect()
}

pub fn upsample2x_forward<T: Element>(planes: usize, h: usize, w: usize, input: &[T], out: &mut [T]) {
    let ty = upsample_taps::<T>(h);
    let tx = upsample_taps::<T>(w);
    let (ho, wo) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, y) in ty.iter().enumerate() {
            let r0 = &src[y.lo * w..(y.lo + 1) * w];
            let r1 = &src[y.hi * w..(y.hi + 1) * w];
            for (ox, x) in tx.iter().enumerate() {
                let top = r0[x.lo] + (r0[x.hi] - r0[x.lo]) * x.frac;
                let bottom = r1[x.lo] + (r1[x.hi] - r1[x.lo]) * x.frac;
                dst[oy * wo + ox] = top + (bottom - top) * y.frac;
            }
        }
    }
}

pub fn upsample2x_backward<T: Element>(planes: usize, h: usize, w: usize, grad_out: &[T], grad_in: &mut [T]) {
    let ty = upsample_taps::<T>(h);
    let tx = upsample_taps::<T>(w);
    let (ho, wo) = (2 * h, 2 * w);
    let one = T::one();
    for p in 0..planes {
        let dy = &grad_out[p * ho * wo..(p + 1) * ho * wo];
        let dx = &mut grad_in[p * h * w..(p + 1) * h * w];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let g = dy[oy * wo + ox];
                let gy0 = g * (one - y.frac);
                let gy1 = g * y.frac;
                dx[y.lo * w + x.lo] = dx[y.lo * w + x.lo] + gy0 * (one - x.frac);
                dx[y.lo * w + x.hi] = dx[y.lo * w + x.hi] + gy0 * x.frac;
                dx[y.hi * w + x.lo] = dx[y.hi * w + x.lo] + gy1 * (one - x.frac);
                dx[y.hi * w + x.hi] = dx[y.hi * w + x.hi] + gy1 * x.frac;
            }
        }
    }
}

/// Per-channel batch statistics over N, H, W: `(mean, biased variance)`.
///
/// Accumulates in 64-bit regardless of `T`.
pub fn channel_stats<T: Element>(dims: [usize; 4], input: &[T]) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += input[(b * c + ch) * hw..][..hw].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = s / count;
        let mut sq = 0.0;
        for b in 0..n {
            sq += input[(b * c + ch) * hw..][..hw]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    (mean, var)
}

/// `y = γ·(x − mean)·inv_std + β`; also writes the normalized values into `xhat`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_apply<T: Element>(
    dims: [usize; 4],
    input: &[T],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
    out: &mut [T],
    mut xhat: Option<&mut [T]>,
) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (m, s, g, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in off..off + hw {
                let xn = (input[i] - m) * s;
                if let Some(xh) = xhat.as_deref_mut() {
                    xh[i] = xn;
                }
                out[i] = g * xn + be;
            }
        }
    }
}

/// Gradients of training-mode batch norm. `grad_input`, `grad_gamma`, `grad_beta` accumulate.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train_backward<T: Element>(
    dims: [usize; 4],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_gamma: Option<&mut [T]>,
    grad_beta: Option<&mut [T]>,
) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let count = T::of((n * hw) as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let mut s0 = T::zero();
            let mut s1 = T::zero();
            for i in off..off + hw {
                s0 = s0 + grad_out[i];
                s1 = s1 + grad_out[i] * xhat[i];
            }
            sum_dy[ch] = sum_dy[ch] + s0;
            sum_dy_xhat[ch] = sum_dy_xhat[ch] + s1;
        }
    }
    if let Some(gg) = grad_gamma {
        for ch in 0..c {
            gg[ch] = gg[ch] + sum_dy_xhat[ch];
        }
    }
    if let Some(gb) = grad_beta {
        for ch in 0..c {
            gb[ch] = gb[ch] + sum_dy[ch];
        }
    }
    if let Some(dx) = grad_input {
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let scale = gamma[ch] * inv_std[ch] / count;
                let (s0, s1) = (sum_dy[ch], sum_dy_xhat[ch]);
                for i in off..off + hw {
                    dx[i] = dx[i] + scale * (count * grad_out[i] - s0 - xhat[i] * s1);
                }
            }
        }
    }
}
