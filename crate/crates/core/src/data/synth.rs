//! Seeded generator of small-target segmentation samples.
//!
//! Each image holds one foreground shape (ellipse, fused blob or crescent) whose
//! rasterized area is fitted to a log-uniformly drawn fraction of the image. The
//! shape is drawn brighter than a smoothly textured background, the intensity is
//! Gaussian-blurred (the mask stays crisp), Gaussian noise is added, and the
//! result is quantized to 8 bits. Sample `i` depends only on `(seed, i)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{GrayImage, Sample, SampleMeta};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::metrics::BinaryMask;

/// Smallest foreground the generator will try to fit, in pixels.
pub const MIN_TARGET_PIXELS: f64 = 4.0;
pub const MAX_AREA_FRACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Ellipse,
    FusedBlob,
    Crescent,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Ellipse, ShapeKind::FusedBlob, ShapeKind::Crescent];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::FusedBlob => "fused-blob",
            ShapeKind::Crescent => "crescent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Foreground area as a fraction of the image, `[lo, hi]`.
    pub area_range: (f64, f64),
    pub blur_sigma_range: (f64, f64),
    pub noise_sigma: f64,
    /// Foreground brightness above the background, `[lo, hi]`.
    pub offset_range: (f64, f64),
    /// Relative weights of ellipse, fused blob, crescent.
    pub shape_mix: [f64; 3],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_train: 150,
            n_val: 25,
            n_test: 25,
            area_range: (0.001, 0.02),
            blur_sigma_range: (0.5, 1.5),
            noise_sigma: 0.03,
            offset_range: (0.25, 0.4),
            shape_mix: [1.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_images(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    /// Reads a flat key/value file; missing keys keep their defaults.
    ///
    /// Keys: `height`, `width`, `n_train`, `n_val`, `n_test`, `area_range` (lo, hi),
    /// `blur_sigma_range` (lo, hi), `noise_sigma`, `offset_range` (lo, hi),
    /// `shape_mix` (`ellipse:w, fused-blob:w, crescent:w` or three numbers), `seed`.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut s = Self::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.get(stringify!($field))? {
                    s.$field = v;
                }
            };
        }
        take!(height);
        take!(width);
        take!(n_train);
        take!(n_val);
        take!(n_test);
        take!(noise_sigma);
        take!(seed);
        if let Some(v) = kv.get_pair("area_range")? {
            s.area_range = v;
        }
        if let Some(v) = kv.get_pair("blur_sigma_range")? {
            s.blur_sigma_range = v;
        }
        if let Some(v) = kv.get_pair("offset_range")? {
            s.offset_range = v;
        }
        if let Some(raw) = kv.get::<String>("shape_mix")? {
            s.shape_mix = parse_mix(&raw)?;
        }
        kv.reject_unknown()?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "height = {}\nwidth = {}\nn_train = {}\nn_val = {}\nn_test = {}\narea_range = {}, {}\n\
             blur_sigma_range = {}, {}\nnoise_sigma = {}\noffset_range = {}, {}\n\
             shape_mix = ellipse:{}, fused-blob:{}, crescent:{}\nseed = {}\n",
            self.height,
            self.width,
            self.n_train,
            self.n_val,
            self.n_test,
            self.area_range.0,
            self.area_range.1,
            self.blur_sigma_range.0,
            self.blur_sigma_range.1,
            self.noise_sigma,
            self.offset_range.0,
            self.offset_range.1,
            self.shape_mix[0],
            self.shape_mix[1],
            self.shape_mix[2],
            self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.height == 0 || self.width == 0 || self.height % 32 != 0 || self.width % 32 != 0 {
            return bad(format!(
                "image size {}×{} must be non-zero and divisible by 32",
                self.height, self.width
            ));
        }
        if self.n_images() == 0 {
            return bad("dataset must contain at least one image".into());
        }
        let (lo, hi) = self.area_range;
        if !(lo > 0.0 && lo <= hi && hi <= MAX_AREA_FRACTION) {
            return bad(format!(
                "area fraction range [{lo}, {hi}] must satisfy 0 < lo ≤ hi ≤ {MAX_AREA_FRACTION}"
            ));
        }
        let pixels = (self.height * self.width) as f64;
        if lo * pixels < MIN_TARGET_PIXELS {
            return bad(format!(
                "infeasible area fraction: lo = {lo} gives {:.2} foreground pixels on {}×{}, need at least {MIN_TARGET_PIXELS}",
                lo * pixels,
                self.height,
                self.width
            ));
        }
        let (b0, b1) = self.blur_sigma_range;
        if !(b0 >= 0.0 && b0 <= b1 && b1.is_finite()) {
            return bad(format!("blur sigma range [{b0}, {b1}] must satisfy 0 ≤ lo ≤ hi"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma must be ≥ 0, got {}", self.noise_sigma));
        }
        let (o0, o1) = self.offset_range;
        if !(o0 > 0.0 && o0 <= o1 && o1 <= 0.6) {
            return bad(format!("intensity offset range [{o0}, {o1}] must satisfy 0 < lo ≤ hi ≤ 0.6"));
        }
        if self.shape_mix.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.shape_mix.iter().sum::<f64>() <= 0.0 {
            return bad(format!("shape mix {:?} needs non-negative weights with a positive sum", self.shape_mix));
        }
        Ok(())
    }
}

fn parse_mix(raw: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("shape_mix needs three entries, got '{raw}'")));
    }
    let mut mix = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        let (slot, value) = match p.split_once(':') {
            Some((name, v)) => (
                ShapeKind::parse(name.trim())
                    .ok_or_else(|| Error::Config(format!("unknown shape '{name}'")))? as usize,
                v.trim(),
            ),
            None => (i, *p),
        };
        mix[slot] = value
            .parse()
            .map_err(|_| Error::Config(format!("cannot parse shape weight '{value}'")))?;
    }
    Ok(mix)
}

/// Random shape in unit-scale coordinates; `contains(u, v)` with `(u, v)` offsets from the centre.
#[derive(Clone, Debug)]
enum Outline {
    Ellipse { ratio: f64, cos: f64, sin: f64 },
    Blob { lobes: Vec<(f64, f64, f64)> },
    Crescent { bite: (f64, f64), bite_radius: f64 },
}

impl Outline {
    fn random(kind: ShapeKind, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            ShapeKind::Ellipse => {
                let theta = rng.random_range(0.0..PI);
                Outline::Ellipse {
                    ratio: rng.random_range(0.45..1.0),
                    cos: theta.cos(),
                    sin: theta.sin(),
                }
            }
            ShapeKind::FusedBlob => {
                let n = rng.random_range(2..=3);
                let lobes = (0..n)
                    .map(|_| {
                        let a = rng.random_range(0.0..2.0 * PI);
                        let d = rng.random_range(0.3..0.8);
                        (d * a.cos(), d * a.sin(), rng.random_range(0.55..1.0))
                    })
                    .collect();
                Outline::Blob { lobes }
            }
            ShapeKind::Crescent => {
                let a = rng.random_range(0.0..2.0 * PI);
                let d = rng.random_range(0.35..0.55);
                Outline::Crescent {
                    bite: (d * a.cos(), d * a.sin()),
                    bite_radius: rng.random_range(0.7..0.85),
                }
            }
        }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        match self {
            Outline::Ellipse { ratio, cos, sin } => {
                let p = u * cos + v * sin;
                let q = (-u * sin + v * cos) / ratio;
                p * p + q * q <= 1.0
            }
            Outline::Blob { lobes } => lobes
                .iter()
                .any(|&(cu, cv, r)| (u - cu).powi(2) + (v - cv).powi(2) <= r * r),
            Outline::Crescent { bite, bite_radius } => {
                u * u + v * v <= 1.0 && (u - bite.0).powi(2) + (v - bite.1).powi(2) > bite_radius * bite_radius
            }
        }
    }
}

fn rasterize(outline: &Outline, h: usize, w: usize, centre: (f64, f64), scale: f64) -> BinaryMask {
    let mut m = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let u = (y as f64 - centre.0) / scale;
            let v = (x as f64 - centre.1) / scale;
            if outline.contains(u, v) {
                m.set(y, x, true);
            }
        }
    }
    m
}

/// Scale whose rasterized area is closest to `target` pixels (bisection).
fn fit_scale(outline: &Outline, h: usize, w: usize, centre: (f64, f64), target: f64) -> BinaryMask {
    let (mut lo, mut hi) = (0.0f64, (h.max(w)) as f64);
    let mut best = (f64::INFINITY, BinaryMask::zeros(h, w));
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        let m = rasterize(outline, h, w, centre, mid);
        let area = m.area() as f64;
        let err = (area - target).abs();
        if err < best.0 {
            best = (err, m);
        }
        if area < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.1
}

fn gaussian_blur(pixels: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return pixels.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let tap = |n: usize, i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .map(|d| kernel[(d + r) as usize] * pixels[y * w + tap(w, x as isize + d)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|d| kernel[(d + r) as usize] * tmp[tap(h, y as isize + d) * w + x])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

/// Per-sample generator stream: the spec seed selects the key, the index the stream.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates sample `index` of `spec`.
pub fn generate_one(spec: &SynthSpec, index: usize) -> Result<Sample> {
    let (h, w) = (spec.height, spec.width);
    let mut rng = sample_rng(spec.seed, index);

    let total: f64 = spec.shape_mix.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut kind = ShapeKind::Ellipse;
    for (k, &weight) in ShapeKind::ALL.iter().zip(&spec.shape_mix) {
        if weight > 0.0 && pick < weight {
            kind = *k;
            break;
        }
        pick -= weight;
        if weight > 0.0 {
            kind = *k;
        }
    }

    let (lo, hi) = spec.area_range;
    let fraction = if hi > lo {
        (rng.random_range(lo.ln()..=hi.ln())).exp()
    } else {
        lo
    };
    let outline = Outline::random(kind, &mut rng);
    let centre = (
        rng.random_range(0.3..0.7) * (h - 1) as f64,
        rng.random_range(0.3..0.7) * (w - 1) as f64,
    );
    let mask = fit_scale(&outline, h, w, centre, fraction * (h * w) as f64);

    let base = rng.random_range(0.2..0.35);
    let offset = rng.random_range(spec.offset_range.0..=spec.offset_range.1);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.02..0.06),
                rng.random_range(0.05..0.25),
                rng.random_range(0.05..0.25),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut intensity: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let texture: f64 = waves.iter().map(|&(a, fy, fx, ph)| a * (fy * y + fx * x + ph).sin()).sum();
            base + texture + offset * f64::from(mask.pixels()[i])
        })
        .collect();

    let blur = if spec.blur_sigma_range.1 > spec.blur_sigma_range.0 {
        rng.random_range(spec.blur_sigma_range.0..=spec.blur_sigma_range.1)
    } else {
        spec.blur_sigma_range.0
    };
    intensity = gaussian_blur(&intensity, h, w, blur);
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        for v in &mut intensity {
            *v += noise.sample(&mut rng);
        }
    }
    let image = GrayImage::new(h, w, intensity)?.quantized();

    Ok(Sample {
        id: format!("{index:04}"),
        image,
        mask,
        meta: Some(SampleMeta {
            shape: kind,
            target_fraction: fraction,
            blur_sigma: blur,
            intensity_offset: offset,
        }),
    })
}

/// Generates all `spec.n_images()` samples in index order.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..spec.n_images()).map(|i| generate_one(spec, i)).collect()
}
