//! Zoom / rotate / flip augmentation with fixed output size.
//!
//! The image is resampled bilinearly and the mask by nearest neighbour, so masks
//! stay binary. A zoomed-out image is centred on a zero canvas; a zoomed-in one
//! is cropped at a random offset. Rotation is about the image centre and uncovered
//! pixels are zero. The horizontal flip is applied last.

use rand::Rng;

use crate::data::{GrayImage, Sample};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentSpec {
    pub zoom_range: (f64, f64),
    /// Degrees.
    pub rotation_range: (f64, f64),
    pub flip_probability: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            zoom_range: (0.5, 1.75),
            rotation_range: (-30.0, 30.0),
            flip_probability: 0.5,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let (z0, z1) = self.zoom_range;
        let (r0, r1) = self.rotation_range;
        if !(z0 > 0.0 && z0 <= z1 && z1.is_finite()) {
            return Err(Error::InvalidArgument(format!("zoom range [{z0}, {z1}] must be positive and ordered")));
        }
        if !(r0 <= r1 && r0.is_finite() && r1.is_finite()) {
            return Err(Error::InvalidArgument(format!("rotation range [{r0}, {r1}] must be ordered")));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!(
                "flip probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> AugmentParams {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        AugmentParams {
            zoom: uniform(rng, self.zoom_range),
            rotation_deg: uniform(rng, self.rotation_range),
            flip: rng.random_bool(self.flip_probability),
            crop: (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
        }
    }
}

/// One concrete transform. `crop` picks the crop window position (as a fraction
/// of the available slack) when `zoom > 1`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct AugmentParams {
    pub zoom: f64,
    pub rotation_deg: f64,
    pub flip: bool,
    pub crop: (f64, f64),
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        zoom: 1.0,
        rotation_deg: 0.0,
        flip: false,
        crop: (0.0, 0.0),
    };
}

/// Maps an output pixel to continuous source coordinates.
struct InverseMap {
    h: usize,
    w: usize,
    zoom: f64,
    offset: (f64, f64),
    cos: f64,
    sin: f64,
    flip: bool,
}

impl InverseMap {
    fn new(h: usize, w: usize, p: &AugmentParams) -> Self {
        let place = |n: usize, frac: f64| {
            let scaled = (n as f64 * p.zoom).round();
            if scaled <= n as f64 {
                ((n as f64 - scaled) / 2.0).floor()
            } else {
                -(frac * (scaled - n as f64 + 1.0)).floor().min(scaled - n as f64)
            }
        };
        let theta = p.rotation_deg.to_radians();
        Self {
            h,
            w,
            zoom: p.zoom,
            offset: (place(h, p.crop.0), place(w, p.crop.1)),
            cos: theta.cos(),
            sin: theta.sin(),
            flip: p.flip,
        }
    }

    fn source(&self, y: usize, x: usize) -> (f64, f64) {
        let x = if self.flip { self.w - 1 - x } else { x };
        let (cy, cx) = ((self.h as f64 - 1.0) / 2.0, (self.w as f64 - 1.0) / 2.0);
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let ry = self.cos * dy - self.sin * dx + cy;
        let rx = self.sin * dy + self.cos * dx + cx;
        let sy = (ry - self.offset.0 + 0.5) / self.zoom - 0.5;
        let sx = (rx - self.offset.1 + 0.5) / self.zoom - 0.5;
        (sy, sx)
    }
}

fn bilinear(img: &GrayImage, sy: f64, sx: f64) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h || x >= w {
            0.0
        } else {
            img.get(y as usize, x as usize)
        }
    };
    let top = if fx == 0.0 { at(y0, x0) } else { (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1) };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 { at(y0 + 1, x0) } else { (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1) };
    (1.0 - fy) * top + fy * bottom
}

fn nearest(mask: &BinaryMask, sy: f64, sx: f64) -> bool {
    let (y, x) = (sy.round(), sx.round());
    y >= 0.0 && x >= 0.0 && (y as usize) < mask.height() && (x as usize) < mask.width() && mask.get(y as usize, x as usize)
}

/// Applies one transform to a sample; output size equals input size.
pub fn apply(sample: &Sample, params: &AugmentParams) -> Result<Sample> {
    let (h, w) = (sample.image.height(), sample.image.width());
    if (sample.mask.height(), sample.mask.width()) != (h, w) {
        return Err(Error::InvalidArgument(format!(
            "image {h}×{w} and mask {}×{} differ in size",
            sample.mask.height(),
            sample.mask.width()
        )));
    }
    if !(params.zoom > 0.0 && params.zoom.is_finite()) {
        return Err(Error::InvalidArgument(format!("zoom must be positive, got {}", params.zoom)));
    }
    let map = InverseMap::new(h, w, params);
    let mut pixels = Vec::with_capacity(h * w);
    let mut mask = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = map.source(y, x);
            pixels.push(bilinear(&sample.image, sy, sx));
            mask.set(y, x, nearest(&sample.mask, sy, sx));
        }
    }
    Ok(Sample {
        id: sample.id.clone(),
        image: GrayImage::new(h, w, pixels)?,
        mask,
        meta: sample.meta.clone(),
    })
}
