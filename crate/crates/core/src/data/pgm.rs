//! Binary PGM (P5) reading and writing, 8-bit only.

use std::path::Path;

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// Raw decoded P5 raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

impl Pgm {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses a P5 file. `path` is only used in error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |offset: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            offset,
            msg,
        };
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(err(0, "missing P5 magic".into()));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
            // whitespace and comments before each header field
            let skipped_from = pos;
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            if pos == skipped_from {
                return Err(err(pos, format!("expected whitespace before {name}")));
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(err(pos, format!("expected decimal {name}")));
            }
            let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
            fields[i] = text
                .parse()
                .map_err(|_| err(start, format!("{name} '{text}' out of range")))?;
        }
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err(err(pos, format!("empty raster {width}×{height}")));
        }
        if !(1..=255).contains(&maxval) {
            return Err(err(pos, format!("maxval {maxval} unsupported (only 8-bit, 1..=255)")));
        }
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(err(pos, "expected single whitespace after maxval".into())),
        }
        let need = width
            .checked_mul(height)
            .ok_or_else(|| err(pos, "raster size overflow".into()))?;
        let have = bytes.len() - pos;
        if have < need {
            return Err(err(bytes.len(), format!("truncated payload: expected {need} bytes, found {have}")));
        }
        if have > need {
            return Err(err(pos + need, format!("{} trailing bytes after payload", have - need)));
        }
        let pixels = bytes[pos..].to_vec();
        if let Some(i) = pixels.iter().position(|&p| p as usize > maxval) {
            return Err(err(pos + i, format!("sample {} exceeds maxval {maxval}", pixels[i])));
        }
        Ok(Self {
            width,
            height,
            maxval: maxval as u16,
            pixels,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a grayscale image, scaling samples to `[0, 1]` by `maxval`.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let pgm = Pgm::read(path)?;
    let scale = f64::from(pgm.maxval);
    GrayImage::new(
        pgm.height,
        pgm.width,
        pgm.pixels.iter().map(|&p| f64::from(p) / scale).collect(),
    )
}

/// Writes an image quantized to 8 bits (`round(255·v)`, clamped to `[0, 1]` first).
pub fn write_image(path: &Path, image: &GrayImage) -> Result<()> {
    Pgm {
        width: image.width(),
        height: image.height(),
        maxval: 255,
        pixels: image.to_bytes(),
    }
    .write(path)
}

/// Reads a mask stored as {0, 255}; any other value is rejected.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let pgm = Pgm::read(path)?;
    let header_len = pgm.encode().len() - pgm.pixels.len();
    let mut values = Vec::with_capacity(pgm.pixels.len());
    for (i, &p) in pgm.pixels.iter().enumerate() {
        match p {
            0 => values.push(0),
            255 => values.push(1),
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: header_len + i,
                    msg: format!("mask sample {other} is neither 0 nor 255"),
                })
            }
        }
    }
    BinaryMask::new(pgm.height, pgm.width, values)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    Pgm {
        width: mask.width(),
        height: mask.height(),
        maxval: 255,
        pixels: mask.pixels().iter().map(|&p| p * 255).collect(),
    }
    .write(path)
}
