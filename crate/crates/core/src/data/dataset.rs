//! On-disk dataset directories.
//!
//! ```text
//! <root>/images/NNNN.pgm   8-bit grayscale image
//! <root>/masks/NNNN.pgm    mask, values {0, 255}
//! <root>/manifest          text, see below
//! ```
//!
//! Manifest, version 1 (whitespace-separated tokens, one record per line):
//!
//! ```text
//! crosslink-dataset 1
//! size <height> <width>
//! spec: <key> = <value>          (zero or more; generator settings, same keys as the spec file)
//! cases <count>
//! <id> <split> <shape> <target_fraction> <blur_sigma> <intensity_offset>
//! ```
//!
//! `split` is `train`, `val` or `test`. The last four fields are `-` for
//! cases without generator metadata.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::pgm::{read_image, read_mask, write_image, write_mask};
use crate::data::synth::{generate, ShapeKind, SynthSpec};
use crate::data::{Sample, SampleMeta};
use crate::error::{Error, Result};
use crate::kv::KvFile;

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST_MAGIC: &str = "crosslink-dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub spec: Option<SynthSpec>,
    pub cases: Vec<(Split, Sample)>,
}

impl Dataset {
    /// Generates a dataset; the first `n_train` samples are train, then val, then test.
    pub fn synthesize(spec: &SynthSpec) -> Result<Self> {
        let samples = generate(spec)?;
        let cases = samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let split = if i < spec.n_train {
                    Split::Train
                } else if i < spec.n_train + spec.n_val {
                    Split::Val
                } else {
                    Split::Test
                };
                (split, s)
            })
            .collect();
        Ok(Self {
            height: spec.height,
            width: spec.width,
            spec: Some(spec.clone()),
            cases,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.cases.iter().filter(|(s, _)| *s == split).map(|(_, x)| x).collect()
    }

    pub fn manifest(&self) -> String {
        let mut out = format!("{MANIFEST_MAGIC} {MANIFEST_VERSION}\nsize {} {}\n", self.height, self.width);
        if let Some(spec) = &self.spec {
            for line in spec.to_kv().lines() {
                let _ = writeln!(out, "spec: {line}");
            }
        }
        let _ = writeln!(out, "cases {}", self.cases.len());
        for (split, s) in &self.cases {
            match &s.meta {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{} {} {} {} {} {}",
                        s.id,
                        split.name(),
                        m.shape.name(),
                        m.target_fraction,
                        m.blur_sigma,
                        m.intensity_offset
                    );
                }
                None => {
                    let _ = writeln!(out, "{} {} - - - -", s.id, split.name());
                }
            }
        }
        out
    }

    /// Writes the directory. An existing non-empty directory is rejected unless `force`.
    pub fn write(&self, root: &Path, force: bool) -> Result<()> {
        if root.exists() {
            let non_empty = std::fs::read_dir(root)
                .map_err(|e| Error::io(root, e))?
                .next()
                .is_some();
            if non_empty && !force {
                return Err(Error::InvalidArgument(format!(
                    "output directory {} exists and is not empty (use --force to overwrite)",
                    root.display()
                )));
            }
            if non_empty {
                for sub in ["images", "masks"] {
                    let p = root.join(sub);
                    if p.exists() {
                        std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                    }
                }
            }
        }
        for sub in ["images", "masks"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for (_, s) in &self.cases {
            write_image(&image_path(root, &s.id), &s.image)?;
            write_mask(&mask_path(root, &s.id), &s.mask)?;
        }
        let manifest = root.join("manifest");
        std::fs::write(&manifest, self.manifest()).map_err(|e| Error::io(&manifest, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |line: usize, msg: String| Error::Config(format!("{}:{}: {msg}", path.display(), line + 1));
        let mut lines = text.lines().enumerate();

        let (i, header) = lines.next().ok_or_else(|| bad(0, "empty manifest".into()))?;
        let version = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [MANIFEST_MAGIC, v] => v.parse::<u32>().map_err(|_| bad(i, format!("bad version '{v}'")))?,
            _ => return Err(bad(i, format!("expected '{MANIFEST_MAGIC} <version>'"))),
        };
        if version != MANIFEST_VERSION {
            return Err(bad(i, format!("unsupported manifest version {version}")));
        }
        let (i, size) = lines.next().ok_or_else(|| bad(1, "missing size line".into()))?;
        let (height, width) = match size.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["size", h, w] => (
                h.parse::<usize>().map_err(|_| bad(i, "bad height".into()))?,
                w.parse::<usize>().map_err(|_| bad(i, "bad width".into()))?,
            ),
            _ => return Err(bad(i, "expected 'size <height> <width>'".into())),
        };

        let mut spec_text = String::new();
        let expected = loop {
            let (i, line) = lines.next().ok_or_else(|| bad(i, "missing 'cases' line".into()))?;
            if let Some(rest) = line.strip_prefix("spec:") {
                spec_text.push_str(rest.trim());
                spec_text.push('\n');
            } else if let Some(n) = line.strip_prefix("cases ") {
                break n.trim().parse::<usize>().map_err(|_| bad(i, "bad case count".into()))?;
            } else {
                return Err(bad(i, format!("unexpected line '{line}'")));
            }
        };
        let spec = if spec_text.is_empty() {
            None
        } else {
            Some(SynthSpec::from_kv(&KvFile::parse(&spec_text)?)?)
        };

        let mut cases = Vec::with_capacity(expected);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad(i, format!("expected 6 fields, got {}", f.len())));
            }
            let split = Split::parse(f[1]).ok_or_else(|| bad(i, format!("unknown split '{}'", f[1])))?;
            let meta = if f[2] == "-" {
                None
            } else {
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i, format!("bad number '{s}'")));
                Some(SampleMeta {
                    shape: ShapeKind::parse(f[2]).ok_or_else(|| bad(i, format!("unknown shape '{}'", f[2])))?,
                    target_fraction: num(f[3])?,
                    blur_sigma: num(f[4])?,
                    intensity_offset: num(f[5])?,
                })
            };
            let id = f[0].to_string();
            let image = read_image(&image_path(root, &id))?;
            let mask = read_mask(&mask_path(root, &id))?;
            for (what, h, w) in [("image", image.height(), image.width()), ("mask", mask.height(), mask.width())] {
                if (h, w) != (height, width) {
                    return Err(bad(i, format!("{what} {id} is {h}×{w}, manifest says {height}×{width}")));
                }
            }
            cases.push((split, Sample { id, image, mask, meta }));
        }
        if cases.len() != expected {
            return Err(Error::Config(format!(
                "{}: manifest declares {expected} cases, lists {}",
                path.display(),
                cases.len()
            )));
        }
        Ok(Self {
            height,
            width,
            spec,
            cases,
        })
    }
}

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(format!("{id}.pgm"))
}

pub fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join("masks").join(format!("{id}.pgm"))
}
