//! Declarative description of the encoder/decoder blocks.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A rectangular kernel with the padding that keeps stride-1 outputs the input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelSpec {
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
}

impl KernelSpec {
    pub const fn new(kernel: (usize, usize), padding: (usize, usize)) -> Self {
        Self { kernel, padding }
    }

    pub fn transposed(self) -> Self {
        Self {
            kernel: (self.kernel.1, self.kernel.0),
            padding: (self.padding.1, self.padding.0),
        }
    }

    pub fn preserves_size(self) -> bool {
        self.kernel.0 == 2 * self.padding.0 + 1 && self.kernel.1 == 2 * self.padding.1 + 1
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{})/({},{})",
            self.kernel.0, self.kernel.1, self.padding.0, self.padding.1
        )
    }
}

pub const VERTICAL_PATHS: [KernelSpec; 3] = [
    KernelSpec::new((3, 1), (1, 0)),
    KernelSpec::new((3, 3), (1, 1)),
    KernelSpec::new((5, 3), (2, 1)),
];

pub const HORIZONTAL_PATHS: [KernelSpec; 3] = [
    KernelSpec::new((1, 3), (0, 1)),
    KernelSpec::new((3, 3), (1, 1)),
    KernelSpec::new((3, 5), (1, 2)),
];

pub const SQUARE_PATHS: [KernelSpec; 3] = [
    KernelSpec::new((3, 3), (1, 1)),
    KernelSpec::new((5, 5), (2, 2)),
    KernelSpec::new((1, 1), (0, 0)),
];

/// Decoder convolutions.
pub const UP_KERNEL: KernelSpec = KernelSpec::new((3, 3), (1, 1));

pub const POINTWISE: KernelSpec = KernelSpec::new((1, 1), (0, 0));

/// Number of encoder stages; inputs must be divisible by `2^DEPTH`.
pub const DEPTH: usize = 5;

/// Default width of the first encoder stage.
pub const DEFAULT_BASE_WIDTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum NetworkVariant {
    Crosslink,
    SquareCrosslink,
    VerCrosslink,
    HorCrosslink,
    Double2SingleNet,
}

impl NetworkVariant {
    pub const ALL: [NetworkVariant; 5] = [
        NetworkVariant::Crosslink,
        NetworkVariant::SquareCrosslink,
        NetworkVariant::VerCrosslink,
        NetworkVariant::HorCrosslink,
        NetworkVariant::Double2SingleNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetworkVariant::Crosslink => "Crosslink",
            NetworkVariant::SquareCrosslink => "SquareCrosslink",
            NetworkVariant::VerCrosslink => "VerCrosslink",
            NetworkVariant::HorCrosslink => "HorCrosslink",
            NetworkVariant::Double2SingleNet => "Double2SingleNet",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            NetworkVariant::Crosslink => 0,
            NetworkVariant::SquareCrosslink => 1,
            NetworkVariant::VerCrosslink => 2,
            NetworkVariant::HorCrosslink => 3,
            NetworkVariant::Double2SingleNet => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn is_double_branch(self) -> bool {
        matches!(self, NetworkVariant::Crosslink | NetworkVariant::SquareCrosslink)
    }
}

impl fmt::Display for NetworkVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetworkVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Self::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key || (key == "crosslinknet" && *v == NetworkVariant::Crosslink))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown variant '{s}' (expected one of Crosslink, SquareCrosslink, VerCrosslink, HorCrosslink, Double2SingleNet)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Vertical,
    Horizontal,
    Square,
    /// Single-branch block holding both vertical and horizontal paths.
    Merged,
    Up,
}

/// One encoder block: parallel residual paths, concatenated, fused by a 1×1
/// convolution and added to a 1×1 shortcut of the input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub kind: BlockKind,
    pub in_channels: usize,
    /// Width of every parallel path.
    pub out_channels: usize,
    /// Width after fusion (the block's exposed feature width).
    pub fused_channels: usize,
    pub path_kernels: Vec<KernelSpec>,
    pub has_shortcut_1x1: bool,
}

impl BlockSpec {
    pub fn concat_width(&self) -> usize {
        self.path_kernels.len() * self.out_channels
    }
}

/// Decoder block: residual 3×3 stack over the concatenation of the upsampled
/// deeper feature and the encoder skips at this resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: KernelSpec,
}

/// Full layer plan for one network variant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub variant: NetworkVariant,
    pub base_width: usize,
    /// `branches[b][k]` is encoder block `k+1` of branch `b`.
    pub branches: Vec<Vec<BlockSpec>>,
    /// Deepest first: UCRB5 … UCRB1.
    pub decoder: Vec<DecoderSpec>,
    pub head_in: usize,
}

impl Architecture {
    pub fn new(variant: NetworkVariant, base_width: usize) -> Result<Self> {
        if base_width < 2 || base_width % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "base width must be even and ≥ 2, got {base_width}"
            )));
        }
        let widths: Vec<usize> = (0..DEPTH).map(|k| base_width << k).collect();
        let encoder = |prefix: &str, kind: BlockKind, paths: &[KernelSpec], fat: usize| -> Vec<BlockSpec> {
            let mut in_c = 1;
            widths
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let spec = BlockSpec {
                        name: format!("{prefix}{}", k + 1),
                        kind,
                        in_channels: in_c,
                        out_channels: c * fat,
                        fused_channels: c * fat,
                        path_kernels: paths.to_vec(),
                        has_shortcut_1x1: true,
                    };
                    in_c = c * fat;
                    spec
                })
                .collect()
        };
        let branches = match variant {
            NetworkVariant::Crosslink => vec![
                encoder("vcrb", BlockKind::Vertical, &VERTICAL_PATHS, 1),
                encoder("hcrb", BlockKind::Horizontal, &HORIZONTAL_PATHS, 1),
            ],
            NetworkVariant::SquareCrosslink => vec![
                encoder("scrba", BlockKind::Square, &SQUARE_PATHS, 1),
                encoder("scrbb", BlockKind::Square, &SQUARE_PATHS, 1),
            ],
            NetworkVariant::VerCrosslink => vec![encoder("vcrb", BlockKind::Vertical, &VERTICAL_PATHS, 1)],
            NetworkVariant::HorCrosslink => vec![encoder("hcrb", BlockKind::Horizontal, &HORIZONTAL_PATHS, 1)],
            NetworkVariant::Double2SingleNet => {
                let merged: Vec<KernelSpec> = VERTICAL_PATHS.iter().chain(&HORIZONTAL_PATHS).copied().collect();
                vec![encoder("mcrb", BlockKind::Merged, &merged, 2)]
            }
        };

        // the bottleneck is the pooled deepest feature (branches summed)
        let mut deeper = branches[0][DEPTH - 1].fused_channels;
        let mut decoder = Vec::with_capacity(DEPTH);
        for k in (0..DEPTH).rev() {
            let skips: usize = branches.iter().map(|b| b[k].fused_channels).sum();
            let out = widths[k] / 2;
            decoder.push(DecoderSpec {
                name: format!("ucrb{}", k + 1),
                in_channels: deeper + skips,
                out_channels: out,
                kernel: UP_KERNEL,
            });
            deeper = out;
        }
        Ok(Self {
            variant,
            base_width,
            branches,
            decoder,
            head_in: deeper,
        })
    }

    pub fn required_divisor(&self) -> usize {
        1 << DEPTH
    }
}
