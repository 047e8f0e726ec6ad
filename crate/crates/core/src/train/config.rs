//! Training configuration, read from a flat key/value file.
//!
//! | key               | default (desk) | notes                                   |
//! |-------------------|----------------|-----------------------------------------|
//! | `mode`            | `desk`         | `desk` or `full` (sets lr and batch)    |
//! | `learning_rate`   | 1e-3 / 0.5e-5  | overrides the mode default              |
//! | `weight_decay`    | 0.005          |                                         |
//! | `batch_size`      | 2              |                                         |
//! | `epochs`          | 40             |                                         |
//! | `lambda_cls`      | 0.4            | the three weights must sum to 1         |
//! | `lambda_dice`     | 0.1            |                                         |
//! | `lambda_atn`      | 0.5            |                                         |
//! | `attention_block` | 3              | encoder block feeding the attention term|
//! | `variant`         | `crosslink`    | see `NetworkVariant`                    |
//! | `base_width`      | 32             | first-stage channel count, even         |
//! | `precision`       | `f32`          | `f32` or `f64`                          |
//! | `augment`         | `false`        | zoom/rotate/flip each training sample   |
//! | `seed`            | 0              |                                         |
//! | `target_dsc`      | none           | stop once validation DSC (%) reaches it |

use std::fmt;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::loss::{LossWeights, DEFAULT_ATTENTION_BLOCK};
use crate::net::spec::{DEFAULT_BASE_WIDTH, DEPTH};
use crate::net::NetworkVariant;
use crate::tensor::DType;

pub const DESK_LEARNING_RATE: f64 = 1e-3;
pub const FULL_LEARNING_RATE: f64 = 0.5e-5;
pub const WEIGHT_DECAY: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_weights: LossWeights,
    pub attention_block: usize,
    pub variant: NetworkVariant,
    pub base_width: usize,
    pub precision: DType,
    pub augment: bool,
    pub seed: u64,
    pub target_dsc: Option<f64>,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            mode: TrainMode::Desk,
            learning_rate: DESK_LEARNING_RATE,
            weight_decay: WEIGHT_DECAY,
            batch_size: 2,
            epochs: 40,
            loss_weights: LossWeights::default(),
            attention_block: DEFAULT_ATTENTION_BLOCK,
            variant: NetworkVariant::Crosslink,
            base_width: DEFAULT_BASE_WIDTH,
            precision: DType::F32,
            augment: false,
            seed: 0,
            target_dsc: None,
        }
    }

    pub fn full() -> Self {
        Self {
            mode: TrainMode::Full,
            learning_rate: FULL_LEARNING_RATE,
            batch_size: 2,
            ..Self::desk()
        }
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut c = match kv.get::<String>("mode")?.as_deref() {
            None | Some("desk") => Self::desk(),
            Some("full") => Self::full(),
            Some(other) => return Err(Error::Config(format!("unknown mode '{other}' (desk|full)"))),
        };
        if let Some(v) = kv.get("learning_rate")? {
            c.learning_rate = v;
        }
        if let Some(v) = kv.get("weight_decay")? {
            c.weight_decay = v;
        }
        if let Some(v) = kv.get("batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = kv.get("epochs")? {
            c.epochs = v;
        }
        let mut w = c.loss_weights;
        if let Some(v) = kv.get("lambda_cls")? {
            w.cls = v;
        }
        if let Some(v) = kv.get("lambda_dice")? {
            w.dice = v;
        }
        if let Some(v) = kv.get("lambda_atn")? {
            w.atn = v;
        }
        c.loss_weights = w;
        if let Some(v) = kv.get("attention_block")? {
            c.attention_block = v;
        }
        if let Some(v) = kv.get::<String>("variant")? {
            c.variant = v.parse()?;
        }
        if let Some(v) = kv.get("base_width")? {
            c.base_width = v;
        }
        if let Some(v) = kv.get::<String>("precision")? {
            c.precision = match v.as_str() {
                "f32" => DType::F32,
                "f64" => DType::F64,
                other => return Err(Error::Config(format!("unknown precision '{other}' (f32|f64)"))),
            };
        }
        if let Some(v) = kv.get("augment")? {
            c.augment = v;
        }
        if let Some(v) = kv.get("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.get("target_dsc")? {
            c.target_dsc = Some(v);
        }
        kv.reject_unknown()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(1..=DEPTH).contains(&self.attention_block) {
            return bad(format!("attention_block must be in 1..={DEPTH}, got {}", self.attention_block));
        }
        if self.base_width < 2 || self.base_width % 2 != 0 {
            return bad(format!("base_width must be even and ≥ 2, got {}", self.base_width));
        }
        self.loss_weights.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Renders the configuration in the same key/value format it is read from.
impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode = {}", if self.mode == TrainMode::Desk { "desk" } else { "full" })?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "weight_decay = {}", self.weight_decay)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "lambda_cls = {}", self.loss_weights.cls)?;
        writeln!(f, "lambda_dice = {}", self.loss_weights.dice)?;
        writeln!(f, "lambda_atn = {}", self.loss_weights.atn)?;
        writeln!(f, "attention_block = {}", self.attention_block)?;
        writeln!(f, "variant = {}", self.variant)?;
        writeln!(f, "base_width = {}", self.base_width)?;
        writeln!(f, "precision = {}", self.precision.name())?;
        writeln!(f, "augment = {}", self.augment)?;
        writeln!(f, "seed = {}", self.seed)?;
        if let Some(t) = self.target_dsc {
            writeln!(f, "target_dsc = {t}")?;
        }
        Ok(())
    }
}
