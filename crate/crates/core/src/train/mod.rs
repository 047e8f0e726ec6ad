//! Optimisation loop, evaluation and resumable training state.

pub mod adam;
pub mod config;
pub mod init;
pub mod runlog;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::augment::{self, AugmentSpec};
use crate::data::{mask_to_tensor, Sample};
use crate::error::{Error, Result};
use crate::loss;
use crate::metrics::{BinaryMask, CaseMetrics, MaskPair, MeanStat, THRESHOLD};
use crate::net::checkpoint::StoredValues;
use crate::net::{Checkpoint, Mode, Network};
use crate::tensor::{Element, Tensor};

pub use adam::{adam_step, AdamConfig, AdamState, StepOutcome};
pub use config::{TrainConfig, TrainMode};
pub use init::{init_weights, INIT_STD};
pub use runlog::{Record, RunLog, Timing};

/// Batch size used for inference during validation and evaluation.
pub const EVAL_BATCH: usize = 4;
const EPOCH_KEY: &str = "train/epochs_done";
const BEST_EPOCH_KEY: &str = "opt/best/epoch";
const BEST_DSC_KEY: &str = "opt/best/val_dsc";
const BEST_WEIGHTS: &str = "opt/best/w/";

/// Random stream for epoch `epoch` (shuffle and augmentation).
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

/// Everything needed to continue a run at an epoch boundary.
pub struct TrainState<T: Element> {
    pub network: Network<T>,
    pub adam: AdamState<T>,
    pub epochs_done: usize,
    /// Best validation epoch so far, its DSC and its weights.
    pub best: Option<(usize, f64, Checkpoint)>,
}

impl<T: Element> TrainState<T> {
    pub fn fresh(cfg: &TrainConfig) -> Result<Self> {
        let mut network = Network::new(cfg.variant, cfg.base_width)?;
        init_weights(&mut network, cfg.seed, INIT_STD);
        let n = network.params().len();
        Ok(Self {
            network,
            adam: AdamState::new(n),
            epochs_done: 0,
            best: None,
        })
    }

    /// Weights plus `opt/…` optimizer entries and the completed-epoch counter.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::from_network(&self.network);
        for (name, t) in self.adam.export(self.network.params()) {
            ckpt.entries.push((name, StoredValues::from_tensor(&t)));
        }
        ckpt.entries.push((
            format!("opt/{EPOCH_KEY}"),
            StoredValues::from_tensor(&Tensor::<T>::scalar(T::of(self.epochs_done as f64))),
        ));
        if let Some((epoch, dsc, weights)) = &self.best {
            ckpt.entries.push((BEST_EPOCH_KEY.into(), StoredValues::from_tensor(&Tensor::<f64>::scalar(*epoch as f64))));
            ckpt.entries.push((BEST_DSC_KEY.into(), StoredValues::from_tensor(&Tensor::<f64>::scalar(*dsc))));
            for (name, v) in &weights.entries {
                ckpt.entries.push((format!("{BEST_WEIGHTS}{name}"), v.clone()));
            }
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let network = ckpt.to_network::<T>()?;
        let lookup = |name: &str| ckpt.get(name).map(StoredValues::to_tensor::<T>);
        let adam = AdamState::import(network.params(), lookup)?;
        let epochs_done = ckpt
            .get(&format!("opt/{EPOCH_KEY}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing opt/{EPOCH_KEY}; not a training checkpoint")))?
            .to_tensor::<f64>()
            .data()[0] as usize;
        let scalar = |key: &str| ckpt.get(key).map(|v| v.to_tensor::<f64>().data()[0]);
        let best = match (scalar(BEST_EPOCH_KEY), scalar(BEST_DSC_KEY)) {
            (Some(epoch), Some(dsc)) => {
                let weights = Checkpoint {
                    variant: ckpt.variant,
                    entries: ckpt
                        .entries
                        .iter()
                        .filter_map(|(n, v)| n.strip_prefix(BEST_WEIGHTS).map(|n| (n.to_string(), v.clone())))
                        .collect(),
                };
                weights.to_network::<T>()?;
                Some((epoch as usize, dsc, weights))
            }
            _ => None,
        };
        Ok(Self {
            network,
            adam,
            epochs_done,
            best,
        })
    }
}

pub struct TrainOutcome<T: Element> {
    /// State after the last completed epoch (or the last good one on abort).
    pub last: TrainState<T>,
    /// Weights with the best validation DSC; the final weights when there is no validation set.
    pub best: Checkpoint,
    pub best_epoch: Option<usize>,
    pub best_val_dsc: Option<f64>,
    pub aborted: Option<String>,
    pub log: RunLog,
    pub timing: Timing,
}

fn stack_images<T: Element>(samples: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let images: Vec<Tensor<T>> = samples.iter().map(|s| s.image.to_tensor()).collect();
    let masks: Vec<Tensor<T>> = samples.iter().map(|s| mask_to_tensor(&s.mask)).collect();
    Ok((Tensor::stack_batch(&images)?, Tensor::stack_batch(&masks)?))
}

/// One optimisation step. Returns the logged record and whether the loss was finite.
fn train_step<T: Element>(
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
    adam_cfg: &AdamConfig,
    batch: &[&Sample],
    epoch: usize,
) -> Result<(Record, bool)> {
    let (x, gt) = stack_images::<T>(batch)?;
    let mut tape = Tape::new();
    let out = state.network.forward(&mut tape, &x, Mode::Train)?;
    let feats = out.attention_features(cfg.attention_block)?;
    let l = loss::total_loss(&mut tape, out.logits, &gt, feats, cfg.loss_weights)?;
    let values = l.values(&tape);
    let finite = values.total.is_finite();
    let mut skipped = false;
    if finite {
        let grads = tape.backward(l.total)?;
        let pairs: Vec<_> = out
            .bindings
            .iter()
            .filter_map(|&(id, var)| grads.get(var).map(|g| (id, g)))
            .collect();
        skipped = adam_step(state.network.params_mut(), &pairs, &mut state.adam, adam_cfg) == StepOutcome::SkippedNonFinite;
    }
    Ok((
        Record::Step {
            step: state.adam.step + state.adam.skipped,
            epoch,
            cls: values.cls,
            dice: values.dice,
            atn: values.atn,
            total: values.total,
            degenerate: l.degenerate,
            skipped,
        },
        finite,
    ))
}

/// Trains from `start` (fresh or resumed) for the remaining epochs of `cfg`.
///
/// `on_epoch` sees every epoch record as it is produced.
pub fn train<T: Element>(
    cfg: &TrainConfig,
    train_set: &[&Sample],
    val_set: &[&Sample],
    start: TrainState<T>,
    on_epoch: &mut dyn FnMut(&Record),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    for s in train_set.iter().chain(val_set) {
        start.network.check_input(&[1, 1, s.image.height(), s.image.width()])?;
    }
    if start.network.variant() != cfg.variant || start.network.architecture().base_width != cfg.base_width {
        return Err(Error::Config("resumed checkpoint does not match the configured variant/width".into()));
    }
    let adam_cfg = AdamConfig::new(cfg.learning_rate, cfg.weight_decay);
    let aug = AugmentSpec::default();

    let mut log = RunLog::default();
    log.push(Record::Config {
        format: runlog::RUNLOG_FORMAT,
        threads: 1,
        config: cfg.clone(),
        train_cases: train_set.len(),
        val_cases: val_set.len(),
    });
    let mut timing = Timing::default();

    let mut state = start;
    let mut last_good = state.to_checkpoint();
    let mut aborted = None;

    'epochs: for epoch in state.epochs_done..cfg.epochs {
        let clock = Instant::now();
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let skipped_before = state.adam.skipped;
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let augmented: Vec<Sample>;
            let batch: Vec<&Sample> = if cfg.augment {
                augmented = chunk
                    .iter()
                    .map(|&i| augment::apply(train_set[i], &aug.sample(&mut rng)))
                    .collect::<Result<_>>()?;
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| train_set[i]).collect()
            };
            let (record, finite) = train_step(&mut state, cfg, &adam_cfg, &batch, epoch)?;
            if let Record::Step { total, .. } = record {
                loss_sum += total;
            }
            steps += 1;
            log.push(record);
            if !finite {
                let reason = format!("total loss became non-finite at epoch {epoch}");
                log.push(Record::Abort {
                    step: state.adam.step + state.adam.skipped + 1,
                    epoch,
                    reason: reason.clone(),
                });
                state = TrainState::from_checkpoint(&last_good)?;
                aborted = Some(reason);
                break 'epochs;
            }
        }
        state.epochs_done = epoch + 1;

        let (val_dsc, val_undefined) = if val_set.is_empty() {
            (None, 0)
        } else {
            let cases = evaluate(&mut state.network, val_set)?;
            let stat = MeanStat::of(cases.iter().map(|c| c.dsc));
            (stat.mean, stat.undefined)
        };
        let improved = match (val_dsc, &state.best) {
            (Some(d), None) => d.is_finite(),
            (Some(d), Some((_, b, _))) => d > *b,
            _ => false,
        };
        if improved {
            let weights = Checkpoint::from_network(&state.network);
            state.best = Some((epoch, val_dsc.expect("improved implies a value"), weights));
        }
        last_good = state.to_checkpoint();
        let record = Record::Epoch {
            epoch,
            train_loss: loss_sum / steps.max(1) as f64,
            val_dsc,
            val_undefined,
            improved,
            skipped_steps: state.adam.skipped - skipped_before,
        };
        on_epoch(&record);
        log.push(record);
        timing.epoch_seconds.push(clock.elapsed().as_secs_f64());
        if let (Some(target), Some(d)) = (cfg.target_dsc, val_dsc) {
            if d >= target {
                break;
            }
        }
    }

    let (best_epoch, best_val_dsc, best_ckpt) = match state.best.clone() {
        Some((e, d, c)) => (Some(e), Some(d), c),
        None => (None, None, weights_only(&state.to_checkpoint())),
    };
    log.push(Record::Summary {
        epochs_run: state.epochs_done,
        best_epoch,
        best_val_dsc,
        aborted: aborted.is_some(),
    });
    Ok(TrainOutcome {
        last: state,
        best: best_ckpt,
        best_epoch,
        best_val_dsc,
        aborted,
        log,
        timing,
    })
}

/// Drops optimizer entries.
pub fn weights_only(ckpt: &Checkpoint) -> Checkpoint {
    Checkpoint {
        variant: ckpt.variant,
        entries: ckpt.entries.iter().filter(|(n, _)| !n.starts_with("opt/")).cloned().collect(),
    }
}

/// Eval-mode predictions thresholded at 0.5, scored per case in input order.
pub fn evaluate<T: Element>(net: &mut Network<T>, samples: &[&Sample]) -> Result<Vec<CaseMetrics>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let (x, _) = stack_images::<T>(chunk)?;
        let probs = net.predict(&x)?;
        let [_, _, h, w] = probs.dims4()?;
        for (i, s) in chunk.iter().enumerate() {
            let p: Vec<f64> = probs.data()[i * h * w..(i + 1) * h * w].iter().map(|v| v.as_f64()).collect();
            let pred = BinaryMask::from_probabilities(h, w, &p, THRESHOLD)?;
            out.push(CaseMetrics::compute(s.id.clone(), &MaskPair::new(pred, s.mask.clone())?));
        }
    }
    Ok(out)
}

/// Predicted mask for one image.
pub fn predict_mask<T: Element>(net: &mut Network<T>, image: &crate::data::GrayImage) -> Result<BinaryMask> {
    let probs = net.predict(&image.to_tensor::<T>())?;
    let p: Vec<f64> = probs.data().iter().map(|v| v.as_f64()).collect();
    BinaryMask::from_probabilities(image.height(), image.width(), &p, THRESHOLD)
}
