//! Loss-weight and architecture ablation runs: one training run per row, shared
//! seed and data, scored on the test split with the best-validation weights.

use std::fmt::Write as _;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::metrics::{aggregate, Aggregate};
use crate::net::{parameter_report, NetworkVariant};
use crate::tensor::{DType, Element};
use crate::train::{evaluate, train, Record, TrainConfig, TrainOutcome, TrainState};

/// Grid file: one `λ_cls λ_dice λ_atn` row per line (spaces or commas), `#` comments.
/// Every row is validated before any training happens.
pub fn parse_grid(text: &str) -> Result<Vec<LossWeights>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("grid line {}: cannot parse '{s}'", i + 1)))
            })
            .collect::<Result<_>>()?;
        let [cls, dice, atn] = nums[..] else {
            return Err(Error::Config(format!("grid line {}: expected three weights, got {}", i + 1, nums.len())));
        };
        rows.push(
            LossWeights::new(cls, dice, atn).map_err(|e| Error::Config(format!("grid line {}: {e}", i + 1)))?,
        );
    }
    if rows.is_empty() {
        return Err(Error::Config("grid has no rows".into()));
    }
    Ok(rows)
}

/// Test-split metrics of one trained configuration.
#[derive(Clone, Debug, serde::Serialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub test: Aggregate,
    pub best_epoch: Option<usize>,
    pub best_val_dsc: Option<f64>,
    pub aborted: Option<String>,
}

fn run_typed<T: Element>(
    cfg: &TrainConfig,
    data: &Dataset,
    on_epoch: &mut dyn FnMut(&Record),
) -> Result<(RunSummary, TrainOutcome<T>)> {
    let outcome = train::<T>(
        cfg,
        &data.split(Split::Train),
        &data.split(Split::Val),
        TrainState::fresh(cfg)?,
        on_epoch,
    )?;
    let mut best = outcome.best.to_network::<T>()?;
    let cases = evaluate(&mut best, &data.split(Split::Test))?;
    Ok((
        RunSummary {
            config: cfg.clone(),
            test: aggregate(&cases),
            best_epoch: outcome.best_epoch,
            best_val_dsc: outcome.best_val_dsc,
            aborted: outcome.aborted.clone(),
        },
        outcome,
    ))
}

/// Trains and scores one configuration at its configured precision.
pub fn run_one(cfg: &TrainConfig, data: &Dataset, on_epoch: &mut dyn FnMut(&Record)) -> Result<RunSummary> {
    if data.split(Split::Test).is_empty() {
        return Err(Error::InvalidArgument("dataset has no test split".into()));
    }
    match cfg.precision {
        DType::F32 => run_typed::<f32>(cfg, data, on_epoch).map(|r| r.0),
        DType::F64 => run_typed::<f64>(cfg, data, on_epoch).map(|r| r.0),
    }
}

pub fn lambda_ablation(
    base: &TrainConfig,
    grid: &[LossWeights],
    data: &Dataset,
    on_epoch: &mut dyn FnMut(&LossWeights, &Record),
) -> Result<Vec<RunSummary>> {
    for w in grid {
        w.validate()?;
    }
    grid.iter()
        .map(|w| {
            let cfg = TrainConfig {
                loss_weights: *w,
                ..base.clone()
            };
            run_one(&cfg, data, &mut |r| on_epoch(w, r))
        })
        .collect()
}

pub fn arch_ablation(
    base: &TrainConfig,
    variants: &[NetworkVariant],
    data: &Dataset,
    on_epoch: &mut dyn FnMut(NetworkVariant, &Record),
) -> Result<Vec<RunSummary>> {
    variants
        .iter()
        .map(|&v| {
            let cfg = TrainConfig {
                variant: v,
                ..base.clone()
            };
            run_one(&cfg, data, &mut |r| on_epoch(v, r))
        })
        .collect()
}

/// Comma-separated variant names; unknown names are rejected.
pub fn parse_variants(list: &str) -> Result<Vec<NetworkVariant>> {
    let v: Vec<NetworkVariant> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::InvalidArgument("no variants given".into()));
    }
    Ok(v)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}"))
}

/// Header `lambda_cls,lambda_dice,lambda_atn,dsc,sen,spe,or,ur`.
pub fn lambda_table(rows: &[RunSummary], d: char) -> String {
    let mut out = format!("lambda_cls{d}lambda_dice{d}lambda_atn{d}dsc{d}sen{d}spe{d}or{d}ur\n");
    for r in rows {
        let w = r.config.loss_weights;
        let t = &r.test;
        let _ = writeln!(
            out,
            "{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}",
            w.cls,
            w.dice,
            w.atn,
            cell(t.dsc.mean),
            cell(t.sen.mean),
            cell(t.spe.mean),
            cell(t.or.mean),
            cell(t.ur.mean)
        );
    }
    out
}

/// Header `variant,params,size_mb,dsc,sen,spe,or,ur`; size is at the run's width, f32 storage.
pub fn arch_table(rows: &[RunSummary], d: char) -> Result<String> {
    let mut out = format!("variant{d}params{d}size_mb{d}dsc{d}sen{d}spe{d}or{d}ur\n");
    for r in rows {
        let p = parameter_report(r.config.variant, r.config.base_width)?;
        let t = &r.test;
        let _ = writeln!(
            out,
            "{}{d}{}{d}{:.1}{d}{}{d}{}{d}{}{d}{}{d}{}",
            r.config.variant,
            p.total,
            p.bytes_f32() as f64 / 1e6,
            cell(t.dsc.mean),
            cell(t.sen.mean),
            cell(t.spe.mean),
            cell(t.or.mean),
            cell(t.ur.mean)
        );
    }
    Ok(out)
}
