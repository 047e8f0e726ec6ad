use std::path::Path;

use rand::Rng;

use crosslink::ablation;
use crosslink::data::pgm::{read_image, read_mask, write_mask};
use crosslink::data::{Dataset, Split, SynthSpec};
use crosslink::error::Error;
use crosslink::gradcheck::{self, CheckReport, Scope};
use crosslink::kv::KvFile;
use crosslink::metrics::{self, CaseMetrics, MaskPair};
use crosslink::net::{parameter_report, Checkpoint, Network, NetworkVariant};
use crosslink::tensor::{DType, Element};
use crosslink::train::{self, Record, RunLog, TrainConfig, TrainState};

use super::{exit, Cli, Command, Global};

/// Failure carrying its exit status.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::NonFinite(_) => exit::RUNTIME,
            _ => exit::VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn validation(msg: impl Into<String>) -> Failure {
    Failure {
        code: exit::VALIDATION,
        message: msg.into(),
    }
}

type CmdResult = Result<u8, Failure>;

fn resolve_seed(global: &Global, from_file: Option<u64>) -> u64 {
    match global.seed.or(from_file) {
        Some(s) => s,
        None => {
            let s = rand::rng().random::<u32>() as u64;
            eprintln!("no --seed given; using generated seed {s}");
            s
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(validation(format!("{what} {} does not exist", path.display())))
    }
}

fn load_config(path: Option<&Path>, global: &Global) -> Result<TrainConfig, Failure> {
    let cfg = match path {
        Some(p) => {
            require_file(p, "config")?;
            let kv = KvFile::read(p)?;
            let from_file = kv.get::<u64>("seed")?;
            let mut c = TrainConfig::from_kv(&kv)?;
            c.seed = resolve_seed(global, from_file);
            c
        }
        None => {
            let mut c = TrainConfig::desk();
            c.seed = resolve_seed(global, None);
            c
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_dir(path: &Path) -> Result<Dataset, Failure> {
    if !path.join("manifest").is_file() {
        return Err(validation(format!("{} is not a dataset directory (no manifest)", path.display())));
    }
    Ok(Dataset::load(path)?)
}

fn ensure_writable_dir(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() {
        let non_empty = std::fs::read_dir(path)
            .map_err(|e| Failure::from(Error::Io {
                path: path.to_path_buf(),
                source: e,
            }))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(validation(format!(
                "output directory {} exists and is not empty (use --force to overwrite)",
                path.display()
            )));
        }
    }
    Ok(())
}

fn progress(prefix: &str, r: &Record) {
    if let Record::Epoch {
        epoch,
        train_loss,
        val_dsc,
        improved,
        ..
    } = r
    {
        let dsc = val_dsc.map_or_else(|| "NA".into(), |d| format!("{d:.2}"));
        eprintln!(
            "{prefix}epoch {epoch:>3}  loss {train_loss:.5}  val DSC {dsc}{}",
            if *improved { "  *" } else { "" }
        );
    }
}

pub fn run(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::GenData { spec, out } => gen_data(&cli.global, spec.as_deref(), out),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => train_cmd(&cli.global, config.as_deref(), data, out, resume.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            split,
            delimiter,
        } => eval_cmd(&cli.global, checkpoint, data, split, *delimiter),
        Command::Predict {
            checkpoint,
            image,
            out,
            ground_truth,
        } => predict_cmd(&cli.global, checkpoint, image, out, ground_truth.as_deref()),
        Command::Gradcheck {
            scope,
            fault,
            variant,
            base_width,
            size,
            samples,
        } => gradcheck_cmd(&cli.global, scope, fault.as_deref(), variant, *base_width, *size, *samples),
        Command::AblateLambda {
            grid,
            data,
            config,
            delimiter,
        } => ablate_lambda(&cli.global, grid, data, config.as_deref(), *delimiter),
        Command::AblateArch {
            variants,
            data,
            config,
            delimiter,
        } => ablate_arch(&cli.global, variants, data, config.as_deref(), *delimiter),
        Command::Report {
            runlog,
            bins,
            delimiter,
        } => report_cmd(runlog, bins, *delimiter),
        Command::Params { base_width } => params_cmd(*base_width),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn gen_data(global: &Global, spec_path: Option<&Path>, out: &Path) -> CmdResult {
    let mut spec = match spec_path {
        Some(p) => {
            require_file(p, "spec")?;
            SynthSpec::from_kv(&KvFile::read(p)?)?
        }
        None => SynthSpec::default(),
    };
    let from_file = spec_path
        .map(|p| KvFile::read(p).and_then(|kv| kv.get::<u64>("seed")))
        .transpose()?
        .flatten();
    spec.seed = resolve_seed(global, from_file);
    spec.validate()?;
    if global.dry_run {
        print!("{}", spec.to_kv());
        return Ok(exit::OK);
    }
    ensure_writable_dir(out, global.force)?;
    let ds = Dataset::synthesize(&spec)?;
    ds.write(out, global.force)?;
    println!("wrote {} images ({}×{}) to {}", ds.cases.len(), spec.height, spec.width, out.display());
    Ok(exit::OK)
}

fn train_typed<T: Element>(cfg: &TrainConfig, data: &Dataset, out: &Path, resume: Option<&Checkpoint>) -> CmdResult {
    let start = match resume {
        Some(c) => TrainState::<T>::from_checkpoint(c)?,
        None => TrainState::<T>::fresh(cfg)?,
    };
    let outcome = train::train::<T>(
        cfg,
        &data.split(Split::Train),
        &data.split(Split::Val),
        start,
        &mut |r| progress("", r),
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut log = outcome.log.clone();
    let test = data.split(Split::Test);
    let mut best = outcome.best.to_network::<T>()?;
    let started = std::time::Instant::now();
    let cases = train::evaluate(&mut best, &test)?;
    let mut timing = outcome.timing.clone();
    timing.eval_seconds = started.elapsed().as_secs_f64();
    for c in &cases {
        log.push(Record::Case {
            split: Split::Test,
            metrics: c.clone(),
        });
    }
    outcome.best.save(&out.join("best.ckpt"))?;
    outcome.last.to_checkpoint().save(&out.join("last.ckpt"))?;
    log.write(&out.join("runlog.jsonl"))?;
    timing.write(&out.join("timing.jsonl"))?;
    let agg = metrics::aggregate(&cases);
    println!(
        "best epoch {:?}, val DSC {:?}; test DSC {} over {} cases; {:.1}s",
        outcome.best_epoch,
        outcome.best_val_dsc,
        agg.dsc.mean.map_or("NA".into(), |d| format!("{d:.2}")),
        cases.len(),
        timing.total()
    );
    if let Some(reason) = outcome.aborted {
        eprintln!("training aborted: {reason}; last good state saved");
        return Ok(exit::RUNTIME);
    }
    Ok(exit::OK)
}

fn train_cmd(global: &Global, config: Option<&Path>, data: &Path, out: &Path, resume: Option<&Path>) -> CmdResult {
    let cfg = load_config(config, global)?;
    let ds = dataset_dir(data)?;
    let resume_ckpt = match resume {
        Some(p) => {
            require_file(p, "checkpoint")?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    if global.dry_run {
        print!("{cfg}");
        return Ok(exit::OK);
    }
    if resume.is_none() {
        ensure_writable_dir(out, global.force)?;
    }
    match cfg.precision {
        DType::F32 => train_typed::<f32>(&cfg, &ds, out, resume_ckpt.as_ref()),
        DType::F64 => train_typed::<f64>(&cfg, &ds, out, resume_ckpt.as_ref()),
    }
}

/// Loads a checkpoint at the precision it was stored in.
fn with_network<R>(
    ckpt: &Checkpoint,
    f32_fn: impl FnOnce(Network<f32>) -> Result<R, Failure>,
    f64_fn: impl FnOnce(Network<f64>) -> Result<R, Failure>,
) -> Result<R, Failure> {
    let is_f64 = ckpt
        .get("head.weight")
        .is_some_and(|v| v.dtype() == DType::F64);
    if is_f64 {
        f64_fn(ckpt.to_network()?)
    } else {
        f32_fn(ckpt.to_network()?)
    }
}

fn eval_cmd(global: &Global, checkpoint: &Path, data: &Path, split: &str, delimiter: char) -> CmdResult {
    require_file(checkpoint, "checkpoint")?;
    let split = Split::parse(split).ok_or_else(|| validation(format!("unknown split '{split}' (train|val|test)")))?;
    let ds = dataset_dir(data)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    if global.dry_run {
        println!("checkpoint = {}\nvariant = {}\nsplit = {}", checkpoint.display(), ckpt.variant, split.name());
        return Ok(exit::OK);
    }
    let samples = ds.split(split);
    let cases: Vec<CaseMetrics> = with_network(
        &ckpt,
        |mut n| Ok(train::evaluate(&mut n, &samples)?),
        |mut n| Ok(train::evaluate(&mut n, &samples)?),
    )?;
    print!("{}", metrics::report_table(&cases, delimiter));
    Ok(exit::OK)
}

fn predict_cmd(global: &Global, checkpoint: &Path, image: &Path, out: &Path, gt: Option<&Path>) -> CmdResult {
    require_file(checkpoint, "checkpoint")?;
    require_file(image, "image")?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let img = read_image(image)?;
    let probe = Network::<f32>::new(ckpt.variant, ckpt.base_width()?)?;
    probe.check_input(&[1, 1, img.height(), img.width()])?;
    let truth = gt.map(read_mask).transpose()?;
    if global.dry_run {
        println!("checkpoint = {}\nimage = {}\nout = {}", checkpoint.display(), image.display(), out.display());
        return Ok(exit::OK);
    }
    if out.exists() && !global.force {
        return Err(validation(format!("{} exists (use --force to overwrite)", out.display())));
    }
    let mask = with_network(
        &ckpt,
        |mut n| Ok(train::predict_mask(&mut n, &img)?),
        |mut n| Ok(train::predict_mask(&mut n, &img)?),
    )?;
    write_mask(out, &mask)?;
    if let Some(t) = truth {
        let c = metrics::confusion(&MaskPair::new(mask, t)?);
        let d = metrics::dsc(&c).map_or("NA".into(), |d| format!("{d:.2}"));
        println!("DSC {d}");
    }
    Ok(exit::OK)
}

fn print_checks(reports: &[CheckReport]) -> bool {
    println!("check,checked,skipped,max_rel_error,threshold,status");
    let mut ok = true;
    for r in reports {
        let pass = r.passed();
        ok &= pass;
        println!(
            "{},{},{},{:.3e},{:.0e},{}",
            r.name,
            r.checked,
            r.skipped,
            r.max_rel_error,
            r.threshold,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    ok
}

fn gradcheck_cmd(
    global: &Global,
    scope: &str,
    fault: Option<&str>,
    variant: &str,
    base_width: usize,
    size: usize,
    samples: usize,
) -> CmdResult {
    let scope: Scope = scope.parse()?;
    let variant: NetworkVariant = variant.parse()?;
    let seed = resolve_seed(global, None);
    if global.dry_run {
        println!("scope = {scope:?}\nseed = {seed}\nfault = {}", fault.unwrap_or("none"));
        return Ok(exit::OK);
    }
    let reports = match scope {
        Scope::Op => gradcheck::op_suite(seed, fault)?,
        Scope::Block => gradcheck::block_suite(seed, fault)?,
        Scope::Net => vec![gradcheck::net_check(variant, base_width, size, samples, seed, fault)?],
    };
    if print_checks(&reports) {
        Ok(exit::OK)
    } else {
        let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(exit::THRESHOLD)
    }
}

fn ablate_lambda(global: &Global, grid: &Path, data: &Path, config: Option<&Path>, d: char) -> CmdResult {
    require_file(grid, "grid")?;
    let text = std::fs::read_to_string(grid).map_err(|e| Error::Io {
        path: grid.to_path_buf(),
        source: e,
    })?;
    let rows = ablation::parse_grid(&text)?;
    let cfg = load_config(config, global)?;
    let ds = dataset_dir(data)?;
    if global.dry_run {
        print!("{cfg}");
        for w in &rows {
            println!("row = {}, {}, {}", w.cls, w.dice, w.atn);
        }
        return Ok(exit::OK);
    }
    let results = ablation::lambda_ablation(&cfg, &rows, &ds, &mut |w, r| {
        progress(&format!("[{} {} {}] ", w.cls, w.dice, w.atn), r)
    })?;
    print!("{}", ablation::lambda_table(&results, d));
    Ok(exit::OK)
}

fn ablate_arch(global: &Global, variants: &str, data: &Path, config: Option<&Path>, d: char) -> CmdResult {
    let list = if variants.trim() == "all" {
        NetworkVariant::ALL.to_vec()
    } else {
        ablation::parse_variants(variants)?
    };
    let cfg = load_config(config, global)?;
    let ds = dataset_dir(data)?;
    if global.dry_run {
        print!("{cfg}");
        println!("variants = {}", list.iter().map(|v| v.name()).collect::<Vec<_>>().join(", "));
        return Ok(exit::OK);
    }
    let results = ablation::arch_ablation(&cfg, &list, &ds, &mut |v, r| progress(&format!("[{v}] "), r))?;
    print!("{}", ablation::arch_table(&results, d)?);
    Ok(exit::OK)
}

fn report_cmd(runlog: &Path, bins_pct: &[f64], d: char) -> CmdResult {
    require_file(runlog, "run log")?;
    let log = RunLog::read(runlog)?;
    let bins: Vec<f64> = bins_pct.iter().map(|b| b / 100.0).collect();
    metrics::validate_bins(&bins)?;
    if log.records.is_empty() {
        println!("no records");
        return Ok(exit::OK);
    }
    let steps: Vec<f64> = log
        .steps()
        .filter_map(|r| match r {
            Record::Step { total, .. } => Some(*total),
            _ => None,
        })
        .collect();
    println!("steps: {}", steps.len());
    if let (Some(first), Some(last)) = (steps.first(), steps.last()) {
        println!("total loss: first {first:.5}, last {last:.5}");
    }
    for r in &log.records {
        if let Record::Summary {
            epochs_run,
            best_epoch,
            best_val_dsc,
            aborted,
        } = r
        {
            println!(
                "epochs run: {epochs_run}; best epoch: {}; best val DSC: {}; aborted: {aborted}",
                best_epoch.map_or("NA".into(), |e| e.to_string()),
                best_val_dsc.map_or("NA".into(), |v| format!("{v:.2}"))
            );
        }
    }
    let cases: Vec<CaseMetrics> = log.cases().into_iter().map(|(_, c)| c.clone()).collect();
    if cases.is_empty() {
        println!("no case records");
        return Ok(exit::OK);
    }
    println!();
    print!("{}", metrics::report_table(&cases, d));
    println!();
    print!("{}", metrics::bin_table(&metrics::stratify(&cases, &bins)?, d));
    Ok(exit::OK)
}

fn params_cmd(base_width: usize) -> CmdResult {
    println!("variant,params,size_mb_f32");
    for v in NetworkVariant::ALL {
        let r = parameter_report(v, base_width)?;
        println!("{v},{},{:.1}", r.total, r.bytes_f32() as f64 / 1e6);
    }
    Ok(exit::OK)
}
