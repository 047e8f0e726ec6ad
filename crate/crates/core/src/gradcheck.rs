//! Central finite-difference checks of the analytic gradients, at 64-bit precision.
//!
//! Each check reduces an operation's output to a scalar through a fixed random
//! weighting (`Σ rᵢ·yᵢ`) so that normalization-style ops get a non-trivial
//! gradient, perturbs each input element by `±step`, and compares.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::loss::{self, LossWeights};
use crate::net::{Mode, Network, NetworkVariant};
use crate::tensor::Tensor;
use crate::train::init::init_weights;

/// Denominator floor for single-op checks: gradients smaller than this on both
/// sides are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;
/// Denominator floor for block and whole-network checks, where structurally zero
/// gradients (a conv bias feeding a batch norm) leave only finite-difference roundoff.
pub const DEEP_FLOOR: f64 = 1e-4;
pub const OP_THRESHOLD: f64 = 1e-5;
pub const BATCHNORM_THRESHOLD: f64 = 1e-4;
pub const NET_THRESHOLD: f64 = 1e-3;
pub const OP_STEP: f64 = 1e-4;
pub const BLOCK_STEP: f64 = 1e-5;
/// Early-block weights feed millions of ReLU and max-pool decisions; steps of
/// 1e-5 to 1e-7 flip enough of them to bias the quotient by up to several percent,
/// while below 1e-8 the loss roundoff takes over.
pub const NET_STEP: f64 = 2e-8;
pub const NET_SAMPLES: usize = 50;
/// Give up after this many nonsmooth draws per requested sample.
pub const NET_MAX_SKIPS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Scope {
    Op,
    Block,
    Net,
}

impl std::str::FromStr for Scope {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "op" => Ok(Scope::Op),
            "block" => Ok(Scope::Block),
            "net" => Ok(Scope::Net),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "unknown gradcheck scope '{other}' (op|block|net)"
            ))),
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold && self.checked > 0
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

type Builder<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

/// Finite-difference check of `build` with respect to every element of every input.
///
/// `skip(input, element, inputs)` excludes non-differentiable points.
pub fn check_function(
    name: &str,
    inputs: &[Tensor<f64>],
    build: &Builder<'_>,
    step: f64,
    threshold: f64,
    fault: Option<&str>,
    skip: &dyn Fn(usize, usize, &[Tensor<f64>]) -> bool,
) -> Result<CheckReport> {
    let mut tape = Tape::new();
    if let Some(op) = fault {
        tape.inject_fault(op);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = build(&mut t, &vs)?;
        Ok(t.value(o).data()[0])
    };

    let mut work = inputs.to_vec();
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for e in 0..inputs[i].len() {
            if skip(i, e, inputs) {
                skipped += 1;
                continue;
            }
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic[e], numeric, ABS_FLOOR));
            checked += 1;
        }
    }
    Ok(CheckReport {
        name: name.to_string(),
        checked,
        skipped,
        max_rel_error: worst,
        threshold,
    })
}

/// Reduces `y` to `Σ r·y` with a fixed random `r`.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = random_tensor(&mut rng, tape.shape(y));
    let rv = tape.leaf(r, false);
    let prod = tape.mul(y, rv)?;
    Ok(tape.sum(prod))
}

fn never(_: usize, _: usize, _: &[Tensor<f64>]) -> bool {
    false
}

/// Runs every single-operation and loss check.
pub fn op_suite(seed: u64, fault: Option<&str>) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let x = random_tensor(&mut rng, &[2, 3, 8, 8]);
    let w = random_tensor(&mut rng, &[4, 3, 3, 1]);
    let b = random_tensor(&mut rng, &[4]);
    reports.push(check_function(
        "conv2d",
        &[x, w, b],
        &|t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), (1, 0))?;
            project(t, y, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &never,
    )?);

    for (kernel, padding) in [((5, 3), (2, 1)), ((1, 3), (0, 1)), ((3, 5), (1, 2))] {
        let x = random_tensor(&mut rng, &[1, 2, 6, 6]);
        let w = random_tensor(&mut rng, &[2, 2, kernel.0, kernel.1]);
        reports.push(check_function(
            &format!("conv2d {}x{}", kernel.0, kernel.1),
            &[x, w],
            &|t, v| {
                let y = t.conv2d(v[0], v[1], None, padding)?;
                project(t, y, seed)
            },
            OP_STEP,
            OP_THRESHOLD,
            fault,
            &never,
        )?);
    }

    let x = random_tensor(&mut rng, &[1, 2, 6, 6]);
    reports.push(check_function(
        "max_pool2x2",
        &[x],
        &|t, v| {
            let y = t.max_pool2x2(v[0])?;
            project(t, y, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &|_, e, xs| near_pool_tie(&xs[0], e, 2.0 * OP_STEP),
    )?);

    let x = random_tensor(&mut rng, &[1, 2, 8, 8]);
    reports.push(check_function(
        "avg_pool2x2",
        &[x],
        &|t, v| {
            let y = t.avg_pool2x2(v[0])?;
            project(t, y, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &never,
    )?);

    let x = random_tensor(&mut rng, &[1, 2, 3, 4]);
    reports.push(check_function(
        "bilinear_upsample2x",
        &[x],
        &|t, v| {
            let y = t.upsample2x(v[0])?;
            project(t, y, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &never,
    )?);

    let x = random_tensor(&mut rng, &[3, 2, 4, 4]);
    let gamma = uniform_tensor(&mut rng, &[2], 0.5, 1.5);
    let beta = random_tensor(&mut rng, &[2]);
    reports.push(check_function(
        "batchnorm",
        &[x, gamma, beta],
        &|t, v| {
            let (y, _) = t.batchnorm_train(v[0], v[1], v[2], crate::net::layers::BN_EPS)?;
            project(t, y, seed)
        },
        OP_STEP,
        BATCHNORM_THRESHOLD,
        fault,
        &never,
    )?);

    let x = random_tensor(&mut rng, &[2, 3, 4, 4]);
    reports.push(check_function(
        "relu",
        &[x],
        &|t, v| {
            let y = t.relu(v[0]);
            project(t, y, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &|_, e, xs| xs[0].data()[e].abs() < OP_STEP.max(1e-6),
    )?);

    let x = random_tensor(&mut rng, &[2, 3, 4, 4]);
    reports.push(check_function(
        "sigmoid",
        &[x],
        &|t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &never,
    )?);

    let parts = [
        random_tensor(&mut rng, &[2, 1, 3, 3]),
        random_tensor(&mut rng, &[2, 2, 3, 3]),
        random_tensor(&mut rng, &[2, 3, 3, 3]),
    ];
    reports.push(check_function(
        "concat_channels",
        &parts,
        &|t, v| {
            let y = t.concat_channels(v)?;
            project(t, y, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &never,
    )?);

    let a = random_tensor(&mut rng, &[2, 2, 3, 3]);
    let b = random_tensor(&mut rng, &[2, 2, 3, 3]);
    reports.push(check_function(
        "add",
        &[a, b],
        &|t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &never,
    )?);

    let p = uniform_tensor(&mut rng, &[2, 1, 4, 4], 0.05, 0.95);
    let g = binary_tensor(&mut rng, &[2, 1, 4, 4]);
    {
        let g = g.clone();
        reports.push(check_function(
            "bce_loss",
            &[p.clone()],
            &move |t, v| loss::bce_loss(t, v[0], &g),
            OP_STEP,
            OP_THRESHOLD,
            fault,
            &never,
        )?);
    }
    {
        let g = g.clone();
        reports.push(check_function(
            "dice_loss",
            &[p],
            &move |t, v| loss::dice_loss(t, v[0], &g, loss::DICE_EPS),
            OP_STEP,
            OP_THRESHOLD,
            fault,
            &never,
        )?);
    }

    // A clear peak per image keeps the argmax away from ties.
    let mut feats = uniform_tensor(&mut rng, &[2, 3, 4, 4], 0.0, 1.0);
    for (n, peak) in [(0, 5), (1, 10)] {
        for c in 0..3 {
            feats.data_mut()[(n * 3 + c) * 16 + peak] += 1.0;
        }
    }
    reports.push(check_function(
        "attention_map",
        &[feats],
        &|t, v| {
            let a = loss::attention_map(t, v[0])?;
            project(t, a, seed)
        },
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &|_, e, xs| near_attention_argmax_tie(&xs[0], e, 4.0 * OP_STEP),
    )?);

    let av = uniform_tensor(&mut rng, &[2, 1, 4, 4], 0.0, 1.0);
    let ah = uniform_tensor(&mut rng, &[2, 1, 4, 4], 0.0, 1.0);
    let m = loss::pool_mask(&binary_tensor(&mut rng, &[2, 1, 16, 16]))?;
    reports.push(check_function(
        "attention_loss",
        &[av, ah],
        &move |t, v| Ok(loss::attention_loss(t, v[0], v[1], &m)?.loss),
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &never,
    )?);

    let logits = random_tensor(&mut rng, &[2, 1, 8, 8]);
    let feats = uniform_tensor(&mut rng, &[2, 3, 2, 2], 0.0, 1.0);
    let feats_h = uniform_tensor(&mut rng, &[2, 3, 2, 2], 0.0, 1.0);
    let g = binary_tensor(&mut rng, &[2, 1, 8, 8]);
    reports.push(check_function(
        "total_loss",
        &[logits, feats, feats_h],
        &move |t, v| Ok(loss::total_loss(t, v[0], &g, (v[1], v[2]), LossWeights::default())?.total),
        OP_STEP,
        OP_THRESHOLD,
        fault,
        &|i, e, xs| i > 0 && near_attention_argmax_tie(&xs[i], e, 4.0 * OP_STEP),
    )?);

    Ok(reports)
}

pub fn binary_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
}

/// True when element `e` sits in a 2×2 window whose top two values are within `margin`.
fn near_pool_tie(x: &Tensor<f64>, e: usize, margin: f64) -> bool {
    let [_, _, h, w] = x.dims4().expect("rank-4");
    let plane = e / (h * w);
    let (y, xx) = ((e % (h * w)) / w, e % w);
    let top = plane * h * w + (y / 2 * 2) * w + xx / 2 * 2;
    let mut vals = [x.data()[top], x.data()[top + 1], x.data()[top + w], x.data()[top + w + 1]];
    vals.sort_by(|a, b| b.total_cmp(a));
    vals[0] - vals[1] < margin
}

/// True when the channel-mean maximum of element `e`'s image is not unique within `margin`.
fn near_attention_argmax_tie(x: &Tensor<f64>, e: usize, margin: f64) -> bool {
    let [_, c, h, w] = x.dims4().expect("rank-4");
    let b = e / (c * h * w);
    let hw = h * w;
    let mut means = vec![0.0; hw];
    for ch in 0..c {
        for (m, v) in means.iter_mut().zip(&x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw]) {
            *m += v / c as f64;
        }
    }
    means.sort_by(|a, b| b.total_cmp(a));
    means[0] - means[1] < margin
}

/// Finite-difference check of the first vertical and horizontal encoder blocks
/// with respect to their input and every trainable parameter, in training mode.
pub fn block_suite(seed: u64, fault: Option<&str>) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_tensor(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
    let mut reports = Vec::new();
    for (branch, label) in [(0usize, "vcrb1"), (1, "hcrb1")] {
        let mut net = Network::<f64>::new(NetworkVariant::Crosslink, 2)?;
        init_weights(&mut net, seed.wrapping_add(branch as u64), 0.5);

        let eval = |net: &mut Network<f64>, x: &Tensor<f64>| -> Result<f64> {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone(), false);
            let (y, _) = net.block_forward(&mut t, branch, 1, xv, Mode::Train)?;
            let s = project(&mut t, y, seed)?;
            Ok(t.value(s).data()[0])
        };

        let mut tape = Tape::new();
        if let Some(op) = fault {
            tape.inject_fault(op);
        }
        let xv = tape.leaf(x.clone(), true);
        let (y, bindings) = net.block_forward(&mut tape, branch, 1, xv, Mode::Train)?;
        let s = project(&mut tape, y, seed)?;
        let grads = tape.backward(s)?;

        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut xs = x.clone();
        let gx = grads.get(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);
        for e in 0..x.len() {
            let orig = xs.data()[e];
            xs.data_mut()[e] = orig + BLOCK_STEP;
            let plus = eval(&mut net, &xs)?;
            xs.data_mut()[e] = orig - BLOCK_STEP;
            let minus = eval(&mut net, &xs)?;
            xs.data_mut()[e] = orig;
            worst = worst.max(relative_error(gx[e], (plus - minus) / (2.0 * BLOCK_STEP), DEEP_FLOOR));
            checked += 1;
        }
        for (id, var) in bindings {
            if !net.params().entry(id).kind.trainable() {
                continue;
            }
            let analytic = grads.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; net.params().get(id).len()]);
            for (e, &a) in analytic.iter().enumerate() {
                let orig = net.params().get(id).data()[e];
                net.params_mut().get_mut(id).data_mut()[e] = orig + BLOCK_STEP;
                let plus = eval(&mut net, &x)?;
                net.params_mut().get_mut(id).data_mut()[e] = orig - BLOCK_STEP;
                let minus = eval(&mut net, &x)?;
                net.params_mut().get_mut(id).data_mut()[e] = orig;
                let n = (plus - minus) / (2.0 * BLOCK_STEP);
                worst = worst.max(relative_error(a, n, DEEP_FLOOR));
                checked += 1;
            }
        }
        reports.push(CheckReport {
            name: format!("{label} block"),
            checked,
            skipped: 0,
            max_rel_error: worst,
            threshold: BATCHNORM_THRESHOLD,
        });
    }
    Ok(reports)
}

/// Spot-checks `samples` randomly chosen parameters of a full network forward
/// plus the combined loss, on one `1×1×size×size` image.
pub fn net_check(
    variant: NetworkVariant,
    base_width: usize,
    size: usize,
    samples: usize,
    seed: u64,
    fault: Option<&str>,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::new(variant, base_width)?;
    init_weights(&mut net, seed, crate::train::init::INIT_STD);
    let image = uniform_tensor(&mut rng, &[1, 1, size, size], 0.0, 1.0);
    let gt = blob_mask(size);
    let weights = LossWeights::default();

    let eval = |net: &mut Network<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &image, Mode::Train)?;
        let feats = out.attention_features(loss::DEFAULT_ATTENTION_BLOCK)?;
        let l = loss::total_loss(&mut tape, out.logits, &gt, feats, weights)?;
        Ok(tape.value(l.total).data()[0])
    };

    let mut tape = Tape::new();
    if let Some(op) = fault {
        tape.inject_fault(op);
    }
    let out = net.forward(&mut tape, &image, Mode::Train)?;
    let feats = out.attention_features(loss::DEFAULT_ATTENTION_BLOCK)?;
    let l = loss::total_loss(&mut tape, out.logits, &gt, feats, weights)?;
    let grads = tape.backward(l.total)?;
    let bound: std::collections::HashMap<_, _> = out.bindings.iter().copied().collect();
    drop(tape);

    let trainable: Vec<_> = net.params().trainable_ids().collect();
    let base = eval(&mut net)?;
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    while checked < samples && skipped < NET_MAX_SKIPS * samples {
        let id = trainable[rng.random_range(0..trainable.len())];
        let e = rng.random_range(0..net.params().get(id).len());
        let analytic = grads.get(bound[&id]).map_or(0.0, |g| g[e]);
        let orig = net.params().get(id).data()[e];
        net.params_mut().get_mut(id).data_mut()[e] = orig + NET_STEP;
        let plus = eval(&mut net)?;
        net.params_mut().get_mut(id).data_mut()[e] = orig - NET_STEP;
        let minus = eval(&mut net)?;
        net.params_mut().get_mut(id).data_mut()[e] = orig;
        // One-sided slopes disagree only when the step straddles a ReLU or max-pool kink.
        let (fwd, bwd) = ((plus - base) / NET_STEP, (base - minus) / NET_STEP);
        if relative_error(fwd, bwd, DEEP_FLOOR) > NET_THRESHOLD {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * NET_STEP);
        worst = worst.max(relative_error(analytic, numeric, DEEP_FLOOR));
        checked += 1;
    }
    if checked < samples {
        worst = f64::INFINITY;
    }
    Ok(CheckReport {
        name: format!("{variant} network (width {base_width}, {size}x{size})"),
        checked,
        skipped,
        max_rel_error: worst,
        threshold: NET_THRESHOLD,
    })
}

/// Disc-shaped `1×1×size×size` mask covering roughly 5% of the image.
pub fn blob_mask(size: usize) -> Tensor<f64> {
    let c = size as f64 * 0.4;
    let r = size as f64 * 0.13;
    Tensor::from_fn([1, 1, size, size], |i| {
        let (y, x) = ((i / size) as f64, (i % size) as f64);
        if (y - c).powi(2) + (x - c * 1.2).powi(2) <= r * r {
            1.0
        } else {
            0.0
        }
    })
}
