use crosslink::autodiff::Tape;
use crosslink::data::synth::SynthSpec;
use crosslink::data::{mask_to_tensor, Dataset, Sample, Split};
use crosslink::loss::{self, LossWeights};
use crosslink::net::params::ParamSink;
use crosslink::net::{Checkpoint, Mode, Network, NetworkVariant, ParamId, ParamKind, ParamStore};
use crosslink::tensor::Tensor;
use crosslink::train::*;
use proptest::prelude::*;

fn scalar_param(v: f64) -> (ParamStore<f64>, ParamId) {
    let mut s = ParamStore::new();
    let id = s.declare("theta".into(), ParamKind::ConvWeight, vec![1]);
    s.get_mut(id).data_mut()[0] = v;
    (s, id)
}

proptest! {
    #[test]
    fn first_step_has_magnitude_lr(theta in -5.0f64..5.0, g in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], lr in 1e-5f64..1e-1) {
        let (mut s, id) = scalar_param(theta);
        let mut st = AdamState::new(1);
        adam_step(&mut s, &[(id, &[g])], &mut st, &AdamConfig::new(lr, 0.0));
        let moved = s.get(id).data()[0] - theta;
        // m̂ = g and v̂ = g² after one step, so the move is lr·|g|/(|g|+ε)
        let expected = -lr * g / (g.abs() + 1e-8);
        prop_assert!((moved - expected).abs() <= 1e-12 * (1.0 + theta.abs()));
    }
}

#[test]
fn zero_gradient_leaves_parameters() {
    let (mut s, id) = scalar_param(0.7);
    let mut st = AdamState::new(1);
    for _ in 0..10 {
        assert_eq!(adam_step(&mut s, &[(id, &[0.0])], &mut st, &AdamConfig::new(0.01, 0.0)), StepOutcome::Applied);
    }
    assert_eq!(s.get(id).data()[0], 0.7);

    // decoupled decay alone shrinks by lr·wd per step
    adam_step(&mut s, &[(id, &[0.0])], &mut st, &AdamConfig::new(0.01, 0.5));
    assert!((s.get(id).data()[0] - 0.7 * (1.0 - 0.005)).abs() < 1e-15);
}

#[test]
fn non_finite_gradient_is_skipped() {
    let (mut s, id) = scalar_param(1.0);
    let mut st = AdamState::new(1);
    let out = adam_step(&mut s, &[(id, &[f64::NAN])], &mut st, &AdamConfig::new(0.1, 0.0));
    assert_eq!(out, StepOutcome::SkippedNonFinite);
    assert_eq!((st.step, st.skipped, s.get(id).data()[0]), (0, 1, 1.0));
}

#[test]
fn minimizes_a_parabola() {
    let (mut s, id) = scalar_param(1.0);
    let mut st = AdamState::new(1);
    let cfg = AdamConfig::new(0.1, 0.0);
    for _ in 0..500 {
        let g = 2.0 * s.get(id).data()[0];
        adam_step(&mut s, &[(id, &[g])], &mut st, &cfg);
    }
    let theta = s.get(id).data()[0];
    assert!(theta.abs() < 1e-3, "theta = {theta}");
}

#[test]
fn initial_weight_statistics() {
    let mut net = Network::<f64>::new(NetworkVariant::Crosslink, 32).unwrap();
    init_weights(&mut net, 2, INIT_STD);
    let mut conv = Vec::new();
    for e in net.params().entries() {
        match e.kind {
            ParamKind::ConvWeight => conv.extend_from_slice(e.value.data()),
            ParamKind::BnGamma | ParamKind::BnRunningVar => assert!(e.value.data().iter().all(|&v| v == 1.0), "{}", e.name),
            _ => assert!(e.value.data().iter().all(|&v| v == 0.0), "{}", e.name),
        }
    }
    let n = conv.len() as f64;
    let mean = conv.iter().sum::<f64>() / n;
    let std = (conv.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(n > 1e6);
    assert!(mean.abs() < 5.0 * INIT_STD / n.sqrt(), "mean {mean}");
    assert!((std / INIT_STD - 1.0).abs() < 0.01, "std {std}");
}

fn tiny_data(n_train: usize, seed: u64) -> Dataset {
    Dataset::synthesize(&SynthSpec {
        height: 32,
        width: 32,
        n_train,
        n_val: 2,
        n_test: 0,
        area_range: (0.02, 0.08),
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn batch(samples: &[&Sample]) -> (Tensor<f64>, Tensor<f64>) {
    let x: Vec<Tensor<f64>> = samples.iter().map(|s| s.image.to_tensor()).collect();
    let m: Vec<Tensor<f64>> = samples.iter().map(|s| mask_to_tensor(&s.mask)).collect();
    (Tensor::stack_batch(&x).unwrap(), Tensor::stack_batch(&m).unwrap())
}

/// Per top-level block: (entries with any gradient, fraction of exactly-zero gradient entries).
fn gradient_census(weights: LossWeights) -> Vec<(String, bool, f64)> {
    let ds = tiny_data(2, 1);
    let (x, gt) = batch(&ds.split(Split::Train));
    let mut net = Network::<f64>::new(NetworkVariant::Crosslink, 4).unwrap();
    init_weights(&mut net, 3, 0.1);
    let mut tape = Tape::new();
    let out = net.forward(&mut tape, &x, Mode::Train).unwrap();
    let feats = out.attention_features(3).unwrap();
    let l = loss::total_loss(&mut tape, out.logits, &gt, feats, weights).unwrap();
    let grads = tape.backward(l.total).unwrap();
    let mut blocks: Vec<(String, usize, usize)> = Vec::new();
    for &(id, var) in &out.bindings {
        let entry = net.params().entry(id);
        if entry.kind != ParamKind::ConvWeight {
            continue;
        }
        let block = entry.name.split('.').next().unwrap().to_string();
        let (zeros, total) = match grads.get(var) {
            Some(g) => (g.iter().filter(|v| **v == 0.0).count(), g.len()),
            None => (entry.value.len(), entry.value.len()),
        };
        match blocks.iter_mut().find(|(b, _, _)| *b == block) {
            Some(row) => {
                row.1 += zeros;
                row.2 += total;
            }
            None => blocks.push((block, zeros, total)),
        }
    }
    blocks.into_iter().map(|(b, z, t)| (b, z < t, z as f64 / t as f64)).collect()
}

#[test]
fn gradients_reach_every_block() {
    let census = gradient_census(LossWeights::default());
    assert_eq!(census.len(), 10 + 5 + 1);
    for (block, _, zero_frac) in &census {
        assert!(*zero_frac < 0.5, "{block}: {:.1}% zero gradients", 100.0 * zero_frac);
    }
}

#[test]
fn attention_term_trains_only_the_early_encoder() {
    let census = gradient_census(LossWeights::new(0.0, 0.0, 1.0).unwrap());
    for (block, touched, _) in &census {
        let depth: Option<usize> = block.strip_prefix("vcrb").or(block.strip_prefix("hcrb")).and_then(|d| d.parse().ok());
        match depth {
            Some(k) if k <= 3 => assert!(*touched, "{block} got no attention gradient"),
            _ => assert!(!touched, "{block} should not depend on the attention term"),
        }
    }
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        base_width: 2,
        batch_size: 2,
        epochs,
        learning_rate: 3e-3,
        precision: crosslink::tensor::DType::F64,
        seed: 5,
        ..TrainConfig::desk()
    }
}

#[test]
fn training_lowers_the_loss() {
    let ds = tiny_data(6, 2);
    let cfg = small_config(6);
    let out = train::<f64>(&cfg, &ds.split(Split::Train), &ds.split(Split::Val), TrainState::fresh(&cfg).unwrap(), &mut |_| {}).unwrap();
    let losses: Vec<f64> = out
        .log
        .records
        .iter()
        .filter_map(|r| match r {
            Record::Epoch { train_loss, .. } => Some(*train_loss),
            _ => None,
        })
        .collect();
    assert_eq!(losses.len(), 6);
    assert!(losses[5] < losses[0], "{losses:?}");
    assert!(out.aborted.is_none());
    assert_eq!(out.timing.epoch_seconds.len(), 6);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let ds = tiny_data(4, 3);
    let (tr, va) = (ds.split(Split::Train), ds.split(Split::Val));
    let full_cfg = TrainConfig { augment: true, ..small_config(4) };
    let full = train::<f64>(&full_cfg, &tr, &va, TrainState::fresh(&full_cfg).unwrap(), &mut |_| {}).unwrap();

    let half_cfg = TrainConfig { epochs: 2, ..full_cfg.clone() };
    let half = train::<f64>(&half_cfg, &tr, &va, TrainState::fresh(&half_cfg).unwrap(), &mut |_| {}).unwrap();
    let bytes = half.last.to_checkpoint().to_bytes();
    let resumed_state = TrainState::<f64>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(resumed_state.epochs_done, 2);
    let resumed = train::<f64>(&full_cfg, &tr, &va, resumed_state, &mut |_| {}).unwrap();

    assert_eq!(full.last.to_checkpoint().to_bytes(), resumed.last.to_checkpoint().to_bytes());
    assert_eq!(full.best.to_bytes(), resumed.best.to_bytes());
}

#[test]
fn resume_rejects_mismatched_width() {
    let ds = tiny_data(2, 4);
    let cfg = small_config(1);
    let state = TrainState::<f64>::fresh(&TrainConfig { base_width: 4, ..cfg.clone() }).unwrap();
    assert!(train::<f64>(&cfg, &ds.split(Split::Train), &[], state, &mut |_| {}).is_err());
}
