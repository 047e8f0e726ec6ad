//! Adam with decoupled weight decay.
//!
//! `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`, where the shrink uses `θ` before the step.

use crate::error::{Error, Result};
use crate::net::{ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Moment buffers, indexed by parameter id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub skipped: u64,
    pub m: Vec<Option<Vec<T>>>,
    pub v: Vec<Option<Vec<T>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held a NaN or infinity; nothing was changed except the skip counter.
    SkippedNonFinite,
}

impl<T: Element> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            skipped: 0,
            m: vec![None; len],
            v: vec![None; len],
        }
    }

    /// Named tensors for checkpointing (`opt/m/<param>`, `opt/v/<param>`, `opt/step`, `opt/skipped`).
    pub fn export(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![
            ("opt/step".to_string(), Tensor::scalar(T::of(self.step as f64))),
            ("opt/skipped".to_string(), Tensor::scalar(T::of(self.skipped as f64))),
        ];
        for id in store.ids() {
            let entry = store.entry(id);
            for (tag, buf) in [("m", &self.m), ("v", &self.v)] {
                if let Some(values) = buf.get(id.index()).and_then(Option::as_ref) {
                    out.push((
                        format!("opt/{tag}/{}", entry.name),
                        Tensor::new(entry.value.shape().to_vec(), values.clone()).expect("moment shape"),
                    ));
                }
            }
        }
        out
    }

    pub fn import(store: &ParamStore<T>, lookup: impl Fn(&str) -> Option<Tensor<T>>) -> Result<Self> {
        let scalar = |name: &str| -> Result<u64> {
            let t = lookup(name).ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
            Ok(t.data().first().map_or(0.0, |v| v.as_f64()) as u64)
        };
        let mut state = Self::new(store.len());
        state.step = scalar("opt/step")?;
        state.skipped = scalar("opt/skipped")?;
        for id in store.ids() {
            let entry = store.entry(id);
            for (tag, buf) in [("m", &mut state.m), ("v", &mut state.v)] {
                if let Some(t) = lookup(&format!("opt/{tag}/{}", entry.name)) {
                    if t.shape() != entry.value.shape() {
                        return Err(Error::Checkpoint(format!("optimizer {tag} for {} has wrong shape", entry.name)));
                    }
                    buf[id.index()] = Some(t.into_data());
                }
            }
        }
        Ok(state)
    }
}

/// One update of every parameter in `grads`.
pub fn adam_step<T: Element>(
    store: &mut ParamStore<T>,
    grads: &[(ParamId, &[T])],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> StepOutcome {
    if grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        state.skipped += 1;
        return StepOutcome::SkippedNonFinite;
    }
    if state.m.len() < store.len() {
        state.m.resize(store.len(), None);
        state.v.resize(store.len(), None);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));
    let (lr, eps, shrink) = (T::of(cfg.lr), T::of(cfg.eps), T::of(cfg.lr * cfg.weight_decay));
    for &(id, g) in grads {
        let n = g.len();
        let m = state.m[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
        let v = state.v[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
        let theta = store.get_mut(id).data_mut();
        assert_eq!(theta.len(), n, "gradient length mismatch");
        for i in 0..n {
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            let mhat = m[i] * inv_c1;
            let vhat = v[i] * inv_c2;
            let old = theta[i];
            theta[i] = old - lr * mhat / (vhat.sqrt() + eps) - shrink * old;
        }
    }
    StepOutcome::Applied
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::ParamSink;
    use crate::net::ParamKind;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.declare("theta".into(), ParamKind::ConvWeight, vec![1]);
        s.get_mut(id).data_mut()[0] = v;
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.3);
        let mut st = AdamState::new(1);
        let cfg = AdamConfig::new(0.01, 0.0);
        adam_step(&mut s, &[(id, &[1.0])], &mut st, &cfg);
        let expected = 0.3 - 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_zero_decay_is_noop() {
        let (mut s, id) = scalar_store(0.7);
        let mut st = AdamState::new(1);
        for _ in 0..5 {
            adam_step(&mut s, &[(id, &[0.0])], &mut st, &AdamConfig::new(0.1, 0.0));
        }
        assert_eq!(s.get(id).data()[0], 0.7);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let (mut s, id) = scalar_store(0.7);
        let mut st = AdamState::new(1);
        let out = adam_step(&mut s, &[(id, &[f64::NAN])], &mut st, &AdamConfig::new(0.1, 0.0));
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!((st.step, st.skipped), (0, 1));
        assert_eq!(s.get(id).data()[0], 0.7);
    }

    #[test]
    fn decay_shrinks_multiplicatively() {
        let (mut s, id) = scalar_store(2.0);
        let mut st = AdamState::new(1);
        adam_step(&mut s, &[(id, &[0.0])], &mut st, &AdamConfig::new(0.1, 0.005));
        assert!((s.get(id).data()[0] - (2.0 - 0.1 * 0.005 * 2.0)).abs() < 1e-15);
    }
}
