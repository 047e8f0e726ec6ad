use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::net::{Network, ParamKind};
use crate::tensor::{Element, Tensor};

pub const INIT_STD: f64 = 0.02;

/// Conv weights ~ N(0, std²) drawn in parameter declaration order from one
/// seeded stream; biases and BN shifts 0, BN scales 1, running stats reset.
pub fn init_weights<T: Element>(net: &mut Network<T>, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite std");
    let ids: Vec<_> = net.params().ids().collect();
    for id in ids {
        let kind = net.params().entry(id).kind;
        let shape = net.params().get(id).shape().to_vec();
        let value = match kind {
            ParamKind::ConvWeight => Tensor::from_fn(shape, |_| T::of(normal.sample(&mut rng))),
            ParamKind::BnGamma | ParamKind::BnRunningVar => Tensor::full(shape, T::one()),
            ParamKind::ConvBias | ParamKind::BnBeta | ParamKind::BnRunningMean => Tensor::zeros(shape),
        };
        *net.params_mut().get_mut(id) = value;
    }
}
