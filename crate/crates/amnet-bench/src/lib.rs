//! Shared fixtures for the criterion benches: seeded models and inputs at
//! the two geometries we care about (desk-scale 16/48 and full-scale 64/192).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use amnet_core::oracle::random_tensor;
use amnet_core::params::ParamStore;
use amnet_core::{AmNet, Dims, ModelConfig, Tensor};

pub fn model_cfg(template: usize) -> ModelConfig {
    ModelConfig { template_size: template, roi_size: 3 * template, ..ModelConfig::default() }
}

pub fn net_and_store(template: usize, seed: u64) -> (AmNet, ParamStore<f32>) {
    let net = AmNet::new(model_cfg(template)).expect("valid config");
    let store = net.init_params::<f32>(seed);
    (net, store)
}

pub fn rand_input(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    rand_tensor(Dims::new(1, c, h, w), seed)
}

pub fn rand_tensor(dims: Dims, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tensor(dims, &mut rng)
}
