#![allow(dead_code)]

use hjreach::sirennet::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One hidden unit: `V = w_out sin(omega (a t + b.x + c)) + d`.
pub fn single_unit(omega: f64, a: f64, b: [f64; 3], c: f64, w_out: f64, d: f64) -> (NetworkArch, NetworkParams) {
    let mut arch = NetworkArch::sine(vec![1]);
    arch.omega0_first = omega;
    let data = vec![a, b[0], b[1], b[2], c, w_out, d];
    let params = NetworkParams::from_flat(&arch, data).unwrap();
    (arch, params)
}

pub fn random_params(arch: &NetworkArch, seed: u64, scale: f64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..arch.param_count()).map(|_| rng.gen_range(-scale..scale)).collect();
    NetworkParams::from_flat(arch, data).unwrap()
}
