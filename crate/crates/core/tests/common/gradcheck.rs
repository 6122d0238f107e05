//! Central finite differences against the analytic network gradients.

use ltlab::nn::arch::NetworkArch;
use ltlab::nn::network::loss_and_grads;
use ltlab::nn::params::ParameterSet;
use ltlab::{Mask, RngStream, Tensor};

pub const EPS: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        return (analytic - numeric).abs();
    }
    (analytic - numeric).abs() / scale
}

/// Glorot kernels and small random biases.
pub fn random_params(arch: &NetworkArch, seed: u64) -> ParameterSet<f64> {
    let mut rng = RngStream::new("params", seed);
    let mut params = ParameterSet::<f64>::init(arch, &mut rng).unwrap();
    for layer in &mut params.layers {
        for b in layer.bias.as_mut_slice() {
            *b = 0.1 * rng.standard_normal();
        }
    }
    params
}

pub fn random_batch(arch: &NetworkArch, n: usize, seed: u64) -> (Tensor<f64>, Vec<u8>) {
    let mut rng = RngStream::new("batch", seed);
    let per = arch.input().len();
    let x: Vec<f64> = (0..n * per).map(|_| rng.uniform()).collect();
    let y: Vec<u8> = (0..n).map(|_| (rng.next_u64() % arch.classes() as u64) as u8).collect();
    (Tensor::from_vec(&[n, per], x).unwrap(), y)
}

pub fn loss(arch: &NetworkArch, params: &ParameterSet<f64>, mask: &Mask, x: &Tensor<f64>, y: &[u8]) -> f64 {
    loss_and_grads(arch, params, mask, x, y).unwrap().0
}

/// Worst relative error over every kernel and bias entry.
pub fn check_network(arch: &NetworkArch, seed: u64) -> f64 {
    let params = random_params(arch, seed);
    let mask = Mask::ones(arch);
    let (x, y) = random_batch(arch, 4, seed + 1);
    let (_, grads) = loss_and_grads(arch, &params, &mask, &x, &y).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..params.layers.len() {
        for i in 0..params.layers[l].kernel.len() {
            let mut p = params.clone();
            p.layers[l].kernel.as_mut_slice()[i] += EPS;
            let up = loss(arch, &p, &mask, &x, &y);
            p.layers[l].kernel.as_mut_slice()[i] -= 2.0 * EPS;
            let down = loss(arch, &p, &mask, &x, &y);
            worst = worst.max(rel_err(grads.kernels[l][i], (up - down) / (2.0 * EPS)));
        }
        for i in 0..params.layers[l].bias.len() {
            let mut p = params.clone();
            p.layers[l].bias.as_mut_slice()[i] += EPS;
            let up = loss(arch, &p, &mask, &x, &y);
            p.layers[l].bias.as_mut_slice()[i] -= 2.0 * EPS;
            let down = loss(arch, &p, &mask, &x, &y);
            worst = worst.max(rel_err(grads.biases[l][i], (up - down) / (2.0 * EPS)));
        }
    }
    worst
}
