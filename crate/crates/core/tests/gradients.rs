//! Central finite-difference checks of every analytic gradient in f64.

mod common;

use common::gradcheck::{check_network, loss, random_batch, random_params, rel_err, EPS};
use ltlab::nn::arch::{InputShape, NetworkArch};
use ltlab::nn::engine::softmax_cross_entropy;
use ltlab::nn::network::loss_and_grads;
use ltlab::supermask::{learned_mask_loss_and_grad, LearnedMask, MaskSampling};
use ltlab::{Mask, RngStream};

const TOL: f64 = 1e-4;

#[test]
fn dense_gradients_match_finite_differences() {
    let arch = NetworkArch::dense(7, &[6, 5], 4);
    let worst = check_network(&arch, 3);
    assert!(worst <= TOL, "dense worst relative error {worst:e}");
}

#[test]
fn conv_and_pool_gradients_match_finite_differences() {
    let input = InputShape {
        height: 6,
        width: 6,
        channels: 2,
    };
    let arch = NetworkArch::conv(input, &[&[3, 3]], &[5], 3);
    let worst = check_network(&arch, 5);
    assert!(worst <= TOL, "conv worst relative error {worst:e}");
}

#[test]
fn two_stage_conv_gradients_match_finite_differences() {
    let input = InputShape {
        height: 4,
        width: 4,
        channels: 3,
    };
    let arch = NetworkArch::conv(input, &[&[2], &[4]], &[], 5);
    let worst = check_network(&arch, 9);
    assert!(worst <= TOL, "two-stage conv worst relative error {worst:e}");
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = RngStream::new("logits", 1);
    let (n, classes) = (3, 5);
    let logits: Vec<f64> = (0..n * classes).map(|_| 3.0 * rng.standard_normal()).collect();
    let labels = [0u8, 4, 2];
    let (_, grad) = softmax_cross_entropy(&logits, &labels, classes);
    for i in 0..logits.len() {
        let mut z = logits.clone();
        z[i] += EPS;
        let up = softmax_cross_entropy(&z, &labels, classes).0;
        z[i] -= 2.0 * EPS;
        let down = softmax_cross_entropy(&z, &labels, classes).0;
        let numeric = (up - down) / (2.0 * EPS);
        assert!(rel_err(grad[i], numeric) <= TOL, "logit {i}: {} vs {numeric}", grad[i]);
    }
}

#[test]
fn masked_network_gradient_matches_on_kept_entries() {
    let arch = NetworkArch::dense(5, &[4], 3);
    let params = random_params(&arch, 11);
    let mut rng = RngStream::new("mask", 2);
    let layers = arch
        .kernels()
        .iter()
        .map(|k| ltlab::LayerMask::new(&k.shape, (0..k.len()).map(|_| rng.coin()).collect()).unwrap())
        .collect();
    let mask = Mask::new(layers);
    let (x, y) = random_batch(&arch, 3, 4);
    let (_, grads) = loss_and_grads(&arch, &params, &mask, &x, &y).unwrap();
    for l in 0..params.layers.len() {
        for i in 0..params.layers[l].kernel.len() {
            if !mask.layer(l).get(i) {
                assert_eq!(grads.kernels[l][i], 0.0);
                continue;
            }
            let mut p = params.clone();
            p.layers[l].kernel.as_mut_slice()[i] += EPS;
            let up = loss(&arch, &p, &mask, &x, &y);
            p.layers[l].kernel.as_mut_slice()[i] -= 2.0 * EPS;
            let down = loss(&arch, &p, &mask, &x, &y);
            let numeric = (up - down) / (2.0 * EPS);
            assert!(rel_err(grads.kernels[l][i], numeric) <= TOL);
        }
    }
}

#[test]
fn learned_mask_gradient_matches_expected_mask_finite_differences() {
    let input = InputShape {
        height: 4,
        width: 4,
        channels: 1,
    };
    let arch = NetworkArch::conv(input, &[&[2]], &[4], 3);
    let weights = random_params(&arch, 21);
    let mut rng = RngStream::new("logits", 3);
    let mut mask = LearnedMask::<f64>::constant(&arch, 0.0);
    for l in &mut mask.logits {
        for m in l.as_mut_slice() {
            *m = rng.standard_normal();
        }
    }
    let (x, y) = random_batch(&arch, 4, 8);
    let mut unused = RngStream::new("unused", 0);
    let (_, grads) = learned_mask_loss_and_grad(
        &arch,
        &weights,
        &mask,
        &x,
        &y,
        MaskSampling::Expected,
        false,
        &mut unused,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (l, layer_grads) in grads.iter().enumerate() {
        for (i, &g) in layer_grads.iter().enumerate() {
            let mut m = mask.clone();
            m.logits[l].as_mut_slice()[i] += EPS;
            let up =
                learned_mask_loss_and_grad(&arch, &weights, &m, &x, &y, MaskSampling::Expected, false, &mut unused)
                    .unwrap()
                    .0;
            m.logits[l].as_mut_slice()[i] -= 2.0 * EPS;
            let down =
                learned_mask_loss_and_grad(&arch, &weights, &m, &x, &y, MaskSampling::Expected, false, &mut unused)
                    .unwrap()
                    .0;
            worst = worst.max(rel_err(g, (up - down) / (2.0 * EPS)));
        }
    }
    assert!(worst <= 1e-3, "learned-mask worst relative error {worst:e}");
}
