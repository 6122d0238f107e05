//! Small learnable datasets shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use ltlab::data::{Dataset, Split, Splits};
use ltlab::nn::arch::NetworkArch;
use ltlab::{RngStream, Tensor};

/// Noisy copies of one random prototype per class, flat `[0, 1]` pixels.
pub fn prototype_splits(inputs: usize, classes: usize, sizes: [usize; 3], seed: u64) -> Splits {
    let mut rng = RngStream::new("prototypes", seed);
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..inputs).map(|_| rng.uniform()).collect())
        .collect();
    let mut make = |n: usize, split: Split| {
        let mut pixels = Vec::with_capacity(n * inputs);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = (rng.next_u64() % classes as u64) as usize;
            pixels.extend(
                protos[c]
                    .iter()
                    .map(|&p| (p + 0.25 * rng.standard_normal()).clamp(0.0, 1.0) as f32),
            );
            labels.push(c as u8);
        }
        Dataset::new(Tensor::from_vec(&[n, 1, 1, inputs], pixels).unwrap(), labels, split).unwrap()
    };
    Splits {
        train: make(sizes[0], Split::Train),
        val: make(sizes[1], Split::Val),
        test: make(sizes[2], Split::Test),
    }
}

/// A dense net and a dataset it can learn in a few hundred steps.
pub fn toy_problem(seed: u64) -> (NetworkArch, Splits) {
    let arch = NetworkArch::dense(16, &[24, 12], 4);
    (arch, prototype_splits(16, 4, [600, 120, 200], seed))
}
