use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::arch::NetworkArch;
use crate::tensor::Real;

/// Binary mask for one kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    shape: Vec<usize>,
    bits: Vec<bool>,
    ones: usize,
}

impl LayerMask {
    pub fn new(shape: &[usize], bits: Vec<bool>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != bits.len() {
            return Err(Error::Shape {
                context: "LayerMask::new",
                expected: shape.to_vec(),
                actual: vec![bits.len()],
            });
        }
        let ones = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            shape: shape.to_vec(),
            bits,
            ones,
        })
    }

    pub fn filled(shape: &[usize], value: bool) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            bits: vec![value; len],
            ones: if value { len } else { 0 },
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn ones(&self) -> usize {
        self.ones
    }

    pub fn remaining_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.ones as f64 / self.bits.len() as f64
    }

    pub fn is_subset_of(&self, other: &LayerMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// `w ⊙ m`.
    pub fn apply<T: Real>(&self, weights: &[T]) -> Vec<T> {
        weights
            .iter()
            .zip(&self.bits)
            .map(|(&w, &b)| if b { w } else { T::zero() })
            .collect()
    }
}

/// Per-layer binary masks aligned with an architecture's kernels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    layers: Vec<LayerMask>,
}

impl Mask {
    pub fn new(layers: Vec<LayerMask>) -> Self {
        Self { layers }
    }

    pub fn ones(arch: &NetworkArch) -> Self {
        Self::filled(arch, true)
    }

    pub fn zeros(arch: &NetworkArch) -> Self {
        Self::filled(arch, false)
    }

    fn filled(arch: &NetworkArch, value: bool) -> Self {
        Self {
            layers: arch
                .kernels()
                .iter()
                .map(|k| LayerMask::filled(&k.shape, value))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerMask {
        &self.layers[i]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn keep_counts(&self) -> Vec<usize> {
        self.layers.iter().map(LayerMask::ones).collect()
    }

    pub fn total_ones(&self) -> usize {
        self.layers.iter().map(LayerMask::ones).sum()
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(LayerMask::len).sum()
    }

    /// Fraction of all maskable weights still unmasked.
    pub fn remaining_fraction(&self) -> f64 {
        let len = self.total_len();
        if len == 0 {
            return 0.0;
        }
        self.total_ones() as f64 / len as f64
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.layers.len() == other.layers.len() && self.layers.iter().zip(&other.layers).all(|(a, b)| a.is_subset_of(b))
    }

    pub fn check_arch(&self, arch: &NetworkArch) -> Result<()> {
        if self.layers.len() != arch.num_kernels() {
            return Err(Error::Shape {
                context: "mask layer count",
                expected: vec![arch.num_kernels()],
                actual: vec![self.layers.len()],
            });
        }
        for (m, spec) in self.layers.iter().zip(arch.kernels()) {
            if m.shape() != spec.shape.as_slice() {
                return Err(Error::Shape {
                    context: "mask vs kernel",
                    expected: spec.shape.clone(),
                    actual: m.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_count_tracks_bits() {
        let m = LayerMask::new(&[2, 2], vec![true, false, true, true]).unwrap();
        assert_eq!(m.ones(), 3);
        assert_eq!(m.remaining_fraction(), 0.75);
        assert_eq!(m.apply(&[1.0f64, 2.0, 3.0, 4.0]), vec![1.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn subset_relation() {
        let a = LayerMask::new(&[3], vec![true, false, false]).unwrap();
        let b = LayerMask::new(&[3], vec![true, true, false]).unwrap();
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
    }
}
