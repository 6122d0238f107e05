use crate::error::{Error, Result};
use crate::nn::arch::NetworkArch;
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

/// Glorot normal: i.i.d. `N(0, 2 / (fan_in + fan_out))`.
///
/// Dense kernels are `[in, out]`; conv kernels `[kh, kw, in, out]` and their
/// fans are scaled by the receptive field.
pub fn glorot_normal_init<T: Real>(shape: &[usize], rng: &mut RngStream) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(shape)?;
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| T::of(std * rng.standard_normal())).collect();
    Tensor::from_vec(shape, data)
}

fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "glorot init needs a non-empty shape",
        });
    }
    Ok(match shape.len() {
        1 => (shape[0], shape[0]),
        2 => (shape[0], shape[1]),
        n => {
            let field: usize = shape[..n - 2].iter().product();
            (field * shape[n - 2], field * shape[n - 1])
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    /// Frozen kernel entries are never touched by an optimizer.
    pub frozen: Vec<bool>,
}

/// Kernels, biases and per-kernel freeze flags for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> ParameterSet<T> {
    /// Glorot-normal kernels, zero biases, nothing frozen.
    pub fn init(arch: &NetworkArch, rng: &mut RngStream) -> Result<Self> {
        let layers = arch
            .kernels()
            .iter()
            .map(|spec| {
                let kernel = glorot_normal_init(&spec.shape, rng)?;
                Ok(LayerParams {
                    frozen: vec![false; kernel.len()],
                    bias: Tensor::zeros(&[spec.bias_len()]),
                    kernel,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Parameters drawn from the init stream named by `seed`.
    pub fn from_seed(arch: &NetworkArch, seed: u64) -> Result<Self> {
        Self::init(arch, &mut RngStream::new("init", seed))
    }

    pub fn zeros_like(arch: &NetworkArch) -> Self {
        let layers = arch
            .kernels()
            .iter()
            .map(|spec| LayerParams {
                kernel: Tensor::zeros(&spec.shape),
                bias: Tensor::zeros(&[spec.bias_len()]),
                frozen: vec![false; spec.len()],
            })
            .collect();
        Self { layers }
    }

    pub fn check_arch(&self, arch: &NetworkArch) -> Result<()> {
        if self.layers.len() != arch.num_kernels() {
            return Err(Error::Shape {
                context: "parameter layer count",
                expected: vec![arch.num_kernels()],
                actual: vec![self.layers.len()],
            });
        }
        for (layer, spec) in self.layers.iter().zip(arch.kernels()) {
            if layer.kernel.shape() != spec.shape.as_slice() {
                return Err(Error::Shape {
                    context: "kernel",
                    expected: spec.shape.clone(),
                    actual: layer.kernel.shape().to_vec(),
                });
            }
            if layer.bias.len() != spec.bias_len() || layer.frozen.len() != spec.len() {
                return Err(Error::Shape {
                    context: "bias/frozen flags",
                    expected: vec![spec.bias_len(), spec.len()],
                    actual: vec![layer.bias.len(), layer.frozen.len()],
                });
            }
        }
        Ok(())
    }

    pub fn kernels(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().map(|l| l.kernel.as_slice())
    }

    pub fn unfreeze_all(&mut self) {
        for layer in &mut self.layers {
            layer.frozen.iter_mut().for_each(|f| *f = false);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.kernel.all_finite() && l.bias.all_finite())
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    kernel: l.kernel.cast(),
                    bias: l.bias.cast(),
                    frozen: l.frozen.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_std(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    #[test]
    fn glorot_std_matches_formula() {
        let target = (2.0f64 / 400.0).sqrt();
        let mut rng = RngStream::new("init", 11);
        for _ in 0..10 {
            let t: Tensor<f64> = glorot_normal_init(&[300, 100], &mut rng).unwrap();
            let s = sample_std(t.as_slice());
            assert!((s - target).abs() / target < 0.05, "std {s} vs {target}");
        }
    }

    #[test]
    fn glorot_unit_shape_is_standard_normal() {
        // fan_in = fan_out = 1 -> sigma = 1; check the one draw equals a raw
        // standard normal from an identical stream.
        let mut a = RngStream::new("init", 5);
        let mut b = RngStream::new("init", 5);
        let t: Tensor<f64> = glorot_normal_init(&[1, 1], &mut a).unwrap();
        assert_eq!(t.as_slice()[0], b.standard_normal());
    }

    #[test]
    fn glorot_deterministic() {
        let x: Tensor<f32> = glorot_normal_init(&[3, 3, 4, 8], &mut RngStream::new("i", 9)).unwrap();
        let y: Tensor<f32> = glorot_normal_init(&[3, 3, 4, 8], &mut RngStream::new("i", 9)).unwrap();
        assert_eq!(
            x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn glorot_rejects_empty_shapes() {
        let mut rng = RngStream::new("init", 1);
        assert!(glorot_normal_init::<f32>(&[0, 4], &mut rng).is_err());
        assert!(glorot_normal_init::<f32>(&[], &mut rng).is_err());
    }

    #[test]
    fn conv_fans_include_receptive_field() {
        assert_eq!(fans(&[3, 3, 3, 64]).unwrap(), (27, 576));
    }
}
