use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::arch::NetworkArch;
use crate::nn::engine::{self, Gradients};
use crate::nn::params::ParameterSet;
use crate::tensor::{Real, Tensor};

/// Result of evaluating a network on a labelled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

fn batch_size<T: Real>(arch: &NetworkArch, batch: &Tensor<T>) -> Result<usize> {
    let per = arch.input().len();
    let shape = batch.shape();
    let trailing: usize = shape.iter().skip(1).product();
    if shape.is_empty() || trailing != per {
        return Err(Error::Shape {
            context: "batch vs architecture input",
            expected: vec![shape.first().copied().unwrap_or(0), per],
            actual: shape.to_vec(),
        });
    }
    Ok(shape[0])
}

pub(crate) fn masked_kernels<T: Real>(params: &ParameterSet<T>, mask: &Mask) -> Vec<Vec<T>> {
    params
        .layers
        .iter()
        .zip(mask.layers())
        .map(|(l, m)| m.apply(l.kernel.as_slice()))
        .collect()
}

pub(crate) fn as_slices<T>(v: &[Vec<T>]) -> Vec<&[T]> {
    v.iter().map(Vec::as_slice).collect()
}

pub(crate) fn bias_slices<T: Real>(params: &ParameterSet<T>) -> Vec<&[T]> {
    params.layers.iter().map(|l| l.bias.as_slice()).collect()
}

/// Logits of `f(x; w ⊙ m)` with shape `(batch, classes)`. Biases are not masked.
pub fn forward<T: Real>(
    arch: &NetworkArch,
    params: &ParameterSet<T>,
    mask: &Mask,
    batch: &Tensor<T>,
) -> Result<Tensor<T>> {
    params.check_arch(arch)?;
    mask.check_arch(arch)?;
    let n = batch_size(arch, batch)?;
    let kernels = masked_kernels(params, mask);
    let logits = engine::forward_effective(arch, &as_slices(&kernels), &bias_slices(params), batch.as_slice(), n)?;
    Tensor::from_vec(&[n, arch.classes()], logits)
}

/// Mean softmax cross-entropy and gradients with respect to the underlying
/// parameters. Masked-out and frozen kernel entries get exactly zero gradient.
pub fn loss_and_grads<T: Real>(
    arch: &NetworkArch,
    params: &ParameterSet<T>,
    mask: &Mask,
    batch: &Tensor<T>,
    labels: &[u8],
) -> Result<(f64, Gradients<T>)> {
    params.check_arch(arch)?;
    mask.check_arch(arch)?;
    let n = batch_size(arch, batch)?;
    check_labels(labels, n, arch.classes())?;
    let kernels = masked_kernels(params, mask);
    let kslices = as_slices(&kernels);
    let trace = engine::forward_traced(arch, &kslices, &bias_slices(params), batch.as_slice(), n)?;
    let (loss, dlogits) = engine::softmax_cross_entropy(trace.logits(), labels, arch.classes());
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            layer: arch.ops().len(),
            op: "softmax cross-entropy",
        });
    }
    let mut grads = engine::backward_effective(arch, &kslices, &trace, dlogits);
    for ((g, layer), m) in grads.kernels.iter_mut().zip(&params.layers).zip(mask.layers()) {
        for ((gv, &frozen), &keep) in g.iter_mut().zip(&layer.frozen).zip(m.bits()) {
            if frozen || !keep {
                *gv = T::zero();
            }
        }
    }
    Ok((loss, grads))
}

pub(crate) fn check_labels(labels: &[u8], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape {
            context: "labels vs batch",
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// Chunked evaluation over effective kernels.
pub(crate) fn evaluate_effective<T: Real>(
    arch: &NetworkArch,
    kernels: &[&[T]],
    biases: &[&[T]],
    images: &[f32],
    labels: &[u8],
) -> Result<Evaluation> {
    const CHUNK: usize = 500;
    let per = arch.input().len();
    let n = labels.len();
    if n == 0 {
        return Ok(Evaluation {
            loss: 0.0,
            accuracy: 0.0,
        });
    }
    let mut loss = 0.0;
    let mut hits = 0;
    let mut buf: Vec<T> = Vec::with_capacity(CHUNK * per);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        buf.clear();
        buf.extend(images[start * per..end * per].iter().map(|&v| T::of(v as f64)));
        let logits = engine::forward_effective(arch, kernels, biases, &buf, end - start)?;
        let (l, h) = engine::loss_and_hits(&logits, &labels[start..end], arch.classes());
        loss += l;
        hits += h;
    }
    Ok(Evaluation {
        loss: loss / n as f64,
        accuracy: hits as f64 / n as f64,
    })
}

/// Mean loss and accuracy of `f(x; w ⊙ m)` on flat `[0,1]` images.
pub fn evaluate<T: Real>(
    arch: &NetworkArch,
    params: &ParameterSet<T>,
    mask: &Mask,
    images: &[f32],
    labels: &[u8],
) -> Result<Evaluation> {
    params.check_arch(arch)?;
    mask.check_arch(arch)?;
    let kernels = masked_kernels(params, mask);
    evaluate_effective(arch, &as_slices(&kernels), &bias_slices(params), images, labels)
}
