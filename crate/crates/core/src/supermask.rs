//! Supermasks: masks that lift untrained weights above chance, either built
//! heuristically from a trained network or learned directly by gradient
//! descent on mask logits while every weight stays frozen.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actions::signed_constant_transform;
use crate::bitpack::{pack_bits, packed_len, unpack_bits, Reader, Writer};
use crate::criteria::{build_mask_with_counts, score_all, Criterion, PruneMode, PruneSchedule, WeightSnapshot};
use crate::data::{Batches, Dataset, LastBatch, Splits};
use crate::error::{Error, Result};
use crate::mask::{LayerMask, Mask};
use crate::nn::arch::{ArchKind, NetworkArch};
use crate::nn::engine;
use crate::nn::network::{as_slices, bias_slices, check_labels, evaluate, evaluate_effective, Evaluation};
use crate::nn::optim::{Optimizer, OptimizerKind, Slot};
use crate::nn::params::ParameterSet;
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

/// What the mask is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    /// The untrained initial weights `w_i`.
    Init,
    /// `sign(w_i) · σ_layer`.
    SignedConstant,
}

impl Treatment {
    pub const ALL: [Treatment; 2] = [Treatment::Init, Treatment::SignedConstant];

    pub fn name(self) -> &'static str {
        match self {
            Treatment::Init => "init",
            Treatment::SignedConstant => "signed_constant",
        }
    }

    fn code(self) -> u8 {
        match self {
            Treatment::Init => 0,
            Treatment::SignedConstant => 1,
        }
    }

    fn from_code(code: u8, offset: usize) -> Result<Self> {
        match code {
            0 => Ok(Treatment::Init),
            1 => Ok(Treatment::SignedConstant),
            _ => Err(Error::Format {
                offset,
                reason: format!("unknown treatment code {code}"),
            }),
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Treatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Treatment::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "treatment",
                name: s.to_string(),
                valid: Treatment::ALL.iter().map(|t| t.name()).collect(),
            })
    }
}

/// Untrained weights for `treatment`, reconstructed from the init seed.
pub fn supermask_weights<T: Real>(arch: &NetworkArch, seed: u64, treatment: Treatment) -> Result<ParameterSet<T>> {
    let init = ParameterSet::from_seed(arch, seed)?;
    apply_treatment(arch, &init, treatment)
}

pub fn apply_treatment<T: Real>(
    arch: &NetworkArch,
    init: &ParameterSet<T>,
    treatment: Treatment,
) -> Result<ParameterSet<T>> {
    match treatment {
        Treatment::Init => Ok(init.clone()),
        Treatment::SignedConstant => signed_constant_transform(init, &arch.layer_stds()),
    }
}

/// Test accuracy of `f(x; w ⊙ m)` with untrained weights from `seed`.
pub fn eval_supermask<T: Real>(
    arch: &NetworkArch,
    seed: u64,
    mask: &Mask,
    treatment: Treatment,
    test: &Dataset,
) -> Result<f64> {
    let weights = supermask_weights::<T>(arch, seed, treatment)?;
    Ok(evaluate(arch, &weights, mask, test.pixels(), test.labels())?.accuracy)
}

/// One-shot masks at `levels` pruning depths: level `k` keeps
/// `(1 - rate)^k` of each layer, with the rate of the layer's class.
pub fn heuristic_masks<T: Real>(
    arch: &NetworkArch,
    criterion: Criterion,
    snapshot: &WeightSnapshot<T>,
    schedule: &PruneSchedule,
    levels: &[usize],
    rng: &mut RngStream,
) -> Result<Vec<Mask>> {
    let full = Mask::ones(arch);
    let (scores, _) = score_all(criterion, snapshot, &full);
    levels
        .iter()
        .map(|&k| {
            let s = PruneSchedule {
                rounds: k,
                mode: PruneMode::OneShot,
                ..*schedule
            };
            build_mask_with_counts(&scores, &s.keep_counts(arch, &full), &full, rng)
        })
        .collect()
}

/// `n_total / n_ones`, or `None` for an all-zero mask.
pub fn dwr_scale(n_total: usize, n_ones: usize) -> Option<f64> {
    (n_ones > 0).then(|| n_total as f64 / n_ones as f64)
}

/// `w ⊙ m` scaled by `n_total / n_ones`. An all-zero mask is left unscaled.
pub fn dwr_rescale<T: Real>(weights: &[T], mask: &LayerMask) -> Vec<T> {
    let masked = mask.apply(weights);
    match dwr_scale(mask.len(), mask.ones()) {
        Some(s) => {
            let s = T::of(s);
            masked.into_iter().map(|w| w * s).collect()
        }
        None => {
            log::warn!("all-zero mask layer, skipping rescale");
            masked
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// How `g(m)` is formed in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSampling {
    /// `Bern(S(m))`; gradients pass straight through as if `g = S(m)`.
    Bernoulli,
    /// `g = S(m)` exactly (deterministic relaxation).
    Expected,
}

/// Per-layer real-valued mask logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedMask<T> {
    pub logits: Vec<Tensor<T>>,
}

impl<T: Real> LearnedMask<T> {
    /// Every logit set to `c`.
    pub fn constant(arch: &NetworkArch, c: f64) -> Self {
        Self {
            logits: arch
                .kernels()
                .iter()
                .map(|k| Tensor::filled(&k.shape, T::of(c)))
                .collect(),
        }
    }

    pub fn probabilities(&self, layer: usize) -> Vec<f64> {
        self.logits[layer]
            .as_slice()
            .iter()
            .map(|m| sigmoid(m.as_f64()))
            .collect()
    }

    /// One draw of `Bern(S(m))` per entry.
    pub fn sample(&self, rng: &mut RngStream) -> Result<Mask> {
        let layers = self
            .logits
            .iter()
            .map(|t| {
                let bits = t
                    .as_slice()
                    .iter()
                    .map(|m| rng.bernoulli(sigmoid(m.as_f64())))
                    .collect();
                LayerMask::new(t.shape(), bits)
            })
            .collect::<Result<_>>()?;
        Ok(Mask::new(layers))
    }

    /// Mean of `1 - S(m)` over all entries.
    pub fn expected_sparsity(&self) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for l in 0..self.logits.len() {
            let p = self.probabilities(l);
            n += p.len();
            sum += p.iter().map(|p| 1.0 - p).sum::<f64>();
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn all_finite(&self) -> bool {
        self.logits.iter().all(Tensor::all_finite)
    }
}

/// Effective kernels `w ⊙ g ⊙ scale` and the per-layer `g` and `scale` used.
fn effective_kernels<T: Real>(
    weights: &ParameterSet<T>,
    mask: &LearnedMask<T>,
    sampling: MaskSampling,
    dwr: bool,
    rng: &mut RngStream,
) -> (Vec<Vec<T>>, Vec<Vec<f64>>, Vec<f64>) {
    let mut kernels = Vec::with_capacity(weights.layers.len());
    let mut gates = Vec::with_capacity(weights.layers.len());
    let mut scales = Vec::with_capacity(weights.layers.len());
    for (l, layer) in weights.layers.iter().enumerate() {
        let p = mask.probabilities(l);
        let g: Vec<f64> = match sampling {
            MaskSampling::Bernoulli => p.iter().map(|&p| if rng.bernoulli(p) { 1.0 } else { 0.0 }).collect(),
            MaskSampling::Expected => p,
        };
        let scale = if dwr {
            let ones: f64 = g.iter().sum();
            if ones > 0.0 {
                g.len() as f64 / ones
            } else {
                log::warn!("layer {l}: all-zero sampled mask, skipping rescale");
                1.0
            }
        } else {
            1.0
        };
        kernels.push(
            layer
                .kernel
                .as_slice()
                .iter()
                .zip(&g)
                .map(|(&w, &g)| T::of(w.as_f64() * g * scale))
                .collect(),
        );
        gates.push(g);
        scales.push(scale);
    }
    (kernels, gates, scales)
}

/// Loss and gradient with respect to the mask logits.
///
/// `dL/dm = dL/dW_eff · w · scale · S'(m)`. The DWR scale is treated as a
/// constant.
#[allow(clippy::too_many_arguments)]
pub fn learned_mask_loss_and_grad<T: Real>(
    arch: &NetworkArch,
    weights: &ParameterSet<T>,
    mask: &LearnedMask<T>,
    batch: &Tensor<T>,
    labels: &[u8],
    sampling: MaskSampling,
    dwr: bool,
    rng: &mut RngStream,
) -> Result<(f64, Vec<Vec<T>>)> {
    weights.check_arch(arch)?;
    let n = batch.shape().first().copied().unwrap_or(0);
    check_labels(labels, n, arch.classes())?;
    let (kernels, _, scales) = effective_kernels(weights, mask, sampling, dwr, rng);
    let kslices = as_slices(&kernels);
    let trace = engine::forward_traced(arch, &kslices, &bias_slices(weights), batch.as_slice(), n)?;
    let (loss, dlogits) = engine::softmax_cross_entropy(trace.logits(), labels, arch.classes());
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            layer: arch.ops().len(),
            op: "softmax cross-entropy",
        });
    }
    let grads = engine::backward_effective(arch, &kslices, &trace, dlogits);
    let out = grads
        .kernels
        .iter()
        .enumerate()
        .map(|(l, gk)| {
            let w = weights.layers[l].kernel.as_slice();
            let m = mask.logits[l].as_slice();
            gk.iter()
                .zip(w)
                .zip(m)
                .map(|((&g, &w), &m)| {
                    let s = sigmoid(m.as_f64());
                    T::of(g.as_f64() * w.as_f64() * scales[l] * s * (1.0 - s))
                })
                .collect()
        })
        .collect();
    Ok((loss, out))
}

/// Loss and accuracy under one Bernoulli draw of the mask.
pub fn evaluate_sampled<T: Real>(
    arch: &NetworkArch,
    weights: &ParameterSet<T>,
    mask: &LearnedMask<T>,
    dwr: bool,
    set: &Dataset,
    rng: &mut RngStream,
) -> Result<(Evaluation, f64)> {
    let (kernels, gates, _) = effective_kernels(weights, mask, MaskSampling::Bernoulli, dwr, rng);
    let zeros: f64 = gates.iter().flatten().filter(|&&g| g == 0.0).count() as f64;
    let total: usize = gates.iter().map(Vec::len).sum();
    let e = evaluate_effective(
        arch,
        &as_slices(&kernels),
        &bias_slices(weights),
        set.pixels(),
        set.labels(),
    )?;
    Ok((e, if total == 0 { 0.0 } else { zeros / total as f64 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedMaskConfig {
    /// Initial value of every logit.
    pub init_logit: f64,
    pub lr: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub early_stopping: bool,
    pub dwr: bool,
    /// Bernoulli draws averaged for the reported test accuracy.
    pub eval_samples: usize,
    /// Bernoulli draws averaged for each validation checkpoint.
    pub val_samples: usize,
}

impl LearnedMaskConfig {
    pub fn for_arch(kind: ArchKind, init_logit: f64, dwr: bool) -> Self {
        Self {
            init_logit,
            lr: kind.learned_mask_lr(),
            momentum: 0.9,
            iterations: kind.learned_mask_iterations(),
            batch_size: 60,
            eval_interval: 50,
            early_stopping: kind.learned_mask_early_stopping(),
            dwr,
            eval_samples: 10,
            val_samples: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnedOutcome<T> {
    pub mask: LearnedMask<T>,
    /// Mean test accuracy over `eval_samples` draws.
    pub test_accuracy: f64,
    pub sample_accuracies: Vec<f64>,
    /// Mean fraction of zeros in the evaluated draws.
    pub sparsity: f64,
    pub stop_iteration: usize,
}

fn mean_val_loss<T: Real>(
    arch: &NetworkArch,
    weights: &ParameterSet<T>,
    mask: &LearnedMask<T>,
    config: &LearnedMaskConfig,
    val: &Dataset,
    rng: &RngStream,
    checkpoint: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..config.val_samples.max(1) {
        let mut r = rng.split(&format!("val{checkpoint}/{s}"));
        total += evaluate_sampled(arch, weights, mask, config.dwr, val, &mut r)?.0.loss;
    }
    Ok(total / config.val_samples.max(1) as f64)
}

/// Train mask logits with SGD momentum while `weights` stay frozen.
pub fn train_learned_mask<T: Real>(
    arch: &NetworkArch,
    weights: &ParameterSet<T>,
    data: &Splits,
    config: &LearnedMaskConfig,
    rng: &RngStream,
) -> Result<LearnedOutcome<T>> {
    if config.eval_interval == 0 || config.eval_samples == 0 {
        return Err(Error::Config("eval_interval and eval_samples must be positive".into()));
    }
    let mut mask = LearnedMask::constant(arch, config.init_logit);
    let mut optimizer = Optimizer::new(OptimizerKind::SgdMomentum {
        lr: config.lr,
        momentum: config.momentum,
    });
    let mut batches = Batches::new(
        data.train.len(),
        config.batch_size,
        LastBatch::Drop,
        rng.split("shuffle"),
    )?;
    let mut sampler = rng.split("bernoulli");
    let val_rng = rng.split("val");
    let diverged = |iteration: usize| {
        move |e: Error| Error::Diverged {
            iteration,
            source: Box::new(e),
        }
    };

    let mut best: Option<(usize, f64, LearnedMask<T>)> = None;
    if config.early_stopping {
        let l = mean_val_loss(arch, weights, &mask, config, &data.val, &val_rng, 0)?;
        best = Some((0, l, mask.clone()));
    }
    for it in 1..=config.iterations {
        let idx = batches.next().expect("endless batch stream");
        let (x, y) = data.train.gather::<T>(&idx);
        let (_, grads) = learned_mask_loss_and_grad(
            arch,
            weights,
            &mask,
            &x,
            &y,
            MaskSampling::Bernoulli,
            config.dwr,
            &mut sampler,
        )
        .map_err(diverged(it))?;
        let slots = mask
            .logits
            .iter_mut()
            .zip(&grads)
            .map(|(m, g)| Slot {
                param: m.as_mut_slice(),
                grad: g,
                frozen: None,
            })
            .collect();
        optimizer.step_slots(slots)?;
        if !mask.all_finite() {
            return Err(diverged(it)(Error::NonFinite {
                layer: 0,
                op: "mask logits",
            }));
        }
        if config.early_stopping && (it % config.eval_interval == 0 || it == config.iterations) {
            let l = mean_val_loss(arch, weights, &mask, config, &data.val, &val_rng, it).map_err(diverged(it))?;
            log::debug!("mask iteration {it}: val loss {l:.5}");
            if best.as_ref().is_none_or(|b| l < b.1) {
                best = Some((it, l, mask.clone()));
            }
        }
    }
    let (stop_iteration, mask) = match best {
        Some((it, _, m)) => (it, m),
        None => (config.iterations, mask),
    };
    let eval_rng = rng.split("eval");
    let mut sample_accuracies = Vec::with_capacity(config.eval_samples);
    let mut sparsity = 0.0;
    for s in 0..config.eval_samples {
        let mut r = eval_rng.split(&format!("sample{s}"));
        let (e, z) = evaluate_sampled(arch, weights, &mask, config.dwr, &data.test, &mut r)?;
        sample_accuracies.push(e.accuracy);
        sparsity += z;
    }
    let n = config.eval_samples as f64;
    Ok(LearnedOutcome {
        test_accuracy: sample_accuracies.iter().sum::<f64>() / n,
        sample_accuracies,
        sparsity: sparsity / n,
        stop_iteration,
        mask,
    })
}

pub const PACK_MAGIC: [u8; 4] = *b"SMPK";
pub const PACK_VERSION: u8 = 1;

/// A Supermask stored as an init seed plus one bit per weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupermaskPack {
    pub arch: String,
    pub seed: u64,
    pub treatment: Treatment,
    pub mask: Mask,
}

impl SupermaskPack {
    /// Layout (little-endian): magic `SMPK`, version u8, arch name as a u8
    /// length and its bytes, seed u64, treatment u8, layer count u32, then per
    /// layer a bit count u32 and the LSB-first packed bits; CRC-32 of
    /// everything before it as the trailer.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(&PACK_MAGIC);
        w.u8(PACK_VERSION);
        w.short_str(&self.arch)?;
        w.u64(self.seed);
        w.u8(self.treatment.code());
        w.u32(self.mask.num_layers() as u32);
        for layer in self.mask.layers() {
            w.u32(u32::try_from(layer.len()).map_err(|_| Error::InvalidArgument("layer too large to pack".into()))?);
            w.bytes(&pack_bits(layer.bits()));
        }
        let crc = crc32fast::hash(&w.buf);
        w.u32(crc);
        Ok(w.buf)
    }

    /// Parse and validate against the named architecture.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Format {
                offset: 0,
                reason: "shorter than the CRC trailer".into(),
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let mut r = Reader::new(body);
        let magic = r.take(4)?;
        if magic != PACK_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u8()?;
        if version != PACK_VERSION {
            return Err(Error::Version {
                found: version as u32,
                supported: PACK_VERSION as u32,
            });
        }
        let arch_name = r.short_str()?;
        let seed = r.u64()?;
        let at = r.pos();
        let treatment = Treatment::from_code(r.u8()?, at)?;
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format {
                offset: body.len(),
                reason: "CRC mismatch, bitstream corrupted".into(),
            });
        }
        let arch = NetworkArch::from_name(&arch_name)?;
        let count_at = r.pos();
        let count = r.u32()? as usize;
        if count != arch.num_kernels() {
            return Err(Error::Format {
                offset: count_at,
                reason: format!("{count} layers, {} has {}", arch_name, arch.num_kernels()),
            });
        }
        let mut layers = Vec::with_capacity(count);
        for spec in arch.kernels() {
            let at = r.pos();
            let bits = r.u32()? as usize;
            if bits != spec.len() {
                return Err(Error::Format {
                    offset: at,
                    reason: format!("layer has {bits} bits, kernel has {} weights", spec.len()),
                });
            }
            let data = r.take(packed_len(bits))?;
            layers.push(LayerMask::new(&spec.shape, unpack_bits(data, bits)?)?);
        }
        if r.remaining() != 0 {
            return Err(Error::Format {
                offset: r.pos(),
                reason: format!("{} trailing bytes", r.remaining()),
            });
        }
        Ok(Self {
            arch: arch_name,
            seed,
            treatment,
            mask: Mask::new(layers),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// The masked network this pack describes.
    pub fn reconstruct<T: Real>(&self) -> Result<(NetworkArch, ParameterSet<T>)> {
        let arch = NetworkArch::from_name(&self.arch)?;
        self.mask.check_arch(&arch)?;
        let weights = supermask_weights(&arch, self.seed, self.treatment)?;
        Ok((arch, weights))
    }

    pub fn evaluate<T: Real>(&self, test: &Dataset) -> Result<f64> {
        let (arch, weights) = self.reconstruct::<T>()?;
        Ok(evaluate(&arch, &weights, &self.mask, test.pixels(), test.labels())?.accuracy)
    }
}
