//! Mask criteria: scoring rules over `(w_i, w_f)` pairs and per-layer mask
//! construction with exact keep counts and random tie-breaking.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{LayerMask, Mask};
use crate::nn::arch::{ArchKind, LayerClass, NetworkArch};
use crate::nn::params::ParameterSet;
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    LargeFinal,
    SmallFinal,
    LargeInit,
    SmallInit,
    LargeInitLargeFinal,
    SmallInitSmallFinal,
    MagnitudeIncrease,
    Movement,
    Random,
    LargeFinalSameSign,
    LargeFinalDiffSign,
}

impl Criterion {
    pub const ALL: [Criterion; 11] = [
        Criterion::LargeFinal,
        Criterion::SmallFinal,
        Criterion::LargeInit,
        Criterion::SmallInit,
        Criterion::LargeInitLargeFinal,
        Criterion::SmallInitSmallFinal,
        Criterion::MagnitudeIncrease,
        Criterion::Movement,
        Criterion::Random,
        Criterion::LargeFinalSameSign,
        Criterion::LargeFinalDiffSign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::LargeFinal => "large_final",
            Criterion::SmallFinal => "small_final",
            Criterion::LargeInit => "large_init",
            Criterion::SmallInit => "small_init",
            Criterion::LargeInitLargeFinal => "large_init_large_final",
            Criterion::SmallInitSmallFinal => "small_init_small_final",
            Criterion::MagnitudeIncrease => "magnitude_increase",
            Criterion::Movement => "movement",
            Criterion::Random => "random",
            Criterion::LargeFinalSameSign => "large_final_same_sign",
            Criterion::LargeFinalDiffSign => "large_final_diff_sign",
        }
    }

    /// Whether the score depends on the percentile-alignment coefficient.
    pub fn uses_alpha(self) -> bool {
        matches!(self, Criterion::LargeInitLargeFinal | Criterion::SmallInitSmallFinal)
    }

    /// Score of a single weight.
    pub fn score_pair(self, wi: f64, wf: f64, alpha: f64) -> f64 {
        match self {
            Criterion::LargeFinal => wf.abs(),
            Criterion::SmallFinal => -wf.abs(),
            Criterion::LargeInit => wi.abs(),
            Criterion::SmallInit => -wi.abs(),
            Criterion::LargeInitLargeFinal => (alpha * wf.abs()).min(wi.abs()),
            Criterion::SmallInitSmallFinal => -(alpha * wf.abs()).max(wi.abs()),
            Criterion::MagnitudeIncrease => wf.abs() - wi.abs(),
            Criterion::Movement => (wf - wi).abs(),
            Criterion::Random => 0.0,
            // w_i * w_f / |w_i| == sign(w_i) * w_f; w_i == 0 scores 0
            Criterion::LargeFinalSameSign => {
                if wi == 0.0 {
                    0.0
                } else {
                    (wi.signum() * wf).max(0.0)
                }
            }
            Criterion::LargeFinalDiffSign => {
                if wi == 0.0 {
                    0.0
                } else {
                    (-wi.signum() * wf).max(0.0)
                }
            }
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "criterion",
                name: s.to_string(),
                valid: Criterion::ALL.iter().map(|c| c.name()).collect(),
            })
    }
}

/// Initial and final kernel values of every maskable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot<T> {
    initial: Vec<Tensor<T>>,
    last: Vec<Tensor<T>>,
}

impl<T: Real> WeightSnapshot<T> {
    pub fn new(initial: Vec<Tensor<T>>, last: Vec<Tensor<T>>) -> Result<Self> {
        if initial.len() != last.len() {
            return Err(Error::Shape {
                context: "snapshot layer count",
                expected: vec![initial.len()],
                actual: vec![last.len()],
            });
        }
        for (a, b) in initial.iter().zip(&last) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    context: "snapshot w_i vs w_f",
                    expected: a.shape().to_vec(),
                    actual: b.shape().to_vec(),
                });
            }
        }
        Ok(Self { initial, last })
    }

    pub fn from_params(initial: &ParameterSet<T>, last: &ParameterSet<T>) -> Result<Self> {
        Self::new(
            initial.layers.iter().map(|l| l.kernel.clone()).collect(),
            last.layers.iter().map(|l| l.kernel.clone()).collect(),
        )
    }

    pub fn num_layers(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self, layer: usize) -> &[T] {
        self.initial[layer].as_slice()
    }

    pub fn last(&self, layer: usize) -> &[T] {
        self.last[layer].as_slice()
    }

    pub fn shape(&self, layer: usize) -> &[usize] {
        self.initial[layer].shape()
    }
}

/// Percentile-alignment coefficient of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha {
    pub value: f64,
    /// `median(|w_f|) == 0`; `value` fell back to 1.
    pub degenerate: bool,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let mid = n / 2;
    let (_, &mut hi, _) = xs.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        return Some(hi);
    }
    let lo = xs[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(0.5 * (lo + hi))
}

/// `median(|w_i|) / median(|w_f|)` over the unmasked weights of `layer`
/// (all weights when `mask` is `None`).
pub fn align_alpha<T: Real>(snapshot: &WeightSnapshot<T>, layer: usize, mask: Option<&LayerMask>) -> Alpha {
    let keep = |i: usize| mask.is_none_or(|m| m.get(i));
    let wi = snapshot.initial(layer);
    let wf = snapshot.last(layer);
    let abs_i: Vec<f64> = (0..wi.len())
        .filter(|&i| keep(i))
        .map(|i| wi[i].as_f64().abs())
        .collect();
    let abs_f: Vec<f64> = (0..wf.len())
        .filter(|&i| keep(i))
        .map(|i| wf[i].as_f64().abs())
        .collect();
    match (median(abs_i), median(abs_f)) {
        (Some(mi), Some(mf)) if mf > 0.0 => Alpha {
            value: mi / mf,
            degenerate: false,
        },
        _ => {
            log::warn!("layer {layer}: median |w_f| is zero, using alpha = 1");
            Alpha {
                value: 1.0,
                degenerate: true,
            }
        }
    }
}

/// Scores of every weight of `layer`.
pub fn score<T: Real>(criterion: Criterion, snapshot: &WeightSnapshot<T>, layer: usize, alpha: f64) -> Vec<f64> {
    snapshot
        .initial(layer)
        .iter()
        .zip(snapshot.last(layer))
        .map(|(wi, wf)| criterion.score_pair(wi.as_f64(), wf.as_f64(), alpha))
        .collect()
}

/// Scores for all layers, computing `alpha` per layer where the criterion
/// needs it. Returns the scores and the alpha used per layer.
pub fn score_all<T: Real>(
    criterion: Criterion,
    snapshot: &WeightSnapshot<T>,
    prev: &Mask,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    (0..snapshot.num_layers())
        .map(|l| {
            let alpha = if criterion.uses_alpha() {
                let a = align_alpha(snapshot, l, Some(prev.layer(l)));
                log::debug!("layer {l}: alpha = {:.6}", a.value);
                a.value
            } else {
                1.0
            };
            (score(criterion, snapshot, l, alpha), alpha)
        })
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    #[default]
    Iterative,
    OneShot,
}

/// Per-round prune rates by layer class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub conv_rate: f64,
    pub fc_rate: f64,
    /// Rate for the classifier layer; defaults to `fc_rate`.
    pub output_rate: Option<f64>,
    pub rounds: usize,
    pub mode: PruneMode,
}

impl PruneSchedule {
    pub fn for_arch(kind: ArchKind) -> Self {
        Self {
            conv_rate: kind.conv_prune_rate(),
            fc_rate: kind.fc_prune_rate(),
            output_rate: None,
            rounds: kind.default_rounds(),
            mode: PruneMode::Iterative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [Some(self.conv_rate), Some(self.fc_rate), self.output_rate];
        for r in rates.into_iter().flatten() {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("prune rate {r} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn rate(&self, class: LayerClass) -> f64 {
        match class {
            LayerClass::Conv => self.conv_rate,
            LayerClass::Dense => self.fc_rate,
            LayerClass::Output => self.output_rate.unwrap_or(self.fc_rate),
        }
    }

    /// Fraction of the original layer remaining after `round` iterative rounds.
    pub fn remaining_fraction(&self, class: LayerClass, round: usize) -> f64 {
        (1.0 - self.rate(class)).powi(round as i32)
    }

    /// Keep count of each layer for the mask built at `round` (1-based).
    ///
    /// Iterative: `(1 - rate) × ones(prev)`. One-shot: the whole cumulative
    /// fraction `(1 - rate)^rounds` is taken from the full layer at once.
    pub fn keep_counts(&self, arch: &NetworkArch, prev: &Mask) -> Vec<usize> {
        arch.kernels()
            .iter()
            .zip(prev.layers())
            .map(|(spec, m)| match self.mode {
                PruneMode::Iterative => round_half_up((1.0 - self.rate(spec.class)) * m.ones() as f64),
                PruneMode::OneShot => {
                    round_half_up(self.remaining_fraction(spec.class, self.rounds) * spec.len() as f64).min(m.ones())
                }
            })
            .collect()
    }
}

pub fn round_half_up(x: f64) -> usize {
    // guard against products like 0.8 * 5 = 4.000000000000001
    let snapped = (x * 1e9).round() / 1e9;
    (snapped + 0.5).floor().max(0.0) as usize
}

/// Keep the `keep` highest-scoring positions among those set in `prev`,
/// breaking ties with `rng`.
pub fn select_top(scores: &[f64], prev: &LayerMask, keep: usize, rng: &mut RngStream) -> Result<LayerMask> {
    if scores.len() != prev.len() {
        return Err(Error::Shape {
            context: "scores vs mask",
            expected: vec![prev.len()],
            actual: vec![scores.len()],
        });
    }
    if keep > prev.ones() {
        return Err(Error::InvalidArgument(format!(
            "keep count {keep} exceeds {} unmasked weights",
            prev.ones()
        )));
    }
    let mut candidates: Vec<(f64, u64, usize)> = prev
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| (scores[i], rng.next_u64(), i))
        .collect();
    let cmp = |a: &(f64, u64, usize), b: &(f64, u64, usize)| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    };
    if keep < candidates.len() && keep > 0 {
        candidates.select_nth_unstable_by(keep - 1, cmp);
    }
    let mut bits = vec![false; prev.len()];
    for &(_, _, i) in candidates.iter().take(keep) {
        bits[i] = true;
    }
    LayerMask::new(prev.shape(), bits)
}

/// Build the next mask from per-layer scores and explicit keep counts.
pub fn build_mask_with_counts(
    scores: &[Vec<f64>],
    keep_counts: &[usize],
    prev: &Mask,
    rng: &mut RngStream,
) -> Result<Mask> {
    if scores.len() != prev.num_layers() || keep_counts.len() != prev.num_layers() {
        return Err(Error::Shape {
            context: "build_mask layer count",
            expected: vec![prev.num_layers()],
            actual: vec![scores.len(), keep_counts.len()],
        });
    }
    let layers = scores
        .iter()
        .zip(keep_counts)
        .zip(prev.layers())
        .enumerate()
        .map(|(l, ((s, &k), m))| {
            if k == 0 && !m.is_empty() {
                log::warn!("layer {l}: keep count 0, layer is dead");
            }
            select_top(s, m, k, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mask::new(layers))
}

/// Build the next mask using the schedule's keep counts.
pub fn build_mask(
    arch: &NetworkArch,
    scores: &[Vec<f64>],
    schedule: &PruneSchedule,
    prev: &Mask,
    rng: &mut RngStream,
) -> Result<Mask> {
    let counts = schedule.keep_counts(arch, prev);
    build_mask_with_counts(scores, &counts, prev, rng)
}

/// One-shot mask keeping `fraction` of every layer of a dense network.
pub fn one_shot_mask<T: Real>(
    arch: &NetworkArch,
    criterion: Criterion,
    snapshot: &WeightSnapshot<T>,
    fraction: f64,
    rng: &mut RngStream,
) -> Result<Mask> {
    let full = Mask::ones(arch);
    let (scores, _) = score_all(criterion, snapshot, &full);
    let counts: Vec<usize> = arch
        .kernels()
        .iter()
        .map(|k| round_half_up(fraction * k.len() as f64))
        .collect();
    build_mask_with_counts(&scores, &counts, &full, rng)
}
