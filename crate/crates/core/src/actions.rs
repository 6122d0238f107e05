//! Treatments of kept (mask-1) and pruned (mask-0) weights between rounds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::criteria::WeightSnapshot;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::params::ParameterSet;
use crate::rng::RngStream;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mask1Kind {
    Rewind,
    Reinit,
    Reshuffle,
    Constant,
}

/// Mask-1 action; the `sign_preserve` variants force `sign(w_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask1Action {
    pub kind: Mask1Kind,
    pub sign_preserve: bool,
}

impl Mask1Action {
    pub const REWIND: Mask1Action = Mask1Action {
        kind: Mask1Kind::Rewind,
        sign_preserve: false,
    };

    pub const NAMES: [&'static str; 7] = [
        "rewind",
        "reinit",
        "reinit_sign",
        "reshuffle",
        "reshuffle_sign",
        "constant",
        "constant_sign",
    ];

    pub fn name(&self) -> String {
        let base = match self.kind {
            Mask1Kind::Rewind => "rewind",
            Mask1Kind::Reinit => "reinit",
            Mask1Kind::Reshuffle => "reshuffle",
            Mask1Kind::Constant => "constant",
        };
        if self.sign_preserve && self.kind != Mask1Kind::Rewind {
            format!("{base}_sign")
        } else {
            base.to_string()
        }
    }
}

impl fmt::Display for Mask1Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Mask1Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, sign_preserve) = match s.strip_suffix("_sign") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let kind = match base {
            "rewind" if !sign_preserve => Mask1Kind::Rewind,
            "reinit" => Mask1Kind::Reinit,
            "reshuffle" => Mask1Kind::Reshuffle,
            "constant" => Mask1Kind::Constant,
            _ => {
                return Err(Error::UnknownName {
                    kind: "mask-1 action",
                    name: s.to_string(),
                    valid: Mask1Action::NAMES.to_vec(),
                })
            }
        };
        Ok(Mask1Action { kind, sign_preserve })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mask0Action {
    FreezeZero,
    FreezeInit,
    /// Pruned weights: 0 if they moved toward zero, else `w_i`.
    InitOrZeroPrunedOnly,
    /// Same rule on every weight; kept weights stay trainable.
    InitOrZeroAll,
    /// Random pruned subset zeroed, sized like `InitOrZeroPrunedOnly`'s zero set.
    ControlRandomZero,
    /// Pruned weights: 0 if they moved away from zero, else `w_i`.
    ControlReverse,
}

impl Mask0Action {
    pub const ALL: [Mask0Action; 6] = [
        Mask0Action::FreezeZero,
        Mask0Action::FreezeInit,
        Mask0Action::InitOrZeroPrunedOnly,
        Mask0Action::InitOrZeroAll,
        Mask0Action::ControlRandomZero,
        Mask0Action::ControlReverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mask0Action::FreezeZero => "freeze_zero",
            Mask0Action::FreezeInit => "freeze_init",
            Mask0Action::InitOrZeroPrunedOnly => "init_or_zero_pruned_only",
            Mask0Action::InitOrZeroAll => "init_or_zero_all",
            Mask0Action::ControlRandomZero => "control_random_zero",
            Mask0Action::ControlReverse => "control_reverse",
        }
    }
}

impl fmt::Display for Mask0Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mask0Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mask0Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "mask-0 action",
                name: s.to_string(),
                valid: Mask0Action::ALL.iter().map(|a| a.name()).collect(),
            })
    }
}

/// `|w_f| < |w_i|`; equal magnitudes count as moving away.
pub fn moved_toward_zero(wi: f64, wf: f64) -> bool {
    wf.abs() < wi.abs()
}

fn sign_of(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check(snapshot_layers: usize, mask: &Mask, params_layers: usize, stds: Option<usize>) -> Result<()> {
    let n = mask.num_layers();
    if snapshot_layers != n || params_layers != n || stds.is_some_and(|s| s != n) {
        return Err(Error::Shape {
            context: "action layer counts",
            expected: vec![n],
            actual: vec![snapshot_layers, params_layers, stds.unwrap_or(n)],
        });
    }
    Ok(())
}

/// Write new values for every kept (mask-1) kernel entry into `params`.
/// Pruned entries are left for [`apply_mask0`].
///
/// `layer_stds` is the standard deviation of each layer's original init
/// distribution, used by `reinit` draws and as the `constant` magnitude.
pub fn apply_mask1<T: Real>(
    action: Mask1Action,
    snapshot: &WeightSnapshot<T>,
    mask: &Mask,
    layer_stds: &[f64],
    rng: &mut RngStream,
    params: &mut ParameterSet<T>,
) -> Result<()> {
    check(snapshot.num_layers(), mask, params.layers.len(), Some(layer_stds.len()))?;
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let wi = snapshot.initial(l);
        let bits = mask.layer(l).bits();
        let std = layer_stds[l];
        let kept: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
        let shuffled: Vec<f64> = if action.kind == Mask1Kind::Reshuffle {
            let mut vals: Vec<f64> = kept.iter().map(|&i| wi[i].as_f64()).collect();
            rng.shuffle(&mut vals);
            vals
        } else {
            Vec::new()
        };
        // reinit and constant draw for every position so that a replayed
        // stream gives each position the same value in every round
        let draws: Vec<f64> = match action.kind {
            Mask1Kind::Reinit => (0..bits.len()).map(|_| std * rng.standard_normal()).collect(),
            Mask1Kind::Constant => (0..bits.len()).map(|_| if rng.coin() { std } else { -std }).collect(),
            _ => Vec::new(),
        };
        let kernel = layer.kernel.as_mut_slice();
        for (j, &i) in kept.iter().enumerate() {
            let w0 = wi[i].as_f64();
            let value = match action.kind {
                Mask1Kind::Rewind => w0,
                Mask1Kind::Reinit | Mask1Kind::Constant => draws[i],
                Mask1Kind::Reshuffle => shuffled[j],
            };
            let value = if action.sign_preserve && action.kind != Mask1Kind::Rewind {
                value.abs() * sign_of(w0)
            } else {
                value
            };
            kernel[i] = T::of(value);
        }
    }
    Ok(())
}

/// Set pruned entries (and, for `InitOrZeroAll`, kept entries) and freeze
/// exactly the pruned entries.
pub fn apply_mask0<T: Real>(
    action: Mask0Action,
    snapshot: &WeightSnapshot<T>,
    mask: &Mask,
    rng: &mut RngStream,
    params: &mut ParameterSet<T>,
) -> Result<()> {
    check(snapshot.num_layers(), mask, params.layers.len(), None)?;
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let wi = snapshot.initial(l);
        let wf = snapshot.last(l);
        let bits = mask.layer(l).bits();
        let toward = |i: usize| moved_toward_zero(wi[i].as_f64(), wf[i].as_f64());
        let pruned: Vec<usize> = (0..bits.len()).filter(|&i| !bits[i]).collect();
        let zero_set: Vec<bool> = match action {
            Mask0Action::FreezeZero => vec![true; pruned.len()],
            Mask0Action::FreezeInit => vec![false; pruned.len()],
            Mask0Action::InitOrZeroPrunedOnly | Mask0Action::InitOrZeroAll => {
                pruned.iter().map(|&i| toward(i)).collect()
            }
            Mask0Action::ControlReverse => pruned.iter().map(|&i| !toward(i)).collect(),
            Mask0Action::ControlRandomZero => {
                let count = pruned.iter().filter(|&&i| toward(i)).count();
                let mut z = vec![false; pruned.len()];
                for j in rng.sample_indices(pruned.len(), count) {
                    z[j] = true;
                }
                z
            }
        };
        let kernel = layer.kernel.as_mut_slice();
        for (&i, &zero) in pruned.iter().zip(&zero_set) {
            kernel[i] = if zero { T::zero() } else { wi[i] };
        }
        for (i, f) in layer.frozen.iter_mut().enumerate() {
            *f = !bits[i];
        }
        if action == Mask0Action::InitOrZeroAll {
            for i in (0..bits.len()).filter(|&i| bits[i]) {
                kernel[i] = if toward(i) { T::zero() } else { wi[i] };
            }
        }
    }
    Ok(())
}

/// Every kernel entry becomes `sign(w_i) · std_layer`; biases are kept.
pub fn signed_constant_transform<T: Real>(params: &ParameterSet<T>, layer_stds: &[f64]) -> Result<ParameterSet<T>> {
    if layer_stds.len() != params.layers.len() {
        return Err(Error::Shape {
            context: "layer stds",
            expected: vec![params.layers.len()],
            actual: vec![layer_stds.len()],
        });
    }
    let mut out = params.clone();
    for (layer, &std) in out.layers.iter_mut().zip(layer_stds) {
        for w in layer.kernel.as_mut_slice() {
            *w = T::of(sign_of(w.as_f64()) * std);
        }
    }
    Ok(out)
}
