use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four reference networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Fc,
    Conv2,
    Conv4,
    Conv6,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [ArchKind::Fc, ArchKind::Conv2, ArchKind::Conv4, ArchKind::Conv6];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Fc => "fc",
            ArchKind::Conv2 => "conv2",
            ArchKind::Conv4 => "conv4",
            ArchKind::Conv6 => "conv6",
        }
    }

    /// Training iterations per round (batch 60).
    pub fn iterations(self) -> usize {
        match self {
            ArchKind::Fc => 50_000,
            ArchKind::Conv2 => 20_000,
            ArchKind::Conv4 => 25_000,
            ArchKind::Conv6 => 30_000,
        }
    }

    pub fn adam_lr(self) -> f64 {
        match self {
            ArchKind::Fc => 1.2e-3,
            ArchKind::Conv2 => 2e-4,
            ArchKind::Conv4 | ArchKind::Conv6 => 3e-4,
        }
    }

    /// Per-round prune rate of conv layers (FC layers always use 20%).
    pub fn conv_prune_rate(self) -> f64 {
        match self {
            ArchKind::Fc | ArchKind::Conv2 | ArchKind::Conv4 => 0.10,
            ArchKind::Conv6 => 0.15,
        }
    }

    pub fn fc_prune_rate(self) -> f64 {
        0.20
    }

    pub fn default_rounds(self) -> usize {
        match self {
            ArchKind::Fc => 24,
            _ => 20,
        }
    }

    pub fn learned_mask_lr(self) -> f64 {
        match self {
            ArchKind::Fc | ArchKind::Conv2 => 100.0,
            ArchKind::Conv4 => 50.0,
            ArchKind::Conv6 => 20.0,
        }
    }

    pub fn learned_mask_iterations(self) -> usize {
        match self {
            ArchKind::Fc | ArchKind::Conv2 => 2000,
            ArchKind::Conv4 => 1000,
            ArchKind::Conv6 => 800,
        }
    }

    /// Learned masks on the deeper conv nets overfit and need early stopping.
    pub fn learned_mask_early_stopping(self) -> bool {
        matches!(self, ArchKind::Conv4 | ArchKind::Conv6)
    }

    /// Published total / conv-only weight counts, as printed (rounded).
    pub fn published_weight_counts(self) -> (f64, Option<f64>) {
        match self {
            ArchKind::Fc => (266e3, None),
            ArchKind::Conv2 => (4.3e6, Some(38e3)),
            ArchKind::Conv4 => (2.4e6, Some(260e3)),
            ArchKind::Conv6 => (2.3e6, Some(1.1e6)),
        }
    }

    pub fn dataset(self) -> DatasetKind {
        match self {
            ArchKind::Fc => DatasetKind::Mnist,
            _ => DatasetKind::Cifar10,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ArchKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::UnknownName {
                kind: "architecture",
                name: s.to_string(),
                valid: ArchKind::ALL.iter().map(|k| k.name()).collect(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

/// Which prune rate a kernel follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerClass {
    Conv,
    Dense,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One step of the forward pass. Convolutions and hidden dense layers are
/// followed by ReLU; the last dense layer emits logits.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// 3x3, stride 1, SAME padding, NHWC.
    Conv {
        kernel: usize,
        height: usize,
        width: usize,
        in_ch: usize,
        out_ch: usize,
    },
    /// 2x2 max pool, stride 2.
    Pool {
        height: usize,
        width: usize,
        channels: usize,
    },
    Dense {
        kernel: usize,
        inputs: usize,
        outputs: usize,
        relu: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub class: LayerClass,
}

impl KernelSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bias_len(&self) -> usize {
        *self.shape.last().expect("kernel has a shape")
    }

    /// Standard deviation of the Glorot normal distribution for this kernel.
    pub fn init_std(&self) -> f64 {
        (2.0 / (self.fan_in + self.fan_out) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkArch {
    name: String,
    kind: Option<ArchKind>,
    input: InputShape,
    classes: usize,
    ops: Vec<Op>,
    kernels: Vec<KernelSpec>,
}

impl NetworkArch {
    pub fn new(kind: ArchKind) -> Self {
        let mut arch = match kind {
            ArchKind::Fc => Self::dense(28 * 28, &[300, 100], 10),
            ArchKind::Conv2 => Self::conv(cifar_input(), &[&[64, 64]], &[256, 256], 10),
            ArchKind::Conv4 => Self::conv(cifar_input(), &[&[64, 64], &[128, 128]], &[256, 256], 10),
            ArchKind::Conv6 => Self::conv(cifar_input(), &[&[64, 64], &[128, 128], &[256, 256]], &[256, 256], 10),
        };
        if kind == ArchKind::Fc {
            arch.input = InputShape {
                height: 28,
                width: 28,
                channels: 1,
            };
        }
        arch.name = kind.name().to_string();
        arch.kind = Some(kind);
        arch
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    /// Fully connected ReLU network on flat inputs.
    pub fn dense(inputs: usize, hidden: &[usize], classes: usize) -> Self {
        let input = InputShape {
            height: 1,
            width: 1,
            channels: inputs,
        };
        let mut b = Builder::new(input);
        b.dense_stack(inputs, hidden, classes);
        b.finish("dense", classes)
    }

    /// Conv stages (each a list of channel counts followed by a 2x2 pool),
    /// then a dense stack.
    pub fn conv(input: InputShape, stages: &[&[usize]], hidden: &[usize], classes: usize) -> Self {
        let mut b = Builder::new(input);
        let (mut h, mut w, mut c) = (input.height, input.width, input.channels);
        for stage in stages {
            for &out in stage.iter() {
                b.conv(h, w, c, out);
                c = out;
            }
            b.ops.push(Op::Pool {
                height: h,
                width: w,
                channels: c,
            });
            h /= 2;
            w /= 2;
        }
        b.dense_stack(h * w * c, hidden, classes);
        b.finish("conv", classes)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> Option<ArchKind> {
        self.kind
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn kernels(&self) -> &[KernelSpec] {
        &self.kernels
    }

    pub fn num_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn total_weights(&self) -> usize {
        self.kernels.iter().map(KernelSpec::len).sum()
    }

    pub fn conv_weights(&self) -> usize {
        self.kernels
            .iter()
            .filter(|k| k.class == LayerClass::Conv)
            .map(KernelSpec::len)
            .sum()
    }

    pub fn layer_stds(&self) -> Vec<f64> {
        self.kernels.iter().map(KernelSpec::init_std).collect()
    }
}

fn cifar_input() -> InputShape {
    InputShape {
        height: 32,
        width: 32,
        channels: 3,
    }
}

struct Builder {
    input: InputShape,
    ops: Vec<Op>,
    kernels: Vec<KernelSpec>,
}

impl Builder {
    fn new(input: InputShape) -> Self {
        Self {
            input,
            ops: Vec::new(),
            kernels: Vec::new(),
        }
    }

    fn conv(&mut self, height: usize, width: usize, in_ch: usize, out_ch: usize) {
        let kernel = self.kernels.len();
        self.kernels.push(KernelSpec {
            shape: vec![3, 3, in_ch, out_ch],
            fan_in: 9 * in_ch,
            fan_out: 9 * out_ch,
            class: LayerClass::Conv,
        });
        self.ops.push(Op::Conv {
            kernel,
            height,
            width,
            in_ch,
            out_ch,
        });
    }

    fn dense_stack(&mut self, inputs: usize, hidden: &[usize], classes: usize) {
        let mut prev = inputs;
        let widths = hidden.iter().copied().chain(std::iter::once(classes));
        let n = hidden.len() + 1;
        for (i, out) in widths.enumerate() {
            let last = i + 1 == n;
            let kernel = self.kernels.len();
            self.kernels.push(KernelSpec {
                shape: vec![prev, out],
                fan_in: prev,
                fan_out: out,
                class: if last { LayerClass::Output } else { LayerClass::Dense },
            });
            self.ops.push(Op::Dense {
                kernel,
                inputs: prev,
                outputs: out,
                relu: !last,
            });
            prev = out;
        }
    }

    fn finish(self, name: &str, classes: usize) -> NetworkArch {
        NetworkArch {
            name: name.to_string(),
            kind: None,
            input: self.input,
            classes,
            ops: self.ops,
            kernels: self.kernels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_weight_counts() {
        // hand arithmetic from the layer widths with SAME padding
        let fc = NetworkArch::new(ArchKind::Fc);
        assert_eq!(fc.total_weights(), 784 * 300 + 300 * 100 + 100 * 10);
        let c2 = NetworkArch::new(ArchKind::Conv2);
        assert_eq!(c2.conv_weights(), 27 * 64 + 576 * 64);
        assert_eq!(c2.total_weights(), 38_592 + 16 * 16 * 64 * 256 + 256 * 256 + 2560);
        let c6 = NetworkArch::new(ArchKind::Conv6);
        assert_eq!(c6.conv_weights(), 1_144_512);
        assert_eq!(c6.total_weights(), 1_144_512 + 4096 * 256 + 65_536 + 2560);
    }

    #[test]
    fn output_layer_is_last() {
        let arch = NetworkArch::new(ArchKind::Conv4);
        let classes: Vec<_> = arch.kernels().iter().map(|k| k.class).collect();
        assert_eq!(classes.iter().filter(|&&c| c == LayerClass::Conv).count(), 4);
        assert_eq!(*classes.last().unwrap(), LayerClass::Output);
    }

    #[test]
    fn unknown_arch_lists_valid_names() {
        let err = "conv3".parse::<ArchKind>().unwrap_err().to_string();
        assert!(err.contains("fc, conv2, conv4, conv6"), "{err}");
    }
}
