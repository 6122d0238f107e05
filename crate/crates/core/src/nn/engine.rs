//! Forward and backward passes over effective (already masked / rescaled)
//! kernels. Everything is single-threaded so that a fixed input always
//! produces the same bits.

use crate::error::{Error, Result};
use crate::nn::arch::{NetworkArch, Op};
use crate::tensor::Real;

/// Activations kept by a training forward pass.
#[derive(Debug)]
pub struct Trace<T> {
    /// `inputs[i]` is the input of op `i`.
    inputs: Vec<Vec<T>>,
    /// Argmax positions (per sample, within the op input) for pool ops.
    pool_argmax: Vec<Vec<u32>>,
    logits: Vec<T>,
    batch: usize,
}

impl<T> Trace<T> {
    pub fn logits(&self) -> &[T] {
        &self.logits
    }
}

/// Gradients with respect to the effective kernels and the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub kernels: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(arch: &NetworkArch) -> Self {
        Self {
            kernels: arch.kernels().iter().map(|k| vec![T::zero(); k.len()]).collect(),
            biases: arch.kernels().iter().map(|k| vec![T::zero(); k.bias_len()]).collect(),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Conv { .. } => "conv",
        Op::Pool { .. } => "maxpool",
        Op::Dense { relu: true, .. } => "dense+relu",
        Op::Dense { relu: false, .. } => "dense",
    }
}

pub fn forward_effective<T: Real>(
    arch: &NetworkArch,
    kernels: &[&[T]],
    biases: &[&[T]],
    input: &[T],
    batch: usize,
) -> Result<Vec<T>> {
    run(arch, kernels, biases, input, batch, false).map(|t| t.logits)
}

pub fn forward_traced<T: Real>(
    arch: &NetworkArch,
    kernels: &[&[T]],
    biases: &[&[T]],
    input: &[T],
    batch: usize,
) -> Result<Trace<T>> {
    run(arch, kernels, biases, input, batch, true)
}

fn run<T: Real>(
    arch: &NetworkArch,
    kernels: &[&[T]],
    biases: &[&[T]],
    input: &[T],
    batch: usize,
    keep: bool,
) -> Result<Trace<T>> {
    if input.len() != batch * arch.input().len() {
        return Err(Error::Shape {
            context: "network input",
            expected: vec![batch, arch.input().len()],
            actual: vec![input.len()],
        });
    }
    let mut inputs = Vec::new();
    let mut pool_argmax = Vec::new();
    let mut cur = input.to_vec();
    for (i, op) in arch.ops().iter().enumerate() {
        let (next, argmax) = match *op {
            Op::Conv {
                kernel,
                height,
                width,
                in_ch,
                out_ch,
            } => (
                conv_forward(
                    &cur,
                    batch,
                    height,
                    width,
                    in_ch,
                    out_ch,
                    kernels[kernel],
                    biases[kernel],
                ),
                Vec::new(),
            ),
            Op::Pool {
                height,
                width,
                channels,
            } => pool_forward(&cur, batch, height, width, channels),
            Op::Dense {
                kernel,
                inputs: fan_in,
                outputs,
                relu,
            } => (
                dense_forward(&cur, batch, fan_in, outputs, kernels[kernel], biases[kernel], relu),
                Vec::new(),
            ),
        };
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                layer: i,
                op: op_name(op),
            });
        }
        if keep {
            inputs.push(std::mem::replace(&mut cur, next));
            pool_argmax.push(argmax);
        } else {
            cur = next;
        }
    }
    Ok(Trace {
        inputs,
        pool_argmax,
        logits: cur,
        batch,
    })
}

/// Backpropagate `dlogits` through a traced forward pass.
pub fn backward_effective<T: Real>(
    arch: &NetworkArch,
    kernels: &[&[T]],
    trace: &Trace<T>,
    dlogits: Vec<T>,
) -> Gradients<T> {
    let mut grads = Gradients::zeros(arch);
    let n = trace.batch;
    let ops = arch.ops();
    let mut grad = dlogits;
    for i in (0..ops.len()).rev() {
        let input = &trace.inputs[i];
        let output: &[T] = if i + 1 < ops.len() {
            &trace.inputs[i + 1]
        } else {
            &trace.logits
        };
        let need_input_grad = i > 0;
        grad = match ops[i] {
            Op::Dense {
                kernel,
                inputs: fan_in,
                outputs,
                relu,
            } => {
                if relu {
                    relu_backward(&mut grad, output);
                }
                T::gemm(
                    fan_in,
                    n,
                    outputs,
                    input,
                    true,
                    &grad,
                    false,
                    &mut grads.kernels[kernel],
                    false,
                );
                column_sums(&grad, outputs, &mut grads.biases[kernel]);
                if need_input_grad {
                    let mut dx = vec![T::zero(); n * fan_in];
                    T::gemm(n, outputs, fan_in, &grad, false, kernels[kernel], true, &mut dx, false);
                    dx
                } else {
                    Vec::new()
                }
            }
            Op::Conv {
                kernel,
                height,
                width,
                in_ch,
                out_ch,
            } => {
                relu_backward(&mut grad, output);
                conv_backward(
                    input,
                    &grad,
                    n,
                    height,
                    width,
                    in_ch,
                    out_ch,
                    kernels[kernel],
                    &mut grads.kernels[kernel],
                    &mut grads.biases[kernel],
                    need_input_grad,
                )
            }
            Op::Pool {
                height,
                width,
                channels,
            } => pool_backward(&grad, &trace.pool_argmax[i], n, height * width * channels),
        };
    }
    grads
}

fn relu_backward<T: Real>(grad: &mut [T], output: &[T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

fn column_sums<T: Real>(m: &[T], cols: usize, out: &mut [T]) {
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

fn dense_forward<T: Real>(x: &[T], n: usize, fan_in: usize, outputs: usize, w: &[T], b: &[T], relu: bool) -> Vec<T> {
    let mut y = vec![T::zero(); n * outputs];
    for row in y.chunks_exact_mut(outputs) {
        row.copy_from_slice(b);
    }
    T::gemm(n, fan_in, outputs, x, false, w, false, &mut y, true);
    if relu {
        y.iter_mut().for_each(|v| *v = v.max(T::zero()));
    }
    y
}

/// SAME-padded 3x3 patches of one NHWC sample: `(h*w) x (9*c)`.
fn im2col<T: Real>(x: &[T], h: usize, w: usize, c: usize, col: &mut [T]) {
    let row_len = 9 * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &mut col[(y * w + xx) * row_len..(y * w + xx + 1) * row_len];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    let dst = &mut row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                    } else {
                        let src = (sy as usize * w + sx as usize) * c;
                        dst.copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], h: usize, w: usize, c: usize, dx: &mut [T]) {
    let row_len = 9 * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &col[(y * w + xx) * row_len..(y * w + xx + 1) * row_len];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = &row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                    let dst = (sy as usize * w + sx as usize) * c;
                    for (d, &s) in dx[dst..dst + c].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Real>(x: &[T], n: usize, h: usize, w: usize, cin: usize, cout: usize, k: &[T], b: &[T]) -> Vec<T> {
    let pixels = h * w;
    let mut y = vec![T::zero(); n * pixels * cout];
    let mut col = vec![T::zero(); pixels * 9 * cin];
    for s in 0..n {
        im2col(&x[s * pixels * cin..(s + 1) * pixels * cin], h, w, cin, &mut col);
        let ys = &mut y[s * pixels * cout..(s + 1) * pixels * cout];
        for row in ys.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
        T::gemm(pixels, 9 * cin, cout, &col, false, k, false, ys, true);
        ys.iter_mut().for_each(|v| *v = v.max(T::zero()));
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: &[T],
    dk: &mut [T],
    db: &mut [T],
    need_input_grad: bool,
) -> Vec<T> {
    let pixels = h * w;
    let mut col = vec![T::zero(); pixels * 9 * cin];
    let mut dcol = if need_input_grad {
        vec![T::zero(); pixels * 9 * cin]
    } else {
        Vec::new()
    };
    let mut dx = if need_input_grad {
        vec![T::zero(); n * pixels * cin]
    } else {
        Vec::new()
    };
    for s in 0..n {
        im2col(&x[s * pixels * cin..(s + 1) * pixels * cin], h, w, cin, &mut col);
        let dys = &dy[s * pixels * cout..(s + 1) * pixels * cout];
        T::gemm(9 * cin, pixels, cout, &col, true, dys, false, dk, true);
        column_sums(dys, cout, db);
        if need_input_grad {
            T::gemm(pixels, cout, 9 * cin, dys, false, k, true, &mut dcol, false);
            col2im(&dcol, h, w, cin, &mut dx[s * pixels * cin..(s + 1) * pixels * cin]);
        }
    }
    dx
}

fn pool_forward<T: Real>(x: &[T], n: usize, h: usize, w: usize, c: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(n * oh * ow * c);
    let mut idx = Vec::with_capacity(n * oh * ow * c);
    for s in 0..n {
        let xs = &x[s * h * w * c..(s + 1) * h * w * c];
        for py in 0..oh {
            for px in 0..ow {
                for ch in 0..c {
                    let mut best = (2 * py * w + 2 * px) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = ((2 * py + dy) * w + 2 * px + dx) * c + ch;
                        if xs[j] > xs[best] {
                            best = j;
                        }
                    }
                    y.push(xs[best]);
                    idx.push(best as u32);
                }
            }
        }
    }
    (y, idx)
}

fn pool_backward<T: Real>(dy: &[T], argmax: &[u32], n: usize, in_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); n * in_len];
    let per = dy.len() / n.max(1);
    for s in 0..n {
        let dxs = &mut dx[s * in_len..(s + 1) * in_len];
        for (g, &j) in dy[s * per..(s + 1) * per].iter().zip(&argmax[s * per..(s + 1) * per]) {
            dxs[j as usize] = dxs[j as usize] + *g;
        }
    }
    dx
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], labels: &[u8], classes: usize) -> (f64, Vec<T>) {
    let n = labels.len();
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0f64;
    let scale = 1.0 / n as f64;
    for ((row, g), &label) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() - (row[label as usize].as_f64() - max);
        for (j, (gj, e)) in g.iter_mut().zip(&exps).enumerate() {
            let target = if j == label as usize { 1.0 } else { 0.0 };
            *gj = T::of((e / sum - target) * scale);
        }
    }
    (loss * scale, grad)
}

/// Per-sample loss and correctness without building gradients.
pub fn loss_and_hits<T: Real>(logits: &[T], labels: &[u8], classes: usize) -> (f64, usize) {
    let mut loss = 0.0;
    let mut hits = 0;
    for (row, &label) in logits.chunks_exact(classes).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        loss += sum.ln() - (row[label as usize].as_f64() - max);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        if best == label as usize {
            hits += 1;
        }
    }
    (loss, hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln10() {
        let logits = vec![0.3f64; 20];
        let (loss, _) = softmax_cross_entropy(&logits, &[1, 7], 10);
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pool_picks_max() {
        // one sample, 2x2x1
        let (y, idx) = pool_forward(&[1.0f64, 4.0, 3.0, 2.0], 1, 2, 2, 1);
        assert_eq!(y, vec![4.0]);
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c
        let (h, w, c) = (3, 4, 2);
        let x: Vec<f64> = (0..h * w * c).map(|i| (i as f64 * 0.37).sin()).collect();
        let cv: Vec<f64> = (0..h * w * 9 * c).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; cv.len()];
        im2col(&x, h, w, c, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&cv, h, w, c, &mut back);
        let lhs: f64 = col.iter().zip(&cv).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
