//! C ABI for ltlab.
//!
//! Every fallible function returns an [`LtStatus`]; on failure the message is
//! available from [`ltlab_last_error_message`] on the same thread. Networks and
//! masks are opaque handles owned by the caller and released with the matching
//! `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ltlab::criteria::{one_shot_mask, Criterion, WeightSnapshot};
use ltlab::nn::arch::NetworkArch;
use ltlab::nn::network::evaluate;
use ltlab::nn::params::ParameterSet;
use ltlab::supermask::{SupermaskPack, Treatment};
use ltlab::{Error, Mask, RngStream};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Format = 4,
    Version = 5,
    Io = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Other = 10,
}

/// Untrained or trained weights of one of the named architectures.
pub struct LtNetwork {
    arch: NetworkArch,
    params: ParameterSet<f32>,
}

/// One binary mask per prunable kernel.
pub struct LtMask {
    mask: Mask,
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    TooSmall { needed: usize, capacity: usize },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn status(&self) -> LtStatus {
        match self {
            Failure::Null(_) => LtStatus::NullPointer,
            Failure::TooSmall { .. } => LtStatus::BufferTooSmall,
            Failure::Lib(e) => match e {
                Error::Shape { .. } | Error::CountMismatch { .. } => LtStatus::Shape,
                Error::InvalidShape { .. }
                | Error::UnknownName { .. }
                | Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::BadLabel { .. }
                | Error::BatchTooLarge { .. } => LtStatus::InvalidArgument,
                Error::Format { .. } | Error::BadMagic { .. } | Error::FileSize { .. } => LtStatus::Format,
                Error::Version { .. } => LtStatus::Version,
                Error::Io { .. } => LtStatus::Io,
                Error::NonFinite { .. } | Error::Diverged { .. } => LtStatus::Numeric,
                _ => LtStatus::Other,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Null(what) => format!("{what} is null"),
            Failure::TooSmall { needed, capacity } => {
                format!("buffer holds {capacity} elements, {needed} needed")
            }
            Failure::Lib(e) => {
                let mut msg = e.to_string();
                let mut source = std::error::Error::source(e);
                while let Some(s) = source {
                    msg.push_str(": ");
                    msg.push_str(&s.to_string());
                    source = s.source();
                }
                msg
            }
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            LtStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(failure.message());
            failure.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            LtStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, Failure> {
    s.parse::<T>().map_err(Failure::Lib)
}

fn check_layer(layer: usize, count: usize) -> Result<(), Failure> {
    if layer >= count {
        return Err(Failure::Lib(Error::InvalidArgument(format!(
            "layer {layer} out of range, network has {count}"
        ))));
    }
    Ok(())
}

fn check_len(needed: usize, capacity: usize) -> Result<(), Failure> {
    if capacity != needed {
        return Err(Failure::TooSmall { needed, capacity });
    }
    Ok(())
}

fn boxed<T>(value: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ltlab_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => c"unknown",
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ltlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Glorot-normal network named `arch` (`fc`, `conv2`, `conv4`, `conv6`) from `seed`.
///
/// # Safety
/// `arch` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_network_new(arch: *const c_char, seed: u64, out: *mut *mut LtNetwork) -> LtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let arch = NetworkArch::from_name(str_arg(arch, "arch")?)?;
        let params = ParameterSet::from_seed(&arch, seed)?;
        boxed(LtNetwork { arch, params }, out);
        Ok(())
    })
}

/// Release a network. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ltlab_network_free(net: *mut LtNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Deep copy of a network.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_network_clone(net: *const LtNetwork, out: *mut *mut LtNetwork) -> LtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let net = ref_arg(net, "net")?;
        boxed(
            LtNetwork {
                arch: net.arch.clone(),
                params: net.params.clone(),
            },
            out,
        );
        Ok(())
    })
}

/// Number of prunable kernels.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_network_num_layers(net: *const LtNetwork, out: *mut usize) -> LtStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(net, "net")?.arch.num_kernels();
        Ok(())
    })
}

/// Number of weights in kernel `layer`.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_network_layer_len(net: *const LtNetwork, layer: usize, out: *mut usize) -> LtStatus {
    guard(|| {
        let net = ref_arg(net, "net")?;
        check_layer(layer, net.arch.num_kernels())?;
        *out_arg(out, "out")? = net.arch.kernels()[layer].len();
        Ok(())
    })
}

/// Copy kernel `layer` into `buf`, which must hold exactly the layer length.
///
/// # Safety
/// `buf` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ltlab_network_get_kernel(
    net: *const LtNetwork,
    layer: usize,
    buf: *mut f32,
    len: usize,
) -> LtStatus {
    guard(|| {
        let net = ref_arg(net, "net")?;
        check_layer(layer, net.arch.num_kernels())?;
        let kernel = net.params.layers[layer].kernel.as_slice();
        check_len(kernel.len(), len)?;
        slice_out(buf, len, "buf")?.copy_from_slice(kernel);
        Ok(())
    })
}

/// Overwrite kernel `layer` from `buf`, which must hold exactly the layer length.
///
/// # Safety
/// `buf` must point to `len` readable floats.
#[no_mangle]
pub unsafe extern "C" fn ltlab_network_set_kernel(
    net: *mut LtNetwork,
    layer: usize,
    buf: *const f32,
    len: usize,
) -> LtStatus {
    guard(|| {
        let net = out_arg(net, "net")?;
        check_layer(layer, net.arch.num_kernels())?;
        let kernel = net.params.layers[layer].kernel.as_mut_slice();
        check_len(kernel.len(), len)?;
        kernel.copy_from_slice(slice_arg(buf, len, "buf")?);
        Ok(())
    })
}

/// Score of one weight under the named criterion.
///
/// # Safety
/// `criterion` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_score_pair(
    criterion: *const c_char,
    wi: f64,
    wf: f64,
    alpha: f64,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        let criterion: Criterion = parse(str_arg(criterion, "criterion")?)?;
        *out_arg(out, "out")? = criterion.score_pair(wi, wf, alpha);
        Ok(())
    })
}

/// Mask keeping `fraction` of every kernel, ranked by `criterion` over the
/// pair (`initial`, `last`). Ties are broken with a stream seeded by `tie_seed`.
///
/// # Safety
/// Handles must be live; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_mask_one_shot(
    initial: *const LtNetwork,
    last: *const LtNetwork,
    criterion: *const c_char,
    fraction: f64,
    tie_seed: u64,
    out: *mut *mut LtMask,
) -> LtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let initial = ref_arg(initial, "initial")?;
        let last = ref_arg(last, "last")?;
        if initial.arch != last.arch {
            return Err(Failure::Lib(Error::InvalidArgument(format!(
                "architectures differ: {} vs {}",
                initial.arch.name(),
                last.arch.name()
            ))));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Failure::Lib(Error::InvalidArgument(format!(
                "fraction {fraction} outside [0, 1]"
            ))));
        }
        let criterion: Criterion = parse(str_arg(criterion, "criterion")?)?;
        let snapshot = WeightSnapshot::from_params(&initial.params, &last.params)?;
        let mut ties = RngStream::new("ties", tie_seed);
        let mask = one_shot_mask(&initial.arch, criterion, &snapshot, fraction, &mut ties)?;
        boxed(LtMask { mask }, out);
        Ok(())
    })
}

/// Release a mask. Null is ignored.
///
/// # Safety
/// `mask` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ltlab_mask_free(mask: *mut LtMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Kept and total weight counts of mask layer `layer`.
///
/// # Safety
/// `mask` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_mask_layer_counts(
    mask: *const LtMask,
    layer: usize,
    out_ones: *mut usize,
    out_len: *mut usize,
) -> LtStatus {
    guard(|| {
        let mask = &ref_arg(mask, "mask")?.mask;
        check_layer(layer, mask.num_layers())?;
        let l = mask.layer(layer);
        *out_arg(out_ones, "out_ones")? = l.ones();
        *out_arg(out_len, "out_len")? = l.len();
        Ok(())
    })
}

/// Fraction of all masked weights that are kept.
///
/// # Safety
/// `mask` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_mask_remaining_fraction(mask: *const LtMask, out: *mut f64) -> LtStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(mask, "mask")?.mask.remaining_fraction();
        Ok(())
    })
}

/// Write mask layer `layer` as one byte (0 or 1) per weight.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ltlab_mask_get_layer(mask: *const LtMask, layer: usize, buf: *mut u8, len: usize) -> LtStatus {
    guard(|| {
        let mask = &ref_arg(mask, "mask")?.mask;
        check_layer(layer, mask.num_layers())?;
        let bits = mask.layer(layer).bits();
        check_len(bits.len(), len)?;
        for (o, &b) in slice_out(buf, len, "buf")?.iter_mut().zip(bits) {
            *o = u8::from(b);
        }
        Ok(())
    })
}

/// Serialize `mask` with the init seed and treatment into a Supermask pack.
/// With `buf` null only the size is written to `out_len`; otherwise `cap`
/// must be at least that size.
///
/// # Safety
/// `buf`, when non-null, must point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ltlab_pack_encode(
    arch: *const c_char,
    seed: u64,
    treatment: *const c_char,
    mask: *const LtMask,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> LtStatus {
    guard(|| {
        let out_len = out_arg(out_len, "out_len")?;
        let arch_name = str_arg(arch, "arch")?;
        let arch = NetworkArch::from_name(arch_name)?;
        let mask = ref_arg(mask, "mask")?.mask.clone();
        mask.check_arch(&arch)?;
        let pack = SupermaskPack {
            arch: arch_name.to_string(),
            seed,
            treatment: parse::<Treatment>(str_arg(treatment, "treatment")?)?,
            mask,
        };
        let bytes = pack.to_bytes()?;
        *out_len = bytes.len();
        if buf.is_null() {
            return Ok(());
        }
        if cap < bytes.len() {
            return Err(Failure::TooSmall {
                needed: bytes.len(),
                capacity: cap,
            });
        }
        slice_out(buf, bytes.len(), "buf")?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// Decode a Supermask pack into its weights (treatment applied) and mask.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ltlab_pack_decode(
    bytes: *const u8,
    len: usize,
    out_net: *mut *mut LtNetwork,
    out_mask: *mut *mut LtMask,
) -> LtStatus {
    guard(|| {
        let out_net = out_arg(out_net, "out_net")?;
        let out_mask = out_arg(out_mask, "out_mask")?;
        *out_net = ptr::null_mut();
        *out_mask = ptr::null_mut();
        let pack = SupermaskPack::from_bytes(slice_arg(bytes, len, "bytes")?)?;
        let (arch, params) = pack.reconstruct::<f32>()?;
        boxed(LtNetwork { arch, params }, out_net);
        boxed(LtMask { mask: pack.mask }, out_mask);
        Ok(())
    })
}

/// Accuracy (and optionally mean loss) of `net` masked by `mask` on `n`
/// flat `[0, 1]` images. A null `mask` keeps every weight.
///
/// # Safety
/// `images` must hold `n` times the input size floats, `labels` `n` bytes;
/// `out_loss` may be null.
#[no_mangle]
pub unsafe extern "C" fn ltlab_evaluate(
    net: *const LtNetwork,
    mask: *const LtMask,
    images: *const f32,
    labels: *const u8,
    n: usize,
    out_accuracy: *mut f64,
    out_loss: *mut f64,
) -> LtStatus {
    guard(|| {
        let out_accuracy = out_arg(out_accuracy, "out_accuracy")?;
        let net = ref_arg(net, "net")?;
        let ones;
        let mask = match mask.as_ref() {
            Some(m) => &m.mask,
            None => {
                ones = Mask::ones(&net.arch);
                &ones
            }
        };
        let per = net.arch.input().len();
        let images = slice_arg(images, n * per, "images")?;
        let labels = slice_arg(labels, n, "labels")?;
        let eval = evaluate(&net.arch, &net.params, mask, images, labels)?;
        *out_accuracy = eval.accuracy;
        if let Some(loss) = out_loss.as_mut() {
            *loss = eval.loss;
        }
        Ok(())
    })
}
