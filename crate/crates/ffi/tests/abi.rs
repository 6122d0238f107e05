use std::ffi::{c_char, CStr};
use std::process::Command;
use std::ptr;

use ltlab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ltlab_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn network(arch: &CStr, seed: u64) -> *mut LtNetwork {
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { ltlab_network_new(arch.as_ptr(), seed, &mut net) },
        LtStatus::Ok
    );
    assert!(!net.is_null());
    net
}

fn kernel(net: *const LtNetwork, layer: usize) -> Vec<f32> {
    let mut len = 0;
    unsafe {
        assert_eq!(ltlab_network_layer_len(net, layer, &mut len), LtStatus::Ok);
        let mut buf = vec![0.0f32; len];
        assert_eq!(
            ltlab_network_get_kernel(net, layer, buf.as_mut_ptr(), len),
            LtStatus::Ok
        );
        buf
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(ltlab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn network_layers_match_fc() {
    let net = network(c"fc", 1);
    let mut n = 0;
    unsafe {
        assert_eq!(ltlab_network_num_layers(net, &mut n), LtStatus::Ok);
        assert_eq!(n, 3);
        let lens: Vec<usize> = (0..n)
            .map(|l| {
                let mut len = 0;
                ltlab_network_layer_len(net, l, &mut len);
                len
            })
            .collect();
        assert_eq!(lens, vec![784 * 300, 300 * 100, 100 * 10]);
        ltlab_network_free(net);
    }
}

#[test]
fn same_seed_same_weights() {
    let a = network(c"conv2", 7);
    let b = network(c"conv2", 7);
    let c = network(c"conv2", 8);
    assert_eq!(kernel(a, 0), kernel(b, 0));
    assert_ne!(kernel(a, 0), kernel(c, 0));
    unsafe {
        ltlab_network_free(a);
        ltlab_network_free(b);
        ltlab_network_free(c);
    }
}

#[test]
fn unknown_arch_sets_error() {
    let mut net = ptr::null_mut();
    let status = unsafe { ltlab_network_new(c"resnet".as_ptr(), 0, &mut net) };
    assert_eq!(status, LtStatus::InvalidArgument);
    assert!(net.is_null());
    assert!(last_error().contains("resnet"), "{}", last_error());
}

#[test]
fn null_arguments_are_reported() {
    let mut out = 0usize;
    assert_eq!(
        unsafe { ltlab_network_num_layers(ptr::null(), &mut out) },
        LtStatus::NullPointer
    );
    assert!(last_error().contains("net"));
    assert_eq!(
        unsafe { ltlab_network_new(ptr::null::<c_char>(), 0, ptr::null_mut()) },
        LtStatus::NullPointer
    );
    unsafe {
        ltlab_network_free(ptr::null_mut());
        ltlab_mask_free(ptr::null_mut());
    }
}

#[test]
fn wrong_buffer_length_is_rejected() {
    let net = network(c"fc", 1);
    let mut buf = vec![0.0f32; 10];
    let status = unsafe { ltlab_network_get_kernel(net, 2, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, LtStatus::BufferTooSmall);
    let status = unsafe { ltlab_network_get_kernel(net, 9, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, LtStatus::InvalidArgument);
    unsafe { ltlab_network_free(net) };
}

#[test]
fn score_pair_matches_criteria() {
    let mut s = 0.0;
    unsafe {
        assert_eq!(
            ltlab_score_pair(c"movement".as_ptr(), 0.5, -0.25, 1.0, &mut s),
            LtStatus::Ok
        );
        assert_eq!(s, 0.75);
        assert_eq!(
            ltlab_score_pair(c"large_final".as_ptr(), 0.5, -0.25, 1.0, &mut s),
            LtStatus::Ok
        );
        assert_eq!(s, 0.25);
        assert_eq!(
            ltlab_score_pair(c"largest".as_ptr(), 0.5, -0.25, 1.0, &mut s),
            LtStatus::InvalidArgument
        );
    }
}

#[test]
fn one_shot_mask_keeps_requested_fraction() {
    let init = network(c"fc", 3);
    let last = network(c"fc", 4);
    let mut mask = ptr::null_mut();
    unsafe {
        let status = ltlab_mask_one_shot(init, last, c"large_final".as_ptr(), 0.1, 0, &mut mask);
        assert_eq!(status, LtStatus::Ok, "{}", last_error());
        let (mut ones, mut len) = (0, 0);
        ltlab_mask_layer_counts(mask, 2, &mut ones, &mut len);
        assert_eq!((ones, len), (100, 1000));
        let mut bits = vec![0u8; len];
        assert_eq!(ltlab_mask_get_layer(mask, 2, bits.as_mut_ptr(), len), LtStatus::Ok);
        let w = kernel(last, 2);
        let kept_min = w
            .iter()
            .zip(&bits)
            .filter(|(_, &b)| b == 1)
            .map(|(x, _)| x.abs())
            .fold(f32::MAX, f32::min);
        let dropped_max = w
            .iter()
            .zip(&bits)
            .filter(|(_, &b)| b == 0)
            .map(|(x, _)| x.abs())
            .fold(0.0, f32::max);
        assert!(kept_min >= dropped_max);
        let mut frac = 0.0;
        ltlab_mask_remaining_fraction(mask, &mut frac);
        assert!((frac - 0.1).abs() < 1e-3);
        ltlab_mask_free(mask);
        ltlab_network_free(init);
        ltlab_network_free(last);
    }
}

#[test]
fn mismatched_architectures_are_rejected() {
    let a = network(c"fc", 1);
    let b = network(c"conv2", 1);
    let mut mask = ptr::null_mut();
    let status = unsafe { ltlab_mask_one_shot(a, b, c"random".as_ptr(), 0.5, 0, &mut mask) };
    assert_eq!(status, LtStatus::InvalidArgument);
    assert!(mask.is_null());
    unsafe {
        ltlab_network_free(a);
        ltlab_network_free(b);
    }
}

#[test]
fn pack_round_trip_reconstructs_signed_constant() {
    let init = network(c"fc", 11);
    let mut mask = ptr::null_mut();
    unsafe {
        assert_eq!(
            ltlab_mask_one_shot(init, init, c"random".as_ptr(), 0.3, 5, &mut mask),
            LtStatus::Ok
        );
        let mut size = 0;
        let st = ltlab_pack_encode(
            c"fc".as_ptr(),
            11,
            c"signed_constant".as_ptr(),
            mask,
            ptr::null_mut(),
            0,
            &mut size,
        );
        assert_eq!(st, LtStatus::Ok);
        let mut small = vec![0u8; size - 1];
        let st = ltlab_pack_encode(
            c"fc".as_ptr(),
            11,
            c"signed_constant".as_ptr(),
            mask,
            small.as_mut_ptr(),
            small.len(),
            &mut size,
        );
        assert_eq!(st, LtStatus::BufferTooSmall);
        let mut bytes = vec![0u8; size];
        let st = ltlab_pack_encode(
            c"fc".as_ptr(),
            11,
            c"signed_constant".as_ptr(),
            mask,
            bytes.as_mut_ptr(),
            size,
            &mut size,
        );
        assert_eq!(st, LtStatus::Ok);

        let (mut net2, mut mask2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            ltlab_pack_decode(bytes.as_ptr(), bytes.len(), &mut net2, &mut mask2),
            LtStatus::Ok
        );
        for layer in 0..3 {
            let (mut len, mut ones, mut ones2) = (0, 0, 0);
            ltlab_mask_layer_counts(mask, layer, &mut ones, &mut len);
            ltlab_mask_layer_counts(mask2, layer, &mut ones2, &mut len);
            assert_eq!(ones, ones2);
            let mut a = vec![0u8; len];
            let mut b = vec![0u8; len];
            ltlab_mask_get_layer(mask, layer, a.as_mut_ptr(), len);
            ltlab_mask_get_layer(mask2, layer, b.as_mut_ptr(), len);
            assert_eq!(a, b);
            let w0 = kernel(init, layer);
            let w1 = kernel(net2, layer);
            let mag = w1[0].abs();
            assert!(w1.iter().all(|x| (x.abs() - mag).abs() < 1e-7));
            assert!(w0.iter().zip(&w1).all(|(a, b)| a.signum() == b.signum()));
        }

        bytes[20] ^= 0x40;
        let st = ltlab_pack_decode(bytes.as_ptr(), bytes.len(), &mut net2, &mut mask2);
        assert_eq!(st, LtStatus::Format);
        assert!(net2.is_null() && mask2.is_null());
        assert!(last_error().contains("CRC"), "{}", last_error());
        ltlab_mask_free(mask);
        ltlab_network_free(init);
    }
}

#[test]
fn evaluate_counts_correct_predictions() {
    let net = network(c"fc", 2);
    let images = vec![0.5f32; 784 * 4];
    let labels = [0u8, 1, 2, 3];
    let (mut acc, mut loss) = (-1.0, -1.0);
    unsafe {
        let st = ltlab_evaluate(
            net,
            ptr::null(),
            images.as_ptr(),
            labels.as_ptr(),
            4,
            &mut acc,
            &mut loss,
        );
        assert_eq!(st, LtStatus::Ok, "{}", last_error());
        assert!(acc == 0.0 || acc == 0.25);
        assert!(loss.is_finite() && loss > 0.0);
        let bad = [10u8];
        let st = ltlab_evaluate(
            net,
            ptr::null(),
            images.as_ptr(),
            bad.as_ptr(),
            1,
            &mut acc,
            ptr::null_mut(),
        );
        assert_ne!(st, LtStatus::Ok);
        ltlab_network_free(net);
    }
}

#[test]
fn set_kernel_round_trips() {
    let net = network(c"fc", 2);
    let mut copy = ptr::null_mut();
    unsafe {
        assert_eq!(ltlab_network_clone(net, &mut copy), LtStatus::Ok);
        let zeros = vec![0.0f32; 1000];
        assert_eq!(ltlab_network_set_kernel(copy, 2, zeros.as_ptr(), 1000), LtStatus::Ok);
        assert_eq!(kernel(copy, 2), zeros);
        assert_ne!(kernel(net, 2), zeros);
        ltlab_network_free(copy);
        ltlab_network_free(net);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/ltlab.h");
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler, header syntax not checked");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(header).unwrap();
    for f in [
        "ltlab_network_new",
        "ltlab_mask_one_shot",
        "ltlab_pack_encode",
        "ltlab_pack_decode",
        "ltlab_evaluate",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
}

#[test]
fn c_program_links_against_staticlib() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ltlab_smoke");
    let lib = exe
        .parent()
        .and_then(|p| p.parent())
        .map(|p| p.join("debug/libltlab_ffi.a"));
    let Some(lib) = lib.filter(|l| l.exists()) else {
        eprintln!("staticlib not found, C link not checked");
        return;
    };
    let Ok(out) = Command::new("cc")
        .arg(dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
    else {
        eprintln!("no C compiler, C link not checked");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    let frac: f64 = stdout.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((frac - 0.2).abs() < 1e-3, "{stdout}");
}
