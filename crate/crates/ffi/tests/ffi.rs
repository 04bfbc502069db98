use std::ffi::{CStr, CString};
use std::ptr;

use ctdebias_ffi::*;

fn last_error() -> String {
    let p = ctd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn design_and_copy_coefficients() {
    unsafe {
        let mut bank = ptr::null_mut();
        assert_eq!(
            ctd_filter_design(3, 3, 2, 0.1, f64::NAN, &mut bank),
            CtdStatus::Ok
        );
        let (mut r, mut c) = (0, 0);
        assert_eq!(ctd_filter_shape(bank, &mut r, &mut c), CtdStatus::Ok);
        assert_eq!((r, c), (3, 3));
        let mut buf = [0.0; 9];
        assert_eq!(ctd_filter_coeffs(bank, buf.as_mut_ptr(), 9), CtdStatus::Ok);
        // three-point rules at h = 0.1
        let expect = [0.0, 1.0, 0.0, -5.0, 0.0, 5.0, 100.0, -200.0, 100.0];
        for (a, b) in buf.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{buf:?}");
        }
        assert_eq!(
            ctd_filter_coeffs(bank, buf.as_mut_ptr(), 8),
            CtdStatus::BufferTooSmall
        );
        ctd_filter_free(bank);
    }
}

#[test]
fn invalid_spec_sets_message() {
    unsafe {
        let mut bank = ptr::null_mut();
        assert_eq!(
            ctd_filter_design(10, 2, 2, 0.1, f64::NAN, &mut bank),
            CtdStatus::InvalidArgument
        );
        assert!(bank.is_null());
        assert!(last_error().contains("p = 2"));
        assert_eq!(
            ctd_filter_design(10, 4, 2, 0.1, f64::NAN, ptr::null_mut()),
            CtdStatus::NullPointer
        );
    }
}

#[test]
fn staggered_pair_and_apply() {
    unsafe {
        let (mut odd, mut even) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            ctd_filter_design_staggered(12, 3, 1, 0.5, f64::NAN, &mut odd, &mut even),
            CtdStatus::Ok
        );
        let mut buf = vec![0.0; 24];
        ctd_filter_coeffs(odd, buf.as_mut_ptr(), 24);
        for k in (1..12).step_by(2) {
            assert_eq!(buf[k], 0.0);
            assert_eq!(buf[12 + k], 0.0);
        }
        // a line z = 2 t through the even bank: derivative 2 everywhere
        let n = 30;
        let z: Vec<f64> = (1..=n).map(|i| 2.0 * i as f64 * 0.5).collect();
        let mut jet = ptr::null_mut();
        assert_eq!(
            ctd_filter_apply(even, z.as_ptr(), n, 1, 0.5, &mut jet),
            CtdStatus::Ok
        );
        let (mut len, mut width) = (0, 0);
        ctd_jet_shape(jet, &mut len, &mut width);
        assert_eq!((len, width), (n - 12 + 1, 2));
        let mut vals = vec![0.0; len * width];
        let mut times = vec![0.0; len];
        assert_eq!(
            ctd_jet_values(jet, vals.as_mut_ptr(), vals.len()),
            CtdStatus::Ok
        );
        assert_eq!(ctd_jet_times(jet, times.as_mut_ptr(), len), CtdStatus::Ok);
        for j in 0..len {
            assert!((vals[j * 2] - 2.0 * times[j]).abs() < 1e-9);
            assert!((vals[j * 2 + 1] - 2.0).abs() < 1e-9);
        }
        ctd_jet_free(jet);
        ctd_filter_free(odd);
        ctd_filter_free(even);
    }
}

#[test]
fn models_and_estimate() {
    unsafe {
        let mut model = ptr::null_mut();
        let name = CString::new("vdp").unwrap();
        assert_eq!(ctd_model_builtin(name.as_ptr(), &mut model), CtdStatus::Ok);
        let (mut d_phi, mut d_x, mut m) = (0, 0, 0);
        ctd_model_dims(model, &mut d_phi, &mut d_x, &mut m);
        assert_eq!((d_phi, d_x, m), (2, 1, 2));

        // harmonic oscillator y'' = -400 y sampled exactly: theta = (0, -400)
        let h = 5e-4;
        let n = 2000;
        let z: Vec<f64> = (1..=n).map(|i| (20.0 * i as f64 * h).sin()).collect();
        let mut theta = [0.0; 2];
        let mut pe = 0.0;
        let st = ctd_estimate(
            model,
            z.as_ptr(),
            n,
            1,
            h,
            30,
            6,
            h,
            ptr::null(),
            CtdMethod::Ls,
            theta.as_mut_ptr(),
            2,
            &mut pe,
        );
        assert_eq!(st, CtdStatus::Ok, "{}", last_error());
        assert!(
            theta[0].abs() < 0.1 && (theta[1] + 400.0).abs() < 0.1,
            "{theta:?}"
        );
        assert!(pe > 0.0);

        let sigma = [1e-4];
        let st = ctd_estimate(
            model,
            z.as_ptr(),
            n,
            1,
            h,
            30,
            6,
            h,
            sigma.as_ptr(),
            CtdMethod::Iv,
            theta.as_mut_ptr(),
            2,
            ptr::null_mut(),
        );
        assert_eq!(st, CtdStatus::Ok);

        let zeros = vec![0.0; n];
        let st = ctd_estimate(
            model,
            zeros.as_ptr(),
            n,
            1,
            h,
            30,
            6,
            h,
            ptr::null(),
            CtdMethod::Bc,
            theta.as_mut_ptr(),
            2,
            ptr::null_mut(),
        );
        assert_eq!(st, CtdStatus::Numerical);
        assert!(last_error().contains("pe_stat"));
        ctd_model_free(model);

        let bad = CString::new("nope").unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(
            ctd_model_builtin(bad.as_ptr(), &mut other),
            CtdStatus::InvalidArgument
        );
        let json = CString::new(
            r#"{"d_x": 1, "m": 1, "features": [[{"coeff": 1.0, "powers": {"x1.0": 1}}]]}"#,
        )
        .unwrap();
        assert_eq!(
            ctd_model_from_json(json.as_ptr(), &mut other),
            CtdStatus::Ok,
            "{}",
            last_error()
        );
        ctd_model_free(other);
    }
}

#[test]
fn free_accepts_null() {
    unsafe {
        ctd_filter_free(ptr::null_mut());
        ctd_jet_free(ptr::null_mut());
        ctd_model_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/ctdebias.h");
    for sym in [
        "ctd_last_error",
        "ctd_filter_design",
        "ctd_filter_design_staggered",
        "ctd_filter_shape",
        "ctd_filter_coeffs",
        "ctd_filter_apply",
        "ctd_filter_free",
        "ctd_jet_shape",
        "ctd_jet_values",
        "ctd_jet_times",
        "ctd_jet_free",
        "ctd_model_builtin",
        "ctd_model_from_json",
        "ctd_model_dims",
        "ctd_model_free",
        "ctd_estimate",
        "typedef struct CtdFilterBank CtdFilterBank",
    ] {
        assert!(header.contains(sym), "missing {sym}");
    }
}
