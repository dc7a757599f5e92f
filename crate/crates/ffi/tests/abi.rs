use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use acd_ffi::*;

fn last_error() -> String {
    let p = acd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn simulate_fit_roundtrip() {
    unsafe {
        let mut series = ptr::null_mut();
        assert_eq!(acd_simulate(0.5, 0.5, 2e4, 42, &mut series), AcdStatus::Ok);
        let n = acd_series_len(series);
        assert!(n > 15_000 && n < 25_000, "{n}");

        let mut buf = vec![0.0; n];
        assert_eq!(
            acd_series_copy_durations(series, buf.as_mut_ptr(), n - 1),
            AcdStatus::BufferTooSmall
        );
        assert_eq!(
            acd_series_copy_durations(series, buf.as_mut_ptr(), n),
            AcdStatus::Ok
        );
        assert!(buf.iter().all(|&x| x > 0.0));

        let mut fit = ptr::null_mut();
        assert_eq!(acd_fit(series, 0, &mut fit), AcdStatus::Ok);
        assert_eq!(acd_fit_converged(fit), 1);
        let (mut w, mut a, mut sw, mut sa, mut t) = (0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(acd_fit_theta(fit, &mut w, &mut a), AcdStatus::Ok);
        assert_eq!(acd_fit_std_errors(fit, &mut sw, &mut sa), AcdStatus::Ok);
        assert!((w - 0.5).abs() < 4.0 * sw, "{w} {sw}");
        assert!((a - 0.5).abs() < 4.0 * sa, "{a} {sa}");
        assert_eq!(acd_fit_t_ratio(fit, 0.5, &mut t), AcdStatus::Ok);
        assert!((t - (a - 0.5) / sa).abs() < 1e-9);

        // Same durations through the copy constructor give the same fit.
        let mut copy = ptr::null_mut();
        assert_eq!(
            acd_series_from_durations(buf.as_ptr(), n, 0.0, &mut copy),
            AcdStatus::Ok
        );
        let mut fit2 = ptr::null_mut();
        assert_eq!(acd_fit(copy, 0, &mut fit2), AcdStatus::Ok);
        let (mut w2, mut a2) = (0.0, 0.0);
        acd_fit_theta(fit2, &mut w2, &mut a2);
        assert!((a2 - a).abs() < 1e-6);

        acd_fit_free(fit2);
        acd_fit_free(fit);
        acd_series_free(copy);
        acd_series_free(series);
        acd_series_free(ptr::null_mut());
        acd_fit_free(ptr::null_mut());
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut series = ptr::null_mut();
        assert_eq!(
            acd_simulate(0.5, 2.0, 100.0, 1, &mut series),
            AcdStatus::InvalidArgument
        );
        assert!(last_error().contains("1.7811"), "{}", last_error());
        assert!(series.is_null());
        assert_eq!(
            acd_simulate(0.5, 0.5, 100.0, 1, ptr::null_mut()),
            AcdStatus::NullPointer
        );

        let bad = [1.0, -2.0, 3.0];
        assert_eq!(
            acd_series_from_durations(bad.as_ptr(), 3, 0.0, &mut series),
            AcdStatus::InvalidArgument
        );
        assert_eq!(
            acd_series_from_durations(ptr::null(), 3, 0.0, &mut series),
            AcdStatus::NullPointer
        );

        let few = [1.0, 2.0, 3.0];
        assert_eq!(
            acd_series_from_durations(few.as_ptr(), 3, 0.0, &mut series),
            AcdStatus::Ok
        );
        let mut fit = ptr::null_mut();
        assert_eq!(acd_fit(series, 0, &mut fit), AcdStatus::InvalidArgument);
        assert!(fit.is_null());
        // Remainder without a span.
        assert_eq!(acd_fit(series, 1, &mut fit), AcdStatus::InvalidArgument);
        acd_series_free(series);

        // A successful call clears the message.
        let mut k = 0.0;
        assert_eq!(acd_tail_index(1.0, &mut k), AcdStatus::Ok);
        assert!(acd_last_error().is_null());
        assert_eq!(acd_series_len(ptr::null()), 0);
    }
}

#[test]
fn tail_calculus() {
    unsafe {
        let mut a = 0.0;
        let mut k = 0.0;
        for kappa in [0.5, 1.4, 3.0] {
            assert_eq!(acd_alpha_for_kappa(kappa, &mut a), AcdStatus::Ok);
            assert_eq!(acd_tail_index(a, &mut k), AcdStatus::Ok);
            assert!((k - kappa).abs() < 1e-8);
        }
        assert_eq!(
            acd_alpha_for_kappa(-1.0, &mut a),
            AcdStatus::InvalidArgument
        );
        assert_eq!(acd_tail_index(1.9, &mut k), AcdStatus::InvalidArgument);

        // Exact Pareto(1) quantiles: Hill estimate near 1.
        let n = 10_000;
        let xs: Vec<f64> = (1..=n).map(|i| n as f64 / i as f64).collect();
        let mut h = 0.0;
        assert_eq!(acd_hill(xs.as_ptr(), n, 500, &mut h), AcdStatus::Ok);
        assert!((h - 1.0).abs() < 0.02, "{h}");
        assert_eq!(
            acd_hill(xs.as_ptr(), n, n, &mut h),
            AcdStatus::InvalidArgument
        );
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("acd.h");
    let text = std::fs::read_to_string(&header).expect("build script writes the header");
    for name in [
        "acd_simulate",
        "acd_series_from_durations",
        "acd_series_len",
        "acd_series_copy_durations",
        "acd_series_free",
        "acd_fit",
        "acd_fit_theta",
        "acd_fit_std_errors",
        "acd_fit_t_ratio",
        "acd_fit_converged",
        "acd_fit_free",
        "acd_tail_index",
        "acd_alpha_for_kappa",
        "acd_hill",
        "acd_last_error",
        "ACD_STATUS_NOT_CONVERGED",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Compile a translation unit against the header when a C compiler exists.
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"acd.h\"\n\
         int main(void) {\n\
         \tAcdSeries *s = 0;\n\
         \tdouble k;\n\
         \tif (acd_tail_index(1.0, &k) != ACD_STATUS_OK)\n\
         \t\treturn 1;\n\
         \tacd_series_free(s);\n\
         \treturn 0;\n\
         }\n",
    )
    .unwrap();
    let include = header.parent().unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(include)
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(_) => eprintln!("no C compiler; skipped compile check"),
    }
}
