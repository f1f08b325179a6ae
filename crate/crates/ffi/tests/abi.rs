use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use wntk_ffi::*;

fn last_error() -> String {
    let p = wntk_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const X: [f64; 6] = [1.0, 0.0, 0.0, 1.0, 0.6, 0.8];

unsafe fn stack(depth: usize) -> *mut WntkLayerStack {
    let mut s = ptr::null_mut();
    let st = wntk_layer_stack_analytic(X.as_ptr(), 3, X.as_ptr(), 3, 2, depth, WntkActivation::Relu, &mut s);
    assert_eq!(st, WntkStatus::Ok);
    s
}

unsafe fn values(k: *const WntkKernel) -> Vec<f64> {
    let (mut r, mut c) = (0, 0);
    assert_eq!(wntk_kernel_shape(k, &mut r, &mut c), WntkStatus::Ok);
    let mut buf = vec![0.0; r * c];
    assert_eq!(wntk_kernel_copy(k, buf.as_mut_ptr(), buf.len()), WntkStatus::Ok);
    buf
}

#[test]
fn unit_weights_match_unweighted_sum() {
    unsafe {
        let s = stack(3);
        let mut depth = 0;
        assert_eq!(wntk_layer_stack_depth(s, &mut depth), WntkStatus::Ok);
        assert_eq!(depth, 3);
        let (mut ntk, mut wntk) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(wntk_layer_stack_weighted_sum(s, ptr::null(), 0, &mut ntk), WntkStatus::Ok);
        let ones = [1.0; 3];
        assert_eq!(wntk_layer_stack_weighted_sum(s, ones.as_ptr(), 3, &mut wntk), WntkStatus::Ok);
        assert_eq!(values(ntk), values(wntk));
        // Σ^(1)(x, x) = ‖x‖²/d₀ = 1/2 halves at each ReLU layer: Θ(x, x) = 3 · ½ · 2^{-2}.
        assert!((values(ntk)[0] - 0.375).abs() < 1e-12, "{}", values(ntk)[0]);
        wntk_kernel_free(ntk);
        wntk_kernel_free(wntk);
        wntk_layer_stack_free(s);
    }
}

#[test]
fn fit_and_predict_interpolates_training_targets() {
    unsafe {
        let s = stack(2);
        let mut k = ptr::null_mut();
        assert_eq!(wntk_layer_stack_weighted_sum(s, ptr::null(), 0, &mut k), WntkStatus::Ok);
        let y = [1.0, -1.0, 0.5];
        let mut r = ptr::null_mut();
        assert_eq!(wntk_regressor_fit(k, y.as_ptr(), 1, 0.0, &mut r), WntkStatus::Ok);
        let mut scores = [0.0; 3];
        assert_eq!(wntk_regressor_predict(r, k, scores.as_mut_ptr(), 3), WntkStatus::Ok);
        for (s, t) in scores.iter().zip(y) {
            assert!((s - t).abs() < 1e-9, "{s} vs {t}");
        }
        let mut eta = 0.0;
        assert_eq!(wntk_kernel_eta_critical(k, &mut eta), WntkStatus::Ok);
        assert!(eta > 0.0);
        wntk_regressor_free(r);
        wntk_kernel_free(k);
        wntk_layer_stack_free(s);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(wntk_kernel_new(ptr::null(), 2, 2, &mut k), WntkStatus::NullPointer);
        assert!(last_error().contains("data"));

        let s = stack(2);
        let bad = [1.0; 3];
        assert_eq!(wntk_layer_stack_weighted_sum(s, bad.as_ptr(), 3, &mut k), WntkStatus::Config);
        assert!(last_error().contains("layer weights"));
        assert_eq!(wntk_layer_stack_layer(s, 0, &mut k), WntkStatus::Config);
        wntk_layer_stack_free(s);

        let singular = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(wntk_kernel_new(singular.as_ptr(), 2, 2, &mut k), WntkStatus::Ok);
        let y = [1.0, -1.0];
        let mut r = ptr::null_mut();
        assert_eq!(wntk_regressor_fit(k, y.as_ptr(), 1, 0.0, &mut r), WntkStatus::Numerical);
        assert!(r.is_null());
        let mut eta = 0.0;
        assert_eq!(wntk_kernel_eta_critical(k, &mut eta), WntkStatus::Numerical);
        wntk_kernel_free(k);

        let missing = CString::new("/nonexistent/dir/k.wntk").unwrap();
        let mut loaded = ptr::null_mut();
        assert_eq!(wntk_kernel_load(missing.as_ptr(), &mut loaded), WntkStatus::Io);
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("k.wntk").to_str().unwrap()).unwrap();
    unsafe {
        let s = stack(3);
        let mut k = ptr::null_mut();
        assert_eq!(wntk_layer_stack_layer(s, 2, &mut k), WntkStatus::Ok);
        assert_eq!(wntk_kernel_save(k, path.as_ptr()), WntkStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(wntk_kernel_load(path.as_ptr(), &mut back), WntkStatus::Ok);
        assert_eq!(values(k), values(back));
        wntk_kernel_free(back);
        wntk_kernel_free(k);
        wntk_layer_stack_free(s);
    }
}

#[test]
fn freeing_null_is_a_no_op() {
    unsafe {
        wntk_kernel_free(ptr::null_mut());
        wntk_layer_stack_free(ptr::null_mut());
        wntk_regressor_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/wntk.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["wntk_kernel_new", "wntk_regressor_predict", "wntk_layer_stack_analytic", "wntk_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"wntk.h\"\nint main(void) { WntkKernel *k = 0; return wntk_kernel_free(k), WNTK_STATUS_OK; }\n",
    )
    .unwrap();
    match Command::new(&cc)
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(status) => assert!(status.success(), "{cc} rejected the header"),
        Err(e) => eprintln!("skipping C compile check, {cc} not runnable: {e}"),
    }
}
