use std::ffi::{CStr, CString};
use std::ptr;

use wxpower_ffi::*;

fn build_small(family: WxFamily, channels: u32) -> *mut WxModel {
    let mut m = ptr::null_mut();
    let st = unsafe { wx_model_build(family, channels, 16, 16, 7, &mut m) };
    assert_eq!(st, WxStatus::Ok, "{:?}", last_error());
    assert!(!m.is_null());
    m
}

fn last_error() -> Option<String> {
    let p = wx_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(wx_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn build_predict_free() {
    let m = build_small(WxFamily::Resnet, 6);
    let (mut c, mut h, mut w) = (0, 0, 0);
    assert_eq!(unsafe { wx_model_input_shape(m, &mut c, &mut h, &mut w) }, WxStatus::Ok);
    assert_eq!((c, h, w), (6, 16, 16));
    assert!(unsafe { wx_model_param_count(m) } > 0);

    let n = 3;
    let input: Vec<f32> = (0..n * 6 * 16 * 16).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
    let mut out = vec![-1.0f32; n * 2];
    assert_eq!(unsafe { wx_model_predict(m, input.as_ptr(), n, out.as_mut_ptr()) }, WxStatus::Ok);
    assert!(out.iter().all(|v| v.is_finite() && *v >= 0.0));
    unsafe { wx_model_free(m) };
}

#[test]
fn save_load_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.wxpm").to_str().unwrap()).unwrap();
    let m = build_small(WxFamily::Linear, 6);
    assert_eq!(unsafe { wx_model_save(m, path.as_ptr()) }, WxStatus::Ok);

    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { wx_model_load(path.as_ptr(), &mut loaded) }, WxStatus::Ok);
    assert_eq!(unsafe { wx_model_param_count(m) }, unsafe { wx_model_param_count(loaded) });

    let input: Vec<f32> = (0..6 * 16 * 16).map(|i| (i % 13) as f32 * 0.1).collect();
    let (mut a, mut b) = ([0f32; 2], [0f32; 2]);
    unsafe {
        wx_model_predict(m, input.as_ptr(), 1, a.as_mut_ptr());
        wx_model_predict(loaded, input.as_ptr(), 1, b.as_mut_ptr());
    }
    assert_eq!(a, b);
    unsafe {
        wx_model_free(m);
        wx_model_free(loaded);
    }
}

#[test]
fn saliency_is_non_negative() {
    let m = build_small(WxFamily::Resnet, 6);
    let input: Vec<f32> = (0..6 * 16 * 16).map(|i| ((i * 7 % 23) as f32 - 11.0) / 11.0).collect();
    let mut map = vec![-1.0f32; 16 * 16];
    assert_eq!(
        unsafe { wx_model_saliency(m, input.as_ptr(), WxSource::Wind, map.as_mut_ptr()) },
        WxStatus::Ok
    );
    assert!(map.iter().all(|v| *v >= 0.0));
    unsafe { wx_model_free(m) };
}

#[test]
fn null_and_bad_arguments_report_errors() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { wx_model_build(WxFamily::Linear, 6, 16, 16, 1, ptr::null_mut()) },
        WxStatus::NullPointer
    );
    assert_eq!(unsafe { wx_model_load(ptr::null(), &mut out) }, WxStatus::NullPointer);
    assert!(last_error().unwrap().contains("NULL"));
    assert_eq!(unsafe { wx_model_param_count(ptr::null()) }, 0);
    unsafe { wx_model_free(ptr::null_mut()) };

    let missing = CString::new("/nonexistent/dir/model.wxpm").unwrap();
    assert_eq!(unsafe { wx_model_load(missing.as_ptr(), &mut out) }, WxStatus::Io);
    assert!(out.is_null());

    let spec = CString::new("family=bogus").unwrap();
    assert_eq!(unsafe { wx_model_build_from_spec(spec.as_ptr(), 1, &mut out) }, WxStatus::Config);
    assert!(last_error().is_some());

    let m = build_small(WxFamily::Linear, 6);
    let input = vec![0f32; 6 * 16 * 16];
    let mut pred = [0f32; 2];
    assert_eq!(unsafe { wx_model_predict(m, input.as_ptr(), 0, pred.as_mut_ptr()) }, WxStatus::Shape);
    unsafe { wx_model_free(m) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/wxpower.h")).unwrap();
    for name in [
        "wx_last_error",
        "wx_version",
        "wx_model_build",
        "wx_model_build_from_spec",
        "wx_model_load",
        "wx_model_save",
        "wx_model_free",
        "wx_model_param_count",
        "wx_model_input_shape",
        "wx_model_predict",
        "wx_model_saliency",
        "WX_STATUS_OK",
        "typedef struct WxModel WxModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
