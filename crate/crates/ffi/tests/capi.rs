use std::ffi::{CStr, CString};
use std::ptr;

use hazmatch_ffi::*;

/// Small two-arm dataset with overlapping scores.
fn arrays(n: usize) -> (Vec<f64>, Vec<u8>, Vec<f64>, Vec<u8>) {
    let mut x = Vec::new();
    let (mut w, mut t, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let xi = (i % 17) as f64 / 8.0;
        x.push(xi);
        w.push(u8::from((i * 7 + i / 5) % 3 == 0));
        t.push(0.1 + ((i * 37) % 101) as f64 / 50.0 + 0.2 * xi);
        e.push(u8::from(i % 4 != 0));
    }
    (x, w, t, e)
}

unsafe fn dataset(n: usize) -> *mut HmDataset {
    let (x, w, t, e) = arrays(n);
    let mut ds = ptr::null_mut();
    let st = hm_dataset_from_arrays(n, 1, x.as_ptr(), w.as_ptr(), t.as_ptr(), e.as_ptr(), &mut ds);
    assert_eq!(st, HmStatus::Ok);
    ds
}

unsafe fn last_error() -> String {
    let p = hm_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

#[test]
fn estimate_round_trip() {
    unsafe {
        let ds = dataset(150);
        assert_eq!(hm_dataset_len(ds), 150);
        let mut opts = hm_options_default();
        opts.methods = HM_MASK_SOFTWARE | HM_MASK_DOUBLE_RESAMPLING;
        opts.b = 100;
        opts.seed = 3;
        let mut rep = ptr::null_mut();
        assert_eq!(hm_estimate(ds, &opts, &mut rep), HmStatus::Ok);
        assert!(hm_last_error().is_null());

        let mut beta = f64::NAN;
        assert_eq!(hm_report_beta(rep, &mut beta), HmStatus::Ok);
        assert!(beta.is_finite());
        let (mut v, mut lo, mut hi) = (0.0, 0.0, 0.0);
        for m in [HmMethod::Software, HmMethod::DoubleResampling] {
            assert_eq!(hm_report_interval(rep, m, &mut v, &mut lo, &mut hi), HmStatus::Ok);
            assert!(v > 0.0 && lo < beta && beta < hi);
        }
        assert_eq!(
            hm_report_interval(rep, HmMethod::Asymptotic, &mut v, &mut lo, &mut hi),
            HmStatus::NotAvailable
        );
        assert!(last_error().contains("asymp"));

        let mut json = ptr::null_mut();
        assert_eq!(hm_report_json(rep, &mut json), HmStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        hm_string_free(json);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["beta_hat"].as_f64().unwrap(), beta);
        assert_eq!(value["seed"], 3);

        // same inputs, same bytes
        let mut again = ptr::null_mut();
        assert_eq!(hm_estimate(ds, &opts, &mut again), HmStatus::Ok);
        let mut json2 = ptr::null_mut();
        hm_report_json(again, &mut json2);
        assert_eq!(CStr::from_ptr(json2).to_str().unwrap(), text);
        hm_string_free(json2);

        hm_report_free(again);
        hm_report_free(rep);
        hm_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut ds = ptr::null_mut();
        let st = hm_dataset_from_arrays(3, 1, ptr::null(), ptr::null(), ptr::null(), ptr::null(), &mut ds);
        assert_eq!(st, HmStatus::NullPointer);
        assert!(ds.is_null());

        let (x, mut w, t, e) = arrays(10);
        w[2] = 2;
        let st = hm_dataset_from_arrays(10, 1, x.as_ptr(), w.as_ptr(), t.as_ptr(), e.as_ptr(), &mut ds);
        assert_eq!(st, HmStatus::InvalidArgument);
        assert!(last_error().contains("treated[2]"));

        let w = vec![1u8; 10];
        let st = hm_dataset_from_arrays(10, 1, x.as_ptr(), w.as_ptr(), t.as_ptr(), e.as_ptr(), &mut ds);
        assert_eq!(st, HmStatus::InvalidData);
        assert!(last_error().starts_with("empty_arm"));

        let path = CString::new("/nonexistent/data.csv").unwrap();
        let st = hm_dataset_from_csv(path.as_ptr(), ptr::null(), ptr::null(), ptr::null(), &mut ds);
        assert_eq!(st, HmStatus::Io);

        let good = dataset(60);
        let mut opts = hm_options_default();
        opts.methods = 1 << 7;
        let mut rep = ptr::null_mut();
        assert_eq!(hm_estimate(good, &opts, &mut rep), HmStatus::InvalidArgument);
        opts.methods = HM_MASK_NAIVE_BOOTSTRAP;
        opts.b = 10;
        assert_eq!(hm_estimate(good, &opts, &mut rep), HmStatus::InvalidArgument);
        assert!(last_error().starts_with("config"));
        assert!(rep.is_null());
        assert_eq!(hm_estimate(ptr::null(), &opts, &mut rep), HmStatus::NullPointer);
        hm_dataset_free(good);

        // freeing NULL is a no-op
        hm_dataset_free(ptr::null_mut());
        hm_report_free(ptr::null_mut());
        hm_string_free(ptr::null_mut());
        assert_eq!(hm_dataset_len(ptr::null()), 0);
    }
}

#[test]
fn csv_loader_reads_default_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let (x, w, t, e) = arrays(80);
    let mut text = String::from("age,w,u,delta\n");
    for i in 0..80 {
        text += &format!("{},{},{},{}\n", x[i], w[i], t[i], e[i]);
    }
    std::fs::write(&path, text).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        let st = hm_dataset_from_csv(c.as_ptr(), ptr::null(), ptr::null(), ptr::null(), &mut ds);
        assert_eq!(st, HmStatus::Ok);
        assert_eq!(hm_dataset_len(ds), 80);
        let col = CString::new("treat").unwrap();
        let mut other = ptr::null_mut();
        let st = hm_dataset_from_csv(c.as_ptr(), col.as_ptr(), ptr::null(), ptr::null(), &mut other);
        assert_eq!(st, HmStatus::InvalidData);
        assert!(last_error().contains("treat"));
        hm_dataset_free(ds);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(hm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
