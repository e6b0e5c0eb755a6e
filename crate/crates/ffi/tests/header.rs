//! Compile and run a C program against the generated header and static
//! library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "hazmatch.h"

int main(void) {
    enum { N = 120 };
    double x[N], t[N];
    uint8_t w[N], e[N];
    for (int i = 0; i < N; i++) {
        x[i] = (i % 13) / 6.0;
        w[i] = (i * 5 + i / 7) % 3 == 0;
        t[i] = 0.2 + ((i * 31) % 97) / 40.0;
        e[i] = i % 5 != 0;
    }
    HmDataset *ds = NULL;
    if (hm_dataset_from_arrays(N, 1, x, w, t, e, &ds) != HM_STATUS_OK) return 1;
    HmOptions o = hm_options_default();
    o.methods = HM_MASK_SOFTWARE | HM_MASK_ASYMPTOTIC;
    HmReport *r = NULL;
    if (hm_estimate(ds, &o, &r) != HM_STATUS_OK) {
        fprintf(stderr, "%s\n", hm_last_error());
        return 2;
    }
    double beta, v, lo, hi;
    hm_report_beta(r, &beta);
    if (hm_report_interval(r, HM_METHOD_ASYMPTOTIC, &v, &lo, &hi) != HM_STATUS_OK) return 3;
    if (hm_report_interval(r, HM_METHOD_DOUBLE_RESAMPLING, &v, &lo, &hi) != HM_STATUS_NOT_AVAILABLE) return 4;
    printf("%.6f\n", beta);
    hm_report_free(r);
    hm_dataset_free(ds);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test> -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libhazmatch_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let beta: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(beta.is_finite());
}
