//! Compiles a small C program against the generated header and the static
//! library. Skipped when no C compiler is on the path.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "panpriv.h"

int main(void) {
    PpEstimator *est = NULL;
    if (pp_cropped_sum_new(16, 2, 0.5, 1, &est) != PP_STATUS_OK) return 1;
    for (uint64_t i = 0; i < 16; i++) {
        if (pp_estimator_update(est, i, 3) != PP_STATUS_OK) return 2;
    }
    if (pp_estimator_update(est, 99, 1) != PP_STATUS_OUT_OF_RANGE) return 3;
    if (pp_last_error_message() == NULL) return 4;
    uint8_t *bytes = NULL;
    size_t len = 0;
    if (pp_estimator_snapshot(est, &bytes, &len) != PP_STATUS_OK) return 5;
    PpEstimator *copy = NULL;
    if (pp_estimator_restore(bytes, len, 7, &copy) != PP_STATUS_OK) return 6;
    double a = 0, b = 1;
    pp_estimator_estimate(est, &a);
    pp_estimator_estimate(copy, &b);
    pp_bytes_free(bytes, len);
    pp_estimator_free(est);
    pp_estimator_free(copy);
    printf("%s %g\n", pp_version(), a);
    return a == b ? 0 : 7;
}
"#;

fn find_cc() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|cc| {
            Command::new(cc)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .map(str::to_string)
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = find_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // target/<profile>/deps/<this test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libpanpriv_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let src = dir.join("smoke.c");
    let bin = dir.join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")));
}
