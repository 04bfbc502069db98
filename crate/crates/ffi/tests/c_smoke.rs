use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "ctdebias.h"

int main(void) {
    CtdFilterBank *bank = NULL;
    if (ctd_filter_design(50, 6, 2, 0.0005, NAN, &bank) != CTD_STATUS_OK) return 1;
    size_t rows = 0, cols = 0;
    ctd_filter_shape(bank, &rows, &cols);
    if (rows != 3 || cols != 50) return 2;
    double coeffs[150];
    if (ctd_filter_coeffs(bank, coeffs, 150) != CTD_STATUS_OK) return 3;
    double sum = 0.0;
    for (int k = 0; k < 50; k++) sum += coeffs[k];
    if (fabs(sum - 1.0) > 1e-9) return 4;
    ctd_filter_free(bank);

    if (ctd_filter_design(5, 1, 2, 1.0, NAN, &bank) != CTD_STATUS_INVALID_ARGUMENT) return 5;
    if (ctd_last_error() == NULL) return 6;
    printf("ok\n");
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler found, skipping");
        return;
    }
    // target/<profile>/deps/<this test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libctdebias_ffi.a");
    assert!(
        lib.exists(),
        "static library not found at {}",
        lib.display()
    );

    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = tmp.path().join("smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
