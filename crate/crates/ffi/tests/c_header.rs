//! Compiles and runs a small C program against the generated header and the
//! static library. Skipped when no C compiler is installed.

use std::path::PathBuf;
use std::process::Command;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let lib = target_dir().join("libdynwm_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "dynwm.h"

static const char *SCENARIO =
    "schema_version = 1\nhorizon = 2000\n"
    "[plant]\nkind = \"scalar\"\na = 0.5\nb = 1.0\nsigma_w2 = 1.0\n"
    "[policy]\nkind = \"linear\"\ngain = -0.3\n"
    "[attack]\nkind = \"noise_sim\"\nonset = 1000\n"
    "[detector]\nwindow = 250\ntests = [\"test2\"]\n";

int main(void) {
    DwScenario *s = NULL;
    DwRun *run = NULL;
    DwReport rep;
    if (dw_scenario_from_toml(SCENARIO, &s) != DW_STATUS_OK) { puts(dw_last_error_message()); return 1; }
    if (dw_run(s, 3, &run) != DW_STATUS_OK) { puts(dw_last_error_message()); return 2; }
    if (dw_run_report(run, &rep) != DW_STATUS_OK) return 3;
    if (dw_scenario_from_toml("not toml", &s) != DW_STATUS_PARSE) return 4;
    printf("%llu %lld\n", (unsigned long long)rep.horizon, (long long)rep.onset);
    dw_run_free(run);
    dw_scenario_free(s);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "2000 1000");
}
