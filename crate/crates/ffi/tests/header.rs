use std::path::{Path, PathBuf};
use std::process::Command;

fn root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn header() -> String {
    std::fs::read_to_string(root().join("include/evflow.h")).unwrap()
}

#[test]
fn header_declares_the_public_api() {
    let h = header();
    for name in [
        "evflow_version",
        "evflow_last_error",
        "evflow_params_default",
        "evflow_surface_new",
        "evflow_surface_load",
        "evflow_surface_dims",
        "evflow_surface_free",
        "evflow_solve",
        "evflow_flow_stats",
        "evflow_flow_copy_w",
        "evflow_flow_copy_u",
        "evflow_flow_copy_m",
        "evflow_flow_write",
        "evflow_flow_free",
        "typedef struct EvflowSurface EvflowSurface;",
        "typedef struct EvflowFlow EvflowFlow;",
        "EVFLOW_STATUS_NOT_CONVERGED = 8",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
    assert!(h.starts_with("#ifndef EVFLOW_H"));
}

/// Directory holding the libraries built alongside this test binary.
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let lib = lib_dir().join("libevflow_ffi.a");
    assert!(lib.is_file(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(root().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = Command::new(&exe).arg(dir.path().join("img")).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
    assert!(dir.path().join("img/u.evsf").is_file());
}
