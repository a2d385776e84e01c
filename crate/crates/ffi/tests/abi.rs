use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use privot_ffi::*;

fn grid(m: usize) -> *mut PrivotGrid {
    let lo = [-0.5, -0.5];
    let hi = [0.5, 0.5];
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { privot_grid_new(lo.as_ptr(), hi.as_ptr(), 2, m, &mut g) }, PRIVOT_OK);
    g
}

fn last_error() -> String {
    let p = privot_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fit_round_trip_through_handles() {
    unsafe {
        let g = grid(8);
        assert_eq!((privot_grid_len(g), privot_grid_dim(g)), (64, 2));

        let mut data = ptr::null_mut();
        assert_eq!(privot_dataset_generate(g, 300, 3, &mut data), PRIVOT_OK);
        assert_eq!(privot_dataset_len(data), 300);

        // Two candidates: the quadratic and a constant; the quadratic fits identity-like data better.
        let pts: Vec<Vec<f64>> = (0..64).map(|i| vec![(i / 8) as f64 / 7.0 - 0.5, (i % 8) as f64 / 7.0 - 0.5]).collect();
        let mut values: Vec<f64> = pts.iter().map(|p| 0.5 * (p[0] * p[0] + p[1] * p[1])).collect();
        values.extend(std::iter::repeat(0.0).take(64));
        let mut fam = ptr::null_mut();
        assert_eq!(privot_family_from_values(g, values.as_ptr(), 2, &mut fam), PRIVOT_OK);
        assert_eq!(privot_family_len(fam), 2);

        let mut fit = ptr::null_mut();
        assert_eq!(privot_fit_nonprivate(data, fam, 0.25, &mut fit), PRIVOT_OK);
        let mut idx = usize::MAX;
        assert_eq!(privot_fit_chosen_index(fit, &mut idx), PRIVOT_OK);
        assert_eq!(idx, 0);
        let mut scale = -1.0;
        assert_eq!(privot_fit_noise_scale(fit, &mut scale), PRIVOT_OK);
        assert_eq!(scale, 0.0);

        let mut needed = 0;
        assert_eq!(privot_fit_map(fit, ptr::null_mut(), 0, &mut needed), PRIVOT_ERR_BUFFER);
        assert_eq!(needed, 128);
        assert!(last_error().contains("128"));
        let mut buf = vec![0.0; needed];
        assert_eq!(privot_fit_map(fit, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), PRIVOT_OK);
        // Interior finite differences of the quadratic are exact.
        let i = 3 * 8 + 4;
        assert!((buf[2 * i] - pts[i][0]).abs() < 1e-12 && (buf[2 * i + 1] - pts[i][1]).abs() < 1e-12);
        privot_fit_free(fit);

        let mut pfit = ptr::null_mut();
        assert_eq!(privot_fit_private(data, fam, 1.0, 0.25, 11, &mut pfit), PRIVOT_OK);
        assert_eq!(privot_fit_noise_scale(pfit, &mut scale), PRIVOT_OK);
        assert!((scale - 4.0 * 0.25 / 300.0).abs() < 1e-15);
        privot_fit_free(pfit);

        let mut gen = ptr::null_mut();
        assert_eq!(privot_family_generate(g, 5, 1, &mut gen), PRIVOT_OK);
        assert_eq!(privot_family_len(gen), 5);
        privot_family_free(gen);

        privot_family_free(fam);
        privot_dataset_free(data);
        privot_grid_free(g);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(privot_grid_new(ptr::null(), ptr::null(), 2, 8, &mut g), PRIVOT_ERR_NULL);
        assert!(g.is_null());
        let lo = [0.0];
        let hi = [1.0];
        assert_eq!(privot_grid_new(lo.as_ptr(), hi.as_ptr(), 1, 1, &mut g), PRIVOT_ERR_INVALID);
        assert!(!last_error().is_empty());

        let g8 = grid(8);
        let g4 = grid(4);
        let mut data = ptr::null_mut();
        assert_eq!(privot_dataset_generate(g8, 10, 0, &mut data), PRIVOT_OK);
        let values = vec![0.0; 16];
        let mut fam = ptr::null_mut();
        assert_eq!(privot_family_from_values(g4, values.as_ptr(), 1, &mut fam), PRIVOT_OK);
        let mut fit = ptr::null_mut();
        assert_eq!(privot_fit_private(data, fam, 1.0, 0.25, 0, &mut fit), PRIVOT_ERR_GRID);
        assert!(fit.is_null());
        assert_eq!(privot_fit_private(data, fam, -1.0, 0.25, 0, &mut fit), PRIVOT_ERR_INVALID);

        let x = [0.0, 0.0, 0.1];
        assert_eq!(privot_dataset_new(g8, x.as_ptr(), ptr::null(), 1, &mut data), PRIVOT_ERR_NULL);

        privot_family_free(fam);
        privot_dataset_free(data);
        privot_grid_free(g8);
        privot_grid_free(g4);
        privot_grid_free(ptr::null_mut());
        assert_eq!(privot_grid_len(ptr::null()), 0);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(privot_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/privot.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    for opaque in ["PrivotGrid", "PrivotDataset", "PrivotFamily", "PrivotFit"] {
        assert!(text.contains(&format!("typedef struct {opaque} {opaque};")));
    }
}

/// Compiles and runs a C program against the header and the shared library.
#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    if !lib_dir.join("libprivot_ffi.so").exists() && !lib_dir.join("libprivot_ffi.dylib").exists() {
        eprintln!("shared library not found in {}; skipping", lib_dir.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let c = tmp.path().join("main.c");
    std::fs::write(
        &c,
        r#"
#include <stdio.h>
#include "privot.h"
int main(void) {
    double lo[2] = {-0.5, -0.5}, hi[2] = {0.5, 0.5};
    PrivotGrid *g = NULL;
    PrivotDataset *d = NULL;
    PrivotFamily *f = NULL;
    PrivotFit *fit = NULL;
    size_t idx = 99;
    if (privot_grid_new(lo, hi, 2, 8, &g) != PRIVOT_OK) return 1;
    if (privot_dataset_generate(g, 200, 1, &d) != PRIVOT_OK) return 2;
    if (privot_family_generate(g, 4, 1, &f) != PRIVOT_OK) return 3;
    if (privot_fit_private(d, f, 1.0, 0.25, 7, &fit) != PRIVOT_OK) return 4;
    if (privot_fit_chosen_index(fit, &idx) != PRIVOT_OK || idx >= 4) return 5;
    if (privot_grid_new(lo, hi, 2, 0, &g) == PRIVOT_OK || privot_last_error() == NULL) return 6;
    printf("chosen %zu\n", idx);
    privot_fit_free(fit);
    privot_family_free(f);
    privot_dataset_free(d);
    privot_grid_free(g);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("main");
    let status = Command::new("cc")
        .arg(&c)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lprivot_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("chosen "));
}
