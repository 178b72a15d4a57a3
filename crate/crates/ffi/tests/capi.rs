use std::ffi::{CStr, CString};
use std::ptr;

use sparsectl_ffi::*;

fn plant(uri: &str) -> *mut SparsectlPlant {
    let uri = CString::new(uri).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sparsectl_plant_from_uri(uri.as_ptr(), &mut out) }, SparsectlStatus::Ok);
    assert!(!out.is_null());
    out
}

fn last_error() -> String {
    let p = sparsectl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn converter_round_trip() {
    let pl = plant("builtin:converter");
    let (mut n, mut m) = (0, 0);
    unsafe {
        assert_eq!(sparsectl_plant_dims(pl, &mut n, &mut m), SparsectlStatus::Ok);
        assert_eq!((n, m), (3, 2));

        let (mut a_n, mut ok) = (0.0, 0);
        assert_eq!(sparsectl_check(pl, &mut a_n, &mut ok), SparsectlStatus::Ok);
        assert_eq!(ok, 1);
        assert!(a_n > 0.09 && a_n < 0.1);

        let mut plan = ptr::null_mut();
        assert_eq!(sparsectl_synth_uniform(pl, 0.01, 1e-4, 1e-4, &mut plan), SparsectlStatus::Ok);
        let mut probs = [0.0; 3];
        assert_eq!(sparsectl_plan_probs(plan, probs.as_mut_ptr(), 3), SparsectlStatus::Ok);
        assert!(probs.iter().all(|&p| (0.73..=0.85).contains(&p)));
        let mut gain = [0.0; 6];
        assert_eq!(sparsectl_plan_gain(plan, gain.as_mut_ptr(), 6), SparsectlStatus::Ok);
        // Only the third state is fed back.
        assert_eq!(gain[0], 0.0);
        assert!(gain[2] != 0.0);

        let mut contraction = f64::NAN;
        assert_eq!(
            sparsectl_plan_summary(plan, ptr::null_mut(), ptr::null_mut(), &mut contraction, ptr::null_mut()),
            SparsectlStatus::Ok
        );
        assert!(contraction < 1.0);

        let mut msn = vec![0.0; 201];
        let mut verdict = SparsectlVerdict::Inconclusive;
        assert_eq!(
            sparsectl_simulate(pl, plan, 100, 200, 100.0, 3, msn.as_mut_ptr(), msn.len(), &mut verdict),
            SparsectlStatus::Ok
        );
        assert_eq!(verdict, SparsectlVerdict::Converged);
        assert!(msn[200] < 1e-3 * msn[0]);

        // Wrong buffer size is rejected, not truncated.
        assert_eq!(
            sparsectl_simulate(pl, plan, 10, 200, 1.0, 3, msn.as_mut_ptr(), 100, ptr::null_mut()),
            SparsectlStatus::InvalidArgument
        );
        assert!(last_error().contains("need 201"));

        sparsectl_plan_free(plan);
        sparsectl_plant_free(pl);
    }
}

#[test]
fn adaptive_with_null_weights() {
    let pl = plant("builtin:converter");
    unsafe {
        let mut plan = ptr::null_mut();
        assert_eq!(
            sparsectl_synth_adaptive(pl, ptr::null(), 0.01, 1e-4, 1e-4, &mut plan),
            SparsectlStatus::Ok
        );
        let mut probs = [0.0; 3];
        assert_eq!(sparsectl_plan_probs(plan, probs.as_mut_ptr(), 3), SparsectlStatus::Ok);
        assert!(probs[2] > probs[0] && probs[2] > probs[1]);
        sparsectl_plan_free(plan);
        sparsectl_plant_free(pl);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(sparsectl_plant_from_uri(ptr::null(), &mut out), SparsectlStatus::NullPointer);

        let missing = CString::new("/nonexistent/plant.json").unwrap();
        assert_eq!(sparsectl_plant_from_uri(missing.as_ptr(), &mut out), SparsectlStatus::Io);
        assert!(out.is_null());

        let unknown = CString::new("builtin:nope").unwrap();
        assert_eq!(sparsectl_plant_from_uri(unknown.as_ptr(), &mut out), SparsectlStatus::InvalidArgument);
        assert!(last_error().contains("nope"));

        // Rank-deficient B: the plant exists, the check fails, synthesis refuses.
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [1.0, 2.0, 1.0, 2.0];
        assert_eq!(sparsectl_plant_from_matrices(2, 2, a.as_ptr(), b.as_ptr(), &mut out), SparsectlStatus::Ok);
        let (mut a_n, mut ok) = (0.0, 1);
        assert_eq!(sparsectl_check(out, &mut a_n, &mut ok), SparsectlStatus::Ok);
        assert_eq!(ok, 0);
        assert!(a_n.is_nan());
        let mut plan = ptr::null_mut();
        assert_eq!(
            sparsectl_synth_uniform(out, 0.01, 1e-4, 1e-4, &mut plan),
            SparsectlStatus::AssumptionViolated
        );
        assert!(last_error().contains("Assumption 1 violated"));
        assert!(plan.is_null());
        sparsectl_plant_free(out);

        // a_n ≥ 1.
        let a = [1.0, 0.0, 0.0, 1.5];
        let b = [1.0, 0.0];
        let mut pl = ptr::null_mut();
        assert_eq!(sparsectl_plant_from_matrices(2, 1, a.as_ptr(), b.as_ptr(), &mut pl), SparsectlStatus::Ok);
        assert_eq!(
            sparsectl_synth_uniform(pl, 0.01, 1e-4, 1e-4, &mut plan),
            SparsectlStatus::AssumptionViolated
        );
        assert_eq!(sparsectl_synth_uniform(pl, -1.0, 1e-4, 1e-4, &mut plan), SparsectlStatus::InvalidArgument);
        sparsectl_plant_free(pl);

        assert_eq!(sparsectl_plant_from_matrices(2, 1, ptr::null(), b.as_ptr(), &mut out), SparsectlStatus::NullPointer);
        sparsectl_plant_free(ptr::null_mut());
        sparsectl_plan_free(ptr::null_mut());
    }
}

#[test]
fn simulation_is_seeded() {
    let pl = plant("builtin:chain?N=3");
    unsafe {
        let mut plan = ptr::null_mut();
        assert_eq!(sparsectl_synth_uniform(pl, 0.01, 1e-4, 1e-4, &mut plan), SparsectlStatus::Ok);
        let run = |seed| {
            let mut v = vec![0.0; 51];
            assert_eq!(
                sparsectl_simulate(pl, plan, 20, 50, 10.0, seed, v.as_mut_ptr(), v.len(), ptr::null_mut()),
                SparsectlStatus::Ok
            );
            v
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
        sparsectl_plan_free(plan);
        sparsectl_plant_free(pl);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(sparsectl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/sparsectl.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let dir = tempfile_dir();
    let src = dir.join("probe.c");
    std::fs::write(
        &src,
        "#include \"sparsectl.h\"\nint main(void) { SparsectlPlant *p = 0; sparsectl_plant_free(p); return SPARSECTL_STATUS_OK; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status()
        .unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("sparsectl-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
