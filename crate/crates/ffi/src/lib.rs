//! C interface to `sparsectl`.
//!
//! Plants and plans are opaque handles owned by the caller and released
//! with the matching `_free` function. Every fallible call returns a
//! [`SparsectlStatus`]; on failure [`sparsectl_last_error`] describes it.
//! Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sparsectl::linops::Matrix;
use sparsectl::sim::{self, DEFAULT_TOL_REL};
use sparsectl::synth::{self, check_assumptions};
use sparsectl::{Error, ModelSpec, Plant, SimConfig, SparsificationPlan, SynthSettings, Verdict};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsectlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    RankDeficient = 3,
    AssumptionViolated = 4,
    Infeasible = 5,
    InvalidCertificate = 6,
    PlanMismatch = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsectlVerdict {
    Converged = 0,
    Diverged = 1,
    Inconclusive = 2,
}

impl From<Verdict> for SparsectlVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Converged => SparsectlVerdict::Converged,
            Verdict::Diverged => SparsectlVerdict::Diverged,
            Verdict::Inconclusive => SparsectlVerdict::Inconclusive,
        }
    }
}

/// Opaque plant handle.
pub struct SparsectlPlant(Plant);

/// Opaque plan handle.
pub struct SparsectlPlan(SparsificationPlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SparsectlStatus {
    match e {
        Error::InvalidInput(_) => SparsectlStatus::InvalidArgument,
        Error::RankDeficient { .. } => SparsectlStatus::RankDeficient,
        Error::Structural(_) => SparsectlStatus::AssumptionViolated,
        Error::Infeasible(_) => SparsectlStatus::Infeasible,
        Error::InvalidCertificate(_) => SparsectlStatus::InvalidCertificate,
        Error::PlanMismatch(_) => SparsectlStatus::PlanMismatch,
        Error::Load { .. } | Error::Io { .. } => SparsectlStatus::Io,
    }
}

struct Fail(SparsectlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SparsectlStatus::NullPointer, format!("`{what}` is null"))
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(SparsectlStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic for `sparsectl_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SparsectlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SparsectlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SparsectlStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn plant_ref<'a>(p: *const SparsectlPlant) -> Result<&'a Plant, Fail> {
    p.as_ref().map(|h| &h.0).ok_or_else(|| null("plant"))
}

unsafe fn plan_ref<'a>(p: *const SparsectlPlan) -> Result<&'a SparsificationPlan, Fail> {
    p.as_ref().map(|h| &h.0).ok_or_else(|| null("plan"))
}

fn copy_into(src: &[f64], dst: &mut [f64]) -> Result<(), Fail> {
    if dst.len() != src.len() {
        return Err(bad(format!("output buffer holds {} values, need {}", dst.len(), src.len())));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Message for the most recent failed call on this thread, or NULL.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sparsectl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sparsectl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Resolves a model URI (`builtin:converter`, `builtin:grid?nodes=50`,
/// `builtin:chain?N=20`) or a plant file path.
///
/// # Safety
/// `uri` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_plant_from_uri(
    uri: *const c_char,
    out: *mut *mut SparsectlPlant,
) -> SparsectlStatus {
    guard(|| {
        if uri.is_null() {
            return Err(null("uri"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let uri = CStr::from_ptr(uri).to_str().map_err(|_| bad("uri is not UTF-8"))?;
        let spec: ModelSpec = uri.parse()?;
        let plant = spec.resolve()?.plant;
        *out = Box::into_raw(Box::new(SparsectlPlant(plant)));
        Ok(())
    })
}

/// Builds a plant from row-major `a` (n×n) and `b` (n×m).
///
/// # Safety
/// `a` must hold n·n values, `b` n·m values, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_plant_from_matrices(
    n: usize,
    m: usize,
    a: *const f64,
    b: *const f64,
    out: *mut *mut SparsectlPlant,
) -> SparsectlStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if n == 0 || m == 0 {
            return Err(bad("dimensions must be positive"));
        }
        let a = slice(a, n * n, "a")?;
        let b = slice(b, n * m, "b")?;
        let plant = Plant::new(
            "ffi",
            Matrix::from_row_slice(n, n, a),
            Matrix::from_row_slice(n, m, b),
        )?;
        *out = Box::into_raw(Box::new(SparsectlPlant(plant)));
        Ok(())
    })
}

/// # Safety
/// `plant` must come from this library and not be freed twice. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_plant_free(plant: *mut SparsectlPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// # Safety
/// `plant`, `n` and `m` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_plant_dims(
    plant: *const SparsectlPlant,
    n: *mut usize,
    m: *mut usize,
) -> SparsectlStatus {
    guard(|| {
        let plant = plant_ref(plant)?;
        *n.as_mut().ok_or_else(|| null("n"))? = plant.n();
        *m.as_mut().ok_or_else(|| null("m"))? = plant.m();
        Ok(())
    })
}

/// Checks full column rank of B and a_n < 1. Writes a_n (NaN when B is
/// rank deficient) and sets `*ok` to 1 when both hold. A violated
/// assumption is reported through `*ok`, not the status.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_check(
    plant: *const SparsectlPlant,
    a_n: *mut f64,
    ok: *mut i32,
) -> SparsectlStatus {
    guard(|| {
        let report = check_assumptions(plant_ref(plant)?);
        *a_n.as_mut().ok_or_else(|| null("a_n"))? = report.a_n;
        *ok.as_mut().ok_or_else(|| null("ok"))? = i32::from(report.ok());
        if let Some(msg) = report.violation() {
            set_error(msg);
        }
        Ok(())
    })
}

fn settings(delta: f64, p_floor: f64, epsilon_p: f64) -> SynthSettings {
    SynthSettings {
        delta,
        p_floor,
        epsilon_p,
    }
}

/// Single-probability synthesis. Pass `delta = 0.01`, `p_floor = 1e-4`,
/// `epsilon_p = 1e-4` for the usual defaults.
///
/// # Safety
/// `plant` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_synth_uniform(
    plant: *const SparsectlPlant,
    delta: f64,
    p_floor: f64,
    epsilon_p: f64,
    out: *mut *mut SparsectlPlan,
) -> SparsectlStatus {
    guard(|| {
        let plant = plant_ref(plant)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let plan = synth::algorithm1(plant, &settings(delta, p_floor, epsilon_p))?;
        *out = Box::into_raw(Box::new(SparsectlPlan(plan)));
        Ok(())
    })
}

/// Per-coordinate synthesis. `weights` holds n sensing costs, or is NULL
/// for unit costs.
///
/// # Safety
/// `plant` and `out` must be valid; non-null `weights` must hold n values.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_synth_adaptive(
    plant: *const SparsectlPlant,
    weights: *const f64,
    delta: f64,
    p_floor: f64,
    epsilon_p: f64,
    out: *mut *mut SparsectlPlan,
) -> SparsectlStatus {
    guard(|| {
        let plant = plant_ref(plant)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let weights = if weights.is_null() {
            vec![1.0; plant.n()]
        } else {
            slice(weights, plant.n(), "weights")?.to_vec()
        };
        let plan = synth::algorithm2(plant, &weights, &settings(delta, p_floor, epsilon_p))?;
        *out = Box::into_raw(Box::new(SparsectlPlan(plan)));
        Ok(())
    })
}

/// # Safety
/// `plan` must come from this library and not be freed twice. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_plan_free(plan: *mut SparsectlPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Copies the m×n gain, row-major, into `out` (`len` must be m·n).
///
/// # Safety
/// `plan` must be valid and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_plan_gain(
    plan: *const SparsectlPlan,
    out: *mut f64,
    len: usize,
) -> SparsectlStatus {
    guard(|| {
        let gain = &plan_ref(plan)?.cert.gain;
        let row_major: Vec<f64> = gain.transpose().iter().copied().collect();
        copy_into(&row_major, slice_mut(out, len, "out")?)
    })
}

/// Copies the n activation probabilities into `out`.
///
/// # Safety
/// `plan` must be valid and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_plan_probs(
    plan: *const SparsectlPlan,
    out: *mut f64,
    len: usize,
) -> SparsectlStatus {
    guard(|| copy_into(&plan_ref(plan)?.probs(), slice_mut(out, len, "out")?))
}

/// Scalar summary of a plan. Any output pointer may be NULL.
///
/// # Safety
/// `plan` must be valid; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_plan_summary(
    plan: *const SparsectlPlan,
    gamma: *mut f64,
    d_norm_sq: *mut f64,
    contraction: *mut f64,
    expected_sparsity: *mut f64,
) -> SparsectlStatus {
    guard(|| {
        let plan = plan_ref(plan)?;
        for (dst, v) in [
            (gamma, plan.cert.gamma),
            (d_norm_sq, plan.cert.d_norm_sq),
            (contraction, plan.contraction),
            (expected_sparsity, plan.expected_sparsity),
        ] {
            if let Some(d) = dst.as_mut() {
                *d = v;
            }
        }
        Ok(())
    })
}

/// Monte Carlo ensemble at the plan's probabilities. Writes the per-step
/// mean squared norm (`len` must be steps + 1) and the decay verdict.
///
/// # Safety
/// `plant` and `plan` must be valid, `mean_sq_norm` must hold `len` values
/// and `verdict` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sparsectl_simulate(
    plant: *const SparsectlPlant,
    plan: *const SparsectlPlan,
    runs: usize,
    steps: usize,
    sigma: f64,
    seed: u64,
    mean_sq_norm: *mut f64,
    len: usize,
    verdict: *mut SparsectlVerdict,
) -> SparsectlStatus {
    guard(|| {
        let plant = plant_ref(plant)?;
        let plan = plan_ref(plan)?;
        let out = slice_mut(mean_sq_norm, len, "mean_sq_norm")?;
        if (plan.cert.n(), plan.cert.gain.nrows()) != (plant.n(), plant.m()) {
            return Err(Fail(SparsectlStatus::PlanMismatch, "plan and plant dimensions differ".into()));
        }
        let cfg = SimConfig {
            steps,
            runs,
            init_sigma: sigma,
            master_seed: seed,
            record_components: Vec::new(),
        };
        let stats = sim::run_ensemble_with(plant, &plan.cert.gain, &plan.probs(), &cfg, seed)?;
        let report = sim::decay_report(&stats, plan.contraction, DEFAULT_TOL_REL)?;
        copy_into(&stats.mean_sq_norm, out)?;
        if let Some(v) = verdict.as_mut() {
            *v = report.verdict.into();
        }
        Ok(())
    })
}
