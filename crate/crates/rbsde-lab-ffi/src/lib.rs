//! C ABI over the scenario pipeline: parse a TOML scenario, solve it in
//! exact rational arithmetic, and read values back as doubles.
//!
//! Handles are opaque and owned by the caller until freed with the matching
//! `_free` function. Every fallible call returns a status code; the message
//! for the most recent failure on the current thread is available through
//! `rbsde_last_error`.
//!
//! The reference header lives at `include/rbsde_lab.h`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rbsde_lab::num::Scalar;
use rbsde_lab::rbsde::{
    solve_bsde, solve_double_reflected, solve_lower_reflected, solve_upper_reflected,
    verify_solution,
};
use rbsde_lab::scenario::{realize, Realized, Scenario};
use rbsde_lab::{Error, Rat};

type CoreSolution = rbsde_lab::rbsde::RbsdeSolution<Rat>;

pub const RBSDE_OK: i32 = 0;
pub const RBSDE_ERR_NULL: i32 = 1;
pub const RBSDE_ERR_PARSE: i32 = 2;
pub const RBSDE_ERR_MODEL: i32 = 3;
pub const RBSDE_ERR_SOLVE: i32 = 4;
pub const RBSDE_ERR_VERIFY: i32 = 5;
pub const RBSDE_ERR_RANGE: i32 = 6;
pub const RBSDE_ERR_PANIC: i32 = 7;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).expect("no interior nul");
    });
}

fn code_for(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::Io(_) => RBSDE_ERR_PARSE,
        Error::InvalidTree(_) | Error::ProcessShape { .. } | Error::Precondition(_) => {
            RBSDE_ERR_MODEL
        }
        _ => RBSDE_ERR_SOLVE,
    }
}

fn guarded<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            RBSDE_ERR_PANIC
        }
    }
}

/// Parsed scenario together with its realized rational model.
pub struct RbsdeScenario {
    realized: Realized<Rat>,
}

/// Solved equation plus the inputs needed to re-verify it.
pub struct RbsdeSolution {
    realized: Realized<Rat>,
    solution: CoreSolution,
}

/// Message for the most recent failure on the current thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rbsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a TOML scenario and realizes its model. On success writes a new
/// handle to `out`; free it with `rbsde_scenario_free`.
///
/// # Safety
/// `toml` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsde_scenario_parse(
    toml: *const c_char,
    out: *mut *mut RbsdeScenario,
) -> i32 {
    if toml.is_null() || out.is_null() {
        set_error("null argument");
        return RBSDE_ERR_NULL;
    }
    let text = match CStr::from_ptr(toml).to_str() {
        Ok(t) => t.to_owned(),
        Err(_) => {
            set_error("scenario text is not valid UTF-8");
            return RBSDE_ERR_PARSE;
        }
    };
    guarded(move || {
        let sc = match Scenario::parse(&text) {
            Ok(sc) => sc,
            Err(e) => {
                set_error(&e.to_string());
                return RBSDE_ERR_PARSE;
            }
        };
        match realize::<Rat>(&sc) {
            Ok(realized) => {
                let handle = Box::new(RbsdeScenario { realized });
                unsafe { *out = Box::into_raw(handle) };
                RBSDE_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_for(&e)
            }
        }
    })
}

/// Releases a scenario handle. A null pointer is ignored.
///
/// # Safety
/// `sc` must be null or a pointer from `rbsde_scenario_parse`, freed once.
#[no_mangle]
pub unsafe extern "C" fn rbsde_scenario_free(sc: *mut RbsdeScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Number of nodes in the realized tree, or 0 if the handle is null.
///
/// # Safety
/// `sc` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn rbsde_scenario_num_nodes(sc: *const RbsdeScenario) -> usize {
    match sc.as_ref() {
        Some(sc) => sc.realized.model.num_nodes(),
        None => 0,
    }
}

/// Number of time levels (horizon + 1), or 0 if the handle is null.
///
/// # Safety
/// `sc` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn rbsde_scenario_num_levels(sc: *const RbsdeScenario) -> usize {
    match sc.as_ref() {
        Some(sc) => sc.realized.model.horizon() + 1,
        None => 0,
    }
}

fn solve_realized(r: &Realized<Rat>) -> rbsde_lab::Result<CoreSolution> {
    match (&r.lower, &r.upper) {
        (Some(l), Some(u)) => solve_double_reflected(&r.model, &r.gen, l, u),
        (Some(l), None) => solve_lower_reflected(&r.model, &r.gen, l),
        (None, Some(u)) => solve_upper_reflected(&r.model, &r.gen, u),
        (None, None) => solve_bsde(&r.model, &r.gen),
    }
}

/// Solves the scenario's equation exactly. The solver is chosen by which
/// barriers are present: two-sided, one-sided or unreflected. On success
/// writes a new handle to `out`; free it with `rbsde_solution_free`.
///
/// # Safety
/// `sc` must be a live scenario handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solve(
    sc: *const RbsdeScenario,
    out: *mut *mut RbsdeSolution,
) -> i32 {
    let Some(sc) = sc.as_ref() else {
        set_error("null scenario handle");
        return RBSDE_ERR_NULL;
    };
    if out.is_null() {
        set_error("null output pointer");
        return RBSDE_ERR_NULL;
    }
    guarded(|| match solve_realized(&sc.realized) {
        Ok(solution) => {
            let handle = Box::new(RbsdeSolution {
                realized: sc.realized.clone(),
                solution,
            });
            unsafe { *out = Box::into_raw(handle) };
            RBSDE_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_for(&e)
        }
    })
}

/// Releases a solution handle. A null pointer is ignored.
///
/// # Safety
/// `sol` must be null or a pointer from `rbsde_solve`, freed once.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solution_free(sol: *mut RbsdeSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Writes the root value Y_0 to `out` as a double.
///
/// # Safety
/// `sol` must be a live solution handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solution_y0(
    sol: *const RbsdeSolution,
    out: *mut c_double,
) -> i32 {
    rbsde_solution_value(sol, 0, 0, out)
}

/// Writes the solution value Y at node (level, index) to `out` as a double.
///
/// # Safety
/// `sol` must be a live solution handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solution_value(
    sol: *const RbsdeSolution,
    level: usize,
    index: usize,
    out: *mut c_double,
) -> i32 {
    let Some(sol) = sol.as_ref() else {
        set_error("null solution handle");
        return RBSDE_ERR_NULL;
    };
    if out.is_null() {
        set_error("null output pointer");
        return RBSDE_ERR_NULL;
    }
    match sol.realized.model.node_at(level, index) {
        Some(node) => {
            *out = Scalar::to_f64(sol.solution.y.at(node));
            RBSDE_OK
        }
        None => {
            set_error("node address out of range");
            RBSDE_ERR_RANGE
        }
    }
}

/// Re-verifies the solution against the scenario at zero tolerance.
/// Returns `RBSDE_OK` when every structural check passes.
///
/// # Safety
/// `sol` must be a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solution_verify(sol: *const RbsdeSolution) -> i32 {
    let Some(sol) = sol.as_ref() else {
        set_error("null solution handle");
        return RBSDE_ERR_NULL;
    };
    guarded(|| {
        let r = &sol.realized;
        match verify_solution(
            &r.model,
            &r.gen,
            r.lower.as_ref(),
            r.upper.as_ref(),
            &sol.solution,
            <Rat as num_traits::Zero>::zero(),
        ) {
            Ok(report) if report.passes() => RBSDE_OK,
            Ok(report) => {
                let tol = report.tol.clone();
                let failed: Vec<&str> = report
                    .entries
                    .iter()
                    .filter(|e| e.residual > tol)
                    .map(|e| e.name)
                    .collect();
                set_error(&format!("verification failed: {}", failed.join(", ")));
                RBSDE_ERR_VERIFY
            }
            Err(e) => {
                set_error(&e.to_string());
                code_for(&e)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    const CLAMP: &str = r#"
[model]
kind = "uniform-binary"
depth = 1

[barriers]
lower = { kind = "constant", value = "0" }
upper = { kind = "table", values = ["1/4", "1", "1"] }

[generator]
xi = ["0", "1"]
f = { kind = "zero" }

[run]
mode = "solve"
"#;

    fn parse(text: &str) -> *mut RbsdeScenario {
        let c = CString::new(text).unwrap();
        let mut handle: *mut RbsdeScenario = ptr::null_mut();
        let code = unsafe { rbsde_scenario_parse(c.as_ptr(), &mut handle) };
        assert_eq!(code, RBSDE_OK);
        handle
    }

    #[test]
    fn parse_solve_read_verify_free() {
        let sc = parse(CLAMP);
        unsafe {
            assert_eq!(rbsde_scenario_num_nodes(sc), 3);
            assert_eq!(rbsde_scenario_num_levels(sc), 2);
            let mut sol: *mut RbsdeSolution = ptr::null_mut();
            assert_eq!(rbsde_solve(sc, &mut sol), RBSDE_OK);
            let mut y0 = f64::NAN;
            assert_eq!(rbsde_solution_y0(sol, &mut y0), RBSDE_OK);
            assert_eq!(y0, 0.25);
            let mut leaf = f64::NAN;
            assert_eq!(rbsde_solution_value(sol, 1, 1, &mut leaf), RBSDE_OK);
            assert_eq!(leaf, 1.0);
            assert_eq!(rbsde_solution_verify(sol), RBSDE_OK);
            rbsde_solution_free(sol);
            rbsde_scenario_free(sc);
        }
    }

    #[test]
    fn parse_error_sets_message() {
        let c = CString::new("[model]\nkind = \"nope\"\n").unwrap();
        let mut handle: *mut RbsdeScenario = ptr::null_mut();
        let code = unsafe { rbsde_scenario_parse(c.as_ptr(), &mut handle) };
        assert_eq!(code, RBSDE_ERR_PARSE);
        let msg = unsafe { CStr::from_ptr(rbsde_last_error()) };
        assert!(!msg.to_bytes().is_empty());
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            assert_eq!(
                rbsde_scenario_parse(ptr::null(), ptr::null_mut()),
                RBSDE_ERR_NULL
            );
            assert_eq!(rbsde_scenario_num_nodes(ptr::null()), 0);
            assert_eq!(rbsde_solve(ptr::null(), ptr::null_mut()), RBSDE_ERR_NULL);
            assert_eq!(rbsde_solution_verify(ptr::null()), RBSDE_ERR_NULL);
            rbsde_scenario_free(ptr::null_mut());
            rbsde_solution_free(ptr::null_mut());
        }
    }

    #[test]
    fn out_of_range_node_address() {
        let sc = parse(CLAMP);
        unsafe {
            let mut sol: *mut RbsdeSolution = ptr::null_mut();
            assert_eq!(rbsde_solve(sc, &mut sol), RBSDE_OK);
            let mut v = 0.0;
            assert_eq!(rbsde_solution_value(sol, 5, 0, &mut v), RBSDE_ERR_RANGE);
            rbsde_solution_free(sol);
            rbsde_scenario_free(sc);
        }
    }
}
