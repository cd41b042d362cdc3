//! C interface. Objects are opaque handles released with their `_free`
//! function; strings returned to the caller are released with
//! `imp_string_free`. Every fallible call returns an [`ImpStatus`] and leaves
//! a message for `imp_last_error_message` on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use impulsolve::control_rn::{epsilon_budget, EpsFormula};
use impulsolve::policy::{evaluate_exact_with, EvalOptions};
use impulsolve::problem::parse_problem;
use impulsolve::scenario::parse_tree;
use impulsolve::strategy::parse_strategy;
use impulsolve::{solve, Error, ProblemSpec, ScenarioTree, SolveOptions};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImpStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an out-of-range number.
    InvalidArgument = 1,
    Parse = 2,
    /// The input parsed but breaks a model rule.
    Validation = 3,
    /// A size guard stopped the computation.
    BudgetExceeded = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImpEpsFormula {
    Paper = 0,
    Theta = 1,
}

pub struct ImpTree(ScenarioTree);

pub struct ImpProblem(ProblemSpec);

pub struct ImpSolution {
    root_value: f64,
    report: CString,
    strategy: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ImpStatus {
    match e {
        Error::Parse(_) => ImpStatus::Parse,
        Error::Validation(_) | Error::Inadmissible(_) => ImpStatus::Validation,
        Error::Invalid(_) => ImpStatus::InvalidArgument,
        Error::Guard { .. } => ImpStatus::BudgetExceeded,
        Error::Io(_) => ImpStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic.
fn guarded(f: impl FnOnce() -> Result<(), (ImpStatus, String)>) -> ImpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ImpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ImpStatus::Internal
        }
    }
}

fn lift<T>(r: impulsolve::Result<T>) -> Result<T, (ImpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn invalid(msg: &str) -> (ImpStatus, String) {
    (ImpStatus::InvalidArgument, msg.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ImpStatus, String)> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    // SAFETY: the caller passes a nul-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (ImpStatus, String)> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { p.as_ref() }.ok_or_else(|| invalid(&format!("{what} is null")))
}

fn to_c(s: String) -> CString {
    CString::new(s).expect("JSON output has no interior nul")
}

/// Parses and validates a scenario tree document.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imp_tree_from_json(json: *const c_char, out: *mut *mut ImpTree) -> ImpStatus {
    guarded(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let tree = lift(parse_tree(unsafe { text(json, "json") }?))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(ImpTree(tree))) };
        Ok(())
    })
}

/// # Safety
/// `tree` must come from `imp_tree_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn imp_tree_free(tree: *mut ImpTree) {
    if !tree.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(tree) });
    }
}

/// Parses and checks a problem document.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imp_problem_from_json(json: *const c_char, out: *mut *mut ImpProblem) -> ImpStatus {
    guarded(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let spec = lift(parse_problem(unsafe { text(json, "json") }?))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(ImpProblem(spec))) };
        Ok(())
    })
}

/// # Safety
/// `problem` must come from `imp_problem_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn imp_problem_free(problem: *mut ImpProblem) {
    if !problem.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(problem) });
    }
}

/// Solves in the problem's mode. A negative `n_cap` selects the default
/// budget `⌈T/Δ⌉ + 1`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imp_solve(
    tree: *const ImpTree,
    problem: *const ImpProblem,
    n_cap: i64,
    out: *mut *mut ImpSolution,
) -> ImpStatus {
    guarded(|| {
        let tree = &unsafe { handle(tree, "tree") }?.0;
        let spec = &unsafe { handle(problem, "problem") }?.0;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let opts = SolveOptions {
            n_cap: usize::try_from(n_cap).ok(),
            ..SolveOptions::default()
        };
        let o = lift(solve(tree, spec, &opts, None))?;
        let solution = ImpSolution {
            root_value: o.report.root_value,
            report: to_c(o.report.to_json()),
            strategy: to_c(o.strategy.to_json(tree)),
        };
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(solution)) };
        Ok(())
    })
}

/// Root value, or NaN for a null handle.
///
/// # Safety
/// `solution` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn imp_solution_root_value(solution: *const ImpSolution) -> f64 {
    // SAFETY: the caller passes null or a live handle.
    unsafe { solution.as_ref() }.map_or(f64::NAN, |s| s.root_value)
}

/// Solve report as JSON; release with `imp_string_free`. Null for a null handle.
///
/// # Safety
/// `solution` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn imp_solution_report_json(solution: *const ImpSolution) -> *mut c_char {
    // SAFETY: the caller passes null or a live handle.
    unsafe { solution.as_ref() }.map_or(ptr::null_mut(), |s| s.report.clone().into_raw())
}

/// Extracted strategy as JSON; release with `imp_string_free`.
///
/// # Safety
/// `solution` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn imp_solution_strategy_json(solution: *const ImpSolution) -> *mut c_char {
    // SAFETY: the caller passes null or a live handle.
    unsafe { solution.as_ref() }.map_or(ptr::null_mut(), |s| s.strategy.clone().into_raw())
}

/// # Safety
/// `solution` must come from `imp_solve` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn imp_solution_free(solution: *mut ImpSolution) {
    if !solution.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(solution) });
    }
}

/// Exact value of a strategy document: `J` when risk-neutral, `E[exp(ρC)]`
/// when risk-sensitive.
///
/// # Safety
/// Handles must be live; `strategy_json` nul-terminated; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn imp_evaluate(
    tree: *const ImpTree,
    problem: *const ImpProblem,
    strategy_json: *const c_char,
    strict_horizon_charging: bool,
    out_value: *mut f64,
) -> ImpStatus {
    guarded(|| {
        let tree = &unsafe { handle(tree, "tree") }?.0;
        let spec = &unsafe { handle(problem, "problem") }?.0;
        if out_value.is_null() {
            return Err(invalid("out_value is null"));
        }
        let strategy = lift(parse_strategy(unsafe { text(strategy_json, "strategy_json") }?, tree))?;
        let opts = EvalOptions {
            strict_horizon_charging,
        };
        let b = lift(evaluate_exact_with(tree, spec, &strategy, &opts))?;
        // SAFETY: checked non-null above.
        unsafe { *out_value = b.value };
        Ok(())
    })
}

/// Impulse budget after which the remaining value is below `eps`.
///
/// # Safety
/// `problem` must be live; `out_n` writable.
#[no_mangle]
pub unsafe extern "C" fn imp_eps_budget(
    problem: *const ImpProblem,
    eps: f64,
    formula: ImpEpsFormula,
    out_n: *mut usize,
) -> ImpStatus {
    guarded(|| {
        let spec = &unsafe { handle(problem, "problem") }?.0;
        if out_n.is_null() {
            return Err(invalid("out_n is null"));
        }
        let f = match formula {
            ImpEpsFormula::Paper => EpsFormula::Paper,
            ImpEpsFormula::Theta => EpsFormula::ThetaExplicit,
        };
        let n = lift(epsilon_budget(spec, eps, f))?;
        // SAFETY: checked non-null above.
        unsafe { *out_n = n };
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread; do not free.
#[no_mangle]
pub extern "C" fn imp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn imp_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: the string was produced by `CString::into_raw` here.
        drop(unsafe { CString::from_raw(s) });
    }
}
