use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use impulsolve_ffi::*;

const CHAIN: &str = r#"{"dim": 1, "depth": 3, "nodes": [
  {"id": "a", "time": 0, "state": [0], "children": [{"id": "b", "p": 1}]},
  {"id": "b", "time": 1, "state": [0], "parent": "a", "children": [{"id": "c", "p": 1}]},
  {"id": "c", "time": 2, "state": [0], "parent": "b", "children": [{"id": "d", "p": 1}]},
  {"id": "d", "time": 3, "state": [0], "parent": "c"}]}"#;

const SUBSIDY: &str = r#"{"theta": 0.6931471805599453, "delta": 1, "impulses": [[0]], "psi": [-1],
  "g": {"expr": "1", "bound": 1}}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = imp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handles {
    tree: *mut ImpTree,
    problem: *mut ImpProblem,
}

impl Handles {
    fn new(tree: &str, problem: &str) -> Self {
        let mut h = Handles {
            tree: ptr::null_mut(),
            problem: ptr::null_mut(),
        };
        unsafe {
            assert_eq!(imp_tree_from_json(c(tree).as_ptr(), &mut h.tree), ImpStatus::Ok);
            assert_eq!(
                imp_problem_from_json(c(problem).as_ptr(), &mut h.problem),
                ImpStatus::Ok
            );
        }
        h
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            imp_tree_free(self.tree);
            imp_problem_free(self.problem);
        }
    }
}

#[test]
fn solve_and_evaluate_round_trip() {
    let h = Handles::new(CHAIN, SUBSIDY);
    unsafe {
        let mut sol = ptr::null_mut();
        assert_eq!(imp_solve(h.tree, h.problem, -1, &mut sol), ImpStatus::Ok);
        assert!(imp_last_error_message().is_null());
        assert!((imp_solution_root_value(sol) - 2.75).abs() < 1e-12);

        let report = imp_solution_report_json(sol);
        let text = CStr::from_ptr(report).to_str().unwrap().to_owned();
        imp_string_free(report);
        assert!(text.contains("\"root_value\": 2.75"));

        let strategy = imp_solution_strategy_json(sol);
        let mut value = f64::NAN;
        assert_eq!(
            imp_evaluate(h.tree, h.problem, strategy, false, &mut value),
            ImpStatus::Ok
        );
        assert!((value - 2.75).abs() < 1e-12);
        imp_string_free(strategy);

        // A budget of one impulse.
        let mut one = ptr::null_mut();
        assert_eq!(imp_solve(h.tree, h.problem, 1, &mut one), ImpStatus::Ok);
        assert!((imp_solution_root_value(one) - 2.375).abs() < 1e-12);
        imp_solution_free(one);
        imp_solution_free(sol);
    }
}

#[test]
fn eps_budget() {
    let h = Handles::new(
        CHAIN,
        r#"{"theta": 1, "delta": 1, "impulses": [[1]], "psi": [1], "g": {"expr": "clamp(x0, -1, 1)", "bound": 1}}"#,
    );
    let mut n = 0usize;
    unsafe {
        assert_eq!(
            imp_eps_budget(h.problem, 0.1, ImpEpsFormula::Paper, &mut n),
            ImpStatus::Ok
        );
        assert_eq!(n, 3);
        assert_eq!(
            imp_eps_budget(h.problem, -1.0, ImpEpsFormula::Theta, &mut n),
            ImpStatus::InvalidArgument
        );
    }
    assert!(last_error().contains("eps"));
}

#[test]
fn error_codes() {
    unsafe {
        let mut tree = ptr::null_mut();
        assert_eq!(imp_tree_from_json(c("{").as_ptr(), &mut tree), ImpStatus::Parse);
        assert!(tree.is_null());
        let bad = CHAIN.replace("\"p\": 1}]},\n  {\"id\": \"c\"", "\"p\": 0.5}]},\n  {\"id\": \"c\"");
        assert_eq!(imp_tree_from_json(c(&bad).as_ptr(), &mut tree), ImpStatus::Validation);
        assert!(last_error().contains("probabilities sum"));
        assert_eq!(imp_tree_from_json(ptr::null(), &mut tree), ImpStatus::InvalidArgument);
        assert_eq!(
            imp_solve(ptr::null(), ptr::null(), -1, &mut ptr::null_mut()),
            ImpStatus::InvalidArgument
        );
        assert!(imp_solution_root_value(ptr::null()).is_nan());
        assert!(imp_solution_report_json(ptr::null()).is_null());

        let h = Handles::new(CHAIN, SUBSIDY);
        let mut v = 0.0;
        let gap = c(
            r#"{"stages": [{"stops": [{"node": "a", "impulse_index": 0}]}, {"stops": [{"node": "a", "impulse_index": 0}]}]}"#,
        );
        assert_eq!(
            imp_evaluate(h.tree, h.problem, gap.as_ptr(), false, &mut v),
            ImpStatus::Validation
        );
        assert_eq!(
            imp_evaluate(h.tree, h.problem, c("[]").as_ptr(), false, &mut v),
            ImpStatus::Parse
        );

        let mut p = ptr::null_mut();
        let wide = SUBSIDY.replace("[[0]]", "[[0, 0]]");
        assert_eq!(imp_problem_from_json(c(&wide).as_ptr(), &mut p), ImpStatus::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(imp_solve(h.tree, p, -1, &mut sol), ImpStatus::Validation);
        imp_problem_free(p);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("impulsolve.h").exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"impulsolve.h\"\nint main(void) { ImpTree *t = 0; ImpStatus s = imp_tree_from_json(\"{}\", &t); return s == IMP_STATUS_OK; }\n",
    )
    .unwrap();
    for (compiler, extra) in [("cc", &["-std=c99"][..]), ("c++", &["-x", "c++"][..])] {
        let o = Command::new(compiler)
            .args(extra)
            .arg("-fsyntax-only")
            .arg("-Wall")
            .arg("-Werror")
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .output()
            .unwrap_or_else(|e| panic!("{compiler}: {e}"));
        assert!(o.status.success(), "{compiler}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
