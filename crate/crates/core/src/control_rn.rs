//! Risk-neutral scheme.
//!
//! The payoff of a strategy is
//! `Σ_k e^{-θk} g(X^δ_k) − Σ_p e^{-θ(τ_p+Δ)} Ψ(ξ_p)`, truncated at the tree
//! depth. `Yⁿ` is the value with at most `n` further impulses; the limit is
//! computed in one backward pass because an obstacle at time `k` only reads
//! values at `k + Δ`.

use crate::engine::{Acc, Engine};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::regime::{FieldKind, RegimeSpace, SpaceOptions, StartTime, ValueField};
use crate::report::{BoundCheck, BoundReport, SolveReport};
use crate::scenario::ScenarioTree;
use crate::scheme::{self, SolveOptions};
use crate::snell::AdaptedProcess;
use crate::strategy::Strategy;

/// `Y⁰` for a fixed shift `xi` and start time `nu`, one value per node.
pub fn compute_y0(tree: &ScenarioTree, spec: &ProblemSpec, xi: &[f64], nu: &StartTime) -> Result<Vec<f64>> {
    let space = RegimeSpace::build(
        tree,
        spec,
        &SpaceOptions {
            start: nu.clone(),
            initial_xi: Some(xi.to_vec()),
            max_impulses: 0,
            ..Default::default()
        },
    )?;
    let engine = Engine::new(tree, spec, &space, Acc::Additive)?;
    Ok(engine.pass(|_| 0).swap_remove(0))
}

/// Obstacle of regime `regime` built on `prev`. For an iterate `Yⁿ⁻¹` this
/// is `Oⁿ`; for a limit field it is the limit's own obstacle. Keys where no
/// impulse may be decided hold `-inf`, the last level holds 0.
pub fn compute_obstacle(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    prev: &ValueField,
    regime: usize,
) -> Result<AdaptedProcess> {
    obstacle_process(tree, spec, prev, regime, Acc::Additive)
}

pub(crate) fn obstacle_process(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    prev: &ValueField,
    regime: usize,
    acc: Acc,
) -> Result<AdaptedProcess> {
    let space = prev.space();
    if regime >= space.len() {
        return Err(Error::invalid(format!("regime {regime} out of range")));
    }
    let engine = Engine::new(tree, spec, space, acc)?;
    let budget = match prev.kind {
        FieldKind::Iterate { .. } => 1,
        FieldKind::Limit { .. } => prev.budget(regime),
    };
    Ok(AdaptedProcess::from_fn(tree, |v| {
        if space.in_domain(regime, v) {
            engine.obstacle(regime, v, budget, prev.raw()).0
        } else {
            f64::NEG_INFINITY
        }
    }))
}

/// `Y⁰, Y¹, …` up to `n_max`, stopping early once the sup-norm increment is
/// at most `tol`.
pub fn iterate_scheme(tree: &ScenarioTree, spec: &ProblemSpec, n_max: usize, tol: f64) -> Result<Vec<ValueField>> {
    iterate_scheme_with(tree, spec, n_max, tol, &SolveOptions::default())
}

pub fn iterate_scheme_with(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    n_max: usize,
    tol: f64,
    opts: &SolveOptions,
) -> Result<Vec<ValueField>> {
    scheme::iterate(tree, spec, Acc::Additive, n_max, tol, opts)
}

/// Budgeted limit `Y` (budget `n_cap`, default `⌈T/Δ⌉ + 1`) with its
/// strategy and bound checks.
pub fn solve_limit(tree: &ScenarioTree, spec: &ProblemSpec, n_cap: Option<usize>) -> Result<(ValueField, SolveReport)> {
    solve_limit_with(
        tree,
        spec,
        &SolveOptions {
            n_cap,
            ..Default::default()
        },
    )
}

pub fn solve_limit_with(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    opts: &SolveOptions,
) -> Result<(ValueField, SolveReport)> {
    let y = limit_field(tree, spec, opts)?;
    let strategy = extract_strategy(tree, spec, &y)?;
    let bounds = verify_bounds(tree, spec, std::slice::from_ref(&y))?;
    let report = scheme::build_report(tree, &spec.clone().risk_neutral(), &y, &strategy, Vec::new(), &bounds);
    Ok((y, report))
}

/// The limit field alone.
pub fn limit_field(tree: &ScenarioTree, spec: &ProblemSpec, opts: &SolveOptions) -> Result<ValueField> {
    scheme::limit(tree, spec, Acc::Additive, opts)
}

/// Optimal strategy of a limit field: stop where the value meets the
/// obstacle, fire the first maximising impulse, repeat from `τ + Δ`.
pub fn extract_strategy(tree: &ScenarioTree, spec: &ProblemSpec, y: &ValueField) -> Result<Strategy> {
    scheme::extract(tree, spec, Acc::Additive, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpsFormula {
    /// `n = ⌊ln(C₀/ε)/Δ⌋ + 1`, `C₀ = e^{-Δ}(1 − e^{-Δ})^{-1}(‖g‖ + ‖Ψ‖)`.
    Paper,
    /// Smallest `n ≥ 1` whose discounted tail is below ε.
    ThetaExplicit,
}

/// Tail left after `n` impulses:
/// `Σ_{ℓ ≥ (n+1)Δ} e^{-θℓ}‖g‖ + Σ_{ℓ ≥ n} e^{-θ(ℓ+1)Δ}‖Ψ‖`.
pub fn epsilon_tail(spec: &ProblemSpec, n: usize) -> f64 {
    let d = spec.delta as f64;
    let head = (-spec.theta * (n as f64 + 1.0) * d).exp();
    head * spec.g_norm() / (1.0 - (-spec.theta).exp()) + head * spec.psi_norm() / (1.0 - (-spec.theta * d).exp())
}

pub fn paper_c0(spec: &ProblemSpec) -> f64 {
    let d = spec.delta as f64;
    (-d).exp() / (1.0 - (-d).exp()) * (spec.g_norm() + spec.psi_norm())
}

/// Impulse budget after which further impulses are worth less than `eps`.
pub fn epsilon_budget(spec: &ProblemSpec, eps: f64, formula: EpsFormula) -> Result<usize> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be finite and > 0, got {eps}")));
    }
    match formula {
        EpsFormula::Paper => {
            let n = ((paper_c0(spec) / eps).ln() / spec.delta as f64).floor() + 1.0;
            Ok(if n >= 1.0 { n as usize } else { 1 })
        }
        EpsFormula::ThetaExplicit => {
            let k = epsilon_tail(spec, 0) * (spec.theta * spec.delta as f64).exp();
            // tail(n) = k·e^{-θΔ(n+1)}; start just below the closed form.
            let guess = ((k / eps).ln() / (spec.theta * spec.delta as f64) - 2.0).floor();
            let mut n = if guess >= 1.0 { guess as usize } else { 1 };
            while epsilon_tail(spec, n) >= eps {
                n += 1;
            }
            while n > 1 && epsilon_tail(spec, n - 1) < eps {
                n -= 1;
            }
            Ok(n)
        }
    }
}

/// Checks iterate, obstacle and limit bounds at every key:
///
/// ```text
/// |Yⁿ_k| ≤ ((2n+1)c_θ‖g‖ + n‖Ψ‖) e^{-θk}
/// |Oⁿ_k| ≤ (2n c_θ‖g‖ + n‖Ψ‖) e^{-θk}      (where an impulse may be decided)
/// |Y_k|  ≤ C e^{-θk},  C = c_θ‖g‖ + e^{-θΔ}‖Ψ‖ / (1 − e^{-θΔ})
/// ```
///
/// The obstacle of an iterate is rebuilt from the field just before it.
pub fn verify_bounds(tree: &ScenarioTree, spec: &ProblemSpec, fields: &[ValueField]) -> Result<BoundReport> {
    let g = spec.g_norm();
    let psi = spec.psi_norm();
    let ct = spec.c_theta();
    let c = spec.limit_constant();
    let mut report = BoundReport::default();
    for (i, f) in fields.iter().enumerate() {
        match f.kind {
            FieldKind::Iterate { n } => {
                let nf = n as f64;
                let mut check = BoundCheck::new("iterate_value", Some(n));
                for (r, v, x) in f.entries() {
                    let k = tree.time(v);
                    check.record(
                        tree,
                        v,
                        r,
                        x.abs(),
                        ((2.0 * nf + 1.0) * ct * g + nf * psi) * spec.discount(k),
                    );
                }
                report.checks.push(check);
                let prev = i.checked_sub(1).map(|j| &fields[j]);
                if let Some(prev) = prev.filter(|p| p.kind == FieldKind::Iterate { n: n.wrapping_sub(1) }) {
                    let mut check = BoundCheck::new("obstacle", Some(n));
                    let space = prev.space();
                    for r in 0..space.len() {
                        let o = compute_obstacle(tree, spec, prev, r)?;
                        for v in 0..tree.len() {
                            if space.in_domain(r, v) && o.values[v].is_finite() {
                                let bound = (2.0 * nf * ct * g + nf * psi) * spec.discount(tree.time(v));
                                check.record(tree, v, r, o.values[v].abs(), bound);
                            }
                        }
                    }
                    report.checks.push(check);
                }
            }
            FieldKind::Limit { .. } => {
                let mut check = BoundCheck::new("limit_value", None);
                for (r, v, x) in f.entries() {
                    check.record(tree, v, r, x.abs(), c * spec.discount(tree.time(v)));
                }
                report.checks.push(check);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BoundedFunction;
    use crate::scenario::generate_walk_tree;
    use std::f64::consts::LN_2;

    fn chain(t: usize, step: f64) -> ScenarioTree {
        generate_walk_tree(1, t, &[(vec![step], 1.0)], 0).unwrap()
    }

    fn spec(g: &str, gb: f64, delta: usize, impulses: Vec<Vec<f64>>, psi: Vec<f64>) -> ProblemSpec {
        ProblemSpec::new(LN_2, delta, impulses, psi, BoundedFunction::new(g, gb).unwrap()).unwrap()
    }

    fn subsidy() -> ProblemSpec {
        spec("1", 1.0, 1, vec![vec![0.0]], vec![-1.0])
    }

    fn step() -> ProblemSpec {
        spec("step(x0, 1)", 1.0, 1, vec![vec![1.0]], vec![0.1])
    }

    #[test]
    fn y0_examples() {
        let tree = chain(3, 0.0);
        let s = subsidy();
        let y = compute_y0(&tree, &s, &[0.0], &StartTime::Fixed(0)).unwrap();
        assert!((y[0] - 1.875).abs() < 1e-15);
        let y = compute_y0(&tree, &s, &[0.0], &StartTime::Fixed(2)).unwrap();
        assert!((y[0] - 0.375).abs() < 1e-15);
        let zero = spec("0", 0.0, 1, vec![vec![1.0]], vec![1.0]);
        assert!(compute_y0(&tree, &zero, &[0.0], &StartTime::Fixed(0))
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn obstacle_examples() {
        let tree = chain(3, 0.0);
        let s = spec("0", 0.0, 1, vec![vec![1.0]], vec![0.1]);
        let space = RegimeSpace::build(&tree, &s, &SpaceOptions::default()).unwrap();
        let prev = ValueField::from_fn(FieldKind::Iterate { n: 0 }, space, |_, _| 0.0);
        let o = compute_obstacle(&tree, &s, &prev, 0).unwrap();
        assert!((o.values[0] + 0.05).abs() < 1e-15);
        assert_eq!(o.values[3], 0.0);
    }

    #[test]
    fn iterate_examples() {
        let tree = chain(3, 0.0);
        assert_eq!(iterate_scheme(&tree, &step(), 0, 0.0).unwrap().len(), 1);
        let ys = iterate_scheme(&tree, &step(), 1, 0.0).unwrap();
        assert!((ys[1].root_value() - 0.825).abs() < 1e-12, "{}", ys[1].root_value());

        let never = spec("1", 1.0, 1, vec![vec![0.5]], vec![10.0]);
        let ys = iterate_scheme(&tree, &never, 4, 0.0).unwrap();
        for y in &ys {
            assert!((y.root_value() - 1.875).abs() < 1e-12);
        }
    }

    #[test]
    fn subsidy_limit() {
        let tree = chain(3, 0.0);
        let (y, report) = solve_limit(&tree, &subsidy(), None).unwrap();
        assert!((y.root_value() - 2.75).abs() < 1e-12);
        assert_eq!(report.n_cap, 4);
        let times: Vec<usize> = report
            .strategy
            .stages
            .iter()
            .map(|s| tree.time(tree.find(&s.stops[0].node).unwrap()))
            .collect();
        assert_eq!(times, vec![0, 1, 2]);
        let ys = iterate_scheme(&tree, &subsidy(), 4, 0.0).unwrap();
        assert!((ys.last().unwrap().root_value() - y.root_value()).abs() < 1e-12);
        assert!(report.bounds_passed());
        assert!((report.truncation_bound - 3.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn zero_payoff_limit() {
        let tree = generate_walk_tree(2, 3, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap();
        let s = spec("0", 0.0, 1, vec![vec![1.0]], vec![0.5]);
        let (y, report) = solve_limit(&tree, &s, None).unwrap();
        assert!(y.entries().all(|(_, _, x)| x == 0.0));
        assert!(report.strategy.stages.is_empty());
    }

    #[test]
    fn never_impulse_strategy_is_empty() {
        let tree = chain(3, 0.0);
        let s = spec("1", 1.0, 1, vec![vec![0.5]], vec![10.0]);
        let y = limit_field(&tree, &s, &SolveOptions::default()).unwrap();
        assert!(extract_strategy(&tree, &s, &y).unwrap().is_empty());
    }

    #[test]
    fn ties_pick_lowest_index() {
        let tree = chain(3, 0.0);
        let s = spec("1", 1.0, 1, vec![vec![0.0], vec![0.0]], vec![-1.0, -1.0]);
        let y = limit_field(&tree, &s, &SolveOptions::default()).unwrap();
        let st = extract_strategy(&tree, &s, &y).unwrap();
        assert_eq!(st.stages.len(), 3);
        assert!(st.stages.iter().all(|s| s.stops.values().all(|&b| b == 0)));
    }

    #[test]
    fn epsilon_examples() {
        let s = spec("1", 1.0, 1, vec![vec![0.0]], vec![1.0]);
        assert!((paper_c0(&s) - 1.16395).abs() < 1e-5);
        assert_eq!(epsilon_budget(&s, 0.1, EpsFormula::Paper).unwrap(), 3);
        assert_eq!(epsilon_budget(&s, 2.0, EpsFormula::Paper).unwrap(), 1);
        // tail(n) = 2^{1-n}: 2^{-3} = 0.125 at n = 4, 2^{-4} = 0.0625 at n = 5.
        assert_eq!(epsilon_budget(&s, 0.1, EpsFormula::ThetaExplicit).unwrap(), 5);
        assert!(epsilon_budget(&s, 0.0, EpsFormula::Paper).is_err());
    }

    #[test]
    fn bound_examples() {
        let tree = chain(3, 0.0);
        let ys = iterate_scheme(&tree, &subsidy(), 0, 0.0).unwrap();
        let r = verify_bounds(&tree, &subsidy(), &ys).unwrap();
        assert!(r.passed());
        assert!((r.checks[0].min_slack.unwrap() - 0.125).abs() < 1e-12);
    }
}
