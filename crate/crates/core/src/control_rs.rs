//! Risk-sensitive scheme: maximise `E[exp(ρ C(δ))]`.
//!
//! Payoffs are pre-multiplied by ρ, so with `a(v) = ρ e^{-θk} g(X_v + ξ)`
//! the recursion is `V(v) = e^{a(v)} · max(Σ p·V(child), Θ(v))` with
//! continuation 1 past the last level. See `docs/math.md` for the derivation
//! from the cumulated Snell form.

use crate::control_rn::obstacle_process;
use crate::engine::{Acc, Engine};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::regime::{FieldKind, RegimeSpace, RsValueField, SpaceOptions, StartTime};
use crate::report::{BoundCheck, BoundReport, SolveReport, BOUND_TOL};
use crate::scenario::{NodeIdx, ScenarioTree};
use crate::scheme::{self, SolveOptions};
use crate::snell::AdaptedProcess;
use crate::strategy::Strategy;

fn rho(spec: &ProblemSpec) -> Result<f64> {
    spec.mode
        .rho()
        .ok_or_else(|| Error::invalid("risk-sensitive operation on a risk-neutral problem"))
}

/// `V⁰` for a fixed shift `xi` and start time `nu`, one value per node.
pub fn compute_v0(tree: &ScenarioTree, spec: &ProblemSpec, xi: &[f64], nu: &StartTime) -> Result<Vec<f64>> {
    rho(spec)?;
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
    let engine = Engine::new(tree, spec, &space, Acc::Multiplicative)?;
    Ok(engine.pass(|_| 0).swap_remove(0))
}

/// Path factors of firing `beta` at `node` with shift `xi` in force: for
/// each node `w` Δ levels below, `(w, probability, Π e^{ρe^{-θℓ}g(X_ℓ+ξ)} ·
/// e^{-ρe^{-θ(k+Δ)}Ψ(β)})` over the window `k < ℓ < k + Δ`.
pub fn window_factor(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    node: NodeIdx,
    xi: &[f64],
    beta: usize,
) -> Result<Vec<(NodeIdx, f64, f64)>> {
    rho(spec)?;
    if beta >= spec.impulses.len() {
        return Err(Error::invalid(format!("impulse index {beta} out of range")));
    }
    let k = tree.time(node);
    if k + spec.delta > tree.depth() {
        return Err(Error::invalid(format!(
            "impulse decided at time {k} cannot execute before the horizon {}",
            tree.depth()
        )));
    }
    let space = RegimeSpace::build(
        tree,
        spec,
        &SpaceOptions {
            initial_xi: Some(xi.to_vec()),
            max_impulses: 0,
            ..Default::default()
        },
    )?;
    let engine = Engine::new(tree, spec, &space, Acc::Multiplicative)?;
    let cf = engine.charge(node, beta).exp();
    Ok(engine
        .windows(0, node)
        .into_iter()
        .map(|(w, p, win)| (w, p, win.exp() * cf))
        .collect())
}

/// Multiplicative obstacle `Θ` of regime `regime` built on `prev`.
pub fn compute_theta_obstacle(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    prev: &RsValueField,
    regime: usize,
) -> Result<AdaptedProcess> {
    rho(spec)?;
    obstacle_process(tree, spec, prev, regime, Acc::Multiplicative)
}

/// `V⁰, V¹, …` up to `n_max`, stopping once the sup-norm increment is at most `tol`.
pub fn iterate_scheme_rs(tree: &ScenarioTree, spec: &ProblemSpec, n_max: usize, tol: f64) -> Result<Vec<RsValueField>> {
    iterate_scheme_rs_with(tree, spec, n_max, tol, &SolveOptions::default())
}

pub fn iterate_scheme_rs_with(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    n_max: usize,
    tol: f64,
    opts: &SolveOptions,
) -> Result<Vec<RsValueField>> {
    rho(spec)?;
    scheme::iterate(tree, spec, Acc::Multiplicative, n_max, tol, opts)
}

pub fn solve_limit_rs(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    n_cap: Option<usize>,
) -> Result<(RsValueField, SolveReport)> {
    solve_limit_rs_with(
        tree,
        spec,
        &SolveOptions {
            n_cap,
            ..Default::default()
        },
    )
}

pub fn solve_limit_rs_with(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    opts: &SolveOptions,
) -> Result<(RsValueField, SolveReport)> {
    let v = limit_field_rs(tree, spec, opts)?;
    let strategy = extract_strategy_rs(tree, spec, &v)?;
    let bounds = verify_bounds_rs(tree, spec, std::slice::from_ref(&v))?;
    let report = scheme::build_report(tree, spec, &v, &strategy, Vec::new(), &bounds);
    Ok((v, report))
}

pub fn limit_field_rs(tree: &ScenarioTree, spec: &ProblemSpec, opts: &SolveOptions) -> Result<RsValueField> {
    rho(spec)?;
    scheme::limit(tree, spec, Acc::Multiplicative, opts)
}

pub fn extract_strategy_rs(tree: &ScenarioTree, spec: &ProblemSpec, v: &RsValueField) -> Result<Strategy> {
    rho(spec)?;
    scheme::extract(tree, spec, Acc::Multiplicative, v)
}

/// Checks, with norms scaled by |ρ|:
///
/// ```text
/// Vⁿ_k ≤ exp{‖g‖c_θe^{-θk} + ‖Ψ‖ Σ_{j=1..n} e^{-θ(k+jΔ)}}
/// V_k  ≤ exp{‖g‖c_θe^{-θk} + ‖Ψ‖ e^{-θ(k+Δ)} / (1 − e^{-θΔ})}
/// V > 0,   V = e^{a} on the last level (continuation 1 beyond it)
/// ```
pub fn verify_bounds_rs(tree: &ScenarioTree, spec: &ProblemSpec, fields: &[RsValueField]) -> Result<BoundReport> {
    let scale = rho(spec)?.abs();
    let g = scale * spec.g_norm();
    let psi = scale * spec.psi_norm();
    let ct = spec.c_theta();
    let d = spec.delta;
    let decay = 1.0 - (-spec.theta * d as f64).exp();
    let mut report = BoundReport::default();
    for f in fields {
        let engine = Engine::new(tree, spec, f.space(), Acc::Multiplicative)?;
        let (name, n) = match f.kind {
            FieldKind::Iterate { n } => ("rs_iterate_value", Some(n)),
            FieldKind::Limit { .. } => ("rs_limit_value", None),
        };
        let mut bound = BoundCheck::new(name, n);
        let mut positive = BoundCheck::new("positivity", n);
        let mut terminal = BoundCheck::new("terminal", n);
        for (r, v, x) in f.entries() {
            let k = tree.time(v);
            let impulse_part = match n {
                Some(n) => (1..=n).map(|j| spec.discount(k + j * d)).sum::<f64>(),
                None => spec.discount(k + d) / decay,
            };
            bound.record(tree, v, r, x, (g * ct * spec.discount(k) + psi * impulse_part).exp());
            positive.record_condition(tree, v, r, x > 0.0, x, 0.0);
            if k == tree.depth() {
                let expect = engine.running(r, v).exp();
                let rel = ((x - expect) / expect).abs();
                terminal.record(tree, v, r, rel, BOUND_TOL);
            }
        }
        report.checks.extend([bound, positive, terminal]);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_rn;
    use crate::expr::BoundedFunction;
    use crate::scenario::generate_walk_tree;
    use std::f64::consts::LN_2;

    fn chain(t: usize) -> ScenarioTree {
        generate_walk_tree(1, t, &[(vec![0.0], 1.0)], 0).unwrap()
    }

    fn spec(g: &str, gb: f64, delta: usize, impulses: Vec<Vec<f64>>, psi: Vec<f64>) -> ProblemSpec {
        ProblemSpec::new(LN_2, delta, impulses, psi, BoundedFunction::new(g, gb).unwrap())
            .unwrap()
            .risk_sensitive(1.0)
            .unwrap()
    }

    #[test]
    fn v0_examples() {
        let tree = chain(3);
        let zero = spec("0", 0.0, 1, vec![vec![0.0]], vec![0.0]);
        assert!(compute_v0(&tree, &zero, &[0.0], &StartTime::Fixed(0))
            .unwrap()
            .iter()
            .all(|&x| x == 1.0));
        let one = spec("1", 1.0, 1, vec![vec![0.0]], vec![0.0]);
        let v = compute_v0(&tree, &one, &[0.0], &StartTime::Fixed(0)).unwrap();
        assert!((v[0] - 1.875f64.exp()).abs() < 1e-12);
        let v = compute_v0(&tree, &one, &[0.0], &StartTime::Fixed(3)).unwrap();
        assert!((v[0] - 0.125f64.exp()).abs() < 1e-15);
        let rn = one.clone().risk_neutral();
        assert!(compute_v0(&tree, &rn, &[0.0], &StartTime::Fixed(0)).is_err());
    }

    #[test]
    fn window_examples() {
        let tree = chain(3);
        let s = spec("1", 1.0, 1, vec![vec![0.0]], vec![0.3]);
        let w = window_factor(&tree, &s, 0, &[0.0], 0).unwrap();
        assert_eq!(w.len(), 1);
        assert!((w[0].2 - (-0.5f64 * 0.3).exp()).abs() < 1e-15);

        let s = spec("1", 1.0, 2, vec![vec![0.0]], vec![0.0]);
        let w = window_factor(&tree, &s, 0, &[0.0], 0).unwrap();
        assert_eq!(w[0].0, 2);
        assert!((w[0].2 - 0.5f64.exp()).abs() < 1e-15);

        let s = spec("1", 1.0, 1, vec![vec![0.0]], vec![-1.0]);
        let w = window_factor(&tree, &s, 0, &[0.0], 0).unwrap();
        assert!((w[0].2 - 0.5f64.exp()).abs() < 1e-15);
        assert!(window_factor(&tree, &s, 3, &[0.0], 0).is_err());
    }

    #[test]
    fn theta_obstacle_examples() {
        let tree = chain(3);
        let s = spec("0", 0.0, 1, vec![vec![1.0]], vec![0.1]);
        let space = RegimeSpace::build(&tree, &s, &SpaceOptions::default()).unwrap();
        let prev = RsValueField::from_fn(FieldKind::Iterate { n: 0 }, space.clone(), |_, _| 1.0);
        let o = compute_theta_obstacle(&tree, &s, &prev, 0).unwrap();
        assert!((o.values[0] - (-0.05f64).exp()).abs() < 1e-15);
        assert_eq!(o.values[3], 1.0);
        let free = spec("0", 0.0, 1, vec![vec![1.0]], vec![0.0]);
        let o = compute_theta_obstacle(&tree, &free, &prev, 0).unwrap();
        assert!(o.values.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn limit_examples() {
        let tree = chain(3);
        let zero = spec("0", 0.0, 1, vec![vec![1.0]], vec![0.0]);
        let (v, report) = solve_limit_rs(&tree, &zero, None).unwrap();
        assert!(v.entries().all(|(_, _, x)| x == 1.0));
        assert!(report.strategy.stages.is_empty());

        let never = spec("1", 1.0, 1, vec![vec![0.0]], vec![10.0]);
        let (v, report) = solve_limit_rs(&tree, &never, None).unwrap();
        assert!((v.root_value() - 1.875f64.exp()).abs() < 1e-12);
        assert!(report.strategy.stages.is_empty());
        assert!(report.bounds_passed(), "{:?}", report.bound_checks);
    }

    #[test]
    fn deterministic_chain_matches_risk_neutral() {
        let tree = chain(3);
        let s = spec("1", 1.0, 1, vec![vec![0.0]], vec![-1.0]);
        let (v, rs_report) = solve_limit_rs(&tree, &s, None).unwrap();
        let (y, rn_report) = control_rn::solve_limit(&tree, &s.clone().risk_neutral(), None).unwrap();
        assert!((v.root_value().ln() - y.root_value()).abs() < 1e-9);
        assert!((rs_report.certainty_equivalent.unwrap() - 2.75).abs() < 1e-9);
        assert_eq!(rs_report.strategy, rn_report.strategy);
        assert_eq!(rs_report.strategy.stages.len(), 3);
    }

    #[test]
    fn v0_bound_example() {
        let tree = chain(3);
        let s = spec("1", 1.0, 1, vec![vec![0.0]], vec![0.0]);
        let vs = iterate_scheme_rs(&tree, &s, 0, 0.0).unwrap();
        let r = verify_bounds_rs(&tree, &s, &vs).unwrap();
        assert!(r.passed(), "{r:?}");
        let root_bound = 2.0f64.exp();
        assert!(vs[0].root_value() <= root_bound);
    }

    #[test]
    fn overflow_guard() {
        let tree = chain(3);
        let s = ProblemSpec::new(0.01, 1, vec![vec![0.0]], vec![0.0], BoundedFunction::constant(10.0))
            .unwrap()
            .risk_sensitive(1.0)
            .unwrap();
        assert!(matches!(
            limit_field_rs(&tree, &s, &SolveOptions::default()),
            Err(Error::Invalid(_))
        ));
    }
}
