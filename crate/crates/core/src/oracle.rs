//! Brute-force reference: enumerate every admissible strategy on a small
//! tree, price each one directly and compare with the solver.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::evaluate_exact;
use crate::problem::{Mode, ProblemSpec};
use crate::scenario::{NodeIdx, ScenarioTree};
use crate::scheme::{acc_of, extract, limit, SolveOptions};
use crate::strategy::{Stage, Strategy};

pub const DEFAULT_MAX_STRATEGIES: u128 = 10_000_000;
pub const DEFAULT_ORACLE_NODE_CAP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationBudget {
    /// Impulses allowed along any path.
    pub max_impulses: usize,
    pub max_strategy_count: u128,
    pub node_cap: usize,
}

impl EnumerationBudget {
    pub fn new(max_impulses: usize) -> Self {
        Self {
            max_impulses,
            max_strategy_count: DEFAULT_MAX_STRATEGIES,
            node_cap: DEFAULT_ORACLE_NODE_CAP,
        }
    }
}

fn check_size(tree: &ScenarioTree, budget: &EnumerationBudget) -> Result<()> {
    if tree.len() > budget.node_cap {
        return Err(Error::Guard {
            what: "oracle tree size",
            count: tree.len() as u128,
            cap: budget.node_cap as u128,
        });
    }
    Ok(())
}

/// Number of admissible strategies with at most `max_impulses` impulses per
/// path, counting impulses that would execute after the horizon.
pub fn count_admissible(tree: &ScenarioTree, spec: &ProblemSpec, max_impulses: usize) -> u128 {
    let mut memo = HashMap::new();
    count_at(
        tree,
        spec,
        max_impulses,
        tree.root(),
        0,
        spec.first_impulse_min_time,
        &mut memo,
    )
}

fn count_at(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    cap: usize,
    v: NodeIdx,
    fired: usize,
    blocked: usize,
    memo: &mut HashMap<(NodeIdx, usize, usize), u128>,
) -> u128 {
    let k = tree.time(v);
    let blocked = blocked.max(k);
    if let Some(&c) = memo.get(&(v, fired, blocked)) {
        return c;
    }
    let children: Vec<NodeIdx> = tree.node(v).children.iter().map(|&(c, _)| c).collect();
    let mut product = |m: usize, b: usize| {
        children.iter().fold(1u128, |acc, &c| {
            acc.saturating_mul(count_at(tree, spec, cap, c, m, b, memo))
        })
    };
    let mut total = product(fired, blocked);
    if fired < cap && k >= blocked {
        let each = product(fired + 1, k + spec.delta);
        total = total.saturating_add(each.saturating_mul(spec.impulses.len() as u128));
    }
    memo.insert((v, fired, blocked), total);
    total
}

/// Visits every admissible strategy. Stage `p` of each holds the `(p+1)`-th
/// impulse on every path.
pub fn enumerate_admissible(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    budget: &EnumerationBudget,
    mut visit: impl FnMut(&Strategy),
) -> Result<u128> {
    check_size(tree, budget)?;
    let count = count_admissible(tree, spec, budget.max_impulses);
    if count > budget.max_strategy_count {
        return Err(Error::Guard {
            what: "admissible strategies",
            count,
            cap: budget.max_strategy_count,
        });
    }
    let mut pending = vec![(tree.root(), 0usize, spec.first_impulse_min_time)];
    let mut actions: Vec<Action> = Vec::new();
    let mut seen = 0u128;
    walk(
        tree,
        spec,
        budget.max_impulses,
        &mut pending,
        &mut actions,
        &mut |acts| {
            seen += 1;
            visit(&to_strategy(acts));
        },
    );
    debug_assert_eq!(seen, count);
    Ok(seen)
}

/// `(node, stage, impulse index)`.
type Action = (NodeIdx, usize, usize);

fn to_strategy(actions: &[Action]) -> Strategy {
    let depth = actions.iter().map(|a| a.1 + 1).max().unwrap_or(0);
    let mut stages = vec![Stage::default(); depth];
    for &(v, stage, beta) in actions {
        stages[stage].stops.insert(v, beta);
    }
    Strategy { stages, n_cap: None }
}

fn walk(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    cap: usize,
    pending: &mut Vec<(NodeIdx, usize, usize)>,
    actions: &mut Vec<Action>,
    emit: &mut dyn FnMut(&[Action]),
) {
    let Some((v, fired, blocked)) = pending.pop() else {
        emit(actions);
        return;
    };
    let k = tree.time(v);
    let children = &tree.node(v).children;

    for &(c, _) in children {
        pending.push((c, fired, blocked));
    }
    walk(tree, spec, cap, pending, actions, emit);
    pending.truncate(pending.len() - children.len());

    if fired < cap && k >= blocked {
        for beta in 0..spec.impulses.len() {
            actions.push((v, fired, beta));
            for &(c, _) in children {
                pending.push((c, fired + 1, k + spec.delta));
            }
            walk(tree, spec, cap, pending, actions, emit);
            pending.truncate(pending.len() - children.len());
            actions.pop();
        }
    }
    pending.push((v, fired, blocked));
}

/// Prices a strategy path by path, independently of the policy module:
/// the shift is the running sum of executed impulses in execution order.
pub fn direct_value(tree: &ScenarioTree, spec: &ProblemSpec, strategy: &Strategy) -> f64 {
    let t = tree.depth();
    let mut total = 0.0;
    for path in tree.paths() {
        let mut fired = 0;
        let mut executions: Vec<(usize, usize)> = Vec::new();
        let mut payoff = 0.0;
        for &v in &path.nodes {
            let k = tree.time(v);
            let mut x = tree.node(v).state.clone();
            for &(at, b) in &executions {
                if at <= k {
                    for (xi, u) in x.iter_mut().zip(&spec.impulses[b]) {
                        *xi += u;
                    }
                }
            }
            payoff += (-spec.theta * k as f64).exp() * spec.g.eval(&x);
            if let Some(b) = strategy.stages.get(fired).and_then(|s| s.stops.get(&v)) {
                fired += 1;
                if k + spec.delta <= t {
                    executions.push((k + spec.delta, *b));
                    payoff -= (-spec.theta * (k + spec.delta) as f64).exp() * spec.psi[*b];
                }
            }
        }
        total += path.probability
            * match spec.mode {
                Mode::RiskNeutral => payoff,
                Mode::RiskSensitive { rho } => (rho * payoff).exp(),
            };
    }
    total
}

#[derive(Clone, Debug)]
pub struct BruteForce {
    pub value: f64,
    pub strategy: Strategy,
    pub strategy_count: u128,
}

/// The best value over all admissible strategies; ties keep the first
/// strategy found (never intervening comes first).
pub fn brute_force_optimum(tree: &ScenarioTree, spec: &ProblemSpec, budget: &EnumerationBudget) -> Result<BruteForce> {
    spec.check_tree(tree)?;
    let mut best: Option<(f64, Strategy)> = None;
    let count = enumerate_admissible(tree, spec, budget, |s| {
        let value = direct_value(tree, spec, s);
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, s.clone()));
        }
    })?;
    let (value, strategy) = best.expect("never intervening is always admissible");
    Ok(BruteForce {
        value,
        strategy,
        strategy_count: count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossCheck {
    pub strategy_count: u128,
    pub best_value: f64,
    pub solver_value: f64,
    /// `|solver_value − best_value|`.
    pub gap: f64,
    /// Exact value of the extracted strategy.
    pub strategy_value: f64,
    /// `best_value − strategy_value`.
    pub strategy_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Solves the budgeted limit with `n_cap = budget.max_impulses` and checks
/// it, and its extracted strategy, against exhaustive search. The tolerance
/// is 1e-9, absolute when risk-neutral and relative when risk-sensitive.
pub fn cross_check(tree: &ScenarioTree, spec: &ProblemSpec, budget: &EnumerationBudget) -> Result<CrossCheck> {
    let bf = brute_force_optimum(tree, spec, budget)?;
    let acc = acc_of(spec);
    let y = limit(tree, spec, acc, &SolveOptions::with_n_cap(budget.max_impulses))?;
    let strategy = extract(tree, spec, acc, &y)?;
    let strategy_value = evaluate_exact(tree, spec, &strategy)?.value;
    let solver_value = y.root_value();
    let tolerance = match spec.mode {
        Mode::RiskNeutral => 1e-9,
        Mode::RiskSensitive { .. } => 1e-9 * bf.value.abs(),
    };
    let gap = (solver_value - bf.value).abs();
    let strategy_gap = bf.value - strategy_value;
    Ok(CrossCheck {
        strategy_count: bf.strategy_count,
        best_value: bf.value,
        solver_value,
        gap,
        strategy_value,
        strategy_gap,
        tolerance,
        pass: gap <= tolerance && strategy_gap.abs() <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BoundedFunction;
    use crate::scenario::generate_walk_tree;
    use std::f64::consts::LN_2;

    fn chain(t: usize) -> ScenarioTree {
        generate_walk_tree(1, t, &[(vec![0.0], 1.0)], 0).unwrap()
    }

    fn spec(delta: usize, m: usize) -> ProblemSpec {
        ProblemSpec::new(
            LN_2,
            delta,
            vec![vec![1.0]; m],
            vec![-1.0; m],
            BoundedFunction::new("1", 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn counts_on_chains() {
        // T = 1, Δ = 1: none, {0}, {1}, {0,1}.
        assert_eq!(count_admissible(&chain(1), &spec(1, 1), 5), 4);
        assert_eq!(count_admissible(&chain(1), &spec(1, 1), 1), 3);
        // Two impulse kinds double each firing choice.
        assert_eq!(count_admissible(&chain(1), &spec(1, 2), 1), 5);
        // Δ = 2 on T = 2: none, {0}, {1}, {2}, {0,2}.
        assert_eq!(count_admissible(&chain(2), &spec(2, 1), 5), 5);
        assert_eq!(count_admissible(&chain(3), &spec(1, 1), 0), 1);
    }

    #[test]
    fn enumeration_matches_count_and_is_admissible() {
        let tree = generate_walk_tree(2, 2, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap();
        let s = spec(1, 2);
        let mut all = Vec::new();
        let n = enumerate_admissible(&tree, &s, &EnumerationBudget::new(2), |st| all.push(st.clone())).unwrap();
        assert_eq!(n, count_admissible(&tree, &s, 2));
        assert_eq!(n as usize, all.len());
        for st in &all {
            st.check_admissible(&tree, &s).unwrap();
        }
        all.sort_by_key(|s| format!("{s:?}"));
        all.dedup();
        assert_eq!(n as usize, all.len());
    }

    #[test]
    fn guards() {
        let tree = generate_walk_tree(2, 6, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap();
        let b = EnumerationBudget::new(3);
        assert!(matches!(
            enumerate_admissible(&tree, &spec(1, 1), &b, |_| {}),
            Err(Error::Guard { .. })
        ));
        let tree = generate_walk_tree(2, 4, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap();
        let b = EnumerationBudget {
            max_strategy_count: 10,
            ..EnumerationBudget::new(3)
        };
        assert!(matches!(
            enumerate_admissible(&tree, &spec(1, 1), &b, |_| {}),
            Err(Error::Guard { .. })
        ));
    }

    #[test]
    fn subsidy_chain_optimum() {
        let tree = chain(3);
        let s = spec(1, 1);
        let bf = brute_force_optimum(&tree, &s, &EnumerationBudget::new(3)).unwrap();
        assert!((bf.value - 2.75).abs() < 1e-15);
        let report = cross_check(&tree, &s, &EnumerationBudget::new(3)).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn direct_value_agrees_with_policy() {
        let tree = generate_walk_tree(2, 3, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap();
        let s = ProblemSpec::new(
            0.3,
            1,
            vec![vec![1.0], vec![-1.0]],
            vec![0.1, 0.2],
            BoundedFunction::new("clamp(x0, -2, 2)", 2.0).unwrap(),
        )
        .unwrap();
        enumerate_admissible(&tree, &s, &EnumerationBudget::new(2), |st| {
            let a = direct_value(&tree, &s, st);
            let b = evaluate_exact(&tree, &s, st).unwrap().value;
            assert!((a - b).abs() < 1e-12);
        })
        .unwrap();
    }
}
