//! Mode-independent drivers: iterates, the budgeted limit, strategy
//! extraction, and the combined solve used by the front ends.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::control_rn;
use crate::control_rs;
use crate::engine::{Acc, Engine};
use crate::error::{Error, Result};
use crate::problem::{Mode, ProblemSpec};
use crate::regime::{FieldKind, RegimeSpace, SpaceOptions, StartTime, ValueField, DEFAULT_STATE_CAP};
use crate::report::{BoundReport, IterationRecord, SolveReport};
use crate::scenario::{NodeIdx, ScenarioTree};
use crate::snell::{hitting_region_from, AdaptedProcess};
use crate::strategy::{Stage, Strategy};

/// Relative margin by which an impulse must beat continuing to be decided.
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Total impulse budget; `⌈T/Δ⌉ + 1` when absent.
    pub n_cap: Option<usize>,
    /// Start of the running payoff in the initial regime.
    pub start: StartTime,
    /// Shift already in force at the root.
    pub initial_xi: Option<Vec<f64>>,
    pub state_cap: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            n_cap: None,
            start: StartTime::default(),
            initial_xi: None,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

impl SolveOptions {
    pub fn with_n_cap(n_cap: usize) -> Self {
        Self {
            n_cap: Some(n_cap),
            ..Self::default()
        }
    }

    fn space(&self, tree: &ScenarioTree, spec: &ProblemSpec, max_impulses: usize) -> Result<Arc<RegimeSpace>> {
        RegimeSpace::build(
            tree,
            spec,
            &SpaceOptions {
                start: self.start.clone(),
                initial_xi: self.initial_xi.clone(),
                max_impulses,
                state_cap: self.state_cap,
            },
        )
    }

    pub fn resolved_n_cap(&self, tree: &ScenarioTree, spec: &ProblemSpec) -> usize {
        self.n_cap.unwrap_or_else(|| spec.default_n_cap(tree.depth()))
    }
}

pub(crate) fn acc_of(spec: &ProblemSpec) -> Acc {
    match spec.mode {
        Mode::RiskNeutral => Acc::Additive,
        Mode::RiskSensitive { .. } => Acc::Multiplicative,
    }
}

fn sup_diff(a: &ValueField, b: &ValueField) -> f64 {
    a.entries()
        .zip(b.entries())
        .fold(0.0, |m, ((_, _, x), (_, _, y))| m.max((x - y).abs()))
}

pub(crate) fn iterate(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    acc: Acc,
    n_max: usize,
    tol: f64,
    opts: &SolveOptions,
) -> Result<Vec<ValueField>> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::invalid(format!("tolerance must be ≥ 0, got {tol}")));
    }
    let space = opts.space(tree, spec, usize::MAX)?;
    let engine = Engine::new(tree, spec, &space, acc)?;
    let y0 = engine.pass(|_| 0);
    let mut fields = vec![ValueField::new(FieldKind::Iterate { n: 0 }, space.clone(), y0)];
    for n in 1..=n_max {
        let prev = fields.last().expect("non-empty");
        let next = ValueField::new(
            FieldKind::Iterate { n },
            space.clone(),
            engine.snell_iterate(prev.raw(), n)?,
        );
        let inc = sup_diff(&next, prev);
        fields.push(next);
        if inc <= tol {
            break;
        }
    }
    Ok(fields)
}

pub(crate) fn limit(tree: &ScenarioTree, spec: &ProblemSpec, acc: Acc, opts: &SolveOptions) -> Result<ValueField> {
    let n_cap = opts.resolved_n_cap(tree, spec);
    let space = opts.space(tree, spec, n_cap)?;
    let engine = Engine::new(tree, spec, &space, acc)?;
    let values = engine.pass(|r| n_cap.saturating_sub(space.regime(r).p));
    Ok(ValueField::new(FieldKind::Limit { n_cap }, space, values))
}

pub(crate) fn extract(tree: &ScenarioTree, spec: &ProblemSpec, acc: Acc, y: &ValueField) -> Result<Strategy> {
    let FieldKind::Limit { n_cap } = y.kind else {
        return Err(Error::invalid("strategies are extracted from limit fields"));
    };
    let space = y.space();
    let engine = Engine::new(tree, spec, space, acc)?;
    let (obst, choice) = engine.obstacle_field(y.raw(), |r| y.budget(r));
    let t = tree.depth();

    // Ties are resolved by waiting: an impulse is only decided where it
    // strictly beats continuing, which is the latest optimal stopping rule.
    let continuation = |r: usize, v: NodeIdx| {
        let cont: f64 = tree.node(v).children.iter().map(|&(c, p)| p * y.raw()[r][c]).sum();
        cont + TIE_TOL * (1.0 + cont.abs())
    };
    let tilde = |r: usize| {
        let (cum, cum_prev) = engine.cumulative(r);
        let env = AdaptedProcess::from_fn(tree, |v| {
            if space.in_domain(r, v) {
                engine.tilde_value(cum_prev[v], y.raw()[r][v])
            } else {
                f64::NEG_INFINITY
            }
        });
        let obs = AdaptedProcess::from_fn(tree, |v| {
            if space.in_domain(r, v) && tree.time(v) < t && obst[r][v] > continuation(r, v) {
                engine.tilde_obstacle(cum[v], obst[r][v])
            } else {
                f64::NEG_INFINITY
            }
        });
        (env, obs)
    };
    let mut cache: BTreeMap<usize, (AdaptedProcess, AdaptedProcess)> = BTreeMap::new();

    let mut stages = Vec::new();
    let mut frontier: BTreeMap<usize, Vec<NodeIdx>> = BTreeMap::from([(0, vec![tree.root()])]);
    while !frontier.is_empty() && stages.len() < n_cap {
        let mut stage = Stage::default();
        let mut next: BTreeMap<usize, Vec<NodeIdx>> = BTreeMap::new();
        for (r, roots) in frontier {
            let (env, obs) = cache.entry(r).or_insert_with(|| tilde(r));
            let region = hitting_region_from(tree, env, obs, &roots, 0);
            for h in region.iter() {
                let beta = choice[r][h].expect("a finite obstacle has an impulse");
                stage.stops.insert(h, beta);
                let r2 = space.next(r, beta).expect("firing is allowed");
                next.entry(r2)
                    .or_default()
                    .extend(tree.descendants_at(h, spec.delta).into_iter().map(|(w, _)| w));
            }
        }
        if stage.stops.is_empty() {
            break;
        }
        stages.push(stage);
        frontier = next;
    }
    Ok(Strategy {
        stages,
        n_cap: Some(n_cap),
    })
}

/// Everything one solve produces.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub limit: ValueField,
    pub iterates: Vec<ValueField>,
    pub strategy: Strategy,
    pub bounds: BoundReport,
    pub report: SolveReport,
}

/// Solves in the problem's own mode: iterates `0..=iterations` (stopping at
/// stagnation), the budgeted limit, strategy extraction and bound checks.
pub fn solve(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    opts: &SolveOptions,
    iterations: Option<usize>,
) -> Result<SolveOutcome> {
    spec.check_tree(tree)?;
    let acc = acc_of(spec);
    let n_cap = opts.resolved_n_cap(tree, spec);
    let limit_field = limit(tree, spec, acc, opts)?;
    let strategy = extract(tree, spec, acc, &limit_field)?;
    let iterates = iterate(tree, spec, acc, iterations.unwrap_or(n_cap), 0.0, opts)?;

    let mut fields = iterates.clone();
    fields.push(limit_field.clone());
    let bounds = match spec.mode {
        Mode::RiskNeutral => control_rn::verify_bounds(tree, spec, &fields)?,
        Mode::RiskSensitive { .. } => control_rs::verify_bounds_rs(tree, spec, &fields)?,
    };

    let mut records = Vec::with_capacity(iterates.len());
    for (i, f) in iterates.iter().enumerate() {
        records.push(IterationRecord {
            n: i,
            root_value: f.root_value(),
            sup_increment: (i > 0).then(|| sup_diff(f, &iterates[i - 1])),
        });
    }
    let report = build_report(tree, spec, &limit_field, &strategy, records, &bounds);
    Ok(SolveOutcome {
        limit: limit_field,
        iterates,
        strategy,
        bounds,
        report,
    })
}

pub(crate) fn truncation_bound(tree: &ScenarioTree, spec: &ProblemSpec) -> f64 {
    spec.scale().abs() * spec.limit_constant() * spec.discount(tree.depth())
}

pub(crate) fn build_report(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    y: &ValueField,
    strategy: &Strategy,
    iterations: Vec<IterationRecord>,
    bounds: &BoundReport,
) -> SolveReport {
    let n_cap = match y.kind {
        FieldKind::Limit { n_cap } => n_cap,
        FieldKind::Iterate { n } => n,
    };
    let rho = spec.mode.rho();
    SolveReport {
        mode: spec.mode.name().to_string(),
        rho,
        root_value: y.root_value(),
        certainty_equivalent: rho.map(|r| y.root_value().ln() / r),
        truncation_bound: truncation_bound(tree, spec),
        n_cap,
        state_count: y.len(),
        iterations,
        bound_checks: bounds.checks.clone(),
        strategy: strategy.to_document(tree),
    }
}
