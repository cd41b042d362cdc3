//! Bound-check tallies and the solve report.

use serde::Serialize;

use crate::scenario::{NodeIdx, ScenarioTree};
use crate::strategy::StrategyDocument;

/// Relative slack granted to every bound comparison (float noise only).
pub const BOUND_TOL: f64 = 1e-12;
/// Number of violations kept verbatim per check.
const KEEP: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundViolation {
    pub node: String,
    pub time: usize,
    pub regime: usize,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub check: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub checked: usize,
    pub violations: usize,
    /// Smallest `bound − value` seen (may be negative on failure).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_slack: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<BoundViolation>,
}

impl BoundCheck {
    pub fn new(check: &str, n: Option<usize>) -> Self {
        Self {
            check: check.to_string(),
            n,
            checked: 0,
            violations: 0,
            min_slack: None,
            examples: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Records `value ≤ bound` (up to [`BOUND_TOL`]).
    pub fn record(&mut self, tree: &ScenarioTree, v: NodeIdx, regime: usize, value: f64, bound: f64) {
        let slack = bound - value;
        self.min_slack = Some(self.min_slack.map_or(slack, |s: f64| s.min(slack)));
        let ok = value <= bound + BOUND_TOL * (1.0 + bound.abs());
        self.record_condition(tree, v, regime, ok, value, bound);
    }

    /// Records a pass/fail condition; `value` and `bound` are kept for context.
    pub fn record_condition(
        &mut self,
        tree: &ScenarioTree,
        v: NodeIdx,
        regime: usize,
        ok: bool,
        value: f64,
        bound: f64,
    ) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            if self.examples.len() < KEEP {
                self.examples.push(BoundViolation {
                    node: tree.node(v).id.clone(),
                    time: tree.time(v),
                    regime,
                    value,
                    bound,
                });
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(BoundCheck::passed)
    }

    pub fn violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn checked(&self) -> usize {
        self.checks.iter().map(|c| c.checked).sum()
    }

    pub fn extend(&mut self, other: BoundReport) {
        self.checks.extend(other.checks);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bound reports always serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub n: usize,
    pub root_value: f64,
    /// `max |Yⁿ − Yⁿ⁻¹|` over all keys; absent for n = 0.
    pub sup_increment: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub root_value: f64,
    /// `ln(V) / ρ` in risk-sensitive mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certainty_equivalent: Option<f64>,
    /// `C·e^{-θT}`: distance to the untruncated value (in exponent units
    /// for risk-sensitive problems).
    pub truncation_bound: f64,
    pub n_cap: usize,
    pub state_count: usize,
    pub iterations: Vec<IterationRecord>,
    pub bound_checks: Vec<BoundCheck>,
    pub strategy: StrategyDocument,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solve reports always serialize")
    }

    pub fn bounds_passed(&self) -> bool {
        self.bound_checks.iter().all(BoundCheck::passed)
    }
}
