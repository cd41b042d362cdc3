//! Applying a strategy to paths and pricing it: exactly over all leaves,
//! by Monte Carlo, and through the certainty equivalent.
//!
//! The path payoff is
//! `C = Σ_{k=0..T} e^{-θk} g(X^δ_k) − Σ_p e^{-θ(τ_p+Δ)} Ψ(ξ_p)`, where the
//! second sum runs over impulses executing by `T` (all impulses under
//! strict charging). Impulses executing after `T` never shift the state.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{Mode, ProblemSpec};
use crate::regime::canonical_xi;
use crate::rng::SplitMix64;
use crate::scenario::{NodeIdx, PathSample, ScenarioTree};
use crate::strategy::Strategy;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Charge Ψ for impulses that execute after the horizon.
    pub strict_horizon_charging: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImpulseEvent {
    pub time: usize,
    pub node: NodeIdx,
    pub impulse_index: usize,
    /// `τ + Δ ≤ T`.
    pub executes: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlledPath {
    pub path: PathSample,
    pub events: Vec<ImpulseEvent>,
    /// `X^δ_k` for `k = 0..=T`.
    pub states: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PayoffBreakdown {
    /// `Σ e^{-θk} g(X^δ_k)`.
    pub running: f64,
    /// `Σ e^{-θ(τ_p+Δ)} Ψ(ξ_p)`.
    pub impulse: f64,
    /// `running − impulse`.
    pub net: f64,
    /// `net` when risk-neutral, `exp(ρ·net)` when risk-sensitive.
    pub value: f64,
}

/// Walks one path, firing stage `p` at its stop on the path and shifting the
/// state from `τ_p + Δ` on.
pub fn apply_strategy_path(
    tree: &ScenarioTree,
    path: &PathSample,
    strategy: &Strategy,
    spec: &ProblemSpec,
) -> Result<ControlledPath> {
    let t = tree.depth();
    let m = spec.impulses.len();
    let zero = vec![0.0; tree.dim()];
    let mut counts = vec![0u32; m];
    let mut pending: Vec<(usize, usize)> = Vec::new();
    let mut events: Vec<ImpulseEvent> = Vec::new();
    let mut states = Vec::with_capacity(path.nodes.len());
    let mut xi = zero.clone();
    for &v in &path.nodes {
        let k = tree.time(v);
        let mut changed = false;
        pending.retain(|&(at, b)| {
            if at <= k {
                counts[b] += 1;
                changed = true;
                false
            } else {
                true
            }
        });
        if changed {
            xi = canonical_xi(&zero, &counts, &spec.impulses);
        }
        states.push(tree.node(v).state.iter().zip(&xi).map(|(x, d)| x + d).collect());

        if let Some(b) = strategy.decision(events.len(), v) {
            if b >= m {
                return Err(Error::Inadmissible(format!("impulse index {b} at {}", tree.node(v).id)));
            }
            match events.last() {
                Some(last) if k < last.time + spec.delta => {
                    return Err(Error::Inadmissible(format!(
                        "impulses at times {} and {k} are closer than Δ = {}",
                        last.time, spec.delta
                    )));
                }
                None if k < spec.first_impulse_min_time => {
                    return Err(Error::Inadmissible(format!(
                        "first impulse at time {k} before time {}",
                        spec.first_impulse_min_time
                    )));
                }
                _ => {}
            }
            let executes = k + spec.delta <= t;
            if executes {
                pending.push((k + spec.delta, b));
            }
            events.push(ImpulseEvent {
                time: k,
                node: v,
                impulse_index: b,
                executes,
            });
        }
    }
    Ok(ControlledPath {
        path: path.clone(),
        events,
        states,
    })
}

pub fn path_payoff(spec: &ProblemSpec, cp: &ControlledPath, opts: &EvalOptions) -> PayoffBreakdown {
    let mut running = 0.0;
    for (k, x) in cp.states.iter().enumerate() {
        running += spec.discount(k) * spec.g.eval(x);
    }
    let mut impulse = 0.0;
    for e in &cp.events {
        if e.executes || opts.strict_horizon_charging {
            impulse += spec.discount(e.time + spec.delta) * spec.psi[e.impulse_index];
        }
    }
    let net = running - impulse;
    let value = match spec.mode {
        Mode::RiskNeutral => net,
        Mode::RiskSensitive { rho } => (rho * net).exp(),
    };
    PayoffBreakdown {
        running,
        impulse,
        net,
        value,
    }
}

/// `J(δ)`: probability-weighted payoff over every leaf, in leaf order.
/// The breakdown fields hold expectations.
pub fn evaluate_exact(tree: &ScenarioTree, spec: &ProblemSpec, strategy: &Strategy) -> Result<PayoffBreakdown> {
    evaluate_exact_with(tree, spec, strategy, &EvalOptions::default())
}

pub fn evaluate_exact_with(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    strategy: &Strategy,
    opts: &EvalOptions,
) -> Result<PayoffBreakdown> {
    spec.check_tree(tree)?;
    strategy.check_admissible(tree, spec)?;
    let mut acc = PayoffBreakdown::default();
    for path in tree.paths() {
        let b = path_payoff(spec, &apply_strategy_path(tree, &path, strategy, spec)?, opts);
        let p = path.probability;
        acc.running += p * b.running;
        acc.impulse += p * b.impulse;
        acc.net += p * b.net;
        acc.value += p * b.value;
    }
    Ok(acc)
}

/// Draws one root-to-leaf path: at each node a uniform `u` selects the
/// first child whose cumulative probability exceeds it.
pub fn sample_path(tree: &ScenarioTree, rng: &mut SplitMix64) -> PathSample {
    let mut v = tree.root();
    let mut nodes = vec![v];
    let mut prob = 1.0;
    while !tree.node(v).is_leaf() {
        let u = rng.next_f64();
        let children = &tree.node(v).children;
        let mut cum = 0.0;
        let mut pick = children[children.len() - 1];
        for &(c, p) in children {
            cum += p;
            if u < cum {
                pick = (c, p);
                break;
            }
        }
        v = pick.0;
        prob *= pick.1;
        nodes.push(v);
    }
    PathSample {
        nodes,
        probability: prob,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// `sqrt(s² / n)`; 0 for a single sample.
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
    pub mean_running: f64,
    pub mean_impulse: f64,
}

pub fn evaluate_monte_carlo(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    strategy: &Strategy,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    evaluate_monte_carlo_with(tree, spec, strategy, samples, seed, &EvalOptions::default())
}

pub fn evaluate_monte_carlo_with(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    strategy: &Strategy,
    samples: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<McEstimate> {
    if samples < 1 {
        return Err(Error::invalid("samples must be ≥ 1"));
    }
    spec.check_tree(tree)?;
    strategy.check_admissible(tree, spec)?;
    let mut rng = SplitMix64::new(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    let (mut run, mut imp) = (0.0, 0.0);
    for i in 1..=samples {
        let path = sample_path(tree, &mut rng);
        let b = path_payoff(spec, &apply_strategy_path(tree, &path, strategy, spec)?, opts);
        let n = i as f64;
        let d = b.value - mean;
        mean += d / n;
        m2 += d * (b.value - mean);
        run += (b.running - run) / n;
        imp += (b.impulse - imp) / n;
    }
    let stderr = if samples > 1 {
        (m2 / (samples as f64 - 1.0) / samples as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: mean,
        stderr,
        samples,
        seed,
        mean_running: run,
        mean_impulse: imp,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CertaintyRow {
    pub rho: f64,
    /// `ln(E[exp(ρC)]) / ρ`.
    pub gamma: f64,
    pub mean: f64,
    pub variance: f64,
    /// `Γ − E[C] − (ρ/2) Var[C]`.
    pub residual: f64,
}

/// Exact certainty equivalents of a fixed strategy at each ρ.
pub fn certainty_equivalent(
    tree: &ScenarioTree,
    spec: &ProblemSpec,
    strategy: &Strategy,
    rhos: &[f64],
) -> Result<Vec<CertaintyRow>> {
    if let Some(r) = rhos.iter().find(|r| !(r.is_finite() && **r != 0.0)) {
        return Err(Error::invalid(format!(
            "ρ must be finite and non-zero, got {r} (use risk-neutral evaluation)"
        )));
    }
    spec.check_tree(tree)?;
    strategy.check_admissible(tree, spec)?;
    let rn = spec.clone().risk_neutral();
    let mut outcomes = Vec::new();
    for path in tree.paths() {
        let b = path_payoff(
            &rn,
            &apply_strategy_path(tree, &path, strategy, &rn)?,
            &EvalOptions::default(),
        );
        outcomes.push((path.probability, b.net));
    }
    let mean: f64 = outcomes.iter().map(|(p, c)| p * c).sum();
    let variance: f64 = outcomes.iter().map(|(p, c)| p * (c - mean) * (c - mean)).sum();
    Ok(rhos
        .iter()
        .map(|&rho| {
            let j: f64 = outcomes.iter().map(|(p, c)| p * (rho * c).exp()).sum();
            let gamma = j.ln() / rho;
            CertaintyRow {
                rho,
                gamma,
                mean,
                variance,
                residual: gamma - mean - 0.5 * rho * variance,
            }
        })
        .collect())
}
