//! Augmented state space: a node together with the impulses already executed.
//!
//! A regime is a multiset of impulses (stored as per-impulse counts). Its
//! cumulative shift is summed in impulse-index order, so every module that
//! needs `ξ_cum` gets the same bits. Regimes with equal `(p, ξ)` are merged.
//!
//! A regime with `p ≥ 1` impulses cannot be entered before
//! `start(p) = f + pΔ`, where `f` is the earliest first-impulse time, so its
//! domain is the set of nodes at or after that time.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::scenario::{NodeIdx, ScenarioTree};
use crate::snell::StoppingRegion;

/// Default cap on `(node, regime)` pairs.
pub const DEFAULT_STATE_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeKey {
    pub node: NodeIdx,
    pub xi_cum: Vec<f64>,
    pub impulse_count: usize,
}

/// When the running payoff of the initial regime switches on.
#[derive(Clone, Debug, PartialEq)]
pub enum StartTime {
    Fixed(usize),
    /// Started at and below the members of the region; never started on
    /// paths that miss it.
    Region(StoppingRegion),
}

impl Default for StartTime {
    fn default() -> Self {
        StartTime::Fixed(0)
    }
}

impl StartTime {
    pub fn started_flags(&self, tree: &ScenarioTree) -> Vec<bool> {
        match self {
            StartTime::Fixed(k) => tree.nodes().iter().map(|n| n.time >= *k).collect(),
            StartTime::Region(region) => {
                let mut flags = vec![false; tree.len()];
                // BFS order: parents precede children.
                for v in 0..tree.len() {
                    flags[v] = region.contains(v) || tree.node(v).parent.is_some_and(|p| flags[p]);
                }
                flags
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regime {
    pub counts: Vec<u32>,
    pub xi: Vec<f64>,
    pub p: usize,
}

/// Cumulative shift `xi0 + Σ_i counts_i·u_i`, summed in index order.
pub fn canonical_xi(xi0: &[f64], counts: &[u32], impulses: &[Vec<f64>]) -> Vec<f64> {
    let mut xi = xi0.to_vec();
    for (c, u) in counts.iter().zip(impulses) {
        if *c == 0 {
            continue;
        }
        for (x, d) in xi.iter_mut().zip(u) {
            *x += *c as f64 * d;
        }
    }
    for x in &mut xi {
        if *x == 0.0 {
            *x = 0.0;
        }
    }
    xi
}

fn bits(xi: &[f64]) -> Vec<u64> {
    xi.iter().map(|x| if *x == 0.0 { 0 } else { x.to_bits() }).collect()
}

#[derive(Clone, Debug)]
pub struct SpaceOptions {
    pub start: StartTime,
    pub initial_xi: Option<Vec<f64>>,
    /// Upper bound on the impulse count of any regime.
    pub max_impulses: usize,
    pub state_cap: usize,
}

impl Default for SpaceOptions {
    fn default() -> Self {
        Self {
            start: StartTime::default(),
            initial_xi: None,
            max_impulses: usize::MAX,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

#[derive(Debug)]
pub struct RegimeSpace {
    regimes: Vec<Regime>,
    next: Vec<Vec<Option<usize>>>,
    lookup: HashMap<(usize, Vec<u64>), usize>,
    start: Vec<usize>,
    started0: Vec<bool>,
    times: Vec<usize>,
    depth: usize,
    delta: usize,
    first_min: usize,
    state_count: usize,
}

impl RegimeSpace {
    pub fn build(tree: &ScenarioTree, spec: &ProblemSpec, opts: &SpaceOptions) -> Result<Arc<Self>> {
        let t = tree.depth();
        let f = spec.first_impulse_min_time;
        let delta = spec.delta;
        // Largest p with start(p) ≤ T.
        let reachable = if f + delta <= t { (t - f) / delta } else { 0 };
        let p_max = reachable.min(opts.max_impulses);
        let start: Vec<usize> = (0..=p_max).map(|p| if p == 0 { 0 } else { f + p * delta }).collect();

        let xi0 = match &opts.initial_xi {
            Some(x) if x.len() != tree.dim() => {
                return Err(Error::invalid(format!(
                    "initial ξ has length {} but dim is {}",
                    x.len(),
                    tree.dim()
                )));
            }
            Some(x) => x.clone(),
            None => vec![0.0; tree.dim()],
        };
        let m = spec.impulses.len();
        let mut nodes_from = vec![0usize; t + 2];
        for k in (0..=t).rev() {
            nodes_from[k] = nodes_from[k + 1] + tree.level(k).len();
        }

        let zero = vec![0u32; m];
        let first = Regime {
            xi: canonical_xi(&xi0, &zero, &spec.impulses),
            counts: zero,
            p: 0,
        };
        let mut lookup = HashMap::new();
        lookup.insert((0, bits(&first.xi)), 0);
        let mut regimes = vec![first];
        let mut next: Vec<Vec<Option<usize>>> = Vec::new();
        let mut state_count = nodes_from[0];
        let mut i = 0;
        while i < regimes.len() {
            let mut row = vec![None; m];
            if regimes[i].p < p_max {
                for (b, slot) in row.iter_mut().enumerate() {
                    let mut counts = regimes[i].counts.clone();
                    counts[b] += 1;
                    let p = regimes[i].p + 1;
                    let xi = canonical_xi(&xi0, &counts, &spec.impulses);
                    let key = (p, bits(&xi));
                    let j = match lookup.get(&key) {
                        Some(&j) => j,
                        None => {
                            let j = regimes.len();
                            state_count = state_count.saturating_add(nodes_from[start[p]]);
                            if state_count > opts.state_cap {
                                return Err(Error::Guard {
                                    what: "augmented state count",
                                    count: state_count as u128,
                                    cap: opts.state_cap as u128,
                                });
                            }
                            lookup.insert(key, j);
                            regimes.push(Regime { counts, xi, p });
                            j
                        }
                    };
                    *slot = Some(j);
                }
            }
            next.push(row);
            i += 1;
        }
        if state_count > opts.state_cap {
            return Err(Error::Guard {
                what: "augmented state count",
                count: state_count as u128,
                cap: opts.state_cap as u128,
            });
        }

        Ok(Arc::new(Self {
            regimes,
            next,
            lookup,
            start,
            started0: opts.start.started_flags(tree),
            times: tree.nodes().iter().map(|n| n.time).collect(),
            depth: t,
            delta,
            first_min: f,
            state_count,
        }))
    }

    pub fn len(&self) -> usize {
        self.regimes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regimes.is_empty()
    }

    pub fn regime(&self, r: usize) -> &Regime {
        &self.regimes[r]
    }

    pub fn regimes(&self) -> &[Regime] {
        &self.regimes
    }

    pub fn next(&self, r: usize, beta: usize) -> Option<usize> {
        self.next[r][beta]
    }

    pub fn max_impulses(&self) -> usize {
        self.start.len() - 1
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn first_impulse_min_time(&self) -> usize {
        self.first_min
    }

    /// Earliest time a regime can be occupied.
    pub fn start_time(&self, r: usize) -> usize {
        self.start[self.regimes[r].p]
    }

    pub fn time(&self, v: NodeIdx) -> usize {
        self.times[v]
    }

    pub fn in_domain(&self, r: usize, v: NodeIdx) -> bool {
        self.times[v] >= self.start_time(r)
    }

    /// Whether the running payoff accrues at `v` in regime `r`.
    pub fn started(&self, r: usize, v: NodeIdx) -> bool {
        self.regimes[r].p > 0 || self.started0[v]
    }

    /// Number of `(node, regime)` pairs in the domain.
    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn find(&self, xi: &[f64], p: usize) -> Option<usize> {
        self.lookup.get(&(p, bits(xi))).copied()
    }

    /// Regime reached from the initial one by firing the given impulse
    /// indices in order.
    pub fn follow(&self, impulses: &[usize]) -> Option<usize> {
        impulses.iter().try_fold(0, |r, &b| self.next(r, b))
    }

    pub fn key(&self, r: usize, v: NodeIdx) -> RegimeKey {
        RegimeKey {
            node: v,
            xi_cum: self.regimes[r].xi.clone(),
            impulse_count: self.regimes[r].p,
        }
    }
}

/// Which scheme a field belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    /// n-th iterate: at most `n` further impulses from any key.
    Iterate { n: usize },
    /// Budgeted limit: at most `n_cap` impulses in total, so `n_cap − p` remain.
    Limit { n_cap: usize },
}

/// Values on the augmented state space (`NaN` outside regime domains).
#[derive(Clone, Debug)]
pub struct ValueField {
    pub kind: FieldKind,
    space: Arc<RegimeSpace>,
    values: Vec<Vec<f64>>,
}

/// Risk-sensitive fields share the representation; their values are positive.
pub type RsValueField = ValueField;

impl ValueField {
    pub(crate) fn new(kind: FieldKind, space: Arc<RegimeSpace>, values: Vec<Vec<f64>>) -> Self {
        Self { kind, space, values }
    }

    /// Field with `f(regime, node)` on every domain key.
    pub fn from_fn(kind: FieldKind, space: Arc<RegimeSpace>, f: impl Fn(usize, NodeIdx) -> f64) -> Self {
        let n = space.times.len();
        let values = (0..space.len())
            .map(|r| {
                (0..n)
                    .map(|v| if space.in_domain(r, v) { f(r, v) } else { f64::NAN })
                    .collect()
            })
            .collect();
        Self { kind, space, values }
    }

    pub fn space(&self) -> &Arc<RegimeSpace> {
        &self.space
    }

    pub(crate) fn raw(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn at(&self, r: usize, v: NodeIdx) -> Option<f64> {
        self.space.in_domain(r, v).then(|| self.values[r][v])
    }

    pub fn get(&self, key: &RegimeKey) -> Option<f64> {
        let r = self.space.find(&key.xi_cum, key.impulse_count)?;
        self.at(r, key.node)
    }

    pub fn root_value(&self) -> f64 {
        self.values[0][0]
    }

    /// Impulses still allowed from regime `r`.
    pub fn budget(&self, r: usize) -> usize {
        match self.kind {
            FieldKind::Iterate { n } => n,
            FieldKind::Limit { n_cap } => n_cap.saturating_sub(self.space.regime(r).p),
        }
    }

    /// `(regime, node, value)` over the domain, regime-major, nodes in tree order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, NodeIdx, f64)> + '_ {
        (0..self.space.len()).flat_map(move |r| {
            (0..self.values[r].len())
                .filter(move |&v| self.space.in_domain(r, v))
                .map(move |v| (r, v, self.values[r][v]))
        })
    }

    pub fn len(&self) -> usize {
        self.space.state_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
