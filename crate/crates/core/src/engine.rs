//! Backward recursion shared by the risk-neutral and risk-sensitive schemes.
//!
//! With `a_r(v)` the scaled, discounted running payoff of regime `r` at `v`:
//!
//! ```text
//! additive:        Y(v) = a(v) + max(Σ p·Y(child), O(v))
//! multiplicative:  V(v) = e^{a(v)} · max(Σ p·V(child), Θ(v))
//! ```
//!
//! Past the last level the continuation is 0 (resp. 1). The obstacle at a
//! node where an impulse may be decided is the best impulse's value over
//! every Δ-step path: the running payoff inside the window, the discounted
//! charge at execution, and the target field in the shifted regime.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::regime::RegimeSpace;
use crate::scenario::{NodeIdx, ScenarioTree};
use crate::snell::{backward_envelope, AdaptedProcess};

/// Largest exponent admitted in multiplicative mode.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Acc {
    Additive,
    Multiplicative,
}

struct Reach {
    node: NodeIdx,
    prob: f64,
    mids: Vec<NodeIdx>,
}

pub(crate) struct Engine<'a> {
    tree: &'a ScenarioTree,
    spec: &'a ProblemSpec,
    space: &'a RegimeSpace,
    acc: Acc,
    scale: f64,
    running: Vec<Vec<f64>>,
    reach: Vec<Vec<Reach>>,
}

impl<'a> Engine<'a> {
    pub fn new(tree: &'a ScenarioTree, spec: &'a ProblemSpec, space: &'a RegimeSpace, acc: Acc) -> Result<Self> {
        spec.check_tree(tree)?;
        let scale = match acc {
            Acc::Additive => 1.0,
            Acc::Multiplicative => spec
                .mode
                .rho()
                .ok_or_else(|| Error::invalid("risk-sensitive scheme needs a risk-sensitive mode"))?,
        };
        if acc == Acc::Multiplicative {
            let d = spec.delta as f64;
            let exponent =
                scale.abs() * (spec.c_theta() * spec.g_norm() + spec.psi_norm() / (1.0 - (-spec.theta * d).exp()));
            if exponent.is_nan() || exponent > MAX_EXPONENT {
                return Err(Error::invalid(format!(
                    "exponent bound {exponent:.3} exceeds {MAX_EXPONENT}; reduce ρ or the payoff bounds"
                )));
            }
        }

        let running = (0..space.len())
            .into_par_iter()
            .map(|r| {
                let xi = &space.regime(r).xi;
                let mut shifted = vec![0.0; tree.dim()];
                (0..tree.len())
                    .map(|v| {
                        if !space.started(r, v) {
                            return 0.0;
                        }
                        let n = tree.node(v);
                        for (s, (x, d)) in shifted.iter_mut().zip(n.state.iter().zip(xi)) {
                            *s = x + d;
                        }
                        scale * spec.discount(n.time) * spec.g.eval(&shifted)
                    })
                    .collect()
            })
            .collect();

        let t = tree.depth();
        let delta = spec.delta;
        let reach = (0..tree.len())
            .map(|v| {
                if tree.time(v) + delta > t {
                    return Vec::new();
                }
                let mut frontier = vec![Reach {
                    node: v,
                    prob: 1.0,
                    mids: Vec::new(),
                }];
                for step in 1..=delta {
                    let mut next = Vec::with_capacity(frontier.len() * 2);
                    for e in frontier {
                        for &(c, p) in &tree.node(e.node).children {
                            let mut mids = e.mids.clone();
                            if step < delta {
                                mids.push(c);
                            }
                            next.push(Reach {
                                node: c,
                                prob: e.prob * p,
                                mids,
                            });
                        }
                    }
                    frontier = next;
                }
                frontier
            })
            .collect();

        Ok(Self {
            tree,
            spec,
            space,
            acc,
            scale,
            running,
            reach,
        })
    }

    pub fn running(&self, r: usize, v: NodeIdx) -> f64 {
        self.running[r][v]
    }

    fn beyond(&self) -> f64 {
        match self.acc {
            Acc::Additive => 0.0,
            Acc::Multiplicative => 1.0,
        }
    }

    fn combine(&self, a: f64, m: f64) -> f64 {
        match self.acc {
            Acc::Additive => a + m,
            Acc::Multiplicative => a.exp() * m,
        }
    }

    pub fn fire_allowed(&self, r: usize, v: NodeIdx, budget: usize) -> bool {
        let k = self.tree.time(v);
        budget >= 1
            && k + self.spec.delta <= self.tree.depth()
            && self.space.next(r, 0).is_some()
            && (self.space.regime(r).p > 0 || k >= self.space.first_impulse_min_time())
    }

    /// Δ-step paths out of `v` as `(end node, probability, Σ running payoff
    /// strictly inside the window)`.
    pub fn windows(&self, r: usize, v: NodeIdx) -> Vec<(NodeIdx, f64, f64)> {
        self.reach[v]
            .iter()
            .map(|e| {
                let w = e.mids.iter().fold(0.0, |s, &u| s + self.running[r][u]);
                (e.node, e.prob, w)
            })
            .collect()
    }

    pub fn charge(&self, v: NodeIdx, beta: usize) -> f64 {
        -self.scale * self.spec.discount(self.tree.time(v) + self.spec.delta) * self.spec.psi[beta]
    }

    /// Obstacle at `(r, v)` against `target`, with the maximising impulse.
    /// Nodes where no impulse may be decided get `-inf` (0 resp. 1 on the
    /// last level).
    pub fn obstacle(&self, r: usize, v: NodeIdx, budget: usize, target: &[Vec<f64>]) -> (f64, Option<usize>) {
        if !self.fire_allowed(r, v, budget) {
            let o = if self.tree.time(v) == self.tree.depth() {
                self.beyond()
            } else {
                f64::NEG_INFINITY
            };
            return (o, None);
        }
        let windows = self.windows(r, v);
        let mut best = f64::NEG_INFINITY;
        let mut arg = None;
        for beta in 0..self.spec.impulses.len() {
            let r2 = self.space.next(r, beta).expect("firing is allowed");
            let charge = self.charge(v, beta);
            let mut s = 0.0;
            match self.acc {
                Acc::Additive => {
                    for &(w, p, win) in &windows {
                        s += p * ((win + charge) + target[r2][w]);
                    }
                }
                Acc::Multiplicative => {
                    let cf = charge.exp();
                    for &(w, p, win) in &windows {
                        s += p * ((win.exp() * cf) * target[r2][w]);
                    }
                }
            }
            if arg.is_none() || s > best {
                best = s;
                arg = Some(beta);
            }
        }
        (best, arg)
    }

    fn node_value(&self, r: usize, v: NodeIdx, values: &[Vec<f64>], obst: f64) -> f64 {
        let node = self.tree.node(v);
        let cont = if node.is_leaf() {
            self.beyond()
        } else {
            let mut s = 0.0;
            for &(c, p) in &node.children {
                s += p * values[r][c];
            }
            s
        };
        self.combine(self.running[r][v], cont.max(obst))
    }

    fn domain_items(&self, k: usize) -> Vec<(usize, NodeIdx)> {
        (0..self.space.len())
            .filter(|&r| self.space.start_time(r) <= k)
            .flat_map(|r| self.tree.level(k).iter().map(move |&v| (r, v)))
            .collect()
    }

    /// One backward pass in which the obstacle targets the field being
    /// built; `budget(r)` impulses remain in regime `r`.
    pub fn pass(&self, budget: impl Fn(usize) -> usize + Sync) -> Vec<Vec<f64>> {
        let mut values = vec![vec![f64::NAN; self.tree.len()]; self.space.len()];
        for k in (0..=self.tree.depth()).rev() {
            let items = self.domain_items(k);
            let computed: Vec<f64> = items
                .par_iter()
                .map(|&(r, v)| {
                    let (o, _) = self.obstacle(r, v, budget(r), &values);
                    self.node_value(r, v, &values, o)
                })
                .collect();
            for (&(r, v), x) in items.iter().zip(computed) {
                values[r][v] = x;
            }
        }
        values
    }

    /// Obstacles and argmax impulses of every domain key against `target`.
    pub fn obstacle_field(
        &self,
        target: &[Vec<f64>],
        budget: impl Fn(usize) -> usize + Sync,
    ) -> (Vec<Vec<f64>>, Vec<Vec<Option<usize>>>) {
        (0..self.space.len())
            .into_par_iter()
            .map(|r| {
                let mut o = vec![f64::NAN; self.tree.len()];
                let mut c = vec![None; self.tree.len()];
                for v in 0..self.tree.len() {
                    if self.space.in_domain(r, v) {
                        let (x, b) = self.obstacle(r, v, budget(r), target);
                        o[v] = x;
                        c[v] = b;
                    }
                }
                (o, c)
            })
            .unzip()
    }

    /// Running sums along the root path of regime `r`: `(inclusive, exclusive)`.
    pub fn cumulative(&self, r: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.tree.len();
        let mut cum = vec![0.0; n];
        let mut prev = vec![0.0; n];
        for v in 0..n {
            prev[v] = self.tree.node(v).parent.map_or(0.0, |p| cum[p]);
            cum[v] = prev[v] + self.running[r][v];
        }
        (cum, prev)
    }

    /// Stopping obstacle of the cumulated problem: `Σ_{ℓ≤k} a + O` resp. `e^{Σ a}·Θ`.
    pub fn tilde_obstacle(&self, cum: f64, obst: f64) -> f64 {
        if obst == f64::NEG_INFINITY {
            return obst;
        }
        match self.acc {
            Acc::Additive => cum + obst,
            Acc::Multiplicative => cum.exp() * obst,
        }
    }

    /// Cumulated value `Σ_{ℓ<k} a + Y` resp. `e^{Σ a}·V`.
    pub fn tilde_value(&self, cum_prev: f64, y: f64) -> f64 {
        match self.acc {
            Acc::Additive => cum_prev + y,
            Acc::Multiplicative => cum_prev.exp() * y,
        }
    }

    fn detilde(&self, cum_prev: f64, e: f64) -> f64 {
        match self.acc {
            Acc::Additive => e - cum_prev,
            Acc::Multiplicative => e / cum_prev.exp(),
        }
    }

    /// Next iterate through the Snell envelope of the cumulated problem,
    /// allowing `budget` impulses with `prev` as the post-impulse value.
    pub fn snell_iterate(&self, prev: &[Vec<f64>], budget: usize) -> Result<Vec<Vec<f64>>> {
        (0..self.space.len())
            .into_par_iter()
            .map(|r| {
                let (cum, cum_prev) = self.cumulative(r);
                let mut l = vec![f64::NEG_INFINITY; self.tree.len()];
                for v in 0..self.tree.len() {
                    if self.space.in_domain(r, v) {
                        let (o, _) = self.obstacle(r, v, budget, prev);
                        l[v] = self.tilde_obstacle(cum[v], o);
                    }
                }
                let env = backward_envelope(self.tree, &AdaptedProcess::new(l))?;
                Ok((0..self.tree.len())
                    .map(|v| {
                        if self.space.in_domain(r, v) {
                            self.detilde(cum_prev[v], env.values[v])
                        } else {
                            f64::NAN
                        }
                    })
                    .collect())
            })
            .collect()
    }
}
