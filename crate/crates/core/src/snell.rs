//! Snell envelopes on scenario trees and the stopping regions they induce.
//!
//! An obstacle value of `-inf` marks a node where stopping is not permitted;
//! the envelope there is the conditional expectation alone.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scenario::{NodeIdx, ScenarioTree};

/// Relative tolerance of the envelope/obstacle equality test.
pub const HIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedProcess {
    /// One value per node, indexed like the tree.
    pub values: Vec<f64>,
    /// Competes with the obstacle at leaves: the value of continuing past
    /// the last level. `-inf` means there is nothing beyond the tree.
    pub terminal_value: f64,
}

impl AdaptedProcess {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            terminal_value: f64::NEG_INFINITY,
        }
    }

    pub fn with_terminal(values: Vec<f64>, terminal_value: f64) -> Self {
        Self { values, terminal_value }
    }

    pub fn filled(tree: &ScenarioTree, v: f64) -> Self {
        Self::new(vec![v; tree.len()])
    }

    pub fn from_fn(tree: &ScenarioTree, f: impl Fn(NodeIdx) -> f64) -> Self {
        Self::new((0..tree.len()).map(f).collect())
    }

    pub fn get(&self, v: NodeIdx) -> f64 {
        self.values[v]
    }
}

/// A set of nodes no one of which is an ancestor of another.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StoppingRegion {
    members: BTreeSet<NodeIdx>,
}

impl StoppingRegion {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a region, rejecting sets that are not antichains.
    pub fn from_nodes(tree: &ScenarioTree, nodes: impl IntoIterator<Item = NodeIdx>) -> Result<Self> {
        let r = Self {
            members: nodes.into_iter().collect(),
        };
        if let Some((a, b)) = r.ancestor_pair(tree) {
            return Err(Error::invalid(format!(
                "stopping region contains {} and its descendant {}",
                tree.node(a).id,
                tree.node(b).id
            )));
        }
        Ok(r)
    }

    /// The region `{v : time(v) = k}`.
    pub fn at_time(tree: &ScenarioTree, k: usize) -> Self {
        Self {
            members: tree.level(k).iter().copied().collect(),
        }
    }

    pub fn contains(&self, v: NodeIdx) -> bool {
        self.members.contains(&v)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        self.members.iter().copied()
    }

    pub(crate) fn insert(&mut self, v: NodeIdx) {
        self.members.insert(v);
    }

    /// First (ancestor, descendant) pair found, if the set is not an antichain.
    pub fn ancestor_pair(&self, tree: &ScenarioTree) -> Option<(NodeIdx, NodeIdx)> {
        for &b in &self.members {
            let mut cur = tree.node(b).parent;
            while let Some(p) = cur {
                if self.members.contains(&p) {
                    return Some((p, b));
                }
                cur = tree.node(p).parent;
            }
        }
        None
    }

    pub fn is_antichain(&self, tree: &ScenarioTree) -> bool {
        self.ancestor_pair(tree).is_none()
    }

    /// Stopping time along a root-to-leaf path: time of the first member
    /// on it, `None` for +∞.
    pub fn hitting_time(&self, tree: &ScenarioTree, path: &[NodeIdx]) -> Option<usize> {
        path.iter().find(|v| self.contains(**v)).map(|&v| tree.time(v))
    }
}

/// `E(v) = max(Σ p·E(child), obstacle(v))`, and at leaves
/// `E = max(terminal_value, obstacle)`.
pub fn backward_envelope(tree: &ScenarioTree, obstacle: &AdaptedProcess) -> Result<AdaptedProcess> {
    if obstacle.values.len() != tree.len() {
        return Err(Error::invalid(format!(
            "obstacle has {} values for {} nodes",
            obstacle.values.len(),
            tree.len()
        )));
    }
    if let Some(v) = obstacle.values.iter().position(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::invalid(format!(
            "obstacle at node {} is not a value",
            tree.node(v).id
        )));
    }
    let mut env = vec![0.0; tree.len()];
    for k in (0..=tree.depth()).rev() {
        for &v in tree.level(k) {
            let node = tree.node(v);
            let obs = obstacle.values[v];
            env[v] = if node.is_leaf() {
                obstacle.terminal_value.max(obs)
            } else {
                let mut cont = 0.0;
                for &(c, p) in &node.children {
                    cont += p * env[c];
                }
                cont.max(obs)
            };
        }
    }
    Ok(AdaptedProcess {
        values: env,
        terminal_value: obstacle.terminal_value,
    })
}

pub(crate) fn attains(env: f64, obs: f64) -> bool {
    obs.is_finite() && (env - obs).abs() <= HIT_TOL * (1.0 + env.abs())
}

/// First node at time ≥ `from_time` on each path where the envelope meets
/// the obstacle.
pub fn hitting_region(
    tree: &ScenarioTree,
    envelope: &AdaptedProcess,
    obstacle: &AdaptedProcess,
    from_time: usize,
) -> StoppingRegion {
    hitting_region_from(tree, envelope, obstacle, &[tree.root()], from_time)
}

/// As [`hitting_region`], searching only the subtrees below `roots`
/// (inclusive).
pub fn hitting_region_from(
    tree: &ScenarioTree,
    envelope: &AdaptedProcess,
    obstacle: &AdaptedProcess,
    roots: &[NodeIdx],
    from_time: usize,
) -> StoppingRegion {
    let mut region = StoppingRegion::new();
    let mut stack: Vec<NodeIdx> = roots.iter().rev().copied().collect();
    while let Some(v) = stack.pop() {
        if tree.time(v) >= from_time && attains(envelope.values[v], obstacle.values[v]) {
            region.insert(v);
            continue;
        }
        for &(c, _) in tree.node(v).children.iter().rev() {
            stack.push(c);
        }
    }
    region
}
