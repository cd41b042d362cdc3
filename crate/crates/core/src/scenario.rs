//! Finite scenario trees: the filtration on which the uncontrolled process lives.
//!
//! Nodes are stored in breadth-first order from the root, children in the
//! order the source declared them. Node indices ([`NodeIdx`]) are positions
//! in that order and are stable for a given document.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::rng::SplitMix64;

pub type NodeIdx = usize;

/// Tolerance on the sum of child probabilities.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;
/// Default cap on generated tree sizes.
pub const DEFAULT_NODE_CAP: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: String,
    pub time: usize,
    pub state: Vec<f64>,
    pub parent: Option<NodeIdx>,
    pub children: Vec<(NodeIdx, f64)>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTree {
    nodes: Vec<Node>,
    depth: usize,
    dim: usize,
    levels: Vec<Vec<NodeIdx>>,
    index: HashMap<String, NodeIdx>,
}

/// One root-to-leaf path (an atom of the sample space).
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub nodes: Vec<NodeIdx>,
    pub probability: f64,
}

// ---------------------------------------------------------------------------
// Document format
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub dim: usize,
    pub depth: usize,
    pub nodes: Vec<NodeDocument>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub id: String,
    pub time: usize,
    pub state: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default)]
    pub children: Vec<ChildDocument>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChildDocument {
    pub id: String,
    pub p: f64,
}

impl ScenarioTree {
    /// Links a document into a tree without checking the numeric invariants
    /// (use [`validate_tree`] for those). Fails only when the document does
    /// not describe a single rooted tree at all.
    pub fn from_document(doc: &TreeDocument) -> Result<Self> {
        let mut violations = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for (i, n) in doc.nodes.iter().enumerate() {
            if pos.insert(n.id.as_str(), i).is_some() {
                violations.push(Violation::new(&n.id, "duplicate node id"));
            }
        }
        let roots: Vec<usize> = doc
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parent.is_none())
            .map(|(i, _)| i)
            .collect();
        match roots.len() {
            0 => violations.push(Violation::new("<document>", "no root node (every node has a parent)")),
            1 => {}
            _ => {
                for &r in &roots[1..] {
                    violations.push(Violation::new(
                        &doc.nodes[r].id,
                        "second root: non-root nodes need a parent",
                    ));
                }
            }
        }
        for n in &doc.nodes {
            if let Some(p) = &n.parent {
                match pos.get(p.as_str()) {
                    None => violations.push(Violation::new(&n.id, format!("unknown parent {p}"))),
                    Some(&pi) => {
                        if !doc.nodes[pi].children.iter().any(|c| c.id == n.id) {
                            violations.push(Violation::new(&n.id, format!("parent {p} does not list it as a child")));
                        }
                    }
                }
            }
            for c in &n.children {
                match pos.get(c.id.as_str()) {
                    None => violations.push(Violation::new(&n.id, format!("unknown child {}", c.id))),
                    Some(&ci) => {
                        if doc.nodes[ci].parent.as_deref() != Some(n.id.as_str()) {
                            violations.push(Violation::new(
                                &c.id,
                                format!("child of {} but declares another parent", n.id),
                            ));
                        }
                    }
                }
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }

        // Breadth-first relabelling from the root.
        let root = roots[0];
        let mut order = Vec::with_capacity(doc.nodes.len());
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([root]);
        seen.insert(root);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for c in &doc.nodes[i].children {
                let ci = pos[c.id.as_str()];
                if !seen.insert(ci) {
                    violations.push(Violation::new(&c.id, "node reached twice (not a tree)"));
                    continue;
                }
                queue.push_back(ci);
            }
        }
        for (i, n) in doc.nodes.iter().enumerate() {
            if !seen.contains(&i) {
                violations.push(Violation::new(&n.id, "orphan: not reachable from the root"));
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }

        let mut new_index = vec![0usize; doc.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let nodes: Vec<Node> = order
            .iter()
            .map(|&old| {
                let d = &doc.nodes[old];
                Node {
                    id: d.id.clone(),
                    time: d.time,
                    state: d.state.clone(),
                    parent: d.parent.as_ref().map(|p| new_index[pos[p.as_str()]]),
                    children: d
                        .children
                        .iter()
                        .map(|c| (new_index[pos[c.id.as_str()]], c.p))
                        .collect(),
                }
            })
            .collect();
        Ok(Self::assemble(nodes, doc.dim, doc.depth))
    }

    fn assemble(nodes: Vec<Node>, dim: usize, depth: usize) -> Self {
        let max_time = nodes.iter().map(|n| n.time).max().unwrap_or(0);
        let mut levels = vec![Vec::new(); max_time.max(depth) + 1];
        for (i, n) in nodes.iter().enumerate() {
            levels[n.time].push(i);
        }
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        Self {
            nodes,
            depth,
            dim,
            levels,
            index,
        }
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            dim: self.dim,
            depth: self.depth,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDocument {
                    id: n.id.clone(),
                    time: n.time,
                    state: n.state.clone(),
                    parent: n.parent.map(|p| self.nodes[p].id.clone()),
                    children: n
                        .children
                        .iter()
                        .map(|&(c, p)| ChildDocument {
                            id: self.nodes[c].id.clone(),
                            p,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("tree documents always serialize")
    }

    pub fn root(&self) -> NodeIdx {
        0
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: NodeIdx) -> &Node {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn time(&self, i: NodeIdx) -> usize {
        self.nodes[i].time
    }

    /// Nodes at time `k` (empty beyond the deepest level).
    pub fn level(&self, k: usize) -> &[NodeIdx] {
        self.levels.get(k).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn find(&self, id: &str) -> Option<NodeIdx> {
        self.index.get(id).copied()
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    /// `a` is an ancestor of `b` (strictly).
    pub fn is_ancestor(&self, a: NodeIdx, b: NodeIdx) -> bool {
        let mut cur = self.nodes[b].parent;
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.nodes[p].parent;
        }
        false
    }

    /// Root-to-node chain, root first.
    pub fn ancestry(&self, v: NodeIdx) -> Vec<NodeIdx> {
        let mut chain = vec![v];
        let mut cur = self.nodes[v].parent;
        while let Some(p) = cur {
            chain.push(p);
            cur = self.nodes[p].parent;
        }
        chain.reverse();
        chain
    }

    /// Probability of reaching `v` from the root.
    pub fn reach_probability(&self, v: NodeIdx) -> f64 {
        let chain = self.ancestry(v);
        chain.windows(2).map(|w| self.edge_probability(w[0], w[1])).product()
    }

    fn edge_probability(&self, parent: NodeIdx, child: NodeIdx) -> f64 {
        self.nodes[parent]
            .children
            .iter()
            .find(|(c, _)| *c == child)
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }

    /// All root-to-leaf paths in depth-first, declared-child order.
    pub fn paths(&self) -> Vec<PathSample> {
        let mut out = Vec::new();
        let mut stack = vec![(self.root(), 1.0, vec![self.root()])];
        while let Some((v, prob, path)) = stack.pop() {
            let node = &self.nodes[v];
            if node.is_leaf() {
                out.push(PathSample {
                    nodes: path,
                    probability: prob,
                });
                continue;
            }
            for &(c, p) in node.children.iter().rev() {
                let mut next = path.clone();
                next.push(c);
                stack.push((c, prob * p, next));
            }
        }
        out
    }

    /// Descendants of `v` at exactly `offset` levels below, with the
    /// conditional probability of reaching each from `v`.
    pub fn descendants_at(&self, v: NodeIdx, offset: usize) -> Vec<(NodeIdx, f64)> {
        let mut frontier = vec![(v, 1.0)];
        for _ in 0..offset {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for (u, pu) in frontier {
                for &(c, p) in &self.nodes[u].children {
                    next.push((c, pu * p));
                }
            }
            frontier = next;
        }
        frontier
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Parses and validates a tree document.
pub fn load_tree<R: Read>(mut source: R) -> Result<ScenarioTree> {
    let mut buf = String::new();
    source.read_to_string(&mut buf)?;
    parse_tree(&buf)
}

pub fn parse_tree(text: &str) -> Result<ScenarioTree> {
    let doc: TreeDocument = serde_json::from_str(text)?;
    let tree = ScenarioTree::from_document(&doc)?;
    let violations = validate_tree(&tree);
    if violations.is_empty() {
        Ok(tree)
    } else {
        Err(Error::Validation(violations))
    }
}

/// Checks every tree invariant; an empty result means the tree is valid.
pub fn validate_tree(tree: &ScenarioTree) -> Vec<Violation> {
    let mut out = Vec::new();
    if tree.depth < 1 {
        out.push(Violation::new("<document>", "depth must be ≥ 1"));
    }
    if tree.dim < 1 {
        out.push(Violation::new("<document>", "dim must be ≥ 1"));
    }
    for (i, n) in tree.nodes.iter().enumerate() {
        if n.state.len() != tree.dim {
            out.push(Violation::new(
                &n.id,
                format!("state has length {} but dim is {}", n.state.len(), tree.dim),
            ));
        }
        if n.state.iter().any(|x| !x.is_finite()) {
            out.push(Violation::new(&n.id, "state must be finite"));
        }
        match n.parent {
            None => {
                if i == tree.root() && n.time != 0 {
                    out.push(Violation::new(&n.id, "root must be at time 0"));
                }
            }
            Some(p) => {
                if n.time != tree.nodes[p].time + 1 {
                    out.push(Violation::new(&n.id, "time must increment by 1"));
                }
            }
        }
        if n.is_leaf() {
            if n.time != tree.depth {
                out.push(Violation::new(
                    &n.id,
                    format!("leaf at time {} but depth is {}", n.time, tree.depth),
                ));
            }
        } else {
            let mut sum = 0.0;
            let mut bad = false;
            for &(_, p) in &n.children {
                if !(p > 0.0 && p <= 1.0) || !p.is_finite() {
                    bad = true;
                }
                sum += p;
            }
            if bad {
                out.push(Violation::new(&n.id, "probabilities must lie in (0, 1]"));
            }
            if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
                out.push(Violation::new(&n.id, format!("probabilities sum {sum}")));
            }
        }
    }
    out
}

/// Options for [`generate_walk_tree_with`].
#[derive(Clone, Debug)]
pub struct WalkOptions {
    pub branching: usize,
    pub depth: usize,
    /// One `(increment, probability)` per branch.
    pub increments: Vec<(Vec<f64>, f64)>,
    pub seed: u64,
    /// Half-width of uniform noise added to every child state; 0 disables it.
    pub jitter: f64,
    pub initial_state: Option<Vec<f64>>,
    pub node_cap: usize,
}

impl WalkOptions {
    pub fn new(branching: usize, depth: usize, increments: Vec<(Vec<f64>, f64)>, seed: u64) -> Self {
        Self {
            branching,
            depth,
            increments,
            seed,
            jitter: 0.0,
            initial_state: None,
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

/// Non-recombining random-walk tree: every child state is the parent state
/// plus the increment of its branch.
pub fn generate_walk_tree(
    branching: usize,
    depth: usize,
    increments: &[(Vec<f64>, f64)],
    seed: u64,
) -> Result<ScenarioTree> {
    generate_walk_tree_with(&WalkOptions::new(branching, depth, increments.to_vec(), seed))
}

pub fn generate_walk_tree_with(opts: &WalkOptions) -> Result<ScenarioTree> {
    let b = opts.branching;
    if b < 1 {
        return Err(Error::invalid("branching must be ≥ 1"));
    }
    if opts.increments.len() != b {
        return Err(Error::invalid(format!(
            "expected {b} increments, got {}",
            opts.increments.len()
        )));
    }
    let dim = opts
        .initial_state
        .as_ref()
        .map(Vec::len)
        .unwrap_or_else(|| opts.increments[0].0.len());
    if dim == 0 || opts.increments.iter().any(|(v, _)| v.len() != dim) {
        return Err(Error::invalid("increments must share a non-zero dimension"));
    }
    let psum: f64 = opts.increments.iter().map(|(_, p)| p).sum();
    if (psum - 1.0).abs() > PROBABILITY_SUM_TOL || opts.increments.iter().any(|(_, p)| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::invalid(format!(
            "increment probabilities must lie in (0,1] and sum to 1 (sum {psum})"
        )));
    }
    if !(opts.jitter >= 0.0 && opts.jitter.is_finite()) {
        return Err(Error::invalid("jitter must be finite and non-negative"));
    }

    // Σ_{k=0..T} b^k, saturating.
    let mut count: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=opts.depth {
        count = count.saturating_add(level);
        level = level.saturating_mul(b as u128);
    }
    if count > opts.node_cap as u128 {
        return Err(Error::Guard {
            what: "generated node count",
            count,
            cap: opts.node_cap as u128,
        });
    }

    let mut rng = SplitMix64::new(opts.seed);
    let root_state = opts.initial_state.clone().unwrap_or_else(|| vec![0.0; dim]);
    let mut nodes = vec![Node {
        id: "n0".to_string(),
        time: 0,
        state: root_state,
        parent: None,
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for t in 1..=opts.depth {
        let mut next = Vec::with_capacity(frontier.len() * b);
        for &parent in &frontier {
            for (inc, p) in &opts.increments {
                let idx = nodes.len();
                let state = nodes[parent]
                    .state
                    .iter()
                    .zip(inc)
                    .map(|(x, d)| {
                        let noise = if opts.jitter > 0.0 {
                            (2.0 * rng.next_f64() - 1.0) * opts.jitter
                        } else {
                            0.0
                        };
                        x + d + noise
                    })
                    .collect();
                nodes.push(Node {
                    id: format!("n{idx}"),
                    time: t,
                    state,
                    parent: Some(parent),
                    children: Vec::new(),
                });
                nodes[parent].children.push((idx, *p));
                next.push(idx);
            }
        }
        frontier = next;
    }
    Ok(ScenarioTree::assemble(nodes, dim, opts.depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_doc(times: &[usize], depth: usize) -> TreeDocument {
        let nodes = times
            .iter()
            .enumerate()
            .map(|(i, &t)| NodeDocument {
                id: format!("c{i}"),
                time: t,
                state: vec![0.0],
                parent: (i > 0).then(|| format!("c{}", i - 1)),
                children: if i + 1 < times.len() {
                    vec![ChildDocument {
                        id: format!("c{}", i + 1),
                        p: 1.0,
                    }]
                } else {
                    vec![]
                },
            })
            .collect();
        TreeDocument { dim: 1, depth, nodes }
    }

    #[test]
    fn single_node_document_is_rejected() {
        let doc = chain_doc(&[0], 0);
        let text = serde_json::to_string(&doc).unwrap();
        match parse_tree(&text) {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|x| x.rule == "depth must be ≥ 1"), "{v:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_chain_has_four_nodes() {
        let text = serde_json::to_string(&chain_doc(&[0, 1, 2, 3], 3)).unwrap();
        let tree = parse_tree(&text).unwrap();
        assert_eq!(tree.len(), 4);
        assert_eq!(tree.depth(), 3);
        assert!(validate_tree(&tree).is_empty());
    }

    #[test]
    fn binary_tree_leaf_probabilities() {
        let tree = generate_walk_tree(2, 2, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap();
        let reparsed = parse_tree(&tree.to_json()).unwrap();
        assert_eq!(reparsed.len(), 7);
        let paths = reparsed.paths();
        assert_eq!(paths.len(), 4);
        for p in &paths {
            assert_eq!(p.probability, 0.25);
        }
    }

    #[test]
    fn walk_chain_states() {
        let tree = generate_walk_tree(1, 4, &[(vec![1.0], 1.0)], 7).unwrap();
        let states: Vec<f64> = tree.nodes().iter().map(|n| n.state[0]).collect();
        assert_eq!(states, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn walk_binary_leaf_states() {
        let tree = generate_walk_tree(2, 3, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap();
        assert_eq!(tree.len(), 15);
        let mut leaf_states: Vec<i64> = tree.leaves().map(|l| tree.node(l).state[0] as i64).collect();
        leaf_states.sort();
        leaf_states.dedup();
        assert_eq!(leaf_states, vec![-3, -1, 1, 3]);
    }

    #[test]
    fn walk_size_guard() {
        let err = generate_walk_tree(2, 25, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap_err();
        assert!(matches!(err, Error::Guard { .. }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn validate_reports_probability_sum() {
        let mut doc = chain_doc(&[0, 1], 1);
        doc.nodes[0].children = vec![
            ChildDocument {
                id: "c1".into(),
                p: 0.5,
            },
            ChildDocument { id: "x".into(), p: 0.4 },
        ];
        doc.nodes.push(NodeDocument {
            id: "x".into(),
            time: 1,
            state: vec![0.0],
            parent: Some("c0".into()),
            children: vec![],
        });
        let tree = ScenarioTree::from_document(&doc).unwrap();
        let v = validate_tree(&tree);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].node, "c0");
        assert_eq!(v[0].rule, "probabilities sum 0.9");
    }

    #[test]
    fn validate_reports_time_jump() {
        let tree = ScenarioTree::from_document(&chain_doc(&[0, 2], 2)).unwrap();
        let v = validate_tree(&tree);
        assert_eq!(v, vec![Violation::new("c1", "time must increment by 1")]);
    }

    #[test]
    fn orphans_and_unknown_children_are_structural_errors() {
        let mut doc = chain_doc(&[0, 1], 1);
        doc.nodes.push(NodeDocument {
            id: "lost".into(),
            time: 1,
            state: vec![0.0],
            parent: Some("nowhere".into()),
            children: vec![],
        });
        assert!(matches!(ScenarioTree::from_document(&doc), Err(Error::Validation(_))));
    }

    #[test]
    fn jitter_is_seeded() {
        let mut opts = WalkOptions::new(2, 3, vec![(vec![1.0], 0.5), (vec![-1.0], 0.5)], 9);
        opts.jitter = 0.1;
        let a = generate_walk_tree_with(&opts).unwrap();
        let b = generate_walk_tree_with(&opts).unwrap();
        assert_eq!(a, b);
        opts.seed = 10;
        let c = generate_walk_tree_with(&opts).unwrap();
        assert_ne!(a, c);
    }
}
