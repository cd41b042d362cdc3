#![allow(dead_code)]

use impulsolve::scenario::{ChildDocument, NodeDocument, TreeDocument};
use impulsolve::snell::StoppingRegion;
use impulsolve::strategy::Stage;
use impulsolve::{BoundedFunction, NodeIdx, ProblemSpec, ScenarioTree, Strategy};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug)]
pub struct Shape {
    pub max_nodes: usize,
    pub max_depth: usize,
    pub dim: usize,
}

/// Random tree: every node gets one or two children until `max_nodes`.
/// States move by small steps so that `g` sees both of its regimes.
pub fn random_tree(rng: &mut ChaCha8Rng, shape: &Shape) -> ScenarioTree {
    let depth = rng.gen_range(2..=shape.max_depth);
    let mut nodes = vec![NodeDocument {
        id: "r".into(),
        time: 0,
        state: (0..shape.dim).map(|_| rng.gen_range(-1..=1) as f64 * 0.5).collect(),
        parent: None,
        children: vec![],
    }];
    let mut frontier = vec![0usize];
    for t in 1..=depth {
        let mut next = Vec::new();
        for &v in &frontier {
            let remaining = shape.max_nodes - nodes.len();
            let left = depth - t + 1;
            // Keep room for every open path to reach the full depth.
            let budget = remaining.saturating_sub((frontier.len() + next.len()) * left);
            let two = budget >= left && rng.gen_bool(0.55);
            let probs: Vec<f64> = if two {
                let p = [0.25, 0.4, 0.5, 0.6, 0.75][rng.gen_range(0..5)];
                vec![p, 1.0 - p]
            } else {
                vec![1.0]
            };
            for p in probs {
                let idx = nodes.len();
                let state = nodes[v]
                    .state
                    .iter()
                    .map(|x| x + [-1.0, -0.5, 0.0, 0.5, 1.0][rng.gen_range(0..5)])
                    .collect();
                let id = format!("v{idx}");
                nodes.push(NodeDocument {
                    id: id.clone(),
                    time: t,
                    state,
                    parent: Some(nodes[v].id.clone()),
                    children: vec![],
                });
                nodes[v].children.push(ChildDocument { id, p });
                next.push(idx);
            }
        }
        frontier = next;
    }
    ScenarioTree::from_document(&TreeDocument {
        dim: shape.dim,
        depth,
        nodes,
    })
    .expect("generated trees are well formed")
}

const G_SOURCES: &[(&str, f64)] = &[
    ("clamp(x0, -1.5, 1.5)", 1.5),
    ("step(x0, 0.5) - 0.5", 0.5),
    ("clamp(1 - x0*x0, -1, 1)", 1.0),
    ("0.5*clamp(x0, -1, 1) + 0.5*step(x0, 1)", 1.0),
    ("min(clamp(x0, -2, 2), 1)", 2.0),
];

const G_SOURCES_2D: &[(&str, f64)] = &[
    ("clamp(x0 - x1, -1, 1)", 1.0),
    ("0.5*step(x0, 0) + 0.5*clamp(x1, -1, 1)", 1.0),
];

#[derive(Clone, Debug)]
pub struct SpecShape {
    pub max_delta: usize,
    pub max_impulses: usize,
    /// Ψ is drawn from `[-psi_neg, psi_pos]`.
    pub psi_neg: f64,
    pub psi_pos: f64,
}

pub fn random_spec(rng: &mut ChaCha8Rng, dim: usize, shape: &SpecShape) -> ProblemSpec {
    let theta = [0.2, 0.35, 0.5, 0.7, 1.0][rng.gen_range(0..5)];
    let delta = rng.gen_range(1..=shape.max_delta);
    let m = rng.gen_range(1..=shape.max_impulses);
    let steps = [-1.0, -0.5, 0.5, 1.0, 1.5];
    let impulses: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..dim).map(|_| steps[rng.gen_range(0..5)]).collect())
        .collect();
    let psi: Vec<f64> = (0..m)
        .map(|_| (rng.gen_range(-shape.psi_neg..=shape.psi_pos) * 100.0).round() / 100.0)
        .collect();
    let (src, bound) = if dim == 1 {
        G_SOURCES[rng.gen_range(0..G_SOURCES.len())]
    } else {
        G_SOURCES_2D[rng.gen_range(0..G_SOURCES_2D.len())]
    };
    let g = BoundedFunction::new(src, bound).unwrap();
    ProblemSpec::new(theta, delta, impulses, psi, g).unwrap()
}

pub const SMALL_TREE: Shape = Shape {
    max_nodes: 40,
    max_depth: 6,
    dim: 1,
};

pub const SMALL_SPEC: SpecShape = SpecShape {
    max_delta: 2,
    max_impulses: 2,
    psi_neg: 0.3,
    psi_pos: 0.6,
};

pub fn small_instance(rng: &mut ChaCha8Rng) -> (ScenarioTree, ProblemSpec) {
    let dim = if rng.gen_bool(0.8) { 1 } else { 2 };
    let tree = random_tree(rng, &Shape { dim, ..SMALL_TREE });
    let spec = random_spec(rng, dim, &SMALL_SPEC);
    (tree, spec)
}

/// Random stopping region: each node, unless an ancestor already stopped,
/// stops with probability `q`.
pub fn random_region_below(rng: &mut ChaCha8Rng, tree: &ScenarioTree, roots: &[NodeIdx], q: f64) -> StoppingRegion {
    let mut members = Vec::new();
    let mut stack: Vec<NodeIdx> = roots.to_vec();
    while let Some(v) = stack.pop() {
        if rng.gen_bool(q) || tree.node(v).is_leaf() && rng.gen_bool(0.5) {
            members.push(v);
        } else {
            stack.extend(tree.node(v).children.iter().map(|&(c, _)| c));
        }
    }
    StoppingRegion::from_nodes(tree, members).expect("random regions are antichains")
}

/// Random admissible strategy: along every path, when allowed, fire a random
/// impulse with probability `q`.
pub fn random_strategy(rng: &mut ChaCha8Rng, tree: &ScenarioTree, spec: &ProblemSpec, q: f64) -> Strategy {
    let mut stages: Vec<Stage> = Vec::new();
    let mut stack = vec![(tree.root(), 0usize, spec.first_impulse_min_time)];
    while let Some((v, fired, blocked)) = stack.pop() {
        let k = tree.time(v);
        let (mut f, mut b) = (fired, blocked);
        if k >= blocked && rng.gen_bool(q) {
            if stages.len() <= fired {
                stages.resize(fired + 1, Stage::default());
            }
            stages[fired].stops.insert(v, rng.gen_range(0..spec.impulses.len()));
            f += 1;
            b = k + spec.delta;
        }
        for &(c, _) in &tree.node(v).children {
            stack.push((c, f, b));
        }
    }
    Strategy { stages, n_cap: None }
}

pub fn shuffle<T>(rng: &mut ChaCha8Rng, v: &mut [T]) {
    v.shuffle(rng);
}
