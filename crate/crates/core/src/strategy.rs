//! Impulse strategies on a tree: stage `p` lists the nodes where the
//! `(p+1)`-th impulse is decided, with the impulse chosen there.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::scenario::{NodeIdx, ScenarioTree};
use crate::snell::StoppingRegion;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stage {
    pub stops: BTreeMap<NodeIdx, usize>,
}

impl Stage {
    pub fn region(&self) -> StoppingRegion {
        let mut r = StoppingRegion::new();
        for &v in self.stops.keys() {
            r.insert(v);
        }
        r
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Strategy {
    pub stages: Vec<Stage>,
    /// Budget the strategy was built under, if any.
    pub n_cap: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StrategyDocument {
    pub stages: Vec<StageDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cap: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StageDocument {
    pub stops: Vec<StopDocument>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StopDocument {
    pub node: String,
    pub impulse_index: usize,
}

impl Strategy {
    /// The strategy that never intervenes.
    pub fn never() -> Self {
        Self::default()
    }

    pub fn impulse_count_bound(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.iter().all(|s| s.stops.is_empty())
    }

    /// Decision at `v` given `fired` earlier impulses on its path.
    pub fn decision(&self, fired: usize, v: NodeIdx) -> Option<usize> {
        self.stages.get(fired).and_then(|s| s.stops.get(&v).copied())
    }

    /// Drops trailing empty stages.
    pub fn trimmed(mut self) -> Self {
        while self.stages.last().is_some_and(|s| s.stops.is_empty()) {
            self.stages.pop();
        }
        self
    }

    /// Keeps the first `n` stages.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            stages: self.stages.iter().take(n).cloned().collect(),
            n_cap: Some(self.n_cap.map_or(n, |c| c.min(n))),
        }
    }

    pub fn to_document(&self, tree: &ScenarioTree) -> StrategyDocument {
        StrategyDocument {
            stages: self
                .stages
                .iter()
                .map(|s| StageDocument {
                    stops: s
                        .stops
                        .iter()
                        .map(|(&v, &b)| StopDocument {
                            node: tree.node(v).id.clone(),
                            impulse_index: b,
                        })
                        .collect(),
                })
                .collect(),
            n_cap: self.n_cap,
        }
    }

    pub fn to_json(&self, tree: &ScenarioTree) -> String {
        serde_json::to_string_pretty(&self.to_document(tree)).expect("strategy documents always serialize")
    }

    pub fn from_document(doc: &StrategyDocument, tree: &ScenarioTree) -> Result<Self> {
        let mut stages = Vec::with_capacity(doc.stages.len());
        for (p, s) in doc.stages.iter().enumerate() {
            let mut stops = BTreeMap::new();
            for stop in &s.stops {
                let v = tree
                    .find(&stop.node)
                    .ok_or_else(|| Error::invalid(format!("stage {p}: unknown node {}", stop.node)))?;
                if stops.insert(v, stop.impulse_index).is_some() {
                    return Err(Error::invalid(format!("stage {p}: node {} listed twice", stop.node)));
                }
            }
            stages.push(Stage { stops });
        }
        Ok(Self {
            stages,
            n_cap: doc.n_cap,
        })
    }

    /// Checks the admissibility rules against a tree and problem:
    /// stages are antichains, impulse indices exist, stage 0 respects the
    /// earliest first-impulse time, every later stop lies at least Δ below
    /// a stop of the previous stage, and no more stages than `n_cap`.
    pub fn check_admissible(&self, tree: &ScenarioTree, spec: &ProblemSpec) -> Result<()> {
        let m = spec.impulses.len();
        if let Some(cap) = self.n_cap {
            if let Some(p) = self.stages.iter().rposition(|s| !s.stops.is_empty()) {
                if p >= cap {
                    return Err(Error::Inadmissible(format!(
                        "stage {p} exceeds the cap of {cap} impulses"
                    )));
                }
            }
        }
        for (p, stage) in self.stages.iter().enumerate() {
            for (&v, &b) in &stage.stops {
                if v >= tree.len() {
                    return Err(Error::Inadmissible(format!("stage {p}: node index {v} out of range")));
                }
                if b >= m {
                    return Err(Error::Inadmissible(format!(
                        "stage {p}: impulse index {b} at {} but only {m} impulses",
                        tree.node(v).id
                    )));
                }
            }
            if let Some((a, b)) = stage.region().ancestor_pair(tree) {
                return Err(Error::Inadmissible(format!(
                    "stage {p}: {} and its descendant {} both stop",
                    tree.node(a).id,
                    tree.node(b).id
                )));
            }
            for &v in stage.stops.keys() {
                let k = tree.time(v);
                if p == 0 {
                    if k < spec.first_impulse_min_time {
                        return Err(Error::Inadmissible(format!(
                            "first impulse at {} (time {k}) before time {}",
                            tree.node(v).id,
                            spec.first_impulse_min_time
                        )));
                    }
                    continue;
                }
                let prev = &self.stages[p - 1].stops;
                let anc = tree
                    .ancestry(v)
                    .into_iter()
                    .rev()
                    .skip(1)
                    .find(|u| prev.contains_key(u));
                match anc {
                    None => {
                        return Err(Error::Inadmissible(format!(
                            "stage {p}: {} has no stage-{} stop above it",
                            tree.node(v).id,
                            p - 1
                        )))
                    }
                    Some(u) if k < tree.time(u) + spec.delta => {
                        return Err(Error::Inadmissible(format!(
                            "impulses at {} (time {}) and {} (time {k}) are closer than Δ = {}",
                            tree.node(u).id,
                            tree.time(u),
                            tree.node(v).id,
                            spec.delta
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

pub fn load_strategy<R: Read>(mut source: R, tree: &ScenarioTree) -> Result<Strategy> {
    let mut buf = String::new();
    source.read_to_string(&mut buf)?;
    parse_strategy(&buf, tree)
}

pub fn parse_strategy(text: &str, tree: &ScenarioTree) -> Result<Strategy> {
    let doc: StrategyDocument = serde_json::from_str(text)?;
    Strategy::from_document(&doc, tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BoundedFunction;
    use crate::scenario::generate_walk_tree;

    fn stage(stops: &[(NodeIdx, usize)]) -> Stage {
        Stage {
            stops: stops.iter().copied().collect(),
        }
    }

    fn spec(delta: usize) -> ProblemSpec {
        ProblemSpec::new(1.0, delta, vec![vec![1.0]], vec![0.1], BoundedFunction::constant(1.0)).unwrap()
    }

    #[test]
    fn admissibility_rules() {
        let tree = generate_walk_tree(1, 4, &[(vec![1.0], 1.0)], 0).unwrap();
        let ok = Strategy {
            stages: vec![stage(&[(0, 0)]), stage(&[(2, 0)])],
            n_cap: None,
        };
        assert!(ok.check_admissible(&tree, &spec(2)).is_ok());
        let close = Strategy {
            stages: vec![stage(&[(0, 0)]), stage(&[(1, 0)])],
            n_cap: None,
        };
        assert!(matches!(
            close.check_admissible(&tree, &spec(2)),
            Err(Error::Inadmissible(_))
        ));
        let orphan = Strategy {
            stages: vec![stage(&[(3, 0)]), stage(&[(2, 0)])],
            n_cap: None,
        };
        assert!(orphan.check_admissible(&tree, &spec(1)).is_err());
        let chain_stage = Strategy {
            stages: vec![stage(&[(0, 0), (1, 0)])],
            n_cap: None,
        };
        assert!(chain_stage.check_admissible(&tree, &spec(1)).is_err());
        let bad_index = Strategy {
            stages: vec![stage(&[(0, 3)])],
            n_cap: None,
        };
        assert!(bad_index.check_admissible(&tree, &spec(1)).is_err());
        let over_cap = Strategy {
            n_cap: Some(1),
            ..ok.clone()
        };
        assert!(over_cap.check_admissible(&tree, &spec(2)).is_err());
        let mut late = spec(1);
        late.first_impulse_min_time = 1;
        assert!(ok.check_admissible(&tree, &late).is_err());
    }

    #[test]
    fn json_round_trip() {
        let tree = generate_walk_tree(2, 2, &[(vec![1.0], 0.5), (vec![-1.0], 0.5)], 0).unwrap();
        let s = Strategy {
            stages: vec![stage(&[(1, 0), (2, 0)]), stage(&[(3, 0)])],
            n_cap: Some(2),
        };
        let back = parse_strategy(&s.to_json(&tree), &tree).unwrap();
        assert_eq!(back, s);
        assert!(parse_strategy(r#"{"stages":[{"stops":[{"node":"zz","impulse_index":0}]}]}"#, &tree).is_err());
    }

    #[test]
    fn trimming_and_truncation() {
        let s = Strategy {
            stages: vec![stage(&[(0, 0)]), stage(&[(2, 0)]), Stage::default()],
            n_cap: None,
        };
        assert_eq!(s.clone().trimmed().stages.len(), 2);
        assert_eq!(s.truncated(1).stages.len(), 1);
        assert_eq!(s.decision(1, 2), Some(0));
        assert_eq!(s.decision(0, 2), None);
    }
}
