//! Problem data: discount, delay, impulse set, payoffs and utility mode.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::expr::{BoundedFunction, BoundedFunctionDocument};
use crate::scenario::ScenarioTree;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    #[default]
    RiskNeutral,
    RiskSensitive {
        rho: f64,
    },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::RiskNeutral => "risk_neutral",
            Mode::RiskSensitive { .. } => "risk_sensitive",
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            Mode::RiskNeutral => None,
            Mode::RiskSensitive { rho } => Some(*rho),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub theta: f64,
    pub delta: usize,
    pub impulses: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub g: BoundedFunction,
    /// Expected tree depth, when the document pins one.
    pub horizon: Option<usize>,
    pub mode: Mode,
    /// Earliest time at which the first impulse may be decided (0 by default).
    pub first_impulse_min_time: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub theta: f64,
    pub delta: usize,
    pub impulses: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub g: BoundedFunctionDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub first_impulse_min_time: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl ProblemSpec {
    /// Risk-neutral problem with no pinned horizon.
    pub fn new(theta: f64, delta: usize, impulses: Vec<Vec<f64>>, psi: Vec<f64>, g: BoundedFunction) -> Result<Self> {
        let spec = Self {
            theta,
            delta,
            impulses,
            psi,
            g,
            horizon: None,
            mode: Mode::RiskNeutral,
            first_impulse_min_time: 0,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn with_mode(mut self, mode: Mode) -> Result<Self> {
        self.mode = mode;
        self.check()?;
        Ok(self)
    }

    pub fn risk_sensitive(self, rho: f64) -> Result<Self> {
        self.with_mode(Mode::RiskSensitive { rho })
    }

    pub fn risk_neutral(mut self) -> Self {
        self.mode = Mode::RiskNeutral;
        self
    }

    pub fn from_document(doc: &ProblemDocument) -> Result<Self> {
        let spec = Self {
            theta: doc.theta,
            delta: doc.delta,
            impulses: doc.impulses.clone(),
            psi: doc.psi.clone(),
            g: BoundedFunction::try_from(&doc.g)?,
            horizon: doc.horizon,
            mode: doc.mode,
            first_impulse_min_time: doc.first_impulse_min_time,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn to_document(&self) -> ProblemDocument {
        ProblemDocument {
            theta: self.theta,
            delta: self.delta,
            impulses: self.impulses.clone(),
            psi: self.psi.clone(),
            g: self.g.to_document(),
            horizon: self.horizon,
            mode: self.mode,
            first_impulse_min_time: self.first_impulse_min_time,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("problem documents always serialize")
    }

    fn check(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            v.push(Violation::new("theta", "must be finite and > 0"));
        }
        if self.delta < 1 {
            v.push(Violation::new("delta", "must be ≥ 1"));
        }
        if self.impulses.is_empty() {
            v.push(Violation::new("impulses", "must be non-empty"));
        }
        if let Some(first) = self.impulses.first() {
            if first.is_empty() || self.impulses.iter().any(|u| u.len() != first.len()) {
                v.push(Violation::new("impulses", "must share one non-zero dimension"));
            }
        }
        if self.impulses.iter().flatten().any(|x| !x.is_finite()) {
            v.push(Violation::new("impulses", "entries must be finite"));
        }
        if self.psi.len() != self.impulses.len() {
            v.push(Violation::new(
                "psi",
                format!("has {} entries for {} impulses", self.psi.len(), self.impulses.len()),
            ));
        }
        if self.psi.iter().any(|x| !x.is_finite()) {
            v.push(Violation::new("psi", "entries must be finite"));
        }
        if let Mode::RiskSensitive { rho } = self.mode {
            if !(rho.is_finite() && rho != 0.0) {
                v.push(Violation::new("mode.rho", "must be finite and non-zero"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Checks the problem against a tree: dimensions, horizon, and the
    /// coordinates read by `g`.
    pub fn check_tree(&self, tree: &ScenarioTree) -> Result<()> {
        let mut v = Vec::new();
        let d = tree.dim();
        if self.impulses.iter().any(|u| u.len() != d) {
            v.push(Violation::new(
                "impulses",
                format!("dimension differs from tree dim {d}"),
            ));
        }
        if self.g.arity() > d {
            v.push(Violation::new(
                "g",
                format!("reads x{} but tree dim is {d}", self.g.arity() - 1),
            ));
        }
        if let Some(h) = self.horizon {
            if h != tree.depth() {
                v.push(Violation::new(
                    "horizon",
                    format!("is {h} but tree depth is {}", tree.depth()),
                ));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn dim(&self) -> usize {
        self.impulses.first().map_or(0, Vec::len)
    }

    pub fn g_norm(&self) -> f64 {
        self.g.bound()
    }

    pub fn psi_norm(&self) -> f64 {
        self.psi.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `1 / (1 - e^{-θ})`.
    pub fn c_theta(&self) -> f64 {
        1.0 / (1.0 - (-self.theta).exp())
    }

    pub fn discount(&self, k: usize) -> f64 {
        (-self.theta * k as f64).exp()
    }

    /// ρ in risk-sensitive mode, 1 otherwise; payoffs are pre-multiplied by it.
    pub fn scale(&self) -> f64 {
        self.mode.rho().unwrap_or(1.0)
    }

    /// Limit-value constant: `c_θ‖g‖ + e^{-θΔ}‖Ψ‖ / (1 - e^{-θΔ})`.
    pub fn limit_constant(&self) -> f64 {
        let d = self.delta as f64;
        self.c_theta() * self.g_norm() + (-self.theta * d).exp() * self.psi_norm() / (1.0 - (-self.theta * d).exp())
    }

    /// Default impulse cap for a tree of depth `t`: `⌈t/Δ⌉ + 1`.
    pub fn default_n_cap(&self, t: usize) -> usize {
        t.div_ceil(self.delta) + 1
    }
}

pub fn load_problem<R: Read>(mut source: R) -> Result<ProblemSpec> {
    let mut buf = String::new();
    source.read_to_string(&mut buf)?;
    parse_problem(&buf)
}

pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let doc: ProblemDocument = serde_json::from_str(text)?;
    ProblemSpec::from_document(&doc)
}
