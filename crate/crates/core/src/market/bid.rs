//! The JSON bid language: piecewise-linear concave utilities per contract,
//! commitment decisions and sparse linear linking constraints.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MarketDimensions, MarketError};

const BELIEF_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskFunctional {
    Expectation,
    WorstCase,
}

impl RiskFunctional {
    pub fn apply(&self, utilities: &[f64], beliefs: &[f64]) -> f64 {
        match self {
            RiskFunctional::Expectation => utilities.iter().zip(beliefs).map(|(u, p)| u * p).sum(),
            RiskFunctional::WorstCase => utilities.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Concave piecewise-linear function with `f(0) = 0`.
///
/// `breakpoints` are strictly increasing and bracket 0; `slopes[k]` applies on
/// `[breakpoints[k], breakpoints[k + 1]]` and is non-increasing in `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self, String> {
        let f = Self { breakpoints, slopes };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), String> {
        let b = &self.breakpoints;
        if b.len() < 2 || self.slopes.len() + 1 != b.len() {
            return Err(format!(
                "{} breakpoints need {} slopes, got {}",
                b.len(),
                b.len().saturating_sub(1),
                self.slopes.len()
            ));
        }
        if b.iter().chain(&self.slopes).any(|v| !v.is_finite()) {
            return Err("breakpoints and slopes must be finite".into());
        }
        if b.windows(2).any(|w| w[0] >= w[1]) {
            return Err("breakpoints must be strictly increasing".into());
        }
        if self.slopes.windows(2).any(|w| w[1] > w[0]) {
            return Err("slopes must be non-increasing".into());
        }
        if b[0] > 0.0 || b[b.len() - 1] < 0.0 {
            return Err(format!("domain [{}, {}] does not contain 0", b[0], b[b.len() - 1]));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn upper(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    /// Pieces of the domain split at 0: `(start, end, slope)` with either
    /// `end <= 0` or `start >= 0`.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for (k, &slope) in self.slopes.iter().enumerate() {
            let (a, b) = (self.breakpoints[k], self.breakpoints[k + 1]);
            if a < 0.0 && b > 0.0 {
                out.push((a, 0.0, slope));
                out.push((0.0, b, slope));
            } else {
                out.push((a, b, slope));
            }
        }
        out
    }

    /// `∫_0^x f'`; `None` more than `tol` outside the domain.
    pub fn value(&self, x: f64, tol: f64) -> Option<f64> {
        if !x.is_finite() || x < self.lower() - tol || x > self.upper() + tol {
            return None;
        }
        let x = x.clamp(self.lower(), self.upper());
        let mut total = 0.0;
        for (a, b, slope) in self.segments() {
            if b <= 0.0 {
                // portion of [a, b] lying in [x, 0]
                let len = (b - a.max(x)).max(0.0);
                total -= slope * len;
            } else {
                let len = (b.min(x) - a).max(0.0);
                total += slope * len;
            }
        }
        Some(total)
    }
}

/// Utility of one contract `(node, period, state)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityCurve {
    pub node: usize,
    pub period: usize,
    pub state: usize,
    #[serde(flatten)]
    pub curve: PiecewiseLinear,
}

impl UtilityCurve {
    pub fn new(node: usize, period: usize, state: usize, breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self, String> {
        Ok(Self {
            node,
            period,
            state,
            curve: PiecewiseLinear::new(breakpoints, slopes)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionKind {
    Binary,
    Continuous,
}

/// An advance decision `z_ij`, contributing `utility[s] * z_ij` to the
/// utility in state `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub name: String,
    pub kind: DecisionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub utility: Vec<f64>,
}

impl Decision {
    pub fn binary(name: &str, states: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: DecisionKind::Binary,
            lower: None,
            upper: None,
            utility: vec![0.0; states],
        }
    }

    pub fn continuous(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: DecisionKind::Continuous,
            lower: Some(lower),
            upper: Some(upper),
            utility: Vec::new(),
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match self.kind {
            DecisionKind::Binary => 0.0,
            DecisionKind::Continuous => self.lower.unwrap_or(0.0),
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match self.kind {
            DecisionKind::Binary => 1.0,
            DecisionKind::Continuous => self.upper.unwrap_or(0.0),
        }
    }

    pub fn utility_in(&self, state: usize) -> f64 {
        self.utility.get(state).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintSense {
    Le,
    Ge,
    Eq,
}

/// One coefficient; exactly one of `contract` and `decision` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<usize>,
    pub coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermTarget {
    Contract(usize, usize, usize),
    Decision(usize),
}

impl Term {
    pub fn contract(node: usize, period: usize, state: usize, coef: f64) -> Self {
        Self {
            contract: Some([node, period, state]),
            decision: None,
            coef,
        }
    }

    pub fn decision(index: usize, coef: f64) -> Self {
        Self {
            contract: None,
            decision: Some(index),
            coef,
        }
    }

    /// Panics on a term that failed validation.
    pub fn target(&self) -> TermTarget {
        match (self.contract, self.decision) {
            (Some([n, t, s]), None) => TermTarget::Contract(n, t, s),
            (None, Some(j)) => TermTarget::Decision(j),
            _ => panic!("term must reference exactly one variable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub terms: Vec<Term>,
    pub sense: ConstraintSense,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(terms: Vec<Term>, sense: ConstraintSense, rhs: f64) -> Self {
        Self { terms, sense, rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBid {
    pub id: String,
    pub beliefs: Vec<f64>,
    pub functional: RiskFunctional,
    #[serde(default)]
    pub decisions: Vec<Decision>,
    #[serde(default)]
    pub curves: Vec<UtilityCurve>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

impl AgentBid {
    pub fn new(id: &str, beliefs: Vec<f64>, functional: RiskFunctional) -> Self {
        Self {
            id: id.to_string(),
            beliefs,
            functional,
            decisions: Vec::new(),
            curves: Vec::new(),
            constraints: Vec::new(),
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> MarketError {
        MarketError::InvalidBid {
            agent: self.id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks that every index refers to a contract, state or decision of
    /// `dims` and this bid.
    pub fn check_shape(&self, dims: &MarketDimensions) -> Result<(), MarketError> {
        let inconsistent = |reason: String| MarketError::InconsistentDimensions {
            agent: self.id.clone(),
            reason,
        };
        if self.beliefs.len() != dims.states {
            return Err(inconsistent(format!("{} beliefs for {} states", self.beliefs.len(), dims.states)));
        }
        for c in &self.curves {
            if !dims.contains(c.node, c.period, c.state) {
                return Err(inconsistent(format!("curve on contract ({}, {}, {})", c.node, c.period, c.state)));
            }
        }
        for d in &self.decisions {
            if !d.utility.is_empty() && d.utility.len() != dims.states {
                return Err(inconsistent(format!(
                    "decision {} has {} utility entries for {} states",
                    d.name,
                    d.utility.len(),
                    dims.states
                )));
            }
        }
        for (r, row) in self.constraints.iter().enumerate() {
            for t in &row.terms {
                match (t.contract, t.decision) {
                    (Some([n, p, s]), None) if !dims.contains(n, p, s) => {
                        return Err(inconsistent(format!("constraint {r} references contract ({n}, {p}, {s})")))
                    }
                    (None, Some(j)) if j >= self.decisions.len() => {
                        return Err(self.invalid(format!("constraint {r} references missing decision {j}")))
                    }
                    (Some(_), None) | (None, Some(_)) => {}
                    _ => return Err(self.invalid(format!("constraint {r} has a term without exactly one variable"))),
                }
            }
        }
        Ok(())
    }

    /// Full validation against the market dimensions.
    pub fn validate(&self, dims: &MarketDimensions) -> Result<(), MarketError> {
        self.check_shape(dims)?;
        if self.beliefs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(self.invalid("beliefs must be non-negative"));
        }
        let total: f64 = self.beliefs.iter().sum();
        if (total - 1.0).abs() > BELIEF_SUM_TOL {
            return Err(self.invalid(format!("beliefs sum to {total}")));
        }
        let mut seen = HashSet::new();
        for c in &self.curves {
            if !seen.insert((c.node, c.period, c.state)) {
                return Err(self.invalid(format!("two curves on contract ({}, {}, {})", c.node, c.period, c.state)));
            }
            c.curve
                .validate()
                .map_err(|e| self.invalid(format!("curve ({}, {}, {}): {e}", c.node, c.period, c.state)))?;
        }
        for d in &self.decisions {
            if d.utility.iter().any(|v| !v.is_finite()) {
                return Err(self.invalid(format!("decision {} has a non-finite utility", d.name)));
            }
            if d.kind == DecisionKind::Continuous {
                let (lo, hi) = (d.lower.unwrap_or(f64::NAN), d.upper.unwrap_or(f64::NAN));
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(self.invalid(format!("continuous decision {} needs finite bounds lower <= upper", d.name)));
                }
            }
        }
        for (r, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() || row.terms.iter().any(|t| !t.coef.is_finite()) {
                return Err(self.invalid(format!("constraint {r} has a non-finite coefficient")));
            }
        }
        Ok(())
    }

    pub fn binary_decisions(&self) -> Vec<usize> {
        self.decisions
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == DecisionKind::Binary)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn curve_on(&self, node: usize, period: usize, state: usize) -> Option<&UtilityCurve> {
        self.curves
            .iter()
            .find(|c| c.node == node && c.period == period && c.state == state)
    }
}

/// Top-level bid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidFile {
    pub dimensions: MarketDimensions,
    pub agents: Vec<AgentBid>,
}

impl BidFile {
    pub fn parse(text: &str) -> Result<Self, MarketError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, MarketError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bid file serializes")
    }
}
