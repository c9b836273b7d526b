//! State-contingent contracts, agent bids and the welfare program.
//!
//! Quantities follow the consumption-positive convention: `x > 0` is a
//! right to withdraw, `x < 0` an obligation to inject. Prices are paid up
//! front, so an agent holding `x` pays `λ · x`.

mod bid;
mod program;

pub use bid::{
    AgentBid, BidFile, Constraint, ConstraintSense, Decision, DecisionKind, PiecewiseLinear, RiskFunctional, Term,
    TermTarget, UtilityCurve,
};
pub use program::{assemble_welfare, individual_lp, AgentVars, AssembledLp, BinaryRef, WelfareProgram, MAX_BINARIES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility slack used when an allocation is checked against a bid.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("invalid market dimensions: {0}")]
    InvalidDimensions(String),
    #[error("agent {agent}: {reason}")]
    InvalidBid { agent: String, reason: String },
    #[error("agent {agent} does not match the market dimensions: {reason}")]
    InconsistentDimensions { agent: String, reason: String },
    #[error("market has no agents")]
    EmptyMarket,
    #[error("bid file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketDimensions {
    pub nodes: usize,
    pub periods: usize,
    pub states: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_labels: Vec<String>,
}

impl MarketDimensions {
    pub fn new(nodes: usize, periods: usize, states: usize) -> Result<Self, MarketError> {
        let dims = Self {
            nodes,
            periods,
            states,
            state_labels: Vec::new(),
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, MarketError> {
        self.state_labels = labels;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if self.nodes == 0 || self.periods == 0 || self.states == 0 {
            return Err(MarketError::InvalidDimensions(format!(
                "nodes, periods and states must be positive, got {}x{}x{}",
                self.nodes, self.periods, self.states
            )));
        }
        if !self.state_labels.is_empty() && self.state_labels.len() != self.states {
            return Err(MarketError::InvalidDimensions(format!(
                "{} state labels for {} states",
                self.state_labels.len(),
                self.states
            )));
        }
        Ok(())
    }

    pub fn contracts(&self) -> usize {
        self.nodes * self.periods * self.states
    }

    pub fn index(&self, node: usize, period: usize, state: usize) -> usize {
        (node * self.periods + period) * self.states + state
    }

    /// Inverse of [`index`](Self::index).
    pub fn coordinates(&self, index: usize) -> (usize, usize, usize) {
        let state = index % self.states;
        let rest = index / self.states;
        (rest / self.periods, rest % self.periods, state)
    }

    pub fn contains(&self, node: usize, period: usize, state: usize) -> bool {
        node < self.nodes && period < self.periods && state < self.states
    }

    pub fn label(&self, state: usize) -> String {
        self.state_labels
            .get(state)
            .cloned()
            .unwrap_or_else(|| format!("state {}", state + 1))
    }

    fn shape(&self) -> String {
        format!("{}x{}x{}", self.nodes, self.periods, self.states)
    }
}

/// Dense array over (node, period, state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractGrid {
    pub nodes: usize,
    pub periods: usize,
    pub states: usize,
    pub values: Vec<f64>,
}

impl ContractGrid {
    pub fn zeros(dims: &MarketDimensions) -> Self {
        Self {
            nodes: dims.nodes,
            periods: dims.periods,
            states: dims.states,
            values: vec![0.0; dims.contracts()],
        }
    }

    pub fn from_values(dims: &MarketDimensions, values: Vec<f64>) -> Result<Self, MarketError> {
        if values.len() != dims.contracts() {
            return Err(MarketError::DimensionMismatch {
                expected: format!("{} entries", dims.contracts()),
                found: format!("{} entries", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MarketError::InvalidDimensions(format!("entry {i} is not finite")));
        }
        Ok(Self {
            values,
            ..Self::zeros(dims)
        })
    }

    pub fn dims(&self) -> MarketDimensions {
        MarketDimensions {
            nodes: self.nodes,
            periods: self.periods,
            states: self.states,
            state_labels: Vec::new(),
        }
    }

    pub fn get(&self, node: usize, period: usize, state: usize) -> f64 {
        self.values[(node * self.periods + period) * self.states + state]
    }

    pub fn set(&mut self, node: usize, period: usize, state: usize, value: f64) {
        self.values[(node * self.periods + period) * self.states + state] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_shape(&self, other: &ContractGrid) -> bool {
        self.nodes == other.nodes && self.periods == other.periods && self.states == other.states
    }

    fn expect_shape(&self, dims: &MarketDimensions) -> Result<(), MarketError> {
        if self.nodes != dims.nodes || self.periods != dims.periods || self.states != dims.states {
            return Err(MarketError::DimensionMismatch {
                expected: dims.shape(),
                found: self.dims().shape(),
            });
        }
        Ok(())
    }

    /// Entry-wise sum.
    pub fn add(&self, other: &ContractGrid) -> Result<ContractGrid, MarketError> {
        other.expect_shape(&self.dims())?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(ContractGrid { values, ..self.clone() })
    }
}

/// `Σ λ_nts x_nts`; positive means the holder of `x` pays.
pub fn payment(prices: &ContractGrid, x: &ContractGrid) -> Result<f64, MarketError> {
    x.expect_shape(&prices.dims())?;
    Ok(prices.values.iter().zip(&x.values).map(|(l, q)| l * q).sum())
}

/// Per-state utilities `u_i(z, x_s, ξ_s)`, or `None` if `(z, x)` is outside
/// the agent's feasible set.
pub fn state_utilities(bid: &AgentBid, x: &ContractGrid, z: &[f64]) -> Result<Option<Vec<f64>>, MarketError> {
    let dims = x.dims();
    if bid.beliefs.len() != dims.states {
        return Err(MarketError::DimensionMismatch {
            expected: format!("{} states", bid.beliefs.len()),
            found: format!("{} states", dims.states),
        });
    }
    if z.len() != bid.decisions.len() {
        return Err(MarketError::DimensionMismatch {
            expected: format!("{} decisions", bid.decisions.len()),
            found: format!("{} decisions", z.len()),
        });
    }
    bid.check_shape(&dims).map_err(|e| MarketError::DimensionMismatch {
        expected: format!("bid within {}", dims.shape()),
        found: e.to_string(),
    })?;

    for (d, &v) in bid.decisions.iter().zip(z) {
        let ok = match d.kind {
            DecisionKind::Binary => v == 0.0 || v == 1.0,
            DecisionKind::Continuous => {
                v >= d.lower_bound() - FEASIBILITY_TOL && v <= d.upper_bound() + FEASIBILITY_TOL
            }
        };
        if !ok {
            return Ok(None);
        }
    }

    let mut utilities = vec![0.0; dims.states];
    let mut covered = vec![false; dims.contracts()];
    for curve in &bid.curves {
        let c = dims.index(curve.node, curve.period, curve.state);
        covered[c] = true;
        match curve.curve.value(x.values[c], FEASIBILITY_TOL) {
            Some(v) => utilities[curve.state] += v,
            None => return Ok(None),
        }
    }
    if covered
        .iter()
        .zip(&x.values)
        .any(|(&cov, &q)| !cov && q.abs() > FEASIBILITY_TOL)
    {
        return Ok(None);
    }
    for constraint in &bid.constraints {
        let activity: f64 = constraint
            .terms
            .iter()
            .map(|t| {
                t.coef
                    * match t.target() {
                        TermTarget::Contract(n, p, s) => x.get(n, p, s),
                        TermTarget::Decision(j) => z[j],
                    }
            })
            .sum();
        let tol = FEASIBILITY_TOL * (1.0 + constraint.rhs.abs());
        let ok = match constraint.sense {
            ConstraintSense::Le => activity <= constraint.rhs + tol,
            ConstraintSense::Ge => activity >= constraint.rhs - tol,
            ConstraintSense::Eq => (activity - constraint.rhs).abs() <= tol,
        };
        if !ok {
            return Ok(None);
        }
    }
    for (j, d) in bid.decisions.iter().enumerate() {
        for (s, u) in utilities.iter_mut().enumerate() {
            *u += d.utility_in(s) * z[j];
        }
    }
    Ok(Some(utilities))
}

/// `F_i` applied to the per-state utilities; `-∞` when infeasible.
pub fn valuation(bid: &AgentBid, x: &ContractGrid, z: &[f64]) -> Result<f64, MarketError> {
    let Some(u) = state_utilities(bid, x, z)? else {
        return Ok(f64::NEG_INFINITY);
    };
    Ok(bid.functional.apply(&u, &bid.beliefs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims2() -> MarketDimensions {
        MarketDimensions::new(1, 1, 2).unwrap()
    }

    fn grid(values: &[f64]) -> ContractGrid {
        ContractGrid::from_values(&dims2(), values.to_vec()).unwrap()
    }

    /// The two-state thermal plant: 10 z <= -x_s <= 20 z at 30 per MWh.
    fn plant(functional: RiskFunctional) -> AgentBid {
        let mut bid = AgentBid::new("plant", vec![0.5, 0.5], functional);
        bid.decisions.push(Decision::binary("online", 2));
        for s in 0..2 {
            bid.curves.push(UtilityCurve::new(0, 0, s, vec![-20.0, 0.0], vec![30.0]).unwrap());
            bid.constraints
                .push(Constraint::new(vec![Term::contract(0, 0, s, 1.0), Term::decision(0, 20.0)], ConstraintSense::Ge, 0.0));
            bid.constraints
                .push(Constraint::new(vec![Term::contract(0, 0, s, 1.0), Term::decision(0, 10.0)], ConstraintSense::Le, 0.0));
        }
        bid
    }

    #[test]
    fn wind_farm_and_load_payments() {
        let prices = grid(&[10.0, 20.0]);
        assert_eq!(payment(&prices, &grid(&[-10.0, -5.0])).unwrap(), -200.0);
        assert_eq!(payment(&prices, &grid(&[10.0, 10.0])).unwrap(), 300.0);
        assert_eq!(payment(&prices, &grid(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn payment_rejects_shape_mismatch() {
        let three = ContractGrid::zeros(&MarketDimensions::new(1, 1, 3).unwrap());
        assert!(matches!(
            payment(&grid(&[1.0, 2.0]), &three),
            Err(MarketError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn plant_expected_cost_and_profit() {
        let bid = plant(RiskFunctional::Expectation);
        let x = grid(&[-10.0, -20.0]);
        let v = valuation(&bid, &x, &[1.0]).unwrap();
        assert_eq!(v, -450.0);
        let received = -payment(&grid(&[10.0, 20.0]), &x).unwrap();
        assert_eq!(received, 500.0);
        assert_eq!(v + received, 50.0);
    }

    #[test]
    fn plant_worst_case_offline_is_zero() {
        let bid = plant(RiskFunctional::WorstCase);
        assert_eq!(valuation(&bid, &grid(&[0.0, 0.0]), &[0.0]).unwrap(), 0.0);
        // the other worst-case optimum: online at minimum output
        let x = grid(&[-10.0, -10.0]);
        let profit = valuation(&bid, &x, &[1.0]).unwrap() - payment(&grid(&[10.0, 20.0]), &x).unwrap();
        assert_eq!(profit, 0.0);
    }

    #[test]
    fn infeasible_allocations_are_minus_infinity() {
        let bid = plant(RiskFunctional::Expectation);
        // below minimum output while online
        assert_eq!(valuation(&bid, &grid(&[-5.0, -20.0]), &[1.0]).unwrap(), f64::NEG_INFINITY);
        // producing while offline
        assert_eq!(valuation(&bid, &grid(&[-10.0, 0.0]), &[0.0]).unwrap(), f64::NEG_INFINITY);
        // fractional commitment
        assert_eq!(valuation(&bid, &grid(&[-10.0, -10.0]), &[0.5]).unwrap(), f64::NEG_INFINITY);
        // outside the curve domain
        assert_eq!(valuation(&bid, &grid(&[-25.0, -10.0]), &[1.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn uncovered_contracts_must_be_zero() {
        let mut bid = AgentBid::new("w", vec![0.5, 0.5], RiskFunctional::Expectation);
        bid.curves.push(UtilityCurve::new(0, 0, 0, vec![-10.0, 0.0], vec![0.0]).unwrap());
        assert_eq!(valuation(&bid, &grid(&[-4.0, 0.0]), &[]).unwrap(), 0.0);
        assert_eq!(valuation(&bid, &grid(&[-4.0, 1.0]), &[]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn valuation_dimension_errors() {
        let bid = plant(RiskFunctional::Expectation);
        let three = ContractGrid::zeros(&MarketDimensions::new(1, 1, 3).unwrap());
        assert!(matches!(valuation(&bid, &three, &[0.0]), Err(MarketError::DimensionMismatch { .. })));
        assert!(matches!(valuation(&bid, &grid(&[0.0, 0.0]), &[]), Err(MarketError::DimensionMismatch { .. })));
    }

    #[test]
    fn grid_indexing_round_trips() {
        let dims = MarketDimensions::new(2, 3, 4).unwrap();
        for i in 0..dims.contracts() {
            let (n, t, s) = dims.coordinates(i);
            assert_eq!(dims.index(n, t, s), i);
        }
        assert!(MarketDimensions::new(0, 1, 1).is_err());
        assert!(ContractGrid::from_values(&dims, vec![0.0; 3]).is_err());
    }

    fn concave_bid(beliefs: Vec<f64>, slopes: [f64; 2], functional: RiskFunctional) -> AgentBid {
        let mut bid = AgentBid::new("a", beliefs, functional);
        let (hi, lo) = if slopes[0] >= slopes[1] { (slopes[0], slopes[1]) } else { (slopes[1], slopes[0]) };
        for s in 0..2 {
            bid.curves
                .push(UtilityCurve::new(0, 0, s, vec![-5.0, 0.0, 5.0], vec![hi, lo]).unwrap());
        }
        bid
    }

    proptest! {
        #[test]
        fn expectation_is_linear_in_beliefs(
            p in 0.0f64..1.0, q in 0.0f64..1.0, a in 0.0f64..1.0,
            x1 in -5.0f64..5.0, x2 in -5.0f64..5.0, s1 in 0.0f64..50.0, s2 in 0.0f64..50.0,
        ) {
            let x = grid(&[x1, x2]);
            let v = |pi: f64| valuation(
                &concave_bid(vec![pi, 1.0 - pi], [s1, s2], RiskFunctional::Expectation), &x, &[]).unwrap();
            let mixed = v(a * p + (1.0 - a) * q);
            let combo = a * v(p) + (1.0 - a) * v(q);
            prop_assert!((mixed - combo).abs() <= 1e-9 * (1.0 + combo.abs()));
        }

        #[test]
        fn worst_case_never_exceeds_expectation(
            p in 0.0f64..1.0, x1 in -5.0f64..5.0, x2 in -5.0f64..5.0,
            s1 in 0.0f64..50.0, s2 in 0.0f64..50.0,
        ) {
            let x = grid(&[x1, x2]);
            let e = valuation(&concave_bid(vec![p, 1.0 - p], [s1, s2], RiskFunctional::Expectation), &x, &[]).unwrap();
            let w = valuation(&concave_bid(vec![p, 1.0 - p], [s1, s2], RiskFunctional::WorstCase), &x, &[]).unwrap();
            prop_assert!(w <= e + 1e-9);
        }

        #[test]
        fn payment_is_bilinear(
            l in proptest::collection::vec(-100.0f64..100.0, 6),
            x in proptest::collection::vec(-20.0f64..20.0, 6),
            y in proptest::collection::vec(-20.0f64..20.0, 6),
            c in -3.0f64..3.0,
        ) {
            let dims = MarketDimensions::new(1, 3, 2).unwrap();
            let lg = ContractGrid::from_values(&dims, l.clone()).unwrap();
            let xg = ContractGrid::from_values(&dims, x.clone()).unwrap();
            let yg = ContractGrid::from_values(&dims, y.clone()).unwrap();
            let sum = payment(&lg, &xg.add(&yg).unwrap()).unwrap();
            let split = payment(&lg, &xg).unwrap() + payment(&lg, &yg).unwrap();
            prop_assert!((sum - split).abs() <= 1e-9 * (1.0 + split.abs()));
            let scaled = ContractGrid::from_values(&dims, l.iter().map(|v| c * v).collect()).unwrap();
            let lhs = payment(&scaled, &xg).unwrap();
            prop_assert!((lhs - c * payment(&lg, &xg).unwrap()).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
