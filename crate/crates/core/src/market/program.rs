//! Assembly of the central welfare program `max Σ_i F_i(u_i)` subject to
//! one balance row `Σ_i x_i,nts = 0` per contract.

use serde::Serialize;

use super::{AgentBid, ContractGrid, DecisionKind, MarketDimensions, MarketError, RiskFunctional, TermTarget};
use crate::clearing::lp::{Cmp, LinearProgram, Sense};

/// Largest number of binaries the enumeration layer accepts.
pub const MAX_BINARIES: usize = 20;

/// A binary decision, by agent and decision index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinaryRef {
    pub agent: usize,
    pub decision: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareProgram {
    pub dims: MarketDimensions,
    pub bids: Vec<AgentBid>,
    /// In agent order, then decision order.
    pub binaries: Vec<BinaryRef>,
}

pub fn assemble_welfare(bids: Vec<AgentBid>, dims: MarketDimensions) -> Result<WelfareProgram, MarketError> {
    dims.validate()?;
    if bids.is_empty() {
        return Err(MarketError::EmptyMarket);
    }
    for bid in &bids {
        bid.validate(&dims)?;
    }
    let binaries = bids
        .iter()
        .enumerate()
        .flat_map(|(agent, bid)| {
            bid.binary_decisions()
                .into_iter()
                .map(move |decision| BinaryRef { agent, decision })
        })
        .collect();
    Ok(WelfareProgram { dims, bids, binaries })
}

/// LP column indices of one agent's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentVars {
    /// Per contract; `None` where the agent has no curve (quantity fixed at 0).
    pub x: Vec<Option<usize>>,
    pub z: Vec<usize>,
    /// Epigraph variable of a worst-case agent.
    pub eta: Option<usize>,
}

impl AgentVars {
    pub fn allocation(&self, dims: &MarketDimensions, primal: &[f64]) -> ContractGrid {
        let values = self.x.iter().map(|v| v.map_or(0.0, |j| primal[j]) + 0.0).collect();
        ContractGrid::from_values(dims, values).expect("allocation has the grid shape")
    }

    pub fn decisions(&self, primal: &[f64]) -> Vec<f64> {
        self.z.iter().map(|&j| primal[j] + 0.0).collect()
    }
}

/// A fixed-commitment LP together with its column map.
#[derive(Debug, Clone)]
pub struct AssembledLp {
    pub lp: LinearProgram,
    /// One row per contract, indexed like the contract grid; empty for an
    /// individual (best-response) program.
    pub balance_rows: Vec<usize>,
    pub agents: Vec<AgentVars>,
}

impl WelfareProgram {
    pub fn num_binaries(&self) -> usize {
        self.binaries.len()
    }

    /// Number of binary assignments the enumeration layer visits.
    pub fn enumeration_cells(&self) -> u64 {
        1u64 << self.binaries.len()
    }

    /// The same market with every agent's beliefs replaced.
    pub fn with_common_beliefs(&self, beliefs: &[f64]) -> Result<WelfareProgram, MarketError> {
        let bids = self
            .bids
            .iter()
            .map(|b| AgentBid {
                beliefs: beliefs.to_vec(),
                ..b.clone()
            })
            .collect();
        assemble_welfare(bids, self.dims.clone())
    }

    /// Welfare LP with binaries fixed to `assignment` (one entry per
    /// catalogued binary).
    pub fn fixed_lp(&self, assignment: &[bool]) -> AssembledLp {
        assert_eq!(assignment.len(), self.binaries.len(), "one value per binary");
        let mut lp = LinearProgram::new(Sense::Maximize);
        let mut agents = Vec::with_capacity(self.bids.len());
        let mut cursor = 0;
        for (a, bid) in self.bids.iter().enumerate() {
            let mut fixed = vec![None; bid.decisions.len()];
            while cursor < self.binaries.len() && self.binaries[cursor].agent == a {
                fixed[self.binaries[cursor].decision] = Some(if assignment[cursor] { 1.0 } else { 0.0 });
                cursor += 1;
            }
            agents.push(add_agent_block(&mut lp, bid, &self.dims, &fixed, None));
        }
        let balance_rows = (0..self.dims.contracts())
            .map(|c| {
                let coeffs = agents.iter().filter_map(|v| v.x[c]).map(|j| (j, 1.0)).collect();
                lp.add_row(coeffs, Cmp::Eq, 0.0)
            })
            .collect();
        AssembledLp {
            lp,
            balance_rows,
            agents,
        }
    }
}

/// Individual program `max F_i(u_i) - λ·x_i` with the agent's binaries fixed.
pub fn individual_lp(bid: &AgentBid, dims: &MarketDimensions, fixed: &[Option<f64>], prices: &ContractGrid) -> AssembledLp {
    let mut lp = LinearProgram::new(Sense::Maximize);
    let vars = add_agent_block(&mut lp, bid, dims, fixed, Some(prices));
    AssembledLp {
        lp,
        balance_rows: Vec::new(),
        agents: vec![vars],
    }
}

/// Adds one agent's columns and rows. `fixed[j]` pins a decision (used for
/// binaries); `prices` subtracts `λ · x` from the objective.
pub(crate) fn add_agent_block(
    lp: &mut LinearProgram,
    bid: &AgentBid,
    dims: &MarketDimensions,
    fixed: &[Option<f64>],
    prices: Option<&ContractGrid>,
) -> AgentVars {
    let states = dims.states;
    // per-state utility as a linear form over LP columns
    let mut utility: Vec<Vec<(usize, f64)>> = vec![Vec::new(); states];

    let z: Vec<usize> = bid
        .decisions
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let (lo, hi) = match (fixed.get(j).copied().flatten(), d.kind) {
                (Some(v), _) => (v, v),
                (None, DecisionKind::Binary) => (0.0, 1.0),
                (None, DecisionKind::Continuous) => (d.lower_bound(), d.upper_bound()),
            };
            let col = lp.add_var(lo, hi, 0.0);
            for (s, u) in utility.iter_mut().enumerate() {
                let c = d.utility_in(s);
                if c != 0.0 {
                    u.push((col, c));
                }
            }
            col
        })
        .collect();

    let mut x = vec![None; dims.contracts()];
    for curve in &bid.curves {
        let c = dims.index(curve.node, curve.period, curve.state);
        let f = &curve.curve;
        let col = lp.add_var(f.lower(), f.upper(), 0.0);
        x[c] = Some(col);
        let segments = f.segments();
        if let [(a, b, slope)] = segments[..] {
            // a single piece with 0 as an endpoint: u = slope * x
            debug_assert!(a == 0.0 || b == 0.0);
            utility[curve.state].push((col, slope));
        } else {
            // x = Σ right pieces - Σ left pieces
            let mut link = vec![(col, 1.0)];
            for (a, b, slope) in segments {
                let piece = lp.add_var(0.0, b - a, 0.0);
                if b <= 0.0 {
                    link.push((piece, 1.0));
                    utility[curve.state].push((piece, -slope));
                } else {
                    link.push((piece, -1.0));
                    utility[curve.state].push((piece, slope));
                }
            }
            lp.add_row(link, Cmp::Eq, 0.0);
        }
    }

    let mut eta = None;
    match bid.functional {
        RiskFunctional::Expectation => {
            for (s, terms) in utility.iter().enumerate() {
                for &(col, coef) in terms {
                    lp.objective[col] += bid.beliefs[s] * coef;
                }
            }
        }
        RiskFunctional::WorstCase => {
            let e = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
            for terms in &utility {
                let mut row = vec![(e, 1.0)];
                row.extend(terms.iter().map(|&(col, coef)| (col, -coef)));
                lp.add_row(row, Cmp::Le, 0.0);
            }
            eta = Some(e);
        }
    }

    if let Some(prices) = prices {
        for (c, col) in x.iter().enumerate() {
            if let Some(col) = col {
                lp.objective[*col] -= prices.values[c];
            }
        }
    }

    for row in &bid.constraints {
        let coeffs = row
            .terms
            .iter()
            .filter_map(|t| match t.target() {
                TermTarget::Contract(n, p, s) => x[dims.index(n, p, s)].map(|col| (col, t.coef)),
                TermTarget::Decision(j) => Some((z[j], t.coef)),
            })
            .collect();
        let cmp = match row.sense {
            super::ConstraintSense::Le => Cmp::Le,
            super::ConstraintSense::Ge => Cmp::Ge,
            super::ConstraintSense::Eq => Cmp::Eq,
        };
        lp.add_row(coeffs, cmp, row.rhs);
    }

    AgentVars { x, z, eta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{Constraint, ConstraintSense, Decision, Term, UtilityCurve};

    fn dims2() -> MarketDimensions {
        MarketDimensions::new(1, 1, 2).unwrap()
    }

    fn curve(s: usize, lo: f64, hi: f64, slope: f64) -> UtilityCurve {
        UtilityCurve::new(0, 0, s, vec![lo, hi], vec![slope]).unwrap()
    }

    fn committed(id: &str) -> AgentBid {
        let mut bid = AgentBid::new(id, vec![0.5, 0.5], RiskFunctional::Expectation);
        bid.decisions.push(Decision::binary("on", 2));
        bid.curves.push(curve(0, -5.0, 0.0, 10.0));
        bid.constraints.push(Constraint::new(
            vec![Term::contract(0, 0, 0, 1.0), Term::decision(0, 5.0)],
            ConstraintSense::Ge,
            0.0,
        ));
        bid
    }

    #[test]
    fn price_formation_program_shape() {
        let mut wind = AgentBid::new("wind", vec![0.6, 0.4], RiskFunctional::Expectation);
        wind.curves.push(curve(0, -10.0, 0.0, 0.0));
        wind.curves.push(curve(1, -5.0, 0.0, 0.0));
        let mut load = AgentBid::new("load", vec![0.6, 0.4], RiskFunctional::Expectation);
        load.curves.push(curve(0, 0.0, 11.0, 100.0));
        load.curves.push(curve(1, 0.0, 11.0, 100.0));
        let mut gen = AgentBid::new("generator", vec![0.6, 0.4], RiskFunctional::Expectation);
        gen.decisions.push(Decision::continuous("z3", -5.0, 0.0));
        for s in 0..2 {
            gen.curves.push(curve(s, -5.0, 0.0, 50.0));
            gen.constraints.push(Constraint::new(
                vec![Term::contract(0, 0, s, 1.0), Term::decision(0, -1.0)],
                ConstraintSense::Eq,
                0.0,
            ));
        }
        let program = assemble_welfare(vec![wind, load, gen], dims2()).unwrap();
        assert_eq!(program.num_binaries(), 0);
        let assembled = program.fixed_lp(&[]);
        assert_eq!(assembled.balance_rows.len(), 2);
        // 6 quantities + z3
        assert_eq!(assembled.lp.num_vars(), 7);
        let x21 = assembled.agents[1].x[0].unwrap();
        assert_eq!((assembled.lp.lower[x21], assembled.lp.upper[x21]), (0.0, 11.0));
        assert!((assembled.lp.objective[x21] - 60.0).abs() < 1e-12);
        let x11 = assembled.agents[0].x[0].unwrap();
        assert_eq!(assembled.lp.lower[x11], -10.0);
    }

    #[test]
    fn single_agent_balance_forces_zero_trade() {
        let mut load = AgentBid::new("load", vec![0.5, 0.5], RiskFunctional::Expectation);
        load.curves.push(curve(0, 0.0, 11.0, 100.0));
        let program = assemble_welfare(vec![load], dims2()).unwrap();
        let assembled = program.fixed_lp(&[]);
        let sol = crate::clearing::lp::solve_lp(&assembled.lp).unwrap();
        assert_eq!(assembled.agents[0].allocation(&program.dims, &sol.primal).values, vec![0.0, 0.0]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn binaries_are_catalogued() {
        let program = assemble_welfare(vec![committed("a"), committed("b")], dims2()).unwrap();
        assert_eq!(
            program.binaries,
            vec![BinaryRef { agent: 0, decision: 0 }, BinaryRef { agent: 1, decision: 0 }]
        );
        assert_eq!(program.enumeration_cells(), 4);
    }

    #[test]
    fn assembly_errors() {
        assert!(matches!(assemble_welfare(vec![], dims2()), Err(MarketError::EmptyMarket)));
        let three = AgentBid::new("x", vec![0.2, 0.3, 0.5], RiskFunctional::Expectation);
        assert!(matches!(
            assemble_welfare(vec![three], dims2()),
            Err(MarketError::InconsistentDimensions { .. })
        ));
    }

    #[test]
    fn multi_piece_curve_is_linearized() {
        let mut buyer = AgentBid::new("b", vec![1.0], RiskFunctional::Expectation);
        buyer
            .curves
            .push(UtilityCurve::new(0, 0, 0, vec![0.0, 2.0, 5.0], vec![40.0, 10.0]).unwrap());
        let mut seller = AgentBid::new("s", vec![1.0], RiskFunctional::Expectation);
        seller.curves.push(UtilityCurve::new(0, 0, 0, vec![-6.0, 0.0], vec![25.0]).unwrap());
        let dims = MarketDimensions::new(1, 1, 1).unwrap();
        let program = assemble_welfare(vec![buyer, seller], dims.clone()).unwrap();
        let assembled = program.fixed_lp(&[]);
        let sol = crate::clearing::lp::solve_lp(&assembled.lp).unwrap();
        // buyer takes the 40-valued block only
        assert!((assembled.agents[0].allocation(&dims, &sol.primal).values[0] - 2.0).abs() < 1e-9);
        assert!((sol.objective - 30.0).abs() < 1e-9);
        assert!((sol.duals[assembled.balance_rows[0]] - 25.0).abs() < 1e-9);
    }
}
