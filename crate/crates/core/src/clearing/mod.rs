//! Market clearing: welfare maximization over binary commitments, prices
//! from balance-row duals, and equilibrium diagnostics.

pub mod lp;
mod sweep;

pub use sweep::{price_sweep, PriceTable, SweepRow};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{
    self, individual_lp, AgentBid, ContractGrid, MarketDimensions, MarketError, WelfareProgram, MAX_BINARIES,
};
use lp::{solve_lp, LpError, LpStatus};

/// Tolerance for equilibrium gaps, budget balance and welfare comparisons.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Market balance tolerance.
pub const BALANCE_TOL: f64 = 1e-7;
/// Welfare values closer than this count as tied.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ClearingError {
    #[error("{count} binary decisions exceed the enumeration limit of {limit}")]
    TooManyBinaries { count: usize, limit: usize },
    #[error("no binary assignment admits a feasible allocation")]
    Infeasible,
    #[error("welfare is unbounded")]
    Unbounded,
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub id: String,
    pub allocation: ContractGrid,
    pub decisions: Vec<f64>,
    pub valuation: f64,
    pub payment: f64,
    /// `valuation - payment`.
    pub surplus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGap {
    pub id: String,
    pub best_response: f64,
    pub achieved: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tolerance: f64,
    /// `max_nts |Σ_i x_i,nts|`.
    pub balance_residual: f64,
    /// `|Σ_i λ · x_i|`.
    pub budget_residual: f64,
    pub gaps: Vec<AgentGap>,
    pub max_gap: f64,
    /// Agents whose surplus at the clearing prices is below `-tolerance`.
    pub negative_surplus: Vec<String>,
    pub equilibrium: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub welfare: f64,
    pub prices: ContractGrid,
    pub agents: Vec<AgentOutcome>,
    /// Winning assignment of the catalogued binaries.
    pub binaries: Vec<bool>,
    pub verification: VerificationReport,
}

impl ClearingResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("clearing result serializes")
    }
}

/// Individually optimal position at fixed prices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponse {
    pub allocation: ContractGrid,
    pub decisions: Vec<f64>,
    /// `F_i(u_i) - λ · x_i`.
    pub value: f64,
}

fn assignment_of(mask: u64, bits: usize) -> Vec<bool> {
    // most significant bit first, so increasing masks are lexicographic
    (0..bits).map(|k| (mask >> (bits - 1 - k)) & 1 == 1).collect()
}

fn check_binaries(count: usize) -> Result<(), ClearingError> {
    if count > MAX_BINARIES {
        return Err(ClearingError::TooManyBinaries {
            count,
            limit: MAX_BINARIES,
        });
    }
    Ok(())
}

/// Deterministic reduction over per-assignment objective values: highest
/// value wins, earlier (lexicographically smaller) assignments win ties.
fn select(values: Vec<Result<Option<f64>, ClearingError>>) -> Result<u64, ClearingError> {
    let mut best: Option<(u64, f64)> = None;
    for (mask, value) in values.into_iter().enumerate() {
        if let Some(v) = value? {
            if best.map_or(true, |(_, b)| v > b + TIE_TOL) {
                best = Some((mask as u64, v));
            }
        }
    }
    best.map(|(m, _)| m).ok_or(ClearingError::Infeasible)
}

fn lp_value(lp: &lp::LinearProgram) -> Result<Option<f64>, ClearingError> {
    let sol = solve_lp(lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(Some(sol.objective)),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(ClearingError::Unbounded),
    }
}

/// Welfare-maximizing binary assignment and its welfare.
pub fn maximize_welfare(program: &WelfareProgram) -> Result<(Vec<bool>, f64), ClearingError> {
    let bits = program.num_binaries();
    check_binaries(bits)?;
    let values: Vec<_> = (0..program.enumeration_cells())
        .into_par_iter()
        .map(|mask| lp_value(&program.fixed_lp(&assignment_of(mask, bits)).lp))
        .collect();
    let assignment = assignment_of(select(values)?, bits);
    let sol = solve_lp(&program.fixed_lp(&assignment).lp)?;
    Ok((assignment, sol.objective))
}

pub fn clear(program: &WelfareProgram) -> Result<ClearingResult, ClearingError> {
    let (assignment, _) = maximize_welfare(program)?;
    let assembled = program.fixed_lp(&assignment);
    let sol = solve_lp(&assembled.lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(LpError::NumericalFailure("winning assignment did not re-solve".into()).into());
    }
    let dims = &program.dims;
    let prices = ContractGrid::from_values(
        dims,
        assembled.balance_rows.iter().map(|&r| sol.duals[r] + 0.0).collect(),
    )?;
    let agents = program
        .bids
        .iter()
        .zip(&assembled.agents)
        .map(|(bid, vars)| outcome(bid, vars.allocation(dims, &sol.primal), vars.decisions(&sol.primal), &prices))
        .collect::<Result<Vec<_>, _>>()?;
    let mut result = ClearingResult {
        welfare: sol.objective,
        prices,
        agents,
        binaries: assignment,
        verification: VerificationReport {
            tolerance: DEFAULT_TOLERANCE,
            balance_residual: 0.0,
            budget_residual: 0.0,
            gaps: Vec::new(),
            max_gap: 0.0,
            negative_surplus: Vec::new(),
            equilibrium: false,
        },
    };
    result.verification = verify_equilibrium(&result, program, DEFAULT_TOLERANCE);
    Ok(result)
}

fn outcome(
    bid: &AgentBid,
    allocation: ContractGrid,
    decisions: Vec<f64>,
    prices: &ContractGrid,
) -> Result<AgentOutcome, MarketError> {
    let valuation = market::valuation(bid, &allocation, &decisions)?;
    let payment = market::payment(prices, &allocation)?;
    Ok(AgentOutcome {
        id: bid.id.clone(),
        allocation,
        decisions,
        valuation,
        payment,
        surplus: valuation - payment,
    })
}

/// `max_{z,x} F_i(u_i(z, x)) - λ · x`, enumerating the agent's own binaries.
pub fn best_response(bid: &AgentBid, dims: &MarketDimensions, prices: &ContractGrid) -> Result<BestResponse, ClearingError> {
    bid.validate(dims)?;
    let binaries = bid.binary_decisions();
    check_binaries(binaries.len())?;
    let fixed_for = |mask: u64| {
        let mut fixed = vec![None; bid.decisions.len()];
        for (&j, v) in binaries.iter().zip(assignment_of(mask, binaries.len())) {
            fixed[j] = Some(if v { 1.0 } else { 0.0 });
        }
        fixed
    };
    let values: Vec<_> = (0..1u64 << binaries.len())
        .map(|mask| lp_value(&individual_lp(bid, dims, &fixed_for(mask), prices).lp))
        .collect();
    let assembled = individual_lp(bid, dims, &fixed_for(select(values)?), prices);
    let sol = solve_lp(&assembled.lp)?;
    let vars = &assembled.agents[0];
    Ok(BestResponse {
        allocation: vars.allocation(dims, &sol.primal),
        decisions: vars.decisions(&sol.primal),
        value: sol.objective,
    })
}

/// Re-solves every agent's individual problem at the result's prices and
/// reports balance, budget and optimality gaps. Never fails: shape
/// mismatches and failed solves surface as infinite gaps.
pub fn verify_equilibrium(result: &ClearingResult, program: &WelfareProgram, tol: f64) -> VerificationReport {
    let dims = &program.dims;
    let mut total = ContractGrid::zeros(dims);
    let mut budget = 0.0;
    let mut shape_ok = result.agents.len() == program.bids.len() && result.prices.same_shape(&total);
    for agent in &result.agents {
        match total.add(&agent.allocation) {
            Ok(sum) => total = sum,
            Err(_) => shape_ok = false,
        }
        budget += market::payment(&result.prices, &agent.allocation).unwrap_or(f64::NAN);
    }
    let balance_residual = if shape_ok {
        total.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    } else {
        f64::INFINITY
    };

    let mut gaps = Vec::with_capacity(program.bids.len());
    let mut negative_surplus = Vec::new();
    for (i, bid) in program.bids.iter().enumerate() {
        let achieved = result.agents.get(i).and_then(|a| {
            let v = market::valuation(bid, &a.allocation, &a.decisions).ok()?;
            Some(v - market::payment(&result.prices, &a.allocation).ok()?)
        });
        let best = best_response(bid, dims, &result.prices).ok().map(|b| b.value);
        let (achieved, best_response, gap) = match (achieved, best) {
            (Some(a), Some(b)) if a.is_finite() => (a, b, b - a),
            (a, b) => (a.unwrap_or(f64::NEG_INFINITY), b.unwrap_or(f64::NAN), f64::INFINITY),
        };
        if !(achieved >= -tol) {
            negative_surplus.push(bid.id.clone());
        }
        gaps.push(AgentGap {
            id: bid.id.clone(),
            best_response,
            achieved,
            gap,
        });
    }
    let max_gap = gaps.iter().fold(0.0f64, |m, g| m.max(g.gap));
    VerificationReport {
        tolerance: tol,
        balance_residual,
        budget_residual: budget.abs(),
        equilibrium: max_gap <= tol && balance_residual <= tol.max(BALANCE_TOL),
        gaps,
        max_gap,
        negative_surplus,
    }
}

/// True iff the result's allocation balances and attains the centrally
/// maximized welfare, both as reported and as recomputed from the bids.
pub fn welfare_equivalence_check(program: &WelfareProgram, result: &ClearingResult) -> bool {
    let Ok((_, central)) = maximize_welfare(program) else {
        return false;
    };
    if result.agents.len() != program.bids.len() {
        return false;
    }
    let mut total = ContractGrid::zeros(&program.dims);
    let mut recomputed = 0.0;
    for (bid, agent) in program.bids.iter().zip(&result.agents) {
        let Ok(sum) = total.add(&agent.allocation) else {
            return false;
        };
        total = sum;
        match market::valuation(bid, &agent.allocation, &agent.decisions) {
            Ok(v) => recomputed += v,
            Err(_) => return false,
        }
    }
    let balanced = total.values.iter().all(|v| v.abs() <= BALANCE_TOL);
    balanced
        && (recomputed - central).abs() <= DEFAULT_TOLERANCE
        && (result.welfare - central).abs() <= DEFAULT_TOLERANCE
}
