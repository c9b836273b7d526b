//! Dense two-phase primal simplex with Bland's rule.
//!
//! Variables carry arbitrary (possibly infinite) bounds and are mapped to
//! non-negative columns; finite upper bounds become explicit rows. Row
//! duals are reported in the sense of the original problem: `duals[i]` is
//! the rate of change of the optimal objective per unit increase of
//! `rows[i].rhs`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pivot and reduced-cost threshold.
const PIVOT_TOL: f64 = 1e-9;
/// Primal residual beyond which a solve is reported as a numerical failure.
pub const FEASIBILITY_TOL: f64 = 1e-7;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("invalid linear program: {0}")]
    InvalidProgram(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, cmp, rhs });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn row_activity(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::InvalidProgram("bound vectors do not match variables".into()));
        }
        for j in 0..n {
            if !self.objective[j].is_finite() {
                return Err(LpError::InvalidProgram(format!("objective coefficient {j} is not finite")));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(LpError::InvalidProgram(format!(
                    "variable {j} has bounds [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::InvalidProgram(format!("variable {j} has an empty domain")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::InvalidProgram(format!("row {i} has a non-finite right-hand side")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(LpError::InvalidProgram(format!("row {i} has a bad coefficient on variable {j}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub primal: Vec<f64>,
    /// One per row, in the sense of the original objective.
    pub duals: Vec<f64>,
    /// `c_j - sum_i duals_i a_ij`.
    pub reduced_costs: Vec<f64>,
}

impl LpSolution {
    fn without_solution(status: LpStatus) -> Self {
        Self {
            status,
            objective: f64::NAN,
            primal: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
        }
    }

    /// Largest violation of dual sign conditions and complementary
    /// slackness, over rows and variable bounds.
    pub fn complementarity_residual(&self, lp: &LinearProgram) -> f64 {
        // in minimization form: Le rows have y <= 0, Ge rows y >= 0
        let flip = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let mut worst: f64 = 0.0;
        for (i, row) in lp.rows.iter().enumerate() {
            let y = flip * self.duals[i];
            let slack = lp.row_activity(i, &self.primal) - row.rhs;
            let sign_violation = match row.cmp {
                Cmp::Le => y.max(0.0),
                Cmp::Ge => (-y).max(0.0),
                Cmp::Eq => 0.0,
            };
            worst = worst.max(sign_violation).max((y * slack).abs());
        }
        for j in 0..lp.num_vars() {
            let d = flip * self.reduced_costs[j];
            let x = self.primal[j];
            let at_lower = (x - lp.lower[j]).abs() <= FEASIBILITY_TOL;
            let at_upper = (x - lp.upper[j]).abs() <= FEASIBILITY_TOL;
            let violation = match (at_lower, at_upper) {
                (true, true) => 0.0,
                (true, false) => (-d).max(0.0),
                (false, true) => d.max(0.0),
                (false, false) => d.abs(),
            };
            worst = worst.max(violation);
        }
        worst
    }
}

/// How a tableau column maps back to an original variable:
/// `x_var = offset + sign * u`.
#[derive(Debug, Clone, Copy)]
struct Column {
    var: usize,
    sign: f64,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// Reduced costs of the current phase's objective.
    reduced: Vec<f64>,
    structural: usize,
    artificial_start: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        self.rhs[r] /= p;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i != r {
                let f = self.rows[i][c];
                if f != 0.0 {
                    for (v, pv) in self.rows[i].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                    self.rhs[i] -= f * pivot_rhs;
                }
            }
        }
        let f = self.reduced[c];
        if f != 0.0 {
            for (v, pv) in self.reduced.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[r] = c;
    }

    fn price(&mut self, costs: &[f64]) {
        self.reduced = costs.to_vec();
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = costs[b];
            if cb != 0.0 {
                for (d, a) in self.reduced.iter_mut().zip(&self.rows[r]) {
                    *d -= cb * a;
                }
            }
        }
    }

    /// Bland's rule iterations; `Ok(false)` on unboundedness.
    fn iterate(&mut self, allow_artificial: bool) -> Result<bool, LpError> {
        let limit = if allow_artificial { self.reduced.len() } else { self.artificial_start };
        for _ in 0..MAX_PIVOTS {
            let Some(enter) = (0..limit).find(|&j| self.reduced[j] < -PIVOT_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][enter];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[r] / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Ok(false);
            };
            self.pivot(r, enter);
            self.rhs.iter_mut().for_each(|b| {
                if *b < 0.0 && *b > -1e-12 {
                    *b = 0.0
                }
            });
        }
        Err(LpError::NumericalFailure(format!("no convergence within {MAX_PIVOTS} pivots")))
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let n = lp.num_vars();
    let direction = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };

    // variable substitution
    let mut offset = vec![0.0; n];
    let mut columns: Vec<Column> = Vec::new();
    let mut var_columns: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut bound_rows: Vec<(usize, f64)> = Vec::new(); // (column, limit)
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo == hi {
            offset[j] = lo;
        } else if lo.is_finite() {
            offset[j] = lo;
            var_columns[j].push(columns.len());
            if hi.is_finite() {
                bound_rows.push((columns.len(), hi - lo));
            }
            columns.push(Column { var: j, sign: 1.0 });
        } else if hi.is_finite() {
            offset[j] = hi;
            var_columns[j].push(columns.len());
            columns.push(Column { var: j, sign: -1.0 });
        } else {
            var_columns[j].push(columns.len());
            columns.push(Column { var: j, sign: 1.0 });
            var_columns[j].push(columns.len());
            columns.push(Column { var: j, sign: -1.0 });
        }
    }
    let structural = columns.len();

    // rows in the substituted space: (dense coefficients, cmp, rhs)
    let mut dense_rows: Vec<(Vec<f64>, Cmp, f64)> = Vec::new();
    for row in &lp.rows {
        let mut coeffs = vec![0.0; structural];
        let mut rhs = row.rhs;
        for &(j, a) in &row.coeffs {
            rhs -= a * offset[j];
            for &c in &var_columns[j] {
                coeffs[c] += a * columns[c].sign;
            }
        }
        dense_rows.push((coeffs, row.cmp, rhs));
    }
    for &(c, limit) in &bound_rows {
        let mut coeffs = vec![0.0; structural];
        coeffs[c] = 1.0;
        dense_rows.push((coeffs, Cmp::Le, limit));
    }

    let m = dense_rows.len();
    let slack_count = dense_rows.iter().filter(|(_, cmp, _)| *cmp != Cmp::Eq).count();
    let mut flips = vec![1.0; m];
    let mut needs_artificial = vec![false; m];
    for (i, (_, cmp, rhs)) in dense_rows.iter().enumerate() {
        if *rhs < 0.0 {
            flips[i] = -1.0;
        }
        let slack_sign = match cmp {
            Cmp::Le => 1.0,
            Cmp::Ge => -1.0,
            Cmp::Eq => 0.0,
        } * flips[i];
        needs_artificial[i] = slack_sign <= 0.0;
    }
    let artificial_count = needs_artificial.iter().filter(|&&a| a).count();
    let artificial_start = structural + slack_count;
    let width = artificial_start + artificial_count;

    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut unit_column = Vec::with_capacity(m);
    let (mut next_slack, mut next_artificial) = (structural, artificial_start);
    for (i, (coeffs, cmp, b)) in dense_rows.iter().enumerate() {
        let mut row = vec![0.0; width];
        for (c, v) in coeffs.iter().enumerate() {
            row[c] = flips[i] * v;
        }
        let mut slack_col = None;
        if *cmp != Cmp::Eq {
            let sign = if *cmp == Cmp::Le { 1.0 } else { -1.0 };
            row[next_slack] = flips[i] * sign;
            slack_col = Some(next_slack);
            next_slack += 1;
        }
        let basic = if needs_artificial[i] {
            row[next_artificial] = 1.0;
            next_artificial += 1;
            next_artificial - 1
        } else {
            slack_col.expect("rows without artificials have a unit slack")
        };
        basis.push(basic);
        unit_column.push(basic);
        rows.push(row);
        rhs.push(flips[i] * b);
    }

    let mut costs = vec![0.0; width];
    for (c, col) in columns.iter().enumerate() {
        costs[c] = direction * lp.objective[col.var] * col.sign;
    }

    let mut tableau = Tableau {
        rows,
        rhs,
        basis,
        reduced: Vec::new(),
        structural,
        artificial_start,
    };

    if artificial_count > 0 {
        let mut phase_one = vec![0.0; width];
        phase_one[artificial_start..].iter_mut().for_each(|c| *c = 1.0);
        tableau.price(&phase_one);
        tableau.iterate(true)?;
        let infeasibility: f64 = tableau
            .basis
            .iter()
            .zip(&tableau.rhs)
            .filter(|(&b, _)| b >= artificial_start)
            .map(|(_, v)| *v)
            .sum();
        let scale = 1.0 + tableau.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if infeasibility > FEASIBILITY_TOL * scale {
            return Ok(LpSolution::without_solution(LpStatus::Infeasible));
        }
        for r in 0..m {
            if tableau.basis[r] >= artificial_start {
                if let Some(c) = (0..artificial_start).find(|&c| tableau.rows[r][c].abs() > PIVOT_TOL) {
                    tableau.pivot(r, c);
                }
            }
        }
    }

    tableau.price(&costs);
    if !tableau.iterate(false)? {
        return Ok(LpSolution::without_solution(LpStatus::Unbounded));
    }

    let mut u = vec![0.0; tableau.structural];
    for (r, &b) in tableau.basis.iter().enumerate() {
        if b < tableau.structural {
            u[b] = tableau.rhs[r];
        }
    }
    let mut primal = offset.clone();
    for (c, col) in columns.iter().enumerate() {
        primal[col.var] += col.sign * u[c];
    }

    // y_hat_r = c_unit - d_unit for the flipped system; unit columns cost 0
    let duals: Vec<f64> = (0..lp.rows.len())
        .map(|i| {
            let y_hat = -tableau.reduced[unit_column[i]];
            direction * flips[i] * y_hat + 0.0
        })
        .collect();
    let mut reduced_costs = lp.objective.clone();
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            reduced_costs[j] -= duals[i] * a;
        }
    }

    check_primal(lp, &primal)?;
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_value(&primal),
        primal,
        duals,
        reduced_costs,
    })
}

fn check_primal(lp: &LinearProgram, x: &[f64]) -> Result<(), LpError> {
    for j in 0..lp.num_vars() {
        let tol = FEASIBILITY_TOL * (1.0 + x[j].abs());
        if x[j] < lp.lower[j] - tol || x[j] > lp.upper[j] + tol {
            return Err(LpError::NumericalFailure(format!(
                "variable {j} = {} outside [{}, {}]",
                x[j], lp.lower[j], lp.upper[j]
            )));
        }
    }
    for (i, row) in lp.rows.iter().enumerate() {
        let activity = lp.row_activity(i, x);
        let tol = FEASIBILITY_TOL * (1.0 + row.rhs.abs());
        let ok = match row.cmp {
            Cmp::Le => activity <= row.rhs + tol,
            Cmp::Ge => activity >= row.rhs - tol,
            Cmp::Eq => (activity - row.rhs).abs() <= tol,
        };
        if !ok {
            return Err(LpError::NumericalFailure(format!(
                "row {i} activity {activity} violates {:?} {}",
                row.cmp, row.rhs
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_variable_bound_by_a_row() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
        lp.add_row(vec![(x, 1.0)], Cmp::Le, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.primal[0] - 1.0).abs() < 1e-12);
        assert!((sol.duals[0] - 1.0).abs() < 1e-12);
        assert!(sol.complementarity_residual(&lp) < 1e-9);
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36; duals (0, 1.5, 1)
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(0.0, f64::INFINITY, 3.0);
        let y = lp.add_var(0.0, f64::INFINITY, 5.0);
        lp.add_row(vec![(x, 1.0)], Cmp::Le, 4.0);
        lp.add_row(vec![(y, 2.0)], Cmp::Le, 12.0);
        lp.add_row(vec![(x, 3.0), (y, 2.0)], Cmp::Le, 18.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.objective - 36.0).abs() < 1e-9);
        let expected = [0.0, 1.5, 1.0];
        for (d, e) in sol.duals.iter().zip(expected) {
            assert!((d - e).abs() < 1e-9, "{:?}", sol.duals);
        }
    }

    #[test]
    fn minimization_with_ge_and_eq_rows() {
        // min x + 2y s.t. x + y >= 3, x - y = 1, x, y >= 0 -> (2, 1), 4
        let mut lp = LinearProgram::new(Sense::Minimize);
        let x = lp.add_var(0.0, f64::INFINITY, 1.0);
        let y = lp.add_var(0.0, f64::INFINITY, 2.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], Cmp::Ge, 3.0);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], Cmp::Eq, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.objective - 4.0).abs() < 1e-9);
        // raising the first rhs by t moves the optimum to ((4+t)/2, (2+t)/2): slope 1.5
        assert!((sol.duals[0] - 1.5).abs() < 1e-9);
        assert!((sol.duals[1] + 0.5).abs() < 1e-9);
        assert!(sol.complementarity_residual(&lp) < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(0.0, 1.0, 1.0);
        lp.add_row(vec![(x, 1.0)], Cmp::Ge, 2.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(0.0, f64::INFINITY, 1.0);
        let y = lp.add_var(0.0, f64::INFINITY, 0.0);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], Cmp::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn bounds_of_every_kind() {
        // max x + y + z with x in [-2, 3], y <= -1, z fixed at 4, w free with w = x
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(-2.0, 3.0, 1.0);
        let y = lp.add_var(f64::NEG_INFINITY, -1.0, 1.0);
        let z = lp.add_var(4.0, 4.0, 1.0);
        let w = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
        lp.add_row(vec![(w, 1.0), (x, -1.0)], Cmp::Eq, 0.0);
        lp.add_row(vec![(y, 1.0), (z, 1.0)], Cmp::Ge, -100.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.primal, vec![3.0, -1.0, 4.0, 3.0]);
        assert!((sol.objective - 6.0).abs() < 1e-12);
        assert!(sol.reduced_costs[0] > 0.0);
        assert!(sol.complementarity_residual(&lp) < 1e-9);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // classic cycling example (Beale) under Dantzig's rule
        let mut lp = LinearProgram::new(Sense::Minimize);
        let v: Vec<usize> = [-0.75, 150.0, -0.02, 6.0]
            .iter()
            .map(|&c| lp.add_var(0.0, f64::INFINITY, c))
            .collect();
        lp.add_row(vec![(v[0], 0.25), (v[1], -60.0), (v[2], -0.04), (v[3], 9.0)], Cmp::Le, 0.0);
        lp.add_row(vec![(v[0], 0.5), (v[1], -90.0), (v[2], -0.02), (v[3], 3.0)], Cmp::Le, 0.0);
        lp.add_row(vec![(v[2], 1.0)], Cmp::Le, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.objective + 0.05).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        lp.add_var(1.0, 0.0, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::InvalidProgram(_))));
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(0.0, 1.0, 1.0);
        lp.add_row(vec![(x, f64::NAN)], Cmp::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::InvalidProgram(_))));
    }
}
