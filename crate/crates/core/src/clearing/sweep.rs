//! Probability sweep over a two-state market with common beliefs.

use serde::Serialize;

use super::{clear, ClearingError, ClearingResult};
use crate::market::{MarketError, WelfareProgram};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub pi1: f64,
    pub pi2: f64,
    pub result: ClearingResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceTable {
    pub columns: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// Clears the market for `π_1 = k / steps`, `k = 0..=steps`, with every
/// agent holding beliefs `(π_1, 1 - π_1)`.
pub fn price_sweep(program: &WelfareProgram, steps: usize) -> Result<PriceTable, ClearingError> {
    if program.dims.states != 2 || steps == 0 {
        return Err(MarketError::InvalidDimensions(format!(
            "a probability sweep needs 2 states and at least one step, got {} states and {steps} steps",
            program.dims.states
        ))
        .into());
    }
    let rows = (0..=steps)
        .map(|k| {
            let pi1 = k as f64 / steps as f64;
            let pi2 = (steps - k) as f64 / steps as f64;
            let result = clear(&program.with_common_beliefs(&[pi1, pi2])?)?;
            Ok(SweepRow { pi1, pi2, result })
        })
        .collect::<Result<Vec<_>, ClearingError>>()?;
    Ok(PriceTable {
        columns: columns(program),
        rows,
    })
}

/// Agents without decisions contribute one quantity column per contract,
/// agents with decisions one column per decision; prices come last.
fn columns(program: &WelfareProgram) -> Vec<String> {
    let dims = &program.dims;
    let single = dims.nodes == 1 && dims.periods == 1;
    let contract = |c: usize| {
        let (n, t, s) = dims.coordinates(c);
        if single {
            format!("{}", s + 1)
        } else {
            format!("_{}_{}_{}", n + 1, t + 1, s + 1)
        }
    };
    let mut out = vec!["pi1".to_string(), "pi2".to_string()];
    for (i, bid) in program.bids.iter().enumerate() {
        if bid.decisions.is_empty() {
            out.extend((0..dims.contracts()).map(|c| format!("x{}{}", i + 1, contract(c))));
        } else if bid.decisions.len() == 1 {
            out.push(format!("z{}", i + 1));
        } else {
            out.extend((0..bid.decisions.len()).map(|j| format!("z{}_{}", i + 1, j + 1)));
        }
    }
    out.extend((0..dims.contracts()).map(|c| format!("lambda{}", contract(c))));
    out
}

/// Rounds to 1e-9 and clears negative zero so printed tables are stable.
fn tidy(v: f64) -> f64 {
    (v * 1e9).round() / 1e9 + 0.0
}

impl PriceTable {
    pub fn values(&self, row: &SweepRow) -> Vec<f64> {
        let mut out = vec![row.pi1, row.pi2];
        for agent in &row.result.agents {
            if agent.decisions.is_empty() {
                out.extend(&agent.allocation.values);
            } else {
                out.extend(&agent.decisions);
            }
        }
        out.extend(&row.result.prices.values);
        out.into_iter().map(tidy).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            writer
                .write_record(self.values(row).iter().map(|v| v.to_string()))
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("ascii output")
    }
}
