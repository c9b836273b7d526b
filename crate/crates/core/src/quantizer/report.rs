use std::fmt;

use serde::{Deserialize, Serialize};

use super::QuantizationSolution;

/// One state as presented to market participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDescription {
    /// One-based state number.
    pub number: usize,
    /// Full-precision center.
    pub center: Vec<f64>,
    pub probability: f64,
    pub scenarios: usize,
    pub interpretation: String,
}

impl StateDescription {
    /// Center rounded to one decimal, e.g. `(9.0, 9.9)`.
    pub fn point_label(&self) -> String {
        let coords: Vec<String> = self.center.iter().map(|v| format!("{v:.1}")).collect();
        format!("({})", coords.join(", "))
    }

    pub fn sentence(&self) -> String {
        format!(
            "State {s} occurs when ξ is closer to ω_{s} = {} than to any other ω_j.",
            self.point_label(),
            s = self.number
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub states: Vec<StateDescription>,
}

/// Per-state defining point, probability mass and a coarse reading of the
/// point relative to the probability-weighted mean of all centers.
pub fn describe_states(solution: &QuantizationSolution) -> StateReport {
    let partition = &solution.partition;
    let dim = partition.dim();
    let total: f64 = solution.state_masses.iter().sum();
    let reference: Vec<f64> = (0..dim)
        .map(|j| {
            partition
                .centers()
                .iter()
                .zip(&solution.state_masses)
                .map(|(c, m)| c[j] * m)
                .sum::<f64>()
                / total
        })
        .collect();
    let mut counts = vec![0; partition.num_states()];
    solution.assignment.iter().for_each(|&s| counts[s] += 1);

    let states = partition
        .centers()
        .iter()
        .enumerate()
        .map(|(s, c)| StateDescription {
            number: s + 1,
            center: c.clone(),
            probability: solution.state_masses[s],
            scenarios: counts[s],
            interpretation: interpret(c, &reference, partition.num_states()),
        })
        .collect();
    StateReport { states }
}

fn interpret(center: &[f64], reference: &[f64], states: usize) -> String {
    if states == 1 {
        return "All outcomes".to_string();
    }
    let high: Vec<bool> = center.iter().zip(reference).map(|(c, r)| c >= r).collect();
    if center.len() == 1 {
        return if high[0] { "High" } else { "Low" }.to_string();
    }
    if high.iter().all(|&h| h) {
        return "Generally high".to_string();
    }
    if high.iter().all(|&h| !h) {
        return "Generally low".to_string();
    }
    let parts: Vec<String> = high
        .iter()
        .enumerate()
        .map(|(j, &h)| format!("{} at coordinate {}", if h { "high" } else { "low" }, j + 1))
        .collect();
    let mut text = parts.join(", ");
    text[..1].make_ascii_uppercase();
    text
}

impl fmt::Display for StateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<42} {:<20} {:>11}", "State", "Interpretation", "Defining point", "Probability")?;
        for st in &self.states {
            writeln!(
                f,
                "{:<6} {:<42} {:<20} {:>11.4}",
                st.number,
                st.interpretation,
                st.point_label(),
                st.probability
            )?;
        }
        for st in &self.states {
            writeln!(f, "{}", st.sentence())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{solve_exact, Provenance};
    use super::*;
    use crate::scenario::ScenarioSet;

    #[test]
    fn two_states_mass_sums_to_one() {
        let set = ScenarioSet::new(
            vec![vec![7.0, 8.5], vec![7.4, 9.1], vec![9.1, 10.0], vec![8.95, 9.85], vec![7.5, 9.0]],
            vec![0.2; 5],
        )
        .unwrap();
        let report = describe_states(&solve_exact(&set, 2).unwrap());
        assert_eq!(report.states.len(), 2);
        let mass: f64 = report.states.iter().map(|s| s.probability).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert_eq!(report.states[0].interpretation, "Generally low");
        assert_eq!(report.states[1].interpretation, "Generally high");
        assert_eq!(report.states[1].point_label(), "(9.0, 9.9)");
        let text = report.to_string();
        assert_eq!(text.lines().count(), 1 + 2 + 2);
        assert!(text.contains("State 2 occurs when ξ is closer to ω_2 = (9.0, 9.9) than to any other ω_j."));
    }

    #[test]
    fn singleton_support() {
        let set = ScenarioSet::new(vec![vec![3.0, 4.0]], vec![1.0]).unwrap();
        let sol = QuantizationSolution::from_centers(&set, vec![vec![3.0, 4.0]], Provenance::External, None).unwrap();
        let report = describe_states(&sol);
        assert_eq!(report.states.len(), 1);
        assert_eq!(report.states[0].probability, 1.0);
    }

    #[test]
    fn mixed_reading() {
        assert_eq!(interpret(&[9.0, 9.0], &[8.0, 9.5], 3), "High at coordinate 1, low at coordinate 2");
    }
}
