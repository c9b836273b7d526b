//! Neutral text export of the big-M location MIQP.
//!
//! ```text
//! minimize   sum_l pi_l d_l
//! subject to d_l >= |xi_l - w_s|^2 - M (1 - z_ls)   for all l, s
//!            sum_s z_ls = 1                          for all l
//!            z_ls binary, w_s free, d_l >= 0
//! ```
//!
//! The file format is line oriented (grammar in `docs/miqp-format.md`):
//!
//! ```text
//! # comment
//! param <name> <value>
//! var <name> <continuous|binary> <lower> <upper>
//! objective <minimize|maximize> <term>...
//! constraint <name> <term>... <<=|>=|=> <rhs>
//! ```
//!
//! A term is `<coef>*<var>` or `<coef>*<var>*<var>`; bounds may be `-inf`
//! or `inf`. The distance constraint is written in expanded form,
//! `d_l + sum_j (-w_sj*w_sj + 2 xi_lj w_sj) - M z_ls >= |xi_l|^2 - M`.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{QuantizerError, Result};
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BigM {
    /// Squared diameter of the scenario bounding box (1 for a single point).
    Auto,
    Value(f64),
}

impl BigM {
    pub fn resolve(self, set: &ScenarioSet) -> Result<f64> {
        match self {
            BigM::Value(m) if m > 0.0 && m.is_finite() => Ok(m),
            BigM::Value(m) => Err(QuantizerError::NonPositiveM(m)),
            BigM::Auto => {
                let (lo, hi) = set.bounding_box();
                let diameter_sq: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum();
                Ok(if diameter_sq > 0.0 { diameter_sq } else { 1.0 })
            }
        }
    }
}

pub fn center_var(s: usize, j: usize) -> String {
    format!("w_{}_{}", s + 1, j + 1)
}

pub fn distance_var(l: usize) -> String {
    format!("d_{}", l + 1)
}

pub fn assign_var(l: usize, s: usize) -> String {
    format!("z_{}_{}", l + 1, s + 1)
}

/// Writes the location problem for `states` centers.
pub fn export_miqp(set: &ScenarioSet, states: usize, big_m: BigM) -> Result<String> {
    if states == 0 {
        return Err(QuantizerError::NoStates);
    }
    let m = big_m.resolve(set)?;
    let (len, dim) = (set.len(), set.dim());
    let mut out = String::new();
    let _ = writeln!(out, "# optimal quantization location problem (MIQP)");
    let _ = writeln!(out, "# scenarios L={len} states S={states} dimension k={dim}");
    let _ = writeln!(out, "# big-M M={m}");
    let _ = writeln!(out, "param M {m}");
    for s in 0..states {
        for j in 0..dim {
            let _ = writeln!(out, "var {} continuous -inf inf", center_var(s, j));
        }
    }
    for l in 0..len {
        let _ = writeln!(out, "var {} continuous 0 inf", distance_var(l));
    }
    for l in 0..len {
        for s in 0..states {
            let _ = writeln!(out, "var {} binary 0 1", assign_var(l, s));
        }
    }
    let _ = write!(out, "objective minimize");
    for l in 0..len {
        let _ = write!(out, " {}*{}", set.weight(l), distance_var(l));
    }
    out.push('\n');
    for l in 0..len {
        let xi = set.point(l);
        let norm_sq: f64 = xi.iter().map(|v| v * v).sum();
        for s in 0..states {
            let _ = write!(out, "constraint dist_{}_{} 1*{}", l + 1, s + 1, distance_var(l));
            for (j, &x) in xi.iter().enumerate() {
                let w = center_var(s, j);
                let _ = write!(out, " -1*{w}*{w} {}*{w}", 2.0 * x);
            }
            let _ = writeln!(out, " {}*{} >= {}", -m, assign_var(l, s), norm_sq - m);
        }
    }
    for l in 0..len {
        let _ = write!(out, "constraint assign_{}", l + 1);
        for s in 0..states {
            let _ = write!(out, " 1*{}", assign_var(l, s));
        }
        out.push_str(" = 1\n");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub vars: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConstraint {
    pub name: String,
    pub terms: Vec<Term>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Parsed form of an exported model, able to evaluate itself at a point.
#[derive(Debug, Clone, Default)]
pub struct MiqpModel {
    pub params: HashMap<String, f64>,
    pub vars: Vec<VarDecl>,
    pub minimize: bool,
    pub objective: Vec<Term>,
    pub constraints: Vec<ModelConstraint>,
}

fn parse_number(token: &str) -> Result<f64> {
    match token {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => token
            .parse()
            .map_err(|_| QuantizerError::MalformedModel(format!("bad number `{token}`"))),
    }
}

fn parse_term(token: &str) -> Result<Term> {
    let mut parts = token.split('*');
    let coef = parse_number(parts.next().unwrap_or_default())?;
    let vars: Vec<String> = parts.map(str::to_string).collect();
    if vars.is_empty() || vars.len() > 2 || vars.iter().any(String::is_empty) {
        return Err(QuantizerError::MalformedModel(format!("bad term `{token}`")));
    }
    Ok(Term { coef, vars })
}

impl MiqpModel {
    pub fn parse(text: &str) -> Result<Self> {
        let mut model = MiqpModel {
            minimize: true,
            ..Default::default()
        };
        let bad = |line: &str| QuantizerError::MalformedModel(format!("cannot parse `{line}`"));
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens[0] {
                "param" if tokens.len() == 3 => {
                    model.params.insert(tokens[1].to_string(), parse_number(tokens[2])?);
                }
                "var" if tokens.len() == 5 => {
                    let kind = match tokens[2] {
                        "continuous" => VarKind::Continuous,
                        "binary" => VarKind::Binary,
                        _ => return Err(bad(line)),
                    };
                    model.vars.push(VarDecl {
                        name: tokens[1].to_string(),
                        kind,
                        lower: parse_number(tokens[3])?,
                        upper: parse_number(tokens[4])?,
                    });
                }
                "objective" if tokens.len() >= 2 => {
                    model.minimize = match tokens[1] {
                        "minimize" => true,
                        "maximize" => false,
                        _ => return Err(bad(line)),
                    };
                    model.objective = tokens[2..].iter().map(|t| parse_term(t)).collect::<Result<_>>()?;
                }
                "constraint" if tokens.len() >= 5 => {
                    let n = tokens.len();
                    let relation = match tokens[n - 2] {
                        "<=" => Relation::Le,
                        ">=" => Relation::Ge,
                        "=" => Relation::Eq,
                        _ => return Err(bad(line)),
                    };
                    model.constraints.push(ModelConstraint {
                        name: tokens[1].to_string(),
                        terms: tokens[2..n - 2].iter().map(|t| parse_term(t)).collect::<Result<_>>()?,
                        relation,
                        rhs: parse_number(tokens[n - 1])?,
                    });
                }
                _ => return Err(bad(line)),
            }
        }
        Ok(model)
    }

    pub fn count(&self, kind: VarKind) -> usize {
        self.vars.iter().filter(|v| v.kind == kind).count()
    }

    /// Variables whose name starts with `prefix` (e.g. `"w_"`).
    pub fn count_prefixed(&self, prefix: &str) -> usize {
        self.vars.iter().filter(|v| v.name.starts_with(prefix)).count()
    }

    fn eval_terms(terms: &[Term], values: &HashMap<String, f64>) -> Result<f64> {
        terms.iter().try_fold(0.0, |acc, t| {
            let product = t.vars.iter().try_fold(t.coef, |p, v| {
                values
                    .get(v)
                    .map(|x| p * x)
                    .ok_or_else(|| QuantizerError::MalformedModel(format!("no value for `{v}`")))
            })?;
            Ok(acc + product)
        })
    }

    pub fn objective_at(&self, values: &HashMap<String, f64>) -> Result<f64> {
        Self::eval_terms(&self.objective, values)
    }

    /// Names of bounds, integrality conditions and constraints violated by
    /// more than `tol`.
    pub fn violations(&self, values: &HashMap<String, f64>, tol: f64) -> Result<Vec<String>> {
        let mut violated = Vec::new();
        for v in &self.vars {
            let x = *values
                .get(&v.name)
                .ok_or_else(|| QuantizerError::MalformedModel(format!("no value for `{}`", v.name)))?;
            if x < v.lower - tol || x > v.upper + tol {
                violated.push(format!("bounds of {}", v.name));
            }
            if v.kind == VarKind::Binary && (x - x.round()).abs() > tol {
                violated.push(format!("integrality of {}", v.name));
            }
        }
        for c in &self.constraints {
            let lhs = Self::eval_terms(&c.terms, values)?;
            let ok = match c.relation {
                Relation::Le => lhs <= c.rhs + tol,
                Relation::Ge => lhs >= c.rhs - tol,
                Relation::Eq => (lhs - c.rhs).abs() <= tol,
            };
            if !ok {
                violated.push(c.name.clone());
            }
        }
        Ok(violated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_model() {
        let set = ScenarioSet::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let text = export_miqp(&set, 1, BigM::Auto).unwrap();
        let model = MiqpModel::parse(&text).unwrap();
        assert_eq!(model.count_prefixed("w_"), 1);
        assert_eq!(model.count_prefixed("d_"), 2);
        assert_eq!(model.count(VarKind::Binary), 2);
        assert_eq!(model.params["M"], 1.0);
        assert!(text.contains("# big-M M=1"));
        // the assignment rows fix both binaries to one
        assert_eq!(model.constraints.iter().filter(|c| c.name.starts_with("assign_")).count(), 2);
    }

    #[test]
    fn case_study_dimensions() {
        let pts: Vec<Vec<f64>> = (0..39).map(|l| vec![7.0 + (l % 7) as f64, 8.0 + (l / 7) as f64]).collect();
        let set = ScenarioSet::new(pts, vec![1.0 / 39.0; 39]).unwrap();
        let model = MiqpModel::parse(&export_miqp(&set, 3, BigM::Auto).unwrap()).unwrap();
        assert_eq!(model.count_prefixed("w_"), 6);
        assert_eq!(model.count_prefixed("d_"), 39);
        assert_eq!(model.count(VarKind::Binary), 117);
        assert_eq!(model.constraints.len(), 39 * 3 + 39);
    }

    #[test]
    fn auto_m_on_unit_square() {
        let set = ScenarioSet::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![0.25; 4],
        )
        .unwrap();
        assert_eq!(BigM::Auto.resolve(&set).unwrap(), 2.0);
        assert!(matches!(
            export_miqp(&set, 2, BigM::Value(0.0)),
            Err(QuantizerError::NonPositiveM(_))
        ));
        assert!(matches!(
            export_miqp(&set, 2, BigM::Value(-3.0)),
            Err(QuantizerError::NonPositiveM(_))
        ));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(MiqpModel::parse("var x integer 0 1").is_err());
        assert!(MiqpModel::parse("constraint c 1*x ~ 3").is_err());
        assert!(MiqpModel::parse("objective minimize 2*").is_err());
        assert!(MiqpModel::parse("bogus").is_err());
    }
}
