//! Predictors, responses and multiple linear regression with stepwise
//! selection and dominance-based relative importance.

pub mod analysis;
pub mod features;
pub mod importance;
pub mod ols;
pub mod report;
pub mod stepwise;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analysis::{analyze_response, Analysis};
pub use features::{compute_predictors, compute_responses, PredictorSet, ResponseSet};
pub use importance::{relative_importance, ImportanceShare};
pub use ols::{fit_model, fit_ols, t_test_p_value, OlsFit, RegressionModel};
pub use report::{pareto_report, ParetoReport};
pub use stepwise::{stepwise_fit, StepwiseOptions};

/// A model term over predictor indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Linear(usize),
    Quadratic(usize),
    /// Product of two distinct predictors, smaller index first.
    Interaction(usize, usize),
}

impl Term {
    pub fn interaction(a: usize, b: usize) -> Term {
        assert_ne!(a, b, "interaction needs two predictors");
        Term::Interaction(a.min(b), a.max(b))
    }

    /// Linear terms that must be in a model before this one may enter.
    pub fn parents(&self) -> Vec<Term> {
        match *self {
            Term::Quadratic(i) => vec![Term::Linear(i)],
            Term::Interaction(a, b) => vec![Term::Linear(a), Term::Linear(b)],
            _ => Vec::new(),
        }
    }

    pub fn predictors(&self) -> Vec<usize> {
        match *self {
            Term::Intercept => Vec::new(),
            Term::Linear(i) | Term::Quadratic(i) => vec![i],
            Term::Interaction(a, b) => vec![a, b],
        }
    }

    pub fn label(&self, names: &[String]) -> String {
        match *self {
            Term::Intercept => "(intercept)".into(),
            Term::Linear(i) => names[i].clone(),
            Term::Quadratic(i) => format!("{}^2", names[i]),
            Term::Interaction(a, b) => format!("{}:{}", names[a], names[b]),
        }
    }

    fn value(&self, cols: &[Vec<f64>], row: usize) -> f64 {
        match *self {
            Term::Intercept => 1.0,
            Term::Linear(i) => cols[i][row],
            Term::Quadratic(i) => cols[i][row] * cols[i][row],
            Term::Interaction(a, b) => cols[a][row] * cols[b][row],
        }
    }
}

/// Linear, quadratic and pairwise interaction terms of `p` predictors.
pub fn full_quadratic_terms(p: usize) -> Vec<Term> {
    let mut t: Vec<Term> = (0..p).map(Term::Linear).collect();
    t.extend((0..p).map(Term::Quadratic));
    for a in 0..p {
        for b in a + 1..p {
            t.push(Term::Interaction(a, b));
        }
    }
    t
}

pub fn linear_terms(p: usize) -> Vec<Term> {
    (0..p).map(Term::Linear).collect()
}

pub fn design_matrix(terms: &[Term], cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, terms.len(), |r, c| terms[c].value(cols, r))
}

/// Named numeric columns of equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Domain("column count and name count differ".into()));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Domain("columns have different lengths".into()));
            }
        }
        Ok(Table { names, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::UnknownName {
                kind: "column",
                name: name.to_string(),
                available: self.names.join(", "),
            })
    }

    pub fn select(&self, names: &[&str]) -> Result<Table> {
        let columns = names
            .iter()
            .map(|n| self.column(n).map(|c| c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Table::new(names.iter().map(|s| s.to_string()).collect(), columns)
    }

    /// Keep rows where `keep(row)` holds.
    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Table {
        let idx: Vec<usize> = (0..self.rows()).filter(|&r| keep(r)).collect();
        Table {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }
}

/// Column-wise z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(cols: &[Vec<f64>]) -> Self {
        let mut means = Vec::with_capacity(cols.len());
        let mut sds = Vec::with_capacity(cols.len());
        for c in cols {
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            means.push(m);
            // a constant column stays constant (and is caught as collinear)
            sds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { means, sds }
    }

    pub fn apply(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        cols.iter()
            .enumerate()
            .map(|(j, c)| {
                c.iter()
                    .map(|x| (x - self.means[j]) / self.sds[j])
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_catalogue_of_three_predictors() {
        let t = full_quadratic_terms(3);
        assert_eq!(t.len(), 3 + 3 + 3);
        assert_eq!(Term::interaction(2, 0), Term::Interaction(0, 2));
        assert_eq!(
            Term::Interaction(0, 2).parents(),
            vec![Term::Linear(0), Term::Linear(2)]
        );
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert_eq!(Term::Quadratic(1).label(&names), "b^2");
        assert_eq!(Term::Interaction(0, 2).label(&names), "a:c");
    }

    #[test]
    fn standardized_columns_have_unit_spread() {
        let cols = vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0; 4]];
        let s = Standardizer::fit(&cols);
        let z = s.apply(&cols);
        let m: f64 = z[0].iter().sum::<f64>() / 4.0;
        let v: f64 = z[0].iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-15 && (v - 1.0).abs() < 1e-12);
        assert!(z[1].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn design_columns_follow_terms() {
        let cols = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let x = design_matrix(
            &[Term::Intercept, Term::Quadratic(0), Term::Interaction(0, 1)],
            &cols,
        );
        assert_eq!(x[(1, 0)], 1.0);
        assert_eq!(x[(1, 1)], 4.0);
        assert_eq!(x[(1, 2)], 8.0);
    }
}
