//! Ordinary least squares by Householder QR.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::{design_matrix, Standardizer, Table, Term};
use crate::error::{Error, Result};

/// Relative size of a QR pivot below which a column counts as a linear
/// combination of the columns before it.
const RANK_TOL: f64 = 1e-9;

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_test_p_value(t: f64, df: f64) -> f64 {
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub residual_variance: f64,
    pub df: usize,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// Least-squares fit of `y` on the columns of `x` (which should include an
/// intercept column; R² is measured around the mean of `y`).
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<OlsFit> {
    let (n, q) = x.shape();
    if y.len() != n {
        return Err(Error::Regression(format!(
            "{} responses for {} rows",
            y.len(),
            n
        )));
    }
    if n < q + 1 {
        return Err(Error::Regression(format!(
            "{n} rows cannot support {q} terms plus residual freedom"
        )));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Regression("non-finite value in the data".into()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..q)
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm
        })
        .map(|j| {
            names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("column {j}"))
        })
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Regression("singular triangular factor".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(q, q))
        .ok_or_else(|| Error::Regression("singular triangular factor".into()))?;

    let fitted = x * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let df = n - q;
    let sigma2 = ssr / df as f64;
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let adj_r_squared = if sst > 0.0 && n > q {
        1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / df as f64
    } else {
        0.0
    };
    let mut std_errors = Vec::with_capacity(q);
    let mut t_stats = Vec::with_capacity(q);
    let mut p_values = Vec::with_capacity(q);
    for j in 0..q {
        // diag((XᵀX)⁻¹) = squared row norms of R⁻¹
        let se = (sigma2 * r_inv.row(j).norm_squared()).sqrt();
        let (t, p) = if se > 0.0 {
            let t = beta[j] / se;
            (t, t_test_p_value(t, df as f64))
        } else if beta[j] == 0.0 {
            (0.0, 1.0)
        } else {
            (beta[j].signum() * f64::INFINITY, 0.0)
        };
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(p);
    }
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_stats,
        p_values,
        r_squared,
        adj_r_squared,
        residual_variance: sigma2,
        df,
        residuals,
        fitted: fitted.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepAction {
    Enter,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: usize,
    pub action: StepAction,
    pub term: String,
    pub p_value: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub response: String,
    pub predictors: Vec<String>,
    /// Intercept first, then terms in entry order.
    pub terms: Vec<Term>,
    pub term_names: Vec<String>,
    /// Coefficients on z-scored predictors.
    pub coefficients: Vec<f64>,
    /// Coefficients on the predictors in their own units.
    pub raw_coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub n: usize,
    pub residuals: Vec<f64>,
    pub standardizer: Standardizer,
    pub history: Vec<StepEvent>,
    /// Stepwise selection stopped at its step limit.
    pub step_limit_hit: bool,
}

impl RegressionModel {
    /// Non-intercept terms.
    pub fn model_terms(&self) -> &[Term] {
        &self.terms[1..]
    }

    /// Predictor indices that appear in at least one model term, in order.
    pub fn used_predictors(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .model_terms()
            .iter()
            .flat_map(|t| t.predictors())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Fit `terms` (the intercept is added) of the z-scored predictors in
/// `x` to `y`.
pub fn fit_model(x: &Table, y: &[f64], response: &str, terms: &[Term]) -> Result<RegressionModel> {
    let standardizer = Standardizer::fit(&x.columns);
    let z = standardizer.apply(&x.columns);
    let mut all = vec![Term::Intercept];
    all.extend(terms.iter().copied().filter(|t| *t != Term::Intercept));
    let names: Vec<String> = all.iter().map(|t| t.label(&x.names)).collect();
    let fit = fit_ols(&design_matrix(&all, &z), y, &names)?;
    let raw_coefficients = match fit_ols(&design_matrix(&all, &x.columns), y, &names) {
        Ok(raw) => raw.coefficients,
        Err(_) => vec![f64::NAN; all.len()],
    };
    Ok(RegressionModel {
        response: response.to_string(),
        predictors: x.names.clone(),
        terms: all,
        term_names: names,
        coefficients: fit.coefficients,
        raw_coefficients,
        std_errors: fit.std_errors,
        t_stats: fit.t_stats,
        p_values: fit.p_values,
        r_squared: fit.r_squared,
        adj_r_squared: fit.adj_r_squared,
        n: y.len(),
        residuals: fit.residuals,
        standardizer,
        history: Vec::new(),
        step_limit_hit: false,
    })
}
