//! Response-by-response analysis of a campaign table: stepwise selection
//! over the full quadratic candidate set, then importance shares.

use std::fmt::Write as _;

use super::features::response_variables;
use super::{
    full_quadratic_terms, pareto_report, relative_importance, stepwise_fit, ImportanceShare,
    ParetoReport, RegressionModel, StepwiseOptions, Table,
};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: RegressionModel,
    pub shares: Vec<ImportanceShare>,
    pub report: ParetoReport,
    /// Predictor columns of the rows used.
    pub x: Table,
    pub y: Vec<f64>,
}

/// Fit `response` (a registered response name) against its base or extended
/// predictor list. Rows with a missing value are dropped.
pub fn analyze_response(
    table: &Table,
    response: &str,
    extended: bool,
    method: &str,
    opts: &StepwiseOptions,
) -> Result<Analysis> {
    let responses = response_variables();
    let var = responses.get(response)?;
    let predictors = var.predictors(extended);
    let all = table.select(predictors)?;
    let y_all = table.column(response)?;
    let keep: Vec<bool> = (0..table.rows())
        .map(|r| y_all[r].is_finite() && all.columns.iter().all(|c| c[r].is_finite()))
        .collect();
    let x = all.filter_rows(|r| keep[r]);
    let y: Vec<f64> = (0..table.rows())
        .filter(|&r| keep[r])
        .map(|r| y_all[r])
        .collect();
    if y.len() < 3 {
        return Err(Error::Regression(format!(
            "only {} usable rows for {response}",
            y.len()
        )));
    }
    let model = stepwise_fit(
        &x,
        &y,
        response,
        &full_quadratic_terms(predictors.len()),
        opts,
    )?;
    let shares = relative_importance(&model, &x, &y, method)?;
    let report = pareto_report(&model, &shares);
    Ok(Analysis {
        model,
        shares,
        report,
        x,
        y,
    })
}

impl Analysis {
    pub fn summary_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let _ = writeln!(out, "response: {}", m.response);
        let _ = writeln!(out, "rows: {}", m.n);
        let _ = writeln!(
            out,
            "R^2: {:.6}  adjusted: {:.6}",
            m.r_squared, m.adj_r_squared
        );
        if m.step_limit_hit {
            out.push_str("stepwise selection stopped at its step limit\n");
        }
        let w = m
            .term_names
            .iter()
            .map(|t| t.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let _ = writeln!(
            out,
            "{:<w$}  {:>13}  {:>13}  {:>11}  {:>9}  {:>10}",
            "term", "coef (z)", "coef (raw)", "std err", "t", "p"
        );
        for j in 0..m.terms.len() {
            let _ = writeln!(
                out,
                "{:<w$}  {:>13.6e}  {:>13.6e}  {:>11.4e}  {:>9.3}  {:>10.3e}",
                m.term_names[j],
                m.coefficients[j],
                m.raw_coefficients[j],
                m.std_errors[j],
                m.t_stats[j],
                m.p_values[j]
            );
        }
        out.push_str("\nstepwise history\n");
        for e in &m.history {
            let _ = writeln!(
                out,
                "{:>3}  {:?} {}  p = {:.3e}  R^2 = {:.6}",
                e.step, e.action, e.term, e.p_value, e.r_squared
            );
        }
        out.push('\n');
        out.push_str(&self.report.to_text());
        out
    }

    pub fn residuals_csv(&self) -> String {
        let mut out = String::from("row,observed,fitted,residual\n");
        for (i, (y, r)) in self.y.iter().zip(&self.model.residuals).enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{}",
                fmt_f64(*y),
                fmt_f64(y - r),
                fmt_f64(*r)
            );
        }
        out
    }
}
