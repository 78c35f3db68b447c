//! Bidirectional stepwise term selection by coefficient p-values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ols::{fit_model, fit_ols, StepAction, StepEvent};
use super::{RegressionModel, Standardizer, Table, Term};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepwiseOptions {
    /// A candidate enters when its p-value is below this.
    pub p_enter: f64,
    /// A term leaves when its p-value is above this.
    pub p_remove: f64,
    pub max_steps: usize,
}

impl Default for StepwiseOptions {
    fn default() -> Self {
        StepwiseOptions {
            p_enter: 0.05,
            p_remove: 0.10,
            max_steps: 200,
        }
    }
}

struct Workspace<'a> {
    z: Vec<Vec<f64>>,
    y: &'a [f64],
}

impl Workspace<'_> {
    fn column(&self, t: Term) -> Vec<f64> {
        super::design_matrix(&[t], &self.z)
            .column(0)
            .iter()
            .copied()
            .collect()
    }

    /// Fit intercept + `terms`; `None` when the design is rank deficient.
    fn fit(&self, terms: &[Term], cache: &[(Term, Vec<f64>)]) -> Result<Option<Vec<f64>>> {
        let n = self.y.len();
        let mut x = DMatrix::from_element(n, terms.len() + 1, 1.0);
        for (j, t) in terms.iter().enumerate() {
            let col = &cache.iter().find(|(c, _)| c == t).expect("cached column").1;
            x.column_mut(j + 1).copy_from_slice(col);
        }
        let names: Vec<String> = (0..=terms.len()).map(|j| j.to_string()).collect();
        match fit_ols(&x, self.y, &names) {
            Ok(fit) => Ok(Some(fit.p_values[1..].to_vec())),
            Err(Error::RankDeficient(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Select terms from `candidates` by alternating forward entry and backward
/// removal until neither applies. A quadratic or interaction term may enter
/// only once its linear parents are in, and a linear term cannot leave while
/// a term built on it remains. Candidates that would make the design rank
/// deficient are skipped.
pub fn stepwise_fit(
    x: &Table,
    y: &[f64],
    response: &str,
    candidates: &[Term],
    opts: &StepwiseOptions,
) -> Result<RegressionModel> {
    let candidates: Vec<Term> = candidates
        .iter()
        .copied()
        .filter(|t| *t != Term::Intercept)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Regression("no candidate terms".into()));
    }
    let z = Standardizer::fit(&x.columns).apply(&x.columns);
    let ws = Workspace { z, y };
    let cache: Vec<(Term, Vec<f64>)> = candidates.iter().map(|&t| (t, ws.column(t))).collect();

    let mut model: Vec<Term> = Vec::new();
    let mut history = Vec::new();
    let mut limit_hit = false;
    let mut current_p: Vec<f64> = Vec::new();
    loop {
        if history.len() >= opts.max_steps {
            limit_hit = true;
            break;
        }
        // forward
        let mut best: Option<(Term, f64)> = None;
        for &c in &candidates {
            if model.contains(&c) || !c.parents().iter().all(|p| model.contains(p)) {
                continue;
            }
            let mut trial = model.clone();
            trial.push(c);
            if let Some(p) = ws.fit(&trial, &cache)? {
                let pc = *p.last().unwrap();
                if pc < opts.p_enter && best.map_or(true, |(_, bp)| pc < bp) {
                    best = Some((c, pc));
                }
            }
        }
        if let Some((term, p_value)) = best {
            model.push(term);
            current_p = ws
                .fit(&model, &cache)?
                .expect("entered term keeps full rank");
            history.push(event(
                history.len(),
                StepAction::Enter,
                term,
                p_value,
                x,
                &ws,
                &model,
            )?);
            continue;
        }
        // backward
        let mut worst: Option<(usize, f64)> = None;
        for (j, t) in model.iter().enumerate() {
            let is_parent = model.iter().any(|o| o.parents().contains(t));
            if is_parent {
                continue;
            }
            let p = current_p[j];
            if p > opts.p_remove && worst.map_or(true, |(_, wp)| p > wp) {
                worst = Some((j, p));
            }
        }
        if let Some((j, p_value)) = worst {
            let term = model.remove(j);
            current_p = if model.is_empty() {
                Vec::new()
            } else {
                ws.fit(&model, &cache)?.expect("sub-design keeps full rank")
            };
            history.push(event(
                history.len(),
                StepAction::Remove,
                term,
                p_value,
                x,
                &ws,
                &model,
            )?);
            continue;
        }
        break;
    }
    let mut fitted = fit_model(x, y, response, &model)?;
    fitted.history = history;
    fitted.step_limit_hit = limit_hit;
    Ok(fitted)
}

fn event(
    step: usize,
    action: StepAction,
    term: Term,
    p_value: f64,
    x: &Table,
    ws: &Workspace,
    model: &[Term],
) -> Result<StepEvent> {
    let r_squared = if model.is_empty() {
        0.0
    } else {
        let mut all = vec![Term::Intercept];
        all.extend_from_slice(model);
        let names: Vec<String> = all.iter().map(|t| t.label(&x.names)).collect();
        fit_ols(&super::design_matrix(&all, &ws.z), ws.y, &names)?.r_squared
    };
    Ok(StepEvent {
        step,
        action,
        term: term.label(&x.names),
        p_value,
        r_squared,
    })
}
