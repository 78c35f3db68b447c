//! Decomposition of a fitted model's R² into per-predictor shares.
//!
//! A predictor group is every model term built only from predictors in a
//! chosen set, so a group contributes its linear and quadratic terms alone
//! and an interaction term only together with its partner.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{design_matrix, RegressionModel, Table, Term};
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

/// Subset enumeration visits 2^m models.
pub const MAX_GROUPS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceShare {
    pub predictor: String,
    pub share: f64,
}

pub trait ImportanceMethod: Named + Send + Sync {
    /// One share per entry of `groups` (predictor indices).
    fn shares(&self, ctx: &SubsetR2) -> Result<Vec<f64>>;
}

/// R² of intercept-plus-terms models restricted to subsets of predictor
/// groups.
pub struct SubsetR2 {
    groups: Vec<usize>,
    terms: Vec<Term>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    sst: f64,
    /// Model terms in entry order, for the sequential method.
    order: Vec<Term>,
}

impl SubsetR2 {
    pub fn new(model: &RegressionModel, table: &Table, y: &[f64]) -> Result<Self> {
        if table.names != model.predictors {
            return Err(Error::Regression(
                "table columns differ from the model's predictors".into(),
            ));
        }
        let z = model.standardizer.apply(&table.columns);
        let terms: Vec<Term> = model.model_terms().to_vec();
        let x = design_matrix(&terms, &z);
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sst = y.iter().map(|v| (v - mean).powi(2)).sum();
        Ok(SubsetR2 {
            groups: model.used_predictors(),
            order: terms.clone(),
            terms,
            x,
            y: DVector::from_iterator(y.len(), y.iter().map(|v| v - mean)),
            sst,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// R² of the model holding the groups whose bits are set in `mask`.
    pub fn r2(&self, mask: u32) -> f64 {
        if self.sst == 0.0 {
            return 0.0;
        }
        let cols: Vec<usize> = (0..self.terms.len())
            .filter(|&j| {
                self.terms[j].predictors().iter().all(|p| {
                    let g = self
                        .groups
                        .iter()
                        .position(|q| q == p)
                        .expect("term predictor is a group");
                    mask & (1 << g) != 0
                })
            })
            .collect();
        if cols.is_empty() {
            return 0.0;
        }
        // centred columns absorb the intercept
        let n = self.x.nrows();
        let mut sub = DMatrix::zeros(n, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            let c = self.x.column(j);
            let m = c.mean();
            sub.column_mut(k).copy_from(&c.map(|v| v - m));
        }
        let svd = sub.clone().svd(true, true);
        let beta = svd.solve(&self.y, 1e-12).expect("svd with vectors");
        let resid = &self.y - &sub * beta;
        (1.0 - resid.norm_squared() / self.sst).clamp(0.0, 1.0)
    }

    fn all_r2(&self) -> Vec<f64> {
        (0..1u32 << self.groups.len())
            .into_par_iter()
            .map(|m| self.r2(m))
            .collect()
    }
}

/// Average R² gain of each group over all subsets of the others, first
/// within each subset size and then across sizes.
pub struct GeneralDominance;

impl Named for GeneralDominance {
    fn name(&self) -> &'static str {
        "dominance"
    }
    fn describe(&self) -> &'static str {
        "general dominance, all subsets of predictor groups"
    }
}

impl ImportanceMethod for GeneralDominance {
    fn shares(&self, ctx: &SubsetR2) -> Result<Vec<f64>> {
        let m = ctx.n_groups();
        if m > MAX_GROUPS {
            return Err(Error::Regression(format!(
                "{m} predictor groups exceed the subset enumeration limit of {MAX_GROUPS}; use the \"sequential\" method"
            )));
        }
        if m == 0 {
            return Ok(Vec::new());
        }
        let r2 = ctx.all_r2();
        // C(m - 1, k) for the size weights
        let mut binom = vec![1.0f64; m];
        for k in 1..m {
            binom[k] = binom[k - 1] * (m - k) as f64 / k as f64;
        }
        let shares = (0..m)
            .into_par_iter()
            .map(|g| {
                let bit = 1u32 << g;
                let mut by_size = vec![0.0; m];
                for mask in 0..1u32 << m {
                    if mask & bit == 0 {
                        by_size[mask.count_ones() as usize] +=
                            r2[(mask | bit) as usize] - r2[mask as usize];
                    }
                }
                by_size.iter().zip(&binom).map(|(s, c)| s / c).sum::<f64>() / m as f64
            })
            .collect();
        Ok(shares)
    }
}

/// R² gain of each group when groups are added in the order their first
/// term entered the model.
pub struct Sequential;

impl Named for Sequential {
    fn name(&self) -> &'static str {
        "sequential"
    }
    fn describe(&self) -> &'static str {
        "incremental R² in term entry order"
    }
}

impl ImportanceMethod for Sequential {
    fn shares(&self, ctx: &SubsetR2) -> Result<Vec<f64>> {
        let mut seq: Vec<usize> = Vec::new();
        for t in &ctx.order {
            for p in t.predictors() {
                let g = ctx.groups.iter().position(|q| *q == p).unwrap();
                if !seq.contains(&g) {
                    seq.push(g);
                }
            }
        }
        let mut shares = vec![0.0; ctx.n_groups()];
        let (mut mask, mut prev) = (0u32, 0.0);
        for g in seq {
            mask |= 1 << g;
            let r = ctx.r2(mask);
            shares[g] = r - prev;
            prev = r;
        }
        Ok(shares)
    }
}

pub fn importance_methods() -> Registry<dyn ImportanceMethod> {
    Registry::<dyn ImportanceMethod>::new("importance method")
        .with(Box::new(GeneralDominance))
        .with(Box::new(Sequential))
}

/// Shares of the predictors used by `model`, fitted on `table` and `y`.
pub fn relative_importance(
    model: &RegressionModel,
    table: &Table,
    y: &[f64],
    method: &str,
) -> Result<Vec<ImportanceShare>> {
    let methods = importance_methods();
    let method = methods.get(method)?;
    let ctx = SubsetR2::new(model, table, y)?;
    let shares = method.shares(&ctx)?;
    Ok(ctx
        .groups
        .iter()
        .zip(shares)
        .map(|(&g, share)| ImportanceShare {
            predictor: model.predictors[g].clone(),
            share,
        })
        .collect())
}
