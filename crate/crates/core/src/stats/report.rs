//! Ranked importance shares with the cumulative R² line.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ImportanceShare, RegressionModel};
use crate::io::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub rank: usize,
    pub predictor: String,
    pub share: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub response: String,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub n: usize,
    pub rows: Vec<ParetoRow>,
}

pub fn pareto_report(model: &RegressionModel, shares: &[ImportanceShare]) -> ParetoReport {
    let mut sorted: Vec<&ImportanceShare> = shares.iter().collect();
    // stable: equal shares keep predictor order
    sorted.sort_by(|a, b| b.share.total_cmp(&a.share));
    let mut cumulative = 0.0;
    let rows = sorted
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            cumulative += s.share;
            ParetoRow {
                rank: k + 1,
                predictor: s.predictor.clone(),
                share: s.share,
                cumulative,
            }
        })
        .collect();
    ParetoReport {
        response: model.response.clone(),
        r_squared: if model.model_terms().is_empty() {
            0.0
        } else {
            model.r_squared
        },
        adj_r_squared: model.adj_r_squared,
        n: model.n,
        rows,
    }
}

impl ParetoReport {
    pub fn total_share(&self) -> f64 {
        self.rows.iter().map(|r| r.share).sum()
    }

    pub fn top(&self, k: usize) -> Vec<&str> {
        self.rows
            .iter()
            .take(k)
            .map(|r| r.predictor.as_str())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,predictor,share,cumulative_r2\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.rank,
                r.predictor,
                fmt_f64(r.share),
                fmt_f64(r.cumulative)
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "response {}  n = {}  R^2 = {:.4}  adjusted R^2 = {:.4}",
            self.response, self.n, self.r_squared, self.adj_r_squared
        );
        if self.rows.is_empty() {
            out.push_str("intercept-only model, no predictors ranked\n");
            return out;
        }
        let w = self
            .rows
            .iter()
            .map(|r| r.predictor.len())
            .max()
            .unwrap_or(0)
            .max(9);
        let _ = writeln!(
            out,
            "{:>4}  {:<w$}  {:>8}  {:>10}",
            "rank", "predictor", "share", "cumulative"
        );
        for r in &self.rows {
            let bar = "#".repeat((r.share.max(0.0) * 40.0).round() as usize);
            let _ = writeln!(
                out,
                "{:>4}  {:<w$}  {:>8.4}  {:>10.4}  {}",
                r.rank, r.predictor, r.share, r.cumulative, bar
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{fit_model, Table};

    fn model_with_r2(r2: f64) -> RegressionModel {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let t = Table::new(vec!["x".into()], vec![x]).unwrap();
        let mut m = fit_model(&t, &y, "y", &[crate::stats::Term::Linear(0)]).unwrap();
        m.r_squared = r2;
        m
    }

    fn share(p: &str, s: f64) -> ImportanceShare {
        ImportanceShare {
            predictor: p.into(),
            share: s,
        }
    }

    #[test]
    fn cumulative_is_prefix_sum_of_sorted_shares() {
        let m = model_with_r2(0.9);
        let r = pareto_report(&m, &[share("b", 0.1), share("a", 0.5), share("c", 0.3)]);
        assert_eq!(r.top(3), vec!["a", "c", "b"]);
        let cum: Vec<f64> = r.rows.iter().map(|x| x.cumulative).collect();
        for (c, e) in cum.iter().zip([0.5, 0.8, 0.9]) {
            assert!((c - e).abs() < 1e-15);
        }
        assert!((r.total_share() - m.r_squared).abs() < 1e-10);
        assert!(r
            .to_csv()
            .starts_with("rank,predictor,share,cumulative_r2\n1,a,"));
        assert!(r.to_text().contains("cumulative"));
    }

    #[test]
    fn empty_model_reports_zero() {
        let mut m = model_with_r2(0.3);
        m.terms.truncate(1);
        let r = pareto_report(&m, &[]);
        assert!(r.rows.is_empty());
        assert_eq!(r.r_squared, 0.0);
        assert!(r.to_text().contains("intercept-only"));
    }
}
