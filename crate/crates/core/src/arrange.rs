//! Cell placement along the module and its effect on the responses.
//!
//! An order lists original cell indices by position: `order[k]` is the cell
//! placed at position k, and position 0 sits nearest the module terminals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::module_solver::run_protocol;
use crate::params::{capacity_from_eps, CellParameters, Electrode, ModuleConfig};
use crate::registry::{Named, Registry};
use crate::trace::sample_std;

/// Capacity of the limiting electrode, Ah.
pub fn cell_capacity(cell: &CellParameters) -> Result<f64> {
    Ok(capacity_from_eps(cell.eps_s_n, Electrode::Negative)?
        .min(capacity_from_eps(cell.eps_s_p, Electrode::Positive)?))
}

pub trait ArrangementStrategy: Named + Send + Sync {
    fn order(&self, cells: &[CellParameters]) -> Result<Vec<usize>>;
}

fn sorted_by_capacity(cells: &[CellParameters], descending: bool) -> Result<Vec<usize>> {
    let caps = cells
        .iter()
        .map(cell_capacity)
        .collect::<Result<Vec<f64>>>()?;
    Ok(order_by_capacity(&caps, descending))
}

/// Stable sort of cell indices by capacity; ties keep their original order.
pub fn order_by_capacity(capacities: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..capacities.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = capacities[a].total_cmp(&capacities[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    idx
}

pub struct Descending;
pub struct Ascending;
pub struct Identity;
pub struct Reversed;

impl Named for Descending {
    fn name(&self) -> &'static str {
        "descending"
    }
    fn describe(&self) -> &'static str {
        "largest capacity nearest the terminals"
    }
}
impl ArrangementStrategy for Descending {
    fn order(&self, cells: &[CellParameters]) -> Result<Vec<usize>> {
        sorted_by_capacity(cells, true)
    }
}

impl Named for Ascending {
    fn name(&self) -> &'static str {
        "ascending"
    }
    fn describe(&self) -> &'static str {
        "smallest capacity nearest the terminals"
    }
}
impl ArrangementStrategy for Ascending {
    fn order(&self, cells: &[CellParameters]) -> Result<Vec<usize>> {
        sorted_by_capacity(cells, false)
    }
}

impl Named for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn describe(&self) -> &'static str {
        "cells as listed"
    }
}
impl ArrangementStrategy for Identity {
    fn order(&self, cells: &[CellParameters]) -> Result<Vec<usize>> {
        Ok((0..cells.len()).collect())
    }
}

impl Named for Reversed {
    fn name(&self) -> &'static str {
        "reversed"
    }
    fn describe(&self) -> &'static str {
        "cells as listed, last first"
    }
}
impl ArrangementStrategy for Reversed {
    fn order(&self, cells: &[CellParameters]) -> Result<Vec<usize>> {
        Ok((0..cells.len()).rev().collect())
    }
}

pub fn strategies() -> Registry<dyn ArrangementStrategy> {
    Registry::<dyn ArrangementStrategy>::new("arrangement strategy")
        .with(Box::new(Descending))
        .with(Box::new(Ascending))
        .with(Box::new(Identity))
        .with(Box::new(Reversed))
}

/// Descending-capacity order of `cells`.
pub fn arrange_descending_capacity(cells: &[CellParameters]) -> Result<Vec<usize>> {
    if cells.len() < 2 {
        return Err(Error::invalid("cells", "need at least 2 cells to arrange"));
    }
    Descending.order(cells)
}

/// Module responses of one cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementResponses {
    pub order: Vec<usize>,
    /// A
    pub sigma_i: f64,
    /// K
    pub delta_t_max: f64,
    /// Wh
    pub e_lost: f64,
    /// Ω
    pub sigma_r_sei: f64,
    /// Ah, first cycle
    pub q_mod: f64,
}

impl ArrangementResponses {
    pub const METRICS: [&'static str; 5] =
        ["sigma_i", "delta_t_max", "e_lost", "sigma_r_sei", "q_mod"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.sigma_i,
            self.delta_t_max,
            self.e_lost,
            self.sigma_r_sei,
            self.q_mod,
        ]
    }

    pub fn metric(&self, name: &str) -> Result<f64> {
        Self::METRICS
            .iter()
            .position(|m| *m == name)
            .map(|i| self.values()[i])
            .ok_or_else(|| Error::UnknownName {
                kind: "arrangement metric",
                name: name.to_string(),
                available: Self::METRICS.join(", "),
            })
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n
        || order
            .iter()
            .any(|&i| i >= n || std::mem::replace(&mut seen[i], true))
    {
        return Err(Error::invalid(
            "order",
            format!("{order:?} is not a permutation of {n} cells"),
        ));
    }
    Ok(())
}

/// Simulate `cfg` with its cells placed in `order` for `n_cycles` cycles.
pub fn evaluate_order(
    cfg: &ModuleConfig,
    order: &[usize],
    n_cycles: usize,
) -> Result<ArrangementResponses> {
    check_permutation(order, cfg.cells.len())?;
    let mut c = cfg.permuted(order);
    c.n_cycles = n_cycles;
    let trace = run_protocol(&c)?;
    let first = trace.first_cycle().unwrap();
    let last = trace.last_cycle().unwrap();
    Ok(ArrangementResponses {
        order: order.to_vec(),
        sigma_i: first.sigma_i,
        delta_t_max: first.delta_t_max,
        e_lost: last.e_mod - first.e_mod,
        sigma_r_sei: sample_std(&trace.final_r_sei),
        q_mod: first.q_mod,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementComparison {
    pub baseline: ArrangementResponses,
    pub proposed: ArrangementResponses,
}

impl ArrangementComparison {
    /// (proposed − baseline) / |baseline| per metric; NaN where the baseline
    /// is zero.
    pub fn relative_changes(&self) -> [f64; 5] {
        let b = self.baseline.values();
        let p = self.proposed.values();
        std::array::from_fn(|i| {
            if b[i] != 0.0 {
                (p[i] - b[i]) / b[i].abs()
            } else {
                f64::NAN
            }
        })
    }
}

/// Simulate every order (in parallel) and compare each later order with the
/// first.
pub fn compare_arrangements(
    cfg: &ModuleConfig,
    orders: &[Vec<usize>],
    n_cycles: usize,
) -> Result<Vec<ArrangementComparison>> {
    if orders.len() < 2 {
        return Err(Error::invalid(
            "orders",
            "need a baseline and at least one other order",
        ));
    }
    let results = orders
        .par_iter()
        .map(|o| evaluate_order(cfg, o, n_cycles))
        .collect::<Result<Vec<_>>>()?;
    Ok(results[1..]
        .iter()
        .map(|p| ArrangementComparison {
            baseline: results[0].clone(),
            proposed: p.clone(),
        })
        .collect())
}

pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Responses of every placement of the module's cells, in lexicographic
/// order of the permutation.
pub fn exhaustive(cfg: &ModuleConfig, n_cycles: usize) -> Result<Vec<ArrangementResponses>> {
    if cfg.cells.len() > 6 {
        return Err(Error::invalid(
            "n_p",
            "exhaustive enumeration is limited to 6 cells",
        ));
    }
    all_permutations(cfg.cells.len())
        .par_iter()
        .map(|o| evaluate_order(cfg, o, n_cycles))
        .collect()
}

/// 1-based rank of `order` among `all` by `metric` (smaller is better; ties
/// share the better rank).
pub fn rank_of(order: &[usize], all: &[ArrangementResponses], metric: &str) -> Result<usize> {
    let mine = all
        .iter()
        .find(|r| r.order == order)
        .ok_or_else(|| Error::invalid("order", "not among the evaluated orders"))?
        .metric(metric)?;
    let mut better = 0;
    for r in all {
        if r.metric(metric)? < mine {
            better += 1;
        }
    }
    Ok(better + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{eps_from_capacity, SolverSettings};

    fn cells_with_capacity(caps: &[f64]) -> Vec<CellParameters> {
        caps.iter()
            .map(|&q| {
                let mut c = CellParameters::lg_m50_like();
                c.eps_s_n = eps_from_capacity(q, Electrode::Negative).unwrap();
                c.eps_s_p = eps_from_capacity(q, Electrode::Positive).unwrap();
                c
            })
            .collect()
    }

    #[test]
    fn descending_example_order() {
        let cells = cells_with_capacity(&[4.8, 4.9, 4.7, 4.85]);
        let order: Vec<usize> = arrange_descending_capacity(&cells)
            .unwrap()
            .iter()
            .map(|i| i + 1)
            .collect();
        assert_eq!(order, vec![2, 4, 1, 3]);
    }

    #[test]
    fn sorted_and_tied_inputs_give_identity() {
        let sorted = cells_with_capacity(&[4.9, 4.85, 4.8, 4.7]);
        assert_eq!(
            arrange_descending_capacity(&sorted).unwrap(),
            vec![0, 1, 2, 3]
        );
        let equal = cells_with_capacity(&[4.8; 4]);
        assert_eq!(
            arrange_descending_capacity(&equal).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(arrange_descending_capacity(&equal[..1]).is_err());
    }

    #[test]
    fn registry_strategies() {
        let cells = cells_with_capacity(&[4.8, 4.9, 4.7, 4.85]);
        let reg = strategies();
        assert_eq!(
            reg.get("ascending").unwrap().order(&cells).unwrap(),
            vec![2, 0, 3, 1]
        );
        assert_eq!(
            reg.get("reversed").unwrap().order(&cells).unwrap(),
            vec![3, 2, 1, 0]
        );
        assert_eq!(
            reg.get("identity").unwrap().order(&cells).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(reg.get("weight").is_err());
    }

    #[test]
    fn twenty_four_permutations() {
        let p = all_permutations(4);
        assert_eq!(p.len(), 24);
        assert_eq!(p[0], vec![0, 1, 2, 3]);
        assert_eq!(p[23], vec![3, 2, 1, 0]);
    }

    #[test]
    fn rejects_non_permutations() {
        let cfg = ModuleConfig::reference(CellParameters::lg_m50_like(), 4);
        assert!(evaluate_order(&cfg, &[0, 1, 1, 2], 1).is_err());
        assert!(evaluate_order(&cfg, &[0, 1, 2], 1).is_err());
    }

    #[test]
    fn homogeneous_module_is_permutation_invariant() {
        let mut cfg = ModuleConfig::reference(CellParameters::lg_m50_like(), 4);
        cfg.solver = SolverSettings::fast();
        let orders = vec![vec![0, 1, 2, 3], vec![3, 1, 0, 2], vec![2, 3, 1, 0]];
        for c in compare_arrangements(&cfg, &orders, 1).unwrap() {
            for (a, b) in c.baseline.values().iter().zip(c.proposed.values()) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} {b}");
            }
        }
    }

    #[test]
    fn relative_changes_recompute_from_absolutes() {
        let mk = |s: f64| ArrangementResponses {
            order: vec![0, 1],
            sigma_i: s,
            delta_t_max: 2.0 * s,
            e_lost: -s,
            sigma_r_sei: 0.0,
            q_mod: 10.0,
        };
        let c = ArrangementComparison {
            baseline: mk(0.5),
            proposed: mk(0.25),
        };
        let r = c.relative_changes();
        assert_eq!(r[0], -0.5);
        assert_eq!(r[1], -0.5);
        assert_eq!(r[2], 0.5);
        assert!(r[3].is_nan());
        assert_eq!(r[4], 0.0);
    }
}
