//! Module-level predictors and responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{CellParameters, Electrode, ModuleConfig, SamplingRanges};
use crate::registry::{Named, Registry};
use crate::trace::{sample_std, SimTrace};

/// Maps one electrode's volume fractions onto [0, 1].
pub trait EpsNormalization: Named + Send + Sync {
    /// Normalized values, and whether the map was degenerate (every cell
    /// then gets 0.5).
    fn normalize(&self, eps: &[f64], electrode: Electrode) -> (Vec<f64>, bool);
}

fn min_max(eps: &[f64], lo: f64, hi: f64) -> (Vec<f64>, bool) {
    if hi - lo > 0.0 {
        (eps.iter().map(|e| (e - lo) / (hi - lo)).collect(), false)
    } else {
        (vec![0.5; eps.len()], true)
    }
}

/// Fixed interval reachable by the campaign's sampling, shared by all
/// modules.
pub struct RangeNormalization {
    pub negative: (f64, f64),
    pub positive: (f64, f64),
}

impl RangeNormalization {
    pub fn new(ranges: &SamplingRanges, nominal: &CellParameters) -> Result<Self> {
        Ok(RangeNormalization {
            negative: ranges.eps_bounds(nominal, Electrode::Negative)?,
            positive: ranges.eps_bounds(nominal, Electrode::Positive)?,
        })
    }
}

impl Named for RangeNormalization {
    fn name(&self) -> &'static str {
        "range"
    }
    fn describe(&self) -> &'static str {
        "min-max over the sampling interval"
    }
}

impl EpsNormalization for RangeNormalization {
    fn normalize(&self, eps: &[f64], electrode: Electrode) -> (Vec<f64>, bool) {
        let (lo, hi) = match electrode {
            Electrode::Negative => self.negative,
            Electrode::Positive => self.positive,
        };
        min_max(eps, lo, hi)
    }
}

/// Min-max across the module's own cells.
pub struct ModuleNormalization;

impl Named for ModuleNormalization {
    fn name(&self) -> &'static str {
        "module"
    }
    fn describe(&self) -> &'static str {
        "min-max across the cells of each module"
    }
}

impl EpsNormalization for ModuleNormalization {
    fn normalize(&self, eps: &[f64], _: Electrode) -> (Vec<f64>, bool) {
        let lo = eps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        min_max(eps, lo, hi)
    }
}

pub fn normalizations(
    ranges: &SamplingRanges,
    nominal: &CellParameters,
) -> Result<Registry<dyn EpsNormalization>> {
    Ok(Registry::<dyn EpsNormalization>::new("normalization")
        .with(Box::new(RangeNormalization::new(ranges, nominal)?))
        .with(Box::new(ModuleNormalization)))
}

/// Position weights: positive near the terminals, negative far from them.
/// For four cells, [2, 1, -1, -2].
pub fn loc_weights(n_p: usize) -> Vec<f64> {
    let half = (n_p / 2) as f64;
    (1..=n_p)
        .map(|p| {
            let p = p as f64;
            if p <= half {
                half + 1.0 - p
            } else {
                half - p
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn weighted(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSet {
    pub mu_eps_n: f64,
    pub mu_eps_p: f64,
    pub sigma_eps_n: f64,
    pub sigma_eps_p: f64,
    pub loc: f64,
    /// Ω
    pub r_int: f64,
    /// m
    pub sp: f64,
    pub mu_comb: f64,
    pub sigma_comb: f64,
    pub loc_n: f64,
    pub loc_p: f64,
    pub mu_soc: f64,
    pub sigma_soc: f64,
    /// Largest discharge temperature range, K.
    pub delta_t_max: f64,
    pub degenerate_normalization: bool,
}

impl PredictorSet {
    pub const NAMES: [&'static str; 14] = [
        "mu_eps_n",
        "mu_eps_p",
        "sigma_eps_n",
        "sigma_eps_p",
        "loc",
        "r_int",
        "sp",
        "mu_comb",
        "sigma_comb",
        "loc_n",
        "loc_p",
        "mu_soc",
        "sigma_soc",
        "delta_t_max",
    ];

    pub fn values(&self) -> [f64; 14] {
        [
            self.mu_eps_n,
            self.mu_eps_p,
            self.sigma_eps_n,
            self.sigma_eps_p,
            self.loc,
            self.r_int,
            self.sp,
            self.mu_comb,
            self.sigma_comb,
            self.loc_n,
            self.loc_p,
            self.mu_soc,
            self.sigma_soc,
            self.delta_t_max,
        ]
    }
}

/// Predictors of one simulated module. Cell position 1 is `cfg.cells[0]`.
pub fn compute_predictors(
    cfg: &ModuleConfig,
    trace: &SimTrace,
    norm: &dyn EpsNormalization,
) -> Result<PredictorSet> {
    let first = trace
        .first_cycle()
        .ok_or_else(|| Error::Domain("trace holds no complete cycle".into()))?;
    if cfg.cells.len() != trace.n_p {
        return Err(Error::Domain(
            "configuration and trace disagree on the cell count".into(),
        ));
    }
    let eps_n: Vec<f64> = cfg.cells.iter().map(|c| c.eps_s_n).collect();
    let eps_p: Vec<f64> = cfg.cells.iter().map(|c| c.eps_s_p).collect();
    let (bar_n, dn) = norm.normalize(&eps_n, Electrode::Negative);
    let (bar_p, dp) = norm.normalize(&eps_p, Electrode::Positive);
    let comb: Vec<f64> = bar_n.iter().zip(&bar_p).map(|(a, b)| a.min(*b)).collect();
    let w = loc_weights(cfg.n_p);
    Ok(PredictorSet {
        mu_eps_n: mean(&eps_n),
        mu_eps_p: mean(&eps_p),
        sigma_eps_n: sample_std(&eps_n),
        sigma_eps_p: sample_std(&eps_p),
        loc: weighted(&w, &comb),
        r_int: cfg.r_int,
        sp: cfg.spacing,
        mu_comb: mean(&comb),
        sigma_comb: sample_std(&comb),
        loc_n: weighted(&w, &bar_n),
        loc_p: weighted(&w, &bar_p),
        mu_soc: mean(&first.eod_soc),
        sigma_soc: sample_std(&first.eod_soc),
        delta_t_max: first.delta_t_max,
        degenerate_normalization: dn || dp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    /// A
    pub sigma_i: f64,
    /// K
    pub sigma_t: f64,
    /// K
    pub dtmax: f64,
    /// % change of module capacity against the reference module.
    pub dq: Option<f64>,
    /// % change of module energy against the reference module.
    pub de: Option<f64>,
    /// Wh
    pub elost: f64,
    /// Ω
    pub sigma_rsei: f64,
}

impl ResponseSet {
    pub const NAMES: [&'static str; 7] = [
        "sigma_i",
        "sigma_t",
        "dtmax",
        "dq",
        "de",
        "elost",
        "sigma_rsei",
    ];

    /// Values in [`Self::NAMES`] order, NaN where unavailable.
    pub fn values(&self) -> [f64; 7] {
        [
            self.sigma_i,
            self.sigma_t,
            self.dtmax,
            self.dq.unwrap_or(f64::NAN),
            self.de.unwrap_or(f64::NAN),
            self.elost,
            self.sigma_rsei,
        ]
    }
}

/// Responses of one module; the discharge-window quantities come from the
/// first cycle.
pub fn compute_responses(trace: &SimTrace, reference: Option<&SimTrace>) -> Result<ResponseSet> {
    let first = trace
        .first_cycle()
        .ok_or_else(|| Error::Domain("trace holds no complete cycle".into()))?;
    let last = trace.last_cycle().unwrap();
    let pct = |ours: f64, theirs: f64| 100.0 * (ours - theirs) / theirs;
    let reference = reference.and_then(|r| r.first_cycle());
    Ok(ResponseSet {
        sigma_i: first.sigma_i,
        sigma_t: first.sigma_t,
        dtmax: first.delta_t_max,
        dq: reference.map(|r| pct(first.q_mod, r.q_mod)),
        de: reference.map(|r| pct(first.e_mod, r.e_mod)),
        elost: last.e_mod - first.e_mod,
        sigma_rsei: sample_std(&trace.final_r_sei),
    })
}

/// A response variable and the predictors regressed against it.
pub trait ResponseVariable: Named + Send + Sync {
    fn extract(&self, r: &ResponseSet) -> Option<f64>;
    fn predictors(&self, extended: bool) -> &'static [&'static str];
}

const BASE: &[&str] = &[
    "mu_eps_n",
    "mu_eps_p",
    "sigma_eps_n",
    "sigma_eps_p",
    "loc",
    "r_int",
    "sp",
];
const SPLIT_LOC: &[&str] = &[
    "mu_eps_n",
    "mu_eps_p",
    "sigma_eps_n",
    "sigma_eps_p",
    "loc_n",
    "loc_p",
    "r_int",
    "sp",
];

struct Response {
    name: &'static str,
    describe: &'static str,
    extract: fn(&ResponseSet) -> Option<f64>,
    extended: &'static [&'static str],
}

impl Named for Response {
    fn name(&self) -> &'static str {
        self.name
    }
    fn describe(&self) -> &'static str {
        self.describe
    }
}

impl ResponseVariable for Response {
    fn extract(&self, r: &ResponseSet) -> Option<f64> {
        (self.extract)(r)
    }
    fn predictors(&self, extended: bool) -> &'static [&'static str] {
        if extended {
            self.extended
        } else {
            BASE
        }
    }
}

pub fn response_variables() -> Registry<dyn ResponseVariable> {
    let capacity_ext: &'static [&'static str] =
        &["mu_comb", "sigma_comb", "loc", "r_int", "sp", "mu_soc"];
    let table: [Response; 7] = [
        Response {
            name: "sigma_i",
            describe: "time-averaged branch-current spread, A",
            extract: |r| Some(r.sigma_i),
            extended: &[
                "mu_eps_n",
                "mu_eps_p",
                "sigma_eps_n",
                "sigma_eps_p",
                "loc",
                "r_int",
                "sp",
                "delta_t_max",
                "sigma_soc",
            ],
        },
        Response {
            name: "sigma_t",
            describe: "time-averaged temperature spread, K",
            extract: |r| Some(r.sigma_t),
            extended: SPLIT_LOC,
        },
        Response {
            name: "dtmax",
            describe: "largest temperature range, K",
            extract: |r| Some(r.dtmax),
            extended: SPLIT_LOC,
        },
        Response {
            name: "dq",
            describe: "capacity change against the reference module, %",
            extract: |r| r.dq,
            extended: capacity_ext,
        },
        Response {
            name: "de",
            describe: "energy change against the reference module, %",
            extract: |r| r.de,
            extended: capacity_ext,
        },
        Response {
            name: "elost",
            describe: "discharge energy of the last cycle minus the first, Wh",
            extract: |r| Some(r.elost),
            extended: SPLIT_LOC,
        },
        Response {
            name: "sigma_rsei",
            describe: "spread of final SEI resistance, ohm",
            extract: |r| Some(r.sigma_rsei),
            extended: SPLIT_LOC,
        },
    ];
    let mut reg: Registry<dyn ResponseVariable> = Registry::new("response");
    for r in table {
        reg.register(Box::new(r));
    }
    reg
}
