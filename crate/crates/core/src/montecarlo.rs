//! Monte Carlo campaigns over randomly drawn modules.
//!
//! Module `k` of a campaign is drawn from the child seed
//! `splitmix64(master + (k + 1) * 0x9E3779B97F4A7C15)`, so any module can be
//! regenerated on its own. Every finished module leaves a marker file holding
//! its result row; a rerun into the same directory skips those modules, and
//! the results table is always assembled in module order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64, write_atomic};
use crate::module_solver::run_protocol;
use crate::params::{
    sample_module, CellParameters, ModuleConfig, SamplingRanges, SolverSettings, T_REF,
};
use crate::stats::features::normalizations;
use crate::stats::{compute_predictors, compute_responses, PredictorSet, ResponseSet, Table};
use crate::trace::SimTrace;

pub const RESULTS_FILE: &str = "results.csv";
const SPEC_FILE: &str = "campaign.toml";
const REFERENCE_FILE: &str = "reference.json";
const MARKER_DIR: &str = "modules";

/// Child seed of module `index`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub n_modules: usize,
    pub n_cycles: usize,
    #[serde(default = "default_n_p")]
    pub n_p: usize,
    #[serde(default = "default_t_amb")]
    pub t_amb: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub ranges: SamplingRanges,
    #[serde(default)]
    pub solver: SolverSettings,
    /// How volume fractions are mapped onto [0, 1] for the location and
    /// weakest-electrode predictors.
    #[serde(default = "default_normalization")]
    pub normalization: String,
    #[serde(default = "CellParameters::lg_m50_like", skip_serializing)]
    pub nominal: CellParameters,
}

fn default_n_p() -> usize {
    4
}
fn default_t_amb() -> f64 {
    T_REF
}
fn default_normalization() -> String {
    "range".into()
}

impl CampaignSpec {
    /// 500 modules of 500 cycles on the default grids.
    pub fn full(master_seed: u64) -> Self {
        CampaignSpec {
            n_modules: 500,
            n_cycles: 500,
            n_p: 4,
            t_amb: T_REF,
            master_seed,
            ranges: SamplingRanges::default(),
            solver: SolverSettings::default(),
            normalization: default_normalization(),
            nominal: CellParameters::lg_m50_like(),
        }
    }

    /// 50 modules of 50 cycles on coarse grids.
    pub fn fast(master_seed: u64) -> Self {
        CampaignSpec {
            n_modules: 50,
            n_cycles: 50,
            solver: SolverSettings::fast(),
            ..Self::full(master_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modules == 0 {
            return Err(Error::invalid("n_modules", "must be at least 1"));
        }
        if self.n_cycles == 0 {
            return Err(Error::invalid("n_cycles", "must be at least 1"));
        }
        self.ranges.validate()?;
        self.solver.validate()?;
        self.module_config(0)?;
        normalizations(&self.ranges, &self.nominal)?.get(&self.normalization)?;
        Ok(())
    }

    /// Configuration of module `index`.
    pub fn module_config(&self, index: usize) -> Result<ModuleConfig> {
        let mut cfg = sample_module(
            child_seed(self.master_seed, index as u64),
            &self.nominal,
            &self.ranges,
            self.n_p,
        )?;
        cfg.n_cycles = self.n_cycles;
        cfg.t_amb = self.t_amb;
        cfg.solver = self.solver.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unperturbed module at R_int = 0.25 mΩ, Sp = 5 mm, one cycle.
    pub fn reference_config(&self) -> ModuleConfig {
        let mut cfg = ModuleConfig::reference(self.nominal.clone(), self.n_p);
        cfg.t_amb = self.t_amb;
        cfg.solver = self.solver.clone();
        cfg
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: CampaignSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Also write each module's trace and cycle summaries.
    pub keep_traces: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    Failed(String),
}

/// One module of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub id: usize,
    pub seed: u64,
    pub status: Status,
    pub predictors: Option<PredictorSet>,
    pub responses: Option<ResponseSet>,
    /// Largest whole-cycle temperature range over the run, K.
    pub dtmax_run: f64,
    pub max_sum_residual: f64,
    pub max_ladder_residual: f64,
    pub steps: u64,
    pub newton_iterations: u64,
    pub cv_timeouts: u64,
    pub r_sei_monotone: bool,
    pub final_r_sei: Vec<f64>,
    pub t_avg: Vec<f64>,
}

const DIAG_COLS: [&str; 8] = [
    "dtmax_run",
    "max_sum_residual",
    "max_ladder_residual",
    "steps",
    "newton_iterations",
    "cv_timeouts",
    "r_sei_monotone",
    "degenerate_normalization",
];

pub fn results_header(n_p: usize) -> String {
    let mut cols: Vec<String> = vec!["module".into(), "seed".into(), "status".into()];
    cols.extend(PredictorSet::NAMES.iter().map(|s| s.to_string()));
    cols.extend(ResponseSet::NAMES.iter().map(|s| s.to_string()));
    cols.extend(DIAG_COLS.iter().map(|s| s.to_string()));
    cols.extend((1..=n_p).map(|k| format!("r_sei_{k}")));
    cols.extend((1..=n_p).map(|k| format!("t_avg_{k}")));
    cols.join(",")
}

impl ResultRow {
    fn failed(id: usize, seed: u64, n_p: usize, message: String) -> Self {
        ResultRow {
            id,
            seed,
            status: Status::Failed(message),
            predictors: None,
            responses: None,
            dtmax_run: f64::NAN,
            max_sum_residual: f64::NAN,
            max_ladder_residual: f64::NAN,
            steps: 0,
            newton_iterations: 0,
            cv_timeouts: 0,
            r_sei_monotone: false,
            final_r_sei: vec![f64::NAN; n_p],
            t_avg: vec![f64::NAN; n_p],
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn to_csv_line(&self) -> String {
        let mut out = String::new();
        let status = match &self.status {
            Status::Ok => "ok".to_string(),
            Status::Failed(m) => format!("failed: {}", m.replace([',', '\n', '\r'], ";")),
        };
        let _ = write!(out, "{},{},{}", self.id, self.seed, status);
        let p = self
            .predictors
            .as_ref()
            .map_or([f64::NAN; 14], |p| p.values());
        let r = self
            .responses
            .as_ref()
            .map_or([f64::NAN; 7], |r| r.values());
        for v in p.iter().chain(&r).chain(
            [
                self.dtmax_run,
                self.max_sum_residual,
                self.max_ladder_residual,
            ]
            .iter(),
        ) {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        let _ = write!(
            out,
            ",{},{},{},{},{}",
            self.steps,
            self.newton_iterations,
            self.cv_timeouts,
            self.r_sei_monotone as u8,
            self.predictors
                .as_ref()
                .map_or(0, |p| p.degenerate_normalization as u8)
        );
        for v in self.final_r_sei.iter().chain(&self.t_avg) {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out
    }

    pub fn from_csv_line(line: &str, n_p: usize) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let expected = 3 + 14 + 7 + DIAG_COLS.len() + 2 * n_p;
        if f.len() != expected {
            return Err(Error::Parse(format!(
                "result row has {} fields, expected {expected}",
                f.len()
            )));
        }
        let int = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| Error::Parse(format!("bad integer `{s}`: {e}")))
        };
        let nums = |range: std::ops::Range<usize>| {
            f[range]
                .iter()
                .map(|s| parse_f64(s))
                .collect::<Result<Vec<f64>>>()
        };
        let status = match f[2] {
            "ok" => Status::Ok,
            s => Status::Failed(s.strip_prefix("failed: ").unwrap_or(s).to_string()),
        };
        let p = nums(3..17)?;
        let r = nums(17..24)?;
        let d = nums(24..27)?;
        let ok = status == Status::Ok;
        let opt = |v: f64| if v.is_nan() { None } else { Some(v) };
        Ok(ResultRow {
            id: int(f[0])? as usize,
            seed: int(f[1])?,
            predictors: ok.then(|| PredictorSet {
                mu_eps_n: p[0],
                mu_eps_p: p[1],
                sigma_eps_n: p[2],
                sigma_eps_p: p[3],
                loc: p[4],
                r_int: p[5],
                sp: p[6],
                mu_comb: p[7],
                sigma_comb: p[8],
                loc_n: p[9],
                loc_p: p[10],
                mu_soc: p[11],
                sigma_soc: p[12],
                delta_t_max: p[13],
                degenerate_normalization: f[31] == "1",
            }),
            responses: ok.then(|| ResponseSet {
                sigma_i: r[0],
                sigma_t: r[1],
                dtmax: r[2],
                dq: opt(r[3]),
                de: opt(r[4]),
                elost: r[5],
                sigma_rsei: r[6],
            }),
            status,
            dtmax_run: d[0],
            max_sum_residual: d[1],
            max_ladder_residual: d[2],
            steps: int(f[27])?,
            newton_iterations: int(f[28])?,
            cv_timeouts: int(f[29])?,
            r_sei_monotone: f[30] == "1",
            final_r_sei: nums(32..32 + n_p)?,
            t_avg: nums(32 + n_p..32 + 2 * n_p)?,
        })
    }
}

/// Rows of a campaign in module order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub n_p: usize,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut out = results_header(self.n_p);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv_line());
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty results file".into()))?;
        let n_p = header
            .split(',')
            .filter(|c| c.starts_with("t_avg_"))
            .count();
        if header != results_header(n_p) {
            return Err(Error::Parse(
                "results header does not match the documented columns".into(),
            ));
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| ResultRow::from_csv_line(l, n_p))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResultsTable { n_p, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn ok_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.is_ok())
    }

    /// Predictor and response columns of the completed modules.
    pub fn to_table(&self) -> Table {
        let mut names: Vec<String> = PredictorSet::NAMES.iter().map(|s| s.to_string()).collect();
        names.extend(ResponseSet::NAMES.iter().map(|s| s.to_string()));
        let mut columns = vec![Vec::new(); names.len()];
        for r in self.ok_rows() {
            let p = r.predictors.as_ref().unwrap().values();
            let v = r.responses.as_ref().unwrap().values();
            for (c, x) in columns.iter_mut().zip(p.iter().chain(&v)) {
                c.push(*x);
            }
        }
        Table { names, columns }
    }
}

fn marker_path(out: &Path, id: usize) -> PathBuf {
    out.join(MARKER_DIR).join(format!("m{id:06}.csv"))
}

fn load_or_run_reference(spec: &CampaignSpec, out: &Path) -> Result<SimTrace> {
    let path = out.join(REFERENCE_FILE);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(trace) = serde_json::from_str::<SimTrace>(&text) {
            return Ok(trace);
        }
    }
    let mut trace = run_protocol(&spec.reference_config())?;
    trace.samples.clear();
    let json = serde_json::to_string(&trace).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    Ok(trace)
}

/// Simulate one module and reduce it to a result row.
pub fn simulate_module(
    spec: &CampaignSpec,
    id: usize,
    reference: Option<&SimTrace>,
    trace_dir: Option<&Path>,
) -> Result<(ModuleConfig, ResultRow)> {
    let mut cfg = spec.module_config(id)?;
    if trace_dir.is_some() && cfg.solver.record_every == 0 {
        cfg.solver.record_every = 10;
    }
    let seed = cfg.seed;
    let norms = normalizations(&spec.ranges, &spec.nominal)?;
    let norm = norms.get(&spec.normalization)?;
    let row = match run_protocol(&cfg).and_then(|trace| {
        if let Some(dir) = trace_dir {
            trace.write_csv(&dir.join(format!("m{id:06}")))?;
        }
        let p = compute_predictors(&cfg, &trace, norm)?;
        let r = compute_responses(&trace, reference)?;
        Ok((trace, p, r))
    }) {
        Ok((trace, p, r)) => ResultRow {
            id,
            seed,
            status: Status::Ok,
            predictors: Some(p),
            responses: Some(r),
            dtmax_run: trace
                .cycles
                .iter()
                .map(|c| c.delta_t_max_cycle)
                .fold(0.0, f64::max),
            max_sum_residual: trace.diagnostics.max_sum_residual,
            max_ladder_residual: trace.diagnostics.max_ladder_residual,
            steps: trace.diagnostics.steps,
            newton_iterations: trace.diagnostics.newton_iterations,
            cv_timeouts: trace.diagnostics.cv_timeouts,
            r_sei_monotone: trace.diagnostics.r_sei_monotone,
            final_r_sei: trace.final_r_sei.clone(),
            t_avg: trace.t_avg.clone(),
        },
        Err(e) if e.is_config_error() => return Err(e),
        Err(e) => ResultRow::failed(id, seed, spec.n_p, e.to_string()),
    };
    Ok((cfg, row))
}

/// Run (or resume) a campaign in `out` and write `results.csv` there.
pub fn run_campaign(spec: &CampaignSpec, out: &Path, opts: &RunOptions) -> Result<ResultsTable> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let spec_text = spec.to_toml()?;
    let spec_path = out.join(SPEC_FILE);
    match fs::read_to_string(&spec_path) {
        Ok(existing) if existing != spec_text => {
            return Err(Error::invalid(
                "out",
                format!(
                    "{} holds a different campaign; choose another directory",
                    out.display()
                ),
            ))
        }
        Ok(_) => {}
        Err(_) => write_atomic(&spec_path, spec_text.as_bytes())?,
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Domain(format!("worker pool: {e}")))?;
    let reference = match load_or_run_reference(spec, out) {
        Ok(t) => Some(t),
        Err(e) if e.is_config_error() => return Err(e),
        Err(_) => None,
    };
    let trace_dir = opts.keep_traces.then(|| out.join("traces"));
    let rows: Vec<ResultRow> = pool.install(|| {
        (0..spec.n_modules)
            .into_par_iter()
            .map(|id| {
                let marker = marker_path(out, id);
                if let Ok(text) = fs::read_to_string(&marker) {
                    if let Ok(row) = ResultRow::from_csv_line(&text, spec.n_p) {
                        return Ok(row);
                    }
                }
                let (_, row) = simulate_module(spec, id, reference.as_ref(), trace_dir.as_deref())?;
                write_atomic(&marker, format!("{}\n", row.to_csv_line()).as_bytes())?;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let table = ResultsTable {
        n_p: spec.n_p,
        rows,
    };
    write_atomic(&out.join(RESULTS_FILE), table.to_csv().as_bytes())?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64, n: usize) -> CampaignSpec {
        let mut s = CampaignSpec::fast(seed);
        s.n_modules = n;
        s.n_cycles = 1;
        s
    }

    #[test]
    fn child_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|k| child_seed(42, k)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(child_seed(42, 7), seeds[7]);
        assert_ne!(child_seed(43, 7), seeds[7]);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let s = CampaignSpec::fast(u64::MAX / 3);
        assert_eq!(CampaignSpec::from_toml(&s.to_toml().unwrap()).unwrap(), s);
        let mut bad = s.clone();
        bad.normalization = "global".into();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn row_csv_round_trip() {
        let mut r = ResultRow::failed(3, 99, 4, "diverged, twice".into());
        assert_eq!(
            ResultRow::from_csv_line(&r.to_csv_line(), 4)
                .unwrap()
                .to_csv_line(),
            r.to_csv_line()
        );
        r.status = Status::Ok;
        r.predictors = Some(PredictorSet {
            mu_eps_n: 0.75,
            mu_eps_p: 0.66,
            sigma_eps_n: 1e-3,
            sigma_eps_p: 9e-4,
            loc: 0.1,
            r_int: 2e-4,
            sp: 3e-3,
            mu_comb: 0.4,
            sigma_comb: 0.2,
            loc_n: 0.1,
            loc_p: 0.1,
            mu_soc: 0.05,
            sigma_soc: 0.01,
            delta_t_max: 1.0 / 3.0,
            degenerate_normalization: false,
        });
        r.responses = Some(ResponseSet {
            sigma_i: 0.1,
            sigma_t: 0.2,
            dtmax: 1.0 / 3.0,
            dq: None,
            de: Some(-0.5),
            elost: -0.01,
            sigma_rsei: 1e-7,
        });
        let back = ResultRow::from_csv_line(&r.to_csv_line(), 4).unwrap();
        assert_eq!(back.to_csv_line(), r.to_csv_line());
        assert_eq!(back.responses, r.responses);
    }

    #[test]
    fn identical_across_worker_counts_and_resume() {
        let spec = tiny(11, 3);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ta = run_campaign(
            &spec,
            a.path(),
            &RunOptions {
                workers: 1,
                keep_traces: false,
            },
        )
        .unwrap();
        let tb = run_campaign(
            &spec,
            b.path(),
            &RunOptions {
                workers: 3,
                keep_traces: false,
            },
        )
        .unwrap();
        let ra = fs::read(a.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(ra, fs::read(b.path().join(RESULTS_FILE)).unwrap());
        assert!(ta.rows.iter().all(|r| r.is_ok()));
        assert_eq!(ta, tb);

        // lose one module and the reference cache, then resume
        fs::remove_file(marker_path(a.path(), 1)).unwrap();
        fs::remove_file(a.path().join(REFERENCE_FILE)).unwrap();
        fs::remove_file(a.path().join(RESULTS_FILE)).unwrap();
        run_campaign(
            &spec,
            a.path(),
            &RunOptions {
                workers: 2,
                keep_traces: false,
            },
        )
        .unwrap();
        assert_eq!(ra, fs::read(a.path().join(RESULTS_FILE)).unwrap());
        assert_eq!(
            ResultsTable::from_csv(std::str::from_utf8(&ra).unwrap()).unwrap(),
            ta
        );

        let mut other = spec.clone();
        other.master_seed = 12;
        assert!(run_campaign(&other, a.path(), &RunOptions::default())
            .unwrap_err()
            .is_config_error());
    }

    #[test]
    fn self_reference_module_has_no_spread() {
        let mut spec = tiny(5, 1);
        spec.ranges.capacity_rel_width = 0.0;
        spec.ranges.r_int = (0.25e-3, 0.25e-3);
        spec.ranges.spacing = (5e-3, 5e-3);
        let dir = tempfile::tempdir().unwrap();
        let t = run_campaign(&spec, dir.path(), &RunOptions::default()).unwrap();
        let r = t.rows[0].responses.as_ref().unwrap();
        assert_eq!(r.dq, Some(0.0));
        assert_eq!(r.de, Some(0.0));
        // identical cells still see the ladder: the cell nearest the
        // terminals carries the most current
        assert!(r.sigma_i > 0.0);
        assert_eq!(t.rows[0].predictors.as_ref().unwrap().sigma_eps_n, 0.0);
    }

    #[test]
    fn kept_traces_are_written() {
        let spec = tiny(2, 1);
        let dir = tempfile::tempdir().unwrap();
        run_campaign(
            &spec,
            dir.path(),
            &RunOptions {
                workers: 1,
                keep_traces: true,
            },
        )
        .unwrap();
        assert!(dir.path().join("traces/m000000/trace.csv").exists());
        assert!(dir.path().join("traces/m000000/cycles.csv").exists());
        let t = ResultsTable::read(&dir.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(t.to_table().rows(), 1);
    }
}
