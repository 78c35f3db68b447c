//! Simulation output: sampled time series, per-cycle summaries and the
//! online accumulator that produces the summaries from every accepted step.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::params::PhaseKind;

/// Module state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub cycle: usize,
    pub phase: PhaseKind,
    pub v_mod: f64,
    pub i_mod: f64,
    pub i_branch: Vec<f64>,
    pub v_cell: Vec<f64>,
    pub temperature: Vec<f64>,
    pub soc: Vec<f64>,
    pub r_sei: Vec<f64>,
}

/// Population of per-cell values: sample standard deviation (N - 1).
pub fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Spread of the branch currents around the even share `i_mod / n`.
pub fn current_spread(i_branch: &[f64], i_mod: f64) -> f64 {
    let n = i_branch.len() as f64;
    if i_branch.len() < 2 {
        return 0.0;
    }
    let share = i_mod / n;
    (i_branch.iter().map(|i| (i - share).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn range(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Ohmic loss in the interconnection ladder: each of the `n - 1` inner
/// segments carries the current not yet drawn by the cells before it and
/// the terminal segment carries the whole module current.
pub fn ladder_loss(i_branch: &[f64], i_mod: f64, r_int: f64) -> f64 {
    let mut drawn = 0.0;
    let mut loss = i_mod * i_mod;
    for i in &i_branch[..i_branch.len().saturating_sub(1)] {
        drawn += i;
        loss += (i_mod - drawn).powi(2);
    }
    2.0 * r_int * loss
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub cycle: usize,
    /// Charge delivered in the CC discharge window, Ah.
    pub q_mod: f64,
    /// Energy delivered at the module terminals in the CC discharge window, Wh.
    pub e_mod: f64,
    /// Cell-level energy Σ∫V_k I_k dt over the same window, Wh.
    pub e_cells: f64,
    /// Ladder resistive loss over the same window, Wh.
    pub e_ladder: f64,
    /// Time-averaged branch-current spread in the discharge window, A.
    pub sigma_i: f64,
    /// Time-averaged temperature spread in the discharge window, K.
    pub sigma_t: f64,
    /// Largest instantaneous temperature range in the discharge window, K.
    pub delta_t_max: f64,
    /// Largest instantaneous temperature range over the whole cycle, K.
    pub delta_t_max_cycle: f64,
    pub discharge_duration: f64,
    /// Cell SOC at the end of the discharge phase.
    pub eod_soc: Vec<f64>,
    /// Cell temperatures averaged over the cycle, K.
    pub t_avg: Vec<f64>,
    /// SEI resistance at the end of the cycle, Ω.
    pub r_sei: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: u64,
    pub newton_iterations: u64,
    /// max |Σ i_branch − i_mod| / max(1, |i_mod|) over accepted steps.
    pub max_sum_residual: f64,
    /// Largest ladder-equation residual over accepted steps, V.
    pub max_ladder_residual: f64,
    pub ocp_clamps: u64,
    pub concentration_clamps: u64,
    pub cv_timeouts: u64,
    /// False if any cell's SEI resistance ever decreased between steps.
    pub r_sei_monotone: bool,
}

/// Integrates every accepted step into per-cycle summaries.
#[derive(Debug, Clone)]
pub struct CycleAccumulator {
    n_p: usize,
    r_int: f64,
    last: Option<Sample>,
    cycle: usize,
    cycle_start: Option<f64>,
    // discharge window
    q: f64,
    e: f64,
    e_cells: f64,
    e_ladder: f64,
    sig_i: f64,
    sig_t: f64,
    dt_max: f64,
    dt_max_cycle: f64,
    duration: f64,
    eod_soc: Option<Vec<f64>>,
    // cycle-wide
    t_int: Vec<f64>,
    cycle_time: f64,
    // whole run
    t_int_total: Vec<f64>,
    total_time: f64,
    last_r_sei: Vec<f64>,
    summaries: Vec<CycleSummary>,
    r_sei_monotone: bool,
}

const J_PER_WH: f64 = 3600.0;

impl CycleAccumulator {
    pub fn new(n_p: usize, r_int: f64) -> Self {
        CycleAccumulator {
            n_p,
            r_int,
            last: None,
            cycle: 0,
            cycle_start: None,
            q: 0.0,
            e: 0.0,
            e_cells: 0.0,
            e_ladder: 0.0,
            sig_i: 0.0,
            sig_t: 0.0,
            dt_max: 0.0,
            dt_max_cycle: 0.0,
            duration: 0.0,
            eod_soc: None,
            t_int: vec![0.0; n_p],
            cycle_time: 0.0,
            t_int_total: vec![0.0; n_p],
            total_time: 0.0,
            last_r_sei: Vec::new(),
            summaries: Vec::new(),
            r_sei_monotone: true,
        }
    }

    pub fn push(&mut self, s: &Sample) {
        assert_eq!(s.i_branch.len(), self.n_p, "sample width");
        if let Some(prev) = self.last.take() {
            if s.cycle != prev.cycle {
                self.close_cycle(&prev);
            } else {
                self.integrate(&prev, s);
            }
        }
        if self.cycle_start.is_none() {
            self.cycle = s.cycle;
            self.cycle_start = Some(s.t);
        }
        if !self.last_r_sei.is_empty() && s.r_sei.iter().zip(&self.last_r_sei).any(|(a, b)| a < b) {
            self.r_sei_monotone = false;
        }
        self.last_r_sei.clone_from(&s.r_sei);
        let spread = range(&s.temperature);
        self.dt_max_cycle = self.dt_max_cycle.max(spread);
        if s.phase == PhaseKind::CcDischarge {
            self.dt_max = self.dt_max.max(spread);
            self.eod_soc = Some(s.soc.clone());
        }
        self.last = Some(s.clone());
    }

    fn integrate(&mut self, a: &Sample, b: &Sample) {
        let h = b.t - a.t;
        if h <= 0.0 {
            return;
        }
        let trap = |fa: f64, fb: f64| 0.5 * h * (fa + fb);
        for k in 0..self.n_p {
            let w = trap(a.temperature[k], b.temperature[k]);
            self.t_int[k] += w;
            self.t_int_total[k] += w;
        }
        self.cycle_time += h;
        self.total_time += h;
        if a.phase == PhaseKind::CcDischarge && b.phase == PhaseKind::CcDischarge {
            let p = |s: &Sample| {
                s.v_cell
                    .iter()
                    .zip(&s.i_branch)
                    .map(|(v, i)| v * i)
                    .sum::<f64>()
            };
            self.q += trap(a.i_mod, b.i_mod);
            self.e += trap(a.v_mod * a.i_mod, b.v_mod * b.i_mod);
            self.e_cells += trap(p(a), p(b));
            self.e_ladder += trap(
                ladder_loss(&a.i_branch, a.i_mod, self.r_int),
                ladder_loss(&b.i_branch, b.i_mod, self.r_int),
            );
            self.sig_i += trap(
                current_spread(&a.i_branch, a.i_mod),
                current_spread(&b.i_branch, b.i_mod),
            );
            self.sig_t += trap(sample_std(&a.temperature), sample_std(&b.temperature));
            self.duration += h;
        }
    }

    fn close_cycle(&mut self, last: &Sample) {
        let avg = |d: f64| {
            if self.duration > 0.0 {
                d / self.duration
            } else {
                0.0
            }
        };
        let t_avg = if self.cycle_time > 0.0 {
            self.t_int.iter().map(|v| v / self.cycle_time).collect()
        } else {
            last.temperature.clone()
        };
        self.summaries.push(CycleSummary {
            cycle: self.cycle,
            q_mod: self.q / J_PER_WH,
            e_mod: self.e / J_PER_WH,
            e_cells: self.e_cells / J_PER_WH,
            e_ladder: self.e_ladder / J_PER_WH,
            sigma_i: avg(self.sig_i),
            sigma_t: avg(self.sig_t),
            delta_t_max: self.dt_max,
            delta_t_max_cycle: self.dt_max_cycle,
            discharge_duration: self.duration,
            eod_soc: self
                .eod_soc
                .take()
                .unwrap_or_else(|| vec![f64::NAN; self.n_p]),
            t_avg,
            r_sei: last.r_sei.clone(),
        });
        self.q = 0.0;
        self.e = 0.0;
        self.e_cells = 0.0;
        self.e_ladder = 0.0;
        self.sig_i = 0.0;
        self.sig_t = 0.0;
        self.dt_max = 0.0;
        self.dt_max_cycle = 0.0;
        self.duration = 0.0;
        self.t_int.iter_mut().for_each(|v| *v = 0.0);
        self.cycle_time = 0.0;
        self.cycle_start = None;
    }

    /// Close the open cycle and return all summaries plus whole-run
    /// time-averaged cell temperatures.
    pub fn finish(mut self) -> (Vec<CycleSummary>, Vec<f64>, bool) {
        if let Some(prev) = self.last.take() {
            self.close_cycle(&prev);
            let t_avg = if self.total_time > 0.0 {
                self.t_int_total
                    .iter()
                    .map(|v| v / self.total_time)
                    .collect()
            } else {
                prev.temperature.clone()
            };
            (self.summaries, t_avg, self.r_sei_monotone)
        } else {
            (
                self.summaries,
                vec![f64::NAN; self.n_p],
                self.r_sei_monotone,
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub n_p: usize,
    pub r_int: f64,
    /// Decimated samples with strictly increasing time.
    pub samples: Vec<Sample>,
    pub cycles: Vec<CycleSummary>,
    /// Whole-run time-averaged cell temperatures, K.
    pub t_avg: Vec<f64>,
    pub final_r_sei: Vec<f64>,
    pub final_soc: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl SimTrace {
    /// Build a trace (with summaries) from an undecimated sample stream.
    pub fn from_samples(samples: Vec<Sample>, r_int: f64) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Domain("empty sample stream".into()))?;
        let n_p = first.i_branch.len();
        let mut acc = CycleAccumulator::new(n_p, r_int);
        let mut kept: Vec<Sample> = Vec::with_capacity(samples.len());
        for s in &samples {
            acc.push(s);
            push_strict(&mut kept, s.clone());
        }
        let last = samples.last().unwrap();
        let (final_r_sei, final_soc) = (last.r_sei.clone(), last.soc.clone());
        let (cycles, t_avg, monotone) = acc.finish();
        Ok(SimTrace {
            n_p,
            r_int,
            samples: kept,
            cycles,
            t_avg,
            final_r_sei,
            final_soc,
            diagnostics: Diagnostics {
                r_sei_monotone: monotone,
                ..Diagnostics::default()
            },
        })
    }

    pub fn first_cycle(&self) -> Option<&CycleSummary> {
        self.cycles.first()
    }

    pub fn last_cycle(&self) -> Option<&CycleSummary> {
        self.cycles.last()
    }

    pub fn trace_csv(&self) -> String {
        let n = self.n_p;
        let mut out = String::from("t,cycle,phase,v_mod,i_mod");
        for name in ["i", "v", "T", "soc", "r_sei"] {
            for k in 1..=n {
                let _ = write!(out, ",{name}_{k}");
            }
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                fmt_f64(s.t),
                s.cycle,
                s.phase.as_str(),
                fmt_f64(s.v_mod),
                fmt_f64(s.i_mod)
            );
            for col in [&s.i_branch, &s.v_cell, &s.temperature, &s.soc, &s.r_sei] {
                for v in col.iter() {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let n = self.n_p;
        let mut out = String::from(
            "cycle,q_mod_ah,e_mod_wh,e_cells_wh,e_ladder_wh,sigma_i_a,sigma_t_k,delta_t_max_k,delta_t_max_cycle_k,discharge_s",
        );
        for name in ["eod_soc", "t_avg", "r_sei"] {
            for k in 1..=n {
                let _ = write!(out, ",{name}_{k}");
            }
        }
        out.push('\n');
        for c in &self.cycles {
            let _ = write!(out, "{}", c.cycle);
            for v in [
                c.q_mod,
                c.e_mod,
                c.e_cells,
                c.e_ladder,
                c.sigma_i,
                c.sigma_t,
                c.delta_t_max,
                c.delta_t_max_cycle,
                c.discharge_duration,
            ] {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
            for col in [&c.eod_soc, &c.t_avg, &c.r_sei] {
                for v in col.iter() {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("trace.csv"), self.trace_csv().as_bytes())?;
        write_atomic(&dir.join("cycles.csv"), self.summary_csv().as_bytes())
    }
}

/// Append keeping times strictly increasing: a sample at the same instant
/// as the previous one replaces it.
pub(crate) fn push_strict(out: &mut Vec<Sample>, s: Sample) {
    if let Some(last) = out.last() {
        if s.t <= last.t {
            out.pop();
        }
    }
    out.push(s);
}

fn interp(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    let j = ts.partition_point(|&x| x <= t);
    if j == 0 {
        return ys[0];
    }
    if j >= ts.len() {
        return ys[ts.len() - 1];
    }
    let (t0, t1) = (ts[j - 1], ts[j]);
    let w = (t - t0) / (t1 - t0);
    ys[j - 1] + w * (ys[j] - ys[j - 1])
}

fn mse_channel(
    a: &SimTrace,
    b: &SimTrace,
    pick: impl Fn(&Sample) -> &Vec<f64>,
) -> Result<Vec<f64>> {
    if a.n_p != b.n_p {
        return Err(Error::Domain(format!(
            "traces have {} and {} cells",
            a.n_p, b.n_p
        )));
    }
    if a.samples.is_empty() || b.samples.is_empty() {
        return Err(Error::Domain("empty trace".into()));
    }
    let ta: Vec<f64> = a.samples.iter().map(|s| s.t).collect();
    let tb: Vec<f64> = b.samples.iter().map(|s| s.t).collect();
    let lo = ta[0].max(tb[0]);
    let hi = ta[ta.len() - 1].min(tb[tb.len() - 1]);
    if lo > hi {
        return Err(Error::Domain("traces do not overlap in time".into()));
    }
    let mut grid: Vec<f64> = ta
        .iter()
        .chain(&tb)
        .copied()
        .filter(|t| (lo..=hi).contains(t))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut out = Vec::with_capacity(a.n_p);
    for k in 0..a.n_p {
        let ya: Vec<f64> = a.samples.iter().map(|s| pick(s)[k]).collect();
        let yb: Vec<f64> = b.samples.iter().map(|s| pick(s)[k]).collect();
        let sum: f64 = grid
            .iter()
            .map(|&t| (interp(&ta, &ya, t) - interp(&tb, &yb, t)).powi(2))
            .sum();
        out.push(sum / grid.len() as f64);
    }
    Ok(out)
}

/// Per-cell mean squared difference of branch currents, A², on the union
/// of both time grids inside their overlap.
pub fn mse_current(a: &SimTrace, b: &SimTrace) -> Result<Vec<f64>> {
    mse_channel(a, b, |s| &s.i_branch)
}

/// Per-cell mean squared difference of cell temperatures, K².
pub fn mse_temperature(a: &SimTrace, b: &SimTrace) -> Result<Vec<f64>> {
    mse_channel(a, b, |s| &s.temperature)
}
