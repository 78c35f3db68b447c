//! Parallel module: N_p cells joined by an interconnection ladder.
//!
//! ```text
//!  +  ──R──┬──R──┬──R──┬── ...
//!          │     │     │
//!        cell1 cell2 cell3
//!          │     │     │
//!  −  ──R──┴──R──┴──R──┴── ...
//! ```
//!
//! Both terminals sit beside cell 1; every rail segment has resistance
//! `r_int`, so a segment pair contributes `2 r_int`. The module terminal
//! voltage is cell 1's voltage less the terminal segment drop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aging::SeiState;
use crate::error::{Error, Result};
use crate::espm::{CellModel, CellState, Discretization, PreparedStep, VoltageBreakdown};
use crate::params::{ModuleConfig, Phase, PhaseKind};
use crate::thermal::{heat_generation, step_temperatures, ThermalNetwork};
use crate::trace::{push_strict, CycleAccumulator, Diagnostics, Sample, SimTrace};

const MAX_NEWTON: usize = 25;
const LADDER_TOL: f64 = 1e-12;
const ACCEPT_TOL: f64 = 1e-9;

/// What the module terminals impose during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    /// Module current, A (positive discharges).
    Current(f64),
    /// Module terminal voltage, V.
    Voltage(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSolution {
    pub i_branch: Vec<f64>,
    pub i_mod: f64,
    pub v_cell: Vec<f64>,
    pub v_mod: f64,
    /// |Σ i_branch − i_mod| / max(1, |i_mod|).
    pub sum_residual: f64,
    /// Largest ladder-equation residual, V.
    pub ladder_residual: f64,
    pub iterations: usize,
}

/// Residuals of the ladder equations, the current balance and (under
/// voltage control) the terminal equation.
fn residuals(v: &[f64], i: &[f64], i_mod: f64, r_int: f64, control: Control) -> Vec<f64> {
    let n = v.len();
    let mut r = Vec::with_capacity(n + 1);
    let mut drawn = 0.0;
    for k in 0..n - 1 {
        drawn += i[k];
        r.push(v[k + 1] - v[k] - 2.0 * r_int * (i_mod - drawn));
    }
    r.push(i.iter().sum::<f64>() - i_mod);
    if let Control::Voltage(target) = control {
        r.push(v[0] - 2.0 * r_int * i_mod - target);
    }
    r
}

fn residual_norm(r: &[f64], n: usize, i_mod: f64) -> f64 {
    let scale = i_mod.abs().max(1.0);
    r.iter()
        .enumerate()
        .map(|(j, x)| if j == n - 1 { x.abs() / scale } else { x.abs() })
        .fold(0.0, f64::max)
}

/// Ladder residual and relative current-balance residual of a solution.
pub fn kirchhoff_residuals(v_cell: &[f64], i_branch: &[f64], i_mod: f64, r_int: f64) -> (f64, f64) {
    let r = residuals(v_cell, i_branch, i_mod, r_int, Control::Current(i_mod));
    let n = v_cell.len();
    let ladder = r[..n - 1].iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    (ladder, r[n - 1].abs() / i_mod.abs().max(1.0))
}

/// Solve the ladder for branch currents with damped Newton. Cell voltages
/// are the end-of-step voltages of the prepared steps (frozen-state
/// voltages when prepared with `dt = 0`).
pub fn solve_branch_currents(
    steps: &[PreparedStep<'_>],
    control: Control,
    r_int: f64,
    guess: &[f64],
    i_mod_guess: f64,
) -> Result<BranchSolution> {
    let n = steps.len();
    assert!(n >= 1 && guess.len() == n, "guess length");
    let cv = matches!(control, Control::Voltage(_));
    let m = if cv { n + 1 } else { n };
    let volt = |x: &[f64]| -> Vec<f64> { (0..n).map(|k| steps[k].voltage(x[k]).v_cell).collect() };
    let i_mod_of = |x: &[f64]| match control {
        Control::Current(i) => i,
        Control::Voltage(_) => x[n],
    };

    let mut x: Vec<f64> = guess.to_vec();
    if cv {
        x.push(i_mod_guess);
    }
    // shift the guess onto the current balance, which Newton then keeps
    let target = i_mod_of(&x);
    let shift = (target - guess.iter().sum::<f64>()) / n as f64;
    for xi in x.iter_mut().take(n) {
        *xi += shift;
    }
    let mut v = volt(&x);
    let mut r = residuals(&v, &x[..n], i_mod_of(&x), r_int, control);
    let mut norm = residual_norm(&r, n, i_mod_of(&x));
    let mut iterations = 0;
    while norm > LADDER_TOL && iterations < MAX_NEWTON {
        iterations += 1;
        // diagonal cell conductances by central differences
        let g: Vec<f64> = (0..n)
            .map(|k| {
                let h = 1e-5 * x[k].abs().max(1.0);
                (steps[k].voltage(x[k] + h).v_cell - steps[k].voltage(x[k] - h).v_cell) / (2.0 * h)
            })
            .collect();
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for k in 0..n - 1 {
            jac[(k, k + 1)] = g[k + 1];
            jac[(k, k)] = -g[k];
            for z in 0..=k {
                jac[(k, z)] += 2.0 * r_int;
            }
            if cv {
                jac[(k, n)] = -2.0 * r_int;
            }
        }
        for z in 0..n {
            jac[(n - 1, z)] = 1.0;
        }
        if cv {
            jac[(n - 1, n)] = -1.0;
            jac[(n, 0)] = g[0];
            jac[(n, n)] = -2.0 * r_int;
        }
        let rhs = DVector::from_column_slice(&r);
        let Some(dx) = jac.lu().solve(&rhs) else {
            return Err(Error::Newton {
                residual: norm,
                iterate: x,
            });
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x
                .iter()
                .zip(dx.iter())
                .map(|(a, d)| a - lambda * d)
                .collect();
            let tv = volt(&trial);
            let tr = residuals(&tv, &trial[..n], i_mod_of(&trial), r_int, control);
            let tn = residual_norm(&tr, n, i_mod_of(&trial));
            if tn < norm || tn <= LADDER_TOL {
                x = trial;
                v = tv;
                r = tr;
                norm = tn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(norm <= ACCEPT_TOL) {
        return Err(Error::Newton {
            residual: norm,
            iterate: x,
        });
    }
    let i_mod = i_mod_of(&x);
    // absorb round-off of the current balance in the last branch
    let drawn: f64 = x[..n - 1].iter().sum();
    x[n - 1] = i_mod - drawn;
    v[n - 1] = steps[n - 1].voltage(x[n - 1]).v_cell;
    x.truncate(n);
    let (ladder_residual, sum_residual) = kirchhoff_residuals(&v, &x, i_mod, r_int);
    Ok(BranchSolution {
        v_mod: v[0] - 2.0 * r_int * i_mod,
        i_branch: x,
        i_mod,
        v_cell: v,
        sum_residual,
        ladder_residual,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleState {
    pub cells: Vec<CellState>,
    pub sei: Vec<SeiState>,
    pub i_branch: Vec<f64>,
    pub i_mod: f64,
    pub v_mod: f64,
    pub v_cell: Vec<f64>,
    pub t: f64,
    pub cycle_index: usize,
    pub phase_index: usize,
}

impl ModuleState {
    pub fn temperatures(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.temperature).collect()
    }

    fn sample(&self, phase: PhaseKind) -> Sample {
        Sample {
            t: self.t,
            cycle: self.cycle_index,
            phase,
            v_mod: self.v_mod,
            i_mod: self.i_mod,
            i_branch: self.i_branch.clone(),
            v_cell: self.v_cell.clone(),
            temperature: self.temperatures(),
            soc: self.cells.iter().map(|c| c.soc).collect(),
            r_sei: self.sei.iter().map(|s| s.r_sei).collect(),
        }
    }
}

struct StepOutcome {
    state: ModuleState,
    solution: BranchSolution,
    ocp_clamped: u64,
}

/// Cell models, thermal network and settings of one module.
#[derive(Debug, Clone)]
pub struct ModuleSimulator {
    pub cfg: ModuleConfig,
    pub models: Vec<CellModel>,
    pub network: ThermalNetwork,
}

impl ModuleSimulator {
    pub fn new(cfg: &ModuleConfig) -> Result<Self> {
        cfg.validate()?;
        let disc = Discretization::from(&cfg.solver);
        let models = cfg
            .cells
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if !cfg.solver.aging {
                    c.sei.i0 = 0.0;
                }
                CellModel::new(c, disc)
            })
            .collect::<Result<Vec<_>>>()?;
        let thermal: Vec<_> = cfg.cells.iter().map(|c| &c.thermal).collect();
        let network = ThermalNetwork::from_cells(&thermal, cfg.spacing, cfg.t_amb)?;
        Ok(ModuleSimulator {
            cfg: cfg.clone(),
            models,
            network,
        })
    }

    pub fn n_p(&self) -> usize {
        self.models.len()
    }

    /// Fully charged cells at ambient temperature, at rest.
    pub fn initial_state(&self) -> Result<ModuleState> {
        let cells: Vec<CellState> = self
            .models
            .iter()
            .map(|m| m.initial_state(1.0, self.cfg.t_amb))
            .collect();
        let sei: Vec<SeiState> = self.models.iter().map(SeiState::fresh).collect();
        let mut st = ModuleState {
            cells,
            sei,
            i_branch: vec![0.0; self.n_p()],
            i_mod: 0.0,
            v_mod: 0.0,
            v_cell: vec![0.0; self.n_p()],
            t: 0.0,
            cycle_index: 0,
            phase_index: 0,
        };
        let sol = self.instant(&st, Control::Current(0.0))?;
        st.i_branch = sol.i_branch;
        st.v_cell = sol.v_cell;
        st.v_mod = sol.v_mod;
        Ok(st)
    }

    /// Frozen-state solution at the current instant (no time advance).
    pub fn instant(&self, st: &ModuleState, control: Control) -> Result<BranchSolution> {
        let steps: Vec<_> = self
            .models
            .iter()
            .zip(&st.cells)
            .map(|(m, c)| m.prepare(c, 0.0))
            .collect();
        solve_branch_currents(&steps, control, self.cfg.r_int, &st.i_branch, st.i_mod)
    }

    /// Advance the whole module by `dt` under `control`.
    pub fn step(&self, st: &ModuleState, control: Control, dt: f64) -> Result<ModuleState> {
        Ok(self.advance(st, control, dt)?.state)
    }

    fn advance(&self, st: &ModuleState, control: Control, dt: f64) -> Result<StepOutcome> {
        let n = self.n_p();
        let steps: Vec<_> = self
            .models
            .iter()
            .zip(&st.cells)
            .map(|(m, c)| m.prepare(c, dt))
            .collect();
        let sol = solve_branch_currents(&steps, control, self.cfg.r_int, &st.i_branch, st.i_mod)?;
        let mut cells = Vec::with_capacity(n);
        let mut heats = Vec::with_capacity(n);
        let mut bds: Vec<VoltageBreakdown> = Vec::with_capacity(n);
        let mut ocp_clamped = 0;
        for k in 0..n {
            let bd = steps[k].voltage(sol.i_branch[k]);
            if bd.clamped {
                ocp_clamped += 1;
            }
            let next = steps[k].commit(sol.i_branch[k]);
            if next
                .c_s_n
                .iter()
                .chain(&next.c_s_p)
                .chain(&next.c_e)
                .any(|c| !c.is_finite())
            {
                return Err(Error::CellStep {
                    cell: k,
                    time: st.t + dt,
                    reason: "non-finite concentrations".into(),
                });
            }
            let (ocv, entropic) = self.models[k].bulk_ocv(&next);
            heats.push(heat_generation(
                sol.i_branch[k],
                ocv,
                bd.v_cell,
                st.cells[k].temperature,
                entropic,
            ));
            cells.push(next);
            bds.push(bd);
        }
        drop(steps);
        let temps = step_temperatures(&st.temperatures(), &heats, &self.network, dt);
        let mut sei = st.sei.clone();
        for k in 0..n {
            sei[k] = st.sei[k].advance(
                &self.models[k],
                &bds[k],
                st.cells[k].temperature,
                sol.i_branch[k],
                dt,
            );
            cells[k].temperature = temps[k];
            cells[k].r_sei = sei[k].r_sei;
        }
        let state = ModuleState {
            cells,
            sei,
            i_branch: sol.i_branch.clone(),
            i_mod: sol.i_mod,
            v_mod: sol.v_mod,
            v_cell: sol.v_cell.clone(),
            t: st.t + dt,
            cycle_index: st.cycle_index,
            phase_index: st.phase_index,
        };
        Ok(StepOutcome {
            state,
            solution: sol,
            ocp_clamped,
        })
    }

    /// Step of length `dt`; if `crossed` holds at its end, shrink it by
    /// bisection to the first crossing within the event tolerance.
    fn advance_to_event(
        &self,
        st: &ModuleState,
        control: Control,
        dt: f64,
        crossed: &dyn Fn(&BranchSolution) -> bool,
    ) -> Result<(StepOutcome, bool)> {
        let full = self.advance(st, control, dt)?;
        if !crossed(&full.solution) {
            return Ok((full, false));
        }
        let (mut lo, mut hi, mut best) = (0.0, dt, full);
        while hi - lo > self.cfg.solver.event_tolerance {
            let mid = 0.5 * (lo + hi);
            let out = self.advance(st, control, mid)?;
            if crossed(&out.solution) {
                hi = mid;
                best = out;
            } else {
                lo = mid;
            }
        }
        Ok((best, true))
    }

    /// Run every cycle of the protocol.
    pub fn run(&self) -> Result<SimTrace> {
        self.run_observed(&mut |_| {})
    }

    /// Run every cycle, handing each accepted sample (undecimated, phase
    /// starts included) to `observer`.
    pub fn run_observed(&self, observer: &mut dyn FnMut(&Sample)) -> Result<SimTrace> {
        let cfg = &self.cfg;
        let n = self.n_p();
        let mut st = self.initial_state()?;
        let mut acc = CycleAccumulator::new(n, cfg.r_int);
        let mut samples: Vec<Sample> = Vec::new();
        let mut diag = Diagnostics {
            r_sei_monotone: true,
            ..Diagnostics::default()
        };
        let record_every = cfg.solver.record_every;
        let q_nom = cfg.protocol.nominal_capacity;

        let mut record = |s: Sample, force: bool, count: u64, samples: &mut Vec<Sample>| {
            observer(&s);
            acc.push(&s);
            if record_every > 0 && (force || count % record_every as u64 == 0) {
                push_strict(samples, s);
            }
        };

        for cycle in 0..cfg.n_cycles {
            st.cycle_index = cycle;
            for (pi, phase) in cfg.protocol.phases.iter().enumerate() {
                st.phase_index = pi;
                let kind = phase.label();
                let wrap = |e: Error| Error::Protocol {
                    cycle,
                    phase: pi,
                    source: Box::new(e),
                };
                let (control, dt, limit) = match *phase {
                    Phase::CcCharge { rate, .. } => (
                        Control::Current(-rate * q_nom * n as f64),
                        cfg.solver.dt_cc,
                        2.5 * 3600.0 / rate,
                    ),
                    Phase::CcDischarge { rate, .. } => (
                        Control::Current(rate * q_nom * n as f64),
                        cfg.solver.dt_cc,
                        2.5 * 3600.0 / rate,
                    ),
                    Phase::Cv { voltage, .. } => {
                        (Control::Voltage(voltage), cfg.solver.dt_cc, 4.0 * 3600.0)
                    }
                    Phase::Rest { duration } => {
                        (Control::Current(0.0), cfg.solver.dt_rest, duration)
                    }
                };
                let crossed: Box<dyn Fn(&BranchSolution) -> bool> = match *phase {
                    Phase::CcCharge { cutoff_voltage, .. } => {
                        Box::new(move |s: &BranchSolution| s.v_mod >= cutoff_voltage)
                    }
                    Phase::CcDischarge { cutoff_voltage, .. } => {
                        Box::new(move |s: &BranchSolution| s.v_mod <= cutoff_voltage)
                    }
                    Phase::Cv { cutoff_current, .. } => {
                        let floor = cutoff_current * n as f64;
                        Box::new(move |s: &BranchSolution| s.i_mod.abs() < floor)
                    }
                    Phase::Rest { .. } => Box::new(|_: &BranchSolution| false),
                };

                // phase-start sample: instantaneous response to the new control
                let start = self.instant(&st, control).map_err(wrap)?;
                st.i_branch = start.i_branch.clone();
                st.i_mod = start.i_mod;
                st.v_mod = start.v_mod;
                st.v_cell = start.v_cell.clone();
                record(st.sample(kind), true, 0, &mut samples);
                if crossed(&start) {
                    continue;
                }
                let t0 = st.t;
                let mut count = 0u64;
                loop {
                    let elapsed = st.t - t0;
                    let remaining = limit - elapsed;
                    if remaining <= 1e-9 * limit.max(1.0) {
                        match kind {
                            PhaseKind::Rest => {}
                            PhaseKind::Cv => diag.cv_timeouts += 1,
                            _ => {
                                return Err(wrap(Error::CellStep {
                                    cell: 0,
                                    time: st.t,
                                    reason: format!("{} did not reach its cutoff", kind.as_str()),
                                }))
                            }
                        }
                        break;
                    }
                    let h = dt.min(remaining);
                    let (out, hit) = self
                        .advance_to_event(&st, control, h, crossed.as_ref())
                        .map_err(wrap)?;
                    count += 1;
                    diag.steps += 1;
                    diag.newton_iterations += out.solution.iterations as u64;
                    diag.max_sum_residual = diag.max_sum_residual.max(out.solution.sum_residual);
                    diag.max_ladder_residual =
                        diag.max_ladder_residual.max(out.solution.ladder_residual);
                    diag.ocp_clamps += out.ocp_clamped;
                    if out
                        .state
                        .sei
                        .iter()
                        .zip(&st.sei)
                        .any(|(a, b)| a.r_sei < b.r_sei)
                    {
                        diag.r_sei_monotone = false;
                    }
                    st = out.state;
                    let last = hit || (kind == PhaseKind::Rest && h < dt);
                    record(st.sample(kind), last, count, &mut samples);
                    if hit {
                        break;
                    }
                }
            }
            // lithium consumed by the film leaves the negative particle
            for k in 0..n {
                let pending = st.sei[k].pending_li;
                if pending > 0.0 {
                    self.models[k].debit_lithium(&mut st.cells[k], pending);
                    st.sei[k].pending_li = 0.0;
                }
            }
        }
        diag.concentration_clamps = st.cells.iter().map(|c| c.clamp_count).sum();
        let (cycles, t_avg, monotone) = acc.finish();
        diag.r_sei_monotone &= monotone;
        Ok(SimTrace {
            n_p: n,
            r_int: cfg.r_int,
            samples,
            cycles,
            t_avg,
            final_r_sei: st.sei.iter().map(|s| s.r_sei).collect(),
            final_soc: st.cells.iter().map(|c| c.soc).collect(),
            diagnostics: diag,
        })
    }
}

/// Simulate every cycle of the configuration's protocol.
pub fn run_protocol(cfg: &ModuleConfig) -> Result<SimTrace> {
    ModuleSimulator::new(cfg)?.run()
}
