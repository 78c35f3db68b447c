//! SEI film growth on the negative electrode.
//!
//! The side reaction is kinetics limited (cathodic Tafel branch) and only
//! runs while the interface potential sits below the SEI reference
//! potential. Lithium consumed by the film is accumulated in `pending_li`
//! and removed from the negative particle when the module solver closes a
//! cycle.

use serde::{Deserialize, Serialize};

use crate::espm::{CellModel, CellState, VoltageBreakdown};
use crate::params::{FARADAY, GAS_CONSTANT, T_REF};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeiState {
    /// Film thickness, m.
    pub delta_sei: f64,
    pub r_sei: f64,
    /// Total cyclable lithium consumed, mol.
    pub n_li_lost: f64,
    /// Lithium consumed but not yet removed from the particle, mol.
    pub pending_li: f64,
}

/// Film resistance of a layer of thickness `delta` over the whole negative
/// electrode surface.
pub fn film_resistance(delta: f64, model: &CellModel) -> f64 {
    let p = &model.params;
    delta / (p.sei.conductivity * model.a_s_n() * p.l_n * p.a_cell)
}

impl SeiState {
    pub fn fresh(model: &CellModel) -> Self {
        let d = model.params.sei.initial_thickness;
        SeiState {
            delta_sei: d,
            r_sei: film_resistance(d, model),
            n_li_lost: 0.0,
            pending_li: 0.0,
        }
    }
}

/// Side-reaction current density (A/m², negative when active).
pub fn side_current_density(
    model: &CellModel,
    bd: &VoltageBreakdown,
    temperature: f64,
    current: f64,
    r_sei: f64,
) -> f64 {
    let s = &model.params.sei;
    if s.i0 == 0.0 {
        return 0.0;
    }
    let eta = bd.u_n + bd.eta_n - s.u_ref - current * r_sei;
    if eta >= 0.0 {
        return 0.0;
    }
    let arrhenius = (-s.activation_energy / GAS_CONSTANT * (1.0 / temperature - 1.0 / T_REF)).exp();
    -s.i0 * arrhenius * (-s.alpha * FARADAY * eta / (GAS_CONSTANT * temperature)).exp()
}

impl SeiState {
    /// Advance the film by `dt` given the interface state described by `bd`.
    pub fn advance(
        &self,
        model: &CellModel,
        bd: &VoltageBreakdown,
        temperature: f64,
        current: f64,
        dt: f64,
    ) -> SeiState {
        let j = side_current_density(model, bd, temperature, current, self.r_sei);
        if j == 0.0 {
            return *self;
        }
        let p = &model.params;
        let delta = self.delta_sei - j * p.sei.molar_mass / (p.sei.density * FARADAY) * dt;
        let lost = -j * model.a_s_n() * p.l_n * p.a_cell * dt / FARADAY;
        SeiState {
            delta_sei: delta,
            r_sei: film_resistance(delta, model),
            n_li_lost: self.n_li_lost + lost,
            pending_li: self.pending_li + lost,
        }
    }
}

/// Advance the film over one step, evaluating the interface at `cell`.
pub fn step_sei(
    state: &SeiState,
    cell: &CellState,
    current: f64,
    dt: f64,
    model: &CellModel,
) -> SeiState {
    let bd = model.voltage(cell, current);
    state.advance(model, &bd, cell.temperature, current, dt)
}
