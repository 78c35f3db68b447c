//! Lumped cell temperatures coupled through a chain of conduction
//! resistances (air gap in parallel with the interconnection tabs).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ThermalParameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalNetwork {
    /// Convective resistance to ambient per cell, K/W.
    pub r_u: Vec<f64>,
    /// Conduction resistance between adjacent cells, K/W.
    pub r_m: f64,
    /// Heat capacity per cell, J/K.
    pub c_s: Vec<f64>,
    pub t_amb: f64,
}

/// Conduction shape factor between two parallel cylinders of diameter `d`
/// and height `h` whose axes are `d + spacing` apart, m.
pub fn shape_factor(d: f64, h: f64, spacing: f64) -> Result<f64> {
    let w = d + spacing;
    let arg = (4.0 * w * w - 2.0 * d * d) / (2.0 * d * d);
    if !(arg > 1.0) || !(h > 0.0) || !(d > 0.0) {
        return Err(Error::Domain(format!(
            "degenerate cell geometry: d = {d}, h = {h}, spacing = {spacing}"
        )));
    }
    Ok(2.0 * std::f64::consts::PI * h / arg.acosh())
}

/// Two resistances in parallel.
pub fn parallel(a: f64, b: f64) -> f64 {
    1.0 / (1.0 / a + 1.0 / b)
}

/// Cell-to-cell conduction resistance, K/W.
pub fn r_m_from_geometry(
    d: f64,
    h: f64,
    spacing: f64,
    k_air: f64,
    k_tabs: f64,
    tab_area: f64,
) -> Result<f64> {
    if !(k_air > 0.0 && k_tabs > 0.0 && tab_area > 0.0) {
        return Err(Error::Domain(
            "conductivities and tab area must be positive".into(),
        ));
    }
    let r_air = 1.0 / (shape_factor(d, h, spacing)? * k_air);
    let r_tabs = (d + spacing) / (tab_area * k_tabs);
    Ok(parallel(r_air, r_tabs))
}

impl ThermalNetwork {
    pub fn from_cells(cells: &[&ThermalParameters], spacing: f64, t_amb: f64) -> Result<Self> {
        let first = cells
            .first()
            .ok_or_else(|| Error::invalid("cells", "empty module"))?;
        let r_m = r_m_from_geometry(
            first.diameter,
            first.height,
            spacing,
            first.k_air,
            first.k_tabs,
            first.tab_area,
        )?;
        Ok(ThermalNetwork {
            r_u: cells.iter().map(|c| c.r_u).collect(),
            r_m,
            c_s: cells.iter().map(|c| c.heat_capacity).collect(),
            t_amb,
        })
    }

    pub fn uniform(n: usize, r_u: f64, r_m: f64, c_s: f64, t_amb: f64) -> Self {
        ThermalNetwork {
            r_u: vec![r_u; n],
            r_m,
            c_s: vec![c_s; n],
            t_amb,
        }
    }

    pub fn len(&self) -> usize {
        self.c_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_s.is_empty()
    }

    /// Stored-energy rate minus net supplied power for a step from `before`
    /// to `after`; zero up to round-off for an exact implicit update.
    pub fn energy_residual(&self, before: &[f64], after: &[f64], heats: &[f64], dt: f64) -> f64 {
        let mut stored = 0.0;
        let mut supplied = 0.0;
        for k in 0..self.len() {
            stored += self.c_s[k] * (after[k] - before[k]) / dt;
            supplied += heats[k] - (after[k] - self.t_amb) / self.r_u[k];
        }
        stored - supplied
    }
}

/// Heat released by a cell: irreversible plus reversible (entropic) part.
pub fn heat_generation(
    current: f64,
    v_ocv: f64,
    v_cell: f64,
    temperature: f64,
    entropic: f64,
) -> f64 {
    current * (v_ocv - v_cell) + temperature * current * entropic
}

/// Backward-Euler update of every cell temperature, solved for the rise
/// above ambient.
pub fn step_temperatures(temps: &[f64], heats: &[f64], net: &ThermalNetwork, dt: f64) -> Vec<f64> {
    let n = temps.len();
    assert_eq!(n, net.len(), "temperature vector length");
    assert_eq!(n, heats.len(), "heat vector length");
    assert!(dt > 0.0, "time step must be positive");
    let g = 1.0 / net.r_m;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        let cap = net.c_s[k] / dt;
        let mut d = cap + 1.0 / net.r_u[k];
        if k > 0 {
            d += g;
        }
        if k + 1 < n {
            d += g;
            off[k] = -g;
        }
        diag[k] = d;
        rhs[k] = cap * (temps[k] - net.t_amb) + heats[k];
    }
    // symmetric tridiagonal solve
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for k in 1..n {
        c[k - 1] = off[k - 1] / beta;
        beta = diag[k] - off[k - 1] * c[k - 1];
        rhs[k] = (rhs[k] - off[k - 1] * rhs[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= c[k] * rhs[k + 1];
    }
    rhs.iter().map(|rise| net.t_amb + rise).collect()
}
