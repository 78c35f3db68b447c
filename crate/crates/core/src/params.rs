//! Physical and configuration parameters.
//!
//! Everything the physics layers consume comes from here: per-cell
//! electrochemical/thermal/SEI parameters, the module configuration that
//! describes one Monte Carlo sample, the cycling protocol and the solver
//! discretization. Heterogeneous modules are produced by perturbing the
//! active-material volume fractions through the linear capacity relations.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Faraday constant, C/mol.
pub const FARADAY: f64 = 96_485.332_12;
/// Molar gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314_462_618;
/// Reference temperature for Arrhenius corrections, K.
pub const T_REF: f64 = 298.15;

// Linear fits of active-material volume fraction against measured cell
// capacity (Ah) over a batch of fresh LG M50T cells.
const EPS_N_INTERCEPT: f64 = 0.0091055;
const EPS_N_SLOPE: f64 = 0.16312;
const EPS_P_INTERCEPT: f64 = 0.011719;
const EPS_P_SLOPE: f64 = 0.14208;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Electrode {
    #[serde(alias = "n")]
    Negative,
    #[serde(alias = "p")]
    Positive,
}

impl Electrode {
    fn relation(self) -> (f64, f64) {
        match self {
            Electrode::Negative => (EPS_N_INTERCEPT, EPS_N_SLOPE),
            Electrode::Positive => (EPS_P_INTERCEPT, EPS_P_SLOPE),
        }
    }

    /// d(eps)/d(Q) of the capacity relation, 1/Ah.
    pub fn eps_per_ah(self) -> f64 {
        self.relation().1
    }
}

/// Active-material volume fraction for a cell of capacity `q_cell` (Ah).
pub fn eps_from_capacity(q_cell: f64, electrode: Electrode) -> Result<f64> {
    if !(q_cell > 0.0) || !q_cell.is_finite() {
        return Err(Error::Domain(format!(
            "cell capacity must be positive, got {q_cell}"
        )));
    }
    let (a, b) = electrode.relation();
    Ok(a + b * q_cell)
}

/// Inverse of [`eps_from_capacity`].
pub fn capacity_from_eps(eps: f64, electrode: Electrode) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!(
            "volume fraction must lie in (0, 1), got {eps}"
        )));
    }
    let (a, b) = electrode.relation();
    let q = (eps - a) / b;
    if q <= 0.0 {
        return Err(Error::Domain(format!(
            "volume fraction {eps} maps to non-positive capacity"
        )));
    }
    Ok(q)
}

/// Tabulated open-circuit potential with its entropic coefficient, both
/// interpolated with a monotone (Fritsch-Carlson) cubic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OcpTableData", into = "OcpTableData")]
pub struct OcpTable {
    stoichiometry: Vec<f64>,
    potential: Vec<f64>,
    entropic_coeff: Vec<f64>,
    potential_slopes: Vec<f64>,
    entropic_slopes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OcpTableData {
    stoichiometry: Vec<f64>,
    potential: Vec<f64>,
    entropic_coeff: Vec<f64>,
}

impl TryFrom<OcpTableData> for OcpTable {
    type Error = Error;
    fn try_from(d: OcpTableData) -> Result<Self> {
        OcpTable::new(d.stoichiometry, d.potential, d.entropic_coeff)
    }
}

impl From<OcpTable> for OcpTableData {
    fn from(t: OcpTable) -> Self {
        OcpTableData {
            stoichiometry: t.stoichiometry,
            potential: t.potential,
            entropic_coeff: t.entropic_coeff,
        }
    }
}

/// Result of an OCP lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcpValue {
    pub potential: f64,
    pub entropic_coeff: f64,
    /// Query fell outside the tabulated grid and was clamped to its edge.
    pub clamped: bool,
}

impl OcpTable {
    pub const MIN_POINTS: usize = 10;

    pub fn new(
        stoichiometry: Vec<f64>,
        potential: Vec<f64>,
        entropic_coeff: Vec<f64>,
    ) -> Result<Self> {
        let n = stoichiometry.len();
        if n < Self::MIN_POINTS {
            return Err(Error::invalid(
                "stoichiometry",
                format!(
                    "OCP table needs at least {} points, got {n}",
                    Self::MIN_POINTS
                ),
            ));
        }
        if potential.len() != n || entropic_coeff.len() != n {
            return Err(Error::invalid(
                "potential",
                "OCP table columns must have equal length",
            ));
        }
        if stoichiometry.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "stoichiometry",
                "OCP grid must be strictly increasing",
            ));
        }
        if stoichiometry[0] < 0.0 || stoichiometry[n - 1] > 1.0 {
            return Err(Error::invalid(
                "stoichiometry",
                "OCP grid must lie within [0, 1]",
            ));
        }
        if potential
            .iter()
            .chain(&entropic_coeff)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("potential", "OCP values must be finite"));
        }
        let potential_slopes = pchip_slopes(&stoichiometry, &potential);
        let entropic_slopes = pchip_slopes(&stoichiometry, &entropic_coeff);
        Ok(OcpTable {
            stoichiometry,
            potential,
            entropic_coeff,
            potential_slopes,
            entropic_slopes,
        })
    }

    /// Tabulate a function on the given grid.
    pub fn from_fn(
        grid: &[f64],
        potential: impl Fn(f64) -> f64,
        entropic: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        OcpTable::new(
            grid.to_vec(),
            grid.iter().map(|&x| potential(x)).collect(),
            grid.iter().map(|&x| entropic(x)).collect(),
        )
    }

    pub fn stoichiometry(&self) -> &[f64] {
        &self.stoichiometry
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn entropic_coeff(&self) -> &[f64] {
        &self.entropic_coeff
    }

    pub fn range(&self) -> (f64, f64) {
        (self.stoichiometry[0], *self.stoichiometry.last().unwrap())
    }

    pub fn eval(&self, x: f64) -> OcpValue {
        let (lo, hi) = self.range();
        let clamped = !(x >= lo && x <= hi);
        let x = if x.is_nan() { lo } else { x.clamp(lo, hi) };
        let k = match self
            .stoichiometry
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(i) => i.min(self.stoichiometry.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.stoichiometry.len() - 2),
        };
        OcpValue {
            potential: hermite(
                &self.stoichiometry,
                &self.potential,
                &self.potential_slopes,
                k,
                x,
            ),
            entropic_coeff: hermite(
                &self.stoichiometry,
                &self.entropic_coeff,
                &self.entropic_slopes,
                k,
                x,
            ),
            clamped,
        }
    }
}

fn hermite(xs: &[f64], ys: &[f64], ms: &[f64], k: usize, x: f64) -> f64 {
    let h = xs[k + 1] - xs[k];
    let t = (x - xs[k]) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * ys[k] + h10 * h * ms[k] + h01 * ys[k + 1] + h11 * h * ms[k + 1]
}

/// Fritsch-Carlson slopes (the scheme used by PCHIP).
fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// Activation energies (J/mol) for Arrhenius temperature corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationEnergies {
    pub d_s_n: f64,
    pub d_s_p: f64,
    pub k_n: f64,
    pub k_p: f64,
    pub electrolyte: f64,
}

/// Lumped thermal and geometric data of one cylindrical cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalParameters {
    /// Lumped heat capacity C_s, J/K.
    pub heat_capacity: f64,
    /// Convective resistance to ambient R_u, K/W.
    pub r_u: f64,
    /// Can diameter d, m.
    pub diameter: f64,
    /// Can height h, m.
    pub height: f64,
    /// Conduction cross-section of the interconnection tab, m².
    pub tab_area: f64,
    /// Thermal conductivity of air, W/(m K).
    pub k_air: f64,
    /// Thermal conductivity of the tab material, W/(m K).
    pub k_tabs: f64,
}

/// Kinetics-limited SEI side reaction on the negative electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeiParameters {
    /// Side-reaction exchange current density at T_REF, A/m².
    pub i0: f64,
    /// Cathodic transfer coefficient.
    pub alpha: f64,
    /// Equilibrium potential of the side reaction, V.
    pub u_ref: f64,
    /// Molar mass of the film, kg/mol.
    pub molar_mass: f64,
    /// Film density, kg/m³.
    pub density: f64,
    /// Film ionic conductivity, S/m.
    pub conductivity: f64,
    /// Film thickness of a fresh cell, m.
    pub initial_thickness: f64,
    /// Activation energy of the side reaction, J/mol.
    pub activation_energy: f64,
}

/// Full parameter set of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParameters {
    pub eps_s_n: f64,
    pub eps_s_p: f64,
    pub l_n: f64,
    pub l_sep: f64,
    pub l_p: f64,
    pub r_n: f64,
    pub r_p: f64,
    /// Electrode plate area, m².
    pub a_cell: f64,
    pub d_s_n: f64,
    pub d_s_p: f64,
    pub d_e: f64,
    pub t_plus: f64,
    pub c_e0: f64,
    /// Bulk electrolyte conductivity, S/m.
    pub kappa_e: f64,
    pub eps_e_n: f64,
    pub eps_e_sep: f64,
    pub eps_e_p: f64,
    pub bruggeman: f64,
    pub c_s_max_n: f64,
    pub c_s_max_p: f64,
    /// Reaction rate constants, m^2.5 mol^-0.5 s^-1.
    pub k_n: f64,
    pub k_p: f64,
    /// Lumped ohmic resistance, Ω.
    pub r_cell: f64,
    pub theta_n_0: f64,
    pub theta_n_100: f64,
    pub theta_p_0: f64,
    pub theta_p_100: f64,
    pub ocp_n: OcpTable,
    pub ocp_p: OcpTable,
    pub activation: ActivationEnergies,
    pub thermal: ThermalParameters,
    pub sei: SeiParameters,
}

impl CellParameters {
    /// NMC811 / graphite 21700 cell assembled from the LG M50 teardown
    /// literature. Volume fractions sit at the 4.85 Ah nominal capacity of
    /// the capacity relations; thermal, SEI and entropic values are
    /// engineering defaults.
    pub fn lg_m50_like() -> Self {
        let q_nom = 4.85;
        let eps_s_n = eps_from_capacity(q_nom, Electrode::Negative).unwrap();
        let eps_s_p = eps_from_capacity(q_nom, Electrode::Positive).unwrap();
        let l_n = 85.2e-6;
        let l_p = 75.6e-6;
        let c_s_max_n = 33_133.0;
        let c_s_max_p = 63_104.0;
        let theta_n_0 = 0.0279;
        let theta_n_100 = 0.9014;
        let theta_p_100 = 0.2661;
        // Plate area and positive window are chosen so that both electrodes
        // pass exactly q_nom between the 0 % and 100 % stoichiometries.
        let ah_per_mol = FARADAY / 3600.0;
        let a_cell = q_nom / (eps_s_n * l_n * c_s_max_n * ah_per_mol * (theta_n_100 - theta_n_0));
        let theta_p_0 = theta_p_100 + q_nom / (eps_s_p * l_p * a_cell * c_s_max_p * ah_per_mol);

        let mut grid_n: Vec<f64> = (0..20).map(|i| i as f64 * 0.005).collect();
        grid_n.extend((0..=45).map(|i| 0.1 + i as f64 * 0.02));
        let grid_p: Vec<f64> = (0..=50).map(|i| i as f64 * 0.02).collect();

        CellParameters {
            eps_s_n,
            eps_s_p,
            l_n,
            l_sep: 12e-6,
            l_p,
            r_n: 5.86e-6,
            r_p: 5.22e-6,
            a_cell,
            d_s_n: 3.3e-14,
            d_s_p: 4.0e-15,
            d_e: 1.769e-10,
            t_plus: 0.2594,
            c_e0: 1000.0,
            kappa_e: 0.9487,
            eps_e_n: 0.25,
            eps_e_sep: 0.47,
            eps_e_p: 0.335,
            bruggeman: 1.5,
            c_s_max_n,
            c_s_max_p,
            k_n: 6.48e-7 / FARADAY,
            k_p: 3.42e-6 / FARADAY,
            r_cell: 0.015,
            theta_n_0,
            theta_n_100,
            theta_p_0,
            theta_p_100,
            ocp_n: OcpTable::from_fn(&grid_n, graphite_ocp, graphite_entropic).unwrap(),
            ocp_p: OcpTable::from_fn(&grid_p, nmc811_ocp, nmc811_entropic).unwrap(),
            activation: ActivationEnergies {
                d_s_n: 30_000.0,
                d_s_p: 25_000.0,
                k_n: 35_000.0,
                k_p: 17_800.0,
                electrolyte: 17_100.0,
            },
            thermal: ThermalParameters {
                heat_capacity: 70.0,
                r_u: 15.0,
                diameter: 21e-3,
                height: 70e-3,
                tab_area: 1.6e-6,
                k_air: 0.026,
                k_tabs: 400.0,
            },
            sei: SeiParameters {
                i0: 1.5e-7,
                alpha: 0.5,
                u_ref: 0.4,
                molar_mass: 0.162,
                density: 1690.0,
                conductivity: 5.0e-5,
                initial_thickness: 5.0e-9,
                activation_energy: 60_000.0,
            },
        }
    }

    /// Capacity implied by the negative-electrode window, Ah.
    pub fn window_capacity_n(&self) -> f64 {
        self.eps_s_n
            * self.l_n
            * self.a_cell
            * self.c_s_max_n
            * (self.theta_n_100 - self.theta_n_0)
            * FARADAY
            / 3600.0
    }

    /// Capacity implied by the positive-electrode window, Ah.
    pub fn window_capacity_p(&self) -> f64 {
        self.eps_s_p
            * self.l_p
            * self.a_cell
            * self.c_s_max_p
            * (self.theta_p_0 - self.theta_p_100)
            * FARADAY
            / 3600.0
    }

    /// Cell capacity through the relations, limited by the weaker electrode.
    pub fn limiting_capacity(&self) -> Result<f64> {
        let qn = capacity_from_eps(self.eps_s_n, Electrode::Negative)?;
        let qp = capacity_from_eps(self.eps_s_p, Electrode::Positive)?;
        Ok(qn.min(qp))
    }

    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("l_n", self.l_n),
            ("l_sep", self.l_sep),
            ("l_p", self.l_p),
            ("r_n", self.r_n),
            ("r_p", self.r_p),
            ("a_cell", self.a_cell),
            ("d_s_n", self.d_s_n),
            ("d_s_p", self.d_s_p),
            ("d_e", self.d_e),
            ("t_plus", self.t_plus),
            ("c_e0", self.c_e0),
            ("kappa_e", self.kappa_e),
            ("bruggeman", self.bruggeman),
            ("c_s_max_n", self.c_s_max_n),
            ("c_s_max_p", self.c_s_max_p),
            ("k_n", self.k_n),
            ("k_p", self.k_p),
            ("r_cell", self.r_cell),
            ("thermal.heat_capacity", self.thermal.heat_capacity),
            ("thermal.r_u", self.thermal.r_u),
            ("thermal.diameter", self.thermal.diameter),
            ("thermal.height", self.thermal.height),
            ("thermal.tab_area", self.thermal.tab_area),
            ("thermal.k_air", self.thermal.k_air),
            ("thermal.k_tabs", self.thermal.k_tabs),
            ("sei.alpha", self.sei.alpha),
            ("sei.molar_mass", self.sei.molar_mass),
            ("sei.density", self.sei.density),
            ("sei.conductivity", self.sei.conductivity),
            ("sei.initial_thickness", self.sei.initial_thickness),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(
                    name,
                    format!("must be strictly positive, got {v}"),
                ));
            }
        }
        let non_negatives = [
            ("sei.i0", self.sei.i0),
            ("sei.activation_energy", self.sei.activation_energy),
            ("activation.d_s_n", self.activation.d_s_n),
            ("activation.d_s_p", self.activation.d_s_p),
            ("activation.k_n", self.activation.k_n),
            ("activation.k_p", self.activation.k_p),
            ("activation.electrolyte", self.activation.electrolyte),
        ];
        for (name, v) in non_negatives {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(
                    name,
                    format!("must be non-negative, got {v}"),
                ));
            }
        }
        let fractions = [
            ("eps_s_n", self.eps_s_n),
            ("eps_s_p", self.eps_s_p),
            ("eps_e_n", self.eps_e_n),
            ("eps_e_sep", self.eps_e_sep),
            ("eps_e_p", self.eps_e_p),
            ("t_plus", self.t_plus),
        ];
        for (name, v) in fractions {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        let windows = [
            ("theta_n_0", self.theta_n_0),
            ("theta_n_100", self.theta_n_100),
            ("theta_p_0", self.theta_p_0),
            ("theta_p_100", self.theta_p_100),
        ];
        for (name, v) in windows {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if !(self.theta_n_100 > self.theta_n_0) {
            return Err(Error::invalid("theta_n_100", "must exceed theta_n_0"));
        }
        if !(self.theta_p_0 > self.theta_p_100) {
            return Err(Error::invalid("theta_p_0", "must exceed theta_p_100"));
        }
        Ok(())
    }
}

/// Graphite OCP fit from the LG M50 teardown literature, V.
pub fn graphite_ocp(x: f64) -> f64 {
    1.9793 * (-39.3631 * x).exp() + 0.2482
        - 0.0909 * (29.8538 * (x - 0.1234)).tanh()
        - 0.04478 * (14.9159 * (x - 0.2769)).tanh()
        - 0.0205 * (30.4444 * (x - 0.6103)).tanh()
}

/// NMC811 OCP fit from the LG M50 teardown literature, V.
pub fn nmc811_ocp(y: f64) -> f64 {
    -0.8090 * y + 4.4875
        - 0.0428 * (18.5138 * (y - 0.5542)).tanh()
        - 17.7326 * (15.7890 * (y - 0.3117)).tanh()
        + 17.5842 * (15.9308 * (y - 0.3120)).tanh()
}

// Illustrative entropic coefficients (V/K); shape only, no fitted provenance.
fn graphite_entropic(x: f64) -> f64 {
    1e-4 * (-0.1 + 0.4 * (-x / 0.08).exp())
}

fn nmc811_entropic(y: f64) -> f64 {
    1e-4 * (-0.15 + 0.1 * y)
}

/// One phase of a cycling protocol. Rates are C-rates relative to the
/// protocol's nominal cell capacity; the module current is scaled by N_p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phase {
    CcCharge {
        rate: f64,
        cutoff_voltage: f64,
    },
    CcDischarge {
        rate: f64,
        cutoff_voltage: f64,
    },
    /// Hold the module terminal voltage; ends when the module current drops
    /// below `n_p * cutoff_current`.
    Cv {
        voltage: f64,
        cutoff_current: f64,
    },
    Rest {
        duration: f64,
    },
}

impl Phase {
    pub fn label(&self) -> PhaseKind {
        match self {
            Phase::CcCharge { .. } => PhaseKind::CcCharge,
            Phase::CcDischarge { .. } => PhaseKind::CcDischarge,
            Phase::Cv { .. } => PhaseKind::Cv,
            Phase::Rest { .. } => PhaseKind::Rest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    CcCharge,
    CcDischarge,
    Cv,
    Rest,
}

impl PhaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseKind::CcCharge => "cc_charge",
            PhaseKind::CcDischarge => "cc_discharge",
            PhaseKind::Cv => "cv",
            PhaseKind::Rest => "rest",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            PhaseKind::CcCharge => 0,
            PhaseKind::Cv => 1,
            PhaseKind::Rest => 2,
            PhaseKind::CcDischarge => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    /// Capacity used to turn C-rates into currents, Ah per cell.
    pub nominal_capacity: f64,
    pub phases: Vec<Phase>,
}

pub const V_MIN: f64 = 2.5;
pub const V_MAX: f64 = 4.2;

impl Default for ProtocolSpec {
    /// CCCV charge at C/3, 30 min rest, 1C CC discharge, 30 min rest.
    fn default() -> Self {
        ProtocolSpec {
            nominal_capacity: 4.85,
            phases: vec![
                Phase::CcCharge {
                    rate: 1.0 / 3.0,
                    cutoff_voltage: V_MAX,
                },
                Phase::Cv {
                    voltage: V_MAX,
                    cutoff_current: 0.05,
                },
                Phase::Rest { duration: 1800.0 },
                Phase::CcDischarge {
                    rate: 1.0,
                    cutoff_voltage: V_MIN,
                },
                Phase::Rest { duration: 1800.0 },
            ],
        }
    }
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_capacity > 0.0) {
            return Err(Error::invalid(
                "protocol.nominal_capacity",
                "must be positive",
            ));
        }
        if self.phases.is_empty() {
            return Err(Error::invalid(
                "protocol.phases",
                "at least one phase is required",
            ));
        }
        let in_window = |v: f64| (V_MIN..=V_MAX).contains(&v);
        for (i, phase) in self.phases.iter().enumerate() {
            let field = format!("protocol.phases[{i}]");
            match *phase {
                Phase::CcCharge {
                    rate,
                    cutoff_voltage,
                }
                | Phase::CcDischarge {
                    rate,
                    cutoff_voltage,
                } => {
                    if !(rate > 0.0) {
                        return Err(Error::invalid(
                            field,
                            format!("rate must be positive, got {rate}"),
                        ));
                    }
                    if !in_window(cutoff_voltage) {
                        return Err(Error::invalid(
                            field,
                            format!("cutoff {cutoff_voltage} V outside [{V_MIN}, {V_MAX}] V"),
                        ));
                    }
                }
                Phase::Cv {
                    voltage,
                    cutoff_current,
                } => {
                    if !in_window(voltage) {
                        return Err(Error::invalid(
                            field,
                            format!("CV voltage {voltage} V outside window"),
                        ));
                    }
                    if !(cutoff_current > 0.0) {
                        return Err(Error::invalid(field, "cutoff current must be positive"));
                    }
                }
                Phase::Rest { duration } => {
                    if !(duration >= 0.0) || !duration.is_finite() {
                        return Err(Error::invalid(field, "rest duration must be non-negative"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Spatial and temporal discretization of a module simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub n_r: usize,
    pub n_x_n: usize,
    pub n_x_sep: usize,
    pub n_x_p: usize,
    /// Step in constant-current and constant-voltage phases, s.
    pub dt_cc: f64,
    /// Step in rest phases, s.
    pub dt_rest: f64,
    /// Width of the bracket that locates a cutoff crossing, s.
    pub event_tolerance: f64,
    /// Keep every n-th accepted step in the stored trace (0 keeps none).
    pub record_every: usize,
    /// Whether the SEI side reaction is simulated.
    pub aging: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            n_r: 10,
            n_x_n: 10,
            n_x_sep: 5,
            n_x_p: 10,
            dt_cc: 1.0,
            dt_rest: 10.0,
            event_tolerance: 0.1,
            record_every: 1,
            aging: true,
        }
    }
}

impl SolverSettings {
    /// Coarse tier for workstation-scale campaigns.
    pub fn fast() -> Self {
        SolverSettings {
            n_r: 6,
            n_x_n: 4,
            n_x_sep: 2,
            n_x_p: 4,
            dt_cc: 10.0,
            dt_rest: 60.0,
            event_tolerance: 0.1,
            record_every: 0,
            aging: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r < 2 {
            return Err(Error::invalid(
                "solver.n_r",
                "need at least 2 radial shells",
            ));
        }
        if self.n_x_n == 0 || self.n_x_sep == 0 || self.n_x_p == 0 {
            return Err(Error::invalid(
                "solver.n_x",
                "every electrolyte region needs a volume",
            ));
        }
        for (name, v) in [
            ("solver.dt_cc", self.dt_cc),
            ("solver.dt_rest", self.dt_rest),
            ("solver.event_tolerance", self.event_tolerance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// One parallel module: the cells in position order (index 0 sits nearest
/// the terminals) plus the module-level design and operating conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleConfig {
    pub n_p: usize,
    /// Interconnection resistance per ladder segment and rail, Ω.
    pub r_int: f64,
    /// Cell-to-cell spacing, m.
    pub spacing: f64,
    /// Ambient temperature, K.
    pub t_amb: f64,
    pub n_cycles: usize,
    #[serde(with = "seed_repr")]
    pub seed: u64,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    pub cells: Vec<CellParameters>,
}

impl ModuleConfig {
    /// Module of `n_p` identical copies of `cell`.
    pub fn homogeneous(cell: CellParameters, n_p: usize, r_int: f64, spacing: f64) -> Self {
        ModuleConfig {
            n_p,
            r_int,
            spacing,
            t_amb: T_REF,
            n_cycles: 1,
            seed: 0,
            protocol: ProtocolSpec::default(),
            solver: SolverSettings::default(),
            cells: vec![cell; n_p],
        }
    }

    /// Reference module: nominal cells, R_int = 0.25 mΩ, Sp = 5 mm.
    pub fn reference(cell: CellParameters, n_p: usize) -> Self {
        Self::homogeneous(cell, n_p, 0.25e-3, 5e-3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p < 2 {
            return Err(Error::invalid(
                "n_p",
                format!("need at least 2 cells, got {}", self.n_p),
            ));
        }
        if self.cells.len() != self.n_p {
            return Err(Error::invalid(
                "cells",
                format!("n_p = {} but {} cells listed", self.n_p, self.cells.len()),
            ));
        }
        if !(self.r_int >= 0.0) || !self.r_int.is_finite() {
            return Err(Error::invalid(
                "r_int",
                format!("must be non-negative, got {}", self.r_int),
            ));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(Error::invalid(
                "spacing",
                format!("must be positive, got {}", self.spacing),
            ));
        }
        if !(self.t_amb > 0.0) {
            return Err(Error::invalid("t_amb", "must be positive"));
        }
        if self.n_cycles == 0 {
            return Err(Error::invalid("n_cycles", "must be at least 1"));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            cell.validate().map_err(|e| match e {
                Error::InvalidParameter { field, reason } => Error::InvalidParameter {
                    field: format!("cells[{i}].{field}"),
                    reason,
                },
                other => other,
            })?;
        }
        self.protocol.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    /// Copy of this configuration with the cells re-ordered; `order[k]` is
    /// the original index of the cell placed at position k.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.cells = order.iter().map(|&i| self.cells[i].clone()).collect();
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModuleConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// TOML integers are signed 64-bit; seeds above `i64::MAX` are written as
/// strings and either form is accepted on input.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

pub fn load_config(path: &Path) -> Result<ModuleConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModuleConfig::from_toml(&text)
}

pub fn save_config(cfg: &ModuleConfig, path: &Path) -> Result<()> {
    cfg.validate()?;
    crate::io::write_atomic(path, cfg.to_toml()?.as_bytes())
}

/// Sampling intervals of one Monte Carlo module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    /// Half-width of the per-cell capacity perturbation, relative to nominal.
    pub capacity_rel_width: f64,
    /// Interconnection resistance interval, Ω.
    pub r_int: (f64, f64),
    /// Cell spacing interval, m.
    pub spacing: (f64, f64),
}

impl Default for SamplingRanges {
    fn default() -> Self {
        SamplingRanges {
            capacity_rel_width: 0.025,
            r_int: (0.1e-3, 0.5e-3),
            spacing: (1e-3, 10e-3),
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.capacity_rel_width) {
            return Err(Error::invalid("capacity_rel_width", "must lie in [0, 1)"));
        }
        for (name, (lo, hi), min) in [
            ("r_int", self.r_int, 0.0),
            ("spacing", self.spacing, f64::MIN_POSITIVE),
        ] {
            if !(lo >= min && hi >= lo && hi.is_finite()) {
                return Err(Error::invalid(
                    name,
                    format!("invalid interval [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    /// Interval of the volume fraction of `electrode` reachable by sampling
    /// around `nominal`.
    pub fn eps_bounds(&self, nominal: &CellParameters, electrode: Electrode) -> Result<(f64, f64)> {
        let q_nom = capacity_from_eps(nominal.eps_s_n, Electrode::Negative)?;
        let centre = match electrode {
            Electrode::Negative => nominal.eps_s_n,
            Electrode::Positive => nominal.eps_s_p,
        };
        let half = electrode.eps_per_ah() * self.capacity_rel_width * q_nom;
        Ok((centre - half, centre + half))
    }
}

/// Draw one heterogeneous module around `nominal`.
///
/// Per-cell capacities are uniform in `Q_nom (1 ± w)` and independent across
/// cells; both volume fractions of a cell move together along the capacity
/// relations. R_int and spacing are drawn once per module.
pub fn sample_module(
    rng_seed: u64,
    nominal: &CellParameters,
    ranges: &SamplingRanges,
    n_p: usize,
) -> Result<ModuleConfig> {
    nominal.validate()?;
    ranges.validate()?;
    let q_nom = capacity_from_eps(nominal.eps_s_n, Electrode::Negative)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = ranges.capacity_rel_width;
    let cells = (0..n_p)
        .map(|_| {
            let q = rng.gen_range(q_nom * (1.0 - w)..=q_nom * (1.0 + w));
            let mut cell = nominal.clone();
            cell.eps_s_n += Electrode::Negative.eps_per_ah() * (q - q_nom);
            cell.eps_s_p += Electrode::Positive.eps_per_ah() * (q - q_nom);
            cell
        })
        .collect();
    let r_int = rng.gen_range(ranges.r_int.0..=ranges.r_int.1);
    let spacing = rng.gen_range(ranges.spacing.0..=ranges.spacing.1);
    let cfg = ModuleConfig {
        n_p,
        r_int,
        spacing,
        t_amb: T_REF,
        n_cycles: 1,
        seed: rng_seed,
        protocol: ProtocolSpec::default(),
        solver: SolverSettings::default(),
        cells,
    };
    cfg.validate()?;
    Ok(cfg)
}
