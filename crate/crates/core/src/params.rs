//! System parameters, closed-form hardware estimators, and regime
//! classification for a transmon + superconducting cavity + electron-spin
//! ensemble device.
//!
//! Estimators work in SI (rad/s, m, K). The simulation modules work in
//! dimensionless units of the transmon-cavity coupling `g_c`;
//! [`SystemParams::to_dimensionless`] converts between the two.

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// How collective spin raising/lowering matrix elements are modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinModel {
    /// Exact symmetric-sector (Dicke) ladder elements sqrt((k+1)(N_s - k)).
    ExactDicke,
    /// Leading-order bosonic approximation sqrt((k+1) N_s).
    Bosonic,
}

impl Default for SpinModel {
    fn default() -> Self {
        SpinModel::ExactDicke
    }
}

/// One spin ensemble: its size and its detuning from the cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleParams {
    /// Number of spins N_s.
    pub n_s: u64,
    /// Spin Zeeman detuning Delta_j below the cavity frequency, rad/s
    /// (or units of g_c in dimensionless mode).
    pub delta: f64,
}

/// Full parameter set of the coupled transmon / cavity / ensembles system.
///
/// All frequencies are angular (rad/s) in SI mode. In dimensionless mode
/// `g_c = 1` and every other rate is measured in units of g_c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Transmon-cavity electric-dipole coupling g_c.
    pub g_c: f64,
    /// Single-spin magnetic coupling g_m.
    pub g_m: f64,
    /// Transmon detuning delta below the cavity frequency.
    pub delta: f64,
    /// Spin ensembles (at least one).
    pub ensembles: Vec<EnsembleParams>,
    /// Bare cavity frequency; present only in absolute-unit mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_c: Option<f64>,
    /// Cavity photon loss rate (population decay).
    #[serde(default)]
    pub kappa_c: f64,
    /// Transmon relaxation rate (population decay).
    #[serde(default)]
    pub gamma_jj: f64,
    /// Per-ensemble collective spin relaxation rate (population decay of the
    /// single-excitation collective state).
    #[serde(default)]
    pub gamma_spin: f64,
    #[serde(default)]
    pub spin_model: SpinModel,
    /// Ratio interpreted as "much larger than" in hierarchy checks.
    #[serde(default = "default_hierarchy_threshold")]
    pub hierarchy_threshold: f64,
}

fn default_hierarchy_threshold() -> f64 {
    10.0
}

impl SystemParams {
    /// Dimensionless defaults for embedded-JC studies: g_c = 1, one ensemble
    /// of 1e6 spins resonant with the lower polariton (Delta = g_c), with the
    /// collective coupling G = 0.02 g_c.
    pub fn default_dimensionless() -> Self {
        let n_s = 1_000_000u64;
        SystemParams {
            g_c: 1.0,
            g_m: 0.02 / (n_s as f64).sqrt(),
            delta: 0.0,
            ensembles: vec![EnsembleParams { n_s, delta: 1.0 }],
            omega_c: None,
            kappa_c: 0.0,
            gamma_jj: 0.0,
            gamma_spin: 0.0,
            spin_model: SpinModel::ExactDicke,
            hierarchy_threshold: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_c > 0.0) || !self.g_c.is_finite() {
            return Err(Error::validation("g_c must be positive and finite"));
        }
        if !(self.g_m >= 0.0) || !self.g_m.is_finite() {
            return Err(Error::validation("g_m must be non-negative and finite"));
        }
        if !self.delta.is_finite() {
            return Err(Error::validation("delta must be finite"));
        }
        if self.ensembles.is_empty() {
            return Err(Error::validation("at least one spin ensemble is required"));
        }
        for (j, e) in self.ensembles.iter().enumerate() {
            if e.n_s < 1 {
                return Err(Error::validation(format!("ensemble {j}: N_s must be >= 1")));
            }
            if !e.delta.is_finite() {
                return Err(Error::validation(format!("ensemble {j}: Delta must be finite")));
            }
        }
        for (name, rate) in [
            ("kappa_c", self.kappa_c),
            ("gamma_jj", self.gamma_jj),
            ("gamma_spin", self.gamma_spin),
        ] {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(Error::validation(format!("{name} must be non-negative and finite")));
            }
        }
        if let Some(w) = self.omega_c {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::validation("omega_c must be positive when present"));
            }
        }
        if !(self.hierarchy_threshold > 0.0) || !self.hierarchy_threshold.is_finite() {
            return Err(Error::validation("hierarchy_threshold must be positive"));
        }
        Ok(())
    }

    /// Collective coupling G_j = g_m sqrt(N_s,j) of ensemble `j`.
    pub fn collective_coupling_of(&self, j: usize) -> f64 {
        collective_coupling(self.g_m, self.ensembles[j].n_s)
    }

    /// Collective coupling of the first ensemble.
    pub fn collective_coupling_first(&self) -> f64 {
        self.collective_coupling_of(0)
    }

    /// Rescales every rate by 1/g_c so that g_c = 1. The cavity frequency is
    /// dropped: absolute scale is meaningless in dimensionless mode.
    pub fn to_dimensionless(&self) -> SystemParams {
        let s = 1.0 / self.g_c;
        SystemParams {
            g_c: 1.0,
            g_m: self.g_m * s,
            delta: self.delta * s,
            ensembles: self
                .ensembles
                .iter()
                .map(|e| EnsembleParams { n_s: e.n_s, delta: e.delta * s })
                .collect(),
            omega_c: None,
            kappa_c: self.kappa_c * s,
            gamma_jj: self.gamma_jj * s,
            gamma_spin: self.gamma_spin * s,
            spin_model: self.spin_model,
            hierarchy_threshold: self.hierarchy_threshold,
        }
    }
}

/// Single-spin magnetic coupling to the cavity mode:
/// g_m = mu_B sqrt(mu_0 (omega_c - g_c)) / sqrt(2 hbar V_c),
/// with the mode volume V_c in m^3.
pub fn magnetic_coupling(omega_c: f64, g_c: f64, v_c: f64) -> Result<f64> {
    magnetic_coupling_with(omega_c, g_c, v_c, &PhysicalConstants::default())
}

/// Same as [`magnetic_coupling`] with an explicit constants set.
pub fn magnetic_coupling_with(
    omega_c: f64,
    g_c: f64,
    v_c: f64,
    constants: &PhysicalConstants,
) -> Result<f64> {
    if !(v_c > 0.0) {
        return Err(Error::validation("mode volume V_c must be positive"));
    }
    if !(g_c >= 0.0) {
        return Err(Error::validation("g_c must be non-negative"));
    }
    if !(omega_c > g_c) {
        return Err(Error::validation("omega_c must exceed g_c"));
    }
    constants.validate()?;
    let num = constants.mu_b * (constants.mu_0 * (omega_c - g_c)).sqrt();
    let den = (2.0 * constants.hbar * v_c).sqrt();
    Ok(num / den)
}

/// Fundamental fine-structure limit of the transmon-cavity coupling:
/// g_c,max = sqrt(alpha) * omega_c.
pub fn max_electric_coupling(omega_c: f64) -> Result<f64> {
    if !(omega_c >= 0.0) || !omega_c.is_finite() {
        return Err(Error::validation("omega_c must be non-negative and finite"));
    }
    Ok(PhysicalConstants::default().alpha.sqrt() * omega_c)
}

/// Spin count from density and size, with the count floor-rounded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpinCountEstimate {
    pub count: u64,
    /// Set when density * volume < 1 and the count floors to zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Number of spins in a rectangular sample: density (1/cm^3) times volume,
/// with all lengths in meters.
pub fn spin_count(density_per_cm3: f64, thickness_m: f64, width_m: f64, length_m: f64) -> Result<SpinCountEstimate> {
    for (name, v) in [
        ("density", density_per_cm3),
        ("thickness", thickness_m),
        ("width", width_m),
        ("length", length_m),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::validation(format!("{name} must be positive and finite")));
        }
    }
    let density_per_m3 = density_per_cm3 * 1e6;
    let exact = density_per_m3 * thickness_m * width_m * length_m;
    // Counts beyond 2^53 cannot be represented exactly in f64 arithmetic.
    if exact >= 9.007_199_254_740_992e15 {
        return Err(Error::validation(format!(
            "spin count {exact:e} exceeds the exactly representable range"
        )));
    }
    let count = exact.floor() as u64;
    let warning = if count == 0 {
        Some(format!("density * volume = {exact:.3e} < 1: sample holds no spins on average"))
    } else {
        None
    };
    Ok(SpinCountEstimate { count, warning })
}

/// Collective coupling G = g_m sqrt(N_s).
pub fn collective_coupling(g_m: f64, n_s: u64) -> f64 {
    g_m * (n_s as f64).sqrt()
}

/// Spin detuning that makes the spins resonant with the dispersively shifted
/// transmon: Delta = delta + g_c^2/delta.
pub fn dispersive_resonance(delta: f64, g_c: f64) -> Result<f64> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::validation("dispersive resonance requires delta != 0"));
    }
    Ok(delta + g_c * g_c / delta)
}

/// Mean thermal occupation of a mode at angular frequency `omega` and
/// temperature `t_kelvin`: 1/(exp(hbar omega / k_B T) - 1).
pub fn thermal_occupation(omega: f64, t_kelvin: f64) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::validation("omega must be positive"));
    }
    if !(t_kelvin > 0.0) || !t_kelvin.is_finite() {
        return Err(Error::validation("temperature must be positive"));
    }
    let c = PhysicalConstants::default();
    let x = c.hbar * omega / (c.k_b * t_kelvin);
    Ok(1.0 / x.exp_m1())
}

/// Outcome of the coupling-hierarchy and decoherence checks.
///
/// Each boolean is true exactly when its named margin ratio exceeds one.
/// Ratios that are not applicable for the given detunings are omitted from
/// the map and their booleans are false.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    /// G = g_m sqrt(N_s) of the first ensemble.
    pub collective_coupling: f64,
    /// Embedded-ladder anharmonicity scale G (sqrt(2) - 1).
    pub anharmonicity_scale: f64,
    pub resonant_strong_coupling: bool,
    pub two_level_valid: bool,
    pub dispersive_strong_coupling: bool,
    pub margin_ratios: BTreeMap<String, f64>,
    /// Checks skipped because a detuning needed by the inequality is zero.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub not_applicable: Vec<String>,
}

/// Evaluates the coupling hierarchy and the strong-coupling inequalities.
///
/// Margins:
/// - `hierarchy`: (g_c / G) / threshold, the "g_c much larger than G" check;
/// - `two_level`: G (sqrt(2)-1) / max(kappa_c, gamma_jj, gamma_spin),
///   anharmonicity of the hybrid ladder versus decoherence;
/// - `resonant_strong`: G / max(kappa_c, gamma_jj, gamma_spin);
/// - `dispersive_strong`: (g_c G / Delta) / max(kappa_c g_c^2/delta^2,
///   gamma_spin, gamma_jj), using the first ensemble's Delta.
pub fn classify_regime(params: &SystemParams) -> Result<RegimeReport> {
    params.validate()?;
    let g = params.collective_coupling_first();
    let anharm = g * (SQRT_2 - 1.0);
    let rate_max = params.kappa_c.max(params.gamma_jj).max(params.gamma_spin);

    let mut ratios = BTreeMap::new();
    let mut not_applicable = Vec::new();

    ratios.insert("hierarchy".to_string(), (params.g_c / g) / params.hierarchy_threshold);
    ratios.insert("two_level".to_string(), anharm / rate_max);
    ratios.insert("resonant_strong".to_string(), g / rate_max);

    let delta = params.delta;
    let big_delta = params.ensembles[0].delta;
    if delta == 0.0 || big_delta == 0.0 {
        not_applicable.push("dispersive_strong".to_string());
    } else {
        let g_eff = params.g_c * g / big_delta.abs();
        let residual_cavity_loss = params.kappa_c * params.g_c * params.g_c / (delta * delta);
        let den = residual_cavity_loss.max(params.gamma_spin).max(params.gamma_jj);
        ratios.insert("dispersive_strong".to_string(), g_eff / den);
    }

    let flag = |name: &str, ratios: &BTreeMap<String, f64>| -> bool {
        ratios.get(name).map(|r| *r > 1.0).unwrap_or(false)
    };
    Ok(RegimeReport {
        collective_coupling: g,
        anharmonicity_scale: anharm,
        resonant_strong_coupling: flag("resonant_strong", &ratios),
        two_level_valid: flag("two_level", &ratios),
        dispersive_strong_coupling: flag("dispersive_strong", &ratios),
        margin_ratios: ratios,
        not_applicable,
    })
}
