//! Physical constants (SI, CODATA 2018) used by the estimator routines.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Bohr magneton, J/T.
pub const MU_B: f64 = 9.274_010_078_3e-24;
/// Vacuum permeability, T*m/A.
pub const MU_0: f64 = 1.256_637_062_12e-6;
/// Reduced Planck constant, J*s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K (exact since the 2019 SI redefinition).
pub const K_B: f64 = 1.380_649e-23;
/// Fine-structure constant, dimensionless.
pub const ALPHA: f64 = 7.297_352_569_3e-3;

/// Bundle of the constants above, so estimator code can be run against a
/// single validated set and reports can record exactly what was used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub mu_b: f64,
    pub mu_0: f64,
    pub hbar: f64,
    pub k_b: f64,
    pub alpha: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            mu_b: MU_B,
            mu_0: MU_0,
            hbar: HBAR,
            k_b: K_B,
            alpha: ALPHA,
        }
    }
}

impl PhysicalConstants {
    /// Checks the stored values against the CODATA references. Guards against
    /// accidental unit slips when constants are overridden in tests.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("mu_b", self.mu_b, MU_B),
            ("mu_0", self.mu_0, MU_0),
            ("hbar", self.hbar, HBAR),
            ("k_b", self.k_b, K_B),
            ("alpha", self.alpha, ALPHA),
        ];
        for (name, value, reference) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::validation(format!("constant {name} must be positive")));
            }
            if ((value - reference) / reference).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "constant {name} = {value:e} deviates from reference {reference:e} by more than 1e-6 relative"
                )));
            }
        }
        Ok(())
    }
}
