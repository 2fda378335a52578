//! Reference scales, the four dimensionless groups and the rate `κ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScales {
    pub x_ref: f64,
    pub t_ref: f64,
    pub s_ref: f64,
    pub p_ref: f64,
    pub upsilon_ref: f64,
    pub omega_ref: f64,
    pub beta_ref: f64,
    pub phi_ref: f64,
    pub mu_ref: f64,
    pub p_max: f64,
}

impl ReferenceScales {
    /// Unit term scales with the given length and saturation level.
    pub fn unit(x_ref: f64, p_max: f64) -> Self {
        Self {
            x_ref,
            t_ref: 1.0,
            s_ref: 1.0,
            p_ref: 1.0,
            upsilon_ref: 1.0,
            omega_ref: 1.0,
            beta_ref: 1.0,
            phi_ref: 1.0,
            mu_ref: 1.0,
            p_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("x_ref", self.x_ref),
            ("t_ref", self.t_ref),
            ("s_ref", self.s_ref),
            ("p_ref", self.p_ref),
            ("upsilon_ref", self.upsilon_ref),
            ("omega_ref", self.omega_ref),
            ("beta_ref", self.beta_ref),
            ("phi_ref", self.phi_ref),
            ("mu_ref", self.mu_ref),
            ("p_max", self.p_max),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("scale {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Crowding-limited speed, crowding speed, interaction and noise groups.
pub fn dimensionless_groups(r: &ReferenceScales) -> [f64; 4] {
    let speed = r.upsilon_ref * r.t_ref * r.s_ref / r.x_ref;
    [
        speed * r.p_max,
        speed * r.p_ref,
        r.omega_ref * r.t_ref / r.x_ref,
        r.beta_ref * r.t_ref / r.x_ref,
    ]
}

/// Largest dimensionless group; the single rate multiplying all terms.
pub fn compute_kappa(r: &ReferenceScales) -> f64 {
    dimensionless_groups(r)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}
