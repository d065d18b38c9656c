//! Ideal-gas model and conservative/primitive conversions.

use crate::error::{config_err, Result};

/// Number of conserved variables `[rho, rho u, rho v, rho w, rho e]`.
pub const NVAR: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasModel {
    pub gamma: f64,
    pub gas_constant: f64,
    pub prandtl: f64,
    /// Molecular dynamic viscosity.
    pub mu0: f64,
}

impl Default for GasModel {
    fn default() -> Self {
        Self {
            gamma: 1.4,
            gas_constant: 1.0,
            prandtl: 0.72,
            mu0: 0.0,
        }
    }
}

impl GasModel {
    pub fn new(gamma: f64, gas_constant: f64, prandtl: f64, mu0: f64) -> Result<Self> {
        let g = Self {
            gamma,
            gas_constant,
            prandtl,
            mu0,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(config_err("gamma must exceed 1"));
        }
        if !(self.gas_constant > 0.0) {
            return Err(config_err("gas constant must be positive"));
        }
        if !(self.prandtl > 0.0) {
            return Err(config_err("Prandtl number must be positive"));
        }
        if !(self.mu0 >= 0.0) {
            return Err(config_err("viscosity must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn cv(&self) -> f64 {
        self.gas_constant / (self.gamma - 1.0)
    }

    #[inline]
    pub fn cp(&self) -> f64 {
        self.gamma * self.cv()
    }

    #[inline]
    pub fn pressure(&self, u: &[f64; NVAR]) -> f64 {
        let ke = 0.5 * (u[1] * u[1] + u[2] * u[2] + u[3] * u[3]) / u[0];
        (self.gamma - 1.0) * (u[4] - ke)
    }

    #[inline]
    pub fn sound_speed(&self, rho: f64, p: f64) -> f64 {
        libm::sqrt(self.gamma * p / rho)
    }

    /// Conservative state from density, velocity and pressure.
    #[inline]
    pub fn conservative(&self, rho: f64, vel: [f64; 3], p: f64) -> [f64; NVAR] {
        let ke = 0.5 * rho * (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]);
        [
            rho,
            rho * vel[0],
            rho * vel[1],
            rho * vel[2],
            p / (self.gamma - 1.0) + ke,
        ]
    }

    /// `(rho, u, v, w, p, T)`; `None` when density or pressure is not positive.
    #[inline]
    pub fn primitive(&self, u: &[f64; NVAR]) -> Option<Primitive> {
        let rho = u[0];
        if !(rho > 0.0) {
            return None;
        }
        let inv = 1.0 / rho;
        let vel = [u[1] * inv, u[2] * inv, u[3] * inv];
        let p = (self.gamma - 1.0)
            * (u[4] - 0.5 * rho * (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]));
        if !(p > 0.0) {
            return None;
        }
        Some(Primitive {
            rho,
            vel,
            p,
            t: p * inv / self.gas_constant,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub rho: f64,
    pub vel: [f64; 3],
    pub p: f64,
    pub t: f64,
}
