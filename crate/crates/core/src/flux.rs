//! Point-wise and two-point fluxes of the compressible Navier–Stokes equations.
//!
//! The volume flux is the kinetic-energy-preserving average of Pirozzoli
//! (arithmetic means of density, velocity, pressure and total enthalpy). The
//! surface flux is Roe's scheme, optionally with the low-Mach scaling of the
//! velocity jump, or local Lax–Friedrichs.

use crate::error::{Error, Result};
use crate::gas::{GasModel, NVAR};

/// Conservative state together with the derived quantities the fluxes need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub u: [f64; NVAR],
    pub rho: f64,
    pub vel: [f64; 3],
    pub p: f64,
    /// Specific total enthalpy `(rho e + p) / rho`.
    pub h: f64,
}

impl NodeState {
    #[inline]
    pub fn new(u: [f64; NVAR], gas: &GasModel) -> Option<Self> {
        let pr = gas.primitive(&u)?;
        Some(Self {
            u,
            rho: pr.rho,
            vel: pr.vel,
            p: pr.p,
            h: (u[4] + pr.p) / pr.rho,
        })
    }

    pub fn checked(u: [f64; NVAR], gas: &GasModel) -> Result<Self> {
        Self::new(u, gas).ok_or(Error::InvalidState {
            element: 0,
            node: 0,
            rho: u[0],
            p: gas.pressure(&u),
        })
    }

    #[inline]
    pub fn sound_speed(&self, gas: &GasModel) -> f64 {
        gas.sound_speed(self.rho, self.p)
    }
}

/// Riemann solver used at element interfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RiemannVariant {
    /// Roe with the velocity jump scaled by `min(1, max(M_L, M_R))`.
    RoeLowDiss,
    Roe,
    Llf,
    /// Arithmetic mean of the two physical fluxes; no dissipation.
    Central,
}

impl RiemannVariant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RoeLowDiss => "roe-lowdiss",
            Self::Roe => "roe",
            Self::Llf => "llf",
            Self::Central => "central",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "roe-lowdiss" => Some(Self::RoeLowDiss),
            "roe" => Some(Self::Roe),
            "llf" => Some(Self::Llf),
            "central" => Some(Self::Central),
            _ => None,
        }
    }
}

#[inline]
pub fn euler_flux_node(s: &NodeState, dir: usize) -> [f64; NVAR] {
    let un = s.vel[dir];
    let m = s.rho * un;
    let mut f = [m, m * s.vel[0], m * s.vel[1], m * s.vel[2], m * s.h];
    f[1 + dir] += s.p;
    f
}

/// Convective flux in direction `dir` (0, 1, 2).
pub fn euler_flux(u: &[f64; NVAR], dir: usize, gas: &GasModel) -> Result<[f64; NVAR]> {
    Ok(euler_flux_node(&NodeState::checked(*u, gas)?, dir))
}

/// Symmetric kinetic-energy-preserving two-point flux.
#[inline]
pub fn split_flux_node(l: &NodeState, r: &NodeState, dir: usize) -> [f64; NVAR] {
    let rho = 0.5 * (l.rho + r.rho);
    let v = [
        0.5 * (l.vel[0] + r.vel[0]),
        0.5 * (l.vel[1] + r.vel[1]),
        0.5 * (l.vel[2] + r.vel[2]),
    ];
    let p = 0.5 * (l.p + r.p);
    let h = 0.5 * (l.h + r.h);
    let m = rho * v[dir];
    let mut f = [m, m * v[0], m * v[1], m * v[2], m * h];
    f[1 + dir] += p;
    f
}

pub fn split_volume_flux(
    ul: &[f64; NVAR],
    ur: &[f64; NVAR],
    dir: usize,
    gas: &GasModel,
) -> Result<[f64; NVAR]> {
    let l = NodeState::checked(*ul, gas)?;
    let r = NodeState::checked(*ur, gas)?;
    Ok(split_flux_node(&l, &r, dir))
}

#[inline]
fn llf_node(l: &NodeState, r: &NodeState, dir: usize, gas: &GasModel) -> [f64; NVAR] {
    let fl = euler_flux_node(l, dir);
    let fr = euler_flux_node(r, dir);
    let lam = (l.vel[dir].abs() + l.sound_speed(gas)).max(r.vel[dir].abs() + r.sound_speed(gas));
    let mut f = [0.0; NVAR];
    for v in 0..NVAR {
        f[v] = 0.5 * (fl[v] + fr[v]) - 0.5 * lam * (r.u[v] - l.u[v]);
    }
    f
}

/// Roe flux; returns `None` when the Roe-averaged sound speed is not real.
#[inline]
fn roe_node(
    l: &NodeState,
    r: &NodeState,
    dir: usize,
    gas: &GasModel,
    low_mach: bool,
) -> Option<[f64; NVAR]> {
    let sl = libm::sqrt(l.rho);
    let sr = libm::sqrt(r.rho);
    let inv = 1.0 / (sl + sr);
    let vel = [
        (sl * l.vel[0] + sr * r.vel[0]) * inv,
        (sl * l.vel[1] + sr * r.vel[1]) * inv,
        (sl * l.vel[2] + sr * r.vel[2]) * inv,
    ];
    let h = (sl * l.h + sr * r.h) * inv;
    let q2 = vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2];
    let c2 = (gas.gamma - 1.0) * (h - 0.5 * q2);
    if !(c2 > 0.0) {
        return None;
    }
    let c = libm::sqrt(c2);
    let rho = sl * sr;
    let un = vel[dir];

    let mut dv = [
        r.vel[0] - l.vel[0],
        r.vel[1] - l.vel[1],
        r.vel[2] - l.vel[2],
    ];
    if low_mach {
        let ml = libm::sqrt(l.vel[0] * l.vel[0] + l.vel[1] * l.vel[1] + l.vel[2] * l.vel[2])
            / l.sound_speed(gas);
        let mr = libm::sqrt(r.vel[0] * r.vel[0] + r.vel[1] * r.vel[1] + r.vel[2] * r.vel[2])
            / r.sound_speed(gas);
        let z = ml.max(mr).min(1.0);
        for d in dv.iter_mut() {
            *d *= z;
        }
    }
    let drho = r.rho - l.rho;
    let dp = r.p - l.p;
    let dun = dv[dir];

    let a1 = (dp - rho * c * dun) / (2.0 * c2);
    let a2 = drho - dp / c2;
    let a5 = (dp + rho * c * dun) / (2.0 * c2);
    let l1 = (un - c).abs();
    let l2 = un.abs();
    let l5 = (un + c).abs();

    let fl = euler_flux_node(l, dir);
    let fr = euler_flux_node(r, dir);
    let mut f = [0.0; NVAR];
    for v in 0..NVAR {
        f[v] = 0.5 * (fl[v] + fr[v]);
    }
    // acoustic waves
    let mut r1 = [1.0, vel[0], vel[1], vel[2], h - un * c];
    r1[1 + dir] -= c;
    let mut r5 = [1.0, vel[0], vel[1], vel[2], h + un * c];
    r5[1 + dir] += c;
    // entropy wave
    let r2 = [1.0, vel[0], vel[1], vel[2], 0.5 * q2];
    for v in 0..NVAR {
        f[v] -= 0.5 * (l1 * a1 * r1[v] + l2 * a2 * r2[v] + l5 * a5 * r5[v]);
    }
    // shear waves: tangential velocity jumps
    for t in 0..3 {
        if t == dir {
            continue;
        }
        let at = rho * dv[t];
        f[1 + t] -= 0.5 * l2 * at;
        f[4] -= 0.5 * l2 * at * vel[t];
    }
    Some(f)
}

/// Interface flux for the given variant. A degenerate Roe average falls back to LLF.
#[inline]
pub fn riemann_flux_node(
    l: &NodeState,
    r: &NodeState,
    dir: usize,
    variant: RiemannVariant,
    gas: &GasModel,
) -> [f64; NVAR] {
    match variant {
        RiemannVariant::Llf => llf_node(l, r, dir, gas),
        RiemannVariant::Central => {
            let fl = euler_flux_node(l, dir);
            let fr = euler_flux_node(r, dir);
            core::array::from_fn(|v| 0.5 * (fl[v] + fr[v]))
        }
        RiemannVariant::Roe | RiemannVariant::RoeLowDiss => {
            match roe_node(l, r, dir, gas, variant == RiemannVariant::RoeLowDiss) {
                Some(f) => f,
                None => {
                    log::warn!("degenerate Roe average, falling back to LLF");
                    llf_node(l, r, dir, gas)
                }
            }
        }
    }
}

pub fn riemann_flux(
    ul: &[f64; NVAR],
    ur: &[f64; NVAR],
    dir: usize,
    variant: RiemannVariant,
    gas: &GasModel,
) -> Result<[f64; NVAR]> {
    let l = NodeState::checked(*ul, gas)?;
    let r = NodeState::checked(*ur, gas)?;
    Ok(riemann_flux_node(&l, &r, dir, variant, gas))
}

/// Gradients of `(u, v, w, T)`; `grad[var][dir]`.
pub type PrimGradient = [[f64; 3]; 4];

/// Viscous flux `F^v` in all three directions, `f[dir][var]`.
#[inline]
pub fn viscous_flux(vel: &[f64; 3], grad: &PrimGradient, mu: f64, gas: &GasModel) -> [[f64; NVAR]; 3] {
    let div = grad[0][0] + grad[1][1] + grad[2][2];
    let kappa = mu * gas.cp() / gas.prandtl;
    let mut f = [[0.0; NVAR]; 3];
    for j in 0..3 {
        let mut work = 0.0;
        for i in 0..3 {
            let mut s = grad[i][j] + grad[j][i];
            if i == j {
                s -= 2.0 / 3.0 * div;
            }
            let sigma = mu * s;
            f[j][1 + i] = sigma;
            work += sigma * vel[i];
        }
        f[j][4] = work + kappa * grad[3][j];
    }
    f
}
