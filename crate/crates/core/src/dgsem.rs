//! Split-form DGSEM discretization of the compressible Navier–Stokes equations
//! on a periodic Cartesian mesh.
//!
//! The operator returns the tendency `dU/dt`: kinetic-energy-preserving volume
//! fluxes in flux-differencing form, Riemann fluxes at element faces, and
//! BR1 viscous terms built from lifted gradients of `(u, v, w, T)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::basis::{CartesianMesh, NodalBasis};
use crate::error::{check_len, config_err, Error, Result};
use crate::field::SolutionField;
use crate::flux::{
    euler_flux_node, riemann_flux_node, split_flux_node, viscous_flux, NodeState, PrimGradient,
    RiemannVariant,
};
use crate::gas::{GasModel, NVAR};

/// Dynamic viscosity used in the viscous flux.
#[derive(Debug, Clone, Copy)]
pub enum Viscosity<'a> {
    Uniform(f64),
    /// One value per node, same ordering as the field.
    PerNode(&'a [f64]),
}

#[derive(Debug, Clone)]
pub struct DgOperator {
    mesh: CartesianMesh,
    basis: NodalBasis,
    gas: GasModel,
    riemann: RiemannVariant,
    np: usize,
    npe: usize,
    /// Metric factor `2 / h`.
    scale: f64,
    inv_w_end: f64,
    states: Vec<NodeState>,
    grads: Vec<PrimGradient>,
    scratch_in: Vec<f64>,
    scratch_out: Vec<f64>,
    visc: [Vec<f64>; 3],
}

impl DgOperator {
    pub fn new(mesh: CartesianMesh, basis: NodalBasis, gas: GasModel, riemann: RiemannVariant) -> Result<Self> {
        gas.validate()?;
        let np = basis.np();
        if np > 16 {
            return Err(config_err("polynomial degree above 15 is not supported"));
        }
        let npe = np * np * np;
        let n = mesh.num_elements() * npe;
        let inv_w_end = 1.0 / basis.weights[0];
        let dummy = NodeState {
            u: [1.0, 0.0, 0.0, 0.0, 1.0],
            rho: 1.0,
            vel: [0.0; 3],
            p: 1.0,
            h: 2.0,
        };
        Ok(Self {
            scale: 2.0 / mesh.h(),
            mesh,
            basis,
            gas,
            riemann,
            np,
            npe,
            inv_w_end,
            states: vec![dummy; n],
            grads: vec![[[0.0; 3]; 4]; n],
            scratch_in: vec![0.0; n * NVAR],
            scratch_out: vec![0.0; n * NVAR],
            visc: [vec![0.0; n * NVAR], vec![0.0; n * NVAR], vec![0.0; n * NVAR]],
        })
    }

    pub fn for_field(field: &SolutionField, gas: GasModel, riemann: RiemannVariant) -> Result<Self> {
        Self::new(field.mesh, field.basis.clone(), gas, riemann)
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn basis(&self) -> &NodalBasis {
        &self.basis
    }

    pub fn gas(&self) -> &GasModel {
        &self.gas
    }

    pub fn riemann(&self) -> RiemannVariant {
        self.riemann
    }

    pub fn num_nodes(&self) -> usize {
        self.states.len()
    }

    pub fn field_len(&self) -> usize {
        self.states.len() * NVAR
    }

    /// Node states of the last loaded field.
    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    /// Lifted gradients of `(u, v, w, T)` of the last loaded field.
    pub fn gradients(&self) -> &[PrimGradient] {
        &self.grads
    }

    /// Stores the derived node states and BR1-lifted gradients of `data`.
    pub fn load(&mut self, data: &[f64]) -> Result<()> {
        check_len(self.field_len(), data.len())?;
        for (n, (st, u)) in self.states.iter_mut().zip(data.chunks_exact(NVAR)).enumerate() {
            let u = [u[0], u[1], u[2], u[3], u[4]];
            *st = NodeState::new(u, &self.gas).ok_or(Error::InvalidState {
                element: n / self.npe,
                node: n % self.npe,
                rho: u[0],
                p: self.gas.pressure(&u),
            })?;
        }
        self.lift_gradients();
        Ok(())
    }

    fn lift_gradients(&mut self) {
        let mut src = core::mem::take(&mut self.scratch_in);
        let mut dst = core::mem::take(&mut self.scratch_out);
        let r = self.gas.gas_constant;
        for (n, st) in self.states.iter().enumerate() {
            src[n * 4] = st.vel[0];
            src[n * 4 + 1] = st.vel[1];
            src[n * 4 + 2] = st.vel[2];
            src[n * 4 + 3] = st.p / (st.rho * r);
        }
        let m = self.states.len() * 4;
        for dir in 0..3 {
            dst[..m].iter_mut().for_each(|v| *v = 0.0);
            self.add_central_derivative::<4>(&src[..m], dir, 1.0, &mut dst[..m]);
            for (g, d) in self.grads.iter_mut().zip(dst[..m].chunks_exact(4)) {
                for v in 0..4 {
                    g[v][dir] = d[v];
                }
            }
        }
        self.scratch_in = src;
        self.scratch_out = dst;
    }

    /// `out += factor * d/dx_dir (src)` with central interface values (BR1 strong form).
    fn add_central_derivative<const NC: usize>(&self, src: &[f64], dir: usize, factor: f64, out: &mut [f64]) {
        let np = self.np;
        let d = &self.basis.diff.data;
        let (sd, sa, sb) = strides(np, dir);
        let s = self.scale * factor;
        let lift = 0.5 * s * self.inv_w_end;
        let mut line = [[0.0; NC]; 16];
        for e in 0..self.mesh.num_elements() {
            let nbr = self.mesh.neighbor(e, dir, true);
            for b in 0..np {
                for a in 0..np {
                    let base = e * self.npe + a * sa + b * sb;
                    for (m, l) in line.iter_mut().enumerate().take(np) {
                        let im = (base + m * sd) * NC;
                        l.copy_from_slice(&src[im..im + NC]);
                    }
                    for i in 0..np {
                        let mut acc = [0.0; NC];
                        for (dim, l) in d[i * np..(i + 1) * np].iter().zip(&line) {
                            for c in 0..NC {
                                acc[c] += dim * l[c];
                            }
                        }
                        let oi = (base + i * sd) * NC;
                        for (o, a) in out[oi..oi + NC].iter_mut().zip(acc) {
                            *o += s * a;
                        }
                    }
                    // face shared with the forward neighbour
                    let l = (base + (np - 1) * sd) * NC;
                    let r = (nbr * self.npe + a * sa + b * sb) * NC;
                    for c in 0..NC {
                        let jump = src[r + c] - line[np - 1][c];
                        out[l + c] += lift * jump;
                        out[r + c] += lift * jump;
                    }
                }
            }
        }
    }

    /// Adds the convective part of the tendency for the loaded field.
    pub fn add_inviscid(&self, out: &mut [f64]) {
        let np = self.np;
        let d = &self.basis.diff.data;
        let two_s = 2.0 * self.scale;
        let surf = self.scale * self.inv_w_end;
        let mut line: [NodeState; 16] = [self.states[0]; 16];
        debug_assert!(np <= 16);
        for dir in 0..3 {
            let (sd, sa, sb) = strides(np, dir);
            for e in 0..self.mesh.num_elements() {
                let nbr = self.mesh.neighbor(e, dir, true);
                for b in 0..np {
                    for a in 0..np {
                        let base = e * self.npe + a * sa + b * sb;
                        for s in 0..np {
                            line[s] = self.states[base + s * sd];
                        }
                        for i in 0..np {
                            let oi = (base + i * sd) * NVAR;
                            let dii = d[i * np + i];
                            if dii != 0.0 {
                                let f = euler_flux_node(&line[i], dir);
                                for v in 0..NVAR {
                                    out[oi + v] -= two_s * dii * f[v];
                                }
                            }
                            for m in (i + 1)..np {
                                let f = split_flux_node(&line[i], &line[m], dir);
                                let om = (base + m * sd) * NVAR;
                                let cim = two_s * d[i * np + m];
                                let cmi = two_s * d[m * np + i];
                                for v in 0..NVAR {
                                    out[oi + v] -= cim * f[v];
                                    out[om + v] -= cmi * f[v];
                                }
                            }
                        }
                        let l = &line[np - 1];
                        let rn = nbr * self.npe + a * sa + b * sb;
                        let r = &self.states[rn];
                        let fs = riemann_flux_node(l, r, dir, self.riemann, &self.gas);
                        let fl = euler_flux_node(l, dir);
                        let fr = euler_flux_node(r, dir);
                        let ol = (base + (np - 1) * sd) * NVAR;
                        let or = rn * NVAR;
                        for v in 0..NVAR {
                            out[ol + v] -= surf * (fs[v] - fl[v]);
                            out[or + v] += surf * (fs[v] - fr[v]);
                        }
                    }
                }
            }
        }
    }

    /// Adds the viscous part of the tendency for the loaded field.
    pub fn add_viscous(&mut self, mu: Viscosity<'_>, out: &mut [f64]) -> Result<()> {
        if let Viscosity::PerNode(m) = mu {
            check_len(self.states.len(), m.len())?;
        }
        let mut bufs = core::mem::take(&mut self.visc);
        for (n, (st, g)) in self.states.iter().zip(&self.grads).enumerate() {
            let mu_n = match mu {
                Viscosity::Uniform(v) => v,
                Viscosity::PerNode(m) => m[n],
            };
            let f = viscous_flux(&st.vel, g, mu_n, &self.gas);
            for (buf, fd) in bufs.iter_mut().zip(&f) {
                buf[n * NVAR..(n + 1) * NVAR].copy_from_slice(fd);
            }
        }
        for (dir, buf) in bufs.iter().enumerate() {
            self.add_central_derivative::<NVAR>(buf, dir, 1.0, out);
        }
        self.visc = bufs;
        Ok(())
    }

    /// Full tendency with the molecular viscosity of the gas model.
    pub fn tendency(&mut self, data: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.field_len(), out.len())?;
        self.load(data)?;
        out.iter_mut().for_each(|v| *v = 0.0);
        self.add_inviscid(out);
        if self.gas.mu0 > 0.0 {
            self.add_viscous(Viscosity::Uniform(self.gas.mu0), out)?;
        }
        Ok(())
    }
}

/// (stride along `dir`, stride of first transverse index, stride of second).
#[inline]
fn strides(np: usize, dir: usize) -> (usize, usize, usize) {
    match dir {
        0 => (1, np, np * np),
        1 => (np, 1, np * np),
        _ => (np * np, 1, np),
    }
}

/// Tendency field of `field` under the given interface flux.
pub fn spatial_operator(field: &SolutionField, gas: &GasModel, riemann: RiemannVariant) -> Result<SolutionField> {
    let mut op = DgOperator::for_field(field, *gas, riemann)?;
    let mut out = SolutionField::zeros(field.mesh, field.basis.clone());
    out.time = field.time;
    op.tendency(&field.data, &mut out.data)?;
    Ok(out)
}

/// BR1-lifted gradients of `(u, v, w, T)` at every node.
pub fn br1_gradients(field: &SolutionField, gas: &GasModel) -> Result<Vec<PrimGradient>> {
    let mut op = DgOperator::for_field(field, *gas, RiemannVariant::Roe)?;
    op.load(&field.data)?;
    Ok(op.grads)
}

/// Largest stable fixed step for explicit integration at the given CFL number.
pub fn stable_timestep(field: &SolutionField, gas: &GasModel, cfl: f64) -> Result<f64> {
    if !(cfl > 0.0) {
        return Err(config_err("CFL number must be positive"));
    }
    let h = field.mesh.h();
    let np = field.basis.np() as f64;
    let npe = field.nodes_per_element();
    let mut dt = f64::INFINITY;
    for n in 0..field.num_nodes() {
        let u = field.node(n);
        let pr = gas.primitive(&u).ok_or(Error::InvalidState {
            element: n / npe,
            node: n % npe,
            rho: u[0],
            p: gas.pressure(&u),
        })?;
        let speed = libm::sqrt(pr.vel[0] * pr.vel[0] + pr.vel[1] * pr.vel[1] + pr.vel[2] * pr.vel[2])
            + gas.sound_speed(pr.rho, pr.p);
        if !speed.is_finite() {
            return Err(config_err("non-finite wave speed"));
        }
        dt = dt.min(h / (np * np * speed));
        if gas.mu0 > 0.0 {
            dt = dt.min(h * h / (np * np * np * np * gas.mu0 / pr.rho));
        }
    }
    Ok(cfl * dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn setup(ne: usize, n: usize) -> (CartesianMesh, NodalBasis) {
        (CartesianMesh::periodic_box(ne).unwrap(), NodalBasis::new(n).unwrap())
    }

    fn smooth_field(ne: usize, n: usize, gas: &GasModel) -> SolutionField {
        let (mesh, basis) = setup(ne, n);
        let mut f = SolutionField::zeros(mesh, basis);
        let xs = f.coordinates();
        for (node, x) in f.data.chunks_exact_mut(NVAR).zip(xs) {
            let rho = 1.0 + 0.1 * libm::sin(x[0]) * libm::cos(x[2]);
            let vel = [
                0.3 * libm::sin(x[0]) * libm::cos(x[1]),
                -0.3 * libm::cos(x[0]) * libm::sin(x[1]),
                0.1 * libm::sin(x[2] + x[1]),
            ];
            let p = 10.0 + 0.5 * libm::cos(x[1]);
            node.copy_from_slice(&gas.conservative(rho, vel, p));
        }
        f
    }

    #[test]
    fn free_stream_preservation() {
        let gas = GasModel { mu0: 0.01, ..GasModel::default() };
        let (mesh, basis) = setup(3, 4);
        let f = SolutionField::uniform(mesh, basis, gas.conservative(1.2, [0.3, -0.2, 0.5], 2.0));
        for variant in [RiemannVariant::RoeLowDiss, RiemannVariant::Roe, RiemannVariant::Llf] {
            let t = spatial_operator(&f, &gas, variant).unwrap();
            let max = t.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(max < 1e-12, "{variant:?}: {max}");
        }
    }

    #[test]
    fn discrete_conservation() {
        let gas = GasModel { mu0: 0.02, ..GasModel::default() };
        let f = smooth_field(3, 3, &gas);
        let w = f.basis.weights3();
        for variant in [RiemannVariant::RoeLowDiss, RiemannVariant::Llf] {
            let t = spatial_operator(&f, &gas, variant).unwrap();
            let mut total = [0.0; NVAR];
            for (n, node) in t.data.chunks_exact(NVAR).enumerate() {
                for v in 0..NVAR {
                    total[v] += w[n % w.len()] * node[v];
                }
            }
            for v in 0..NVAR {
                assert!(total[v].abs() < 1e-11, "{variant:?} var {v}: {}", total[v]);
            }
        }
    }

    #[test]
    fn gradients_vanish_for_constant_field() {
        let gas = GasModel::default();
        let (mesh, basis) = setup(2, 3);
        let f = SolutionField::uniform(mesh, basis, gas.conservative(1.0, [0.4, 0.1, -0.2], 3.0));
        let g = br1_gradients(&f, &gas).unwrap();
        assert!(g.iter().flatten().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradients_exact_for_continuous_piecewise_linear() {
        // tent profile u = x on [0, π], 2π - x on [π, 2π]: continuous and periodic
        let gas = GasModel::default();
        let (mesh, basis) = setup(2, 3);
        let mut f = SolutionField::zeros(mesh, basis);
        let xs = f.coordinates();
        for (node, x) in f.data.chunks_exact_mut(NVAR).zip(&xs) {
            let u = if x[0] <= PI { x[0] } else { 2.0 * PI - x[0] };
            node.copy_from_slice(&gas.conservative(1.0, [0.1 * u, 0.0, 0.0], 5.0));
        }
        let g = br1_gradients(&f, &gas).unwrap();
        let npe = f.nodes_per_element();
        for (n, gn) in g.iter().enumerate() {
            let ex = f.mesh.element_coords(n / npe)[0];
            let slope = if ex == 0 { 0.1 } else { -0.1 };
            assert!((gn[0][0] - slope).abs() < 1e-12, "node {n}: {}", gn[0][0]);
            assert!(gn[0][1].abs() < 1e-12 && gn[1][0].abs() < 1e-12);
        }
    }

    fn sine_gradient_error(ne: usize, n: usize) -> f64 {
        let gas = GasModel::default();
        let (mesh, basis) = setup(ne, n);
        let mut f = SolutionField::zeros(mesh, basis);
        let xs = f.coordinates();
        for (node, x) in f.data.chunks_exact_mut(NVAR).zip(&xs) {
            node.copy_from_slice(&gas.conservative(1.0, [0.1 * libm::sin(x[0]), 0.0, 0.0], 5.0));
        }
        let g = br1_gradients(&f, &gas).unwrap();
        let w = f.basis.weights3();
        let jac = (f.mesh.h() / 2.0).powi(3);
        let mut err = 0.0;
        for (nidx, (gn, x)) in g.iter().zip(&xs).enumerate() {
            let e = gn[0][0] - 0.1 * libm::cos(x[0]);
            err += w[nidx % w.len()] * jac * e * e;
        }
        libm::sqrt(err)
    }

    #[test]
    fn gradient_convergence_order() {
        let n = 3;
        let e1 = sine_gradient_error(4, n);
        let e2 = sine_gradient_error(8, n);
        let rate = libm::log2(e1 / e2);
        // BR1 lifting of smooth data converges at order N (one lost to differentiation) or better
        assert!(rate > n as f64 - 0.3, "rate {rate}");
    }

    #[test]
    fn timestep_scaling() {
        let gas = GasModel::default();
        let (mesh, basis) = setup(2, 3);
        let f = SolutionField::uniform(mesh, basis.clone(), gas.conservative(1.0, [0.0; 3], 1.0 / 1.4));
        let dt1 = stable_timestep(&f, &gas, 0.2).unwrap();
        let dt2 = stable_timestep(&f, &gas, 0.4).unwrap();
        assert!((dt2 - 2.0 * dt1).abs() < 1e-15);
        // quiescent gas with c = 1
        assert!((dt1 - 0.2 * PI / 16.0).abs() < 1e-14);
        let fine = SolutionField::uniform(CartesianMesh::periodic_box(4).unwrap(), basis, f.node(0));
        let dt3 = stable_timestep(&fine, &gas, 0.2).unwrap();
        assert!((dt3 - 0.5 * dt1).abs() < 1e-15);
        assert!(stable_timestep(&f, &gas, 0.0).is_err());
    }

    #[test]
    fn invalid_state_reports_location() {
        let gas = GasModel::default();
        let (mesh, basis) = setup(2, 2);
        let mut f = SolutionField::uniform(mesh, basis, gas.conservative(1.0, [0.0; 3], 1.0));
        let npe = f.nodes_per_element();
        let idx = (3 * npe + 5) * NVAR;
        f.data[idx] = -1.0;
        match spatial_operator(&f, &gas, RiemannVariant::Roe) {
            Err(Error::InvalidState { element, node, .. }) => assert_eq!((element, node), (3, 5)),
            other => panic!("{other:?}"),
        }
    }
}
