//! Correlation diagnostics, kinetic energy, shell spectra and decay fits.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::basis::interp_matrix;
use crate::error::{check_len, config_err, Result};
use crate::fft::{fft3, wavenumber, Complex};
use crate::field::SolutionField;
use crate::gas::NVAR;

/// Centered cross-correlation coefficient; `None` when either input has zero variance.
pub fn cross_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "cross_correlation needs equal lengths");
    let n = a.len();
    if n < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb, mut raw_a, mut raw_b) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
        raw_a += x * x;
        raw_b += y * y;
    }
    // variance indistinguishable from centering round-off counts as zero
    let tiny = 1e-26;
    if saa <= tiny * raw_a || sbb <= tiny * raw_b || saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Per-component correlations over all sites, the inner cube `[1, p-2]^3`,
/// and the surface shell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationReport {
    pub all: [Option<f64>; 3],
    pub inner: [Option<f64>; 3],
    pub surface: [Option<f64>; 3],
}

#[inline]
pub fn is_inner(p: usize, site: usize) -> bool {
    let (i, j, k) = (site % p, (site / p) % p, site / (p * p));
    let inside = |c: usize| c >= 1 && c + 2 <= p;
    inside(i) && inside(j) && inside(k)
}

/// `pred` and `label` hold any number of `(3, p, p, p)` blocks back to back.
pub fn cc_inner_surface(pred: &[f64], label: &[f64], p: usize) -> Result<CorrelationReport> {
    check_len(label.len(), pred.len())?;
    let block = 3 * p * p * p;
    if p == 0 || pred.len() % block != 0 {
        return Err(config_err("prediction length is not a multiple of 3 p^3"));
    }
    let p3 = p * p * p;
    let mut rep = CorrelationReport {
        all: [None; 3],
        inner: [None; 3],
        surface: [None; 3],
    };
    for c in 0..3 {
        let mut sets: [(Vec<f64>, Vec<f64>); 3] = Default::default();
        for (pb, lb) in pred.chunks_exact(block).zip(label.chunks_exact(block)) {
            for s in 0..p3 {
                let (x, y) = (pb[c * p3 + s], lb[c * p3 + s]);
                sets[0].0.push(x);
                sets[0].1.push(y);
                let part = if is_inner(p, s) { 1 } else { 2 };
                sets[part].0.push(x);
                sets[part].1.push(y);
            }
        }
        rep.all[c] = cross_correlation(&sets[0].0, &sets[0].1);
        rep.inner[c] = cross_correlation(&sets[1].0, &sets[1].1);
        rep.surface[c] = cross_correlation(&sets[2].0, &sets[2].1);
    }
    Ok(rep)
}

/// `∫ ½ ρ |u|² dΩ` by LGL quadrature.
pub fn kinetic_energy(field: &SolutionField) -> f64 {
    let w = field.basis.weights3();
    let jac = libm::pow(field.mesh.h() / 2.0, 3.0);
    let mut ke = 0.0;
    for (i, u) in field.data.chunks_exact(NVAR).enumerate() {
        ke += w[i % w.len()] * 0.5 * (u[1] * u[1] + u[2] * u[2] + u[3] * u[3]) / u[0];
    }
    ke * jac
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSeries {
    pub time: f64,
    pub resample_n: usize,
    /// `energies[k]` is the energy in shell `[k - ½, k + ½)`.
    pub energies: Vec<f64>,
}

impl SpectrumSeries {
    pub fn total(&self) -> f64 {
        self.energies.iter().sum()
    }
}

/// Velocity sampled at `x_j = 2π j / n` in each direction by evaluating the DG polynomials.
pub fn resample_velocity(field: &SolutionField, n: usize) -> Result<Vec<[f64; 3]>> {
    let mesh = &field.mesh;
    let np = field.basis.np();
    let ne = mesh.elements_per_dir;
    let h = mesh.h();
    // element and interpolation row for every uniform coordinate
    let mut elem = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for j in 0..n {
        let x = mesh.domain_length * j as f64 / n as f64;
        let e = ((x / h) as usize).min(ne - 1);
        let xi = (2.0 * (x - e as f64 * h) / h - 1.0).clamp(-1.0, 1.0);
        elem.push(e);
        rows.push(interp_matrix(&field.basis.nodes, &[xi])?.data);
    }
    let vel = field.velocities();
    let npe = np * np * np;
    let mut out = vec![[0.0; 3]; n * n * n];
    for c in 0..n {
        for b in 0..n {
            for a in 0..n {
                let e = mesh.element_index(elem[a], elem[b], elem[c]);
                let (la, lb, lc) = (&rows[a], &rows[b], &rows[c]);
                let base = e * npe;
                let mut acc = [0.0; 3];
                for k in 0..np {
                    for j in 0..np {
                        let w = lc[k] * lb[j];
                        for i in 0..np {
                            let wi = w * la[i];
                            let v = vel[base + (k * np + j) * np + i];
                            acc[0] += wi * v[0];
                            acc[1] += wi * v[1];
                            acc[2] += wi * v[2];
                        }
                    }
                }
                out[(c * n + b) * n + a] = acc;
            }
        }
    }
    Ok(out)
}

/// Shell-summed spectrum of the velocity resampled on an `n^3` uniform grid,
/// weighted by the mean density; `Σ E(k)` equals the mean kinetic energy of the
/// resampled field.
pub fn energy_spectrum(field: &SolutionField, resample_n: usize) -> Result<SpectrumSeries> {
    if resample_n < 2 {
        return Err(config_err("resample resolution must be at least 2"));
    }
    if resample_n < 2 * field.mesh.elements_per_dir * field.basis.np() {
        log::warn!("spectrum resample resolution {resample_n} is below twice the nodal resolution");
    }
    let rho_mean = field.data.iter().step_by(NVAR).sum::<f64>() / field.num_nodes() as f64;
    let vel = resample_velocity(field, resample_n)?;
    Ok(spectrum_of_grid(&vel, resample_n, rho_mean, field.time))
}

pub fn spectrum_of_grid(vel: &[[f64; 3]], n: usize, rho_mean: f64, time: f64) -> SpectrumSeries {
    let n3 = n * n * n;
    let max_shell = libm::ceil(libm::sqrt(3.0) * (n / 2) as f64) as usize + 1;
    let mut energies = vec![0.0; max_shell + 1];
    let mut buf = vec![Complex::ZERO; n3];
    let norm = 1.0 / (n3 as f64 * n3 as f64);
    for c in 0..3 {
        for (b, v) in buf.iter_mut().zip(vel) {
            *b = Complex::new(v[c], 0.0);
        }
        fft3(&mut buf, n, false);
        for (idx, b) in buf.iter().enumerate() {
            let k = [wavenumber(idx % n, n), wavenumber((idx / n) % n, n), wavenumber(idx / (n * n), n)];
            let kk = libm::sqrt((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
            let shell = libm::floor(kk + 0.5) as usize;
            energies[shell] += 0.5 * rho_mean * b.norm_sqr() * norm;
        }
    }
    SpectrumSeries {
        time,
        resample_n: n,
        energies,
    }
}

/// Mean kinetic energy `½ ρ̄ <|u|²>` of uniform-grid samples, the Parseval counterpart of a spectrum.
pub fn grid_mean_energy(vel: &[[f64; 3]], rho_mean: f64) -> f64 {
    0.5 * rho_mean * vel.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum::<f64>() / vel.len() as f64
}

/// Volume of the `[0, 2π]^3` box, converting mean energies to integrals.
pub const BOX_VOLUME: f64 = 8.0 * PI * PI * PI;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyTrace {
    pub points: Vec<(f64, f64)>,
}

impl EnergyTrace {
    /// Appends a sample; times must increase strictly.
    pub fn push(&mut self, time: f64, energy: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if !(time > last) {
                return Err(config_err("energy trace times must increase strictly"));
            }
        }
        self.points.push((time, energy));
        Ok(())
    }

    /// Linear interpolation in time; clamps outside the sampled range.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let pts = &self.points;
        let first = pts.first()?;
        if t <= first.0 {
            return Some(first.1);
        }
        for w in pts.windows(2) {
            let ((t0, e0), (t1, e1)) = (w[0], w[1]);
            if t <= t1 {
                return Some(e0 + (e1 - e0) * (t - t0) / (t1 - t0));
            }
        }
        pts.last().map(|p| p.1)
    }
}

/// Least-squares slope of `log E` against `log t` over samples with `t` in `[t0, t1]`.
pub fn fit_decay_exponent(trace: &EnergyTrace, window: (f64, f64)) -> Result<f64> {
    let mut pts = Vec::new();
    for &(t, e) in &trace.points {
        if t >= window.0 && t <= window.1 {
            if !(e > 0.0) || !(t > 0.0) {
                return Err(config_err("decay fit needs positive times and energies"));
            }
            pts.push((libm::log(t), libm::log(e)));
        }
    }
    if pts.len() < 3 {
        return Err(config_err("decay fit needs at least three samples in the window"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(config_err("decay fit window has a single distinct time"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{CartesianMesh, NodalBasis};
    use crate::gas::GasModel;

    #[test]
    fn correlation_hand_values() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((cross_correlation(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!((cross_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((cross_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(cross_correlation(&a, &[0.3; 4]).is_none());
        assert!(cross_correlation(&[1.0], &[2.0]).is_none());
    }

    #[test]
    fn inner_surface_partition() {
        let p = 6;
        let inner = (0..p * p * p).filter(|&s| is_inner(p, s)).count();
        assert_eq!(inner, 64);
        assert_eq!(p * p * p - inner, 152);
        let x: Vec<f64> = (0..3 * 216).map(|i| libm::sin(i as f64 * 0.7)).collect();
        let rep = cc_inner_surface(&x, &x, p).unwrap();
        for c in 0..3 {
            for v in [rep.all[c], rep.inner[c], rep.surface[c]] {
                assert!((v.unwrap() - 1.0).abs() < 1e-14);
            }
        }
        let small: Vec<f64> = (0..3 * 8).map(|i| i as f64).collect();
        assert!(cc_inner_surface(&small, &small, 2).unwrap().inner[0].is_none());
    }

    #[test]
    fn kinetic_energy_of_uniform_flow() {
        let gas = GasModel::default();
        let mesh = CartesianMesh::periodic_box(2).unwrap();
        let f = SolutionField::uniform(mesh, NodalBasis::new(3).unwrap(), gas.conservative(1.0, [1.0, 0.0, 0.0], 1.0));
        assert!((kinetic_energy(&f) - 0.5 * BOX_VOLUME).abs() < 1e-11);
        let q = SolutionField::uniform(mesh, NodalBasis::new(3).unwrap(), gas.conservative(1.0, [0.0; 3], 1.0));
        assert_eq!(kinetic_energy(&q), 0.0);
    }

    #[test]
    fn decay_exponent_of_power_law() {
        let mut tr = EnergyTrace::default();
        for i in 0..11 {
            let t = 1.0 + 0.1 * i as f64;
            tr.push(t, 3.0 * libm::pow(t, -2.2)).unwrap();
        }
        assert!((fit_decay_exponent(&tr, (1.0, 2.0)).unwrap() + 2.2).abs() < 1e-8);
        let mut flat = EnergyTrace::default();
        for i in 1..5 {
            flat.push(i as f64, 2.0).unwrap();
        }
        assert!(fit_decay_exponent(&flat, (0.0, 10.0)).unwrap().abs() < 1e-15);
        assert!(flat.push(4.0, 1.0).is_err());
        let mut bad = EnergyTrace::default();
        for i in 1..5 {
            bad.push(i as f64, if i == 2 { 0.0 } else { 1.0 }).unwrap();
        }
        assert!(fit_decay_exponent(&bad, (0.0, 10.0)).is_err());
    }
}
