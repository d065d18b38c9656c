//! Random divergence-free initial velocity with a prescribed energy spectrum
//! and the matching compressible initial state.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::basis::{CartesianMesh, NodalBasis};
use crate::error::{config_err, Error, Result};
use crate::fft::{fft3, wavenumber, Complex};
use crate::field::SolutionField;
use crate::gas::{GasModel, NVAR};

/// Parameters of `E(k) = ½ a_s u0² kp⁻¹ (k/kp)^s exp(−½ s (k/kp)²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSpec {
    pub s: u32,
    pub u0_sq: f64,
    pub kp: f64,
    pub a_s: f64,
}

impl SpectrumSpec {
    /// Spectrum with `a_s` normalized so that `∫E dk = 3/2 u0²`.
    pub fn new(s: u32, u0_sq: f64, kp: f64) -> Result<Self> {
        if s < 1 || !(u0_sq > 0.0) || !(kp > 0.0) {
            return Err(config_err("spectrum needs s >= 1, u0^2 > 0 and kp > 0"));
        }
        let mut spec = Self { s, u0_sq, kp, a_s: 1.0 };
        spec.a_s = spectrum_normalization(&spec)?;
        Ok(spec)
    }
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self::new(4, 5.0, 4.0).expect("default spectrum is valid")
    }
}

pub fn chasnov_energy(k: f64, spec: &SpectrumSpec) -> f64 {
    if k <= 0.0 {
        return 0.0;
    }
    let x = k / spec.kp;
    0.5 * spec.a_s * spec.u0_sq / spec.kp * libm::pow(x, spec.s as f64) * libm::exp(-0.5 * spec.s as f64 * x * x)
}

/// `a_s` such that `∫₀^∞ E dk = 3/2 u0²`; depends on `s` only.
pub fn spectrum_normalization(spec: &SpectrumSpec) -> Result<f64> {
    let s = spec.s as f64;
    let f = |x: f64| libm::pow(x, s) * libm::exp(-0.5 * s * x * x);
    // integrand below 1e-300 beyond this point
    let upper = libm::sqrt(2.0 * 700.0 / s) + 1.0;
    let integral = adaptive_simpson(&f, 0.0, upper, 1e-15, 60)?;
    Ok(3.0 / integral)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::NoConvergence("adaptive quadrature"));
        }
        Ok(rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    // fixed panels first so a peaked integrand cannot fool the top-level estimate
    let panels = 64;
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let (lo, hi) = (a + i as f64 * width, a + (i + 1) as f64 * width);
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = width / 6.0 * (fa + 4.0 * fm + fb);
        total += rec(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, depth)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub seed: u64,
    pub mach: f64,
    /// Fourier modes per direction of the generated field.
    pub spectral_resolution: usize,
}

impl InitConfig {
    pub fn validate(&self, spec: &SpectrumSpec) -> Result<()> {
        if !(self.mach > 0.0) {
            return Err(config_err("Mach number must be positive"));
        }
        let m = self.spectral_resolution;
        if m < 2 || m % 2 != 0 || (m as f64) < 2.0 * spec.kp {
            return Err(config_err("spectral resolution must be even and at least 2 kp"));
        }
        Ok(())
    }
}

/// Fourier coefficients `û(k)` on an `m^3` grid (x fastest), `u(x) = Σ û e^{ik·x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVelocity {
    pub m: usize,
    pub coeffs: Vec<[Complex; 3]>,
}

impl SpectralVelocity {
    /// Transform of velocity samples on the uniform grid `x_j = 2π j / m`;
    /// Nyquist modes are dropped so the series is real everywhere.
    pub fn from_grid(m: usize, samples: &[[f64; 3]]) -> Self {
        let n3 = m * m * m;
        assert_eq!(samples.len(), n3, "expected m^3 samples");
        let mut coeffs = vec![[Complex::ZERO; 3]; n3];
        let mut buf = vec![Complex::ZERO; n3];
        for c in 0..3 {
            for (b, s) in buf.iter_mut().zip(samples) {
                *b = Complex::new(s[c], 0.0);
            }
            fft3(&mut buf, m, false);
            for (co, b) in coeffs.iter_mut().zip(&buf) {
                co[c] = b.scale(1.0 / n3 as f64);
            }
        }
        let mut sv = Self { m, coeffs };
        sv.zero_nyquist();
        sv
    }

    fn zero_nyquist(&mut self) {
        let m = self.m;
        for (idx, c) in self.coeffs.iter_mut().enumerate() {
            if m % 2 == 0 && [idx % m, (idx / m) % m, idx / (m * m)].contains(&(m / 2)) {
                *c = [Complex::ZERO; 3];
            }
        }
    }

    pub fn wavevector(&self, idx: usize) -> [i64; 3] {
        let m = self.m;
        [wavenumber(idx % m, m), wavenumber((idx / m) % m, m), wavenumber(idx / (m * m), m)]
    }

    /// `max |k·û(k)|` over all modes.
    pub fn max_divergence(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let k = self.wavevector(idx);
                let d = c[0].scale(k[0] as f64) + c[1].scale(k[1] as f64) + c[2].scale(k[2] as f64);
                libm::sqrt(d.norm_sqr())
            })
            .fold(0.0, f64::max)
    }

    /// Mean kinetic energy per unit volume, `½ Σ |û|²`.
    pub fn mean_energy(&self) -> f64 {
        0.5 * self
            .coeffs
            .iter()
            .map(|c| c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr())
            .sum::<f64>()
    }

    /// `½ Σ |û|²` per integer shell `round(|k|)`.
    pub fn shell_energies(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (idx, c) in self.coeffs.iter().enumerate() {
            let k = self.wavevector(idx);
            let kk = libm::sqrt((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
            let shell = libm::round(kk) as usize;
            if shell < out.len() {
                out[shell] += 0.5 * (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr());
            }
        }
        out
    }

    /// Velocity at every DG node of a `[0, 2π]^3` mesh.
    pub fn to_nodes(&self, mesh: &CartesianMesh, basis: &NodalBasis) -> Vec<[f64; 3]> {
        let comps: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let scalar: Vec<Complex> = self.coeffs.iter().map(|v| v[c]).collect();
                eval_series_on_nodes(self.m, &scalar, mesh, basis)
            })
            .collect();
        (0..comps[0].len()).map(|i| [comps[0][i], comps[1][i], comps[2][i]]).collect()
    }
}

/// Evaluates the real part of `Σ c_k e^{ik·x}` at every DG node, by separable
/// partial sums over the 1D node coordinates.
pub fn eval_series_on_nodes(m: usize, coeffs: &[Complex], mesh: &CartesianMesh, basis: &NodalBasis) -> Vec<f64> {
    let np = basis.np();
    let ne = mesh.elements_per_dir;
    let p = ne * np;
    let g: Vec<f64> = (0..p).map(|a| mesh.coord(a / np, basis.nodes[a % np])).collect();
    let phase: Vec<Complex> = (0..p)
        .flat_map(|a| (0..m).map(move |k| (a, k)))
        .map(|(a, k)| Complex::cis(wavenumber(k, m) as f64 * g[a]))
        .collect();
    let ph = |a: usize, k: usize| phase[a * m + k];
    // sum over k1: s1[(k3 * m + k2) * p + a]
    let mut s1 = vec![Complex::ZERO; m * m * p];
    for k32 in 0..m * m {
        let row = &coeffs[k32 * m..(k32 + 1) * m];
        for a in 0..p {
            let mut acc = Complex::ZERO;
            for (k1, &c) in row.iter().enumerate() {
                acc = acc + c * ph(a, k1);
            }
            s1[k32 * p + a] = acc;
        }
    }
    // sum over k2: s2[(k3 * p + b) * p + a]
    let mut s2 = vec![Complex::ZERO; m * p * p];
    for k3 in 0..m {
        for b in 0..p {
            for k2 in 0..m {
                let w = ph(b, k2);
                let src = &s1[(k3 * m + k2) * p..(k3 * m + k2 + 1) * p];
                let dst = &mut s2[(k3 * p + b) * p..(k3 * p + b + 1) * p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s * w;
                }
            }
        }
    }
    // sum over k3: grid[(c * p + b) * p + a]
    let mut grid = vec![0.0; p * p * p];
    for c in 0..p {
        for k3 in 0..m {
            let w = ph(c, k3);
            for b in 0..p {
                let src = &s2[(k3 * p + b) * p..(k3 * p + b + 1) * p];
                let dst = &mut grid[(c * p + b) * p..(c * p + b + 1) * p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s.re * w.re - s.im * w.im;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(mesh.num_elements() * np * np * np);
    for e in 0..mesh.num_elements() {
        let [ex, ey, ez] = mesh.element_coords(e);
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    out.push(grid[((ez * np + k) * p + ey * np + j) * p + ex * np + i]);
                }
            }
        }
    }
    out
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Random-phase solenoidal field whose integer-shell energies equal `E(shell)`.
pub fn rogallo_field(spec: &SpectrumSpec, config: &InitConfig) -> Result<SpectralVelocity> {
    config.validate(spec)?;
    let m = config.spectral_resolution;
    let n3 = m * m * m;
    let mut sv = SpectralVelocity {
        m,
        coeffs: vec![[Complex::ZERO; 3]; n3],
    };
    let half = (m / 2) as i64;
    let admissible = |k: [i64; 3]| k.iter().all(|&c| c.abs() < half) && k != [0, 0, 0];
    let shell_of = |k: [i64; 3]| libm::round(libm::sqrt((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)) as usize;
    let mut counts = vec![0usize; 2 * m];
    for idx in 0..n3 {
        let k = sv.wavevector(idx);
        if admissible(k) {
            counts[shell_of(k)] += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let index_of = |k: [i64; 3]| {
        let w = |c: i64| c.rem_euclid(m as i64) as usize;
        (w(k[2]) * m + w(k[1])) * m + w(k[0])
    };
    for idx in 0..n3 {
        let k = sv.wavevector(idx);
        // one representative of each ±k pair draws the phases
        let positive = k[2] > 0 || (k[2] == 0 && (k[1] > 0 || (k[1] == 0 && k[0] > 0)));
        if !admissible(k) || !positive {
            continue;
        }
        let shell = shell_of(k);
        let amp = libm::sqrt(2.0 * chasnov_energy(shell as f64, spec) / counts[shell] as f64);
        let theta1 = 2.0 * PI * uniform01(&mut rng);
        let theta2 = 2.0 * PI * uniform01(&mut rng);
        let phi = 2.0 * PI * uniform01(&mut rng);
        let alpha = Complex::cis(theta1).scale(amp * libm::cos(phi));
        let beta = Complex::cis(theta2).scale(amp * libm::sin(phi));
        let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
        let kmag = libm::sqrt(kf[0] * kf[0] + kf[1] * kf[1] + kf[2] * kf[2]);
        let k12 = libm::sqrt(kf[0] * kf[0] + kf[1] * kf[1]);
        let u = if k12 == 0.0 {
            [alpha, beta, Complex::ZERO]
        } else {
            [
                (alpha.scale(kmag * kf[1]) + beta.scale(kf[0] * kf[2])).scale(1.0 / (kmag * k12)),
                (beta.scale(kf[1] * kf[2]) - alpha.scale(kmag * kf[0])).scale(1.0 / (kmag * k12)),
                beta.scale(-k12 / kmag),
            ]
        };
        sv.coeffs[idx] = u;
        sv.coeffs[index_of([-k[0], -k[1], -k[2]])] = [u[0].conj(), u[1].conj(), u[2].conj()];
    }
    Ok(sv)
}

/// Pressure fluctuation solving `∇²p' = −ρ ∂_i u_j ∂_j u_i` spectrally on a
/// `2m` grid (the quadratic product is alias-free there), returned as Fourier
/// coefficients on that grid.
pub fn pressure_fluctuation(velocity: &SpectralVelocity, rho: f64) -> (usize, Vec<Complex>) {
    let m = velocity.m;
    let big = 2 * m;
    let n3 = big * big * big;
    let embed = |k: [i64; 3]| {
        let w = |c: i64| c.rem_euclid(big as i64) as usize;
        (w(k[2]) * big + w(k[1])) * big + w(k[0])
    };
    // grad[i][j] = ∂_j u_i on the physical 2m grid
    let mut grad = vec![vec![0.0; n3]; 9];
    let mut buf = vec![Complex::ZERO; n3];
    for i in 0..3 {
        for j in 0..3 {
            buf.iter_mut().for_each(|b| *b = Complex::ZERO);
            for (idx, c) in velocity.coeffs.iter().enumerate() {
                let k = velocity.wavevector(idx);
                buf[embed(k)] = c[i] * Complex::new(0.0, k[j] as f64);
            }
            fft3(&mut buf, big, true);
            for (g, b) in grad[i * 3 + j].iter_mut().zip(&buf) {
                *g = b.re;
            }
        }
    }
    for (n, b) in buf.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += grad[i * 3 + j][n] * grad[j * 3 + i][n];
            }
        }
        *b = Complex::new(-rho * s, 0.0);
    }
    fft3(&mut buf, big, false);
    let inv = 1.0 / n3 as f64;
    for (idx, b) in buf.iter_mut().enumerate() {
        let k = [
            wavenumber(idx % big, big),
            wavenumber((idx / big) % big, big),
            wavenumber(idx / (big * big), big),
        ];
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        let nyquist = k.iter().any(|&c| c == -(m as i64));
        *b = if k2 == 0.0 || nyquist {
            Complex::ZERO
        } else {
            b.scale(-inv / k2)
        };
    }
    (big, buf)
}

/// Compressible state with uniform density, the given velocity, and
/// `p = p̄ + p'` where `p̄` sets the peak Mach number to `config.mach`.
pub fn initialize_state(
    velocity: &SpectralVelocity,
    config: &InitConfig,
    gas: &GasModel,
    mesh: CartesianMesh,
    basis: NodalBasis,
) -> Result<SolutionField> {
    if !(config.mach > 0.0) {
        return Err(config_err("Mach number must be positive"));
    }
    let rho = 1.0;
    let mut vel = velocity.to_nodes(&mesh, &basis);
    // quadrature of the Fourier modes leaves an O(1e-7) nodal mean; remove it so
    // the discrete momentum is exactly zero
    let w = basis.weights3();
    let mut mean = [0.0; 3];
    for (i, v) in vel.iter().enumerate() {
        for c in 0..3 {
            mean[c] += w[i % w.len()] * v[c];
        }
    }
    let total_w = 8.0 * mesh.num_elements() as f64;
    for v in vel.iter_mut() {
        for c in 0..3 {
            v[c] -= mean[c] / total_w;
        }
    }
    let umax = vel
        .iter()
        .map(|v| libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
        .fold(0.0, f64::max);
    let mut field = SolutionField::zeros(mesh, basis);
    let p_mean = if umax > 0.0 {
        rho * (umax / config.mach) * (umax / config.mach) / gas.gamma
    } else {
        rho / (gas.gamma * config.mach * config.mach)
    };
    let fluct = if umax > 0.0 {
        let (big, p_hat) = pressure_fluctuation(velocity, rho);
        eval_series_on_nodes(big, &p_hat, &field.mesh, &field.basis)
    } else {
        vec![0.0; vel.len()]
    };
    let npe = field.nodes_per_element();
    for (n, (node, (v, dp))) in field.data.chunks_exact_mut(NVAR).zip(vel.iter().zip(&fluct)).enumerate() {
        let p = p_mean + dp;
        if !(p > 0.0) {
            return Err(Error::InvalidState {
                element: n / npe,
                node: n % npe,
                rho,
                p,
            });
        }
        node.copy_from_slice(&gas.conservative(rho, *v, p));
    }
    Ok(field)
}
