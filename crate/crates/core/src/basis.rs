//! Legendre–Gauss–Lobatto nodal basis and the periodic Cartesian mesh.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{config_err, Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let (mut d_prev, mut d) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        let d_next = d_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// LGL nodes (roots of `(1 - x^2) P'_N`) and quadrature weights for degree `n`.
pub fn lgl_nodes_weights(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(config_err("LGL degree must be at least 1"));
    }
    let np = n + 1;
    let mut x: Vec<f64> = (0..np).map(|j| -libm::cos(PI * j as f64 / n as f64)).collect();
    // Newton iteration on x P_N - P_{N-1} = 0, which shares its roots with (1 - x^2) P'_N.
    for xi in x.iter_mut() {
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (pn, _) = legendre(n, *xi);
            let (pn1, _) = legendre(n - 1, *xi);
            let dx = (*xi * pn - pn1) / (np as f64 * pn);
            *xi -= dx;
            if dx.abs() <= NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence("LGL Newton iteration"));
        }
    }
    // Symmetrize so that x_j = -x_{N-j} holds bitwise.
    for j in 0..np / 2 {
        let s = 0.5 * (x[np - 1 - j] - x[j]);
        x[j] = -s;
        x[np - 1 - j] = s;
    }
    if np % 2 == 1 {
        x[n / 2] = 0.0;
    }
    x[0] = -1.0;
    x[n] = 1.0;
    let nn1 = (n * np) as f64;
    let w = x
        .iter()
        .map(|&xi| {
            let (pn, _) = legendre(n, xi);
            2.0 / (nn1 * pn * pn)
        })
        .collect();
    Ok((x, w))
}

/// Barycentric weights of a node set; fails on duplicate nodes.
pub fn barycentric_weights(nodes: &[f64]) -> Result<Vec<f64>> {
    let n = nodes.len();
    let mut w = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                let d = nodes[j] - nodes[k];
                if d == 0.0 {
                    return Err(config_err("duplicate interpolation nodes"));
                }
                w[j] /= d;
            }
        }
    }
    Ok(w)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }
}

/// `D[i][j] = l'_j(x_i)` for the Lagrange polynomials on `nodes`.
pub fn lagrange_diff_matrix(nodes: &[f64]) -> Result<Matrix> {
    let n = nodes.len();
    let bw = barycentric_weights(nodes)?;
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = bw[j] / bw[i] / (nodes[i] - nodes[j]);
                d.set(i, j, v);
                diag -= v;
            }
        }
        // negative-sum trick: rows sum to zero exactly
        d.set(i, i, diag);
    }
    Ok(d)
}

/// Row `i` holds every Lagrange basis function of `src` evaluated at `tgt[i]`.
pub fn interp_matrix(src: &[f64], tgt: &[f64]) -> Result<Matrix> {
    let n = src.len();
    let bw = barycentric_weights(src)?;
    let mut m = Matrix::zeros(tgt.len(), n);
    for (r, &x) in tgt.iter().enumerate() {
        if let Some(hit) = src.iter().position(|&s| s == x) {
            m.set(r, hit, 1.0);
            continue;
        }
        let terms: Vec<f64> = (0..n).map(|j| bw[j] / (x - src[j])).collect();
        let denom: f64 = terms.iter().sum();
        for j in 0..n {
            m.set(r, j, terms[j] / denom);
        }
    }
    Ok(m)
}

/// Nodal LGL basis of one polynomial degree.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalBasis {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub diff: Matrix,
}

impl NodalBasis {
    pub fn new(degree: usize) -> Result<Self> {
        let (nodes, weights) = lgl_nodes_weights(degree)?;
        let diff = lagrange_diff_matrix(&nodes)?;
        Ok(Self {
            degree,
            nodes,
            weights,
            diff,
        })
    }

    /// Points per direction, `N + 1`.
    #[inline]
    pub fn np(&self) -> usize {
        self.degree + 1
    }

    /// Tensor-product quadrature weights, x index fastest.
    pub fn weights3(&self) -> Vec<f64> {
        let np = self.np();
        let mut w = Vec::with_capacity(np * np * np);
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    w.push(self.weights[i] * self.weights[j] * self.weights[k]);
                }
            }
        }
        w
    }
}

/// Periodic cube `[0, L]^3` split into `n^3` equal cubical elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianMesh {
    pub elements_per_dir: usize,
    pub domain_length: f64,
}

impl CartesianMesh {
    pub fn new(elements_per_dir: usize, domain_length: f64) -> Result<Self> {
        if elements_per_dir == 0 {
            return Err(config_err("mesh needs at least one element per direction"));
        }
        if !(domain_length > 0.0) {
            return Err(config_err("domain length must be positive"));
        }
        Ok(Self {
            elements_per_dir,
            domain_length,
        })
    }

    /// The `[0, 2π]^3` box.
    pub fn periodic_box(elements_per_dir: usize) -> Result<Self> {
        Self::new(elements_per_dir, 2.0 * PI)
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.domain_length / self.elements_per_dir as f64
    }

    #[inline]
    pub fn num_elements(&self) -> usize {
        self.elements_per_dir.pow(3)
    }

    #[inline]
    pub fn element_index(&self, ex: usize, ey: usize, ez: usize) -> usize {
        (ez * self.elements_per_dir + ey) * self.elements_per_dir + ex
    }

    #[inline]
    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        let n = self.elements_per_dir;
        [e % n, (e / n) % n, e / (n * n)]
    }

    /// Periodic neighbour of element `e` along `dir` (`+1` or `-1` step).
    #[inline]
    pub fn neighbor(&self, e: usize, dir: usize, forward: bool) -> usize {
        let n = self.elements_per_dir;
        let mut c = self.element_coords(e);
        c[dir] = if forward { (c[dir] + 1) % n } else { (c[dir] + n - 1) % n };
        self.element_index(c[0], c[1], c[2])
    }

    /// Physical coordinate of reference point `xi` in element slot `index` along one direction.
    #[inline]
    pub fn coord(&self, index: usize, xi: f64) -> f64 {
        (index as f64 + 0.5 * (xi + 1.0)) * self.h()
    }
}
