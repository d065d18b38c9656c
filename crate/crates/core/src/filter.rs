//! DNS-to-LES projection, exact closure terms and training-sample assembly.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::basis::{interp_matrix, legendre, lgl_nodes_weights, CartesianMesh, Matrix, NodalBasis};
use crate::dgsem::DgOperator;
use crate::error::{check_len, config_err, Error, Result};
use crate::field::SolutionField;
use crate::gas::NVAR;
use crate::metrics::cross_correlation;

/// Nested DNS/LES discretizations.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// DNS elements per LES element per direction.
    pub ratio: usize,
    pub n_dns: usize,
    pub n_les: usize,
    pub les_mesh: CartesianMesh,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratio < 2 {
            return Err(config_err("coarsening ratio must be at least 2"));
        }
        if self.n_les < 1 || self.n_dns < 1 {
            return Err(config_err("polynomial degrees must be at least 1"));
        }
        if self.n_les + 1 > self.ratio * (self.n_dns + 1) {
            return Err(config_err("LES element has more nodes per direction than the DNS it covers"));
        }
        Ok(())
    }

    pub fn dns_mesh(&self) -> Result<CartesianMesh> {
        CartesianMesh::new(self.les_mesh.elements_per_dir * self.ratio, self.les_mesh.domain_length)
    }

    /// Rejects a DNS field that is not nested inside the LES mesh.
    pub fn check_nested(&self, dns: &SolutionField) -> Result<()> {
        self.validate()?;
        let ok = dns.mesh.elements_per_dir == self.ratio * self.les_mesh.elements_per_dir
            && dns.basis.degree == self.n_dns
            && (dns.mesh.domain_length - self.les_mesh.domain_length).abs() < 1e-12;
        if !ok {
            return Err(config_err("DNS mesh is not nested in the LES mesh"));
        }
        Ok(())
    }
}

/// L2 projection from the piecewise DNS polynomials onto one LES element.
#[derive(Debug, Clone)]
pub struct Projector {
    cfg: FilterConfig,
    les_basis: NodalBasis,
    /// `(N_les+1) × ratio·(N_dns+1)` one-dimensional projection.
    a: Matrix,
}

impl Projector {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        let les_basis = NodalBasis::new(cfg.n_les)?;
        let dns_basis = NodalBasis::new(cfg.n_dns)?;
        // q + 1 LGL points integrate degree 2q - 1 >= N_dns + N_les exactly
        let q = (cfg.n_dns + cfg.n_les + 2).div_ceil(2);
        let (eta, wq) = lgl_nodes_weights(q)?;
        let to_quad = interp_matrix(&dns_basis.nodes, &eta)?;
        let (npl, npd, m) = (les_basis.np(), dns_basis.np(), cfg.ratio);
        let mut a = Matrix::zeros(npl, m * npd);
        for s in 0..m {
            for (q, (&e, &w)) in eta.iter().zip(&wq).enumerate() {
                let xi = -1.0 + (2 * s + 1) as f64 / m as f64 + e / m as f64;
                let jw = w / m as f64;
                for i in 0..npl {
                    // Σ_a (2a+1)/2 P_a(ξ_i) P_a(ξ_q)
                    let mut kern = 0.0;
                    for deg in 0..npl {
                        kern += (2 * deg + 1) as f64 / 2.0 * legendre(deg, les_basis.nodes[i]).0 * legendre(deg, xi).0;
                    }
                    for j in 0..npd {
                        let v = a.get(i, s * npd + j) + kern * jw * to_quad.get(q, j);
                        a.set(i, s * npd + j, v);
                    }
                }
            }
        }
        Ok(Self { cfg, les_basis, a })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn les_basis(&self) -> &NodalBasis {
        &self.les_basis
    }

    /// Projects `nc`-component nodal DNS data (field layout) onto the LES space.
    pub fn project(&self, dns_mesh: &CartesianMesh, data: &[f64], nc: usize) -> Result<Vec<f64>> {
        let m = self.cfg.ratio;
        let npd = self.cfg.n_dns + 1;
        let npl = self.les_basis.np();
        let dpe = npd * npd * npd;
        let lm = &self.cfg.les_mesh;
        if dns_mesh.elements_per_dir != m * lm.elements_per_dir {
            return Err(config_err("DNS mesh is not nested in the LES mesh"));
        }
        check_len(dns_mesh.num_elements() * dpe * nc, data.len())?;
        let q = m * npd;
        let mut out = vec![0.0; lm.num_elements() * npl * npl * npl * nc];
        let mut block = vec![0.0; q * q * q];
        let mut t1 = vec![0.0; q * q * npl];
        let mut t2 = vec![0.0; q * npl * npl];
        let a = &self.a.data;
        for le in 0..lm.num_elements() {
            let [lx, ly, lz] = lm.element_coords(le);
            for c in 0..nc {
                // gather the (m npd)^3 block, x fastest
                for sz in 0..m {
                    for sy in 0..m {
                        for sx in 0..m {
                            let de = dns_mesh.element_index(lx * m + sx, ly * m + sy, lz * m + sz);
                            for k in 0..npd {
                                for j in 0..npd {
                                    for i in 0..npd {
                                        let src = (de * dpe + (k * npd + j) * npd + i) * nc + c;
                                        let dst = ((sz * npd + k) * q + sy * npd + j) * q + sx * npd + i;
                                        block[dst] = data[src];
                                    }
                                }
                            }
                        }
                    }
                }
                // contract x, then y, then z
                for z in 0..q {
                    for y in 0..q {
                        let row = &block[(z * q + y) * q..(z * q + y + 1) * q];
                        for i in 0..npl {
                            let ar = &a[i * q..(i + 1) * q];
                            t1[(z * q + y) * npl + i] = ar.iter().zip(row).map(|(x, y)| x * y).sum();
                        }
                    }
                }
                for z in 0..q {
                    for j in 0..npl {
                        let ar = &a[j * q..(j + 1) * q];
                        for i in 0..npl {
                            let mut s = 0.0;
                            for (y, &w) in ar.iter().enumerate() {
                                s += w * t1[(z * q + y) * npl + i];
                            }
                            t2[(z * npl + j) * npl + i] = s;
                        }
                    }
                }
                for k in 0..npl {
                    let ar = &a[k * q..(k + 1) * q];
                    for j in 0..npl {
                        for i in 0..npl {
                            let mut s = 0.0;
                            for (z, &w) in ar.iter().enumerate() {
                                s += w * t2[(z * npl + j) * npl + i];
                            }
                            let node = (k * npl + j) * npl + i;
                            out[(le * npl * npl * npl + node) * nc + c] = s;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// The filtered field `Ū` of a DNS state or tendency.
    pub fn apply(&self, dns: &SolutionField) -> Result<SolutionField> {
        self.cfg.check_nested(dns)?;
        let data = self.project(&dns.mesh, &dns.data, NVAR)?;
        SolutionField::from_data(self.cfg.les_mesh, self.les_basis.clone(), data, dns.time)
    }
}

pub fn dns_to_les(dns: &SolutionField, cfg: &FilterConfig) -> Result<SolutionField> {
    Projector::new(cfg.clone())?.apply(dns)
}

/// All pieces of the exact closure at one instant, in tendency form.
#[derive(Debug, Clone)]
pub struct ClosureTerms {
    pub filtered_state: SolutionField,
    /// LES operator applied to the filtered state.
    pub les_tendency: Vec<f64>,
    /// Filtered DNS tendency.
    pub filtered_dns_tendency: Vec<f64>,
}

impl ClosureTerms {
    /// Source that turns the LES tendency into the filtered DNS tendency.
    pub fn closure(&self) -> Vec<f64> {
        self.filtered_dns_tendency
            .iter()
            .zip(&self.les_tendency)
            .map(|(a, b)| a - b)
            .collect()
    }
}

pub fn exact_closure(
    dns: &SolutionField,
    dns_tendency: &SolutionField,
    projector: &Projector,
    les_op: &mut DgOperator,
) -> Result<ClosureTerms> {
    if (dns.time - dns_tendency.time).abs() > 1e-12 {
        return Err(config_err("state and tendency snapshots belong to different times"));
    }
    let filtered_state = projector.apply(dns)?;
    let filtered_dns_tendency = projector.apply(dns_tendency)?.data;
    let mut les_tendency = vec![0.0; filtered_state.data.len()];
    les_op.tendency(&filtered_state.data, &mut les_tendency)?;
    Ok(ClosureTerms {
        filtered_state,
        les_tendency,
        filtered_dns_tendency,
    })
}

/// `∫ term_mom · ū dΩ` over the LES mesh; `term` uses the field layout.
pub fn closure_energy_contribution(term: &[f64], ubar: &SolutionField) -> Result<f64> {
    check_len(ubar.data.len(), term.len())?;
    let w = ubar.basis.weights3();
    let jac = libm::pow(ubar.mesh.h() / 2.0, 3.0);
    let mut s = 0.0;
    for (n, (t, u)) in term.chunks_exact(NVAR).zip(ubar.data.chunks_exact(NVAR)).enumerate() {
        let dot = (t[1] * u[1] + t[2] * u[2] + t[3] * u[3]) / u[0];
        s += w[n % w.len()] * dot;
    }
    Ok(s * jac)
}

/// Ratio of the energy transfer of a predicted closure to that of the true one,
/// `∫ pred·ū / ∫ true·ū`, over blocks of `(3, p, p, p)` momentum terms and the
/// matching velocities. `None` for a vanishing denominator.
pub fn energy_transfer_ratio(pred: &[f64], truth: &[f64], velocity: &[f64], weights3: &[f64]) -> Option<f64> {
    let p3 = weights3.len();
    let (mut num, mut den) = (0.0, 0.0);
    for ((pb, tb), vb) in pred.chunks_exact(3 * p3).zip(truth.chunks_exact(3 * p3)).zip(velocity.chunks_exact(3 * p3)) {
        for c in 0..3 {
            for (s, &w) in weights3.iter().enumerate() {
                let i = c * p3 + s;
                num += w * pb[i] * vb[i];
                den += w * tb[i] * vb[i];
            }
        }
    }
    if den.abs() < 1e-300 {
        None
    } else {
        Some(num / den)
    }
}

pub const FEATURE_CHANNELS: usize = 6;
pub const LABEL_CHANNELS: usize = 3;

/// One training pair for one LES element: features `(ū, v̄, w̄, T̃₁, T̃₂, T̃₃)` and
/// labels `(P T₁, P T₂, P T₃)`, channel-major with sites x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureSample {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub run: u32,
    pub time: f64,
    pub element: u32,
}

/// Network input of element `e`: velocities of `state` and momentum components
/// of the LES tendency, channel-major.
pub fn element_features(state: &[f64], les_tendency: &[f64], e: usize, p3: usize) -> Vec<f64> {
    let mut features = vec![0.0; FEATURE_CHANNELS * p3];
    for s in 0..p3 {
        let n = (e * p3 + s) * NVAR;
        let u = &state[n..n + NVAR];
        for c in 0..3 {
            features[c * p3 + s] = u[1 + c] / u[0];
            features[(3 + c) * p3 + s] = les_tendency[n + 1 + c];
        }
    }
    features
}

/// Samples for every LES element at one instant.
pub fn element_samples(terms: &ClosureTerms, run: u32, time: f64) -> Vec<ClosureSample> {
    let ub = &terms.filtered_state;
    let p = ub.basis.np();
    let p3 = p * p * p;
    (0..ub.mesh.num_elements())
        .map(|e| {
            let mut labels = vec![0.0; LABEL_CHANNELS * p3];
            for s in 0..p3 {
                let n = (e * p3 + s) * NVAR;
                for c in 0..3 {
                    labels[c * p3 + s] = terms.filtered_dns_tendency[n + 1 + c];
                }
            }
            ClosureSample {
                features: element_features(&ub.data, &terms.les_tendency, e, p3),
                labels,
                run,
                time,
                element: e as u32,
            }
        })
        .collect()
}

/// Samples from `(state, tendency)` snapshot pairs at the requested times.
pub fn extract_dataset(
    snapshots: &[(SolutionField, SolutionField)],
    sample_times: &[f64],
    projector: &Projector,
    les_op: &mut DgOperator,
    run: u32,
) -> Result<Vec<ClosureSample>> {
    let mut out = Vec::new();
    for &t in sample_times {
        let (state, tend) = snapshots
            .iter()
            .find(|(s, _)| (s.time - t).abs() < 1e-9)
            .ok_or(Error::MissingSource(t))?;
        let terms = exact_closure(state, tend, projector, les_op)?;
        out.extend(element_samples(&terms, run, t));
    }
    Ok(out)
}

/// Correlation of every named column against each of the three label channels.
pub fn correlation_table(columns: &[(String, Vec<f64>)], labels: &[Vec<f64>; 3]) -> Vec<(String, [Option<f64>; 3])> {
    columns
        .iter()
        .map(|(name, col)| {
            let cc = [
                cross_correlation(col, &labels[0]),
                cross_correlation(col, &labels[1]),
                cross_correlation(col, &labels[2]),
            ];
            (name.clone(), cc)
        })
        .collect()
}

pub const FEATURE_NAMES: [&str; 6] = ["u", "v", "w", "les_op_1", "les_op_2", "les_op_3"];

/// Correlations of the six stored feature channels with the labels, over all samples.
pub fn feature_label_correlations(samples: &[ClosureSample]) -> Result<Vec<(String, [Option<f64>; 3])>> {
    if samples.is_empty() {
        return Err(config_err("correlation table needs at least one sample"));
    }
    let p3 = samples[0].labels.len() / LABEL_CHANNELS;
    let gather = |c: usize, of_features: bool| -> Vec<f64> {
        samples
            .iter()
            .flat_map(|s| {
                let src = if of_features { &s.features } else { &s.labels };
                src[c * p3..(c + 1) * p3].iter().copied()
            })
            .collect()
    };
    let labels = [gather(0, false), gather(1, false), gather(2, false)];
    let columns: Vec<(String, Vec<f64>)> = FEATURE_NAMES
        .iter()
        .enumerate()
        .map(|(c, n)| (String::from(*n), gather(c, true)))
        .collect();
    Ok(correlation_table(&columns, &labels))
}
