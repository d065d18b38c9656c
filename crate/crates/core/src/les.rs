//! LES closures (none, Smagorinsky, archived exact closure, network-based direct
//! and eddy-viscosity closures, operator-based eddy viscosity) and the LES driver.

use alloc::vec;
use alloc::vec::Vec;

use crate::dgsem::{stable_timestep, DgOperator, Viscosity};
use crate::error::{config_err, Error, Result};
use crate::field::SolutionField;
use crate::filter::{element_features, exact_closure, ClosureSample, Projector, LABEL_CHANNELS};
use crate::flux::{PrimGradient, RiemannVariant};
use crate::gas::{GasModel, NVAR};
use crate::metrics::{energy_spectrum, kinetic_energy, EnergyTrace, SpectrumSeries};
use crate::nn::{infer, FeatureSet, Network};
use crate::time::{fixed_steps, Ab3};

/// Degenerate-basis threshold of the eddy-viscosity fit.
pub const FIT_TOLERANCE: f64 = 1e-30;

/// `ν_t = (C_s Δ)² |S|` with `|S| = sqrt(2 S_ij S_ij)`.
pub fn smagorinsky_viscosity(grads: &[PrimGradient], cs: f64, delta: f64) -> Vec<f64> {
    let c = (cs * delta) * (cs * delta);
    grads.iter().map(|g| c * strain_rate_norm(g)).collect()
}

/// `sqrt(2 S_ij S_ij)` of the velocity rows of a primitive gradient.
pub fn strain_rate_norm(g: &PrimGradient) -> f64 {
    let mut ss = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let s = 0.5 * (g[i][j] + g[j][i]);
            ss += s * s;
        }
    }
    libm::sqrt(2.0 * ss)
}

/// Filter width of a nodal DG element of size `h` and degree `n`.
pub fn smagorinsky_width(h: f64, degree: usize) -> f64 {
    h / (degree + 1) as f64
}

/// Zero-bias least squares `μ = Σ a_i b_i / Σ b_i²`; zero for a degenerate basis.
#[inline]
pub fn fit_node(a: [f64; 3], b: [f64; 3]) -> f64 {
    let bb = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
    if bb < FIT_TOLERANCE {
        return 0.0;
    }
    (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / bb
}

/// Pointwise fit over the momentum components of two field-layout arrays.
pub fn eddy_viscosity_fit(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.len() % NVAR != 0 {
        return Err(Error::Shape { expected: a.len(), got: b.len() });
    }
    Ok(a.chunks_exact(NVAR)
        .zip(b.chunks_exact(NVAR))
        .map(|(x, y)| fit_node([x[1], x[2], x[3]], [y[1], y[2], y[3]]))
        .collect())
}

/// Clamps each value to `[lo μ0, hi μ0]`.
pub fn clip_viscosity(mu: &mut [f64], mu0: f64, bounds: ClipBounds) {
    let (lo, hi) = (bounds.lo * mu0, bounds.hi * mu0);
    mu.iter_mut().for_each(|m| *m = m.clamp(lo, hi));
}

/// Eddy-viscosity limits in units of the molecular viscosity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { lo: -1.0, hi: 20.0 }
    }
}

/// Exact closure sources, and optionally filtered reference states, keyed by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosureArchive {
    pub sources: Vec<(f64, Vec<f64>)>,
    pub reference: Vec<(f64, Vec<f64>)>,
}

fn lookup(list: &[(f64, Vec<f64>)], t: f64) -> Option<&[f64]> {
    let tol = 1e-9 * (1.0 + t.abs());
    let i = list.partition_point(|(s, _)| *s < t - tol);
    list.get(i).filter(|(s, _)| (s - t).abs() <= tol).map(|(_, v)| v.as_slice())
}

impl ClosureArchive {
    pub fn source(&self, t: f64) -> Result<&[f64]> {
        lookup(&self.sources, t).ok_or(Error::MissingSource(t))
    }

    pub fn reference_at(&self, t: f64) -> Option<&[f64]> {
        lookup(&self.reference, t)
    }

    fn push(list: &mut Vec<(f64, Vec<f64>)>, t: f64, v: Vec<f64>) -> Result<()> {
        if list.last().map_or(false, |(s, _)| *s >= t) {
            return Err(config_err("archive times must increase"));
        }
        list.push((t, v));
        Ok(())
    }

    pub fn push_source(&mut self, t: f64, v: Vec<f64>) -> Result<()> {
        Self::push(&mut self.sources, t, v)
    }

    pub fn push_reference(&mut self, t: f64, v: Vec<f64>) -> Result<()> {
        Self::push(&mut self.reference, t, v)
    }
}

/// Every time at which an LES run with step `dt` from `t0` over `n` steps
/// evaluates its right-hand side: step times plus the half-step stages of the
/// two self-starting steps.
pub fn les_stage_times(t0: f64, dt: f64, n: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * dt).collect();
    for i in 0..n.min(2) {
        t.push(t0 + i as f64 * dt + 0.5 * dt);
    }
    t.sort_by(f64::total_cmp);
    t
}

/// Runs the DNS from `dns` over `n_steps` of `dt_dns` and archives the exact
/// closure (and the filtered state) at every DNS time that matches one of
/// `capture_times`. Returns the archive and the final DNS state.
#[allow(clippy::too_many_arguments)]
pub fn record_closure_archive(
    dns: &SolutionField,
    dns_gas: GasModel,
    dns_riemann: RiemannVariant,
    projector: &Projector,
    les_op: &mut DgOperator,
    dt_dns: f64,
    n_steps: usize,
    capture_times: &[f64],
) -> Result<(ClosureArchive, SolutionField)> {
    let mut op = DgOperator::for_field(dns, dns_gas, dns_riemann)?;
    let mut state = dns.clone();
    let mut tend = SolutionField::zeros(dns.mesh, dns.basis.clone());
    let mut ab = Ab3::new(dt_dns, dns.time, state.data.len(), dns.nodes_per_element() * NVAR)?;
    let mut archive = ClosureArchive::default();
    let tol = 1e-6 * dt_dns;
    let mut next = 0;
    for step in 0..=n_steps {
        let t = ab.time();
        if next < capture_times.len() && capture_times[next] < t - tol {
            return Err(Error::MissingSource(capture_times[next]));
        }
        if next < capture_times.len() && (capture_times[next] - t).abs() <= tol {
            state.time = t;
            tend.time = t;
            op.tendency(&state.data, &mut tend.data)?;
            let terms = exact_closure(&state, &tend, projector, les_op)?;
            let t_key = capture_times[next];
            archive.push_source(t_key, terms.closure())?;
            archive.push_reference(t_key, terms.filtered_state.data)?;
            next += 1;
        }
        if step < n_steps {
            ab.step(&mut |_t: f64, u: &[f64], out: &mut [f64]| op.tendency(u, out), &mut state.data)?;
        }
    }
    if next < capture_times.len() {
        return Err(Error::MissingSource(capture_times[next]));
    }
    state.time = ab.time();
    Ok((archive, state))
}

/// Closure selection of an LES run.
pub enum ClosureMode<'a> {
    None,
    Smagorinsky { cs: f64 },
    Perfect(&'a ClosureArchive),
    /// Network prediction replaces the momentum tendency.
    AnnDirect { net: &'a mut Network, features: FeatureSet },
    /// Network prediction fitted to a clipped pointwise eddy viscosity.
    AnnEddy { net: &'a mut Network, features: FeatureSet, clip: ClipBounds },
    /// Eddy viscosity fitted to the LES operator alone.
    OpEddy { clip: ClipBounds },
}

impl ClosureMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Smagorinsky { .. } => "smagorinsky",
            Self::Perfect(_) => "perfect",
            Self::AnnDirect { .. } => "ann-direct",
            Self::AnnEddy { .. } => "ann-eddy",
            Self::OpEddy { .. } => "op-eddy",
        }
    }

    fn clip(&self) -> Option<ClipBounds> {
        match self {
            Self::AnnEddy { clip, .. } | Self::OpEddy { clip } => Some(*clip),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesRunConfig {
    pub gas: GasModel,
    pub riemann: RiemannVariant,
    pub t_end: f64,
    /// CFL number for the fixed step, evaluated on the initial state with the
    /// largest viscosity the closure can apply.
    pub cfl: f64,
    /// Explicit step bound; overrides the CFL estimate when set.
    pub dt: Option<f64>,
    pub spectrum_times: Vec<f64>,
    pub resample_n: usize,
    pub batch_size: usize,
}

impl LesRunConfig {
    pub fn new(gas: GasModel, riemann: RiemannVariant, t_end: f64) -> Self {
        Self {
            gas,
            riemann,
            t_end,
            cfl: 0.2,
            dt: None,
            spectrum_times: Vec::new(),
            resample_n: 0,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LesOutcome {
    pub state: SolutionField,
    pub trace: EnergyTrace,
    pub spectra: Vec<SpectrumSeries>,
    /// Relative L2 distance to the archived reference after each step (perfect mode).
    pub recovery: Vec<(f64, f64)>,
    /// Smallest and largest total viscosity applied by an eddy-viscosity closure.
    pub viscosity_range: Option<(f64, f64)>,
    pub steps: usize,
    pub dt: f64,
}

/// Relative L2 distance `‖a − b‖ / ‖b‖` over all conserved variables.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    libm::sqrt(num / den.max(f64::MIN_POSITIVE))
}

struct Workspace {
    tend: Vec<f64>,
    visc_unit: Vec<f64>,
    mu: Vec<f64>,
    mu_range: Option<(f64, f64)>,
}

fn predict_momentum(
    net: &mut Network,
    features: FeatureSet,
    state: &[f64],
    tend: &[f64],
    np: usize,
    num_elements: usize,
    batch: usize,
) -> Result<Vec<f64>> {
    if features.labels().len() != LABEL_CHANNELS {
        return Err(config_err("LES closures need a network predicting all three momentum components"));
    }
    let p3 = np * np * np;
    let samples: Vec<ClosureSample> = (0..num_elements)
        .map(|e| ClosureSample {
            features: element_features(state, tend, e, p3),
            labels: vec![0.0; LABEL_CHANNELS * p3],
            run: 0,
            time: 0.0,
            element: e as u32,
        })
        .collect();
    let pred = infer(net, &samples, features, batch)?;
    // back to field layout, momentum components only
    let mut out = vec![0.0; state.len()];
    for (e, pe) in pred.iter().enumerate() {
        for s in 0..p3 {
            for c in 0..3 {
                out[(e * p3 + s) * NVAR + 1 + c] = pe[c * p3 + s];
            }
        }
    }
    Ok(out)
}

impl Workspace {
    fn rhs(
        &mut self,
        op: &mut DgOperator,
        mode: &mut ClosureMode<'_>,
        cfg: &LesRunConfig,
        t: f64,
        u: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let mu0 = cfg.gas.mu0;
        let (np, ne) = (op.basis().np(), op.mesh().num_elements());
        match mode {
            ClosureMode::None => op.tendency(u, out),
            ClosureMode::Smagorinsky { cs } => {
                op.load(u)?;
                out.iter_mut().for_each(|v| *v = 0.0);
                op.add_inviscid(out);
                let delta = smagorinsky_width(op.mesh().h(), op.basis().degree);
                let nu = smagorinsky_viscosity(op.gradients(), *cs, delta);
                for ((m, nu), st) in self.mu.iter_mut().zip(&nu).zip(op.states()) {
                    *m = mu0 + st.rho * nu;
                }
                let mu = core::mem::take(&mut self.mu);
                let r = op.add_viscous(Viscosity::PerNode(&mu), out);
                self.mu = mu;
                r
            }
            ClosureMode::Perfect(archive) => {
                op.tendency(u, out)?;
                let src = archive.source(t)?;
                for (o, s) in out.iter_mut().zip(src) {
                    *o += s;
                }
                Ok(())
            }
            ClosureMode::AnnDirect { net, features } => {
                op.tendency(u, out)?;
                let pred = predict_momentum(net, *features, u, out, np, ne, cfg.batch_size)?;
                for (o, p) in out.chunks_exact_mut(NVAR).zip(pred.chunks_exact(NVAR)) {
                    o[1..4].copy_from_slice(&p[1..4]);
                }
                Ok(())
            }
            ClosureMode::AnnEddy { .. } | ClosureMode::OpEddy { .. } => {
                let clip = mode.clip().expect("eddy modes carry bounds");
                op.tendency(u, &mut self.tend)?;
                // a = target closure, both modes in tendency form
                let mut a = match mode {
                    ClosureMode::AnnEddy { net, features, .. } => {
                        predict_momentum(net, *features, u, &self.tend, np, ne, cfg.batch_size)?
                    }
                    _ => vec![0.0; u.len()],
                };
                for (x, t) in a.iter_mut().zip(&self.tend) {
                    *x -= t;
                }
                self.visc_unit.iter_mut().for_each(|v| *v = 0.0);
                op.add_viscous(Viscosity::Uniform(1.0), &mut self.visc_unit)?;
                let mut mu = eddy_viscosity_fit(&a, &self.visc_unit)?;
                clip_viscosity(&mut mu, mu0, clip);
                let (lo, hi) = ((1.0 + clip.lo) * mu0, (1.0 + clip.hi) * mu0);
                for m in &mut mu {
                    *m += mu0;
                    if !(*m >= lo - 1e-12 * mu0 && *m <= hi + 1e-12 * mu0) {
                        return Err(config_err(alloc::format!("applied viscosity {m} outside [{lo}, {hi}]")));
                    }
                    let r = self.mu_range.get_or_insert((*m, *m));
                    r.0 = r.0.min(*m);
                    r.1 = r.1.max(*m);
                }
                out.iter_mut().for_each(|v| *v = 0.0);
                op.add_inviscid(out);
                op.add_viscous(Viscosity::PerNode(&mu), out)
            }
        }
    }
}

/// Advances the LES state from `initial.time` to `cfg.t_end` with fixed AB3 steps.
pub fn les_run(initial: &SolutionField, mut mode: ClosureMode<'_>, cfg: &LesRunConfig) -> Result<LesOutcome> {
    if matches!(mode, ClosureMode::Smagorinsky { cs } if !(cs >= 0.0)) {
        return Err(config_err("Smagorinsky constant must be non-negative"));
    }
    let clip = mode.clip();
    if clip.is_some() && !(cfg.gas.mu0 > 0.0) {
        return Err(config_err("eddy-viscosity closures need a positive molecular viscosity"));
    }
    let dt_max = match cfg.dt {
        Some(dt) => dt,
        None => {
            let mut g = cfg.gas;
            if let Some(c) = clip {
                g.mu0 *= 1.0 + c.hi.max(0.0);
            }
            stable_timestep(initial, &g, cfg.cfl)?
        }
    };
    let (n, dt) = fixed_steps(initial.time, cfg.t_end, dt_max)?;
    let mut op = DgOperator::for_field(initial, cfg.gas, cfg.riemann)?;
    let mut state = initial.clone();
    let len = state.data.len();
    let mut ws = Workspace {
        tend: vec![0.0; len],
        visc_unit: vec![0.0; len],
        mu: vec![0.0; len / NVAR],
        mu_range: None,
    };
    let mut ab = Ab3::new(dt, initial.time, len, initial.nodes_per_element() * NVAR)?;
    let mut trace = EnergyTrace::default();
    trace.push(state.time, kinetic_energy(&state))?;
    let mut spectra = Vec::new();
    let mut spec_times = cfg.spectrum_times.clone();
    spec_times.sort_by(f64::total_cmp);
    let mut next_spec = 0;
    let take_spectra = |state: &SolutionField, next: &mut usize, out: &mut Vec<SpectrumSeries>| -> Result<()> {
        while *next < spec_times.len() && spec_times[*next] <= state.time + 0.5 * dt {
            out.push(energy_spectrum(state, cfg.resample_n.max(2 * state.mesh.elements_per_dir * state.basis.np()))?);
            *next += 1;
        }
        Ok(())
    };
    take_spectra(&state, &mut next_spec, &mut spectra)?;
    let mut recovery = Vec::new();
    for _ in 0..n {
        ab.step(
            &mut |t: f64, u: &[f64], out: &mut [f64]| ws.rhs(&mut op, &mut mode, cfg, t, u, out),
            &mut state.data,
        )?;
        state.time = ab.time();
        trace.push(state.time, kinetic_energy(&state))?;
        if let ClosureMode::Perfect(archive) = &mode {
            if let Some(r) = archive.reference_at(state.time) {
                recovery.push((state.time, relative_l2(&state.data, r)));
            }
        }
        take_spectra(&state, &mut next_spec, &mut spectra)?;
    }
    Ok(LesOutcome {
        state,
        trace,
        spectra,
        recovery,
        viscosity_range: ws.mu_range,
        steps: n,
        dt,
    })
}

/// Per-batch energy-transfer ratios `∫ ŷ_pred·ū / ∫ ŷ·ū` of a network on labelled samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DissipativityStats {
    pub ratios: Vec<f64>,
    pub skipped: usize,
}

impl DissipativityStats {
    pub fn positive_fraction(&self) -> f64 {
        if self.ratios.is_empty() {
            return 0.0;
        }
        self.ratios.iter().filter(|&&r| r > 0.0).count() as f64 / self.ratios.len() as f64
    }
}

pub fn dissipativity_check(
    net: &mut Network,
    samples: &[ClosureSample],
    features: FeatureSet,
    weights3: &[f64],
    batch_size: usize,
) -> Result<DissipativityStats> {
    let mut stats = DissipativityStats::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let pred = infer(net, chunk, features, batch_size)?;
        stats.push_batch(&pred, chunk, weights3)?;
    }
    Ok(stats)
}

impl DissipativityStats {
    /// Adds one batch of predictions (all three components) against its samples.
    pub fn push_batch(&mut self, pred: &[Vec<f64>], samples: &[ClosureSample], weights3: &[f64]) -> Result<()> {
        let p3 = weights3.len();
        let (mut pv, mut tv, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        for (p, s) in pred.iter().zip(samples) {
            if p.len() != LABEL_CHANNELS * p3 {
                return Err(Error::Shape { expected: LABEL_CHANNELS * p3, got: p.len() });
            }
            pv.extend_from_slice(p);
            tv.extend_from_slice(&s.labels);
            vv.extend_from_slice(&s.features[..3 * p3]);
        }
        match crate::filter::energy_transfer_ratio(&pv, &tv, &vv, weights3) {
            Some(r) => self.ratios.push(r),
            None => {
                log::warn!("skipping a batch with vanishing closure energy transfer");
                self.skipped += 1;
            }
        }
        Ok(())
    }
}
