//! Fixed-step DNS driver with exact hits of regularly spaced sample times.

use alloc::vec::Vec;

use crate::dgsem::{stable_timestep, DgOperator};
use crate::error::{config_err, Result};
use crate::field::SolutionField;
use crate::flux::RiemannVariant;
use crate::gas::{GasModel, NVAR};
use crate::metrics::{kinetic_energy, EnergyTrace};
use crate::time::{aligned_steps, Ab3};

#[derive(Debug, Clone, PartialEq)]
pub struct DnsConfig {
    pub gas: GasModel,
    pub riemann: RiemannVariant,
    pub cfl: f64,
    pub t_end: f64,
    /// Spacing of the sample grid, anchored at time 0.
    pub sample_interval: f64,
    /// Samples are taken at grid times in `[sample_start, t_end]`.
    pub sample_start: f64,
}

impl DnsConfig {
    /// Nominal sample times.
    pub fn sample_times(&self) -> Vec<f64> {
        let k0 = libm::ceil(self.sample_start / self.sample_interval - 1e-9) as usize;
        let k1 = libm::floor(self.t_end / self.sample_interval + 1e-9) as usize;
        (k0..=k1).map(|k| k as f64 * self.sample_interval).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DnsOutcome {
    pub state: SolutionField,
    pub trace: EnergyTrace,
    pub dt: f64,
    pub steps: usize,
}

/// Advances `initial` to `cfg.t_end`. At every sample time `on_sample` receives
/// the state and its tendency, both stamped with the nominal sample time.
pub fn dns_run(
    initial: &SolutionField,
    cfg: &DnsConfig,
    mut on_sample: impl FnMut(&SolutionField, &SolutionField) -> Result<()>,
) -> Result<DnsOutcome> {
    if !(cfg.sample_interval > 0.0) {
        return Err(config_err("sample interval must be positive"));
    }
    let t0 = initial.time;
    let ratio = (cfg.t_end - t0) / cfg.sample_interval;
    let segments = libm::round(ratio) as usize;
    if segments == 0 || (ratio - segments as f64).abs() > 1e-9 * ratio.max(1.0) || libm::fmod(t0 / cfg.sample_interval + 1e-9, 1.0) > 2e-9 {
        return Err(config_err("start and end time must lie on the sample grid"));
    }
    let dt_max = stable_timestep(initial, &cfg.gas, cfg.cfl)?;
    let (n, dt) = aligned_steps(t0, cfg.t_end, dt_max, segments)?;
    let per_sample = n / segments;
    let mut op = DgOperator::for_field(initial, cfg.gas, cfg.riemann)?;
    let mut state = initial.clone();
    let mut tend = SolutionField::zeros(initial.mesh, initial.basis.clone());
    let mut ab = Ab3::new(dt, t0, state.data.len(), initial.nodes_per_element() * NVAR)?;
    let mut trace = EnergyTrace::default();
    let times = cfg.sample_times();
    let mut sample = |state: &mut SolutionField, tend: &mut SolutionField, op: &mut DgOperator, k: usize| -> Result<()> {
        let nominal = t0 + k as f64 * cfg.sample_interval;
        if let Some(&t) = times.iter().find(|&&t| (t - nominal).abs() < 1e-9) {
            state.time = t;
            tend.time = t;
            op.tendency(&state.data, &mut tend.data)?;
            on_sample(state, tend)?;
        }
        Ok(())
    };
    trace.push(t0, kinetic_energy(&state))?;
    sample(&mut state, &mut tend, &mut op, 0)?;
    for step in 1..=n {
        ab.step(&mut |_t: f64, u: &[f64], out: &mut [f64]| op.tendency(u, out), &mut state.data)?;
        state.time = ab.time();
        trace.push(state.time, kinetic_energy(&state))?;
        if step % per_sample == 0 {
            sample(&mut state, &mut tend, &mut op, step / per_sample)?;
        }
    }
    state.time = ab.time();
    Ok(DnsOutcome { state, trace, dt, steps: n })
}
