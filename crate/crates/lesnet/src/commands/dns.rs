//! `dns`: randomized DHIT initial condition, fixed-step DNS, snapshot archive.

use std::path::{Path, PathBuf};

use lesnet_core::basis::{CartesianMesh, NodalBasis};
use lesnet_core::dgsem::stable_timestep;
use lesnet_core::dns::{dns_run, DnsConfig};
use lesnet_core::field::field_len;
use lesnet_core::flux::RiemannVariant;
use lesnet_core::gas::GasModel;
use lesnet_core::metrics::{energy_spectrum, fit_decay_exponent, kinetic_energy, EnergyTrace};
use lesnet_core::time::aligned_steps;
use lesnet_core::turb::{initialize_state, rogallo_field, InitConfig, SpectrumSpec};

use crate::commands::extract::spectra_table;
use crate::config::{Echo, KeyValues};
use crate::error::{usage, CliError, CliResult};
use crate::formats::{PayloadKind, Snapshot};
use crate::io::{fmt_f64, write_atomic, Table};

/// Settings of one DNS run. Defaults are the desk configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DnsSettings {
    pub seed: u64,
    /// `elements_per_dir = 16`
    pub elements_per_dir: usize,
    /// `degree = 3`
    pub degree: usize,
    /// `mu0 = 0.05`, chosen so the spectrum falls off well before the grid cutoff.
    pub gas: GasModel,
    /// `mach = 0.1`, based on the peak initial velocity.
    pub mach: f64,
    /// `u0_sq = 5`, `kp = 4`, `s = 4`
    pub spectrum: SpectrumSpec,
    /// `spectral_resolution = 0` picks `4 · elements_per_dir` Fourier modes.
    pub spectral_resolution: usize,
    /// `riemann = roe-lowdiss`
    pub riemann: RiemannVariant,
    /// `cfl = 0.25`; the AB3 scheme is unstable near 0.4 on this operator.
    pub cfl: f64,
    /// `t_end = 2.0`
    pub t_end: f64,
    /// `sample_interval = 0.1`
    pub sample_interval: f64,
    /// `sample_start = 1.0`
    pub sample_start: f64,
    /// `spectrum_resolution = 0` picks twice the nodal resolution.
    pub spectrum_resolution: usize,
    /// `storage_cap_gb = 10`
    pub storage_cap_gb: f64,
}

pub(crate) fn gas_from(kv: &KeyValues, mu0: f64) -> CliResult<GasModel> {
    let d = GasModel::default();
    let g = GasModel {
        gamma: kv.get("gamma", d.gamma)?,
        gas_constant: kv.get("gas_constant", d.gas_constant)?,
        prandtl: kv.get("prandtl", d.prandtl)?,
        mu0: kv.get("mu0", mu0)?,
    };
    g.validate().map_err(|e| usage(e.to_string()))?;
    Ok(g)
}

pub(crate) fn echo_gas(e: &mut Echo, g: &GasModel) {
    e.put("gamma", g.gamma).put("gas_constant", g.gas_constant).put("prandtl", g.prandtl).put("mu0", g.mu0);
}

pub(crate) fn riemann_from(kv: &KeyValues, key: &str) -> CliResult<RiemannVariant> {
    let v = kv.raw(key).unwrap_or("roe-lowdiss");
    RiemannVariant::parse(v).ok_or_else(|| usage(format!("config key `{key}`: unknown Riemann solver `{v}`")))
}

impl DnsSettings {
    pub fn from_kv(kv: &KeyValues) -> CliResult<Self> {
        let spectrum = SpectrumSpec::new(kv.get("s", 4u32)?, kv.get("u0_sq", 5.0)?, kv.get("kp", 4.0)?)
            .map_err(|e| usage(e.to_string()))?;
        let s = Self {
            seed: kv.get("seed", 1u64)?,
            elements_per_dir: kv.get("elements_per_dir", 16usize)?,
            degree: kv.get("degree", 3usize)?,
            gas: gas_from(kv, 0.05)?,
            mach: kv.get("mach", 0.1)?,
            spectrum,
            spectral_resolution: kv.get("spectral_resolution", 0usize)?,
            riemann: riemann_from(kv, "riemann")?,
            cfl: kv.get("cfl", 0.25)?,
            t_end: kv.get("t_end", 2.0)?,
            sample_interval: kv.get("sample_interval", 0.1)?,
            sample_start: kv.get("sample_start", 1.0)?,
            spectrum_resolution: kv.get("spectrum_resolution", 0usize)?,
            storage_cap_gb: kv.get("storage_cap_gb", 10.0)?,
        };
        kv.finish()?;
        if s.elements_per_dir == 0 || s.degree == 0 {
            return Err(usage("elements_per_dir and degree must be positive"));
        }
        if !(s.t_end > 0.0) || !(s.sample_interval > 0.0) || s.sample_start > s.t_end {
            return Err(usage("need t_end > 0, sample_interval > 0 and sample_start <= t_end"));
        }
        Ok(s)
    }

    pub fn echo(&self) -> Echo {
        let mut e = Echo::default();
        e.put("seed", self.seed)
            .put("elements_per_dir", self.elements_per_dir)
            .put("degree", self.degree);
        echo_gas(&mut e, &self.gas);
        e.put("mach", self.mach)
            .put("s", self.spectrum.s)
            .put("u0_sq", self.spectrum.u0_sq)
            .put("kp", self.spectrum.kp)
            .put("spectral_resolution", self.spectral_resolution)
            .put("riemann", self.riemann.name())
            .put("cfl", self.cfl)
            .put("t_end", self.t_end)
            .put("sample_interval", self.sample_interval)
            .put("sample_start", self.sample_start)
            .put("spectrum_resolution", self.spectrum_resolution)
            .put("storage_cap_gb", self.storage_cap_gb);
        e
    }

    fn dns_config(&self) -> DnsConfig {
        DnsConfig {
            gas: self.gas,
            riemann: self.riemann,
            cfl: self.cfl,
            t_end: self.t_end,
            sample_interval: self.sample_interval,
            sample_start: self.sample_start,
        }
    }

    fn resample_n(&self) -> usize {
        match self.spectrum_resolution {
            0 => 2 * self.elements_per_dir * (self.degree + 1),
            n => n,
        }
    }

    /// Bytes of state and tendency snapshots the run will write.
    pub fn archive_bytes(&self) -> CliResult<u64> {
        let mesh = CartesianMesh::periodic_box(self.elements_per_dir)?;
        let basis = NodalBasis::new(self.degree)?;
        let per = 8 * field_len(&mesh, &basis) as u64 + 96;
        Ok(2 * per * self.dns_config().sample_times().len() as u64)
    }
}

/// One archived sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotEntry {
    pub time: f64,
    pub state: PathBuf,
    pub tendency: PathBuf,
}

#[derive(Debug, Clone)]
pub struct DnsReport {
    pub trace: EnergyTrace,
    pub snapshots: Vec<SnapshotEntry>,
    pub dt: f64,
    pub steps: usize,
    pub decay_exponent: Option<f64>,
}

pub const SNAPSHOT_INDEX: &str = "snapshots.csv";

pub fn run(settings: &DnsSettings, out: &Path) -> CliResult<DnsReport> {
    let cap = settings.storage_cap_gb * 1e9;
    let need = settings.archive_bytes()? as f64;
    if need > cap {
        return Err(usage(format!(
            "snapshot archive needs {:.3} GB, above the storage cap of {} GB",
            need / 1e9,
            settings.storage_cap_gb
        )));
    }
    let init = InitConfig {
        seed: settings.seed,
        mach: settings.mach,
        spectral_resolution: match settings.spectral_resolution {
            0 => 4 * settings.elements_per_dir,
            m => m,
        },
    };
    init.validate(&settings.spectrum).map_err(|e| usage(e.to_string()))?;
    let mesh = CartesianMesh::periodic_box(settings.elements_per_dir)?;
    let basis = NodalBasis::new(settings.degree)?;
    let velocity = rogallo_field(&settings.spectrum, &init)?;
    let initial = initialize_state(&velocity, &init, &settings.gas, mesh, basis)?;
    let cfg = settings.dns_config();
    let dt_max = stable_timestep(&initial, &settings.gas, settings.cfl)?;
    let n_samples = cfg.sample_times().len();
    let segments = (settings.t_end / settings.sample_interval).round() as usize;
    let (steps, dt) = aligned_steps(0.0, settings.t_end, dt_max, segments.max(1))?;
    log::info!(
        "dns: {}^3 elements, N = {}, dt = {dt:.4e}, {steps} steps, {n_samples} samples",
        settings.elements_per_dir,
        settings.degree
    );

    std::fs::create_dir_all(out).map_err(crate::error::io_err(out))?;
    let mut snapshots = Vec::new();
    let mut spectra = Vec::new();
    let resample = settings.resample_n();
    let outcome = dns_run(&initial, &cfg, |state, tend| {
        let k = snapshots.len();
        let entry = SnapshotEntry {
            time: state.time,
            state: PathBuf::from(format!("snap_{k:03}_state.dhit")),
            tendency: PathBuf::from(format!("snap_{k:03}_tendency.dhit")),
        };
        let write = |field, kind, name: &Path| {
            Snapshot::from_field(field, settings.gas, settings.seed, kind)
                .write(&out.join(name))
                .map_err(|e| lesnet_core::Error::Config(e.to_string()))
        };
        write(state, PayloadKind::State, &entry.state)?;
        write(tend, PayloadKind::Tendency, &entry.tendency)?;
        spectra.push(energy_spectrum(state, resample)?);
        log::info!("dns: t = {:.3}, KE = {:.6e}", state.time, kinetic_energy(state));
        snapshots.push(entry);
        Ok(())
    })
    .map_err(|e| match e {
        lesnet_core::Error::InvalidState { .. } | lesnet_core::Error::NonFinite { .. } => {
            CliError::Runtime(format!("DNS became unstable: {e}; lower cfl or raise mu0"))
        }
        e => e.into(),
    })?;

    let mut ke = Table::new(&["t", "ke"]);
    for &(t, e) in &outcome.trace.points {
        ke.push_floats(&[t, e]);
    }
    ke.write(&out.join("ke.csv"))?;
    spectra_table(&spectra).write(&out.join("spectra.csv"))?;
    let mut index = Table::new(&["t", "state", "tendency"]);
    for s in &snapshots {
        index.push(vec![fmt_f64(s.time), s.state.display().to_string(), s.tendency.display().to_string()]);
    }
    index.write(&out.join(SNAPSHOT_INDEX))?;
    let decay_exponent = fit_decay_exponent(&outcome.trace, (1.0, 2.0)).ok();
    let mut manifest = settings.echo();
    manifest.put("mode", "dns").put("dt", fmt_f64(outcome.dt)).put("steps", outcome.steps);
    if let Some(m) = decay_exponent {
        manifest.put("decay_exponent", fmt_f64(m));
    }
    write_atomic(&out.join("manifest.txt"), manifest.render().as_bytes())?;
    Ok(DnsReport { trace: outcome.trace, snapshots, dt: outcome.dt, steps: outcome.steps, decay_exponent })
}

/// Reads `snapshots.csv` of a DNS output directory; paths come back absolute.
pub fn read_index(dir: &Path) -> CliResult<Vec<SnapshotEntry>> {
    let path = dir.join(SNAPSHOT_INDEX);
    let t = Table::read(&path)?;
    let times = t.floats(0, &path)?;
    Ok(t.rows
        .iter()
        .zip(times)
        .map(|(r, time)| SnapshotEntry { time, state: dir.join(&r[1]), tendency: dir.join(&r[2]) })
        .collect())
}
