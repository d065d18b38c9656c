//! `les`: coarse-grid runs with any closure, from a DNS or LES snapshot.

use std::path::{Path, PathBuf};

use lesnet_core::basis::CartesianMesh;
use lesnet_core::dgsem::{stable_timestep, DgOperator};
use lesnet_core::field::SolutionField;
use lesnet_core::filter::{FilterConfig, Projector};
use lesnet_core::flux::RiemannVariant;
use lesnet_core::gas::GasModel;
use lesnet_core::les::{
    les_run, les_stage_times, record_closure_archive, ClipBounds, ClosureArchive, ClosureMode, LesOutcome,
    LesRunConfig,
};
use lesnet_core::nn::FeatureSet;
use lesnet_core::time::fixed_steps;

use crate::commands::dns::riemann_from;
use crate::commands::extract::spectra_table;
use crate::config::{join, Echo, KeyValues};
use crate::error::{usage, CliResult};
use crate::formats::{Checkpoint, PayloadKind, Snapshot};
use crate::io::{fmt_f64, write_atomic, Table};

pub const MODES: [&str; 6] = ["none", "smagorinsky", "perfect", "ann-direct", "ann-eddy", "op-eddy"];

#[derive(Debug, Clone, PartialEq)]
pub struct LesSettings {
    /// `initial`: DHITSNAP state, either DNS (filtered on load) or LES resolution.
    pub initial: PathBuf,
    /// `mode = none`, one of [`MODES`].
    pub mode: String,
    /// `cs = 0.17`
    pub cs: f64,
    /// `checkpoint`: required by the ann modes.
    pub checkpoint: Option<PathBuf>,
    /// `les_elements_per_dir = 4`, `les_degree = 5`
    pub les_elements_per_dir: usize,
    pub les_degree: usize,
    /// `riemann = roe-lowdiss`
    pub riemann: RiemannVariant,
    /// `t_end = 2.0`
    pub t_end: f64,
    /// `cfl = 0.2`
    pub cfl: f64,
    /// `dt = 0` derives the step from `cfl`.
    pub dt: f64,
    /// `clip_lo = -1`, `clip_hi = 20` in units of `mu0`.
    pub clip: ClipBounds,
    /// `spectrum_times` defaults to `t_end`.
    pub spectrum_times: Vec<f64>,
    /// `spectrum_resolution = 0` picks twice the nodal resolution.
    pub spectrum_resolution: usize,
    /// `batch_size = 64` for network inference.
    pub batch_size: usize,
    /// `dns_substeps = 8`: DNS steps per LES step when perfect mode builds its archive.
    pub dns_substeps: usize,
    /// `dns_riemann = roe-lowdiss`
    pub dns_riemann: RiemannVariant,
}

impl LesSettings {
    pub fn from_kv(kv: &KeyValues, dir: &Path) -> CliResult<Self> {
        let mode: String = kv.get("mode", "none".to_string())?;
        if !MODES.contains(&mode.as_str()) {
            return Err(usage(format!("unknown LES mode `{mode}`, expected one of {}", MODES.join(", "))));
        }
        let initial: String = kv.require("initial")?;
        let checkpoint = kv.raw("checkpoint").map(|c| dir.join(c));
        let t_end = kv.get("t_end", 2.0)?;
        let s = Self {
            initial: dir.join(initial),
            mode,
            cs: kv.get("cs", 0.17)?,
            checkpoint,
            les_elements_per_dir: kv.get("les_elements_per_dir", 4usize)?,
            les_degree: kv.get("les_degree", 5usize)?,
            riemann: riemann_from(kv, "riemann")?,
            t_end,
            cfl: kv.get("cfl", 0.2)?,
            dt: kv.get("dt", 0.0)?,
            clip: ClipBounds { lo: kv.get("clip_lo", -1.0)?, hi: kv.get("clip_hi", 20.0)? },
            spectrum_times: kv.list("spectrum_times", vec![t_end])?,
            spectrum_resolution: kv.get("spectrum_resolution", 0usize)?,
            batch_size: kv.get("batch_size", 64usize)?,
            dns_substeps: kv.get("dns_substeps", 8usize)?,
            dns_riemann: riemann_from(kv, "dns_riemann")?,
        };
        kv.finish()?;
        if s.mode.starts_with("ann") && s.checkpoint.is_none() {
            return Err(usage(format!("mode `{}` needs a `checkpoint`", s.mode)));
        }
        if !(s.clip.lo <= s.clip.hi) || s.dns_substeps == 0 {
            return Err(usage("need clip_lo <= clip_hi and dns_substeps >= 1"));
        }
        Ok(s)
    }

    pub fn echo(&self) -> Echo {
        let mut e = Echo::default();
        e.put("initial", self.initial.display()).put("mode", &self.mode).put("cs", self.cs);
        if let Some(c) = &self.checkpoint {
            e.put("checkpoint", c.display());
        }
        e.put("les_elements_per_dir", self.les_elements_per_dir)
            .put("les_degree", self.les_degree)
            .put("riemann", self.riemann.name())
            .put("t_end", self.t_end)
            .put("cfl", self.cfl)
            .put("dt", self.dt)
            .put("clip_lo", self.clip.lo)
            .put("clip_hi", self.clip.hi)
            .put("spectrum_times", join(&self.spectrum_times))
            .put("spectrum_resolution", self.spectrum_resolution)
            .put("batch_size", self.batch_size)
            .put("dns_substeps", self.dns_substeps)
            .put("dns_riemann", self.dns_riemann.name());
        e
    }

    fn run_config(&self, gas: GasModel) -> LesRunConfig {
        let mut c = LesRunConfig::new(gas, self.riemann, self.t_end);
        c.cfl = self.cfl;
        c.dt = (self.dt > 0.0).then_some(self.dt);
        c.spectrum_times = self.spectrum_times.clone();
        c.resample_n = self.spectrum_resolution;
        c.batch_size = self.batch_size;
        c
    }

    fn filter_for(&self, dns: &SolutionField) -> CliResult<FilterConfig> {
        let ne = dns.mesh.elements_per_dir;
        if ne % self.les_elements_per_dir != 0 {
            return Err(usage(format!("{ne} DNS elements per direction do not nest {} LES elements", self.les_elements_per_dir)));
        }
        Ok(FilterConfig {
            ratio: ne / self.les_elements_per_dir,
            n_dns: dns.basis.degree,
            n_les: self.les_degree,
            les_mesh: CartesianMesh::new(self.les_elements_per_dir, dns.mesh.domain_length)?,
        })
    }
}

/// Feature set recorded in a checkpoint's training-config echo.
pub fn checkpoint_features(ck: &Checkpoint) -> CliResult<FeatureSet> {
    let kv = KeyValues::parse(&ck.config_echo)?;
    FeatureSet::from_index(kv.get("feature_set", 1u32)?).map_err(|e| usage(e.to_string()))
}

/// Perfect LES from a DNS state: runs the DNS with `substeps` steps per LES
/// step to archive the exact closure at every LES stage time, then runs the
/// LES with that source. The LES step is `dt_les`, or the CFL step when `None`.
pub fn perfect_les(
    dns: &SolutionField,
    dns_gas: GasModel,
    filter: FilterConfig,
    cfg: &LesRunConfig,
    dns_riemann: RiemannVariant,
    dt_les: Option<f64>,
    substeps: usize,
) -> CliResult<(LesOutcome, ClosureArchive)> {
    let projector = Projector::new(filter)?;
    let les0 = projector.apply(dns)?;
    let dt_max = match dt_les {
        Some(dt) => dt,
        None => stable_timestep(&les0, &cfg.gas, cfg.cfl)?,
    };
    let (n, dt) = fixed_steps(les0.time, cfg.t_end, dt_max)?;
    let times = les_stage_times(les0.time, dt, n);
    let mut les_op = DgOperator::for_field(&les0, cfg.gas, cfg.riemann)?;
    let (archive, _) = record_closure_archive(
        dns,
        dns_gas,
        dns_riemann,
        &projector,
        &mut les_op,
        dt / substeps as f64,
        substeps * n,
        &times,
    )?;
    let mut run_cfg = cfg.clone();
    run_cfg.dt = Some(dt);
    let outcome = les_run(&les0, ClosureMode::Perfect(&archive), &run_cfg)?;
    Ok((outcome, archive))
}

pub fn run(settings: &LesSettings, out: &Path) -> CliResult<LesOutcome> {
    let snap = Snapshot::read(&settings.initial)?;
    if snap.header.kind != PayloadKind::State {
        return Err(usage(format!("{} holds a tendency, not a state", settings.initial.display())));
    }
    let gas = snap.header.gas;
    let field = snap.to_field()?;
    let is_les = field.mesh.elements_per_dir == settings.les_elements_per_dir && field.basis.degree == settings.les_degree;
    let cfg = settings.run_config(gas);
    let outcome = if settings.mode == "perfect" {
        if is_les {
            return Err(usage("perfect mode needs a DNS snapshot to build its closure archive"));
        }
        let filter = settings.filter_for(&field)?;
        let dt = (settings.dt > 0.0).then_some(settings.dt);
        perfect_les(&field, gas, filter, &cfg, settings.dns_riemann, dt, settings.dns_substeps)?.0
    } else {
        let initial = if is_les { field } else { Projector::new(settings.filter_for(&field)?)?.apply(&field)? };
        let mut ck = match &settings.checkpoint {
            Some(p) if settings.mode.starts_with("ann") => Some(Checkpoint::read(p)?),
            _ => None,
        };
        let mode = match (settings.mode.as_str(), ck.as_mut()) {
            ("none", _) => ClosureMode::None,
            ("smagorinsky", _) => ClosureMode::Smagorinsky { cs: settings.cs },
            ("op-eddy", _) => ClosureMode::OpEddy { clip: settings.clip },
            ("ann-direct", Some(ck)) => {
                let features = checkpoint_features(ck)?;
                ClosureMode::AnnDirect { net: &mut ck.network, features }
            }
            ("ann-eddy", Some(ck)) => {
                let features = checkpoint_features(ck)?;
                ClosureMode::AnnEddy { net: &mut ck.network, features, clip: settings.clip }
            }
            (m, _) => return Err(usage(format!("mode `{m}` needs a `checkpoint`"))),
        };
        les_run(&initial, mode, &cfg)?
    };
    write_outputs(settings, &outcome, gas, snap.header.seed, out)?;
    Ok(outcome)
}

fn write_outputs(settings: &LesSettings, o: &LesOutcome, gas: GasModel, seed: u64, out: &Path) -> CliResult<()> {
    let mut ke = Table::new(&["t", "ke"]);
    for &(t, e) in &o.trace.points {
        ke.push_floats(&[t, e]);
    }
    ke.write(&out.join("ke.csv"))?;
    spectra_table(&o.spectra).write(&out.join("spectra.csv"))?;
    if settings.mode == "perfect" {
        let mut rec = Table::new(&["t", "relative_l2"]);
        for &(t, e) in &o.recovery {
            rec.push_floats(&[t, e]);
        }
        rec.write(&out.join("recovery.csv"))?;
    }
    Snapshot::from_field(&o.state, gas, seed, PayloadKind::State).write(&out.join("final_state.dhit"))?;
    let mut m = settings.echo();
    m.put("dt_used", fmt_f64(o.dt)).put("steps", o.steps);
    if let Some((lo, hi)) = o.viscosity_range {
        m.put("mu_min", fmt_f64(lo)).put("mu_max", fmt_f64(hi));
    }
    write_atomic(&out.join("manifest.txt"), m.render().as_bytes())
}
