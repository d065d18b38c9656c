//! `extract`: exact closure samples from DNS archives, split into training,
//! validation and hidden test datasets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lesnet_core::basis::CartesianMesh;
use lesnet_core::dgsem::DgOperator;
use lesnet_core::filter::{
    element_samples, exact_closure, feature_label_correlations, ClosureSample, FilterConfig, Projector,
};
use lesnet_core::flux::RiemannVariant;
use lesnet_core::metrics::{energy_spectrum, kinetic_energy, SpectrumSeries};

use crate::commands::dns::{read_index, riemann_from};
use crate::config::{join, Echo, KeyValues};
use crate::error::{usage, CliError, CliResult};
use crate::formats::{Dataset, Snapshot};
use crate::io::{fmt_f64, write_atomic, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSettings {
    /// `runs = dir, dir, ...`: DNS output directories; the run id is the position.
    pub runs: Vec<PathBuf>,
    /// `train_runs = 0, 1, 2, 3`
    pub train_runs: Vec<u32>,
    /// `validation_runs = 4`
    pub validation_runs: Vec<u32>,
    /// `test_runs = 5`, the hidden test run.
    pub test_runs: Vec<u32>,
    /// `les_elements_per_dir = 4`
    pub les_elements_per_dir: usize,
    /// `les_degree = 5`
    pub les_degree: usize,
    /// `riemann = roe-lowdiss` of the LES operator.
    pub riemann: RiemannVariant,
    /// `sample_start = 1.0`, `sample_end = 2.0`
    pub window: (f64, f64),
}

impl ExtractSettings {
    /// Relative run directories resolve against `dir`.
    pub fn from_kv(kv: &KeyValues, dir: &Path) -> CliResult<Self> {
        let s = Self {
            runs: kv.list::<String>("runs", vec![])?.into_iter().map(|r| dir.join(r)).collect(),
            train_runs: kv.list("train_runs", vec![0, 1, 2, 3])?,
            validation_runs: kv.list("validation_runs", vec![4])?,
            test_runs: kv.list("test_runs", vec![5])?,
            les_elements_per_dir: kv.get("les_elements_per_dir", 4usize)?,
            les_degree: kv.get("les_degree", 5usize)?,
            riemann: riemann_from(kv, "riemann")?,
            window: (kv.get("sample_start", 1.0)?, kv.get("sample_end", 2.0)?),
        };
        kv.finish()?;
        s.check_split()?;
        Ok(s)
    }

    /// Every run in exactly one split, every split id a listed run.
    pub fn check_split(&self) -> CliResult<()> {
        if self.runs.is_empty() {
            return Err(usage("`runs` lists no DNS directories"));
        }
        let mut seen = BTreeSet::new();
        for (name, ids) in self.splits() {
            if ids.is_empty() {
                return Err(usage(format!("split `{name}` is empty")));
            }
            for &id in ids {
                if id as usize >= self.runs.len() {
                    return Err(usage(format!("split `{name}` names run {id}, only {} runs listed", self.runs.len())));
                }
                if !seen.insert(id) {
                    return Err(usage(format!("run {id} appears in more than one split")));
                }
            }
        }
        Ok(())
    }

    pub fn splits(&self) -> [(&'static str, &[u32]); 3] {
        [("train", &self.train_runs), ("validation", &self.validation_runs), ("test", &self.test_runs)]
    }

    pub fn echo(&self) -> Echo {
        let mut e = Echo::default();
        let runs: Vec<String> = self.runs.iter().map(|p| p.display().to_string()).collect();
        e.put("runs", runs.join(", "))
            .put("train_runs", join(&self.train_runs))
            .put("validation_runs", join(&self.validation_runs))
            .put("test_runs", join(&self.test_runs))
            .put("les_elements_per_dir", self.les_elements_per_dir)
            .put("les_degree", self.les_degree)
            .put("riemann", self.riemann.name())
            .put("sample_start", self.window.0)
            .put("sample_end", self.window.1);
        e
    }
}

#[derive(Debug, Clone)]
pub struct ExtractReport {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Closure samples of one DNS run plus the energy and spectra of its filtered field.
#[derive(Debug, Clone, Default)]
pub struct RunExtract {
    pub samples: Vec<ClosureSample>,
    pub filtered_ke: Vec<(f64, f64)>,
    pub filtered_spectra: Vec<SpectrumSeries>,
}

/// Extracts every archived time of one DNS run inside the window.
pub fn run_samples(dir: &Path, run: u32, settings: &ExtractSettings) -> CliResult<RunExtract> {
    let index = read_index(dir)?;
    let (t0, t1) = settings.window;
    let mut out = RunExtract::default();
    let mut setup: Option<(Projector, DgOperator)> = None;
    for entry in index.iter().filter(|e| e.time >= t0 - 1e-9 && e.time <= t1 + 1e-9) {
        let state = Snapshot::read(&entry.state)?;
        let tend = Snapshot::read(&entry.tendency)?;
        if state.header.kind != crate::formats::PayloadKind::State
            || tend.header.kind != crate::formats::PayloadKind::Tendency
        {
            return Err(CliError::Format { path: entry.state.clone(), msg: "snapshot kinds swapped".into() });
        }
        let (sf, tf) = (state.to_field()?, tend.to_field()?);
        if setup.is_none() {
            let h = &state.header;
            if h.elements_per_dir as usize % settings.les_elements_per_dir != 0 {
                return Err(usage(format!(
                    "DNS mesh of {} elements per direction does not nest {} LES elements",
                    h.elements_per_dir, settings.les_elements_per_dir
                )));
            }
            let cfg = FilterConfig {
                ratio: h.elements_per_dir as usize / settings.les_elements_per_dir,
                n_dns: h.degree as usize,
                n_les: settings.les_degree,
                les_mesh: CartesianMesh::new(settings.les_elements_per_dir, h.domain_length)?,
            };
            let projector = Projector::new(cfg.clone()).map_err(|e| usage(e.to_string()))?;
            let les_op = DgOperator::new(cfg.les_mesh, projector.les_basis().clone(), h.gas, settings.riemann)?;
            setup = Some((projector, les_op));
        }
        let (projector, les_op) = setup.as_mut().expect("set above");
        projector.config().check_nested(&sf)?;
        let terms = exact_closure(&sf, &tf, projector, les_op)?;
        let ub = &terms.filtered_state;
        out.filtered_ke.push((entry.time, kinetic_energy(ub)));
        out.filtered_spectra.push(energy_spectrum(ub, 2 * ub.mesh.elements_per_dir * ub.basis.np())?);
        out.samples.extend(element_samples(&terms, run, entry.time));
    }
    if out.samples.is_empty() {
        return Err(usage(format!("{}: no snapshots in [{t0}, {t1}]", dir.display())));
    }
    Ok(out)
}

/// Filtered-DNS energy trace and spectra in the layout of an LES run directory.
fn write_trace(dir: &Path, run: u32, ex: &RunExtract) -> CliResult<()> {
    let mut ke = Table::new(&["t", "ke"]);
    for &(t, e) in &ex.filtered_ke {
        ke.push_floats(&[t, e]);
    }
    ke.write(&dir.join("ke.csv"))?;
    spectra_table(&ex.filtered_spectra).write(&dir.join("spectra.csv"))?;
    let manifest = format!("mode = filtered-dns\nrun = {run}\n");
    write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())
}

/// `(t, k, E)` rows of a spectrum series.
pub fn spectra_table(spectra: &[SpectrumSeries]) -> Table {
    let mut t = Table::new(&["t", "k", "E"]);
    for sp in spectra {
        for (k, e) in sp.energies.iter().enumerate() {
            t.push(vec![fmt_f64(sp.time), k.to_string(), fmt_f64(*e)]);
        }
    }
    t
}

pub fn run(settings: &ExtractSettings, out: &Path) -> CliResult<ExtractReport> {
    let mut per_split: [Vec<ClosureSample>; 3] = Default::default();
    for (slot, (_, ids)) in per_split.iter_mut().zip(settings.splits()) {
        for &id in ids {
            let ex = run_samples(&settings.runs[id as usize], id, settings)?;
            log::info!("extract: run {id}: {} samples", ex.samples.len());
            write_trace(&out.join(format!("filtered_run{id}")), id, &ex)?;
            slot.extend(ex.samples);
        }
    }
    let p = settings.les_degree + 1;
    let [train, validation, test] = per_split.map(|samples| Dataset { p, samples });
    // structural isolation of the hidden test run
    let hidden: BTreeSet<u32> = test.run_ids().into_iter().collect();
    if train.run_ids().iter().chain(&validation.run_ids()).any(|id| hidden.contains(id)) {
        return Err(CliError::Runtime("hidden test run leaked into a training split".into()));
    }
    train.write(&out.join("train.ctrn"))?;
    validation.write(&out.join("validation.ctrn"))?;
    test.write(&out.join("test.ctrn"))?;

    let mut table = Table::new(&["split", "feature", "cc_1", "cc_2", "cc_3"]);
    for (name, ds) in [("train", &train), ("test", &test)] {
        for (feature, cc) in feature_label_correlations(&ds.samples)? {
            let mut row = vec![name.to_string(), feature];
            row.extend(cc.iter().map(|c| c.map_or_else(|| "nan".to_string(), fmt_f64)));
            table.push(row);
        }
    }
    table.write(&out.join("correlations.csv"))?;

    let mut manifest = settings.echo();
    manifest
        .put("hidden_test_runs", join(&settings.test_runs))
        .put("train_samples", train.samples.len())
        .put("validation_samples", validation.samples.len())
        .put("test_samples", test.samples.len());
    write_atomic(&out.join("manifest.txt"), manifest.render().as_bytes())?;
    Ok(ExtractReport { train, validation, test })
}
