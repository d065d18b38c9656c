//! `train`: fits a network to a closure dataset and scores it on the hidden test run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lesnet_core::basis::NodalBasis;
use lesnet_core::filter::ClosureSample;
use lesnet_core::les::{dissipativity_check, DissipativityStats};
use lesnet_core::metrics::{cross_correlation, is_inner};
use lesnet_core::nn::{infer, train, Arch, CostAggregation, CurveRow, FeatureSet, NetShape, Network, TrainConfig};

use crate::config::{Echo, Flag, KeyValues};
use crate::error::{usage, CliError, CliResult};
use crate::formats::{Checkpoint, Dataset};
use crate::io::{fmt_f64, write_atomic, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    /// `train = train.ctrn`, `validation = validation.ctrn`, `test = test.ctrn`
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
    /// `arch = RNN4`
    pub arch: Arch,
    /// `nf1 = 16`, `nf2 = 32`
    pub nf1: usize,
    pub nf2: usize,
    /// `batch_size = 32`, `epochs = 50`, `base_lr = 1e-3`, `decay_rate = 0.95`,
    /// `decay_steps = 0` (one epoch), `augment = true`, `feature_set = 1`,
    /// `cost = sum`, `standardize = true`
    pub config: TrainConfig,
    /// `eval_batch_size = 32`: mini-batch of the test-set dissipativity check.
    pub eval_batch_size: usize,
}

impl TrainSettings {
    pub fn from_kv(kv: &KeyValues, dir: &Path) -> CliResult<Self> {
        let d = TrainConfig::default();
        let path = |key: &str, default: &str| -> CliResult<PathBuf> {
            let v: String = kv.get(key, default.to_string())?;
            Ok(dir.join(v))
        };
        let arch_tag: String = kv.get("arch", "RNN4".to_string())?;
        let arch = Arch::parse(&arch_tag).map_err(|e| usage(e.to_string()))?;
        let feature_set =
            FeatureSet::from_index(kv.get("feature_set", 1u32)?).map_err(|e| usage(e.to_string()))?;
        let cost = match kv.raw("cost").unwrap_or("sum") {
            "sum" => CostAggregation::Sum,
            "mean" => CostAggregation::Mean,
            other => return Err(usage(format!("config key `cost`: expected sum or mean, got `{other}`"))),
        };
        let decay_steps: usize = kv.get("decay_steps", 0)?;
        let config = TrainConfig {
            batch_size: kv.get("batch_size", d.batch_size)?,
            epochs: kv.get("epochs", d.epochs)?,
            base_lr: kv.get("base_lr", d.base_lr)?,
            decay_rate: kv.get("decay_rate", d.decay_rate)?,
            decay_steps: (decay_steps > 0).then_some(decay_steps),
            seed: kv.get("seed", d.seed)?,
            augment: kv.get("augment", Flag(d.augment))?.0,
            feature_set,
            cost,
            standardize: kv.get("standardize", Flag(d.standardize))?.0,
        };
        let s = Self {
            train: path("train", "train.ctrn")?,
            validation: path("validation", "validation.ctrn")?,
            test: path("test", "test.ctrn")?,
            arch,
            nf1: kv.get("nf1", 16usize)?,
            nf2: kv.get("nf2", 32usize)?,
            config,
            eval_batch_size: kv.get("eval_batch_size", 32usize)?,
        };
        kv.finish()?;
        s.config.validate().map_err(|e| usage(e.to_string()))?;
        if s.nf1 == 0 || s.nf2 == 0 {
            return Err(usage("feature-map widths must be positive"));
        }
        Ok(s)
    }

    pub fn echo(&self) -> Echo {
        let c = &self.config;
        let mut e = Echo::default();
        e.put("train", self.train.display())
            .put("validation", self.validation.display())
            .put("test", self.test.display())
            .put("arch", self.arch.name())
            .put("nf1", self.nf1)
            .put("nf2", self.nf2)
            .put("batch_size", c.batch_size)
            .put("epochs", c.epochs)
            .put("base_lr", c.base_lr)
            .put("decay_rate", c.decay_rate)
            .put("decay_steps", c.decay_steps.unwrap_or(0))
            .put("seed", c.seed)
            .put("augment", c.augment)
            .put("feature_set", c.feature_set.index())
            .put("cost", if c.cost == CostAggregation::Sum { "sum" } else { "mean" })
            .put("standardize", c.standardize)
            .put("eval_batch_size", self.eval_batch_size);
        e
    }

    pub fn shape(&self) -> NetShape {
        let set = self.config.feature_set;
        NetShape::new(self.arch, self.nf1, self.nf2).with_channels(set.features().len(), set.labels().len())
    }
}

/// Overall, inner and surface correlation of one predicted label component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentCc {
    pub component: usize,
    pub overall: Option<f64>,
    pub inner: Option<f64>,
    pub surface: Option<f64>,
}

/// Correlations of raw-unit predictions (`labels().len() · p³` per sample)
/// against the sample labels, per predicted component.
pub fn score(pred: &[Vec<f64>], samples: &[ClosureSample], set: FeatureSet, p: usize) -> Vec<ComponentCc> {
    let p3 = p * p * p;
    set.labels()
        .iter()
        .enumerate()
        .map(|(slot, &c)| {
            let mut parts: [(Vec<f64>, Vec<f64>); 3] = Default::default();
            for (pr, s) in pred.iter().zip(samples) {
                for site in 0..p3 {
                    let (x, y) = (pr[slot * p3 + site], s.labels[c * p3 + site]);
                    let part = if is_inner(p, site) { 1 } else { 2 };
                    for k in [0, part] {
                        parts[k].0.push(x);
                        parts[k].1.push(y);
                    }
                }
            }
            let cc = |k: usize| cross_correlation(&parts[k].0, &parts[k].1);
            ComponentCc { component: c + 1, overall: cc(0), inner: cc(1), surface: cc(2) }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub curves: Vec<CurveRow>,
    pub test_cc: Vec<ComponentCc>,
    /// `None` for feature sets that do not predict all three components.
    pub dissipativity: Option<DissipativityStats>,
}

/// Rejects test data whose run ids appear in the training or validation data.
pub fn check_isolation(train: &Dataset, validation: &Dataset, test: &Dataset) -> CliResult<()> {
    let seen: BTreeSet<u32> = train.run_ids().into_iter().chain(validation.run_ids()).collect();
    let leaked: Vec<u32> = test.run_ids().into_iter().filter(|id| seen.contains(id)).collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("hidden test runs {leaked:?} also appear in training data")))
    }
}

pub fn run_on(settings: &TrainSettings, train_ds: &Dataset, val_ds: &Dataset, test_ds: &Dataset) -> CliResult<TrainReport> {
    check_isolation(train_ds, val_ds, test_ds)?;
    let p = train_ds.p;
    if val_ds.p != p || test_ds.p != p {
        return Err(usage("datasets disagree on the element size p"));
    }
    let w3 = NodalBasis::new(p - 1)?.weights3();
    let mut net = Network::build(settings.shape(), settings.config.seed)?;
    let curves = train(&mut net, &train_ds.samples, &val_ds.samples, &w3, &settings.config)?;
    let set = settings.config.feature_set;
    let pred = infer(&mut net, &test_ds.samples, set, settings.eval_batch_size)?;
    let test_cc = score(&pred, &test_ds.samples, set, p);
    let dissipativity = if set.labels().len() == 3 {
        Some(dissipativity_check(&mut net, &test_ds.samples, set, &w3, settings.eval_batch_size)?)
    } else {
        None
    };
    let checkpoint = Checkpoint {
        network: net,
        config_echo: settings.echo().render(),
        seed: settings.config.seed,
        epochs_done: settings.config.epochs as u64,
    };
    Ok(TrainReport { checkpoint, curves, test_cc, dissipativity })
}

pub fn run(settings: &TrainSettings, out: &Path) -> CliResult<TrainReport> {
    let train_ds = Dataset::read(&settings.train)?;
    let val_ds = Dataset::read(&settings.validation)?;
    let test_ds = Dataset::read(&settings.test)?;
    let report = run_on(settings, &train_ds, &val_ds, &test_ds)?;
    report.checkpoint.write(&out.join("checkpoint.nnck"))?;
    let mut curves = Table::new(&["epoch", "train", "validation"]);
    for r in &report.curves {
        curves.push(vec![r.epoch.to_string(), fmt_f64(r.train), fmt_f64(r.validation)]);
    }
    curves.write(&out.join("curves.csv"))?;
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), fmt_f64);
    let mut cc = Table::new(&["component", "overall", "inner", "surface"]);
    for c in &report.test_cc {
        cc.push(vec![c.component.to_string(), opt(c.overall), opt(c.inner), opt(c.surface)]);
    }
    cc.write(&out.join("test_cc.csv"))?;
    let mut manifest = settings.echo();
    if let Some(d) = &report.dissipativity {
        let mut t = Table::new(&["batch", "energy_transfer_ratio"]);
        for (i, r) in d.ratios.iter().enumerate() {
            t.push(vec![i.to_string(), fmt_f64(*r)]);
        }
        t.write(&out.join("dissipativity.csv"))?;
        manifest.put("dissipative_fraction", fmt_f64(d.positive_fraction())).put("skipped_batches", d.skipped);
    }
    manifest.put("hidden_test_runs", crate::config::join(&test_ds.run_ids()));
    write_atomic(&out.join("manifest.txt"), manifest.render().as_bytes())?;
    Ok(report)
}
