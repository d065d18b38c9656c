//! Cost, learning-rate schedule, cyclic augmentation and the mini-batch training loop.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use super::{scale_channels, Arch, Mode, Network, Tensor};
use crate::error::{config_err, Error, Result};
use crate::filter::{ClosureSample, FEATURE_CHANNELS, LABEL_CHANNELS};

/// Input/label channel subsets of the feature-sensitivity study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    /// Velocities and LES operator components.
    VelocityOperator,
    Velocity,
    Operator,
    /// First velocity and operator component, first label only.
    FirstComponent,
}

impl FeatureSet {
    /// Numbering of the study; set 4 needs density, pressure and energy channels
    /// that closure samples do not carry.
    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            1 => Ok(Self::VelocityOperator),
            2 => Ok(Self::Velocity),
            3 => Ok(Self::Operator),
            4 => Err(config_err(
                "feature set 4 needs density, pressure and energy channels, which closure samples do not store",
            )),
            5 => Ok(Self::FirstComponent),
            _ => Err(config_err(alloc::format!("feature set must be 1-5, got {i}"))),
        }
    }

    pub fn index(&self) -> u32 {
        match self {
            Self::VelocityOperator => 1,
            Self::Velocity => 2,
            Self::Operator => 3,
            Self::FirstComponent => 5,
        }
    }

    pub fn features(&self) -> &'static [usize] {
        match self {
            Self::VelocityOperator => &[0, 1, 2, 3, 4, 5],
            Self::Velocity => &[0, 1, 2],
            Self::Operator => &[3, 4, 5],
            Self::FirstComponent => &[0, 3],
        }
    }

    pub fn labels(&self) -> &'static [usize] {
        match self {
            Self::FirstComponent => &[0],
            _ => &[0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostAggregation {
    Sum,
    /// Sum divided by batch size, channel count and the quadrature weight sum.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_rate: f64,
    /// Optimizer steps per decay period; `None` means one epoch.
    pub decay_steps: Option<usize>,
    pub seed: u64,
    pub augment: bool,
    pub feature_set: FeatureSet,
    pub cost: CostAggregation,
    /// Rescale each channel group (velocities, operators, labels) to unit RMS.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            base_lr: 1e-3,
            decay_rate: 0.95,
            decay_steps: None,
            seed: 0,
            augment: true,
            feature_set: FeatureSet::VelocityOperator,
            cost: CostAggregation::Sum,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err("batch size must be at least 1"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(config_err("learning rate must be positive"));
        }
        if !(self.decay_rate > 0.0) {
            return Err(config_err("decay rate must be positive"));
        }
        if self.decay_steps == Some(0) {
            return Err(config_err("decay steps must be positive"));
        }
        Ok(())
    }
}

/// Mean per-sample cost after each epoch; epoch 0 is the initial evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

/// Exponentially decayed learning rate.
pub fn lr_schedule(step: u64, base_lr: f64, decay_rate: f64, decay_steps: u64) -> f64 {
    base_lr * libm::pow(decay_rate, step as f64 / decay_steps as f64)
}

/// LGL-weighted squared error summed over batch, channels and sites, and its
/// gradient with respect to `pred`.
pub fn cost_lgl(pred: &Tensor, label: &Tensor, weights3: &[f64], agg: CostAggregation) -> Result<(f64, Tensor)> {
    if pred.data.len() != label.data.len() || pred.channels != label.channels {
        return Err(Error::Shape { expected: pred.data.len(), got: label.data.len() });
    }
    if weights3.len() != pred.sites() {
        return Err(Error::Shape { expected: pred.sites(), got: weights3.len() });
    }
    let norm = match agg {
        CostAggregation::Sum => 1.0,
        CostAggregation::Mean => {
            let wsum: f64 = weights3.iter().sum();
            1.0 / ((pred.batch * pred.channels) as f64 * wsum)
        }
    };
    let mut grad = Tensor::zeros(pred.batch, pred.channels, pred.p);
    let mut cost = 0.0;
    for ((chunk_p, chunk_l), chunk_g) in pred
        .data
        .chunks(weights3.len())
        .zip(label.data.chunks(weights3.len()))
        .zip(grad.data.chunks_mut(weights3.len()))
    {
        for (((p, l), g), w) in chunk_p.iter().zip(chunk_l).zip(chunk_g).zip(weights3) {
            let e = p - l;
            cost += e * e * w;
            *g = 2.0 * e * w * norm;
        }
    }
    Ok((cost * norm, grad))
}

/// The three cyclic relabelings (u, v, w) -> (v, w, u) -> (w, u, v), applied
/// identically to the velocity, operator and label channel triples.
pub fn augment_cyclic(sample: &ClosureSample) -> [ClosureSample; 3] {
    [cycle(sample, 0), cycle(sample, 1), cycle(sample, 2)]
}

fn cycle(sample: &ClosureSample, shift: usize) -> ClosureSample {
    let p3 = sample.labels.len() / LABEL_CHANNELS;
    let mut out = sample.clone();
    for c in 0..3 {
        let src = (c + shift) % 3;
        for group in 0..FEATURE_CHANNELS / 3 {
            let (d, s) = ((group * 3 + c) * p3, (group * 3 + src) * p3);
            out.features[d..d + p3].copy_from_slice(&sample.features[s..s + p3]);
        }
        out.labels[c * p3..(c + 1) * p3].copy_from_slice(&sample.labels[src * p3..(src + 1) * p3]);
    }
    out
}

/// Channel-selected, scaled training arrays.
struct Prepared {
    count: usize,
    p: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    cin: usize,
    cout: usize,
}

impl Prepared {
    fn new(samples: &[&ClosureSample], set: FeatureSet, p: usize, in_scale: &[f64], out_scale: &[f64]) -> Self {
        let p3 = p * p * p;
        let (fs, ls) = (set.features(), set.labels());
        let mut features = Vec::with_capacity(samples.len() * fs.len() * p3);
        let mut labels = Vec::with_capacity(samples.len() * ls.len() * p3);
        for s in samples {
            for (i, &c) in fs.iter().enumerate() {
                features.extend(s.features[c * p3..(c + 1) * p3].iter().map(|v| v / in_scale[i]));
            }
            for (i, &c) in ls.iter().enumerate() {
                labels.extend(s.labels[c * p3..(c + 1) * p3].iter().map(|v| v / out_scale[i]));
            }
        }
        Self { count: samples.len(), p, features, labels, cin: fs.len(), cout: ls.len() }
    }

    fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let p3 = self.p * self.p * self.p;
        let (nf, nl) = (self.cin * p3, self.cout * p3);
        let mut x = Vec::with_capacity(idx.len() * nf);
        let mut y = Vec::with_capacity(idx.len() * nl);
        for &i in idx {
            x.extend_from_slice(&self.features[i * nf..(i + 1) * nf]);
            y.extend_from_slice(&self.labels[i * nl..(i + 1) * nl]);
        }
        (
            Tensor { batch: idx.len(), channels: self.cin, p: self.p, data: x },
            Tensor { batch: idx.len(), channels: self.cout, p: self.p, data: y },
        )
    }
}

fn sample_p(samples: &[ClosureSample], weights3: &[f64]) -> Result<usize> {
    let p3 = weights3.len();
    let p = (1..=p3).find(|p| p * p * p >= p3).unwrap_or(0);
    if p * p * p != p3 {
        return Err(config_err("quadrature weights are not a cube"));
    }
    for s in samples {
        if s.features.len() != FEATURE_CHANNELS * p3 {
            return Err(Error::Shape { expected: FEATURE_CHANNELS * p3, got: s.features.len() });
        }
        if s.labels.len() != LABEL_CHANNELS * p3 {
            return Err(Error::Shape { expected: LABEL_CHANNELS * p3, got: s.labels.len() });
        }
    }
    Ok(p)
}

/// Root-mean-square of each selected channel group over the samples; feature
/// channels group as velocities (0..3) and operators (3..6), labels form one group.
fn group_scales(samples: &[ClosureSample], set: FeatureSet, p3: usize) -> (Vec<f64>, Vec<f64>) {
    let rms = |get: &dyn Fn(&ClosureSample) -> &[f64], channels: &[usize]| -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for smp in samples {
            let d = get(smp);
            for &c in channels {
                s += d[c * p3..(c + 1) * p3].iter().map(|v| v * v).sum::<f64>();
                n += p3;
            }
        }
        let r = libm::sqrt(s / n.max(1) as f64);
        if r > 0.0 && r.is_finite() {
            r
        } else {
            1.0
        }
    };
    let vel = rms(&|s| &s.features, &[0, 1, 2]);
    let op = rms(&|s| &s.features, &[3, 4, 5]);
    let lab = rms(&|s| &s.labels, &[0, 1, 2]);
    let input = set.features().iter().map(|&c| if c < 3 { vel } else { op }).collect();
    let output = vec![lab; set.labels().len()];
    (input, output)
}

/// Mean per-sample cost in inference mode.
fn evaluate(net: &mut Network, data: &Prepared, weights3: &[f64], cfg: &TrainConfig) -> Result<f64> {
    let idx: Vec<usize> = (0..data.count).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let (pred, _) = net.forward(&x, Mode::Infer)?;
        let (c, _) = cost_lgl(&pred, &y, weights3, cfg.cost)?;
        total += c * aggregation_factor(cfg.cost, chunk.len());
    }
    Ok(total / data.count as f64)
}

/// Converts a batch cost to a batch sum so epochs report comparable numbers.
fn aggregation_factor(agg: CostAggregation, batch: usize) -> f64 {
    match agg {
        CostAggregation::Sum => 1.0,
        CostAggregation::Mean => batch as f64,
    }
}

/// Splits a shuffled order into mini-batches, folding a trailing single sample
/// into the previous batch when batch normalization needs two.
fn batches(order: &[usize], size: usize, needs_pairs: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if needs_pairs && out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// Mini-batch Adam training. The network's scaling is set from the training
/// samples; cost curves have `epochs + 1` rows.
pub fn train(
    net: &mut Network,
    train_set: &[ClosureSample],
    validation_set: &[ClosureSample],
    weights3: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<CurveRow>> {
    cfg.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(config_err("training needs non-empty training and validation sets"));
    }
    let p = sample_p(train_set, weights3)?;
    sample_p(validation_set, weights3)?;
    let set = cfg.feature_set;
    if net.shape.in_channels != set.features().len() || net.shape.out_channels != set.labels().len() {
        return Err(config_err(alloc::format!(
            "network maps {} -> {} channels but feature set {} needs {} -> {}",
            net.shape.in_channels,
            net.shape.out_channels,
            set.index(),
            set.features().len(),
            set.labels().len()
        )));
    }
    let p3 = p * p * p;
    let (in_scale, out_scale) = if cfg.standardize {
        group_scales(train_set, set, p3)
    } else {
        (vec![1.0; set.features().len()], vec![1.0; set.labels().len()])
    };
    net.scaling.input.clone_from(&in_scale);
    net.scaling.output.clone_from(&out_scale);

    let augmented: Vec<ClosureSample>;
    let train_refs: Vec<&ClosureSample> = if cfg.augment {
        augmented = train_set.iter().flat_map(augment_cyclic).collect();
        augmented.iter().collect()
    } else {
        train_set.iter().collect()
    };
    let train_data = Prepared::new(&train_refs, set, p, &in_scale, &out_scale);
    let val_refs: Vec<&ClosureSample> = validation_set.iter().collect();
    let val_data = Prepared::new(&val_refs, set, p, &in_scale, &out_scale);

    let needs_pairs = matches!(net.shape.arch, Arch::Rnn(_));
    if needs_pairs && train_data.count < 2 {
        return Err(config_err("batch normalization needs at least two training samples"));
    }
    let mut order: Vec<usize> = (0..train_data.count).collect();
    let per_epoch = batches(&order, cfg.batch_size, needs_pairs).len() as u64;
    let decay_steps = cfg.decay_steps.map_or(per_epoch, |d| d as u64);

    let mut curves = Vec::with_capacity(cfg.epochs + 1);
    curves.push(CurveRow {
        epoch: 0,
        train: evaluate(net, &train_data, weights3, cfg)?,
        validation: evaluate(net, &val_data, weights3, cfg)?,
    });
    let mut grads = vec![0.0; net.num_params()];
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in batches(&order, cfg.batch_size, needs_pairs).into_iter().enumerate() {
            let (x, y) = train_data.batch(idx);
            let (pred, cache) = net.forward(&x, Mode::Train)?;
            let (cost, g) = cost_lgl(&pred, &y, weights3, cfg.cost)?;
            if !cost.is_finite() {
                return Err(Error::NonFiniteCost { epoch, batch: b });
            }
            total += cost * aggregation_factor(cfg.cost, idx.len());
            grads.iter_mut().for_each(|v| *v = 0.0);
            net.backward(&cache.expect("train mode caches"), &g, &mut grads)?;
            let lr = lr_schedule(step, cfg.base_lr, cfg.decay_rate, decay_steps);
            let Network { params, adam, .. } = net;
            adam.update(params, &grads, lr);
            step += 1;
        }
        curves.push(CurveRow {
            epoch,
            train: total / train_data.count as f64,
            validation: evaluate(net, &val_data, weights3, cfg)?,
        });
        log::debug!("epoch {epoch}: train {:.6e} validation {:.6e}", curves[epoch].train, curves[epoch].validation);
    }
    Ok(curves)
}

/// Predicted labels (unscaled, `labels().len() * p³` values each) for the selected features.
pub fn infer(net: &mut Network, samples: &[ClosureSample], set: FeatureSet, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    if net.shape.in_channels != set.features().len() {
        return Err(Error::Shape { expected: net.shape.in_channels, got: set.features().len() });
    }
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let p3 = first.labels.len() / LABEL_CHANNELS;
    let p = (1..=p3).find(|p| p * p * p >= p3).unwrap_or(0);
    let ones_in = vec![1.0; set.features().len()];
    let ones_out = vec![1.0; set.labels().len()];
    let refs: Vec<&ClosureSample> = samples.iter().collect();
    let data = Prepared::new(&refs, set, p, &ones_in, &ones_out);
    let mut out = Vec::with_capacity(samples.len());
    let idx: Vec<usize> = (0..data.count).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (mut x, _) = data.batch(chunk);
        scale_channels(&mut x, &net.scaling.input, true)?;
        let (mut y, _) = net.forward(&x, Mode::Infer)?;
        scale_channels(&mut y, &net.scaling.output, false)?;
        for b in 0..y.batch {
            out.push(y.sample(b).to_vec());
        }
    }
    Ok(out)
}
