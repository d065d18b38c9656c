//! Dense-tensor network engine: residual 3D CNNs of variable depth, the pointwise
//! MLP reference, LGL-weighted cost, Adam and the mini-batch training loop.

pub mod layers;
pub mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::error::{config_err, Error, Result};
pub use layers::{relu, relu_backward, BatchNorm, BnCache, Conv3d, Tensor};
pub use train::{
    augment_cyclic, cost_lgl, infer, lr_schedule, train, CostAggregation, CurveRow, FeatureSet, TrainConfig,
};

/// Widths of the three pointwise compression steps after the last residual block.
pub const COMPRESSION: [usize; 2] = [16, 8];
/// Hidden width of the pointwise reference network.
pub const MLP_HIDDEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Residual CNN with the given number of residual blocks.
    Rnn(usize),
    Mlp100,
}

impl Arch {
    pub const TAGS: [&'static str; 6] = ["RNN0", "RNN1", "RNN2", "RNN4", "RNN8", "MLP100"];

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "RNN0" => Ok(Self::Rnn(0)),
            "RNN1" => Ok(Self::Rnn(1)),
            "RNN2" => Ok(Self::Rnn(2)),
            "RNN4" => Ok(Self::Rnn(4)),
            "RNN8" => Ok(Self::Rnn(8)),
            "MLP100" => Ok(Self::Mlp100),
            _ => Err(config_err(alloc::format!(
                "unknown network tag `{tag}`, expected one of {}",
                Self::TAGS.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Rnn(d) => alloc::format!("RNN{d}"),
            Self::Mlp100 => String::from("MLP100"),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Shape parameters of a network; together with the seed they fix the initial weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub arch: Arch,
    pub in_channels: usize,
    pub out_channels: usize,
    pub nf1: usize,
    pub nf2: usize,
}

impl NetShape {
    pub fn new(arch: Arch, nf1: usize, nf2: usize) -> Self {
        Self { arch, in_channels: 6, out_channels: 3, nf1, nf2 }
    }

    pub fn with_channels(mut self, inputs: usize, outputs: usize) -> Self {
        self.in_channels = inputs;
        self.out_channels = outputs;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub bn1: BatchNorm,
    pub conv1: Conv3d,
    pub bn2: BatchNorm,
    pub conv2: Conv3d,
}

impl ResidualBlock {
    /// `x + F(x)` with the preactivation branch `BN, ReLU, conv, BN, ReLU, conv`.
    pub fn forward(&mut self, params: &[f64], x: &Tensor, mode: Mode) -> Result<(Tensor, Option<BlockCache>)> {
        if x.channels != self.conv2.cout {
            return Err(Error::Shape { expected: self.conv2.cout, got: x.channels });
        }
        let train = mode == Mode::Train;
        let (a1, c1) = bn_apply(&mut self.bn1, params, x, train)?;
        let r1 = relu(&a1);
        let z1 = self.conv1.forward(params, &r1)?;
        let (a2, c2) = bn_apply(&mut self.bn2, params, &z1, train)?;
        let r2 = relu(&a2);
        let mut out = self.conv2.forward(params, &r2)?;
        layers::add_assign(&mut out, x);
        let cache = match (c1, c2) {
            (Some(bn1), Some(bn2)) => Some(BlockCache { bn1, a1, r1, bn2, a2, r2 }),
            _ => None,
        };
        Ok((out, cache))
    }

    /// Input gradient including the identity term; parameter gradients accumulate into `grads`.
    pub fn backward(&self, params: &[f64], cache: &BlockCache, gy: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        let mut g = self.conv2.backward(params, &cache.r2, gy, grads)?;
        g = relu_backward(&cache.a2, &g);
        g = self.bn2.backward(params, &cache.bn2, &g, grads);
        g = self.conv1.backward(params, &cache.r1, &g, grads)?;
        g = relu_backward(&cache.a1, &g);
        g = self.bn1.backward(params, &cache.bn1, &g, grads);
        layers::add_assign(&mut g, gy);
        Ok(g)
    }
}

/// Adam moments and step counter, laid out like the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected update.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}

/// Multiplicative input and output scales; the network itself sees `x / input[c]`
/// and its output is multiplied by `output[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl Scaling {
    pub fn identity(inputs: usize, outputs: usize) -> Self {
        Self { input: vec![1.0; inputs], output: vec![1.0; outputs] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// All trainable weights (one flat vector), batch-norm statistics and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub shape: NetShape,
    pub params: Vec<f64>,
    pub stem: Option<Conv3d>,
    pub blocks: Vec<ResidualBlock>,
    pub head_bn: Option<BatchNorm>,
    /// Pointwise layers, ReLU between consecutive ones.
    pub head: Vec<Conv3d>,
    pub adam: Adam,
    pub scaling: Scaling,
}

/// Activations of one residual block saved by a training-mode pass.
pub struct BlockCache {
    bn1: BnCache,
    a1: Tensor,
    r1: Tensor,
    bn2: BnCache,
    a2: Tensor,
    r2: Tensor,
}

/// Activations saved by a training-mode forward pass.
pub struct Cache {
    input: Tensor,
    blocks: Vec<BlockCache>,
    head_bn: Option<(BnCache, Tensor)>,
    /// Input of every head layer (after the ReLU for all but the first).
    head_in: Vec<Tensor>,
    /// Pre-activation of every head layer except the last.
    head_pre: Vec<Tensor>,
}

impl Network {
    /// Builds a network with Glorot-uniform kernels, zero biases, unit BN scale.
    pub fn build(shape: NetShape, seed: u64) -> Result<Self> {
        if shape.in_channels == 0 || shape.out_channels == 0 {
            return Err(config_err("network needs at least one input and one output channel"));
        }
        let mut offset = 0;
        let mut conv = |cin, cout, k| -> Result<Conv3d> {
            let c = Conv3d::new(cin, cout, k, offset)?;
            offset = c.end();
            Ok(c)
        };
        let mut stem = None;
        let mut blocks = Vec::new();
        let mut head = Vec::new();
        let mut bn_specs = Vec::new();
        match shape.arch {
            Arch::Rnn(d) => {
                if shape.nf1 == 0 || shape.nf2 == 0 {
                    return Err(config_err("feature-map widths must be positive"));
                }
                stem = Some(conv(shape.in_channels, shape.nf1, 3)?);
                for _ in 0..d {
                    // BN offsets are assigned after all convolutions
                    let c1 = conv(shape.nf1, shape.nf2, 3)?;
                    let c2 = conv(shape.nf2, shape.nf1, 3)?;
                    blocks.push((c1, c2));
                }
                head.push(conv(shape.nf1, COMPRESSION[0], 1)?);
                head.push(conv(COMPRESSION[0], COMPRESSION[1], 1)?);
                head.push(conv(COMPRESSION[1], shape.out_channels, 1)?);
                for _ in 0..d {
                    bn_specs.push(shape.nf1);
                    bn_specs.push(shape.nf2);
                }
                bn_specs.push(shape.nf1);
            }
            Arch::Mlp100 => {
                head.push(conv(shape.in_channels, MLP_HIDDEN, 1)?);
                head.push(conv(MLP_HIDDEN, shape.out_channels, 1)?);
            }
        }
        let mut bns = Vec::new();
        for c in bn_specs {
            let bn = BatchNorm::new(c, offset);
            offset = bn.end();
            bns.push(bn);
        }
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all_convs = stem.iter().chain(blocks.iter().flat_map(|(a, b)| [a, b])).chain(head.iter());
        for c in all_convs {
            let k3 = c.k * c.k * c.k;
            let limit = libm::sqrt(6.0 / ((c.cin + c.cout) * k3) as f64);
            for w in &mut params[c.w..c.w + c.weight_len()] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        for bn in &bns {
            params[bn.gamma..bn.gamma + bn.channels].iter_mut().for_each(|g| *g = 1.0);
        }
        let mut bn_iter = bns.into_iter();
        let blocks = blocks
            .into_iter()
            .map(|(conv1, conv2)| ResidualBlock {
                bn1: bn_iter.next().expect("bn per block"),
                conv1,
                bn2: bn_iter.next().expect("bn per block"),
                conv2,
            })
            .collect();
        let head_bn = bn_iter.next();
        Ok(Self {
            shape,
            adam: Adam::new(params.len()),
            params,
            stem,
            blocks,
            head_bn,
            head,
            scaling: Scaling::identity(shape.in_channels, shape.out_channels),
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Mutable access to every batch-norm layer in a fixed order.
    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.bn1);
            out.push(&mut b.bn2);
        }
        if let Some(bn) = &mut self.head_bn {
            out.push(bn);
        }
        out
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.bn1);
            out.push(&b.bn2);
        }
        if let Some(bn) = &self.head_bn {
            out.push(bn);
        }
        out
    }

    /// Forward pass on already scaled inputs. Train mode uses batch statistics,
    /// updates the running ones and returns the activations needed by `backward`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Cache>)> {
        if x.channels != self.shape.in_channels {
            return Err(Error::Shape { expected: self.shape.in_channels, got: x.channels });
        }
        let train = mode == Mode::Train;
        let params = &self.params;
        let mut h = match &self.stem {
            Some(stem) => stem.forward(params, x)?,
            None => x.clone(),
        };
        let mut block_caches = Vec::new();
        for blk in &mut self.blocks {
            let (out, c) = blk.forward(params, &h, mode)?;
            h = out;
            block_caches.extend(c);
        }
        let mut head_bn_cache = None;
        if let Some(bn) = &mut self.head_bn {
            let (a, c) = bn_apply(bn, params, &h, train)?;
            let r = relu(&a);
            if train {
                head_bn_cache = Some((c.expect("train cache"), a));
            }
            h = r;
        }
        let mut head_in = Vec::new();
        let mut head_pre = Vec::new();
        let last = self.head.len() - 1;
        for (i, conv) in self.head.iter().enumerate() {
            let z = conv.forward(params, &h)?;
            if train {
                head_in.push(core::mem::replace(&mut h, Tensor::zeros(0, 0, 0)));
            }
            if i < last {
                h = relu(&z);
                if train {
                    head_pre.push(z);
                }
            } else {
                h = z;
            }
        }
        let cache = train.then(|| Cache {
            input: x.clone(),
            blocks: block_caches,
            head_bn: head_bn_cache,
            head_in,
            head_pre,
        });
        Ok((h, cache))
    }

    /// Backpropagates `g_out`; parameter gradients are accumulated into `grads`
    /// and the gradient with respect to the network input is returned.
    pub fn backward(&self, cache: &Cache, g_out: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape { expected: self.params.len(), got: grads.len() });
        }
        let params = &self.params;
        let mut g = g_out.clone();
        for i in (0..self.head.len()).rev() {
            if i < self.head.len() - 1 {
                g = relu_backward(&cache.head_pre[i], &g);
            }
            g = self.head[i].backward(params, &cache.head_in[i], &g, grads)?;
        }
        if let (Some(bn), Some((c, a))) = (&self.head_bn, &cache.head_bn) {
            g = relu_backward(a, &g);
            g = bn.backward(params, c, &g, grads);
        }
        for (blk, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = blk.backward(params, bc, &g, grads)?;
        }
        match &self.stem {
            Some(stem) => stem.backward(params, &cache.input, &g, grads),
            None => Ok(g),
        }
    }

    /// Inference on unscaled inputs: applies the stored scaling on both ends.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut xs = x.clone();
        scale_channels(&mut xs, &self.scaling.input, true)?;
        let (mut y, _) = self.forward(&xs, Mode::Infer)?;
        scale_channels(&mut y, &self.scaling.output, false)?;
        Ok(y)
    }
}

fn bn_apply(bn: &mut BatchNorm, params: &[f64], x: &Tensor, train: bool) -> Result<(Tensor, Option<BnCache>)> {
    if train {
        let (y, c) = bn.forward_train(params, x)?;
        Ok((y, Some(c)))
    } else {
        Ok((bn.forward_infer(params, x)?, None))
    }
}

/// Divides (or multiplies) each channel by its scale.
pub fn scale_channels(t: &mut Tensor, scales: &[f64], divide: bool) -> Result<()> {
    if scales.len() != t.channels {
        return Err(Error::Shape { expected: t.channels, got: scales.len() });
    }
    for b in 0..t.batch {
        for (c, &s) in scales.iter().enumerate() {
            let f = if divide { 1.0 / s } else { s };
            t.channel_mut(b, c).iter_mut().for_each(|v| *v *= f);
        }
    }
    Ok(())
}
