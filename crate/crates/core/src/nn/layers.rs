//! Layer kernels over batched `(B, C, p, p, p)` tensors. Parameters live in the
//! network's flat parameter vector; layers only record their offsets.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};

/// Batched volume tensor, `data[((b * c + ch) * p + z) * p + y) * p + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub batch: usize,
    pub channels: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(batch: usize, channels: usize, p: usize) -> Self {
        Self {
            batch,
            channels,
            p,
            data: vec![0.0; batch * channels * p * p * p],
        }
    }

    pub fn from_data(batch: usize, channels: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        let expected = batch * channels * p * p * p;
        if data.len() != expected {
            return Err(Error::Shape { expected, got: data.len() });
        }
        Ok(Self { batch, channels, p, data })
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.p * self.p * self.p
    }

    #[inline]
    pub fn channel(&self, b: usize, c: usize) -> &[f64] {
        let s = self.sites();
        let o = (b * self.channels + c) * s;
        &self.data[o..o + s]
    }

    #[inline]
    pub fn channel_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let s = self.sites();
        let o = (b * self.channels + c) * s;
        &mut self.data[o..o + s]
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.channels * self.sites();
        &self.data[b * n..(b + 1) * n]
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.batch == other.batch && self.channels == other.channels && self.p == other.p
    }
}

/// Offsets of a convolution's weights `(out, in, k, k, k)` and bias `(out)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w: usize,
    pub b: usize,
}

impl Conv3d {
    pub fn new(cin: usize, cout: usize, k: usize, offset: usize) -> Result<Self> {
        if k % 2 == 0 {
            return Err(config_err("kernel size must be odd"));
        }
        Ok(Self {
            cin,
            cout,
            k,
            w: offset,
            b: offset + cout * cin * k * k * k,
        })
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k * self.k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn end(&self) -> usize {
        self.b + self.cout
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.channels != self.cin {
            return Err(Error::Shape { expected: self.cin, got: x.channels });
        }
        Ok(())
    }

    /// Tap offsets `(dz, dy, dx)` in kernel order.
    fn taps(&self) -> impl Iterator<Item = (isize, isize, isize)> {
        let r = (self.k / 2) as isize;
        (-r..=r).flat_map(move |dz| (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (dz, dy, dx))))
    }

    /// `cols[(i k³ + tap) p³ + s]`: input channel `i` shifted by `tap`, zero outside.
    fn im2col(&self, x: &[f64], p: usize, cols: &mut [f64]) {
        let p3 = p * p * p;
        let kk = self.k * self.k * self.k;
        for i in 0..self.cin {
            let src = &x[i * p3..(i + 1) * p3];
            for (t, (dz, dy, dx)) in self.taps().enumerate() {
                let row = &mut cols[(i * kk + t) * p3..(i * kk + t + 1) * p3];
                for_each_shift(p, dz, dy, dx, |dst, s| row[dst] = s.map_or(0.0, |s| src[s]));
            }
        }
    }

    fn col2im(&self, cols: &[f64], p: usize, gx: &mut [f64]) {
        let p3 = p * p * p;
        let kk = self.k * self.k * self.k;
        for i in 0..self.cin {
            let dst = &mut gx[i * p3..(i + 1) * p3];
            for (t, (dz, dy, dx)) in self.taps().enumerate() {
                let row = &cols[(i * kk + t) * p3..(i * kk + t + 1) * p3];
                for_each_shift(p, dz, dy, dx, |site, s| {
                    if let Some(s) = s {
                        dst[s] += row[site];
                    }
                });
            }
        }
    }

    /// Zero-padded "same" convolution.
    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let p = x.p;
        let p3 = x.sites();
        let mut y = Tensor::zeros(x.batch, self.cout, p);
        let w = &params[self.w..self.w + self.weight_len()];
        let bias = &params[self.b..self.b + self.cout];
        let j_len = self.cin * self.k * self.k * self.k;
        let mut cols = if self.k == 1 { Vec::new() } else { vec![0.0; j_len * p3] };
        for b in 0..x.batch {
            let cols: &[f64] = if self.k == 1 {
                x.sample(b)
            } else {
                self.im2col(x.sample(b), p, &mut cols);
                &cols
            };
            let yb = &mut y.data[b * self.cout * p3..(b + 1) * self.cout * p3];
            for (o, yo) in yb.chunks_exact_mut(p3).enumerate() {
                yo.iter_mut().for_each(|v| *v = bias[o]);
            }
            gemm(self.cout, j_len, p3, w, (j_len, 1), cols, (p3, 1), 1.0, yb, p3);
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, params: &[f64], x: &Tensor, gy: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        self.check(x)?;
        if gy.channels != self.cout || gy.batch != x.batch || gy.p != x.p {
            return Err(Error::Shape { expected: self.cout, got: gy.channels });
        }
        let p = x.p;
        let p3 = x.sites();
        let mut gx = Tensor::zeros(x.batch, self.cin, p);
        let w = &params[self.w..self.w + self.weight_len()];
        let (gw, gb) = grads[self.w..self.end()].split_at_mut(self.weight_len());
        let j_len = self.cin * self.k * self.k * self.k;
        let direct = self.k == 1;
        let mut cols = if direct { Vec::new() } else { vec![0.0; j_len * p3] };
        let mut gcols = if direct { Vec::new() } else { vec![0.0; j_len * p3] };
        for b in 0..x.batch {
            let n = self.cin * p3;
            let gxb = &mut gx.data[b * n..(b + 1) * n];
            let cols: &[f64] = if direct {
                x.sample(b)
            } else {
                self.im2col(x.sample(b), p, &mut cols);
                gcols.iter_mut().for_each(|v| *v = 0.0);
                &cols
            };
            let gc: &mut [f64] = if direct { gxb } else { &mut gcols };
            let gyb = &gy.data[b * self.cout * p3..(b + 1) * self.cout * p3];
            for (o, go) in gyb.chunks_exact(p3).enumerate() {
                gb[o] += go.iter().sum::<f64>();
            }
            gemm(self.cout, p3, j_len, gyb, (p3, 1), cols, (1, p3), 1.0, gw, j_len);
            gemm(j_len, self.cout, p3, w, (1, j_len), gyb, (p3, 1), 0.0, gc, p3);
            if !direct {
                self.col2im(&gcols, p, gxb);
            }
        }
        Ok(gx)
    }
}

/// Calls `f(site, source)` for every site, with `source` the site shifted by
/// `(dz, dy, dx)` or `None` when that falls outside the element.
#[inline]
fn for_each_shift(p: usize, dz: isize, dy: isize, dx: isize, mut f: impl FnMut(usize, Option<usize>)) {
    let pi = p as isize;
    let inside = |v: isize| v >= 0 && v < pi;
    for z in 0..pi {
        for y in 0..pi {
            for x in 0..pi {
                let site = ((z * pi + y) * pi + x) as usize;
                let (sz, sy, sx) = (z + dz, y + dy, x + dx);
                let src = (inside(sz) && inside(sy) && inside(sx)).then(|| ((sz * pi + sy) * pi + sx) as usize);
                f(site, src);
            }
        }
    }
}

/// `c = a·b + beta·c` for an `m × k` by `k × n` product with the given
/// (row, column) strides; `c` is row-major with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cidx: usize, rs: usize, cs: usize| (r - 1) * rs + (cidx - 1) * cs;
    assert!(k == 0 || (last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len()));
    assert!(last(m, n, rsc, 1) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices and
    // `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Offsets of a batch-normalization layer's scale and shift, plus its running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved normalized activations and inverse deviations of a train-mode pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize, offset: usize) -> Self {
        Self {
            channels,
            gamma: offset,
            beta: offset + channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.99,
            eps: 1e-5,
        }
    }

    pub fn param_len(&self) -> usize {
        2 * self.channels
    }

    pub fn end(&self) -> usize {
        self.beta + self.channels
    }

    /// Standardizes each channel over batch and sites, then applies the affine map.
    pub fn forward_train(&mut self, params: &[f64], x: &Tensor) -> Result<(Tensor, BnCache)> {
        if x.batch < 2 {
            return Err(config_err("batch normalization in training mode needs a batch of at least 2"));
        }
        if x.channels != self.channels {
            return Err(Error::Shape { expected: self.channels, got: x.channels });
        }
        let n = (x.batch * x.sites()) as f64;
        let mut xhat = Tensor::zeros(x.batch, x.channels, x.p);
        let mut y = Tensor::zeros(x.batch, x.channels, x.p);
        let mut inv_std = vec![0.0; self.channels];
        let s = x.sites();
        for c in 0..self.channels {
            let mean = (0..x.batch).map(|b| x.channel(b, c).iter().sum::<f64>()).sum::<f64>() / n;
            let var = (0..x.batch)
                .map(|b| x.channel(b, c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                .sum::<f64>()
                / n;
            let inv = 1.0 / libm::sqrt(var + self.eps);
            inv_std[c] = inv;
            let (g, be) = (params[self.gamma + c], params[self.beta + c]);
            for b in 0..x.batch {
                let o = (b * x.channels + c) * s;
                let src = x.channel(b, c);
                for ((xh, yv), &v) in xhat.data[o..o + s].iter_mut().zip(&mut y.data[o..o + s]).zip(src) {
                    *xh = (v - mean) * inv;
                    *yv = g * *xh + be;
                }
            }
            let unbiased = var * n / (n - 1.0);
            self.running_mean[c] = self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean;
            self.running_var[c] = self.momentum * self.running_var[c] + (1.0 - self.momentum) * unbiased;
        }
        Ok((y, BnCache { xhat, inv_std }))
    }

    pub fn forward_infer(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        if x.channels != self.channels {
            return Err(Error::Shape { expected: self.channels, got: x.channels });
        }
        let mut y = x.clone();
        for c in 0..self.channels {
            let inv = 1.0 / libm::sqrt(self.running_var[c] + self.eps);
            let scale = params[self.gamma + c] * inv;
            let shift = params[self.beta + c] - scale * self.running_mean[c];
            for b in 0..x.batch {
                for v in y.channel_mut(b, c) {
                    *v = scale * *v + shift;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, params: &[f64], cache: &BnCache, gy: &Tensor, grads: &mut [f64]) -> Tensor {
        let xhat = &cache.xhat;
        let n = (gy.batch * gy.sites()) as f64;
        let s = gy.sites();
        let mut gx = Tensor::zeros(gy.batch, gy.channels, gy.p);
        for c in 0..self.channels {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for b in 0..gy.batch {
                for (g, xh) in gy.channel(b, c).iter().zip(xhat.channel(b, c)) {
                    sg += g;
                    sgx += g * xh;
                }
            }
            grads[self.gamma + c] += sgx;
            grads[self.beta + c] += sg;
            let k = params[self.gamma + c] * cache.inv_std[c] / n;
            for b in 0..gy.batch {
                let o = (b * gy.channels + c) * s;
                for ((d, &g), &xh) in gx.data[o..o + s].iter_mut().zip(gy.channel(b, c)).zip(xhat.channel(b, c)) {
                    *d = k * (n * g - sg - xh * sgx);
                }
            }
        }
        gx
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient through a ReLU given its input; the subgradient at 0 is 0.
pub fn relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    debug_assert!(x.same_shape(gy));
    let mut gx = gy.clone();
    for (g, &v) in gx.data.iter_mut().zip(&x.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

pub fn add_assign(a: &mut Tensor, b: &Tensor) {
    debug_assert!(a.same_shape(b));
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}
