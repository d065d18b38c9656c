//! Small complex FFT: iterative radix-2 for powers of two, Bluestein's chirp-z
//! convolution otherwise.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Self = Self { re: 0.0, im: 0.0 };

    #[inline]
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    #[inline]
    pub fn cis(theta: f64) -> Self {
        Self::new(libm::cos(theta), libm::sin(theta))
    }

    #[inline]
    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    #[inline]
    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    #[inline]
    pub fn scale(self, s: f64) -> Self {
        Self::new(self.re * s, self.im * s)
    }
}

impl Add for Complex {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

/// Unnormalized transform `X_k = sum_j x_j exp(∓2πi jk/n)`; the inverse uses `+`.
pub fn fft(data: &mut [Complex], inverse: bool) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    if !n.is_power_of_two() {
        bluestein(data, sign);
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let tw: Vec<Complex> = (0..half)
            .map(|k| Complex::cis(sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = data[start + k];
                let b = data[start + k + half] * tw[k];
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Arbitrary-length transform as a power-of-two circular convolution with a chirp.
fn bluestein(data: &mut [Complex], sign: f64) {
    let n = data.len();
    let len = (2 * n - 1).next_power_of_two();
    // reduce j^2 modulo 2n before scaling so the phase stays accurate
    let chirp: Vec<Complex> = (0..n)
        .map(|j| Complex::cis(sign * PI * ((j * j) % (2 * n)) as f64 / n as f64))
        .collect();
    let mut a = vec![Complex::ZERO; len];
    for (j, (x, c)) in data.iter().zip(&chirp).enumerate() {
        a[j] = *x * *c;
    }
    let mut b = vec![Complex::ZERO; len];
    b[0] = chirp[0].conj();
    for j in 1..n {
        b[j] = chirp[j].conj();
        b[len - j] = chirp[j].conj();
    }
    fft(&mut a, false);
    fft(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x = *x * *y;
    }
    fft(&mut a, true);
    let inv = 1.0 / len as f64;
    for (j, (x, c)) in data.iter_mut().zip(&chirp).enumerate() {
        *x = (a[j] * *c).scale(inv);
    }
}

/// Unnormalized 3D transform of an `n^3` array with x fastest.
pub fn fft3(data: &mut [Complex], n: usize, inverse: bool) {
    assert_eq!(data.len(), n * n * n, "fft3 expects an n^3 array");
    let mut line = vec![Complex::ZERO; n];
    for (stride, outer) in [(1, [n, n * n]), (n, [1, n * n]), (n * n, [1, n])] {
        for b in 0..n {
            for a in 0..n {
                let base = a * outer[0] + b * outer[1];
                for (s, l) in line.iter_mut().enumerate() {
                    *l = data[base + s * stride];
                }
                fft(&mut line, inverse);
                for (s, l) in line.iter().enumerate() {
                    data[base + s * stride] = *l;
                }
            }
        }
    }
}

/// Signed integer wavenumber of FFT index `i` on an `n`-point grid.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
