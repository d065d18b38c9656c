//! Fixed-step third-order Adams–Bashforth integration with an SSP-RK3 start.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};
use crate::field::first_non_finite;

/// Right-hand side `du/dt = f(t, u)` of a semi-discrete system.
pub trait Rhs {
    fn eval(&mut self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()>;
}

impl<F> Rhs for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        self(t, u, out)
    }
}

/// Number of equal steps covering `[t0, t_end]` with no step longer than `dt_max`.
pub fn fixed_steps(t0: f64, t_end: f64, dt_max: f64) -> Result<(usize, f64)> {
    if !(t_end > t0) {
        return Err(config_err("end time must exceed start time"));
    }
    if !(dt_max > 0.0) || !dt_max.is_finite() {
        return Err(config_err("time step must be positive and finite"));
    }
    let n = libm::ceil((t_end - t0) / dt_max * (1.0 - 1e-12)).max(1.0) as usize;
    Ok((n, (t_end - t0) / n as f64))
}

/// Like [`fixed_steps`], with the step count a multiple of `segments` so the
/// interval splits into `segments` equal parts that land on step times.
pub fn aligned_steps(t0: f64, t_end: f64, dt_max: f64, segments: usize) -> Result<(usize, f64)> {
    if segments == 0 {
        return Err(config_err("segment count must be positive"));
    }
    let (n, _) = fixed_steps(t0, t_end, dt_max)?;
    let n = n.div_ceil(segments) * segments;
    Ok((n, (t_end - t0) / n as f64))
}

/// AB3 integrator. The first two steps are taken with three-stage SSP-RK3,
/// whose first stage doubles as the stored history entry.
#[derive(Debug, Clone)]
pub struct Ab3 {
    dt: f64,
    t0: f64,
    steps: usize,
    /// `hist[0]` is the newest tendency.
    hist: [Vec<f64>; 3],
    stage: Vec<f64>,
    tmp: Vec<f64>,
    per_element: usize,
}

impl Ab3 {
    /// `per_element` is the number of values per mesh element, used to locate
    /// non-finite values.
    pub fn new(dt: f64, t0: f64, len: usize, per_element: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(config_err("time step must be positive and finite"));
        }
        Ok(Self {
            dt,
            t0,
            steps: 0,
            hist: [vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            stage: vec![0.0; len],
            tmp: vec![0.0; len],
            per_element: per_element.max(1),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Current time, computed as `t0 + n dt` so archived sample times match exactly.
    pub fn time(&self) -> f64 {
        self.time_at(self.steps)
    }

    pub fn time_at(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt
    }

    /// Advances `u` by one step.
    pub fn step<R: Rhs + ?Sized>(&mut self, rhs: &mut R, u: &mut [f64]) -> Result<()> {
        let t = self.time();
        let dt = self.dt;
        self.hist.rotate_right(1);
        rhs.eval(t, u, &mut self.hist[0])?;
        if self.steps < 2 {
            let k1 = &self.hist[0];
            for ((s, &x), &k) in self.stage.iter_mut().zip(u.iter()).zip(k1) {
                *s = x + dt * k;
            }
            rhs.eval(t + dt, &self.stage, &mut self.tmp)?;
            for ((s, &x), &k) in self.stage.iter_mut().zip(u.iter()).zip(&self.tmp) {
                *s = 0.75 * x + 0.25 * (*s + dt * k);
            }
            rhs.eval(t + 0.5 * dt, &self.stage, &mut self.tmp)?;
            for ((x, &s), &k) in u.iter_mut().zip(&self.stage).zip(&self.tmp) {
                *x = (*x + 2.0 * (s + dt * k)) / 3.0;
            }
        } else {
            let c = dt / 12.0;
            let [f0, f1, f2] = &self.hist;
            for (i, x) in u.iter_mut().enumerate() {
                *x += c * (23.0 * f0[i] - 16.0 * f1[i] + 5.0 * f2[i]);
            }
        }
        self.steps += 1;
        if let Some(element) = first_non_finite(u, self.per_element) {
            return Err(Error::NonFinite {
                time: self.time(),
                element,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_error(n: usize) -> f64 {
        let lambda = -1.3;
        let t_end = 1.0;
        let dt = t_end / n as f64;
        let mut ab = Ab3::new(dt, 0.0, 2, 1).unwrap();
        // oscillator plus decay exercises both real and complex eigenvalues
        let mut rhs = |_t: f64, u: &[f64], out: &mut [f64]| {
            out[0] = lambda * u[0];
            out[1] = u[0] * 0.0 - 2.0 * u[1];
            Ok(())
        };
        let mut u = [1.0, 1.0];
        for _ in 0..n {
            ab.step(&mut rhs, &mut u).unwrap();
        }
        let e0 = u[0] - libm::exp(lambda * t_end);
        let e1 = u[1] - libm::exp(-2.0 * t_end);
        libm::sqrt(e0 * e0 + e1 * e1)
    }

    #[test]
    fn aligned_steps_split_evenly() {
        let (n, dt) = aligned_steps(0.0, 2.0, 0.013, 20).unwrap();
        assert_eq!(n % 20, 0);
        assert!(dt <= 0.013 && n == 160);
        assert!(aligned_steps(0.0, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn third_order_convergence() {
        let e = [linear_error(40), linear_error(80), linear_error(160)];
        for w in e.windows(2) {
            let rate = libm::log2(w[0] / w[1]);
            assert!((2.8..=3.2).contains(&rate), "rate {rate}");
        }
    }

    #[test]
    fn time_dependent_forcing_sees_stage_times() {
        // du/dt = 3t^2 is integrated exactly by RK3 and AB3 (cubic solution)
        let mut rhs = |t: f64, _u: &[f64], out: &mut [f64]| {
            out[0] = 3.0 * t * t;
            Ok(())
        };
        let mut ab = Ab3::new(0.1, 0.5, 1, 1).unwrap();
        let mut u = [0.125];
        for _ in 0..10 {
            ab.step(&mut rhs, &mut u).unwrap();
        }
        assert!((ab.time() - 1.5).abs() < 1e-15);
        assert!((u[0] - 3.375).abs() < 1e-13, "{}", u[0]);
    }

    #[test]
    fn reports_non_finite_element() {
        let mut rhs = |_t: f64, u: &[f64], out: &mut [f64]| {
            out.copy_from_slice(u);
            out[7] = f64::NAN;
            Ok(())
        };
        let mut ab = Ab3::new(0.1, 0.0, 10, 5).unwrap();
        let mut u = [1.0; 10];
        match ab.step(&mut rhs, &mut u) {
            Err(Error::NonFinite { element, .. }) => assert_eq!(element, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equal_steps_cover_window() {
        let (n, dt) = fixed_steps(1.0, 1.2, 0.03).unwrap();
        assert_eq!(n, 7);
        assert!((1.0 + n as f64 * dt - 1.2).abs() < 1e-15);
        assert_eq!(fixed_steps(0.0, 1.0, 0.25).unwrap().0, 4);
        assert!(fixed_steps(1.0, 1.0, 0.1).is_err());
    }
}
