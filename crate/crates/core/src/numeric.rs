//! Small numeric building blocks shared across modules: compensated
//! summation, uniform time grids and FFT-backed lag products.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier-compensated sum. Order-independent to well below 1e-12 relative
/// for the sums encountered here, so parallel and serial schedules agree.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Uniform time grid `t_k = k * dt`, `k = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, len: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid dt must be > 0, got {dt}"
            )));
        }
        if len < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 samples, got {len}"
            )));
        }
        Ok(Self { dt, len })
    }

    /// Smallest grid with spacing `dt` that reaches at least `t_max`.
    pub fn covering(dt: f64, t_max: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "t_max must be > 0, got {t_max}"
            )));
        }
        let len = (t_max / dt).ceil() as usize + 1;
        Self::new(dt, len.max(2))
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.time(k)).collect()
    }

    pub fn span(&self) -> f64 {
        self.time(self.len - 1)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.len == other.len && (self.dt - other.dt).abs() <= 1e-12 * self.dt.abs()
    }
}

/// Raw lag sums `s_k = sum_{i < n-k} x_i x_{i+k}` for `k = 0..n`, computed via
/// a zero-padded FFT.
pub fn lag_product_sums(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    fwd.process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let scale = 1.0 / m as f64;
    buf[..n].iter().map(|z| z.re * scale).collect()
}

/// Index of the dominant positive-frequency bin of a real series (DC excluded),
/// returned as angular frequency in rad/s. `None` for flat input.
pub fn dominant_angular_frequency(x: &[f64], dt: f64) -> Option<f64> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    // zero-pad 4x for a finer initial guess
    let m = (4 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    fwd.process(&mut buf);
    let (best, power) = buf[1..m / 2]
        .iter()
        .enumerate()
        .map(|(i, z)| (i + 1, z.norm_sqr()))
        .fold(
            (0usize, 0.0f64),
            |acc, (i, p)| if p > acc.1 { (i, p) } else { acc },
        );
    if best == 0 || power <= 0.0 {
        return None;
    }
    Some(2.0 * std::f64::consts::PI * best as f64 / (m as f64 * dt))
}
