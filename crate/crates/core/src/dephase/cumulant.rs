//! Second-order cumulant lineshape for an exponentially decaying correlation
//! and the `g = 1` rate rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::TimeGrid;

/// `Delta * tau_c` below this is fast modulation.
pub const FAST_LIMIT: f64 = 0.1;
/// `Delta * tau_c` above this is slow modulation.
pub const SLOW_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Fast,
    Intermediate,
    Slow,
}

impl Regime {
    pub fn classify(delta_sq: f64, tau_c: f64) -> Option<Regime> {
        if !(delta_sq > 0.0) {
            return None;
        }
        let x = delta_sq.sqrt() * tau_c;
        Some(if x < FAST_LIMIT {
            Regime::Fast
        } else if x > SLOW_LIMIT {
            Regime::Slow
        } else {
            Regime::Intermediate
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Fast => "fast",
            Regime::Intermediate => "intermediate",
            Regime::Slow => "slow",
        }
    }
}

/// `e^{-x} + x - 1`, accurate for small `x`.
fn kernel(x: f64) -> f64 {
    if x < 1e-3 {
        x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x / 120.0)))
    } else {
        x + (-x).exp_m1()
    }
}

/// `g(t) = Delta^2 tau_c^2 [e^{-t/tau_c} + t/tau_c - 1]`.
pub fn g_at(delta_sq: f64, tau_c: f64, t: f64) -> f64 {
    delta_sq * tau_c * tau_c * kernel(t / tau_c)
}

fn check(delta_sq: f64, tau_c: f64) -> Result<()> {
    if !(delta_sq.is_finite() && delta_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta^2 must be >= 0, got {delta_sq}"
        )));
    }
    if !(tau_c.is_finite() && tau_c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau_c must be > 0, got {tau_c}"
        )));
    }
    Ok(())
}

pub fn cumulant_g(delta_sq: f64, tau_c: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    check(delta_sq, tau_c)?;
    Ok((0..grid.len)
        .map(|k| g_at(delta_sq, tau_c, grid.time(k)))
        .collect())
}

/// `D(t) = exp(-g(t))`.
pub fn dephasing_function(g: &[f64]) -> Vec<f64> {
    g.iter().map(|v| (-v).exp()).collect()
}

/// Extracted dephasing time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Seconds; `f64::INFINITY` when there is no dephasing.
    pub gamma_inverse: f64,
    pub regime: Option<Regime>,
    /// Obtained from the closed-form `g` beyond the sampled window.
    pub extrapolated: bool,
}

impl RateEstimate {
    pub const NONE: RateEstimate = RateEstimate {
        gamma_inverse: f64::INFINITY,
        regime: None,
        extrapolated: false,
    };

    pub fn is_finite(&self) -> bool {
        self.gamma_inverse.is_finite()
    }
}

/// Static-disorder limit `sqrt(2)/Delta`, the `tau_c -> infinity` root of `g = 1`.
pub fn static_rate(delta_sq: f64) -> Result<RateEstimate> {
    if !(delta_sq.is_finite() && delta_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta^2 must be >= 0, got {delta_sq}"
        )));
    }
    if delta_sq == 0.0 {
        return Ok(RateEstimate::NONE);
    }
    Ok(RateEstimate {
        gamma_inverse: 2f64.sqrt() / delta_sq.sqrt(),
        regime: Some(Regime::Slow),
        extrapolated: false,
    })
}

/// Time at which the closed-form `g` reaches 1, by bracketed bisection.
pub fn extract_rate(delta_sq: f64, tau_c: f64) -> Result<RateEstimate> {
    check(delta_sq, tau_c)?;
    if delta_sq == 0.0 {
        return Ok(RateEstimate::NONE);
    }
    let g = |t: f64| g_at(delta_sq, tau_c, t);
    // either limit alone bounds the root from above up to a factor of 2
    let mut hi = (1.0 / (delta_sq * tau_c) + tau_c).min(2f64.sqrt() / delta_sq.sqrt() * 2.0);
    let mut lo = 0.0;
    while g(hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Ok(RateEstimate::NONE);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RateEstimate {
        gamma_inverse: 0.5 * (lo + hi),
        regime: Regime::classify(delta_sq, tau_c),
        extrapolated: false,
    })
}

/// Rate from sampled `D(t)`: the 1/e crossing by linear interpolation of
/// `g = -ln D`, or the closed form when the samples never reach it.
pub fn extract_rate_sampled(
    d: &[f64],
    grid: &TimeGrid,
    closed_form: Option<(f64, f64)>,
) -> Result<RateEstimate> {
    if d.len() != grid.len {
        return Err(Error::GridMismatch(format!(
            "{} samples on a {}-point grid",
            d.len(),
            grid.len
        )));
    }
    let g: Vec<f64> = d.iter().map(|v| -v.ln()).collect();
    let regime = closed_form.and_then(|(ds, tau)| Regime::classify(ds, tau));
    if let Some(k) = g.iter().position(|&v| v >= 1.0) {
        if k > 0 {
            let (t0, t1) = (grid.time(k - 1), grid.time(k));
            let t = t0 + (1.0 - g[k - 1]) / (g[k] - g[k - 1]) * (t1 - t0);
            return Ok(RateEstimate {
                gamma_inverse: t,
                regime,
                extrapolated: false,
            });
        }
        return Ok(RateEstimate {
            gamma_inverse: 0.0,
            regime,
            extrapolated: false,
        });
    }
    match closed_form {
        Some((ds, tau)) => {
            let r = extract_rate(ds, tau)?;
            Ok(RateEstimate {
                extrapolated: r.is_finite(),
                ..r
            })
        }
        None => Ok(RateEstimate::NONE),
    }
}
