//! Damped least-squares fits of a correlation function to
//! `A e^{-t/tau} + B` and `A sin(omega t + phi) e^{-t/tau} + B`.
//!
//! Fits run on `C / C(0)` against `t / span`, so every parameter is O(1) and
//! the fitted `tau_c` does not depend on the overall scale of the data.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dominant_angular_frequency, TimeGrid};

pub const MIN_SAMPLES: usize = 16;
/// Upper bound on `tau_c` in units of the sampled span.
pub const TAU_MAX_SPANS: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    PlainExponential,
    SinusoidalExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    /// Input is constant; `tau_c` pinned at the upper bound.
    NoDecayResolved,
    /// The optimum ran into the `tau_c` upper bound.
    TauAtUpperBound,
    /// The optimizer stopped without meeting its convergence criteria.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    pub model: FitModel,
    /// rad^2/s^2.
    pub a: f64,
    /// Seconds.
    pub tau_c: f64,
    /// rad^2/s^2.
    pub b: f64,
    /// rad/s.
    pub omega: Option<f64>,
    pub phi: Option<f64>,
    /// Euclidean norm of the residuals, rad^2/s^2.
    pub residual_norm: f64,
    /// `C(0)` of the data, rad^2/s^2.
    pub delta_sq: f64,
    pub flags: Vec<FitFlag>,
}

impl CorrelationFit {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let e = (-t / self.tau_c).exp();
        match self.model {
            FitModel::PlainExponential => self.a * e + self.b,
            FitModel::SinusoidalExponential => {
                self.a * (self.omega.unwrap_or(0.0) * t + self.phi.unwrap_or(0.0)).sin() * e
                    + self.b
            }
        }
    }
}

/// Both model fits of one correlation function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFits {
    pub plain: CorrelationFit,
    pub sinusoidal: CorrelationFit,
}

/// Reduced problem: only `ln(tau / span)` (and `omega * span`) are
/// nonlinear; amplitudes and offset are solved linearly at every step.
struct Projected<'a> {
    s: &'a [f64],
    y: &'a [f64],
    sinusoidal: bool,
    theta: DVector<f64>,
    /// Box for `ln(tau / span)`; steps beyond it are projected back.
    ln_tau: (f64, f64),
}

impl Projected<'_> {
    fn basis(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.s.len();
        let inv_tau = (-theta[0]).exp();
        if self.sinusoidal {
            let w = theta[1];
            DMatrix::from_fn(n, 3, |r, c| {
                let s = self.s[r];
                let e = (-s * inv_tau).exp();
                match c {
                    0 => e * (w * s).sin(),
                    1 => e * (w * s).cos(),
                    _ => 1.0,
                }
            })
        } else {
            DMatrix::from_fn(n, 2, |r, c| {
                if c == 0 {
                    (-self.s[r] * inv_tau).exp()
                } else {
                    1.0
                }
            })
        }
    }

    fn solve(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let phi = self.basis(theta);
        let y = DVector::from_column_slice(self.y);
        let coef = phi
            .clone()
            .svd(true, true)
            .solve(&y, 1e-13)
            .unwrap_or_else(|_| DVector::zeros(phi.ncols()));
        let r = &phi * &coef - y;
        (coef, r)
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Projected<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.theta.copy_from(x);
        self.theta[0] = self.theta[0].clamp(self.ln_tau.0, self.ln_tau.1);
    }

    fn params(&self) -> DVector<f64> {
        self.theta.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.solve(&self.theta).1;
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let k = self.theta.len();
        let mut j = DMatrix::zeros(self.s.len(), k);
        for c in 0..k {
            let h = 1e-6 * self.theta[c].abs().max(1.0);
            let (mut up, mut dn) = (self.theta.clone(), self.theta.clone());
            up[c] += h;
            dn[c] -= h;
            let d = (self.solve(&up).1 - self.solve(&dn).1) / (2.0 * h);
            j.set_column(c, &d);
        }
        Some(j)
    }
}

struct Outcome {
    theta: DVector<f64>,
    cost: f64,
    converged: bool,
}

fn run(s: &[f64], y: &[f64], sinusoidal: bool, start: DVector<f64>) -> Outcome {
    // one step past the upper bound marks a run-away tau for the caller
    let ln_tau = ((s[1] / 10.0).ln(), TAU_MAX_SPANS.ln() + 1.0);
    let mut problem = Projected {
        s,
        y,
        sinusoidal,
        theta: start.clone(),
        ln_tau,
    };
    problem.set_params(&start);
    let (problem, report) = LevenbergMarquardt::new()
        .with_patience(100)
        .minimize(problem);
    let cost = problem
        .residuals()
        .map(|r| r.norm_squared())
        .filter(|c| c.is_finite())
        .unwrap_or(f64::INFINITY);
    Outcome {
        converged: report.termination.was_successful(),
        theta: problem.theta,
        cost,
    }
}

/// Fit `c` sampled on `grid` with both models.
pub fn fit_correlation(c: &[f64], grid: &TimeGrid) -> Result<CorrelationFits> {
    let (plain, sinusoidal) = fit_models(c, grid, true)?;
    Ok(CorrelationFits {
        plain,
        sinusoidal: sinusoidal.expect("requested"),
    })
}

/// Plain-exponential fit only.
pub fn fit_plain(c: &[f64], grid: &TimeGrid) -> Result<CorrelationFit> {
    Ok(fit_models(c, grid, false)?.0)
}

fn fit_models(
    c: &[f64],
    grid: &TimeGrid,
    with_sinusoidal: bool,
) -> Result<(CorrelationFit, Option<CorrelationFit>)> {
    if c.len() != grid.len {
        return Err(Error::GridMismatch(format!(
            "{} samples on a {}-point grid",
            c.len(),
            grid.len
        )));
    }
    if c.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples to fit, got {}",
            c.len()
        )));
    }
    let c0 = c[0];
    if !(c0.is_finite() && c0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "C(0) must be > 0 to fit, got {c0}"
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation samples".into()));
    }
    let span = grid.span();
    let tau_max = TAU_MAX_SPANS * span;
    let l_max = TAU_MAX_SPANS.ln();
    let y: Vec<f64> = c.iter().map(|v| v / c0).collect();
    let s: Vec<f64> = (0..grid.len).map(|k| grid.time(k) / span).collect();

    let flat = y.iter().all(|v| (v - 1.0).abs() <= 1e-12);
    if flat {
        let make = |model, omega, phi| CorrelationFit {
            model,
            a: 0.0,
            tau_c: tau_max,
            b: c0,
            omega,
            phi,
            residual_norm: 0.0,
            delta_sq: c0,
            flags: vec![FitFlag::NoDecayResolved],
        };
        return Ok((
            make(FitModel::PlainExponential, None, None),
            with_sinusoidal.then(|| {
                make(
                    FitModel::SinusoidalExponential,
                    Some(0.0),
                    Some(std::f64::consts::FRAC_PI_2),
                )
            }),
        ));
    }

    // initial guesses
    let tail = (y.len() / 10).max(1);
    let b0 = y[y.len() - tail..].iter().sum::<f64>() / tail as f64;
    let a0 = 1.0 - b0;
    let tau0 = {
        let target = (-1f64).exp();
        let z = |k: usize| {
            if a0.abs() > 0.0 {
                (y[k] - b0) / a0
            } else {
                0.0
            }
        };
        (1..y.len())
            .find(|&k| z(k) < target)
            .map(|k| {
                let (z0, z1) = (z(k - 1), z(k));
                let frac = if z0 != z1 {
                    (z0 - target) / (z0 - z1)
                } else {
                    0.0
                };
                s[k - 1] + frac * (s[k] - s[k - 1])
            })
            .unwrap_or(1.0)
            .max(s[1])
    };
    let detrended: Vec<f64> = y.iter().map(|v| v - b0).collect();
    let w0 = dominant_angular_frequency(&detrended, s[1]).unwrap_or(0.0);

    let best = |sinusoidal: bool, starts: Vec<DVector<f64>>| -> Outcome {
        starts
            .into_iter()
            .map(|p| run(&s, &y, sinusoidal, p))
            .fold(None::<Outcome>, |acc, o| match acc {
                Some(a) if a.cost <= o.cost => Some(a),
                _ => Some(o),
            })
            .expect("at least one start")
    };

    let plain_starts = [1.0, 0.3, 3.0]
        .iter()
        .map(|m| DVector::from_vec(vec![(tau0 * m).ln().min(l_max)]))
        .collect();
    let plain = best(false, plain_starts);
    let plain_ln_tau = plain.theta[0].min(l_max);
    let sin_starts = || {
        let mut sin_starts: Vec<DVector<f64>> = [1.0, 3.0, 10.0, 30.0, 100.0]
            .iter()
            .map(|m| DVector::from_vec(vec![(tau0 * m).ln().min(l_max), w0]))
            .collect();
        sin_starts.push(DVector::from_vec(vec![plain_ln_tau, w0]));
        sin_starts
    };

    let finish = |o: Outcome, sinusoidal: bool| -> CorrelationFit {
        let mut flags = Vec::new();
        let mut theta = o.theta.clone();
        let runaway = theta[0] > l_max;
        if !o.converged && !runaway {
            flags.push(FitFlag::NotConverged);
        }
        if runaway {
            // pin tau at the bound; the linear part is refitted exactly there
            flags.push(FitFlag::TauAtUpperBound);
            theta[0] = l_max;
        }
        let problem = Projected {
            s: &s,
            y: &y,
            sinusoidal,
            theta: theta.clone(),
            ln_tau: (f64::MIN, f64::MAX),
        };
        let (coef, r) = problem.solve(&theta);
        let cost = r.norm_squared();
        let tau_c = theta[0].exp() * span;
        let fit = |model, a: f64, b: f64, omega, phi| CorrelationFit {
            model,
            a: a * c0,
            tau_c,
            b: b * c0,
            omega,
            phi,
            residual_norm: cost.sqrt() * c0,
            delta_sq: c0,
            flags: flags.clone(),
        };
        if sinusoidal {
            // alpha sin(ws) + beta cos(ws) = A sin(ws + phi)
            // sin is odd in omega, cos even
            let flip = if theta[1] < 0.0 { -1.0 } else { 1.0 };
            let (w, alpha, beta) = (theta[1].abs(), flip * coef[0], coef[1]);
            let a = alpha.hypot(beta);
            let phi = beta.atan2(alpha).rem_euclid(std::f64::consts::TAU);
            fit(
                FitModel::SinusoidalExponential,
                a,
                coef[2],
                Some(w / span),
                Some(phi),
            )
        } else {
            fit(FitModel::PlainExponential, coef[0], coef[1], None, None)
        }
    };

    let sinusoidal = with_sinusoidal.then(|| finish(best(true, sin_starts()), true));
    Ok((finish(plain, false), sinusoidal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_plain_exponential() {
        let grid = TimeGrid::new(5e-14, 400).unwrap();
        let (a, tau) = (4e-9, 2e-12);
        let c: Vec<f64> = (0..grid.len)
            .map(|k| a * (-grid.time(k) / tau).exp())
            .collect();
        let f = fit_correlation(&c, &grid).unwrap().plain;
        assert!((f.a / a - 1.0).abs() < 1e-3, "{f:?}");
        assert!((f.tau_c / tau - 1.0).abs() < 1e-3);
        assert!(f.b.abs() < 1e-3 * a);
        assert!(f.flags.is_empty());
        assert_eq!(f.delta_sq, a);
    }

    #[test]
    fn recovers_sinusoidal_exponential() {
        let grid = TimeGrid::new(1e-3, 1000).unwrap();
        let (a, tau, b, w, phi) = (2.0, 0.3, 0.1, 25.0, 1.2);
        let c: Vec<f64> = (0..grid.len)
            .map(|k| {
                let t = grid.time(k);
                a * (w * t + phi).sin() * (-t / tau).exp() + b
            })
            .collect();
        let fits = fit_correlation(&c, &grid).unwrap();
        let f = &fits.sinusoidal;
        for (got, want) in [
            (f.a, a),
            (f.tau_c, tau),
            (f.b, b),
            (f.omega.unwrap(), w),
            (f.phi.unwrap(), phi),
        ] {
            assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}: {f:?}");
        }
        assert!(fits.sinusoidal.residual_norm < 1e-3 * fits.plain.residual_norm);
    }

    #[test]
    fn constant_input_is_flagged() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let f = fit_correlation(&[3.0; 32], &grid).unwrap();
        assert_eq!(f.plain.flags, vec![FitFlag::NoDecayResolved]);
        assert_eq!(f.plain.tau_c, TAU_MAX_SPANS * grid.span());
        assert_eq!(f.plain.b, 3.0);
    }

    #[test]
    fn preconditions() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        assert!(fit_correlation(&[1.0; 8], &grid).is_err());
        let grid = TimeGrid::new(1.0, 20).unwrap();
        assert!(fit_correlation(&[0.0; 20], &grid).is_err());
        assert!(fit_correlation(&[1.0; 19], &grid).is_err());
    }

    #[test]
    fn slow_linear_decay_hits_bound() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let c: Vec<f64> = (0..64).map(|k| 1.0 - 1e-9 * k as f64).collect();
        let f = fit_correlation(&c, &grid).unwrap().plain;
        assert!(f.tau_c <= TAU_MAX_SPANS * grid.span() * (1.0 + 1e-12));
        assert!(f.residual_norm.is_finite());
    }
}
