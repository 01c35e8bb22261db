//! From gap fluctuations to dephasing times: correlation estimation, model
//! fits, the cumulant lineshape, ensemble statistics and channel aggregation.

pub mod cumulant;
pub mod fit;
pub mod pipeline;
pub mod report;
pub mod resolve;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluct::{Channel, FluctuationTrace};
use crate::numeric::{compensated_sum, lag_product_sums, TimeGrid};

pub use cumulant::{
    cumulant_g, dephasing_function, extract_rate, extract_rate_sampled, g_at, static_rate,
    RateEstimate, Regime,
};
pub use fit::{fit_correlation, fit_plain, CorrelationFit, CorrelationFits, FitFlag, FitModel};
pub use pipeline::{
    disorder_sweep, pure_dephasing, DisorderOptions, DisorderRow, GridOverride, PureOptions,
    PureOutput,
};
pub use report::{aggregate_report, DecoherenceSummary, Sequence};
pub use resolve::{resolve_contributions, ResolveBy, ResolveOptions, ResolvedRow};

/// Where a correlation function comes from.
#[derive(Debug, Clone, Copy)]
pub enum CorrelationSource<'a> {
    /// Closed-form samples; returned unchanged.
    Analytic(&'a [f64]),
    Traces(&'a [FluctuationTrace]),
}

/// Ensemble-averaged unbiased lag-product estimate
/// `C_k = <sum_i x_i x_{i+k} / (n - k)>`.
pub fn autocorrelation(traces: &[FluctuationTrace]) -> Result<Vec<f64>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("autocorrelation needs at least one trace".into()))?;
    if let Some(t) = traces
        .iter()
        .find(|t| !t.grid.same_as(&first.grid) || t.values.len() != first.grid.len)
    {
        return Err(Error::GridMismatch(format!(
            "trace with seed {} does not share the ensemble grid",
            t.seed
        )));
    }
    let n = first.grid.len;
    let per_trace: Vec<Vec<f64>> = traces
        .par_iter()
        .map(|t| lag_product_sums(&t.values))
        .collect();
    let m = traces.len() as f64;
    Ok((0..n)
        .map(|k| compensated_sum(per_trace.iter().map(|s| s[k])) / ((n - k) as f64 * m))
        .collect())
}

/// Unbiased lag-product estimate for a single series.
pub fn unbiased_autocorrelation(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    lag_product_sums(x)
        .into_iter()
        .enumerate()
        .map(|(k, s)| s / (n - k) as f64)
        .collect()
}

pub fn correlation(source: CorrelationSource<'_>) -> Result<Vec<f64>> {
    match source {
        CorrelationSource::Analytic(c) => Ok(c.to_vec()),
        CorrelationSource::Traces(t) => autocorrelation(t),
    }
}

/// Pointwise mean of equally sampled correlation functions.
pub fn average_correlations(cs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = cs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidArgument("nothing to average".into()))?;
    if cs.iter().any(|c| c.len() != n) {
        return Err(Error::GridMismatch("correlations differ in length".into()));
    }
    let m = cs.len() as f64;
    Ok((0..n)
        .map(|k| compensated_sum(cs.iter().map(|c| c[k])) / m)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Homogeneity {
    Homogeneous,
    Inhomogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reversibility {
    Reversible,
    Irreversible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub homogeneity: Homogeneity,
    pub reversibility: Reversibility,
}

impl Classification {
    pub fn of(channel: Channel) -> Self {
        use Homogeneity::*;
        use Reversibility::*;
        let (homogeneity, reversibility) = match channel {
            Channel::SpPh => (Homogeneous, Irreversible),
            Channel::SpNuPh => (Inhomogeneous, Irreversible),
            Channel::SpNu => (Inhomogeneous, Reversible),
        };
        Self {
            homogeneity,
            reversibility,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// Zero fluctuation amplitude; `1/Gamma` is infinite.
    NoDephasing,
    /// The correlation does not decay within the sampled window; the rate is
    /// the static-disorder limit.
    QuasiStatic,
    /// The plain-model fit did not converge.
    FitFlagged,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::NoDephasing => "no_dephasing",
            RowStatus::QuasiStatic => "quasi_static",
            RowStatus::FitFlagged => "fit_flagged",
        }
    }
}

/// Spread of per-configuration dephasing times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    /// `1/Gamma` of the configuration-averaged correlation, s.
    pub mean: f64,
    /// Sample standard deviation of the finite per-configuration values, s.
    pub std: f64,
    /// `std / sqrt(n_finite)`.
    pub stderr: f64,
    pub n_configs: usize,
    pub n_finite: usize,
}

impl EnsembleStats {
    pub fn new(mean: f64, per_config: &[f64]) -> Self {
        let finite: Vec<f64> = per_config
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        let n = finite.len();
        let std = if n < 2 {
            0.0
        } else {
            let mu = compensated_sum(finite.iter().copied()) / n as f64;
            (compensated_sum(finite.iter().map(|v| (v - mu) * (v - mu))) / (n - 1) as f64).sqrt()
        };
        Self {
            mean,
            std,
            stderr: if n > 0 { std / (n as f64).sqrt() } else { 0.0 },
            n_configs: per_config.len(),
            n_finite: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingResult {
    pub channel: Channel,
    /// Kelvin, where meaningful.
    pub temperature: Option<f64>,
    /// Plain-model `1/Gamma`, s.
    pub gamma_inverse: f64,
    /// Smaller of the two model estimates.
    pub gamma_inverse_lower: f64,
    /// Larger of the two model estimates.
    pub gamma_inverse_upper: f64,
    /// rad^2/s^2.
    pub delta_sq: f64,
    pub fits: Option<CorrelationFits>,
    pub regime: Option<Regime>,
    pub ensemble: Option<EnsembleStats>,
    pub classification: Classification,
    pub status: RowStatus,
}

impl DephasingResult {
    pub fn none(channel: Channel, temperature: Option<f64>) -> Self {
        Self {
            channel,
            temperature,
            gamma_inverse: f64::INFINITY,
            gamma_inverse_lower: f64::INFINITY,
            gamma_inverse_upper: f64::INFINITY,
            delta_sq: 0.0,
            fits: None,
            regime: None,
            ensemble: None,
            classification: Classification::of(channel),
            status: RowStatus::NoDephasing,
        }
    }

    pub fn tau_c(&self) -> Option<f64> {
        self.fits.as_ref().map(|f| f.plain.tau_c)
    }

    pub fn gamma(&self) -> f64 {
        if self.gamma_inverse.is_finite() {
            1.0 / self.gamma_inverse
        } else {
            0.0
        }
    }
}

/// Fitted decays must fit this many times into the window to count as resolved.
pub const RESOLVED_E_FOLDS: f64 = 2.0;

/// A fit whose decay is not resolved inside a window of length `span`: fewer
/// than [`RESOLVED_E_FOLDS`] decay times fit in the window, or the
/// non-decaying offset alone stays above `C(0)/e`.
pub fn decay_unresolved(fit: &CorrelationFit, span: f64) -> bool {
    fit.tau_c * RESOLVED_E_FOLDS > span
        || fit.b >= fit.delta_sq * (-1f64).exp()
        || fit
            .flags
            .iter()
            .any(|f| matches!(f, FitFlag::NoDecayResolved | FitFlag::TauAtUpperBound))
}

/// Fit `c` and convert to a dephasing time. A fitted `tau_c` longer than the
/// window is read as static disorder.
pub fn rate_from_correlation(
    c: &[f64],
    grid: &TimeGrid,
    channel: Channel,
    temperature: Option<f64>,
) -> Result<DephasingResult> {
    let delta_sq = c.first().copied().unwrap_or(0.0);
    if !(delta_sq > 0.0) {
        return Ok(DephasingResult::none(channel, temperature));
    }
    let fits = fit_correlation(c, grid)?;
    let span = grid.span();
    let rate = |f: &CorrelationFit| {
        if decay_unresolved(f, span) {
            static_rate(delta_sq)
        } else {
            extract_rate(delta_sq, f.tau_c)
        }
    };
    let plain = rate(&fits.plain)?;
    let sin = rate(&fits.sinusoidal)?;
    let status = if fits.plain.flags.contains(&FitFlag::NotConverged) {
        RowStatus::FitFlagged
    } else if decay_unresolved(&fits.plain, span) {
        RowStatus::QuasiStatic
    } else {
        RowStatus::Ok
    };
    Ok(DephasingResult {
        channel,
        temperature,
        gamma_inverse: plain.gamma_inverse,
        gamma_inverse_lower: plain.gamma_inverse.min(sin.gamma_inverse),
        gamma_inverse_upper: plain.gamma_inverse.max(sin.gamma_inverse),
        delta_sq,
        regime: plain.regime,
        fits: Some(fits),
        ensemble: None,
        classification: Classification::of(channel),
        status,
    })
}

/// Plain-model `1/Gamma` alone, under the same static-window rule as
/// [`rate_from_correlation`]. Used for per-configuration spreads.
pub fn plain_rate(c: &[f64], grid: &TimeGrid) -> Result<f64> {
    let delta_sq = c.first().copied().unwrap_or(0.0);
    if !(delta_sq > 0.0) {
        return Ok(f64::INFINITY);
    }
    let fit = fit_plain(c, grid)?;
    let r = if decay_unresolved(&fit, grid.span()) {
        static_rate(delta_sq)?
    } else {
        extract_rate(delta_sq, fit.tau_c)?
    };
    Ok(r.gamma_inverse)
}
