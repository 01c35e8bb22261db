//! End-to-end workflows: temperature sweeps of the phonon channel and
//! configuration ensembles of the nuclear-spin channels.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    average_correlations, cumulant_g, dephasing_function, plain_rate, rate_from_correlation,
    unbiased_autocorrelation, DephasingResult, EnsembleStats, RowStatus,
};
use crate::bath::{
    effective_fields, electron_spin, precess, sample_configuration, sp_nu_fluctuation, BackAction,
    BathSettings, OrientationModel,
};
use crate::constants::CONSTANTS;
use crate::error::{Error, Result};
use crate::fluct::{
    analytic_autocorrelation, couplings_from_gradients, default_grid, gap_gradients,
    mode_couplings_with, Channel, CouplingOptions, ThermalState, DEFAULT_FREQUENCY_FLOOR_THZ,
};
use crate::ingest::SystemBundle;
use crate::numeric::TimeGrid;
use crate::spinmodel::SpinTriplet;

/// Fallback grid when no mode contributes, so that output files keep a shape.
const EMPTY_GRID_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridOverride {
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
}

impl GridOverride {
    /// Grid after applying the overrides to `default`.
    pub fn apply(&self, default: Option<TimeGrid>) -> Result<Option<TimeGrid>> {
        match (self.dt, self.t_max, default) {
            (None, None, d) => Ok(d),
            (Some(dt), Some(t), _) => TimeGrid::covering(dt, t).map(Some),
            (Some(dt), None, Some(d)) => TimeGrid::covering(dt, d.span()).map(Some),
            (None, Some(t), Some(d)) => TimeGrid::covering(d.dt, t).map(Some),
            (Some(dt), None, None) => TimeGrid::new(dt, EMPTY_GRID_LEN).map(Some),
            (None, Some(t), None) => {
                TimeGrid::covering(t / (EMPTY_GRID_LEN - 1) as f64, t).map(Some)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureOptions {
    pub temperatures: Vec<f64>,
    pub grid: GridOverride,
    pub frequency_floor_thz: f64,
    /// Index into `temperatures` whose C(t), D(t) are returned.
    pub designated: usize,
}

impl Default for PureOptions {
    fn default() -> Self {
        Self {
            temperatures: vec![300.0],
            grid: GridOverride::default(),
            frequency_floor_thz: DEFAULT_FREQUENCY_FLOOR_THZ,
            designated: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureOutput {
    pub rows: Vec<DephasingResult>,
    pub grid: TimeGrid,
    pub designated_temperature: f64,
    /// rad^2/s^2.
    pub correlation: Vec<f64>,
    pub g: Vec<f64>,
    pub dephasing: Vec<f64>,
}

/// Spin-phonon dephasing time at each temperature. `tau_c` is refitted per
/// temperature.
pub fn pure_dephasing(
    bundle: &SystemBundle,
    spin: &SpinTriplet,
    opts: &PureOptions,
) -> Result<PureOutput> {
    if opts.temperatures.is_empty() {
        return Err(Error::InvalidArgument("temperature list is empty".into()));
    }
    if opts.designated >= opts.temperatures.len() {
        return Err(Error::InvalidArgument(
            "designated temperature index out of range".into(),
        ));
    }
    if bundle.modes.is_empty() {
        return Err(Error::MissingBlock {
            channel: "sp-ph",
            block: "modes",
        });
    }
    let copts = CouplingOptions {
        frequency_floor_thz: opts.frequency_floor_thz,
        atoms: None,
    };
    let couplings = mode_couplings_with(bundle, spin, Channel::SpPh, None, &copts)?;
    let natural = default_grid(&couplings);
    let live = natural.is_some();
    let grid = match opts.grid.apply(natural)? {
        Some(g) => g,
        None => TimeGrid::new(1e-15, EMPTY_GRID_LEN)?,
    };
    let per_t: Vec<(DephasingResult, Vec<f64>)> = opts
        .temperatures
        .par_iter()
        .map(|&t| {
            let thermal = ThermalState::new(&couplings, t)?;
            let c = analytic_autocorrelation(&couplings, &thermal, &grid)?;
            let r = if live {
                rate_from_correlation(&c, &grid, Channel::SpPh, Some(t))?
            } else {
                DephasingResult::none(Channel::SpPh, Some(t))
            };
            Ok((r, c))
        })
        .collect::<Result<_>>()?;
    let (designated, correlation) = (&per_t[opts.designated].0, per_t[opts.designated].1.clone());
    let g = match designated.tau_c() {
        Some(tau) => cumulant_g(designated.delta_sq, tau, &grid)?,
        None => vec![0.0; grid.len],
    };
    let dephasing = dephasing_function(&g);
    Ok(PureOutput {
        designated_temperature: opts.temperatures[opts.designated],
        rows: per_t.into_iter().map(|(r, _)| r).collect(),
        grid,
        correlation,
        g,
        dephasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderOptions {
    pub channel: Channel,
    pub concentrations: Vec<f64>,
    /// Field magnitudes, gauss.
    pub b_fields: Vec<f64>,
    /// Field direction; defaults to the defect axis.
    pub axis: Option<Vector3<f64>>,
    pub n_configs: usize,
    pub seed: u64,
    /// Kelvin; sets orientation spread and phonon occupations.
    pub temperature: f64,
    pub orientation: OrientationModel,
    pub back_action: BackAction,
    pub grid: GridOverride,
    pub frequency_floor_thz: f64,
}

impl DisorderOptions {
    /// Defaults for a channel: 128 isotropic configurations for sp-nu, 32
    /// field-aligned ones for sp-nu-ph.
    pub fn for_channel(channel: Channel) -> Self {
        let (n_configs, orientation) = match channel {
            Channel::SpNu => (128, OrientationModel::Isotropic),
            _ => (32, OrientationModel::default()),
        };
        Self {
            channel,
            concentrations: vec![0.011],
            b_fields: vec![50.0],
            axis: None,
            n_configs,
            seed: 1,
            temperature: 300.0,
            orientation,
            back_action: BackAction::Upper,
            grid: GridOverride::default(),
            frequency_floor_thz: DEFAULT_FREQUENCY_FLOOR_THZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRow {
    pub concentration: f64,
    /// Gauss.
    pub b_field: f64,
    pub seed: u64,
    pub result: DephasingResult,
}

/// Common precession grid for a field sweep: the window is one radian of
/// Larmor phase at the strongest applied field, and `dt` resolves the
/// fastest precession any spin-active site could see.
pub fn precession_grid(
    bundle: &SystemBundle,
    spin: &SpinTriplet,
    back_action: BackAction,
    b_vectors: &[Vector3<f64>],
) -> Result<TimeGrid> {
    let hfi = bundle.hfi.as_ref().ok_or(Error::MissingBlock {
        channel: "sp-nu",
        block: "hfi_mhz",
    })?;
    let gamma_hz = CONSTANTS.gamma_n_mhz_per_gauss() * 1e6;
    let s_mean = electron_spin(spin, back_action);
    let active: Vec<usize> = (0..bundle.n_atoms())
        .filter(|&i| bundle.atoms[i].spin_active)
        .collect();
    let mut f_max = 0.0f64;
    for b in b_vectors {
        let probe = crate::bath::NuclearSpinConfig {
            occupied_sites: active.clone(),
            initial_moments: vec![Vector3::zeros(); active.len()],
            seed: 0,
            stream: 0,
            concentration: 1.0,
            b_field: *b,
            temperature: 0.0,
        };
        for f in effective_fields(&probe, hfi, &s_mean)? {
            f_max = f_max.max(f.norm() * gamma_hz);
        }
    }
    let b_max = b_vectors
        .iter()
        .map(|b| b.norm())
        .fold(0.0, f64::max)
        .max(1.0);
    let t_max = 1.0 / (std::f64::consts::TAU * gamma_hz * b_max);
    if f_max <= 0.0 {
        return TimeGrid::covering(t_max / 64.0, t_max);
    }
    let dt = (1.0 / (20.0 * f_max)).min(t_max / 64.0);
    TimeGrid::covering(dt, t_max)
}

/// Phonon grid from the bundle's mode frequencies.
fn mode_grid(bundle: &SystemBundle, floor: f64) -> Option<TimeGrid> {
    let (lo, hi) = bundle
        .modes
        .iter()
        .map(|m| m.frequency_thz)
        .filter(|&f| f >= floor)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), f| {
            (lo.min(f), hi.max(f))
        });
    if hi <= 0.0 {
        return None;
    }
    TimeGrid::covering(1.0 / (20.0 * hi * 1e12), 20.0 / (lo * 1e12)).ok()
}

/// Ensemble sweep over concentrations and fields for a nuclear-spin channel.
///
/// Configuration `i` draws from stream `i` of `seed` at every sweep point, so
/// all points share one set of random numbers. The mean `1/Gamma` comes from
/// the configuration-averaged correlation; the spread from per-configuration
/// fits.
pub fn disorder_sweep(
    bundle: &SystemBundle,
    spin: &SpinTriplet,
    opts: &DisorderOptions,
) -> Result<Vec<DisorderRow>> {
    if opts.concentrations.is_empty() || opts.b_fields.is_empty() {
        return Err(Error::InvalidArgument(
            "concentration and field lists must be non-empty".into(),
        ));
    }
    if opts.n_configs == 0 {
        return Err(Error::InvalidArgument(
            "need at least one configuration".into(),
        ));
    }
    let axis = opts.axis.unwrap_or(bundle.meta.axis);
    if !(axis.norm() > 0.0) {
        return Err(Error::InvalidArgument("field axis must be non-zero".into()));
    }
    let axis = axis.normalize();
    let b_vectors: Vec<Vector3<f64>> = opts.b_fields.iter().map(|&b| axis * b).collect();

    let hfi = bundle.hfi.as_ref().ok_or(Error::MissingBlock {
        channel: match opts.channel {
            Channel::SpNu => "sp-nu",
            _ => "sp-nu-ph",
        },
        block: "hfi_mhz",
    })?;
    let grid = match opts.channel {
        Channel::SpNu => match (opts.grid.dt, opts.grid.t_max) {
            (None, None) => precession_grid(bundle, spin, opts.back_action, &b_vectors)?,
            _ => opts
                .grid
                .apply(Some(precession_grid(
                    bundle,
                    spin,
                    opts.back_action,
                    &b_vectors,
                )?))?
                .expect("override with default"),
        },
        Channel::SpNuPh => {
            if bundle.hfi_grad.is_none() {
                return Err(Error::MissingBlock {
                    channel: "sp-nu-ph",
                    block: "hfi_grad_mhz_per_ang",
                });
            }
            if bundle.modes.is_empty() {
                return Err(Error::MissingBlock {
                    channel: "sp-nu-ph",
                    block: "modes",
                });
            }
            match opts
                .grid
                .apply(mode_grid(bundle, opts.frequency_floor_thz))?
            {
                Some(g) => g,
                None => TimeGrid::new(1e-15, EMPTY_GRID_LEN)?,
            }
        }
        Channel::SpPh => {
            return Err(Error::InvalidArgument(
                "sp-ph is not a disorder channel".into(),
            ));
        }
    };

    let mut points = Vec::new();
    for &c in &opts.concentrations {
        for (bi, &b) in opts.b_fields.iter().enumerate() {
            points.push((c, b, b_vectors[bi]));
        }
    }
    points
        .iter()
        .map(|&(c, b, bvec)| {
            let settings = BathSettings {
                concentration: c,
                b_field: bvec,
                temperature: opts.temperature,
                orientation: opts.orientation,
            };
            let per_config: Vec<Vec<f64>> = (0..opts.n_configs as u64)
                .into_par_iter()
                .map(|i| {
                    let cfg = sample_configuration(bundle, &settings, opts.seed, i)?;
                    config_correlation(bundle, spin, opts, &cfg, hfi, &grid)
                })
                .collect::<Result<_>>()?;
            let per_rates: Vec<f64> = per_config
                .par_iter()
                .map(|cc| plain_rate(cc, &grid))
                .collect::<Result<_>>()?;
            let mean_c = average_correlations(&per_config)?;
            let mut result =
                rate_from_correlation(&mean_c, &grid, opts.channel, Some(opts.temperature))?;
            result.ensemble = Some(EnsembleStats::new(result.gamma_inverse, &per_rates));
            if result.status == RowStatus::NoDephasing {
                result.delta_sq = 0.0;
            }
            Ok(DisorderRow {
                concentration: c,
                b_field: b,
                seed: opts.seed,
                result,
            })
        })
        .collect()
}

fn config_correlation(
    bundle: &SystemBundle,
    spin: &SpinTriplet,
    opts: &DisorderOptions,
    cfg: &crate::bath::NuclearSpinConfig,
    hfi: &[nalgebra::Matrix3<f64>],
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    if cfg.occupied_sites.is_empty() {
        return Ok(vec![0.0; grid.len]);
    }
    match opts.channel {
        Channel::SpNu => {
            let traj = precess(cfg, hfi, spin, opts.back_action, grid)?;
            let trace = sp_nu_fluctuation(&traj, hfi, spin)?;
            Ok(unbiased_autocorrelation(&trace.values))
        }
        _ => {
            let g = gap_gradients(bundle, spin, Channel::SpNuPh, Some(cfg))?;
            let copts = CouplingOptions {
                frequency_floor_thz: opts.frequency_floor_thz,
                atoms: None,
            };
            let couplings = couplings_from_gradients(bundle, &g, Channel::SpNuPh, &copts)?;
            let thermal = ThermalState::new(&couplings, opts.temperature)?;
            analytic_autocorrelation(&couplings, &thermal, grid)
        }
    }
}
