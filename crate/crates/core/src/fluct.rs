//! Phonon-driven gap fluctuations: mode couplings, thermal amplitudes,
//! the analytic harmonic-bath correlation and random-phase realizations.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::NuclearSpinConfig;
use crate::constants::{CONSTANTS, GHZ_TO_RAD_PER_S, MHZ_TO_RAD_PER_S, THZ_TO_RAD_PER_S};
use crate::error::{Error, Result};
use crate::ingest::SystemBundle;
use crate::numeric::{compensated_sum, TimeGrid};
use crate::spinmodel::{QubitPair, SpinTriplet};

/// Modes below this frequency are excluded from every sum.
pub const DEFAULT_FREQUENCY_FLOOR_THZ: f64 = 0.1;

/// Dephasing channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    /// Phonon-modulated zero-field splitting.
    #[serde(rename = "sp-ph")]
    SpPh,
    /// Phonon-modulated hyperfine coupling to static nuclear spins.
    #[serde(rename = "sp-nu-ph")]
    SpNuPh,
    /// Nuclear-spin precession through the hyperfine coupling.
    #[serde(rename = "sp-nu")]
    SpNu,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::SpPh, Channel::SpNuPh, Channel::SpNu];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::SpPh => "sp-ph",
            Channel::SpNuPh => "sp-nu-ph",
            Channel::SpNu => "sp-nu",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown channel '{s}' (sp-ph, sp-nu-ph, sp-nu)"))
            })
    }
}

/// Bose-Einstein occupation of a mode of ordinary frequency `freq_thz` at
/// `temperature` kelvin.
pub fn occupation(freq_thz: f64, temperature: f64) -> Result<f64> {
    if !(freq_thz.is_finite() && freq_thz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mode frequency must be > 0, got {freq_thz} THz"
        )));
    }
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be >= 0, got {temperature} K"
        )));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    let x = CONSTANTS.planck * freq_thz * 1e12 / (CONSTANTS.k_b * temperature);
    Ok(1.0 / x.exp_m1())
}

/// Linear coupling of one mode to the qubit gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCoupling {
    pub mode_index: usize,
    pub frequency_thz: f64,
    pub q_weight: f64,
    /// rad/s per mass-weighted angstrom (sqrt(amu) A).
    pub coupling: f64,
    pub channel: Channel,
    /// Below the frequency floor; coupling forced to zero.
    pub excluded: bool,
}

impl ModeCoupling {
    pub fn angular_frequency(&self) -> f64 {
        self.frequency_thz * THZ_TO_RAD_PER_S
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOptions {
    pub frequency_floor_thz: f64,
    /// Keep only these atoms' terms in the contraction.
    pub atoms: Option<Vec<usize>>,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            frequency_floor_thz: DEFAULT_FREQUENCY_FLOOR_THZ,
            atoms: None,
        }
    }
}

/// Per-atom gap gradient `d(gap)/dR_a` in rad/s per angstrom.
///
/// For the spin-phonon channel each component is the gap expectation of the
/// ZFS gradient. For the spin-nuclear-phonon channel it is
/// `I0 . dA/dR . dS` summed over the occupied sites.
pub fn gap_gradients(
    bundle: &SystemBundle,
    spin: &SpinTriplet,
    channel: Channel,
    nuclear: Option<&NuclearSpinConfig>,
) -> Result<Vec<Vector3<f64>>> {
    let pair = spin.qubit_pair;
    match channel {
        Channel::SpPh => {
            let grad = bundle.zfs_grad.as_ref().ok_or(Error::MissingBlock {
                channel: "sp-ph",
                block: "zfs_grad_ghz_per_ang",
            })?;
            Ok(grad
                .iter()
                .map(|g| {
                    Vector3::from_fn(|j, _| spin.gap_unchecked(&g[j], pair) * GHZ_TO_RAD_PER_S)
                })
                .collect())
        }
        Channel::SpNuPh => {
            let grad = bundle.hfi_grad.as_ref().ok_or(Error::MissingBlock {
                channel: "sp-nu-ph",
                block: "hfi_grad_mhz_per_ang",
            })?;
            let config = nuclear.ok_or_else(|| {
                Error::InvalidArgument(
                    "sp-nu-ph couplings need a nuclear spin configuration".into(),
                )
            })?;
            let ds = spin.delta_s(pair);
            let mut out = vec![Vector3::zeros(); bundle.n_atoms()];
            for (&site, i0) in config.occupied_sites.iter().zip(&config.initial_moments) {
                let g = grad.get(site).ok_or_else(|| {
                    Error::SiteMismatch(format!("nuclear site {site} has no hyperfine gradient"))
                })?;
                out[site] += Vector3::from_fn(|j, _| i0.dot(&(g[j] * ds)) * MHZ_TO_RAD_PER_S);
            }
            Ok(out)
        }
        Channel::SpNu => Err(Error::InvalidArgument(
            "sp-nu is driven by precession, not phonons".into(),
        )),
    }
}

/// Couplings from precomputed per-atom gap gradients.
pub fn couplings_from_gradients(
    bundle: &SystemBundle,
    gradients: &[Vector3<f64>],
    channel: Channel,
    opts: &CouplingOptions,
) -> Result<Vec<ModeCoupling>> {
    let n = bundle.n_atoms();
    if gradients.len() != n {
        return Err(Error::SiteMismatch(format!(
            "{} gap gradients for {n} atoms",
            gradients.len()
        )));
    }
    let mut keep = vec![opts.atoms.is_none(); n];
    if let Some(list) = &opts.atoms {
        for &a in list {
            *keep.get_mut(a).ok_or_else(|| {
                Error::InvalidArgument(format!("atom {a} out of range for {n} atoms"))
            })? = true;
        }
    }
    let inv_sqrt_m: Vec<f64> = bundle
        .atoms
        .iter()
        .map(|a| a.mass_amu.sqrt().recip())
        .collect();
    Ok(bundle
        .modes
        .par_iter()
        .enumerate()
        .map(|(idx, mode)| {
            let excluded = mode.frequency_thz < opts.frequency_floor_thz;
            let coupling = if excluded {
                0.0
            } else {
                compensated_sum(
                    (0..n)
                        .filter(|&a| keep[a])
                        .map(|a| mode.eigenvector[a].dot(&gradients[a]) * inv_sqrt_m[a]),
                )
            };
            ModeCoupling {
                mode_index: idx,
                frequency_thz: mode.frequency_thz,
                q_weight: mode.q_weight,
                coupling,
                channel,
                excluded,
            }
        })
        .collect())
}

/// `K_l = sum_{a,j} e_l(a,j) / sqrt(m_a) * d(gap)/dR_{a,j}` for every mode.
pub fn mode_couplings(
    bundle: &SystemBundle,
    spin: &SpinTriplet,
    channel: Channel,
    nuclear: Option<&NuclearSpinConfig>,
) -> Result<Vec<ModeCoupling>> {
    mode_couplings_with(bundle, spin, channel, nuclear, &CouplingOptions::default())
}

pub fn mode_couplings_with(
    bundle: &SystemBundle,
    spin: &SpinTriplet,
    channel: Channel,
    nuclear: Option<&NuclearSpinConfig>,
    opts: &CouplingOptions,
) -> Result<Vec<ModeCoupling>> {
    let g = gap_gradients(bundle, spin, channel, nuclear)?;
    couplings_from_gradients(bundle, &g, channel, opts)
}

/// Occupations and zero-point-plus-thermal amplitudes at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub temperature: f64,
    pub occupations: Vec<f64>,
    /// `sigma^2 = hbar (2n + 1) / (2 omega)`, amu A^2. Zero for excluded modes.
    pub amplitude_sq: Vec<f64>,
}

impl ThermalState {
    pub fn new(couplings: &[ModeCoupling], temperature: f64) -> Result<Self> {
        let hbar = CONSTANTS.hbar_amu_ang2_per_s();
        let mut occupations = Vec::with_capacity(couplings.len());
        let mut amplitude_sq = Vec::with_capacity(couplings.len());
        for c in couplings {
            if c.excluded {
                if !(temperature.is_finite() && temperature >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "temperature must be >= 0, got {temperature} K"
                    )));
                }
                occupations.push(0.0);
                amplitude_sq.push(0.0);
                continue;
            }
            let n = occupation(c.frequency_thz, temperature)?;
            occupations.push(n);
            amplitude_sq.push(hbar * (2.0 * n + 1.0) / (2.0 * c.angular_frequency()));
        }
        Ok(Self {
            temperature,
            occupations,
            amplitude_sq,
        })
    }
}

fn check_consistent(couplings: &[ModeCoupling], thermal: &ThermalState) -> Result<()> {
    if couplings.is_empty() {
        return Err(Error::EmptyCouplings);
    }
    if thermal.amplitude_sq.len() != couplings.len() {
        return Err(Error::InvalidArgument(format!(
            "thermal state has {} modes, couplings {}",
            thermal.amplitude_sq.len(),
            couplings.len()
        )));
    }
    Ok(())
}

/// Per-mode contribution to `C(0)`: `w K^2 sigma^2 / 2`, rad^2/s^2.
pub fn mode_variances(couplings: &[ModeCoupling], thermal: &ThermalState) -> Result<Vec<f64>> {
    check_consistent(couplings, thermal)?;
    Ok(couplings
        .iter()
        .zip(&thermal.amplitude_sq)
        .map(|(c, s2)| c.q_weight * c.coupling * c.coupling * s2 / 2.0)
        .collect())
}

/// `C(t) = sum_l w_l K_l^2 sigma_l^2 cos(omega_l t) / 2` on `grid`.
pub fn analytic_autocorrelation(
    couplings: &[ModeCoupling],
    thermal: &ThermalState,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let var = mode_variances(couplings, thermal)?;
    let terms: Vec<(f64, f64)> = couplings
        .iter()
        .zip(var)
        .filter(|(_, v)| *v != 0.0)
        .map(|(c, v)| (v, c.angular_frequency()))
        .collect();
    Ok((0..grid.len)
        .into_par_iter()
        .map(|k| {
            let t = grid.time(k);
            compensated_sum(terms.iter().map(|&(v, w)| v * (w * t).cos()))
        })
        .collect())
}

/// Largest retained mode frequency, THz.
pub fn max_retained_frequency(couplings: &[ModeCoupling]) -> Option<f64> {
    couplings
        .iter()
        .filter(|c| !c.excluded && c.coupling != 0.0)
        .map(|c| c.frequency_thz)
        .reduce(f64::max)
}

/// Default grid: `dt = 1/(20 f_max)`, `t_max >= 20 / f_min` over modes with
/// non-zero coupling. `None` when no mode contributes.
pub fn default_grid(couplings: &[ModeCoupling]) -> Option<TimeGrid> {
    let live = couplings
        .iter()
        .filter(|c| !c.excluded && c.coupling != 0.0);
    let (lo, hi) = live.fold((f64::INFINITY, 0.0f64), |(lo, hi), c| {
        (lo.min(c.frequency_thz), hi.max(c.frequency_thz))
    });
    if hi <= 0.0 {
        return None;
    }
    let dt = 1.0 / (20.0 * hi * 1e12);
    TimeGrid::covering(dt, 20.0 / (lo * 1e12)).ok()
}

/// Energy-gap fluctuation samples for one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationTrace {
    pub grid: TimeGrid,
    /// rad/s.
    pub values: Vec<f64>,
    pub channel: Channel,
    pub seed: u64,
    /// Kelvin.
    pub temperature: f64,
}

/// `dE(t) = sum_l K_l sigma_l sqrt(w_l) cos(omega_l t + phi_l)` with phases
/// drawn uniformly from a generator seeded by `seed`.
pub fn stochastic_trace(
    couplings: &[ModeCoupling],
    thermal: &ThermalState,
    grid: &TimeGrid,
    seed: u64,
) -> Result<FluctuationTrace> {
    check_consistent(couplings, thermal)?;
    if let Some(f_max) = max_retained_frequency(couplings) {
        let required = 1.0 / (10.0 * f_max * 1e12);
        if grid.dt >= required {
            return Err(Error::UnderResolvedGrid {
                dt: grid.dt,
                required,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64)> = couplings
        .iter()
        .zip(&thermal.amplitude_sq)
        .map(|(c, s2)| {
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            (
                c.coupling * s2.sqrt() * c.q_weight.sqrt(),
                c.angular_frequency(),
                phase,
            )
        })
        .filter(|t| t.0 != 0.0)
        .collect();
    let values = (0..grid.len)
        .map(|k| {
            let t = grid.time(k);
            compensated_sum(terms.iter().map(|&(a, w, p)| a * (w * t + p).cos()))
        })
        .collect();
    Ok(FluctuationTrace {
        grid: *grid,
        values,
        channel: couplings[0].channel,
        seed,
        temperature: thermal.temperature,
    })
}

/// Gap shift along the qubit pair for a lab-frame spin vector; helper used by
/// the hyperfine channels.
pub fn hyperfine_gap(
    moment: &Vector3<f64>,
    a: &nalgebra::Matrix3<f64>,
    spin: &SpinTriplet,
    pair: QubitPair,
) -> f64 {
    moment.dot(&(a * spin.delta_s(pair)))
}
