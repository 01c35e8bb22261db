//! Atom- and mode-resolved phonon dephasing times.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rate_from_correlation, RowStatus};
use crate::error::{Error, Result};
use crate::fluct::{
    analytic_autocorrelation, couplings_from_gradients, default_grid, gap_gradients,
    mode_variances, Channel, CouplingOptions, ModeCoupling, ThermalState,
    DEFAULT_FREQUENCY_FLOOR_THZ,
};
use crate::ingest::SystemBundle;
use crate::numeric::TimeGrid;
use crate::spinmodel::SpinTriplet;

pub const DEFAULT_SHELL_RADIUS_ANG: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolveBy {
    Atom,
    Mode,
}

impl fmt::Display for ResolveBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResolveBy::Atom => "atom",
            ResolveBy::Mode => "mode",
        })
    }
}

impl FromStr for ResolveBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atom" => Ok(ResolveBy::Atom),
            "mode" => Ok(ResolveBy::Mode),
            _ => Err(Error::InvalidArgument(format!(
                "unknown resolution '{s}' (atom, mode)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveOptions {
    pub by: ResolveBy,
    pub temperature: f64,
    pub grid: Option<TimeGrid>,
    pub frequency_floor_thz: f64,
    /// Defect-centred shell used for the localization score.
    pub shell_radius_ang: f64,
}

impl ResolveOptions {
    pub fn new(by: ResolveBy, temperature: f64) -> Self {
        Self {
            by,
            temperature,
            grid: None,
            frequency_floor_thz: DEFAULT_FREQUENCY_FLOOR_THZ,
            shell_radius_ang: DEFAULT_SHELL_RADIUS_ANG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRow {
    /// Atom or mode index.
    pub index: usize,
    /// Distance from the defect centre (A) for atoms, frequency (THz) for modes.
    pub coordinate: f64,
    /// Seconds; infinite when the unit does not couple.
    pub gamma_inverse: f64,
    /// rad^2/s^2.
    pub delta_sq: f64,
    /// `sum_{a in shell} p_a^2` with `p_a = |e(a)|^2`; modes only.
    pub localization: Option<f64>,
    pub status: RowStatus,
}

/// Inverse participation ratio of `eigenvector` restricted to `shell`.
pub fn shell_localization(eigenvector: &[nalgebra::Vector3<f64>], shell: &[usize]) -> f64 {
    shell
        .iter()
        .map(|&a| eigenvector[a].norm_squared().powi(2))
        .sum()
}

/// Re-run the analytic sp-ph pipeline keeping only one atom's or one mode's
/// terms at a time. All units share the grid of the full bundle.
pub fn resolve_contributions(
    bundle: &SystemBundle,
    spin: &SpinTriplet,
    opts: &ResolveOptions,
) -> Result<Vec<ResolvedRow>> {
    let gradients = gap_gradients(bundle, spin, Channel::SpPh, None)?;
    let base = CouplingOptions {
        frequency_floor_thz: opts.frequency_floor_thz,
        atoms: None,
    };
    let total = couplings_from_gradients(bundle, &gradients, Channel::SpPh, &base)?;
    let grid = match opts.grid.or_else(|| default_grid(&total)) {
        Some(g) => g,
        None => TimeGrid::new(1e-15, 16)?,
    };
    let center = bundle.center();

    let unit_row =
        |index: usize, coordinate: f64, couplings: &[ModeCoupling], localization: Option<f64>| {
            let thermal = ThermalState::new(couplings, opts.temperature)?;
            let delta_sq: f64 =
                crate::numeric::compensated_sum(mode_variances(couplings, &thermal)?);
            let (gamma_inverse, status) = if delta_sq > 0.0 {
                let c = analytic_autocorrelation(couplings, &thermal, &grid)?;
                let r = rate_from_correlation(&c, &grid, Channel::SpPh, Some(opts.temperature))?;
                (r.gamma_inverse, r.status)
            } else {
                (f64::INFINITY, RowStatus::NoDephasing)
            };
            Ok(ResolvedRow {
                index,
                coordinate,
                gamma_inverse,
                delta_sq,
                localization,
                status,
            })
        };

    match opts.by {
        ResolveBy::Atom => (0..bundle.n_atoms())
            .into_par_iter()
            .map(|a| {
                let o = CouplingOptions {
                    atoms: Some(vec![a]),
                    ..base.clone()
                };
                let c = couplings_from_gradients(bundle, &gradients, Channel::SpPh, &o)?;
                unit_row(a, (bundle.atoms[a].position - center).norm(), &c, None)
            })
            .collect(),
        ResolveBy::Mode => {
            let shell: Vec<usize> = (0..bundle.n_atoms())
                .filter(|&a| (bundle.atoms[a].position - center).norm() <= opts.shell_radius_ang)
                .collect();
            total
                .par_iter()
                .map(|m| {
                    let loc = shell_localization(&bundle.modes[m.mode_index].eigenvector, &shell);
                    unit_row(
                        m.mode_index,
                        m.frequency_thz,
                        std::slice::from_ref(m),
                        Some(loc),
                    )
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{generate_synthetic, ModeRecipe, SyntheticSpec};
    use crate::numeric::compensated_sum;
    use crate::spinmodel::spin_matrices;

    fn bundle() -> SystemBundle {
        generate_synthetic(&SyntheticSpec {
            n_atoms: 16,
            modes: ModeRecipe {
                translations: true,
                frequencies_thz: vec![6.0, 12.0, 18.0, 24.0, 30.0],
            },
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn mode_variances_add_up() {
        let b = bundle();
        let spin = spin_matrices(1.0).unwrap();
        let rows =
            resolve_contributions(&b, &spin, &ResolveOptions::new(ResolveBy::Mode, 300.0)).unwrap();
        let couplings = crate::fluct::mode_couplings(&b, &spin, Channel::SpPh, None).unwrap();
        let th = ThermalState::new(&couplings, 300.0).unwrap();
        let total = compensated_sum(mode_variances(&couplings, &th).unwrap());
        let parts = compensated_sum(rows.iter().map(|r| r.delta_sq));
        assert!((parts - total).abs() <= 1e-10 * total);
        for r in rows.iter().take(3) {
            assert!(r.gamma_inverse.is_infinite());
        }
    }

    #[test]
    fn carriers_dominate_atom_table() {
        let b = bundle();
        let spin = spin_matrices(1.0).unwrap();
        let rows =
            resolve_contributions(&b, &spin, &ResolveOptions::new(ResolveBy::Atom, 300.0)).unwrap();
        let best = rows
            .iter()
            .min_by(|x, y| x.gamma_inverse.total_cmp(&y.gamma_inverse))
            .unwrap();
        let dmin = rows
            .iter()
            .map(|r| r.coordinate)
            .fold(f64::INFINITY, f64::min);
        assert!((best.coordinate - dmin).abs() < 1e-9);
        // atoms without a gradient never dephase
        assert!(rows[5].gamma_inverse.is_infinite());
    }
}
