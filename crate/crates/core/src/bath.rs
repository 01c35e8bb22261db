//! Classical 13C nuclear-spin bath: random placement, initial orientations,
//! precession in the external plus hyperfine field, and the resulting gap
//! fluctuation.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::{CONSTANTS, MHZ_TO_RAD_PER_S};
use crate::error::{Error, Result};
use crate::fluct::{Channel, FluctuationTrace};
use crate::ingest::SystemBundle;
use crate::numeric::{compensated_sum, TimeGrid};
use crate::spinmodel::SpinTriplet;

/// Magnitude of every classical nuclear moment.
pub const NUCLEAR_SPIN: f64 = 0.5;
/// Default tilt-width constant `c_T` in rad/K.
pub const DEFAULT_C_T: f64 = 1e-3;

/// Distribution of the initial nuclear moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrientationModel {
    /// Gaussian tilt of width `c_t * T` around the field direction (the defect
    /// axis at zero field), uniform azimuth.
    FieldAligned { c_t: f64 },
    /// Uniform on the sphere.
    Isotropic,
}

impl Default for OrientationModel {
    fn default() -> Self {
        OrientationModel::FieldAligned { c_t: DEFAULT_C_T }
    }
}

/// Which electron state supplies the mean-field `<S>` seen by the nuclei.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackAction {
    #[default]
    Upper,
    Lower,
    /// Average of the two qubit states (equal superposition).
    Mean,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSettings {
    /// Fraction of spin-active sites hosting a 13C.
    pub concentration: f64,
    /// Gauss, lab frame.
    pub b_field: Vector3<f64>,
    /// Kelvin.
    pub temperature: f64,
    pub orientation: OrientationModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearSpinConfig {
    /// Atom indices, ascending.
    pub occupied_sites: Vec<usize>,
    /// Initial moments, magnitude [`NUCLEAR_SPIN`].
    pub initial_moments: Vec<Vector3<f64>>,
    pub seed: u64,
    /// Generator stream; one per configuration of an ensemble.
    pub stream: u64,
    pub concentration: f64,
    pub b_field: Vector3<f64>,
    pub temperature: f64,
}

fn perpendicular_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = n.cross(&helper).normalize();
    (e1, n.cross(&e1))
}

/// Draw one configuration. Each spin-active site is occupied independently
/// with probability `concentration`.
pub fn sample_configuration(
    bundle: &SystemBundle,
    settings: &BathSettings,
    seed: u64,
    stream: u64,
) -> Result<NuclearSpinConfig> {
    let c = settings.concentration;
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidArgument(format!(
            "concentration must be in [0, 1], got {c}"
        )));
    }
    if !(settings.temperature.is_finite() && settings.temperature >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be >= 0, got {}",
            settings.temperature
        )));
    }
    if !settings.b_field.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("magnetic field".into()));
    }
    let active: Vec<usize> = (0..bundle.n_atoms())
        .filter(|&i| bundle.atoms[i].spin_active)
        .collect();
    if active.is_empty() {
        return Err(Error::InvalidArgument(
            "bundle has no spin-active sites".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let occupied_sites: Vec<usize> = active
        .into_iter()
        .filter(|_| rng.random::<f64>() < c)
        .collect();

    let reference = if settings.b_field.norm() > 0.0 {
        settings.b_field.normalize()
    } else {
        bundle.meta.axis.normalize()
    };
    let (e1, e2) = perpendicular_basis(&reference);
    let initial_moments = occupied_sites
        .iter()
        .map(|_| {
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let dir = match settings.orientation {
                OrientationModel::FieldAligned { c_t } => {
                    let theta = c_t * settings.temperature * rng.sample::<f64, _>(StandardNormal);
                    if theta == 0.0 {
                        reference
                    } else {
                        reference * theta.cos() + (e1 * phi.cos() + e2 * phi.sin()) * theta.sin()
                    }
                }
                OrientationModel::Isotropic => {
                    let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    Vector3::new(s * phi.cos(), s * phi.sin(), z)
                }
            };
            dir * NUCLEAR_SPIN
        })
        .collect();
    Ok(NuclearSpinConfig {
        occupied_sites,
        initial_moments,
        seed,
        stream,
        concentration: c,
        b_field: settings.b_field,
        temperature: settings.temperature,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecessionTrajectory {
    pub grid: TimeGrid,
    pub sites: Vec<usize>,
    /// `moments[s][k]`: site `s` at time index `k`.
    pub moments: Vec<Vec<Vector3<f64>>>,
    /// Gauss.
    pub effective_fields: Vec<Vector3<f64>>,
    pub seed: u64,
    pub temperature: f64,
}

/// Rotate `v` about unit `k` by `angle` (Rodrigues).
fn rotate(v: &Vector3<f64>, k: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c))
}

/// Mean electron spin felt by the nuclei.
pub fn electron_spin(spin: &SpinTriplet, back_action: BackAction) -> Vector3<f64> {
    let pair = spin.qubit_pair;
    match back_action {
        BackAction::Upper => spin.spin_expectation(pair.upper),
        BackAction::Lower => spin.spin_expectation(pair.lower),
        BackAction::Mean => {
            (spin.spin_expectation(pair.upper) + spin.spin_expectation(pair.lower)) / 2.0
        }
        BackAction::None => Vector3::zeros(),
    }
}

/// Effective field on each occupied site: `B_ext - A <S> / gamma_n`, gauss.
pub fn effective_fields(
    config: &NuclearSpinConfig,
    hfi: &[Matrix3<f64>],
    s_mean: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>> {
    let gamma = CONSTANTS.gamma_n_mhz_per_gauss();
    config
        .occupied_sites
        .iter()
        .map(|&site| {
            let a = hfi.get(site).ok_or_else(|| {
                Error::SiteMismatch(format!("no hyperfine tensor for site {site}"))
            })?;
            Ok(config.b_field - a * s_mean / gamma)
        })
        .collect()
}

/// Exact precession `dI/dt = gamma_n I x B_eff` sampled on `grid`.
pub fn precess(
    config: &NuclearSpinConfig,
    hfi: &[Matrix3<f64>],
    spin: &SpinTriplet,
    back_action: BackAction,
    grid: &TimeGrid,
) -> Result<PrecessionTrajectory> {
    let fields = effective_fields(config, hfi, &electron_spin(spin, back_action))?;
    let gamma_hz = CONSTANTS.gamma_n_mhz_per_gauss() * 1e6;
    let f_max = fields.iter().map(|b| b.norm()).fold(0.0, f64::max) * gamma_hz;
    if f_max > 0.0 {
        let required = 1.0 / (10.0 * f_max);
        if grid.dt >= required {
            return Err(Error::UnderResolvedGrid {
                dt: grid.dt,
                required,
            });
        }
    }
    let moments = config
        .initial_moments
        .iter()
        .zip(&fields)
        .map(|(i0, b)| {
            let norm = b.norm();
            if norm == 0.0 {
                return vec![*i0; grid.len];
            }
            let axis = b / norm;
            let omega = std::f64::consts::TAU * gamma_hz * norm;
            (0..grid.len)
                .map(|k| rotate(i0, &axis, -omega * grid.time(k)))
                .collect()
        })
        .collect();
    Ok(PrecessionTrajectory {
        grid: *grid,
        sites: config.occupied_sites.clone(),
        moments,
        effective_fields: fields,
        seed: config.seed,
        temperature: config.temperature,
    })
}

/// `dE(t) = sum_I (I(t) - I0) . A_I . dS`, rad/s.
pub fn sp_nu_fluctuation(
    trajectory: &PrecessionTrajectory,
    hfi: &[Matrix3<f64>],
    spin: &SpinTriplet,
) -> Result<FluctuationTrace> {
    if trajectory.moments.len() != trajectory.sites.len() {
        return Err(Error::SiteMismatch(format!(
            "{} moment series for {} sites",
            trajectory.moments.len(),
            trajectory.sites.len()
        )));
    }
    let ds = spin.delta_s(spin.qubit_pair);
    let weights: Vec<Vector3<f64>> = trajectory
        .sites
        .iter()
        .map(|&site| {
            hfi.get(site)
                .map(|a| a * ds * MHZ_TO_RAD_PER_S)
                .ok_or_else(|| Error::SiteMismatch(format!("no hyperfine tensor for site {site}")))
        })
        .collect::<Result<_>>()?;
    let values = (0..trajectory.grid.len)
        .map(|k| {
            compensated_sum(
                trajectory
                    .moments
                    .iter()
                    .zip(&weights)
                    .map(|(m, w)| (m[k] - m[0]).dot(w)),
            )
        })
        .collect();
    Ok(FluctuationTrace {
        grid: trajectory.grid,
        values,
        channel: Channel::SpNu,
        seed: trajectory.seed,
        temperature: trajectory.temperature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{generate_synthetic, ModeRecipe, SyntheticSpec};
    use crate::numeric::dominant_angular_frequency;
    use crate::spinmodel::spin_matrices;

    fn bundle(n: usize) -> SystemBundle {
        generate_synthetic(&SyntheticSpec {
            n_atoms: n,
            modes: ModeRecipe {
                translations: true,
                frequencies_thz: vec![],
            },
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn settings(c: f64, b: f64, t: f64) -> BathSettings {
        BathSettings {
            concentration: c,
            b_field: Vector3::new(0.0, 0.0, b),
            temperature: t,
            orientation: OrientationModel::default(),
        }
    }

    fn single_spin(i0: Vector3<f64>, b: Vector3<f64>) -> NuclearSpinConfig {
        NuclearSpinConfig {
            occupied_sites: vec![0],
            initial_moments: vec![i0],
            seed: 0,
            stream: 0,
            concentration: 1.0,
            b_field: b,
            temperature: 0.0,
        }
    }

    #[test]
    fn concentration_extremes_and_zero_temperature() {
        let b = bundle(40);
        let empty = sample_configuration(&b, &settings(0.0, 100.0, 300.0), 1, 0).unwrap();
        assert!(empty.occupied_sites.is_empty());
        let full = sample_configuration(&b, &settings(1.0, 100.0, 0.0), 1, 0).unwrap();
        let active = b.atoms.iter().filter(|a| a.spin_active).count();
        assert_eq!(full.occupied_sites.len(), active);
        for m in &full.initial_moments {
            assert_eq!(*m, Vector3::new(0.0, 0.0, NUCLEAR_SPIN));
        }
        let warm = sample_configuration(&b, &settings(1.0, 100.0, 300.0), 1, 0).unwrap();
        for m in &warm.initial_moments {
            assert!((m.norm() - NUCLEAR_SPIN).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut b = bundle(10);
        assert!(sample_configuration(&b, &settings(1.5, 0.0, 0.0), 1, 0).is_err());
        for a in b.atoms.iter_mut() {
            a.spin_active = false;
        }
        assert!(sample_configuration(&b, &settings(0.5, 0.0, 0.0), 1, 0).is_err());
    }

    #[test]
    fn occupancy_is_binomial() {
        let b = bundle(400);
        let n = b.atoms.iter().filter(|a| a.spin_active).count() as f64;
        let c = 0.05;
        let seeds = 128;
        let total: usize = (0..seeds)
            .map(|s| {
                sample_configuration(&b, &settings(c, 50.0, 10.0), 42, s)
                    .unwrap()
                    .occupied_sites
                    .len()
            })
            .sum();
        let mean = total as f64 / seeds as f64;
        let sd_mean = (n * c * (1.0 - c)).sqrt() / (seeds as f64).sqrt();
        assert!((mean - n * c).abs() < 3.0 * sd_mean, "mean {mean}");
    }

    #[test]
    fn aligned_spin_does_not_move() {
        let spin = spin_matrices(1.0).unwrap();
        let cfg = single_spin(Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.0, 0.0, 300.0));
        let grid = TimeGrid::new(1e-8, 50).unwrap();
        let tr = precess(&cfg, &[Matrix3::zeros()], &spin, BackAction::Upper, &grid).unwrap();
        assert!(tr.moments[0].iter().all(|m| *m == cfg.initial_moments[0]));
    }

    #[test]
    fn larmor_frequency_and_norm() {
        let spin = spin_matrices(1.0).unwrap();
        let b = 1000.0;
        let f = CONSTANTS.gamma_n_mhz_per_gauss() * 1e6 * b;
        let cfg = single_spin(Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.0, 0.0, b));
        let grid = TimeGrid::new(1.0 / (40.0 * f), 4001).unwrap();
        let tr = precess(&cfg, &[Matrix3::zeros()], &spin, BackAction::Upper, &grid).unwrap();
        let phases: Vec<f64> = tr.moments[0].iter().map(|m| m.y.atan2(m.x)).collect();
        let mut unwrapped = vec![phases[0]];
        for w in phases.windows(2) {
            let mut d = w[1] - w[0];
            d -= std::f64::consts::TAU * (d / std::f64::consts::TAU).round();
            unwrapped.push(unwrapped.last().unwrap() + d);
        }
        let slope = (unwrapped.last().unwrap() - unwrapped[0]) / grid.span();
        assert!((slope.abs() / std::f64::consts::TAU - f).abs() / f < 1e-9);
        for m in &tr.moments[0] {
            assert!((m.norm() - 0.5).abs() / 0.5 < 1e-12);
        }
        let coarse = TimeGrid::new(1.0 / (5.0 * f), 10).unwrap();
        assert!(matches!(
            precess(&cfg, &[Matrix3::zeros()], &spin, BackAction::Upper, &coarse),
            Err(Error::UnderResolvedGrid { .. })
        ));
    }

    #[test]
    fn field_scaling_scales_spectral_peak() {
        let b = bundle(64);
        let spin = spin_matrices(1.0).unwrap();
        let zero = vec![Matrix3::zeros(); 64];
        let mut s = settings(0.3, 200.0, 0.0);
        s.orientation = OrientationModel::Isotropic;
        let cfg = sample_configuration(&b, &s, 5, 0).unwrap();
        let f = CONSTANTS.gamma_n_mhz_per_gauss() * 1e6 * 200.0;
        let dt = 1.0 / (37.0 * f);
        let base = precess(
            &cfg,
            &zero,
            &spin,
            BackAction::Upper,
            &TimeGrid::new(dt, 2048).unwrap(),
        )
        .unwrap();
        let factor = 3.0;
        let mut scaled_cfg = cfg.clone();
        scaled_cfg.b_field *= factor;
        let scaled = precess(
            &scaled_cfg,
            &zero,
            &spin,
            BackAction::Upper,
            &TimeGrid::new(dt, 2048).unwrap(),
        )
        .unwrap();
        let peak = |t: &PrecessionTrajectory| {
            let x: Vec<f64> = t.moments[0].iter().map(|m| m.x).collect();
            dominant_angular_frequency(&x, t.grid.dt).unwrap()
        };
        let ratio = peak(&scaled) / peak(&base);
        assert!((ratio - factor).abs() / factor < 5e-3, "ratio {ratio}");
        // time-rescaled grids give the same samples, so the peaks match exactly in scaled units
        let fine = precess(
            &scaled_cfg,
            &zero,
            &spin,
            BackAction::Upper,
            &TimeGrid::new(dt / factor, 2048).unwrap(),
        )
        .unwrap();
        assert!((peak(&fine) / factor / peak(&base) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_hyperfine_no_signal_and_linearity() {
        let b = bundle(64);
        let spin = spin_matrices(1.0).unwrap();
        let mut s = settings(0.5, 500.0, 300.0);
        s.orientation = OrientationModel::Isotropic;
        let cfg = sample_configuration(&b, &s, 11, 3).unwrap();
        let grid = TimeGrid::new(2e-8, 100).unwrap();
        let zero = vec![Matrix3::zeros(); 64];
        let tr = precess(&cfg, &zero, &spin, BackAction::Upper, &grid).unwrap();
        assert!(sp_nu_fluctuation(&tr, &zero, &spin)
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 0.0));

        // uniform doubling of A with the trajectory held fixed doubles dE
        let hfi = b.hfi.clone().unwrap();
        let doubled: Vec<Matrix3<f64>> = hfi.iter().map(|a| a * 2.0).collect();
        let fixed = precess(&cfg, &hfi, &spin, BackAction::None, &grid).unwrap();
        let one = sp_nu_fluctuation(&fixed, &hfi, &spin).unwrap();
        let two = sp_nu_fluctuation(&fixed, &doubled, &spin).unwrap();
        for (a, b) in one.values.iter().zip(&two.values) {
            assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn isotropic_contact_precessing_about_z() {
        // one spin, A = alpha 1, tilted by theta from z, field along z, pair (-1, 0):
        // dS = (0, 0, -1) so dE = -alpha (I_z(t) - I_z(0)) which stays zero for
        // rotation about z, while tilting the field makes it oscillate within 2 alpha |I|
        let spin = spin_matrices(1.0).unwrap();
        let alpha = 0.7;
        let theta: f64 = 0.4;
        let i0 = Vector3::new(theta.sin(), 0.0, theta.cos()) * 0.5;
        let a = Matrix3::identity() * alpha;
        let grid = TimeGrid::new(1e-8, 400).unwrap();
        let cfg = single_spin(i0, Vector3::new(0.0, 0.0, 100.0));
        let tr = precess(&cfg, &[a], &spin, BackAction::None, &grid).unwrap();
        let de = sp_nu_fluctuation(&tr, &[a], &spin).unwrap();
        assert!(de.values.iter().all(|v| v.abs() < 1e-9));
        let cfg = single_spin(i0, Vector3::new(100.0, 0.0, 0.0));
        let tr = precess(&cfg, &[a], &spin, BackAction::None, &grid).unwrap();
        let de = sp_nu_fluctuation(&tr, &[a], &spin).unwrap();
        let bound = 2.0 * alpha * 0.5 * MHZ_TO_RAD_PER_S;
        assert!(de.values.iter().all(|v| v.abs() <= bound * (1.0 + 1e-12)));
        for (k, v) in de.values.iter().enumerate() {
            let iz = tr.moments[0][k].z;
            assert!((v - (-alpha * (iz - i0.z) * MHZ_TO_RAD_PER_S)).abs() < 1e-6);
        }
    }

    #[test]
    fn back_action_shifts_field() {
        let spin = spin_matrices(1.0).unwrap();
        let a = Matrix3::identity() * 0.5;
        let cfg = single_spin(Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.0, 0.0, 100.0));
        let f = effective_fields(&cfg, &[a], &electron_spin(&spin, BackAction::Upper)).unwrap();
        let expect = 100.0 + 0.5 / CONSTANTS.gamma_n_mhz_per_gauss();
        assert!((f[0].z - expect).abs() < 1e-9);
        assert!(
            effective_fields(&single_spin(Vector3::x(), Vector3::z()), &[], &Vector3::z()).is_err()
        );
    }
}
