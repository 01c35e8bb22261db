//! Physical constants (CODATA 2018 where applicable).
//!
//! Frequencies are ordinary (cycles per second); conversion to angular
//! units happens in the correlation pipeline.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J s.
    pub hbar: f64,
    /// Planck constant, J s.
    pub planck: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Electron gyromagnetic ratio gamma_e / 2pi, MHz/G.
    pub gamma_e_mhz_per_gauss: f64,
    /// 13C nuclear gyromagnetic ratio gamma_n / 2pi, kHz/G.
    pub gamma_n_khz_per_gauss: f64,
    /// Vacuum permeability, N/A^2.
    pub mu0: f64,
    /// Free-electron g factor (magnitude).
    pub g_e: f64,
    /// Bohr magneton, J/T.
    pub mu_b: f64,
    /// Nuclear magneton, J/T.
    pub mu_n: f64,
    /// 13C nuclear g factor.
    pub g_i: f64,
    /// Atomic mass unit, kg.
    pub amu: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    hbar: 1.054_571_817e-34,
    planck: 6.626_070_15e-34,
    k_b: 1.380_649e-23,
    gamma_e_mhz_per_gauss: 2.802_495_142_42,
    gamma_n_khz_per_gauss: 1.070_84,
    mu0: 1.256_637_062_12e-6,
    g_e: 2.002_319_304_362_56,
    mu_b: 9.274_010_078_3e-24,
    mu_n: 5.050_783_746_1e-27,
    g_i: 1.404_82,
    amu: 1.660_539_066_60e-27,
};

/// GHz (ordinary) to rad/s.
pub const GHZ_TO_RAD_PER_S: f64 = 2.0 * PI * 1e9;
/// MHz (ordinary) to rad/s.
pub const MHZ_TO_RAD_PER_S: f64 = 2.0 * PI * 1e6;
/// THz (ordinary) to rad/s.
pub const THZ_TO_RAD_PER_S: f64 = 2.0 * PI * 1e12;

impl PhysicalConstants {
    /// hbar expressed in amu * angstrom^2 / s, the natural unit for
    /// mass-weighted normal-mode amplitudes.
    pub fn hbar_amu_ang2_per_s(&self) -> f64 {
        // 1 amu * A^2 / s^2 = amu * 1e-20 J
        self.hbar / (self.amu * 1e-20)
    }

    /// 13C gyromagnetic ratio in MHz/G.
    pub fn gamma_n_mhz_per_gauss(&self) -> f64 {
        self.gamma_n_khz_per_gauss * 1e-3
    }

    /// Point-dipole spin-spin prefactor mu0 g_e^2 mu_B^2 / (4 pi h) in GHz * A^3.
    pub fn zfs_dipole_ghz_ang3(&self) -> f64 {
        let joule_m3 = self.mu0 / (4.0 * PI) * self.g_e * self.g_e * self.mu_b * self.mu_b;
        joule_m3 / self.planck * 1e30 * 1e-9
    }

    /// Point-dipole hyperfine prefactor mu0 g_e g_I mu_B mu_N / (4 pi h) in MHz * A^3.
    pub fn hfi_dipole_mhz_ang3(&self) -> f64 {
        let joule_m3 = self.mu0 / (4.0 * PI) * self.g_e * self.g_i * self.mu_b * self.mu_n;
        joule_m3 / self.planck * 1e30 * 1e-6
    }
}
