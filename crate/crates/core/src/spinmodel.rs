//! Spin-1 operator algebra and first-order energy-gap expectation values.
//!
//! All gaps are diagonal expectation values in the unperturbed `m_s` basis
//! quantized along the defect axis. Tensors arrive in the lab frame and are
//! rotated into the defect frame before contraction.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::CONSTANTS;
use crate::error::{Error, Result};

/// Tolerance used to decide whether a perturbation is symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Ordered pair of triplet states whose energy difference defines the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitPair {
    pub upper: i8,
    pub lower: i8,
}

impl QubitPair {
    pub fn new(upper: i8, lower: i8) -> Result<Self> {
        let valid = |m: i8| (-1..=1).contains(&m);
        if !valid(upper) || !valid(lower) || upper == lower {
            return Err(Error::InvalidQubitPair { upper, lower });
        }
        Ok(Self { upper, lower })
    }

    /// `m_upper - m_lower`.
    pub fn delta_m(&self) -> f64 {
        f64::from(self.upper - self.lower)
    }
}

impl Default for QubitPair {
    fn default() -> Self {
        Self {
            upper: -1,
            lower: 0,
        }
    }
}

pub type ComplexMatrix3 = Matrix3<Complex64>;

/// S = 1 spin operators in an ordered `m_s` eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinTriplet {
    /// `[S_x, S_y, S_z]`, hbar = 1.
    pub spin_matrices: [ComplexMatrix3; 3],
    /// `m_s` label of each basis index.
    pub basis: [i8; 3],
    pub qubit_pair: QubitPair,
    /// Rotation taking lab-frame vectors into the defect frame (axis -> z).
    pub frame: Matrix3<f64>,
    // quadratic[b][(i, j)] = Re <b| (S_i S_j + S_j S_i) / 2 |b>
    quadratic: [Matrix3<f64>; 3],
}

/// Build the spin operators for spin quantum number `s`. Only `s = 1` is
/// supported; the basis is ordered `m_s = +1, 0, -1`.
pub fn spin_matrices(s: f64) -> Result<SpinTriplet> {
    if s != 1.0 {
        return Err(Error::UnsupportedSpin(s));
    }
    SpinTriplet::with_basis([1, 0, -1])
}

impl SpinTriplet {
    /// Triplet operators in an arbitrary ordering of the `m_s` basis.
    pub fn with_basis(basis: [i8; 3]) -> Result<Self> {
        let mut sorted = basis;
        sorted.sort_unstable();
        if sorted != [-1, 0, 1] {
            return Err(Error::InvalidArgument(format!(
                "basis must be a permutation of {{+1, 0, -1}}, got {basis:?}"
            )));
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut sx = ComplexMatrix3::from_element(zero);
        let mut sy = ComplexMatrix3::from_element(zero);
        let mut sz = ComplexMatrix3::from_element(zero);
        let index = |m: i8| basis.iter().position(|&b| b == m).unwrap();
        for &m in &basis {
            let i = index(m);
            sz[(i, i)] = Complex64::new(f64::from(m), 0.0);
            if m < 1 {
                // S+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>
                let mf = f64::from(m);
                let c = (2.0 - mf * (mf + 1.0)).sqrt();
                let j = index(m + 1);
                // S_x = (S+ + S-)/2, S_y = (S+ - S-)/(2i)
                sx[(j, i)] += Complex64::new(c / 2.0, 0.0);
                sx[(i, j)] += Complex64::new(c / 2.0, 0.0);
                sy[(j, i)] += Complex64::new(0.0, -c / 2.0);
                sy[(i, j)] += Complex64::new(0.0, c / 2.0);
            }
        }
        let mats = [sx, sy, sz];
        let mut quadratic = [Matrix3::zeros(); 3];
        for (b, q) in quadratic.iter_mut().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    let prod = mats[i] * mats[j] + mats[j] * mats[i];
                    q[(i, j)] = prod[(b, b)].re / 2.0;
                }
            }
        }
        Ok(Self {
            spin_matrices: mats,
            basis,
            qubit_pair: QubitPair::default(),
            frame: Matrix3::identity(),
            quadratic,
        })
    }

    pub fn with_pair(mut self, pair: QubitPair) -> Self {
        self.qubit_pair = pair;
        self
    }

    /// Quantize along `axis` (lab frame). The frame rotation maps `axis` onto z.
    pub fn oriented_along(mut self, axis: &Vector3<f64>) -> Result<Self> {
        self.frame = frame_rotation(axis)?;
        Ok(self)
    }

    fn basis_index(&self, m: i8) -> usize {
        self.basis
            .iter()
            .position(|&b| b == m)
            .expect("qubit pair validated against the basis")
    }

    /// Lab-frame tensor rotated into the defect frame.
    pub fn to_frame(&self, t: &Matrix3<f64>) -> Matrix3<f64> {
        self.frame * t * self.frame.transpose()
    }

    /// `<m| S |m>` in the lab frame.
    pub fn spin_expectation(&self, m: i8) -> Vector3<f64> {
        self.frame.transpose() * Vector3::new(0.0, 0.0, f64::from(m))
    }

    /// `<upper|S|upper> - <lower|S|lower>` in the lab frame.
    pub fn delta_s(&self, pair: QubitPair) -> Vector3<f64> {
        self.spin_expectation(pair.upper) - self.spin_expectation(pair.lower)
    }

    /// First-order gap shift `<u|S.d.S|u> - <l|S.d.S|l>` for a symmetric
    /// lab-frame perturbation `delta`, in the units of `delta`.
    pub fn gap_expectation(&self, delta: &Matrix3<f64>, pair: QubitPair) -> Result<f64> {
        check_finite(delta, "gap perturbation")?;
        let asym = (delta - delta.transpose()).abs().max();
        let scale = delta.abs().max().max(1.0);
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::NotSymmetric {
                asymmetry: asym,
                tolerance: SYMMETRY_TOLERANCE * scale,
            });
        }
        Ok(self.gap_unchecked(delta, pair))
    }

    /// Same as [`gap_expectation`](Self::gap_expectation) without the
    /// symmetry check; used in inner loops over validated bundle data.
    pub fn gap_unchecked(&self, delta: &Matrix3<f64>, pair: QubitPair) -> f64 {
        let d = self.to_frame(delta);
        let q = self.quadratic[self.basis_index(pair.upper)]
            - self.quadratic[self.basis_index(pair.lower)];
        d.component_mul(&q).sum()
    }

    /// Static Zeeman contribution `gamma_e B.(<u|S|u> - <l|S|l>)` in MHz,
    /// field in gauss.
    pub fn zeeman_gap(&self, b_field: &Vector3<f64>, pair: QubitPair) -> Result<f64> {
        if !b_field.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("magnetic field".into()));
        }
        Ok(CONSTANTS.gamma_e_mhz_per_gauss * b_field.dot(&self.delta_s(pair)))
    }
}

/// Rotation matrix taking the unit vector along `axis` onto +z.
pub fn frame_rotation(axis: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = axis.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "defect axis must be non-zero, got {axis:?}"
        )));
    }
    let a = axis / norm;
    let z = Vector3::z();
    if (a - z).norm() < 1e-15 {
        return Ok(Matrix3::identity());
    }
    if (a + z).norm() < 1e-15 {
        // half turn about x
        return Ok(
            Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI).into_inner(),
        );
    }
    let rot = Rotation3::rotation_between(&a, &z)
        .ok_or_else(|| Error::InvalidArgument("degenerate defect axis".into()))?;
    Ok(rot.into_inner())
}

/// Rotation about `axis` by `angle` (right-handed).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

fn check_finite(m: &Matrix3<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}
