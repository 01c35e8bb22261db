//! Point-dipole synthetic systems.
//!
//! The electron spin density is collapsed onto two carrier atoms. The
//! zero-field splitting is then the closed-form dipolar tensor of the pair,
//! and each nucleus sees the dipolar field of both carriers plus an optional
//! user-supplied Fermi-contact scalar. Both tensors have analytic gradients,
//! which makes the generator an exact oracle for the finite-difference path.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bundle::{evec_dot, AtomRecord, BundleMeta, PhononMode, SystemBundle, TensorGradients};
use super::gradients::{TensorOracle, TensorSet};
use crate::constants::CONSTANTS;
use crate::error::{Error, Result};

pub const CARBON_MASS_AMU: f64 = 12.011;
pub const NITROGEN_MASS_AMU: f64 = 14.007;
pub const DIAMOND_LATTICE_ANG: f64 = 3.567;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    Diamond,
    SimpleCubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    pub constant_ang: f64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            kind: LatticeKind::Diamond,
            constant_ang: DIAMOND_LATTICE_ANG,
        }
    }
}

/// How the synthetic phonon modes are built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecipe {
    /// Emit the three rigid translations at zero frequency.
    #[serde(default = "yes")]
    pub translations: bool,
    /// One random orthonormal mass-weighted mode per entry.
    #[serde(default)]
    pub frequencies_thz: Vec<f64>,
}

fn yes() -> bool {
    true
}

impl Default for ModeRecipe {
    fn default() -> Self {
        Self {
            translations: true,
            frequencies_thz: Vec::new(),
        }
    }
}

/// Input of [`generate_synthetic`]. Every field has a default so a spec file
/// can be as short as `{}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_atoms: usize,
    pub lattice: LatticeSpec,
    /// Vacancy position; lattice sites are enumerated around it.
    pub defect_site_ang: [f64; 3],
    /// Explicit coordinates; overrides the lattice when present.
    pub positions_ang: Option<Vec<[f64; 3]>>,
    /// Atom indices carrying the two effective electron spins.
    pub spin_sites: [usize; 2],
    pub nitrogen_site: Option<usize>,
    pub axis: [f64; 3],
    /// Fermi-contact scalars (MHz) added to the listed atoms' hyperfine tensors.
    pub contact_mhz: Vec<(usize, f64)>,
    pub modes: ModeRecipe,
    pub seed: u64,
    /// Displacement used when the CLI assembles finite-difference gradients.
    pub dx_ang: f64,
    pub provenance: Option<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_atoms: 64,
            lattice: LatticeSpec::default(),
            defect_site_ang: [0.0; 3],
            positions_ang: None,
            spin_sites: [0, 1],
            nitrogen_site: None,
            axis: [0.0, 0.0, 1.0],
            contact_mhz: Vec::new(),
            modes: ModeRecipe {
                translations: true,
                frequencies_thz: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
            },
            seed: 1,
            dx_ang: 1e-3,
            provenance: None,
        }
    }
}

impl SyntheticSpec {
    pub fn positions(&self) -> Result<Vec<Vector3<f64>>> {
        match &self.positions_ang {
            Some(p) => Ok(p.iter().map(|v| Vector3::from(*v)).collect()),
            None => lattice_sites(
                &self.lattice,
                Vector3::from(self.defect_site_ang),
                self.n_atoms,
            ),
        }
    }

    pub fn oracle(&self, n_atoms: usize) -> Result<PointDipoleOracle> {
        let mut contact = vec![0.0; n_atoms];
        for &(i, a) in &self.contact_mhz {
            *contact.get_mut(i).ok_or_else(|| {
                Error::InvalidArgument(format!("contact site {i} out of range"))
            })? += a;
        }
        PointDipoleOracle::new(self.spin_sites, contact)
    }
}

/// `n` lattice sites closest to `center`, excluding the site at `center`
/// itself (the vacancy). Ties are broken by coordinates for determinism.
pub fn lattice_sites(
    spec: &LatticeSpec,
    center: Vector3<f64>,
    n: usize,
) -> Result<Vec<Vector3<f64>>> {
    if !(spec.constant_ang.is_finite() && spec.constant_ang > 0.0) {
        return Err(Error::InvalidArgument(
            "lattice constant must be > 0".into(),
        ));
    }
    let basis: &[[f64; 3]] = match spec.kind {
        LatticeKind::SimpleCubic => &[[0.0, 0.0, 0.0]],
        LatticeKind::Diamond => &[
            [0.0, 0.0, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
            [0.5, 0.5, 0.0],
            [0.25, 0.25, 0.25],
            [0.25, 0.75, 0.75],
            [0.75, 0.25, 0.75],
            [0.75, 0.75, 0.25],
        ],
    };
    let a = spec.constant_ang;
    let mut k = ((n as f64 / basis.len() as f64).cbrt().ceil() as i64).max(1) + 1;
    loop {
        let mut sites = Vec::new();
        for i in -k..=k {
            for j in -k..=k {
                for l in -k..=k {
                    for b in basis {
                        let p = Vector3::new(
                            (i as f64 + b[0]) * a,
                            (j as f64 + b[1]) * a,
                            (l as f64 + b[2]) * a,
                        );
                        let r = p.norm();
                        if r > 1e-9 {
                            sites.push((r, p));
                        }
                    }
                }
            }
        }
        sites.sort_by(|x, y| {
            x.0.total_cmp(&y.0)
                .then(x.1[0].total_cmp(&y.1[0]))
                .then(x.1[1].total_cmp(&y.1[1]))
                .then(x.1[2].total_cmp(&y.1[2]))
        });
        // the enumerated cube contains every site within k*a of the origin
        if sites.len() >= n && sites.get(n).map_or(true, |s| s.0 < k as f64 * a) {
            return Ok(sites.into_iter().take(n).map(|(_, p)| p + center).collect());
        }
        k += 1;
    }
}

/// `(r^2 delta_ij - 3 r_i r_j) / r^5`.
pub fn dipolar_kernel(r: &Vector3<f64>) -> Matrix3<f64> {
    let r2 = r.norm_squared();
    let r5 = r2 * r2 * r2.sqrt();
    (Matrix3::identity() * r2 - r * r.transpose() * 3.0) / r5
}

/// Derivative of [`dipolar_kernel`] with respect to `r_k`.
pub fn dipolar_kernel_derivative(r: &Vector3<f64>, k: usize) -> Matrix3<f64> {
    let r2 = r.norm_squared();
    let rn = r2.sqrt();
    let r5 = r2 * r2 * rn;
    let r7 = r5 * r2;
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let dij = if i == j { 1.0 } else { 0.0 };
            let dik = if i == k { 1.0 } else { 0.0 };
            let djk = if j == k { 1.0 } else { 0.0 };
            out[(i, j)] = (2.0 * r[k] * dij - 3.0 * dik * r[j] - 3.0 * r[i] * djk) / r5
                - 5.0 * r[k] * (r2 * dij - 3.0 * r[i] * r[j]) / r7;
        }
    }
    out
}

/// Closed-form point-dipole tensor model.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDipoleOracle {
    pub carriers: [usize; 2],
    /// Per-atom Fermi-contact scalar, MHz.
    pub contact_mhz: Vec<f64>,
    /// Pair weight; fixed to +1 for the single interacting pair.
    pub chi: f64,
}

impl PointDipoleOracle {
    pub fn new(carriers: [usize; 2], contact_mhz: Vec<f64>) -> Result<Self> {
        if carriers[0] == carriers[1] {
            return Err(Error::CoincidentSpins(format!(
                "both spin carriers are atom {}",
                carriers[0]
            )));
        }
        Ok(Self {
            carriers,
            contact_mhz,
            chi: 1.0,
        })
    }

    fn check(&self, positions: &[Vector3<f64>]) -> Result<Vector3<f64>> {
        let n = positions.len();
        if self.carriers.iter().any(|&c| c >= n) || self.contact_mhz.len() != n {
            return Err(Error::InvalidArgument(format!(
                "oracle built for carriers {:?} / {} atoms, got {n} positions",
                self.carriers,
                self.contact_mhz.len()
            )));
        }
        let r = positions[self.carriers[1]] - positions[self.carriers[0]];
        if r.norm() < 1e-9 {
            return Err(Error::CoincidentSpins(format!(
                "carriers {:?} are {:e} A apart",
                self.carriers,
                r.norm()
            )));
        }
        Ok(r)
    }

    fn nucleus_offsets(
        &self,
        positions: &[Vector3<f64>],
        site: usize,
    ) -> Result<Vec<Vector3<f64>>> {
        let mut out = Vec::with_capacity(2);
        for &c in &self.carriers {
            if c == site {
                continue;
            }
            let s = positions[site] - positions[c];
            if s.norm() < 1e-9 {
                return Err(Error::CoincidentSpins(format!(
                    "nucleus {site} sits on spin carrier {c}"
                )));
            }
            out.push(s);
        }
        Ok(out)
    }

    pub fn zfs(&self, positions: &[Vector3<f64>]) -> Result<Matrix3<f64>> {
        let r = self.check(positions)?;
        Ok(dipolar_kernel(&r) * (CONSTANTS.zfs_dipole_ghz_ang3() * self.chi))
    }

    pub fn hfi(&self, positions: &[Vector3<f64>], site: usize) -> Result<Matrix3<f64>> {
        let p = CONSTANTS.hfi_dipole_mhz_ang3();
        let mut a = Matrix3::identity() * self.contact_mhz[site];
        for s in self.nucleus_offsets(positions, site)? {
            // (3 s s^T - s^2 delta) / s^5 = -kernel
            a -= dipolar_kernel(&s) * p;
        }
        Ok(a)
    }

    /// Analytic `d D / d R_{a,j}`.
    pub fn zfs_gradients(&self, positions: &[Vector3<f64>]) -> Result<TensorGradients> {
        let r = self.check(positions)?;
        let pref = CONSTANTS.zfs_dipole_ghz_ang3() * self.chi;
        let mut g: TensorGradients = vec![[Matrix3::zeros(); 3]; positions.len()];
        for k in 0..3 {
            let d = dipolar_kernel_derivative(&r, k) * pref;
            g[self.carriers[1]][k] += d;
            g[self.carriers[0]][k] -= d;
        }
        Ok(g)
    }

    /// Analytic self-displacement gradients `d A(R_I) / d R_{I,j}`.
    pub fn hfi_gradients(&self, positions: &[Vector3<f64>]) -> Result<TensorGradients> {
        self.check(positions)?;
        let p = CONSTANTS.hfi_dipole_mhz_ang3();
        (0..positions.len())
            .map(|site| {
                let offsets = self.nucleus_offsets(positions, site)?;
                let mut out = [Matrix3::zeros(); 3];
                for (k, o) in out.iter_mut().enumerate() {
                    for s in &offsets {
                        *o -= dipolar_kernel_derivative(s, k) * p;
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

impl TensorOracle for PointDipoleOracle {
    fn evaluate(&self, positions: &[Vector3<f64>]) -> Result<TensorSet> {
        let zfs = self.zfs(positions)?;
        let hfi = (0..positions.len())
            .map(|i| self.hfi(positions, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(TensorSet {
            zfs,
            hfi: Some(hfi),
        })
    }
}

/// Orthonormal mass-weighted mode set: optional rigid translations followed by
/// random vectors orthogonalized against everything before them.
pub fn synthetic_modes(masses: &[f64], recipe: &ModeRecipe, seed: u64) -> Result<Vec<PhononMode>> {
    let n = masses.len();
    let n_modes = recipe.frequencies_thz.len() + if recipe.translations { 3 } else { 0 };
    if n_modes > 3 * n {
        return Err(Error::InvalidArgument(format!(
            "{n_modes} modes requested but {n} atoms only support {}",
            3 * n
        )));
    }
    for &f in &recipe.frequencies_thz {
        if !(f.is_finite() && f >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mode frequency {f} THz is invalid"
            )));
        }
    }
    let total_mass: f64 = masses.iter().sum();
    let mut basis: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(n_modes);
    let mut modes = Vec::with_capacity(n_modes);
    if recipe.translations {
        for k in 0..3 {
            let v: Vec<Vector3<f64>> = masses
                .iter()
                .map(|m| {
                    let mut e = Vector3::zeros();
                    e[k] = (m / total_mass).sqrt();
                    e
                })
                .collect();
            basis.push(v.clone());
            modes.push(PhononMode {
                frequency_thz: 0.0,
                q_weight: 1.0,
                q_index: 0,
                eigenvector: v,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &f in &recipe.frequencies_thz {
        let v = loop {
            let mut v: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    )
                })
                .collect();
            // two Gram-Schmidt passes
            for _ in 0..2 {
                for b in &basis {
                    let c = evec_dot(&v, b);
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= y * c;
                    }
                }
            }
            let norm = evec_dot(&v, &v).sqrt();
            if norm > 1e-6 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
                break v;
            }
        };
        basis.push(v.clone());
        modes.push(PhononMode {
            frequency_thz: f,
            q_weight: 1.0,
            q_index: 0,
            eigenvector: v,
        });
    }
    Ok(modes)
}

/// Build a bundle whose tensors and gradients come from the point-dipole
/// model in closed form.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SystemBundle> {
    let positions = spec.positions()?;
    let n = positions.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 atoms, got {n}"
        )));
    }
    if spec.spin_sites.iter().any(|&s| s >= n) {
        return Err(Error::InvalidArgument(format!(
            "spin sites {:?} out of range for {n} atoms",
            spec.spin_sites
        )));
    }
    let oracle = spec.oracle(n)?;
    let atoms: Vec<AtomRecord> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nitrogen = spec.nitrogen_site == Some(i);
            AtomRecord {
                species: if nitrogen { "N" } else { "C" }.to_string(),
                mass_amu: if nitrogen {
                    NITROGEN_MASS_AMU
                } else {
                    CARBON_MASS_AMU
                },
                position: *p,
                spin_active: !nitrogen,
            }
        })
        .collect();
    let masses: Vec<f64> = atoms.iter().map(|a| a.mass_amu).collect();
    let zfs = oracle.zfs(&positions)?;
    let hfi = (0..n)
        .map(|i| oracle.hfi(&positions, i))
        .collect::<Result<Vec<_>>>()?;
    let extent = positions
        .iter()
        .map(|p| (p - Vector3::from(spec.defect_site_ang)).amax())
        .fold(0.0, f64::max);
    let side = 2.0 * extent + spec.lattice.constant_ang;
    Ok(SystemBundle {
        zfs,
        zfs_grad: Some(oracle.zfs_gradients(&positions)?),
        hfi: Some(hfi),
        hfi_grad: Some(oracle.hfi_gradients(&positions)?),
        modes: synthetic_modes(&masses, &spec.modes, spec.seed)?,
        atoms,
        meta: BundleMeta {
            axis: Vector3::from(spec.axis),
            cell: Matrix3::identity() * side,
            provenance: spec.provenance.clone().unwrap_or_else(|| {
                format!(
                    "synthetic point-dipole model, seed {}, carriers {:?}",
                    spec.seed, spec.spin_sites
                )
            }),
            center: Some(Vector3::from(spec.defect_site_ang)),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinmodel::axis_angle;
    use proptest::prelude::*;

    fn pair_along_z(r: f64) -> SyntheticSpec {
        SyntheticSpec {
            positions_ang: Some(vec![[0.0, 0.0, 0.0], [0.0, 0.0, r]]),
            modes: ModeRecipe {
                translations: true,
                frequencies_thz: vec![10.0, 20.0, 30.0],
            },
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn pair_along_z_is_axial() {
        let r = 2.0;
        let b = generate_synthetic(&pair_along_z(r)).unwrap();
        let p = CONSTANTS.zfs_dipole_ghz_ang3();
        // kernel for r || z is diag(1, 1, -2) / r^3, i.e. diag(-d, -d, 2d) with d = -p / r^3
        let d = -p / r.powi(3);
        let expect = Matrix3::from_diagonal(&Vector3::new(-d, -d, 2.0 * d));
        assert!((b.zfs - expect).abs().max() < 1e-9 * p);
        assert_eq!(b.zfs[(0, 0)], b.zfs[(1, 1)]);
        assert_eq!(b.zfs[(0, 1)], 0.0);
    }

    #[test]
    fn minimal_two_atom_bundle_has_six_modes() {
        let b = generate_synthetic(&pair_along_z(2.0)).unwrap();
        assert_eq!(b.n_atoms(), 2);
        assert_eq!(b.modes.len(), 6);
        b.validate().unwrap();
    }

    #[test]
    fn doubling_distance_scales_by_one_eighth() {
        let a = generate_synthetic(&pair_along_z(1.7)).unwrap().zfs;
        let b = generate_synthetic(&pair_along_z(3.4)).unwrap().zfs;
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((y - x / 8.0).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn coincident_carriers_rejected() {
        let spec = SyntheticSpec {
            positions_ang: Some(vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
            ..SyntheticSpec::default()
        };
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::CoincidentSpins(_))
        ));
        let spec = SyntheticSpec {
            spin_sites: [3, 3],
            ..SyntheticSpec::default()
        };
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::CoincidentSpins(_))
        ));
    }

    #[test]
    fn rotation_covariance() {
        let a = Vector3::new(0.3, -1.1, 0.7);
        let b = Vector3::new(-0.4, 0.9, 2.2);
        let rot = axis_angle(&Vector3::new(1.0, 2.0, -0.5), 0.83);
        let base = dipolar_kernel(&(b - a));
        let rotated = dipolar_kernel(&(rot * b - rot * a));
        // brute-force numeric rotation of the tensor
        let expect = rot * base * rot.transpose();
        assert!((rotated - expect).abs().max() < 1e-12 * base.abs().max());
    }

    #[test]
    fn kernel_derivative_matches_central_difference() {
        let r = Vector3::new(0.7, -1.3, 1.9);
        let h = 1e-5;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let fd = (dipolar_kernel(&(r + e)) - dipolar_kernel(&(r - e))) / (2.0 * h);
            let an = dipolar_kernel_derivative(&r, k);
            assert!((fd - an).abs().max() < 1e-7 * an.abs().max());
        }
    }

    #[test]
    fn generated_bundle_obeys_sum_rule_and_validates() {
        let b = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(b.n_atoms(), 64);
        b.validate().unwrap();
        let g = b.zfs_grad.as_ref().unwrap();
        for j in 0..3 {
            let s: Matrix3<f64> = g.iter().map(|x| x[j]).sum();
            assert!(s.abs().max() < 1e-6);
        }
    }

    #[test]
    fn diamond_sites_are_sorted_shells() {
        let sites = lattice_sites(&LatticeSpec::default(), Vector3::zeros(), 16).unwrap();
        let nn = DIAMOND_LATTICE_ANG * 3f64.sqrt() / 4.0;
        for s in &sites[..4] {
            assert!((s.norm() - nn).abs() < 1e-12);
        }
        for w in sites.windows(2) {
            assert!(w[0].norm() <= w[1].norm() + 1e-12);
        }
    }

    #[test]
    fn contact_is_added_isotropically() {
        let mut spec = SyntheticSpec::default();
        spec.contact_mhz = vec![(5, 12.5)];
        let with = generate_synthetic(&spec).unwrap();
        spec.contact_mhz.clear();
        let without = generate_synthetic(&spec).unwrap();
        let diff = with.hfi.unwrap()[5] - without.hfi.unwrap()[5];
        assert!((diff - Matrix3::identity() * 12.5).abs().max() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn modes_are_orthonormal_for_any_seed(seed in any::<u64>(), n in 2usize..12) {
            let masses: Vec<f64> = (0..n).map(|i| 12.0 + i as f64).collect();
            let recipe = ModeRecipe {
                translations: true,
                frequencies_thz: (0..3 * n - 3).map(|i| 1.0 + i as f64).collect(),
            };
            let modes = synthetic_modes(&masses, &recipe, seed).unwrap();
            prop_assert_eq!(modes.len(), 3 * n);
            for a in &modes {
                for b in &modes {
                    let d = evec_dot(&a.eigenvector, &b.eigenvector);
                    let want = if std::ptr::eq(a, b) { 1.0 } else { 0.0 };
                    prop_assert!((d - want).abs() < 1e-9);
                }
            }
        }
    }
}
