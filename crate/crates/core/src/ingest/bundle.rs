//! The system bundle: atoms, tensors, tensor gradients and phonon modes, with
//! the on-disk JSON schema and its validation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invariant, Error, Result};
use crate::numeric::compensated_sum;

pub const FORMAT_TAG: &str = "spindephase-bundle/1";

/// Cartesian direction of a displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomRecord {
    pub species: String,
    pub mass_amu: f64,
    /// Angstrom.
    pub position: Vector3<f64>,
    /// Eligible host site for a 13C nuclear spin.
    pub spin_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhononMode {
    pub frequency_thz: f64,
    /// Normalized multiplicity of the mode's q-point.
    pub q_weight: f64,
    /// Groups modes sharing a q-point; eigenvectors are orthonormal within a group.
    pub q_index: usize,
    /// Mass-weighted, dimensionless; physical displacement of atom `a` is
    /// `eigenvector[a] / sqrt(mass_a)`.
    pub eigenvector: Vec<Vector3<f64>>,
}

/// Zero-field-splitting tensor in GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZfsTensor(pub Matrix3<f64>);

impl ZfsTensor {
    pub fn new(d: Matrix3<f64>, trace_tolerance: f64) -> Result<Self> {
        check_symmetric(&d, 1e-9, "zfs_ghz")?;
        if d.trace().abs() >= trace_tolerance {
            return Err(invariant(
                "zfs_ghz",
                format!(
                    "tensor must be traceless: |tr D| = {:e} GHz >= {:e}",
                    d.trace().abs(),
                    trace_tolerance
                ),
            ));
        }
        Ok(Self(d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleMeta {
    /// Defect (spin quantization) axis, lab frame.
    pub axis: Vector3<f64>,
    /// Supercell lattice vectors as rows, angstrom.
    pub cell: Matrix3<f64>,
    pub provenance: String,
    /// Defect center; defaults to the atomic centroid when absent.
    pub center: Option<Vector3<f64>>,
}

/// Per-atom, per-direction 3x3 tensor gradients: `grad[a][j]` is the
/// derivative with respect to displacing atom `a` along direction `j`.
pub type TensorGradients = Vec<[Matrix3<f64>; 3]>;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemBundle {
    pub atoms: Vec<AtomRecord>,
    pub zfs: Matrix3<f64>,
    /// GHz per angstrom.
    pub zfs_grad: Option<TensorGradients>,
    /// Per-atom hyperfine tensors, MHz.
    pub hfi: Option<Vec<Matrix3<f64>>>,
    /// `hfi_grad[a][j]`: derivative of atom `a`'s hyperfine tensor when atom
    /// `a` itself is displaced along `j`, MHz per angstrom.
    pub hfi_grad: Option<TensorGradients>,
    pub modes: Vec<PhononMode>,
    pub meta: BundleMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub symmetry_tol: f64,
    /// GHz.
    pub trace_tol: f64,
    /// GHz per angstrom.
    pub sum_rule_tol: f64,
    pub orthonormality_tol: f64,
    pub weight_sum_tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            symmetry_tol: 1e-9,
            trace_tol: 1e-6,
            sum_rule_tol: 1e-6,
            orthonormality_tol: 1e-6,
            weight_sum_tol: 1e-9,
        }
    }
}

impl SystemBundle {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.mass_amu).collect()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn center(&self) -> Vector3<f64> {
        self.meta.center.unwrap_or_else(|| {
            let n = self.atoms.len().max(1) as f64;
            self.atoms
                .iter()
                .fold(Vector3::zeros(), |acc, a| acc + a.position)
                / n
        })
    }

    /// Names of optional blocks that are absent.
    pub fn missing_blocks(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.zfs_grad.is_none() {
            out.push("zfs_grad_ghz_per_ang");
        }
        if self.hfi.is_none() {
            out.push("hfi_mhz");
        }
        if self.hfi_grad.is_none() {
            out.push("hfi_grad_mhz_per_ang");
        }
        if self.modes.is_empty() {
            out.push("modes");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&ValidationOptions::default())
    }

    pub fn validate_with(&self, opts: &ValidationOptions) -> Result<()> {
        let n = self.atoms.len();
        if n == 0 {
            return Err(invariant("atoms", "bundle has no atoms"));
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if !(a.mass_amu.is_finite() && a.mass_amu > 0.0) {
                return Err(invariant(
                    format!("atoms[{i}].mass_amu"),
                    "mass must be > 0",
                ));
            }
            if !a.position.iter().all(|v| v.is_finite()) {
                return Err(invariant(
                    format!("atoms[{i}].pos_ang"),
                    "position not finite",
                ));
            }
        }
        check_finite(&self.zfs, "zfs_ghz")?;
        check_symmetric(&self.zfs, opts.symmetry_tol, "zfs_ghz")?;
        ZfsTensor::new(self.zfs, opts.trace_tol)?;

        if let Some(grad) = &self.zfs_grad {
            check_len(grad.len(), n, "zfs_grad_ghz_per_ang")?;
            for (a, per_dir) in grad.iter().enumerate() {
                for (j, g) in per_dir.iter().enumerate() {
                    let path = format!("zfs_grad_ghz_per_ang[{a}][{j}]");
                    check_finite(g, &path)?;
                    check_symmetric(g, opts.symmetry_tol, &path)?;
                }
            }
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let s = compensated_sum(grad.iter().map(|g| g[j][(k, l)]));
                        if s.abs() >= opts.sum_rule_tol {
                            return Err(invariant(
                                "zfs_grad_ghz_per_ang",
                                format!(
                                    "acoustic sum rule violated: |sum_a dD[{k}{l}]/d{}| = {:e} GHz/A",
                                    Axis::ALL[j],
                                    s.abs()
                                ),
                            ));
                        }
                    }
                }
            }
        }
        if let Some(hfi) = &self.hfi {
            check_len(hfi.len(), n, "hfi_mhz")?;
            for (i, a) in hfi.iter().enumerate() {
                check_finite(a, &format!("hfi_mhz[{i}]"))?;
            }
        }
        if let Some(grad) = &self.hfi_grad {
            check_len(grad.len(), n, "hfi_grad_mhz_per_ang")?;
            for (a, per_dir) in grad.iter().enumerate() {
                for (j, g) in per_dir.iter().enumerate() {
                    check_finite(g, &format!("hfi_grad_mhz_per_ang[{a}][{j}]"))?;
                }
            }
        }
        self.validate_modes(opts)?;
        let axis = self.meta.axis;
        if !(axis.iter().all(|v| v.is_finite()) && axis.norm() > 0.0) {
            return Err(invariant(
                "meta.axis",
                "defect axis must be a finite non-zero vector",
            ));
        }
        if !self.meta.cell.iter().all(|v| v.is_finite()) {
            return Err(invariant("meta.cell", "cell not finite"));
        }
        if let Some(c) = self.meta.center {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(invariant("meta.center_ang", "center not finite"));
            }
        }
        Ok(())
    }

    fn validate_modes(&self, opts: &ValidationOptions) -> Result<()> {
        let n = self.atoms.len();
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (m, mode) in self.modes.iter().enumerate() {
            let path = format!("modes[{m}]");
            if !(mode.frequency_thz.is_finite() && mode.frequency_thz >= 0.0) {
                return Err(invariant(
                    format!("{path}.freq_thz"),
                    "frequency must be finite and >= 0",
                ));
            }
            if !(mode.q_weight.is_finite() && mode.q_weight > 0.0) {
                return Err(invariant(
                    format!("{path}.q_weight"),
                    "q_weight must be > 0",
                ));
            }
            check_len(mode.eigenvector.len(), n, &format!("{path}.evec"))?;
            if !mode
                .eigenvector
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
            {
                return Err(invariant(format!("{path}.evec"), "eigenvector not finite"));
            }
            groups.entry(mode.q_index).or_default().push(m);
        }
        let mut weight_total = Vec::new();
        for (q, members) in &groups {
            if members.len() > 3 * n {
                return Err(invariant(
                    "modes",
                    format!(
                        "q-point {q} carries {} modes, more than 3 x {n} atoms = {}",
                        members.len(),
                        3 * n
                    ),
                ));
            }
            let w0 = self.modes[members[0]].q_weight;
            for &m in members {
                if (self.modes[m].q_weight - w0).abs() > opts.weight_sum_tol {
                    return Err(invariant(
                        format!("modes[{m}].q_weight"),
                        format!("modes of q-point {q} disagree on q_weight"),
                    ));
                }
            }
            weight_total.push(w0);
            // orthonormality within the q-point
            let bad = members.par_iter().enumerate().find_map_first(|(i, &a)| {
                members[i..].iter().find_map(|&b| {
                    let dot = evec_dot(&self.modes[a].eigenvector, &self.modes[b].eigenvector);
                    let want = if a == b { 1.0 } else { 0.0 };
                    ((dot - want).abs() > opts.orthonormality_tol).then_some((a, b, dot))
                })
            });
            if let Some((a, b, dot)) = bad {
                return Err(invariant(
                    format!("modes[{a}].evec"),
                    format!("eigenvectors not orthonormal: <{a}|{b}> = {dot:e}"),
                ));
            }
        }
        if !weight_total.is_empty() {
            let total = compensated_sum(weight_total);
            if (total - 1.0).abs() > opts.weight_sum_tol.max(1e-12) {
                return Err(invariant(
                    "modes",
                    format!("q-point weights sum to {total}, expected 1"),
                ));
            }
        }
        Ok(())
    }

    /// Canonical JSON serialization; `load(save(b))` reproduces `b` exactly.
    pub fn to_json(&self) -> Result<String> {
        let file = BundleFile::from(self);
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

pub(crate) fn evec_dot(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x.dot(y)))
}

/// Parse and validate a bundle with default options.
pub fn load_bundle<R: Read>(reader: R) -> Result<SystemBundle> {
    load_bundle_with(reader, &ValidationOptions::default())
}

pub fn load_bundle_with<R: Read>(reader: R, opts: &ValidationOptions) -> Result<SystemBundle> {
    let file: BundleFile =
        serde_json::from_reader(reader).map_err(|e| Error::Parse(e.to_string()))?;
    let bundle = SystemBundle::try_from(file)?;
    bundle.validate_with(opts)?;
    Ok(bundle)
}

pub fn load_bundle_path(path: impl AsRef<Path>) -> Result<SystemBundle> {
    let f = std::fs::File::open(path.as_ref())?;
    load_bundle(std::io::BufReader::new(f))
}

pub fn load_bundle_str(s: &str) -> Result<SystemBundle> {
    load_bundle(s.as_bytes())
}

fn check_len(found: usize, expected: usize, path: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Shape {
            path: path.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_finite(m: &Matrix3<f64>, path: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invariant(path, "non-finite entry"))
    }
}

fn check_symmetric(m: &Matrix3<f64>, tol: f64, path: &str) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    if asym > tol {
        return Err(invariant(
            path,
            format!("tensor not symmetric: max |d - d^T| = {asym:e}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// On-disk representation. Nested vectors keep shape errors reportable with
// their field path instead of surfacing as opaque parse failures.

type Raw3 = Vec<f64>;
type Raw33 = Vec<Vec<f64>>;

#[derive(Debug, Serialize, Deserialize)]
struct BundleFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    atoms: Vec<AtomFile>,
    zfs_ghz: Raw33,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zfs_grad_ghz_per_ang: Option<Vec<Vec<Raw33>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hfi_mhz: Option<Vec<Raw33>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hfi_grad_mhz_per_ang: Option<Vec<Vec<Raw33>>>,
    #[serde(default)]
    modes: Vec<ModeFile>,
    meta: MetaFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct AtomFile {
    species: String,
    mass_amu: f64,
    pos_ang: Raw3,
    #[serde(default)]
    spin_active: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModeFile {
    freq_thz: f64,
    q_weight: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    q_index: usize,
    evec: Vec<Raw3>,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    axis: Raw3,
    cell: Raw33,
    #[serde(default)]
    provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center_ang: Option<Raw3>,
}

fn vec3(v: &[f64], path: &str) -> Result<Vector3<f64>> {
    check_len(v.len(), 3, path)?;
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn mat3(v: &[Vec<f64>], path: &str) -> Result<Matrix3<f64>> {
    check_len(v.len(), 3, path)?;
    let mut m = Matrix3::zeros();
    for (i, row) in v.iter().enumerate() {
        check_len(row.len(), 3, &format!("{path}[{i}]"))?;
        for j in 0..3 {
            m[(i, j)] = row[j];
        }
    }
    Ok(m)
}

fn grads(v: &[Vec<Raw33>], path: &str) -> Result<TensorGradients> {
    v.iter()
        .enumerate()
        .map(|(a, per_dir)| {
            let p = format!("{path}[{a}]");
            check_len(per_dir.len(), 3, &p)?;
            Ok([
                mat3(&per_dir[0], &format!("{p}[0]"))?,
                mat3(&per_dir[1], &format!("{p}[1]"))?,
                mat3(&per_dir[2], &format!("{p}[2]"))?,
            ])
        })
        .collect()
}

fn raw3(v: &Vector3<f64>) -> Raw3 {
    v.iter().copied().collect()
}

fn raw33(m: &Matrix3<f64>) -> Raw33 {
    (0..3)
        .map(|i| (0..3).map(|j| m[(i, j)]).collect())
        .collect()
}

fn raw_grads(g: &TensorGradients) -> Vec<Vec<Raw33>> {
    g.iter().map(|d| d.iter().map(raw33).collect()).collect()
}

impl TryFrom<BundleFile> for SystemBundle {
    type Error = Error;

    fn try_from(f: BundleFile) -> Result<Self> {
        if let Some(tag) = &f.format {
            if tag != FORMAT_TAG {
                return Err(Error::Parse(format!(
                    "unknown bundle format `{tag}`, expected `{FORMAT_TAG}`"
                )));
            }
        }
        let atoms = f
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                Ok(AtomRecord {
                    species: a.species.clone(),
                    mass_amu: a.mass_amu,
                    position: vec3(&a.pos_ang, &format!("atoms[{i}].pos_ang"))?,
                    spin_active: a.spin_active,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let modes = f
            .modes
            .iter()
            .enumerate()
            .map(|(m, mode)| {
                Ok(PhononMode {
                    frequency_thz: mode.freq_thz,
                    q_weight: mode.q_weight,
                    q_index: mode.q_index,
                    eigenvector: mode
                        .evec
                        .iter()
                        .enumerate()
                        .map(|(a, v)| vec3(v, &format!("modes[{m}].evec[{a}]")))
                        .collect::<Result<Vec<_>>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SystemBundle {
            atoms,
            zfs: mat3(&f.zfs_ghz, "zfs_ghz")?,
            zfs_grad: f
                .zfs_grad_ghz_per_ang
                .as_deref()
                .map(|g| grads(g, "zfs_grad_ghz_per_ang"))
                .transpose()?,
            hfi: f
                .hfi_mhz
                .as_deref()
                .map(|h| {
                    h.iter()
                        .enumerate()
                        .map(|(i, m)| mat3(m, &format!("hfi_mhz[{i}]")))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?,
            hfi_grad: f
                .hfi_grad_mhz_per_ang
                .as_deref()
                .map(|g| grads(g, "hfi_grad_mhz_per_ang"))
                .transpose()?,
            modes,
            meta: BundleMeta {
                axis: vec3(&f.meta.axis, "meta.axis")?,
                cell: mat3(&f.meta.cell, "meta.cell")?,
                provenance: f.meta.provenance,
                center: f
                    .meta
                    .center_ang
                    .as_deref()
                    .map(|c| vec3(c, "meta.center_ang"))
                    .transpose()?,
            },
        })
    }
}

impl From<&SystemBundle> for BundleFile {
    fn from(b: &SystemBundle) -> Self {
        BundleFile {
            format: Some(FORMAT_TAG.to_string()),
            atoms: b
                .atoms
                .iter()
                .map(|a| AtomFile {
                    species: a.species.clone(),
                    mass_amu: a.mass_amu,
                    pos_ang: raw3(&a.position),
                    spin_active: a.spin_active,
                })
                .collect(),
            zfs_ghz: raw33(&b.zfs),
            zfs_grad_ghz_per_ang: b.zfs_grad.as_ref().map(raw_grads),
            hfi_mhz: b.hfi.as_ref().map(|h| h.iter().map(raw33).collect()),
            hfi_grad_mhz_per_ang: b.hfi_grad.as_ref().map(raw_grads),
            modes: b
                .modes
                .iter()
                .map(|m| ModeFile {
                    freq_thz: m.frequency_thz,
                    q_weight: m.q_weight,
                    q_index: m.q_index,
                    evec: m.eigenvector.iter().map(raw3).collect(),
                })
                .collect(),
            meta: MetaFile {
                axis: raw3(&b.meta.axis),
                cell: raw33(&b.meta.cell),
                provenance: b.meta.provenance.clone(),
                center_ang: b.meta.center.as_ref().map(raw3),
            },
        }
    }
}
