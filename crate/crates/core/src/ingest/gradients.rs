//! Central finite-difference gradients over any tensor oracle.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{Axis, TensorGradients};
use crate::error::{Error, Result};

pub const DEFAULT_DX_ANG: f64 = 1e-3;

/// Tensors evaluated at one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet {
    /// GHz.
    pub zfs: Matrix3<f64>,
    /// Per-site hyperfine tensors, MHz.
    pub hfi: Option<Vec<Matrix3<f64>>>,
}

/// Maps atomic positions (Å) to the spin tensors. Must be deterministic.
pub trait TensorOracle: Sync {
    fn evaluate(&self, positions: &[Vector3<f64>]) -> Result<TensorSet>;
}

impl<F> TensorOracle for F
where
    F: Fn(&[Vector3<f64>]) -> Result<TensorSet> + Sync,
{
    fn evaluate(&self, positions: &[Vector3<f64>]) -> Result<TensorSet> {
        self(positions)
    }
}

/// Result of [`finite_difference_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifferenceGradients {
    pub zfs_grad: TensorGradients,
    /// `d A_I / d R_{I,j}`: each site's tensor under its own displacement.
    pub hfi_grad: Option<TensorGradients>,
}

/// `(T(x + dx) - T(x - dx)) / (2 dx)` for every atom and Cartesian direction.
pub fn finite_difference_gradients(
    oracle: &dyn TensorOracle,
    positions: &[Vector3<f64>],
    dx: f64,
) -> Result<FiniteDifferenceGradients> {
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::InvalidArgument(format!("dx must be > 0, got {dx}")));
    }
    let n = positions.len();
    let jobs: Vec<(usize, Axis)> = (0..n)
        .flat_map(|a| Axis::ALL.into_iter().map(move |ax| (a, ax)))
        .collect();
    let columns: Vec<(Matrix3<f64>, Option<Matrix3<f64>>)> = jobs
        .par_iter()
        .map(|&(atom, axis)| {
            let at = |sign: f64| -> Result<TensorSet> {
                let mut p = positions.to_vec();
                p[atom] += axis.unit() * (sign * dx);
                oracle.evaluate(&p).map_err(|e| Error::Oracle {
                    atom,
                    axis,
                    message: e.to_string(),
                })
            };
            let plus = at(1.0)?;
            let minus = at(-1.0)?;
            let scale = 1.0 / (2.0 * dx);
            let dz = (plus.zfs - minus.zfs) * scale;
            let dh = match (&plus.hfi, &minus.hfi) {
                (Some(p), Some(m)) => {
                    if p.len() != n || m.len() != n {
                        return Err(Error::Oracle {
                            atom,
                            axis,
                            message: format!(
                                "oracle returned {} hyperfine sites for {n} atoms",
                                p.len()
                            ),
                        });
                    }
                    Some((p[atom] - m[atom]) * scale)
                }
                _ => None,
            };
            Ok((dz, dh))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut zfs_grad: TensorGradients = vec![[Matrix3::zeros(); 3]; n];
    let has_hfi = columns.iter().all(|c| c.1.is_some()) && n > 0;
    let mut hfi_grad: TensorGradients = vec![[Matrix3::zeros(); 3]; if has_hfi { n } else { 0 }];
    for (&(atom, axis), (dz, dh)) in jobs.iter().zip(columns) {
        zfs_grad[atom][axis.index()] = dz;
        if let (true, Some(dh)) = (has_hfi, dh) {
            hfi_grad[atom][axis.index()] = dh;
        }
    }
    Ok(FiniteDifferenceGradients {
        zfs_grad,
        hfi_grad: has_hfi.then_some(hfi_grad),
    })
}

/// Tensors precomputed externally at the reference geometry and at every
/// `±dx` single-atom displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedOracle {
    pub reference: Vec<Vector3<f64>>,
    pub dx: f64,
    base: TensorSet,
    displaced: BTreeMap<(usize, usize, i8), TensorSet>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    dx_ang: f64,
    reference_pos_ang: Vec<[f64; 3]>,
    reference: EntryFile,
    displaced: Vec<DisplacedFile>,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    zfs_ghz: [[f64; 3]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hfi_mhz: Option<Vec<[[f64; 3]; 3]>>,
}

#[derive(Serialize, Deserialize)]
struct DisplacedFile {
    atom: usize,
    axis: Axis,
    sign: i8,
    #[serde(flatten)]
    tensors: EntryFile,
}

fn to_m(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| a[i][j])
}

fn from_m(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

impl From<&EntryFile> for TensorSet {
    fn from(e: &EntryFile) -> Self {
        TensorSet {
            zfs: to_m(&e.zfs_ghz),
            hfi: e.hfi_mhz.as_ref().map(|v| v.iter().map(to_m).collect()),
        }
    }
}

impl From<&TensorSet> for EntryFile {
    fn from(t: &TensorSet) -> Self {
        EntryFile {
            zfs_ghz: from_m(&t.zfs),
            hfi_mhz: t.hfi.as_ref().map(|v| v.iter().map(from_m).collect()),
        }
    }
}

impl TabulatedOracle {
    /// Tabulate another oracle; mostly useful for producing table files.
    pub fn tabulate(
        oracle: &dyn TensorOracle,
        reference: &[Vector3<f64>],
        dx: f64,
    ) -> Result<Self> {
        let base = oracle.evaluate(reference)?;
        let mut displaced = BTreeMap::new();
        for atom in 0..reference.len() {
            for axis in Axis::ALL {
                for sign in [1i8, -1] {
                    let mut p = reference.to_vec();
                    p[atom] += axis.unit() * (sign as f64 * dx);
                    displaced.insert((atom, axis.index(), sign), oracle.evaluate(&p)?);
                }
            }
        }
        Ok(Self {
            reference: reference.to_vec(),
            dx,
            base,
            displaced,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TableFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let mut displaced = BTreeMap::new();
        for (k, d) in f.displaced.iter().enumerate() {
            if d.sign != 1 && d.sign != -1 {
                return Err(Error::Parse(format!(
                    "displaced[{k}].sign must be +1 or -1, got {}",
                    d.sign
                )));
            }
            displaced.insert(
                (d.atom, d.axis.index(), d.sign),
                TensorSet::from(&d.tensors),
            );
        }
        Ok(Self {
            reference: f
                .reference_pos_ang
                .iter()
                .map(|p| Vector3::from(*p))
                .collect(),
            dx: f.dx_ang,
            base: TensorSet::from(&f.reference),
            displaced,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let f = TableFile {
            dx_ang: self.dx,
            reference_pos_ang: self.reference.iter().map(|p| [p.x, p.y, p.z]).collect(),
            reference: EntryFile::from(&self.base),
            displaced: self
                .displaced
                .iter()
                .map(|(&(atom, axis, sign), t)| DisplacedFile {
                    atom,
                    axis: Axis::ALL[axis],
                    sign,
                    tensors: EntryFile::from(t),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&f)? + "\n")
    }

    /// Identify which tabulated geometry `positions` corresponds to.
    fn key(&self, positions: &[Vector3<f64>]) -> Result<Option<(usize, usize, i8)>> {
        if positions.len() != self.reference.len() {
            return Err(Error::InvalidArgument(format!(
                "table holds {} atoms, got {}",
                self.reference.len(),
                positions.len()
            )));
        }
        let tol = 1e-3 * self.dx;
        let mut key = None;
        for (a, (p, r)) in positions.iter().zip(&self.reference).enumerate() {
            let d = p - r;
            if d.amax() <= tol {
                continue;
            }
            let hit = (0..3).find_map(|j| {
                let off: f64 = (0..3)
                    .filter(|&k| k != j)
                    .map(|k| d[k].abs())
                    .fold(0.0, f64::max);
                let s = d[j] / self.dx;
                (off <= tol && (s.abs() - 1.0).abs() * self.dx <= tol)
                    .then(|| (a, j, s.signum() as i8))
            });
            match (hit, key) {
                (Some(h), None) => key = Some(h),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "geometry is not a tabulated single-atom displacement (atom {a})"
                    )))
                }
            }
        }
        Ok(key)
    }
}

impl TensorOracle for TabulatedOracle {
    fn evaluate(&self, positions: &[Vector3<f64>]) -> Result<TensorSet> {
        match self.key(positions)? {
            None => Ok(self.base.clone()),
            Some(k) => self.displaced.get(&k).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no tabulated entry for atom {} axis {} sign {:+}",
                    k.0,
                    Axis::ALL[k.1],
                    k.2
                ))
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{generate_synthetic, SyntheticSpec};

    fn max_rel(a: &TensorGradients, b: &TensorGradients) -> f64 {
        let scale = b
            .iter()
            .flat_map(|g| g.iter().map(|m| m.abs().max()))
            .fold(0.0, f64::max);
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs().max()))
            .fold(0.0, f64::max)
            / scale
    }

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_atoms: 12,
            contact_mhz: vec![(4, 3.0)],
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn constant_oracle_gives_zero() {
        let c = |_: &[Vector3<f64>]| -> Result<TensorSet> {
            Ok(TensorSet {
                zfs: Matrix3::new(1.0, 0.2, 0.0, 0.2, -2.0, 0.1, 0.0, 0.1, 1.0),
                hfi: None,
            })
        };
        let pos = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        let g = finite_difference_gradients(&c, &pos, 1e-3).unwrap();
        assert!(g
            .zfs_grad
            .iter()
            .all(|x| x.iter().all(|m| *m == Matrix3::zeros())));
        assert!(g.hfi_grad.is_none());
    }

    #[test]
    fn matches_analytic_point_dipole() {
        let spec = small_spec();
        let b = generate_synthetic(&spec).unwrap();
        let oracle = spec.oracle(b.n_atoms()).unwrap();
        let fd = finite_difference_gradients(&oracle, &b.positions(), 1e-3).unwrap();
        assert!(max_rel(&fd.zfs_grad, b.zfs_grad.as_ref().unwrap()) < 1e-4);
        assert!(max_rel(fd.hfi_grad.as_ref().unwrap(), b.hfi_grad.as_ref().unwrap()) < 1e-4);
    }

    #[test]
    fn error_is_second_order() {
        let spec = small_spec();
        let b = generate_synthetic(&spec).unwrap();
        let oracle = spec.oracle(b.n_atoms()).unwrap();
        let exact = b.zfs_grad.as_ref().unwrap();
        let e1 = max_rel(
            &finite_difference_gradients(&oracle, &b.positions(), 2e-2)
                .unwrap()
                .zfs_grad,
            exact,
        );
        let e2 = max_rel(
            &finite_difference_gradients(&oracle, &b.positions(), 1e-2)
                .unwrap()
                .zfs_grad,
            exact,
        );
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn oracle_failure_names_atom_and_axis() {
        let failing = |p: &[Vector3<f64>]| -> Result<TensorSet> {
            if p[2].y > 0.0 {
                Err(Error::InvalidArgument("boom".into()))
            } else {
                Ok(TensorSet {
                    zfs: Matrix3::zeros(),
                    hfi: None,
                })
            }
        };
        let pos = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::zeros(),
        ];
        match finite_difference_gradients(&failing, &pos, 1e-3) {
            Err(Error::Oracle {
                atom: 2,
                axis: Axis::Y,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tabulated_oracle_round_trips_and_reproduces_gradients() {
        let spec = SyntheticSpec {
            n_atoms: 6,
            ..SyntheticSpec::default()
        };
        let b = generate_synthetic(&spec).unwrap();
        let pd = spec.oracle(6).unwrap();
        let table = TabulatedOracle::tabulate(&pd, &b.positions(), 1e-3).unwrap();
        let reloaded = TabulatedOracle::from_json(&table.to_json().unwrap()).unwrap();
        assert_eq!(reloaded, table);
        let direct = finite_difference_gradients(&pd, &b.positions(), 1e-3).unwrap();
        let tab = finite_difference_gradients(&reloaded, &b.positions(), 1e-3).unwrap();
        assert_eq!(direct, tab);
        let mut off = b.positions();
        off[0].x += 0.5;
        assert!(reloaded.evaluate(&off).is_err());
    }
}
