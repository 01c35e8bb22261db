//! Qubit gap from a zero-field-splitting tensor, and the first-order response
//! to a small traceless perturbation.

use nalgebra::{Matrix3, Vector3};
use spindephase::spinmodel::{spin_matrices, QubitPair};

fn main() -> spindephase::Result<()> {
    let d = 2.87;
    // axial tensor D (Sz^2 - S^2/3) written as a traceless matrix
    let zfs = Matrix3::from_diagonal(&Vector3::new(-d / 3.0, -d / 3.0, 2.0 * d / 3.0));
    let spin = spin_matrices(1.0)?;
    let pair = QubitPair::new(-1, 0)?;
    println!("gap(-1, 0) = {:.6} GHz", spin.gap_expectation(&zfs, pair)?);

    let delta = Matrix3::new(0.01, 0.002, 0.0, 0.002, -0.004, 0.001, 0.0, 0.001, -0.006);
    let shift = spin.gap_expectation(&delta, pair)?;
    println!(
        "perturbation shift = {shift:e} GHz, 3/2 dzz = {:e}",
        1.5 * delta[(2, 2)]
    );

    let tilted = spin_matrices(1.0)?.oriented_along(&Vector3::new(1.0, 1.0, 1.0))?;
    let rotated = tilted.frame.transpose() * zfs * tilted.frame;
    println!(
        "gap along [111] = {:.6} GHz",
        tilted.gap_expectation(&rotated, pair)?
    );
    Ok(())
}
