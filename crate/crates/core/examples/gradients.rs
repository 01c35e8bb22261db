//! Central finite differences over a tensor oracle, compared with the
//! analytic point-dipole gradients at two step sizes.

use spindephase::ingest::{finite_difference_gradients, SyntheticSpec, TabulatedOracle};

fn main() -> spindephase::Result<()> {
    let spec = SyntheticSpec {
        n_atoms: 64,
        ..SyntheticSpec::default()
    };
    let positions = spec.positions()?;
    let oracle = spec.oracle(positions.len())?;
    let exact = oracle.zfs_gradients(&positions)?;
    let scale = exact
        .iter()
        .flat_map(|g| g.iter())
        .map(|m| m.amax())
        .fold(0.0, f64::max);

    for dx in [2e-3, 1e-3] {
        let fd = finite_difference_gradients(&oracle, &positions, dx)?;
        let err = fd
            .zfs_grad
            .iter()
            .zip(&exact)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (a - b).amax() / scale)
            .fold(0.0, f64::max);
        println!("dx = {dx:e} A: max relative error {err:e}");
    }

    // the same numbers from a precomputed displacement table
    let table = TabulatedOracle::tabulate(&oracle, &positions, 1e-3)?;
    let from_table = finite_difference_gradients(&table, &positions, table.dx)?;
    let direct = finite_difference_gradients(&oracle, &positions, 1e-3)?;
    println!("table route identical: {}", from_table == direct);
    Ok(())
}
