//! Spin-phonon dephasing time over temperature for a synthetic bundle.

use spindephase::dephase::{pure_dephasing, PureOptions};
use spindephase::ingest::{generate_synthetic, SyntheticSpec};
use spindephase::spinmodel::spin_matrices;

fn main() -> spindephase::Result<()> {
    let bundle = generate_synthetic(&SyntheticSpec::default())?;
    let spin = spin_matrices(1.0)?.oriented_along(&bundle.meta.axis)?;
    let opts = PureOptions {
        temperatures: vec![4.0, 77.0, 150.0, 300.0, 500.0],
        ..PureOptions::default()
    };
    let out = pure_dephasing(&bundle, &spin, &opts)?;
    println!("grid: dt = {:e} s, {} points", out.grid.dt, out.grid.len);
    println!(
        "{:>8} {:>14} {:>14} {:>14}  status",
        "T (K)", "1/Gamma (s)", "Delta^2", "tau_c (s)"
    );
    for r in &out.rows {
        println!(
            "{:>8} {:>14.4e} {:>14.4e} {:>14.4e}  {}",
            r.temperature.unwrap_or(0.0),
            r.gamma_inverse,
            r.delta_sq,
            r.tau_c().unwrap_or(f64::NAN),
            r.status.as_str()
        );
    }
    Ok(())
}
