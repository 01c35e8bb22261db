//! Nuclear-spin ensemble sweep: mean dephasing time over 13C concentration
//! and field, with the spread across configurations.

use spindephase::dephase::{disorder_sweep, DisorderOptions};
use spindephase::fluct::Channel;
use spindephase::ingest::{generate_synthetic, ModeRecipe, SyntheticSpec};
use spindephase::spinmodel::spin_matrices;

fn main() -> spindephase::Result<()> {
    let bundle = generate_synthetic(&SyntheticSpec {
        n_atoms: 1024,
        modes: ModeRecipe {
            translations: false,
            frequencies_thz: vec![],
        },
        ..SyntheticSpec::default()
    })?;
    let spin = spin_matrices(1.0)?.oriented_along(&bundle.meta.axis)?;
    let mut opts = DisorderOptions::for_channel(Channel::SpNu);
    opts.concentrations = vec![0.005, 0.02];
    opts.b_fields = vec![50.0, 500.0];
    opts.n_configs = 64;

    for row in disorder_sweep(&bundle, &spin, &opts)? {
        let e = row.result.ensemble.expect("ensemble rows carry statistics");
        println!(
            "c = {:<6} B = {:>5} G   1/Gamma = {:.3e} s  (config std {:.2e}, {} of {} finite)  {}",
            row.concentration,
            row.b_field,
            row.result.gamma_inverse,
            e.std,
            e.n_finite,
            e.n_configs,
            row.result.status.as_str()
        );
    }
    Ok(())
}
