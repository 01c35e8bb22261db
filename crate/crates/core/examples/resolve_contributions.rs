//! Which atoms and which modes drive spin-phonon dephasing.

use spindephase::dephase::{resolve_contributions, ResolveBy, ResolveOptions};
use spindephase::ingest::{generate_synthetic, SyntheticSpec};
use spindephase::spinmodel::spin_matrices;

fn main() -> spindephase::Result<()> {
    let bundle = generate_synthetic(&SyntheticSpec::default())?;
    let spin = spin_matrices(1.0)?.oriented_along(&bundle.meta.axis)?;

    let mut atoms =
        resolve_contributions(&bundle, &spin, &ResolveOptions::new(ResolveBy::Atom, 300.0))?;
    atoms.sort_by(|a, b| b.delta_sq.total_cmp(&a.delta_sq));
    println!("strongest atoms at 300 K:");
    for r in atoms.iter().take(4) {
        println!(
            "  atom {:>3} at {:5.2} A: Delta^2 = {:.3e}, 1/Gamma = {:.3e} s",
            r.index, r.coordinate, r.delta_sq, r.gamma_inverse
        );
    }

    let modes =
        resolve_contributions(&bundle, &spin, &ResolveOptions::new(ResolveBy::Mode, 300.0))?;
    println!("modes:");
    for r in &modes {
        println!(
            "  {:>5.1} THz: Delta^2 = {:.3e}, localization {:.4}, {}",
            r.coordinate,
            r.delta_sq,
            r.localization.unwrap_or(0.0),
            r.status.as_str()
        );
    }
    Ok(())
}
