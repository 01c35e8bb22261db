//! Generate a small point-dipole bundle, round-trip it through JSON and list
//! what it contains.

use spindephase::ingest::{generate_synthetic, load_bundle_str, SyntheticSpec};

fn main() -> spindephase::Result<()> {
    let spec = SyntheticSpec {
        n_atoms: 32,
        ..SyntheticSpec::default()
    };
    let bundle = generate_synthetic(&spec)?;
    let json = bundle.to_json()?;
    let back = load_bundle_str(&json)?;
    assert_eq!(back.n_atoms(), bundle.n_atoms());

    println!(
        "{} atoms, {} modes, {} bytes of JSON",
        bundle.n_atoms(),
        bundle.modes.len(),
        json.len()
    );
    println!("zfs (GHz):{}", bundle.zfs);
    let lowest: Vec<f64> = bundle
        .modes
        .iter()
        .take(5)
        .map(|m| m.frequency_thz)
        .collect();
    println!("lowest mode frequencies (THz): {lowest:?}");
    println!("missing blocks: {:?}", back.missing_blocks());
    Ok(())
}
