//! Total coherence time from per-channel results under Ramsey and Hahn-echo
//! sequences.

use spindephase::dephase::{aggregate_report, DephasingResult, Sequence};
use spindephase::fluct::Channel;

fn channel(c: Channel, gamma_inverse: f64) -> DephasingResult {
    let mut r = DephasingResult::none(c, Some(300.0));
    r.gamma_inverse = gamma_inverse;
    r
}

fn main() -> spindephase::Result<()> {
    let results = [
        channel(Channel::SpPh, 4.8),
        channel(Channel::SpNuPh, 2.0e3),
        channel(Channel::SpNu, 2.0e-5),
    ];
    for sequence in [Sequence::Ramsey, Sequence::Hahn] {
        let s = aggregate_report(&results, Some(6e-3), sequence)?;
        println!(
            "{sequence}: total 1/Gamma = {:.3e} s",
            s.total_gamma_inverse
        );
        for c in &s.channels {
            println!(
                "  {:<9} {:.3e} s  included: {}",
                c.channel.as_str(),
                c.gamma_inverse,
                c.included
            );
        }
    }
    Ok(())
}
