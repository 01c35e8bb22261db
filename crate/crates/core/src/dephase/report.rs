//! Total coherence rate as a sum over channels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Classification, DephasingResult, Reversibility};
use crate::error::{Error, Result};
use crate::fluct::Channel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sequence {
    #[default]
    Ramsey,
    /// Refocuses reversible channels.
    Hahn,
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sequence::Ramsey => "ramsey",
            Sequence::Hahn => "hahn",
        })
    }
}

impl FromStr for Sequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramsey" => Ok(Sequence::Ramsey),
            "hahn" => Ok(Sequence::Hahn),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sequence '{s}' (ramsey, hahn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelContribution {
    pub channel: Channel,
    /// 1/s.
    pub gamma: f64,
    /// s.
    pub gamma_inverse: f64,
    pub classification: Classification,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceSummary {
    pub sequence: Sequence,
    pub t1: Option<f64>,
    pub channels: Vec<ChannelContribution>,
    /// 1/s.
    pub total_gamma: f64,
    /// s; infinite when nothing contributes.
    pub total_gamma_inverse: f64,
}

/// `Gamma = 1/(2 T1) + sum of included channel rates`. Reversible channels
/// are dropped under a Hahn echo.
pub fn aggregate_report(
    results: &[DephasingResult],
    t1: Option<f64>,
    sequence: Sequence,
) -> Result<DecoherenceSummary> {
    if results.is_empty() {
        return Err(Error::InvalidArgument(
            "report needs at least one channel result".into(),
        ));
    }
    if let Some(t) = t1 {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("T1 must be > 0, got {t}")));
        }
    }
    let channels: Vec<ChannelContribution> = results
        .iter()
        .map(|r| ChannelContribution {
            channel: r.channel,
            gamma: r.gamma(),
            gamma_inverse: r.gamma_inverse,
            classification: r.classification,
            included: !(sequence == Sequence::Hahn
                && r.classification.reversibility == Reversibility::Reversible),
        })
        .collect();
    let total_gamma = t1.map_or(0.0, |t| 1.0 / (2.0 * t))
        + channels
            .iter()
            .filter(|c| c.included)
            .map(|c| c.gamma)
            .sum::<f64>();
    Ok(DecoherenceSummary {
        sequence,
        t1,
        channels,
        total_gamma,
        total_gamma_inverse: if total_gamma > 0.0 {
            1.0 / total_gamma
        } else {
            f64::INFINITY
        },
    })
}
