//! Removal of candidates whose periods or band behaviour mark them as
//! instrumental or observing-cadence artifacts.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::candidates::CandidateRecord;
use crate::error::{Error, Result};

pub const SIDEREAL_DAY: f64 = 0.99727;
pub const SOLAR_DAY: f64 = 1.0;
pub const YEAR: f64 = 365.25;
pub const HARMONICS: [f64; 5] = [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AliasConfig {
    /// Relative tolerance `|P - P_alias| / P_alias`.
    pub tolerance: f64,
}

impl Default for AliasConfig {
    fn default() -> Self {
        AliasConfig { tolerance: 0.01 }
    }
}

impl AliasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alias tolerance must be in [0, 1), got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    /// Alias periods with a label each.
    pub fn targets() -> Vec<(f64, String)> {
        let mut t = Vec::new();
        for (base, name) in [(SIDEREAL_DAY, "sidereal"), (SOLAR_DAY, "day")] {
            for h in HARMONICS {
                let label = if h == 1.0 {
                    name.to_string()
                } else if h < 1.0 {
                    format!("{name}/{}", (1.0 / h).round())
                } else {
                    format!("{name}x{h}")
                };
                t.push((base * h, label));
            }
        }
        t.push((YEAR, "year".to_string()));
        t
    }

    /// The alias a period falls on, if any.
    pub fn matching_alias(&self, period: f64) -> Option<String> {
        Self::targets()
            .into_iter()
            .filter(|(p, _)| ((period - p) / p).abs() <= self.tolerance)
            .min_by(|a, b| {
                let da = ((period - a.0) / a.0).abs();
                let db = ((period - b.0) / b.0).abs();
                da.total_cmp(&db)
            })
            .map(|(_, l)| l)
    }
}

/// A removed candidate and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub object_id: String,
    pub period: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterTally {
    pub input: usize,
    pub kept: usize,
    pub removed: Vec<Removal>,
    /// Candidates kept only because they carry no valid period.
    pub without_period: usize,
}

/// Drop candidates whose period is within tolerance of the sidereal or solar
/// day (and their 1/3, 1/2, 2 and 3 multiples) or of one year. Candidates
/// without a valid period are kept. Relative order is preserved.
pub fn alias_filter(candidates: Vec<CandidateRecord>, cfg: &AliasConfig) -> Result<(Vec<CandidateRecord>, FilterTally)> {
    cfg.validate()?;
    let mut tally = FilterTally {
        input: candidates.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(candidates.len());
    for c in candidates {
        match c.period {
            Some(p) => match cfg.matching_alias(p) {
                Some(reason) => tally.removed.push(Removal {
                    object_id: c.object_id.clone(),
                    period: Some(p),
                    reason,
                }),
                None => kept.push(c),
            },
            None => {
                tally.without_period += 1;
                kept.push(c);
            }
        }
    }
    tally.kept = kept.len();
    Ok((kept, tally))
}

/// How deep into the other band's list a candidate must appear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Depth {
    /// Top `n` ranks.
    Absolute(usize),
    /// Top fraction of the list, rounded up, at least one.
    Proportional(f64),
    Unlimited,
}

impl Default for Depth {
    fn default() -> Self {
        Depth::Proportional(0.001)
    }
}

impl Depth {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Depth::Absolute(0) => Err(Error::InvalidArgument("depth must be positive".into())),
            Depth::Proportional(f) if !(f > 0.0 && f <= 1.0) => Err(Error::InvalidArgument(format!(
                "proportional depth must be in (0, 1], got {f}"
            ))),
            _ => Ok(()),
        }
    }

    /// Number of ranks covered in a list of `len` candidates.
    pub fn resolve(&self, len: usize) -> usize {
        match *self {
            Depth::Absolute(n) => n.min(len),
            Depth::Proportional(f) => ((f * len as f64).ceil() as usize).clamp(1, len.max(1)).min(len),
            Depth::Unlimited => len,
        }
    }
}

/// Keep blue candidates whose id appears within the top `depth` ranks of the
/// red list. With [`Depth::Unlimited`] nothing is removed.
pub fn cross_band_filter(
    blue: Vec<CandidateRecord>,
    red: &[CandidateRecord],
    depth: Depth,
) -> Result<(Vec<CandidateRecord>, FilterTally)> {
    depth.validate()?;
    let mut tally = FilterTally {
        input: blue.len(),
        ..Default::default()
    };
    if depth == Depth::Unlimited {
        tally.kept = blue.len();
        return Ok((blue, tally));
    }
    let mut red_sorted: Vec<&CandidateRecord> = red.iter().collect();
    red_sorted.sort_by_key(|c| c.rank);
    let n = depth.resolve(red_sorted.len());
    let top: HashSet<&str> = red_sorted[..n].iter().map(|c| c.object_id.as_str()).collect();
    let mut kept = Vec::with_capacity(blue.len());
    for c in blue {
        if top.contains(c.object_id.as_str()) {
            kept.push(c);
        } else {
            tally.removed.push(Removal {
                object_id: c.object_id.clone(),
                period: c.period,
                reason: format!("not in red top {n}"),
            });
        }
    }
    tally.kept = kept.len();
    Ok((kept, tally))
}
