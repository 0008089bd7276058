//! Ranked outlier candidates and `candidates.csv`.
//!
//! Columns: `id,score,rank,period,vote_<class>...,triage_label,run_id,
//! log_joint,band,ra_deg,dec_deg,mean_mag,snr,low_snr,<13 features>,
//! mask_bits,path`.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::TriageState;
use crate::error::{Error, Result};
use crate::features::{FeatureRow, FeatureVector, Feature, FEATURE_NAMES, N_FEATURES};
use crate::lightcurve::Band;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub object_id: String,
    /// One minus the joint probability of the votes.
    pub score: f64,
    /// Natural log of the joint probability; ranking key.
    pub log_joint: f64,
    /// 1-based position in the ranked list.
    pub rank: usize,
    pub votes: Vec<f64>,
    #[serde(with = "feature_map")]
    pub features: FeatureVector,
    pub period: Option<f64>,
    pub band: Band,
    pub triage_label: TriageState,
    pub run_id: String,
    pub ra_deg: Option<f64>,
    pub dec_deg: Option<f64>,
    pub mean_mag: Option<f64>,
    pub snr: Option<f64>,
    /// SNR is below the configured floor.
    pub low_snr: bool,
    pub path: Option<PathBuf>,
}

impl CandidateRecord {
    /// A record with only the id set.
    pub fn empty(object_id: impl Into<String>) -> Self {
        CandidateRecord {
            object_id: object_id.into(),
            score: 0.0,
            log_joint: 0.0,
            rank: 0,
            votes: Vec::new(),
            features: FeatureVector::default(),
            period: None,
            band: Band::Blue,
            triage_label: TriageState::Unreviewed,
            run_id: String::new(),
            ra_deg: None,
            dec_deg: None,
            mean_mag: None,
            snr: None,
            low_snr: false,
            path: None,
        }
    }

    /// Build an unranked record from a scored feature row.
    pub fn from_row(row: FeatureRow, votes: Vec<f64>, log_joint: f64, snr_floor: f64) -> Self {
        let low_snr = row.snr.is_some_and(|s| s < snr_floor);
        CandidateRecord {
            period: row.features.get(Feature::Period),
            score: super::score_from_log_joint(log_joint),
            log_joint,
            rank: 0,
            votes,
            features: row.features,
            band: Band::Blue,
            triage_label: TriageState::Unreviewed,
            run_id: String::new(),
            ra_deg: row.ra_deg,
            dec_deg: row.dec_deg,
            mean_mag: row.mean_mag,
            snr: row.snr,
            low_snr,
            path: row.path,
            object_id: row.object_id,
        }
    }

    /// The feature row this record was scored from (label omitted).
    pub fn to_feature_row(&self) -> FeatureRow {
        FeatureRow {
            object_id: self.object_id.clone(),
            label: None,
            features: self.features,
            ra_deg: self.ra_deg,
            dec_deg: self.dec_deg,
            mean_mag: self.mean_mag,
            snr: self.snr,
            path: self.path.clone(),
        }
    }
}

/// Ranking order: lowest joint probability first, then object id.
pub fn rank_order(a: &CandidateRecord, b: &CandidateRecord) -> Ordering {
    a.log_joint
        .total_cmp(&b.log_joint)
        .then_with(|| a.object_id.cmp(&b.object_id))
}

/// Sort into ranking order and assign ranks `1..=n`.
pub fn assign_ranks(candidates: &mut [CandidateRecord]) {
    candidates.sort_by(rank_order);
    for (i, c) in candidates.iter_mut().enumerate() {
        c.rank = i + 1;
    }
}

mod feature_map {
    use super::*;
    use serde::de::Deserializer;
    use serde::ser::{SerializeMap, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(fv: &FeatureVector, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(N_FEATURES))?;
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            let v = fv.mask()[i].then_some(fv.values()[i]);
            m.serialize_entry(name, &v)?;
        }
        m.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<FeatureVector, D::Error> {
        let m = BTreeMap::<String, Option<f64>>::deserialize(d)?;
        let mut values = [f64::NAN; N_FEATURES];
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            if let Some(Some(v)) = m.get(*name) {
                values[i] = *v;
            }
        }
        Ok(FeatureVector::from_values(values))
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Header for a list over the given classes.
pub fn candidates_header(classes: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["id", "score", "rank", "period"].iter().map(|s| s.to_string()).collect();
    h.extend(classes.iter().map(|c| format!("vote_{c}")));
    h.extend(
        ["triage_label", "run_id", "log_joint", "band", "ra_deg", "dec_deg", "mean_mag", "snr", "low_snr"]
            .iter()
            .map(|s| s.to_string()),
    );
    h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    h.push("mask_bits".into());
    h.push("path".into());
    h
}

pub fn write_candidates<W: Write>(w: W, classes: &[String], candidates: &[CandidateRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(candidates_header(classes))?;
    for c in candidates {
        if c.votes.len() != classes.len() {
            return Err(Error::InvalidArgument(format!(
                "candidate `{}` has {} votes for {} classes",
                c.object_id,
                c.votes.len(),
                classes.len()
            )));
        }
        let mut rec = vec![c.object_id.clone(), c.score.to_string(), c.rank.to_string(), opt(c.period)];
        rec.extend(c.votes.iter().map(|v| v.to_string()));
        rec.push(c.triage_label.to_string());
        rec.push(c.run_id.clone());
        rec.push(c.log_joint.to_string());
        rec.push(c.band.to_string());
        rec.extend([opt(c.ra_deg), opt(c.dec_deg), opt(c.mean_mag), opt(c.snr)]);
        rec.push(c.low_snr.to_string());
        for i in 0..N_FEATURES {
            rec.push(opt(c.features.mask()[i].then_some(c.features.values()[i])));
        }
        rec.push(c.features.mask_bits().to_string());
        rec.push(c.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        wtr.write_record(rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<candidates>", e))?;
    Ok(())
}

pub fn write_candidates_path(path: &Path, classes: &[String], candidates: &[CandidateRecord]) -> Result<()> {
    super::model::write_with(path, |w| write_candidates(w, classes, candidates))
}

/// Parse a candidate list; returns the class names (from the vote columns)
/// and the records in file order.
pub fn read_candidates<R: Read>(r: R) -> Result<(Vec<String>, Vec<CandidateRecord>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedInput(format!("candidate list has no `{name}` column")))
    };
    let vote_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("vote_").map(|c| (i, c.to_string())))
        .collect();
    let classes: Vec<String> = vote_cols.iter().map(|(_, c)| c.clone()).collect();
    let id = find("id")?;
    let score = find("score")?;
    let rank = find("rank")?;
    let log_joint = find("log_joint")?;
    let fcols: Vec<usize> = FEATURE_NAMES.iter().map(|n| find(n)).collect::<Result<_>>()?;
    let optional = |n: &str| headers.iter().position(|h| h == n);
    let (period, label, run, band, ra, dec, mm, snr, low, mask, path) = (
        optional("period"),
        optional("triage_label"),
        optional("run_id"),
        optional("band"),
        optional("ra_deg"),
        optional("dec_deg"),
        optional("mean_mag"),
        optional("snr"),
        optional("low_snr"),
        optional("mask_bits"),
        optional("path"),
    );

    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str, s: &str| Error::MalformedInput(format!("row {}: bad {what} `{s}`", line + 2));
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).unwrap_or("");
        let num = |c: Option<usize>, what: &str| -> Result<Option<f64>> {
            match field(c) {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| bad(what, s)),
            }
        };
        let req = |c: usize, what: &str| -> Result<f64> {
            num(Some(c), what)?.ok_or_else(|| bad(what, ""))
        };
        let mut values = [f64::NAN; N_FEATURES];
        for (i, &c) in fcols.iter().enumerate() {
            values[i] = num(Some(c), FEATURE_NAMES[i])?.unwrap_or(f64::NAN);
        }
        let mut features = FeatureVector::from_values(values);
        let s = field(mask);
        if !s.is_empty() {
            let bits: u16 = s.parse().map_err(|_| bad("mask_bits", s))?;
            features = FeatureVector::from_parts(values, bits & features.mask_bits());
        }
        let votes = vote_cols
            .iter()
            .map(|(c, name)| req(*c, &format!("vote_{name}")))
            .collect::<Result<Vec<_>>>()?;
        out.push(CandidateRecord {
            object_id: field(Some(id)).to_string(),
            score: req(score, "score")?,
            log_joint: req(log_joint, "log_joint")?,
            rank: field(Some(rank)).parse().map_err(|_| bad("rank", field(Some(rank))))?,
            votes,
            features,
            period: num(period, "period")?,
            band: match field(band) {
                "" => Band::Blue,
                s => s.parse()?,
            },
            triage_label: field(label).parse()?,
            run_id: field(run).to_string(),
            ra_deg: num(ra, "ra_deg")?,
            dec_deg: num(dec, "dec_deg")?,
            mean_mag: num(mm, "mean_mag")?,
            snr: num(snr, "snr")?,
            low_snr: field(low) == "true",
            path: match field(path) {
                "" => None,
                s => Some(PathBuf::from(s)),
            },
        });
    }
    Ok((classes, out))
}

pub fn read_candidates_path(path: &Path) -> Result<(Vec<String>, Vec<CandidateRecord>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_candidates(std::io::BufReader::new(f))
}
