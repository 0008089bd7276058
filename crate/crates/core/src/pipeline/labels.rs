//! Reviewer decisions and the append-only label log.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Review state of a candidate as shown in `candidates.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum TriageState {
    #[default]
    Unreviewed,
    Artifact(String),
    Known(String),
    Interesting,
}

/// A reviewer decision. `Skip` records that the candidate was seen; on
/// replay it leaves the candidate unreviewed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Decision {
    Artifact(String),
    Known(String),
    Interesting,
    Skip,
}

impl fmt::Display for TriageState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriageState::Unreviewed => f.write_str("unreviewed"),
            TriageState::Artifact(g) => write!(f, "artifact:{g}"),
            TriageState::Known(c) => write!(f, "known:{c}"),
            TriageState::Interesting => f.write_str("interesting"),
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Artifact(g) => write!(f, "artifact:{g}"),
            Decision::Known(c) => write!(f, "known:{c}"),
            Decision::Interesting => f.write_str("interesting"),
            Decision::Skip => f.write_str("skip"),
        }
    }
}

fn named(kind: &str, name: &str) -> Result<String> {
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::InvalidArgument(format!("{kind} decision needs a non-empty name")));
    }
    Ok(name.to_string())
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("artifact", g)) => Ok(Decision::Artifact(named("artifact", g)?)),
            Some(("known", c)) => Ok(Decision::Known(named("known", c)?)),
            None if s == "interesting" => Ok(Decision::Interesting),
            None if s == "skip" => Ok(Decision::Skip),
            _ => Err(Error::InvalidArgument(format!("unknown decision `{s}`"))),
        }
    }
}

impl FromStr for TriageState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "unreviewed" || s.is_empty() {
            return Ok(TriageState::Unreviewed);
        }
        match s.parse::<Decision>()? {
            Decision::Skip => Err(Error::InvalidArgument("`skip` is not a triage state".into())),
            d => Ok(TriageState::from(&d)),
        }
    }
}

impl From<&Decision> for TriageState {
    fn from(d: &Decision) -> Self {
        match d {
            Decision::Artifact(g) => TriageState::Artifact(g.clone()),
            Decision::Known(c) => TriageState::Known(c.clone()),
            Decision::Interesting => TriageState::Interesting,
            Decision::Skip => TriageState::Unreviewed,
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(TriageState);
string_serde!(Decision);

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageLabel {
    #[serde(alias = "id")]
    pub object_id: String,
    #[serde(alias = "label")]
    pub decision: Decision,
    #[serde(default)]
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
    pub run_id: String,
}

/// Current state per object after replaying a log: the last line for an
/// object wins.
pub fn replay<'a>(labels: impl IntoIterator<Item = &'a TriageLabel>) -> BTreeMap<String, TriageState> {
    let mut state = BTreeMap::new();
    for l in labels {
        state.insert(l.object_id.clone(), TriageState::from(&l.decision));
    }
    state
}

/// Members of each artifact group in a replayed state, sorted by object id.
pub fn artifact_groups(state: &BTreeMap<String, TriageState>) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (id, s) in state {
        if let TriageState::Artifact(g) = s {
            groups.entry(g.clone()).or_default().push(id.clone());
        }
    }
    groups
}

/// Read every label in a log file. A missing file is an empty log.
pub fn read_labels(path: &Path) -> Result<Vec<TriageLabel>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let label: TriageLabel = serde_json::from_str(&line).map_err(|e| {
            Error::MalformedInput(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(label);
    }
    Ok(out)
}

/// Append one label as a single line and flush it to disk.
pub fn append_label(path: &Path, label: &TriageLabel) -> Result<()> {
    let mut line = serde_json::to_string(label)?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}
