//! Light curves: parsing, validation, folding and the training manifest.
//!
//! The on-disk curve format is delimited text, one `(time, magnitude, error)`
//! triplet per row, separated by commas and/or whitespace. Lines starting with
//! `#` are comments. Times are days (MJD), magnitudes and errors are in mag.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Photometric passband.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    #[default]
    Blue,
    Red,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Blue => "blue",
            Band::Red => "red",
        })
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blue" | "b" => Ok(Band::Blue),
            "red" | "r" => Ok(Band::Red),
            other => Err(Error::InvalidArgument(format!("unknown band `{other}`"))),
        }
    }
}

/// What to do with rows that share an identical epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateEpochs {
    /// Merge into one sample using inverse-variance weights.
    #[default]
    Average,
    /// Refuse the curve.
    Reject,
}

/// An irregularly sampled magnitude series with per-point errors.
///
/// Construction always goes through validation, so a `LightCurve` has strictly
/// increasing times, at least two samples and strictly positive errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LightCurve {
    object_id: String,
    band: Band,
    times: Vec<f64>,
    magnitudes: Vec<f64>,
    errors: Vec<f64>,
    ra_deg: Option<f64>,
    dec_deg: Option<f64>,
    dropped_rows: usize,
}

impl LightCurve {
    /// Build a curve from raw columns. Samples are sorted by time and
    /// duplicate epochs merged with inverse-variance weights.
    pub fn new(
        object_id: impl Into<String>,
        band: Band,
        times: Vec<f64>,
        magnitudes: Vec<f64>,
        errors: Vec<f64>,
    ) -> Result<Self> {
        Self::build(
            object_id.into(),
            band,
            times,
            magnitudes,
            errors,
            DuplicateEpochs::Average,
        )
    }

    fn build(
        object_id: String,
        band: Band,
        times: Vec<f64>,
        magnitudes: Vec<f64>,
        errors: Vec<f64>,
        duplicates: DuplicateEpochs,
    ) -> Result<Self> {
        if times.len() != magnitudes.len() || times.len() != errors.len() {
            return Err(Error::MalformedInput(format!(
                "{object_id}: column lengths differ ({}, {}, {})",
                times.len(),
                magnitudes.len(),
                errors.len()
            )));
        }
        let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(times.len());
        for ((t, m), e) in times.into_iter().zip(magnitudes).zip(errors) {
            if !(t.is_finite() && m.is_finite() && e.is_finite()) {
                return Err(Error::MalformedInput(format!(
                    "{object_id}: non-finite sample at t={t}"
                )));
            }
            if e <= 0.0 {
                return Err(Error::MalformedInput(format!(
                    "{object_id}: non-positive error {e} at t={t}"
                )));
            }
            rows.push((t, m, e));
        }
        // Stable: equal epochs keep their input order.
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut out_t = Vec::with_capacity(rows.len());
        let mut out_m = Vec::with_capacity(rows.len());
        let mut out_e = Vec::with_capacity(rows.len());
        let mut i = 0;
        while i < rows.len() {
            let mut j = i + 1;
            while j < rows.len() && rows[j].0 == rows[i].0 {
                j += 1;
            }
            if j - i == 1 {
                out_t.push(rows[i].0);
                out_m.push(rows[i].1);
                out_e.push(rows[i].2);
            } else {
                if duplicates == DuplicateEpochs::Reject {
                    return Err(Error::MalformedInput(format!(
                        "{object_id}: duplicate epoch {}",
                        rows[i].0
                    )));
                }
                let (mut sw, mut swm) = (0.0, 0.0);
                for r in &rows[i..j] {
                    let w = 1.0 / (r.2 * r.2);
                    sw += w;
                    swm += w * r.1;
                }
                out_t.push(rows[i].0);
                out_m.push(swm / sw);
                out_e.push(1.0 / sw.sqrt());
            }
            i = j;
        }

        if out_t.len() < 2 {
            return Err(Error::MalformedInput(format!(
                "{object_id}: need at least 2 valid samples, got {}",
                out_t.len()
            )));
        }
        Ok(LightCurve {
            object_id,
            band,
            times: out_t,
            magnitudes: out_m,
            errors: out_e,
            ra_deg: None,
            dec_deg: None,
            dropped_rows: 0,
        })
    }

    /// Attach a sky position (degrees).
    pub fn with_position(mut self, ra_deg: f64, dec_deg: f64) -> Result<Self> {
        if !(0.0..360.0).contains(&ra_deg) || !(-90.0..=90.0).contains(&dec_deg) {
            return Err(Error::InvalidArgument(format!(
                "{}: position ({ra_deg}, {dec_deg}) out of range",
                self.object_id
            )));
        }
        self.ra_deg = Some(ra_deg);
        self.dec_deg = Some(dec_deg);
        Ok(self)
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn ra_deg(&self) -> Option<f64> {
        self.ra_deg
    }

    pub fn dec_deg(&self) -> Option<f64> {
        self.dec_deg
    }

    /// Rows discarded while parsing (unparseable or non-finite).
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    /// Time between the first and last sample, in days.
    pub fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Write the curve in the delimited text format. Values are printed with
    /// shortest round-trip formatting so that re-parsing is exact.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# object_id={} band={}", self.object_id, self.band)?;
        writeln!(w, "# time,magnitude,error")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{}",
                self.times[i], self.magnitudes[i], self.errors[i]
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("formatted output is UTF-8")
    }
}

/// Options for [`parse_lightcurve_with`].
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub duplicates: DuplicateEpochs,
}

/// Parse the delimited text format into a validated curve.
pub fn parse_lightcurve<R: BufRead>(
    reader: R,
    object_id: impl Into<String>,
    band: Band,
) -> Result<LightCurve> {
    parse_lightcurve_with(reader, object_id, band, &ParseOptions::default())
}

pub fn parse_lightcurve_with<R: BufRead>(
    reader: R,
    object_id: impl Into<String>,
    band: Band,
    opts: &ParseOptions,
) -> Result<LightCurve> {
    let object_id = object_id.into();
    let mut times = Vec::new();
    let mut mags = Vec::new();
    let mut errs = Vec::new();
    let mut dropped = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<{object_id}>"), e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty());
        let parsed: Option<[f64; 3]> = (|| {
            let t = fields.next()?.parse::<f64>().ok()?;
            let m = fields.next()?.parse::<f64>().ok()?;
            let e = fields.next()?.parse::<f64>().ok()?;
            Some([t, m, e])
        })();
        match parsed {
            Some([t, m, e]) if t.is_finite() && m.is_finite() && e.is_finite() => {
                if e <= 0.0 {
                    return Err(Error::MalformedInput(format!(
                        "{object_id}: line {}: non-positive error {e}",
                        lineno + 1
                    )));
                }
                times.push(t);
                mags.push(m);
                errs.push(e);
            }
            _ => dropped += 1,
        }
    }

    let mut lc = LightCurve::build(object_id, band, times, mags, errs, opts.duplicates)?;
    lc.dropped_rows = dropped;
    Ok(lc)
}

/// Read a curve file from disk.
pub fn read_lightcurve(path: &Path, object_id: &str, band: Band) -> Result<LightCurve> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_lightcurve(BufReader::new(file), object_id, band)
}

/// A light curve with observation times replaced by phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedLightCurve {
    pub phases: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub errors: Vec<f64>,
    pub period: f64,
    pub t0: f64,
}

/// Fractional part of `(t - t0) / period`, always in `[0, 1)`.
pub fn phase_of(t: f64, t0: f64, period: f64) -> f64 {
    let x = (t - t0) / period;
    let p = x - x.floor();
    if p >= 1.0 {
        0.0
    } else {
        p
    }
}

/// Fold a curve at `period`. `t0` defaults to the first epoch.
pub fn fold(lc: &LightCurve, period: f64, t0: Option<f64>) -> Result<FoldedLightCurve> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fold period must be positive, got {period}"
        )));
    }
    let t0 = t0.unwrap_or(lc.times[0]);
    let mut rows: Vec<(f64, f64, f64)> = lc
        .times
        .iter()
        .zip(&lc.magnitudes)
        .zip(&lc.errors)
        .map(|((&t, &m), &e)| (phase_of(t, t0, period), m, e))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(FoldedLightCurve {
        phases: rows.iter().map(|r| r.0).collect(),
        magnitudes: rows.iter().map(|r| r.1).collect(),
        errors: rows.iter().map(|r| r.2).collect(),
        period,
        t0,
    })
}

/// One row of a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub object_id: String,
    /// Blue-band curve, resolved against the manifest directory.
    pub path: PathBuf,
    /// Optional red-band curve for the same object.
    pub red_path: Option<PathBuf>,
    pub label: Option<String>,
    pub ra_deg: Option<f64>,
    pub dec_deg: Option<f64>,
}

/// A list of light-curve files with optional class labels.
#[derive(Debug, Clone)]
pub struct TrainingManifest {
    pub entries: Vec<ManifestEntry>,
    /// Class names in order of first appearance.
    pub classes: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    ra_deg: Option<f64>,
    #[serde(default)]
    dec_deg: Option<f64>,
    #[serde(default)]
    red_path: Option<String>,
}

impl TrainingManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of entries per class, in class order.
    pub fn class_counts(&self) -> Vec<(String, usize)> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.entries {
            if let Some(l) = &e.label {
                *counts.entry(l.as_str()).or_default() += 1;
            }
        }
        self.classes
            .iter()
            .map(|c| (c.clone(), counts.get(c.as_str()).copied().unwrap_or(0)))
            .collect()
    }

    /// Label index of each entry (`None` for unlabeled rows).
    pub fn label_indices(&self) -> Vec<Option<usize>> {
        self.entries
            .iter()
            .map(|e| {
                e.label
                    .as_ref()
                    .and_then(|l| self.classes.iter().position(|c| c == l))
            })
            .collect()
    }

    /// Load curves one entry at a time. Only the current curve pair is held
    /// in memory.
    pub fn curves(&self) -> impl Iterator<Item = Result<LoadedEntry<'_>>> + '_ {
        self.entries.iter().map(load_entry)
    }
}

/// A manifest entry with its curves read from disk.
#[derive(Debug, Clone)]
pub struct LoadedEntry<'a> {
    pub entry: &'a ManifestEntry,
    pub blue: LightCurve,
    pub red: Option<LightCurve>,
}

pub fn load_entry(entry: &ManifestEntry) -> Result<LoadedEntry<'_>> {
    let mut blue = read_lightcurve(&entry.path, &entry.object_id, Band::Blue)?;
    if let (Some(ra), Some(dec)) = (entry.ra_deg, entry.dec_deg) {
        blue = blue.with_position(ra, dec)?;
    }
    let red = match &entry.red_path {
        Some(p) => Some(read_lightcurve(p, &entry.object_id, Band::Red)?),
        None => None,
    };
    Ok(LoadedEntry { entry, blue, red })
}

/// Load a labeled training manifest (`id,path,label,ra_deg,dec_deg`, with an
/// optional `red_path` column). Requires at least two classes.
pub fn load_manifest(path: &Path) -> Result<TrainingManifest> {
    let m = read_manifest(path, true)?;
    if m.classes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{}: need at least 2 classes, found {}",
            path.display(),
            m.classes.len()
        )));
    }
    Ok(m)
}

/// Load a manifest whose `label` column may be absent or empty.
pub fn load_unlabeled_manifest(path: &Path) -> Result<TrainingManifest> {
    read_manifest(path, false)
}

fn read_manifest(path: &Path, labeled: bool) -> Result<TrainingManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);

    let headers = rdr.headers()?.clone();
    for required in ["id", "path"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::MalformedInput(format!(
                "{}: missing `{required}` column",
                path.display()
            )));
        }
    }
    if labeled && !headers.iter().any(|h| h == "label") {
        return Err(Error::MalformedInput(format!(
            "{}: missing class column `label`",
            path.display()
        )));
    }

    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    let mut entries = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row = row?;
        let label = row.label.filter(|l| !l.is_empty());
        if labeled && label.is_none() {
            return Err(Error::MalformedInput(format!(
                "{}: row {} (`{}`) has no label",
                path.display(),
                i + 1,
                row.id
            )));
        }
        if let Some(l) = &label {
            if !classes.contains(l) {
                classes.push(l.clone());
            }
        }
        let entry = ManifestEntry {
            path: resolve(&row.path),
            red_path: row.red_path.filter(|p| !p.is_empty()).map(|p| resolve(&p)),
            object_id: row.id,
            label,
            ra_deg: row.ra_deg,
            dec_deg: row.dec_deg,
        };
        for p in std::iter::once(&entry.path).chain(entry.red_path.as_ref()) {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("curve file for entry `{}` not found", entry.object_id),
                    ),
                ));
            }
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::MalformedInput(format!(
            "{}: manifest has no entries",
            path.display()
        )));
    }
    Ok(TrainingManifest { entries, classes })
}
