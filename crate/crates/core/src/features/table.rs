//! Feature tables: one row per object, persisted as CSV.
//!
//! Header: `id,label,<13 feature names>,mask_bits` followed by the optional
//! auxiliary columns `ra_deg,dec_deg,mean_mag,snr,path`. Invalid features are
//! written as empty fields. The same schema is used for training and
//! unlabeled sets (the `label` field is then empty).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_features_with, mean, median_error, FeatureConfig, FeatureVector, FEATURE_NAMES, N_FEATURES};
use crate::error::{Error, Result};
use crate::lightcurve::{load_entry, TrainingManifest};

/// One object's features plus the auxiliary data downstream stages need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub object_id: String,
    pub label: Option<String>,
    pub features: FeatureVector,
    pub ra_deg: Option<f64>,
    pub dec_deg: Option<f64>,
    /// Mean blue-band magnitude (for colour-magnitude export).
    pub mean_mag: Option<f64>,
    /// Amplitude over median photometric error.
    pub snr: Option<f64>,
    /// Blue-band curve file, when known.
    pub path: Option<PathBuf>,
}

impl FeatureRow {
    pub fn new(object_id: impl Into<String>, label: Option<String>, features: FeatureVector) -> Self {
        FeatureRow {
            object_id: object_id.into(),
            label,
            features,
            ra_deg: None,
            dec_deg: None,
            mean_mag: None,
            snr: None,
            path: None,
        }
    }
}

/// An ordered collection of feature rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    /// Extract features for every manifest entry, in manifest order. Curves
    /// are loaded and dropped one at a time per worker.
    pub fn from_manifest(manifest: &TrainingManifest, cfg: &FeatureConfig) -> Result<Self> {
        let rows = manifest
            .entries
            .par_iter()
            .map(|entry| {
                let loaded = load_entry(entry)?;
                let features = extract_features_with(&loaded.blue, loaded.red.as_ref(), cfg);
                let snr = features
                    .get(super::Feature::Amplitude)
                    .map(|a| a / median_error(&loaded.blue));
                Ok(FeatureRow {
                    object_id: entry.object_id.clone(),
                    label: entry.label.clone(),
                    features,
                    ra_deg: entry.ra_deg,
                    dec_deg: entry.dec_deg,
                    mean_mag: Some(mean(loaded.blue.magnitudes())),
                    snr,
                    path: Some(entry.path.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Class names in order of first appearance.
    pub fn classes(&self) -> Vec<String> {
        let mut classes: Vec<String> = Vec::new();
        for r in &self.rows {
            if let Some(l) = &r.label {
                if !classes.contains(l) {
                    classes.push(l.clone());
                }
            }
        }
        classes
    }

    pub fn header() -> Vec<String> {
        let mut h = vec!["id".to_string(), "label".to_string()];
        h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
        h.extend(
            ["mask_bits", "ra_deg", "dec_deg", "mean_mag", "snr", "path"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::header())?;
        for r in &self.rows {
            wtr.write_record(row_record(r))?;
        }
        wtr.flush().map_err(|e| Error::io("<feature table>", e))?;
        Ok(())
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let rows = FeatureTableReader::new(r)?.collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable { rows })
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn row_record(r: &FeatureRow) -> Vec<String> {
    let mut rec = Vec::with_capacity(N_FEATURES + 8);
    rec.push(r.object_id.clone());
    rec.push(r.label.clone().unwrap_or_default());
    for i in 0..N_FEATURES {
        rec.push(if r.features.mask()[i] {
            r.features.values()[i].to_string()
        } else {
            String::new()
        });
    }
    rec.push(r.features.mask_bits().to_string());
    rec.push(opt(r.ra_deg));
    rec.push(opt(r.dec_deg));
    rec.push(opt(r.mean_mag));
    rec.push(opt(r.snr));
    rec.push(
        r.path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
    );
    rec
}

/// Streaming reader over a feature-table CSV. The header is validated when the
/// reader is created, before any row is produced.
pub struct FeatureTableReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    cols: Columns,
}

struct Columns {
    id: usize,
    label: Option<usize>,
    features: [usize; N_FEATURES],
    mask: Option<usize>,
    ra: Option<usize>,
    dec: Option<usize>,
    mean_mag: Option<usize>,
    snr: Option<usize>,
    path: Option<usize>,
}

impl<R: Read> FeatureTableReader<R> {
    pub fn new(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let id = find("id")
            .ok_or_else(|| Error::InvalidArgument("feature table has no `id` column".into()))?;
        let mut features = [0usize; N_FEATURES];
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            features[i] = find(name).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "feature table schema mismatch: missing column `{name}`"
                ))
            })?;
        }
        let cols = Columns {
            id,
            label: find("label"),
            features,
            mask: find("mask_bits"),
            ra: find("ra_deg"),
            dec: find("dec_deg"),
            mean_mag: find("mean_mag"),
            snr: find("snr"),
            path: find("path"),
        };
        Ok(FeatureTableReader {
            records: rdr.into_records(),
            cols,
        })
    }
}

fn parse_opt(rec: &csv::StringRecord, col: Option<usize>, what: &str) -> Result<Option<f64>> {
    match col.and_then(|c| rec.get(c)) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(|v| v.is_finite().then_some(v))
            .map_err(|_| Error::MalformedInput(format!("bad {what} value `{s}`"))),
    }
}

impl<R: Read> Iterator for FeatureTableReader<R> {
    type Item = Result<FeatureRow>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.records.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e.into())),
        };
        Some((|| {
            let c = &self.cols;
            let object_id = rec
                .get(c.id)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::MalformedInput("row without id".into()))?
                .to_string();
            let mut values = [f64::NAN; N_FEATURES];
            for (i, &col) in c.features.iter().enumerate() {
                values[i] = parse_opt(&rec, Some(col), FEATURE_NAMES[i])?.unwrap_or(f64::NAN);
            }
            let mut features = FeatureVector::from_values(values);
            if let Some(mc) = c.mask {
                if let Some(s) = rec.get(mc).filter(|s| !s.is_empty()) {
                    let bits: u16 = s
                        .parse()
                        .map_err(|_| Error::MalformedInput(format!("bad mask_bits `{s}`")))?;
                    features = FeatureVector::from_parts(values, bits & features.mask_bits());
                }
            }
            Ok(FeatureRow {
                label: c
                    .label
                    .and_then(|l| rec.get(l))
                    .filter(|s| !s.is_empty())
                    .map(str::to_string),
                features,
                ra_deg: parse_opt(&rec, c.ra, "ra_deg")?,
                dec_deg: parse_opt(&rec, c.dec, "dec_deg")?,
                mean_mag: parse_opt(&rec, c.mean_mag, "mean_mag")?,
                snr: parse_opt(&rec, c.snr, "snr")?,
                path: c
                    .path
                    .and_then(|p| rec.get(p))
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from),
                object_id,
            })
        })())
    }
}

/// Per-feature median over valid entries. Features with no valid entry get
/// 0.0 and are reported in the second element.
pub fn medians<'a>(vectors: impl Iterator<Item = &'a FeatureVector>) -> ([f64; N_FEATURES], Vec<usize>) {
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); N_FEATURES];
    for fv in vectors {
        for ((col, &valid), &v) in cols.iter_mut().zip(fv.mask()).zip(fv.values()) {
            if valid {
                col.push(v);
            }
        }
    }
    let mut out = [0.0; N_FEATURES];
    let mut empty = Vec::new();
    for (i, mut c) in cols.into_iter().enumerate() {
        if c.is_empty() {
            empty.push(i);
            continue;
        }
        c.sort_by(f64::total_cmp);
        out[i] = super::percentile(&c, 0.5);
    }
    (out, empty)
}

/// Replace invalid entries with the given medians.
pub fn impute(fv: &FeatureVector, medians: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
    let mut x = *fv.values();
    for i in 0..N_FEATURES {
        if !fv.mask()[i] {
            x[i] = medians[i];
        }
    }
    x
}

/// Labeled, imputed design matrix ready for forest training.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub object_ids: Vec<String>,
    pub classes: Vec<String>,
    pub labels: Vec<usize>,
    pub x: Vec<[f64; N_FEATURES]>,
    pub mask_bits: Vec<u16>,
    pub medians: [f64; N_FEATURES],
    /// Number of imputed entries per feature.
    pub imputed: [usize; N_FEATURES],
    pub warnings: Vec<String>,
}

impl FeatureMatrix {
    /// Build from a labeled table. `classes` fixes the label order; when
    /// `None` the order of first appearance is used.
    pub fn from_table(table: &FeatureTable, classes: Option<&[String]>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::MalformedInput("feature table is empty".into()));
        }
        let classes: Vec<String> = match classes {
            Some(c) => c.to_vec(),
            None => table.classes(),
        };
        let mut labels = Vec::with_capacity(table.len());
        for r in &table.rows {
            let l = r.label.as_ref().ok_or_else(|| {
                Error::MalformedInput(format!("training row `{}` has no label", r.object_id))
            })?;
            let idx = classes.iter().position(|c| c == l).ok_or_else(|| {
                Error::MalformedInput(format!("row `{}`: unknown class `{l}`", r.object_id))
            })?;
            labels.push(idx);
        }
        let (medians, empty) = medians(table.rows.iter().map(|r| &r.features));
        let mut warnings = Vec::new();
        for i in empty {
            warnings.push(format!(
                "feature `{}` is invalid for every object; imputed as 0",
                FEATURE_NAMES[i]
            ));
        }
        let mut imputed = [0usize; N_FEATURES];
        let x: Vec<[f64; N_FEATURES]> = table
            .rows
            .iter()
            .map(|r| {
                for (i, ok) in r.features.mask().iter().enumerate() {
                    if !ok {
                        imputed[i] += 1;
                    }
                }
                impute(&r.features, &medians)
            })
            .collect();
        for (i, &n) in imputed.iter().enumerate() {
            if 2 * n > table.len() {
                warnings.push(format!(
                    "feature `{}` masked for {n} of {} objects (> 50%)",
                    FEATURE_NAMES[i],
                    table.len()
                ));
            }
        }
        Ok(FeatureMatrix {
            object_ids: table.rows.iter().map(|r| r.object_id.clone()).collect(),
            classes,
            labels,
            mask_bits: table.rows.iter().map(|r| r.features.mask_bits()).collect(),
            x,
            medians,
            imputed,
            warnings,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.len()
    }
}

/// Extract features for a labeled manifest and build the imputed matrix,
/// rows aligned with manifest order.
pub fn feature_matrix(manifest: &TrainingManifest, cfg: &FeatureConfig) -> Result<(FeatureTable, FeatureMatrix)> {
    let table = FeatureTable::from_manifest(manifest, cfg)?;
    let m = FeatureMatrix::from_table(&table, Some(&manifest.classes))?;
    Ok((table, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Feature;

    fn row(id: &str, label: &str, v: f64) -> FeatureRow {
        let mut vals = [v; N_FEATURES];
        vals[Feature::Color as usize] = f64::NAN;
        FeatureRow::new(id, Some(label.to_string()), FeatureVector::from_values(vals))
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let mut r = row("a", "x", 1.5);
        r.ra_deg = Some(10.25);
        r.dec_deg = Some(-70.5);
        r.path = Some(PathBuf::from("curves/a.txt"));
        let mut unl = row("b", "x", 2.0);
        unl.label = None;
        let t = FeatureTable { rows: vec![r, unl] };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,label,period,amplitude,color,"));
        let back = FeatureTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[0].object_id, "a");
        assert_eq!(back.rows[0].ra_deg, Some(10.25));
        assert_eq!(back.rows[1].label, None);
        assert_eq!(back.rows[0].features.mask_bits(), t.rows[0].features.mask_bits());
    }

    #[test]
    fn schema_mismatch_is_rejected_up_front() {
        let text = "id,label,period,amplitude\na,x,1,2\n";
        assert!(matches!(
            FeatureTableReader::new(text.as_bytes()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn imputes_with_medians_and_counts() {
        let mut rows = vec![row("a", "x", 1.0), row("b", "y", 3.0), row("c", "y", 2.0)];
        rows[1].features = FeatureVector::from_values({
            let mut v = [3.0; N_FEATURES];
            v[Feature::Std as usize] = f64::NAN;
            v
        });
        let t = FeatureTable { rows };
        let m = FeatureMatrix::from_table(&t, None).unwrap();
        assert_eq!(m.classes, vec!["x", "y"]);
        assert_eq!(m.labels, vec![0, 1, 1]);
        // std column valid for a (1.0) and c (2.0): median 1.5
        assert_eq!(m.x[1][Feature::Std as usize], 1.5);
        assert_eq!(m.imputed[Feature::Std as usize], 1);
        // colour valid for b only; 2 of 3 imputed => warning
        assert_eq!(m.imputed[Feature::Color as usize], 2);
        assert!(m.warnings.iter().any(|w| w.contains("color")));
    }

    #[test]
    fn unknown_class_is_rejected() {
        let t = FeatureTable { rows: vec![row("a", "x", 1.0)] };
        let classes = vec!["y".to_string(), "z".to_string()];
        assert!(matches!(
            FeatureMatrix::from_table(&t, Some(&classes)),
            Err(Error::MalformedInput(_))
        ));
    }
}
