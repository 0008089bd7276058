//! Positional cross-match of candidates against a local catalog.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::candidates::CandidateRecord;
use crate::error::{Error, Result};

/// A catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRow {
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub name: String,
    pub rows: Vec<CatalogRow>,
    /// Rows dropped while reading (bad numbers, out-of-range coordinates).
    pub skipped: usize,
}

impl Catalog {
    pub fn new(name: impl Into<String>, rows: Vec<CatalogRow>) -> Self {
        Catalog {
            name: name.into(),
            rows,
            skipped: 0,
        }
    }

    /// Read a CSV with columns `ra_deg,dec_deg,label`. Malformed rows are
    /// skipped and counted.
    pub fn read_csv<R: Read>(name: impl Into<String>, r: R) -> Result<Catalog> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |n: &str| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::MalformedInput(format!("catalog has no `{n}` column")))
        };
        let (ra_c, dec_c, label_c) = (col("ra_deg")?, col("dec_deg")?, col("label")?);
        let mut cat = Catalog::new(name, Vec::new());
        for rec in rdr.records() {
            let Ok(rec) = rec else {
                cat.skipped += 1;
                continue;
            };
            let num = |c: usize| rec.get(c).and_then(|s| s.parse::<f64>().ok());
            match (num(ra_c), num(dec_c)) {
                (Some(ra), Some(dec)) if valid_position(ra, dec) => cat.rows.push(CatalogRow {
                    ra_deg: ra,
                    dec_deg: dec,
                    label: rec.get(label_c).unwrap_or("").to_string(),
                }),
                _ => cat.skipped += 1,
            }
        }
        Ok(cat)
    }

    pub fn read_path(path: &Path) -> Result<Catalog> {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(name, std::io::BufReader::new(f))
    }
}

fn valid_position(ra: f64, dec: f64) -> bool {
    ra.is_finite() && dec.is_finite() && (-90.0..=90.0).contains(&dec)
}

/// Great-circle separation in degrees (haversine form).
pub fn angular_separation_deg(ra1: f64, dec1: f64, ra2: f64, dec2: f64) -> f64 {
    let (ra1, dec1, ra2, dec2) = (ra1.to_radians(), dec1.to_radians(), ra2.to_radians(), dec2.to_radians());
    let sd = ((dec2 - dec1) / 2.0).sin();
    let sr = ((ra2 - ra1) / 2.0).sin();
    let h = (sd * sd + dec1.cos() * dec2.cos() * sr * sr).clamp(0.0, 1.0);
    (2.0 * h.sqrt().asin()).to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterpart {
    pub catalog: String,
    /// Index of the row in the catalog (after skipped rows were removed).
    pub row: usize,
    pub label: String,
    pub separation_arcsec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossmatchReport {
    pub catalog: String,
    pub radius_arcsec: f64,
    /// One entry per input candidate, in input order.
    pub matches: Vec<Option<Counterpart>>,
    pub n_matched: usize,
    /// Candidates with no counterpart within the radius.
    pub n_unmatched: usize,
    /// Candidates that carry no position.
    pub n_without_position: usize,
    pub skipped_catalog_rows: usize,
}

/// Nearest catalog row within `radius_arcsec` for every candidate. Ties in
/// separation go to the lower row index.
pub fn crossmatch(candidates: &[CandidateRecord], catalog: &Catalog, radius_arcsec: f64) -> Result<CrossmatchReport> {
    if radius_arcsec <= 0.0 || !radius_arcsec.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius_arcsec}")));
    }
    let radius_deg = radius_arcsec / 3600.0;
    // rows sorted by declination so each query scans a narrow band
    let mut by_dec: Vec<(f64, usize)> = catalog.rows.iter().enumerate().map(|(i, r)| (r.dec_deg, i)).collect();
    by_dec.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut report = CrossmatchReport {
        catalog: catalog.name.clone(),
        radius_arcsec,
        matches: Vec::with_capacity(candidates.len()),
        n_matched: 0,
        n_unmatched: 0,
        n_without_position: 0,
        skipped_catalog_rows: catalog.skipped,
    };
    for c in candidates {
        let (Some(ra), Some(dec)) = (c.ra_deg, c.dec_deg) else {
            report.n_without_position += 1;
            report.matches.push(None);
            continue;
        };
        let lo = by_dec.partition_point(|&(d, _)| d < dec - radius_deg);
        let mut best: Option<(f64, usize)> = None;
        for &(d, i) in &by_dec[lo..] {
            if d > dec + radius_deg {
                break;
            }
            let r = &catalog.rows[i];
            let sep = angular_separation_deg(ra, dec, r.ra_deg, r.dec_deg);
            if sep > radius_deg {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bi)) => sep < bs || (sep == bs && i < bi),
            };
            if better {
                best = Some((sep, i));
            }
        }
        match best {
            Some((sep, i)) => {
                report.n_matched += 1;
                report.matches.push(Some(Counterpart {
                    catalog: catalog.name.clone(),
                    row: i,
                    label: catalog.rows[i].label.clone(),
                    separation_arcsec: sep * 3600.0,
                }));
            }
            None => {
                report.n_unmatched += 1;
                report.matches.push(None);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(ra: f64, dec: f64) -> CandidateRecord {
        let mut c = CandidateRecord::empty("c");
        c.ra_deg = Some(ra);
        c.dec_deg = Some(dec);
        c
    }

    fn row(ra: f64, dec: f64, label: &str) -> CatalogRow {
        CatalogRow { ra_deg: ra, dec_deg: dec, label: label.into() }
    }

    #[test]
    fn identical_position_matches_at_zero() {
        let cat = Catalog::new("t", vec![row(80.0, -69.0, "qso")]);
        let r = crossmatch(&[at(80.0, -69.0)], &cat, 1.0).unwrap();
        let m = r.matches[0].as_ref().unwrap();
        assert_eq!(m.separation_arcsec, 0.0);
        assert_eq!(m.label, "qso");
    }

    #[test]
    fn twice_the_radius_is_unmatched() {
        let cat = Catalog::new("t", vec![row(80.0, -69.0 + 4.0 / 3600.0, "x")]);
        let r = crossmatch(&[at(80.0, -69.0), CandidateRecord::empty("nopos")], &cat, 2.0).unwrap();
        assert_eq!((r.n_matched, r.n_unmatched, r.n_without_position), (0, 1, 1));
    }

    #[test]
    fn nearest_then_lowest_index() {
        let d = 1.0 / 3600.0;
        let cat = Catalog::new(
            "t",
            vec![row(10.0, 2.0 * d, "far"), row(10.0, -d, "near_b"), row(10.0, d, "near_a")],
        );
        let m = crossmatch(&[at(10.0, 0.0)], &cat, 3.0).unwrap().matches[0].clone().unwrap();
        assert_eq!(m.row, 1);
        assert!((m.separation_arcsec - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wraps_in_right_ascension() {
        let sep = angular_separation_deg(359.9995, 0.0, 0.0005, 0.0);
        assert!((sep - 0.001).abs() < 1e-9);
    }

    #[test]
    fn malformed_rows_are_counted() {
        let csv = "ra_deg,dec_deg,label\n1.0,2.0,a\nx,2.0,b\n1.0,95.0,c\n3.0,4.0\n";
        let cat = Catalog::read_csv("c", csv.as_bytes()).unwrap();
        assert_eq!(cat.rows.len(), 2);
        assert_eq!(cat.rows[1].label, "");
        assert_eq!(cat.skipped, 2);
        assert!(Catalog::read_csv("c", "ra,dec\n".as_bytes()).is_err());
    }
}
