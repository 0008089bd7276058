//! Seeded synthetic data: Gaussian feature clusters and simple light curves.
//!
//! Used by the tests, the guide and the benchmarks. Every generator is a pure
//! function of its arguments and seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{FeatureRow, FeatureTable, FeatureVector, N_FEATURES};
use crate::lightcurve::{Band, LightCurve};

pub type Point = [f64; N_FEATURES];

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_point(centre: &Point, spread: f64, rng: &mut impl Rng) -> Point {
    let mut p = *centre;
    for v in &mut p {
        let z: f64 = StandardNormal.sample(rng);
        *v += spread * z;
    }
    p
}

/// `k` centres with every coordinate drawn from N(0, scale²).
pub fn random_centres(k: usize, scale: f64, seed: u64) -> Vec<Point> {
    let mut rng = rng_for(seed, 0);
    (0..k).map(|_| gaussian_point(&[0.0; N_FEATURES], scale, &mut rng)).collect()
}

/// A class: isotropic Gaussian around `centre`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub centre: Point,
    pub spread: f64,
}

impl ClassSpec {
    pub fn new(name: impl Into<String>, centre: Point, spread: f64) -> Self {
        ClassSpec {
            name: name.into(),
            centre,
            spread,
        }
    }
}

/// One object with auxiliary columns filled in plausibly (position inside a
/// 10 degree field, magnitude 15..20, SNR 20..200).
pub fn object_row(id: String, label: Option<String>, x: Point, rng: &mut impl Rng) -> FeatureRow {
    let mut row = FeatureRow::new(id, label, FeatureVector::from_values(x));
    row.ra_deg = Some(80.0 + 10.0 * rng.random::<f64>());
    row.dec_deg = Some(-70.0 + 10.0 * rng.random::<f64>());
    row.mean_mag = Some(15.0 + 5.0 * rng.random::<f64>());
    row.snr = Some(20.0 + 180.0 * rng.random::<f64>());
    row
}

/// `counts[i]` objects of `classes[i]`, ids `<class>-<n>`, labeled when
/// `labeled`. Rows are grouped by class.
pub fn sample_table(classes: &[ClassSpec], counts: &[usize], labeled: bool, seed: u64) -> FeatureTable {
    let mut rng = rng_for(seed, 1);
    let mut rows = Vec::new();
    for (c, &n) in classes.iter().zip(counts) {
        for i in 0..n {
            let x = gaussian_point(&c.centre, c.spread, &mut rng);
            let label = labeled.then(|| c.name.clone());
            rows.push(object_row(format!("{}-{i}", c.name), label, x, &mut rng));
        }
    }
    FeatureTable { rows }
}

/// `k` well-separated unit-spread classes named `class0..`, centres at
/// scale `separation`.
pub fn gaussian_classes(k: usize, separation: f64, seed: u64) -> Vec<ClassSpec> {
    random_centres(k, separation, seed)
        .into_iter()
        .enumerate()
        .map(|(i, c)| ClassSpec::new(format!("class{i}"), c, 1.0))
        .collect()
}

/// Labeled table of `per_class` objects from each of [`gaussian_classes`].
pub fn labeled_clusters(k: usize, per_class: usize, separation: f64, seed: u64) -> FeatureTable {
    let classes = gaussian_classes(k, separation, seed);
    sample_table(&classes, &vec![per_class; k], true, seed)
}

/// Endless-capable stream of unlabeled objects drawn round-robin from
/// `classes`; only the current row is materialized.
pub struct RowStream {
    classes: Vec<ClassSpec>,
    rng: ChaCha8Rng,
    next: usize,
    len: usize,
}

impl RowStream {
    pub fn new(classes: Vec<ClassSpec>, len: usize, seed: u64) -> Self {
        RowStream {
            classes,
            rng: rng_for(seed, 2),
            next: 0,
            len,
        }
    }
}

impl Iterator for RowStream {
    type Item = Result<FeatureRow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.len || self.classes.is_empty() {
            return None;
        }
        let c = &self.classes[self.next % self.classes.len()];
        let x = gaussian_point(&c.centre, c.spread, &mut self.rng);
        let row = object_row(format!("obj{:08}", self.next), None, x, &mut self.rng);
        self.next += 1;
        Some(Ok(row))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.len - self.next.min(self.len);
        (n, Some(n))
    }
}

/// A five-class set for leave-one-class-out checks: four trained classes
/// filling `total - held` objects and one held class of `held` objects,
/// named `held`. With `duplicate`, the held class shares the centre of
/// `class0` instead of drawing its own.
pub fn loco_set(total: usize, held: usize, duplicate: bool, seed: u64) -> FeatureTable {
    let mut classes = gaussian_classes(5, 3.0, seed);
    classes[4].name = "held".into();
    if duplicate {
        classes[4].centre = classes[0].centre;
    }
    let trained = total - held;
    let mut counts: Vec<usize> = (0..4).map(|i| trained / 4 + usize::from(i < trained % 4)).collect();
    counts.push(held);
    sample_table(&classes, &counts, true, seed)
}

/// Inputs for a review-and-retrain round.
#[derive(Debug, Clone)]
pub struct RetrainScenario {
    pub training: FeatureTable,
    pub classes: Vec<String>,
    /// Unlabeled objects to score: ordinary class members, objects between
    /// two classes, and the artifact cluster.
    pub survey: FeatureTable,
    pub artifact_ids: Vec<String>,
}

/// Four well separated classes of 100 training objects each, and a survey of
/// 1600 ordinary members, `n_between` objects about a fifth of the way from
/// one class towards another, and a tight cluster of `n_artifacts` objects
/// placed far from every class and roughly equidistant from the nearest two.
pub fn retrain_scenario(n_between: usize, n_artifacts: usize, seed: u64) -> RetrainScenario {
    let classes = gaussian_classes(4, 6.0, seed);
    let training = sample_table(&classes, &[100; 4], true, seed);
    let mut survey = sample_table(&classes, &[400; 4], false, seed ^ 0x5eed);
    for r in &mut survey.rows {
        r.object_id = format!("s-{}", r.object_id);
    }
    let mut rng = rng_for(seed, 3);
    let frac = Normal::new(0.2, 0.02).expect("valid normal");
    for i in 0..n_between {
        let a = rng.random_range(0..classes.len());
        let b = (a + rng.random_range(1..classes.len())) % classes.len();
        let t: f64 = frac.sample(&mut rng);
        let mut x = [0.0; N_FEATURES];
        for (j, v) in x.iter_mut().enumerate() {
            *v = (1.0 - t) * classes[a].centre[j] + t * classes[b].centre[j];
        }
        let x = gaussian_point(&x, 0.3, &mut rng);
        survey.rows.push(object_row(format!("between-{i}"), None, x, &mut rng));
    }
    // squared distance to the nearest centre, discounted when the second
    // nearest is much farther
    let remoteness = |p: &Point| {
        let mut d: Vec<f64> = classes
            .iter()
            .map(|c| c.centre.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect();
        d.sort_by(f64::total_cmp);
        d[0] * d[0] / d[1]
    };
    let mut rng = rng_for(seed, 9);
    let centre = (0..64)
        .map(|_| gaussian_point(&[0.0; N_FEATURES], 3.0, &mut rng))
        .max_by(|a, b| remoteness(a).total_cmp(&remoteness(b)))
        .expect("non-empty");
    let mut artifact_ids = Vec::new();
    for i in 0..n_artifacts {
        let id = format!("artifact-{i}");
        let x = gaussian_point(&centre, 0.1, &mut rng);
        survey.rows.push(object_row(id.clone(), None, x, &mut rng));
        artifact_ids.push(id);
    }
    RetrainScenario {
        training,
        classes: classes.iter().map(|c| c.name.clone()).collect(),
        survey,
        artifact_ids,
    }
}

#[allow(clippy::too_many_arguments)]
/// Irregularly sampled sinusoid: `n` epochs uniform over `baseline` days,
/// semi-amplitude `amplitude` mag, Gaussian noise of `amplitude / snr`.
pub fn sinusoid(
    object_id: &str,
    band: Band,
    period: f64,
    amplitude: f64,
    snr: f64,
    n: usize,
    baseline: f64,
    seed: u64,
) -> Result<LightCurve> {
    let sigma = amplitude / snr;
    let mut rng = rng_for(seed, 4);
    let mut t: Vec<f64> = (0..n).map(|_| baseline * rng.random::<f64>()).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    let phase = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    let mag: Vec<f64> = t
        .iter()
        .map(|&ti| {
            let z: f64 = StandardNormal.sample(&mut rng);
            17.0 + amplitude * (2.0 * std::f64::consts::PI * ti / period + phase).sin() + sigma * z
        })
        .collect();
    let err = vec![sigma; t.len()];
    LightCurve::new(object_id, band, t, mag, err)
}

/// Constant star with white noise `sigma`.
pub fn constant(object_id: &str, band: Band, sigma: f64, n: usize, baseline: f64, seed: u64) -> Result<LightCurve> {
    let mut rng = rng_for(seed, 5);
    let mut t: Vec<f64> = (0..n).map(|_| baseline * rng.random::<f64>()).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    let mag: Vec<f64> = t
        .iter()
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            17.0 + sigma * z
        })
        .collect();
    let err = vec![sigma; t.len()];
    LightCurve::new(object_id, band, t, mag, err)
}

/// Periodic sawtooth (slow rise, sharp drop), a shape distinct from a sinusoid.
pub fn sawtooth(object_id: &str, band: Band, period: f64, amplitude: f64, n: usize, baseline: f64, seed: u64) -> Result<LightCurve> {
    let sigma = amplitude / 20.0;
    let mut rng = rng_for(seed, 6);
    let mut t: Vec<f64> = (0..n).map(|_| baseline * rng.random::<f64>()).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    let mag: Vec<f64> = t
        .iter()
        .map(|&ti| {
            let z: f64 = StandardNormal.sample(&mut rng);
            17.0 + amplitude * (2.0 * (ti / period).fract() - 1.0) + sigma * z
        })
        .collect();
    let err = vec![sigma; t.len()];
    LightCurve::new(object_id, band, t, mag, err)
}

/// Paths of a light-curve fixture written by [`write_curve_fixture`].
#[derive(Debug, Clone)]
pub struct CurveFixture {
    pub dir: PathBuf,
    /// Labeled manifest: `sine`, `sawtooth` and `constant` classes.
    pub training_manifest: PathBuf,
    /// Unlabeled manifest of the same classes plus flaring curves.
    pub survey_manifest: PathBuf,
}

/// Write blue and red curves plus two manifests under `dir`: `per_class`
/// labeled curves per class, and `n_survey` unlabeled ones of which every
/// tenth is a flare.
pub fn write_curve_fixture(dir: &Path, per_class: usize, n_survey: usize, seed: u64) -> Result<CurveFixture> {
    let curves = dir.join("curves");
    fs::create_dir_all(&curves).map_err(|e| Error::io(&curves, e))?;
    let mut rng = rng_for(seed, 7);
    let write = |id: &str, kind: &str, rng: &mut ChaCha8Rng| -> Result<(String, String)> {
        let period = 0.3 + 9.7 * rng.random::<f64>();
        let s: u64 = rng.random();
        let mut files = Vec::new();
        for (band, offset) in [(Band::Blue, 0.0), (Band::Red, 0.4)] {
            let lc = match kind {
                "sine" => sinusoid(id, band, period, 0.3, 15.0, 120, 200.0, s)?,
                "sawtooth" => sawtooth(id, band, period, 0.3, 120, 200.0, s)?,
                "flare" => flare(id, band, 120, 200.0, s)?,
                _ => constant(id, band, 0.02, 120, 200.0, s)?,
            };
            let lc = LightCurve::new(
                id,
                band,
                lc.times().to_vec(),
                lc.magnitudes().iter().map(|m| m + offset).collect(),
                lc.errors().to_vec(),
            )?;
            let name = format!("curves/{id}.{band}.dat");
            let path = dir.join(&name);
            fs::write(&path, lc.to_text()).map_err(|e| Error::io(&path, e))?;
            files.push(name);
        }
        Ok((files[0].clone(), files[1].clone()))
    };
    let kinds = ["sine", "sawtooth", "constant"];
    let mut train = String::from("id,path,red_path,label,ra_deg,dec_deg\n");
    for kind in kinds {
        for i in 0..per_class {
            let id = format!("{kind}-{i}");
            let (b, r) = write(&id, kind, &mut rng)?;
            let (ra, dec) = (80.0 + 10.0 * rng.random::<f64>(), -70.0 + 10.0 * rng.random::<f64>());
            train.push_str(&format!("{id},{b},{r},{kind},{ra:.6},{dec:.6}\n"));
        }
    }
    let mut survey = String::from("id,path,red_path,ra_deg,dec_deg\n");
    for i in 0..n_survey {
        let kind = if i % 10 == 9 { "flare" } else { kinds[i % 3] };
        let id = format!("obj{i:05}");
        let (b, r) = write(&id, kind, &mut rng)?;
        let (ra, dec) = (80.0 + 10.0 * rng.random::<f64>(), -70.0 + 10.0 * rng.random::<f64>());
        survey.push_str(&format!("{id},{b},{r},{ra:.6},{dec:.6}\n"));
    }
    let training_manifest = dir.join("training.csv");
    let survey_manifest = dir.join("survey.csv");
    fs::write(&training_manifest, train).map_err(|e| Error::io(&training_manifest, e))?;
    fs::write(&survey_manifest, survey).map_err(|e| Error::io(&survey_manifest, e))?;
    Ok(CurveFixture {
        dir: dir.to_path_buf(),
        training_manifest,
        survey_manifest,
    })
}

/// Quiet curve with one fast-rise, slow-decay brightening.
pub fn flare(object_id: &str, band: Band, n: usize, baseline: f64, seed: u64) -> Result<LightCurve> {
    let base = constant(object_id, band, 0.02, n, baseline, seed)?;
    let t0 = baseline * (0.2 + 0.6 * rng_for(seed, 8).random::<f64>());
    let mag: Vec<f64> = base
        .times()
        .iter()
        .zip(base.magnitudes())
        .map(|(&t, &m)| if t < t0 { m } else { m - 1.5 * (-(t - t0) / 10.0).exp() })
        .collect();
    LightCurve::new(object_id, band, base.times().to_vec(), mag, base.errors().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let a = labeled_clusters(3, 10, 3.0, 7);
        let b = labeled_clusters(3, 10, 3.0, 7);
        assert_eq!(a.rows.len(), 30);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.features.values(), y.features.values());
        }
        assert_eq!(a.classes(), ["class0", "class1", "class2"]);
    }

    #[test]
    fn loco_counts() {
        let t = loco_set(3000, 50, false, 1);
        assert_eq!(t.rows.len(), 3000);
        assert_eq!(t.rows.iter().filter(|r| r.label.as_deref() == Some("held")).count(), 50);
    }

    #[test]
    fn curve_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_curve_fixture(dir.path(), 2, 10, 3).unwrap();
        let m = crate::lightcurve::load_manifest(&f.training_manifest).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m.classes, ["sine", "sawtooth", "constant"]);
        let s = crate::lightcurve::load_unlabeled_manifest(&f.survey_manifest).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.curves().all(|c| c.unwrap().red.is_some()));
    }

    #[test]
    fn stream_is_lazy_and_sized() {
        let s = RowStream::new(gaussian_classes(2, 3.0, 1), 5, 1);
        assert_eq!(s.size_hint(), (5, Some(5)));
        assert_eq!(s.count(), 5);
    }
}
