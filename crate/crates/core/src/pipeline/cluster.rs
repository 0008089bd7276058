//! Grouping of candidates by k-means on standardized features.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::candidates::CandidateRecord;
use crate::error::{Error, Result};
use crate::features::{impute, medians, Feature};

const MAX_ITER: usize = 300;

/// Number of clusters: fixed, or chosen by mean silhouette over a range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterCount {
    Fixed(usize),
    Auto { min: usize, max: usize },
}

impl Default for ClusterCount {
    fn default() -> Self {
        ClusterCount::Auto { min: 2, max: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub count: ClusterCount,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            count: ClusterCount::default(),
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// Centroids in standardized units.
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Mean silhouette; `None` when `k == 1`.
    pub silhouette: Option<f64>,
}

/// Z-score each column; constant columns are centred only.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut out = rows.to_vec();
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in &mut out {
            r[j] -= mean;
            if sd > 0.0 {
                r[j] /= sd;
            }
        }
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![x[rng.random_range(0..x.len())].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = x.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if t < w {
                    pick = i;
                    break;
                }
                t -= w;
            }
            pick
        } else {
            rng.random_range(0..x.len())
        };
        centroids.push(x[idx].clone());
        for (i, p) in x.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(x: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let k = centroids.len();
    let d = x[0].len();
    let mut assign = vec![usize::MAX; x.len()];
    for _ in 0..MAX_ITER {
        let next: Vec<usize> = x.par_iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assign;
        assign = next;
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in x.iter().zip(&assign) {
            counts[c] += 1;
            for j in 0..d {
                sums[c][j] += p[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = x.iter().zip(&assign).map(|(p, &c)| dist2(p, &centroids[c])).sum();
    (assign, centroids, inertia)
}

/// Best of `restarts` seeded k-means++ runs (lowest inertia, earliest on ties).
pub fn kmeans(x: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > x.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {} points", x.len())));
    }
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let init = kmeans_pp_init(x, k, &mut rng);
        let run = lloyd(x, init);
        if best.as_ref().map_or(true, |b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (assignments, centroids, inertia) = best.expect("at least one restart");
    let silhouette = (k > 1).then(|| silhouette(x, &assignments, k));
    Ok(Clustering {
        k,
        assignments,
        centroids,
        inertia,
        silhouette,
    })
}

/// Mean silhouette coefficient. Points in singleton clusters count as 0.
pub fn silhouette(x: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let mut sizes = vec![0usize; k];
    for &c in assign {
        sizes[c] += 1;
    }
    let per_point: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let own = assign[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sum = vec![0.0; k];
            for (j, p) in x.iter().enumerate() {
                if j != i {
                    sum[assign[j]] += dist2(&x[i], p).sqrt();
                }
            }
            let a = sum[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sum[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    per_point.iter().sum::<f64>() / x.len() as f64
}

/// Standardized, median-imputed feature rows of the candidates.
pub fn candidate_features(candidates: &[CandidateRecord]) -> Vec<Vec<f64>> {
    let (med, _) = medians(candidates.iter().map(|c| &c.features));
    let rows: Vec<Vec<f64>> = candidates.iter().map(|c| impute(&c.features, &med).to_vec()).collect();
    standardize(&rows)
}

/// Cluster candidates on their standardized features. With
/// [`ClusterCount::Auto`], every k in range (capped at n - 1) is tried and
/// the highest mean silhouette wins, smaller k on ties.
pub fn cluster_candidates(candidates: &[CandidateRecord], cfg: &ClusterConfig) -> Result<Clustering> {
    let x = candidate_features(candidates);
    match cfg.count {
        ClusterCount::Fixed(k) => kmeans(&x, k, cfg.restarts, cfg.seed),
        ClusterCount::Auto { min, max } => {
            let min = min.max(2);
            let max = max.min(x.len().saturating_sub(1));
            if min > max {
                return Err(Error::InvalidArgument(format!(
                    "too few candidates ({}) to choose k in {min}..={max}",
                    x.len()
                )));
            }
            let mut best: Option<Clustering> = None;
            for k in min..=max {
                let c = kmeans(&x, k, cfg.restarts, cfg.seed)?;
                let better = match &best {
                    None => true,
                    Some(b) => c.silhouette.unwrap_or(f64::NEG_INFINITY) > b.silhouette.unwrap_or(f64::NEG_INFINITY),
                };
                if better {
                    best = Some(c);
                }
            }
            Ok(best.expect("non-empty k range"))
        }
    }
}

/// Colour-magnitude table: `id,rank,score,color,mean_mag,cluster`.
pub fn write_cmd_export<W: Write>(w: W, candidates: &[CandidateRecord], clustering: &Clustering) -> Result<()> {
    if clustering.assignments.len() != candidates.len() {
        return Err(Error::InvalidArgument("clustering does not match candidates".into()));
    }
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["id", "rank", "score", "color", "mean_mag", "cluster"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for (c, &g) in candidates.iter().zip(&clustering.assignments) {
        wtr.write_record([
            c.object_id.clone(),
            c.rank.to_string(),
            c.score.to_string(),
            opt(c.features.get(Feature::Color)),
            opt(c.mean_mag),
            g.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<cmd export>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -5.0 } else { 5.0 };
            x.push((0..3).map(|_| centre + rng.random::<f64>() - 0.5).collect());
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separates_two_blobs() {
        let (x, y) = blobs(1, 60);
        let c = kmeans(&x, 2, 5, 0).unwrap();
        let same = c.assignments[0];
        for (a, t) in c.assignments.iter().zip(&y) {
            assert_eq!(*a == same, *t == 0);
        }
        assert!(c.silhouette.unwrap() > 0.8);
    }

    #[test]
    fn k_one_and_bounds() {
        let (x, _) = blobs(2, 10);
        let c = kmeans(&x, 1, 3, 0).unwrap();
        assert!(c.assignments.iter().all(|&a| a == 0));
        assert!(c.silhouette.is_none());
        assert!(kmeans(&x, 11, 3, 0).is_err());
        assert!(kmeans(&x, 0, 3, 0).is_err());
    }

    #[test]
    fn standardized_columns() {
        let s = standardize(&[vec![1.0, 3.0], vec![3.0, 3.0]]);
        assert_eq!(s, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }
}
