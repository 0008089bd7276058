//! Random forest classifier with out-of-bag vote vectors.
//!
//! Each tree sees a bootstrap bag of the training set and votes for the
//! majority class of the leaf a sample reaches. A vote vector is the fraction
//! of trees voting for each class. Out-of-bag votes for training object `i`
//! only count trees whose bag excludes `i`.

mod bundle;
mod metrics;
mod tree;

pub use bundle::FOREST_FORMAT;
pub use metrics::{confusion_matrix, macro_f_score, MacroF};
pub use tree::{bootstrap_bag, grow_tree, Node, Tree};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    /// Number of trees.
    pub n_trees: usize,
    /// Features sampled per node; `None` means `floor(sqrt(n_features))`.
    pub n_split_features: Option<usize>,
    /// Nodes with at most this many samples become leaves.
    pub min_node_size: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            n_split_features: None,
            min_node_size: 1,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn split_features(&self, n_features: usize) -> usize {
        self.n_split_features
            .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be positive".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidArgument("min_node_size must be at least 1".into()));
        }
        let m = self.split_features(n_features);
        if m == 0 || m > n_features {
            return Err(Error::InvalidArgument(format!(
                "n_split_features {m} must be in 1..={n_features}"
            )));
        }
        Ok(())
    }

    /// Independent generator for tree `t`; identical regardless of how trees
    /// are scheduled across threads.
    pub fn tree_rng(&self, t: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        rng
    }
}

/// Per-class vote fractions for one object. Entries are in `[0, 1]` and sum
/// to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteVector(Vec<f64>);

impl VoteVector {
    /// Build from raw fractions, checking range and normalization.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument(format!("vote out of [0,1]: {v:?}")));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("votes sum to {s}, not 1")));
        }
        Ok(VoteVector(v))
    }

    pub fn from_counts(counts: &[u32]) -> Self {
        let total: u32 = counts.iter().sum();
        VoteVector(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest vote, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl AsRef<[f64]> for VoteVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A trained ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    config: ForestConfig,
    n_features: usize,
    class_names: Vec<String>,
    trees: Vec<Tree>,
}

/// Out-of-bag votes for the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct OobVotes {
    pub votes: Vec<VoteVector>,
    /// Number of trees whose bag excludes each object.
    pub coverage: Vec<u32>,
    /// Objects with zero coverage; their votes come from the full forest.
    pub uncovered: Vec<usize>,
    pub warnings: Vec<String>,
}

impl OobVotes {
    pub fn mean_coverage(&self) -> f64 {
        self.coverage.iter().map(|&c| c as f64).sum::<f64>() / self.coverage.len() as f64
    }
}

impl Forest {
    /// Train on rows `x` with labels `y` (indices into `class_names`).
    pub fn fit<X>(x: &[X], y: &[usize], class_names: &[String], cfg: &ForestConfig) -> Result<Self>
    where
        X: AsRef<[f64]> + Sync,
    {
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        if x.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} rows but {} labels",
                x.len(),
                y.len()
            )));
        }
        let k = class_names.len();
        if k < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if let Some(bad) = y.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        let n_features = x[0].as_ref().len();
        if x.iter().any(|r| r.as_ref().len() != n_features) {
            return Err(Error::InvalidArgument("ragged feature matrix".into()));
        }
        cfg.validate(n_features)?;

        let n = x.len();
        let trees: Vec<Tree> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = cfg.tree_rng(t);
                let bag = bootstrap_bag(n, &mut rng);
                grow_tree(x, y, k, &bag, cfg, &mut rng)
            })
            .collect();

        Ok(Forest {
            config: cfg.clone(),
            n_features,
            class_names: class_names.to_vec(),
            trees,
        })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::InvalidArgument(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(())
    }

    /// Per-class tree counts for `x` (no dimension check).
    #[inline]
    pub fn vote_counts_into(&self, x: &[f64], counts: &mut [u32]) {
        counts.iter_mut().for_each(|c| *c = 0);
        for t in &self.trees {
            counts[t.predict(x)] += 1;
        }
    }

    /// Fraction of trees voting for each class.
    pub fn predict_votes(&self, x: &[f64]) -> Result<VoteVector> {
        self.check_dim(x)?;
        let mut counts = vec![0u32; self.n_classes()];
        self.vote_counts_into(x, &mut counts);
        Ok(VoteVector::from_counts(&counts))
    }

    /// Out-of-bag votes for the training rows the forest was fitted on.
    pub fn oob_vote_matrix<X: AsRef<[f64]> + Sync>(&self, x: &[X]) -> Result<OobVotes> {
        self.oob_vote_matrix_observed(x, |_, _| {})
    }

    /// As [`Forest::oob_vote_matrix`], calling `observe(tree, object)` for
    /// every vote that is counted. Used to audit the in-bag exclusion.
    pub fn oob_vote_matrix_observed<X, F>(&self, x: &[X], observe: F) -> Result<OobVotes>
    where
        X: AsRef<[f64]> + Sync,
        F: Fn(usize, usize) + Sync,
    {
        if self.trees.iter().any(|t| t.in_bag.is_empty()) {
            return Err(Error::InvalidArgument(
                "forest has no bag membership (loaded from a bundle?)".into(),
            ));
        }
        if let Some(t) = self.trees.first() {
            if t.in_bag.len() != x.len().div_ceil(64) {
                return Err(Error::InvalidArgument(
                    "OOB votes need the exact training matrix".into(),
                ));
            }
        }
        let k = self.n_classes();
        let per_object: Vec<(Vec<u32>, u32)> = x
            .par_iter()
            .enumerate()
            .map(|(i, row)| {
                let row = row.as_ref();
                let mut counts = vec![0u32; k];
                let mut covered = 0u32;
                for (t, tree) in self.trees.iter().enumerate() {
                    if tree.contains(i) {
                        continue;
                    }
                    observe(t, i);
                    counts[tree.predict(row)] += 1;
                    covered += 1;
                }
                (counts, covered)
            })
            .collect();

        let mut votes = Vec::with_capacity(x.len());
        let mut coverage = Vec::with_capacity(x.len());
        let mut uncovered = Vec::new();
        for (i, (counts, covered)) in per_object.into_iter().enumerate() {
            coverage.push(covered);
            if covered == 0 {
                uncovered.push(i);
                votes.push(self.predict_votes(x[i].as_ref())?);
            } else {
                votes.push(VoteVector::from_counts(&counts));
            }
        }
        let mut warnings = Vec::new();
        if !uncovered.is_empty() {
            warnings.push(format!(
                "{} objects are in every bag; full-forest votes used instead of OOB",
                uncovered.len()
            ));
        }
        Ok(OobVotes {
            votes,
            coverage,
            uncovered,
            warnings,
        })
    }

    /// Number of internal nodes splitting on each feature.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, .. } = n {
                    c[*feature as usize] += 1;
                }
            }
        }
        c
    }
}
