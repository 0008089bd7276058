//! Leave-one-class-out validation: train without one class and check that
//! its members rise to the top of the ranking.

use serde::{Deserialize, Serialize};

use super::model::{train_from_table, OutlierConfig};
use super::score_from_log_joint;
use crate::error::{Error, Result};
use crate::features::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocoEntry {
    pub object_id: String,
    pub class: String,
    pub held: bool,
    pub score: f64,
    pub log_joint: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocoReport {
    pub held_class: String,
    pub trained_classes: Vec<String>,
    pub n_objects: usize,
    pub n_held: usize,
    /// Ranks of the held-out objects, ascending.
    pub held_ranks: Vec<usize>,
    /// OOB macro F-score of the forest trained without the held class.
    pub macro_f: f64,
    /// All objects in rank order.
    pub ranking: Vec<LocoEntry>,
}

impl LocoReport {
    /// Fraction of held-out objects ranked within the top `window`.
    pub fn fraction_within(&self, window: usize) -> f64 {
        if self.n_held == 0 {
            return 0.0;
        }
        self.held_ranks.iter().filter(|&&r| r <= window).count() as f64 / self.n_held as f64
    }

    /// `(r, held objects in top r, ideal count min(r, n_held))` for every
    /// rank `r`.
    pub fn recovery_curve(&self) -> Vec<(usize, usize, usize)> {
        let mut found = 0;
        self.ranking
            .iter()
            .map(|e| {
                if e.held {
                    found += 1;
                }
                (e.rank, found, e.rank.min(self.n_held))
            })
            .collect()
    }

    /// Outlier scores of one class's objects.
    pub fn class_scores(&self, class: &str) -> Vec<f64> {
        self.ranking
            .iter()
            .filter(|e| e.class == class)
            .map(|e| e.score)
            .collect()
    }
}

/// Train on every class but `held_class`, then rank all objects. Trained
/// objects are scored with their out-of-bag votes, held-out objects with the
/// full forest.
pub fn leave_one_class_out(table: &FeatureTable, held_class: &str, cfg: &OutlierConfig) -> Result<LocoReport> {
    let all_classes = table.classes();
    if !all_classes.iter().any(|c| c == held_class) {
        return Err(Error::InvalidArgument(format!(
            "held class `{held_class}` not in {all_classes:?}"
        )));
    }
    let (held, kept): (Vec<_>, Vec<_>) = table
        .rows
        .iter()
        .cloned()
        .partition(|r| r.label.as_deref() == Some(held_class));
    if held.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "held class `{held_class}` has {} member(s); need at least 2",
            held.len()
        )));
    }
    let trained_classes: Vec<String> = all_classes.into_iter().filter(|c| c != held_class).collect();
    let train_table = FeatureTable { rows: kept };
    let out = train_from_table(&train_table, Some(&trained_classes), cfg)?;

    let mut ranking = Vec::with_capacity(table.len());
    for (row, v) in train_table.rows.iter().zip(&out.oob.votes) {
        let lj = out.model.log_joint(v.as_slice())?;
        ranking.push(entry(&row.object_id, row.label.as_deref(), false, lj));
    }
    for row in &held {
        let v = out.model.votes(&row.features);
        let lj = out.model.log_joint(v.as_slice())?;
        ranking.push(entry(&row.object_id, row.label.as_deref(), true, lj));
    }
    ranking.sort_by(|a, b| {
        a.log_joint
            .total_cmp(&b.log_joint)
            .then_with(|| a.object_id.cmp(&b.object_id))
    });
    for (i, e) in ranking.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    let held_ranks: Vec<usize> = ranking.iter().filter(|e| e.held).map(|e| e.rank).collect();
    Ok(LocoReport {
        held_class: held_class.to_string(),
        trained_classes,
        n_objects: ranking.len(),
        n_held: held.len(),
        held_ranks,
        macro_f: out.macro_f.score,
        ranking,
    })
}

fn entry(id: &str, class: Option<&str>, held: bool, lj: f64) -> LocoEntry {
    LocoEntry {
        object_id: id.to_string(),
        class: class.unwrap_or_default().to_string(),
        held,
        score: score_from_log_joint(lj),
        log_joint: lj,
        rank: 0,
    }
}
