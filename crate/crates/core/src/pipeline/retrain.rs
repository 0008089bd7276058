//! Retraining with reviewer-defined artifact classes.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::model::{train_from_table, OutlierConfig, TrainOutput};
use crate::error::{Error, Result};
use crate::features::{FeatureRow, FeatureTable};

/// A named set of objects judged to share one artifact shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactGroup {
    pub name: String,
    pub members: Vec<String>,
}

impl ArtifactGroup {
    pub fn new(name: impl Into<String>, members: Vec<String>) -> Self {
        ArtifactGroup {
            name: name.into(),
            members,
        }
    }
}

/// Groups from a `name -> members` map, in name order.
pub fn groups_from_map(map: BTreeMap<String, Vec<String>>) -> Vec<ArtifactGroup> {
    map.into_iter().map(|(name, members)| ArtifactGroup { name, members }).collect()
}

/// Groups with fewer than `min_size` distinct members, with their sizes.
pub fn undersized_groups(groups: &[ArtifactGroup], min_size: usize) -> Vec<(String, usize)> {
    groups
        .iter()
        .map(|g| (g.name.clone(), g.members.iter().collect::<HashSet<_>>().len()))
        .filter(|(_, n)| *n < min_size)
        .collect()
}

/// The training table extended with one class per artifact group. Member
/// features are taken from `pool`. Returns the table and its class order
/// (base classes, then groups in the given order).
pub fn artifact_training_table(
    base: &FeatureTable,
    base_classes: &[String],
    pool: &[FeatureRow],
    groups: &[ArtifactGroup],
    min_group_size: usize,
) -> Result<(FeatureTable, Vec<String>)> {
    let undersized = undersized_groups(groups, min_group_size);
    if !undersized.is_empty() {
        let list: Vec<String> = undersized.iter().map(|(g, n)| format!("`{g}` has {n}")).collect();
        return Err(Error::InvalidArgument(format!(
            "artifact groups below the minimum of {min_group_size} members: {}",
            list.join(", ")
        )));
    }
    let mut classes = base_classes.to_vec();
    let in_training: HashSet<&str> = base.rows.iter().map(|r| r.object_id.as_str()).collect();
    let by_id: HashMap<&str, &FeatureRow> = pool.iter().map(|r| (r.object_id.as_str(), r)).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut table = base.clone();
    for g in groups {
        let name = g.name.trim();
        if name.is_empty() {
            return Err(Error::InvalidArgument("artifact group with empty name".into()));
        }
        if classes.iter().any(|c| c == name) {
            return Err(Error::InvalidArgument(format!("artifact group `{name}` clashes with an existing class")));
        }
        classes.push(name.to_string());
        let mut members: Vec<&str> = g.members.iter().map(String::as_str).collect();
        members.sort_unstable();
        members.dedup();
        for id in members {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("object `{id}` is in more than one group")));
            }
            if in_training.contains(id) {
                return Err(Error::InvalidArgument(format!("object `{id}` is already a training object")));
            }
            let row = by_id
                .get(id)
                .ok_or_else(|| Error::NotFound(format!("artifact member `{id}` has no feature row")))?;
            let mut row = (*row).clone();
            row.label = Some(name.to_string());
            table.rows.push(row);
        }
    }
    Ok((table, classes))
}

/// Retrain with the artifact groups added as new classes. With no groups this
/// is a plain retrain on `base`.
pub fn retrain_with_artifacts(
    base: &FeatureTable,
    base_classes: &[String],
    pool: &[FeatureRow],
    groups: &[ArtifactGroup],
    cfg: &OutlierConfig,
) -> Result<(TrainOutput, FeatureTable)> {
    let (table, classes) = artifact_training_table(base, base_classes, pool, groups, cfg.min_group_size)?;
    let out = train_from_table(&table, Some(&classes), cfg)?;
    Ok((out, table))
}
