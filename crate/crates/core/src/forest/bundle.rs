//! `forest.model`: a versioned JSON bundle with flattened node arrays.
//!
//! Each tree is stored as parallel arrays indexed by node id:
//! `feature` (-1 for leaves), `threshold`, `left`, `right` (0 for leaves) and
//! `class` (majority class for leaves, 0 for splits). Leaf class counts are
//! concatenated in node order into `leaf_counts`, `k` values per leaf.
//! Bootstrap bags are not persisted.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Forest, ForestConfig, Node, Tree};
use crate::error::{Error, Result};

pub const FOREST_FORMAT: &str = "rfbn-forest/1";

#[derive(Serialize, Deserialize)]
struct Bundle {
    format: String,
    config: ForestConfig,
    n_features: usize,
    class_names: Vec<String>,
    trees: Vec<TreeArrays>,
}

#[derive(Serialize, Deserialize)]
struct TreeArrays {
    feature: Vec<i32>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    class: Vec<u32>,
    leaf_counts: Vec<u32>,
}

impl TreeArrays {
    fn from_tree(t: &Tree) -> Self {
        let n = t.nodes.len();
        let mut a = TreeArrays {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            class: Vec::with_capacity(n),
            leaf_counts: Vec::new(),
        };
        for node in &t.nodes {
            match node {
                Node::Split { feature, threshold, left, right } => {
                    a.feature.push(*feature as i32);
                    a.threshold.push(*threshold);
                    a.left.push(*left);
                    a.right.push(*right);
                    a.class.push(0);
                }
                Node::Leaf { class, counts } => {
                    a.feature.push(-1);
                    a.threshold.push(0.0);
                    a.left.push(0);
                    a.right.push(0);
                    a.class.push(*class);
                    a.leaf_counts.extend_from_slice(counts);
                }
            }
        }
        a
    }

    fn into_tree(self, k: usize, n_features: usize) -> Result<Tree> {
        let n = self.feature.len();
        if [self.threshold.len(), self.left.len(), self.right.len(), self.class.len()]
            .iter()
            .any(|&l| l != n)
            || n == 0
        {
            return Err(Error::MalformedInput("forest bundle: ragged node arrays".into()));
        }
        let mut counts = self.leaf_counts.chunks_exact(k);
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            if self.feature[i] < 0 {
                let c = counts.next().ok_or_else(|| {
                    Error::MalformedInput("forest bundle: missing leaf counts".into())
                })?;
                if self.class[i] as usize >= k {
                    return Err(Error::MalformedInput("forest bundle: leaf class out of range".into()));
                }
                nodes.push(Node::Leaf { class: self.class[i], counts: c.to_vec() });
            } else {
                let (l, r) = (self.left[i] as usize, self.right[i] as usize);
                if self.feature[i] as usize >= n_features || l <= i || r <= i || l >= n || r >= n {
                    return Err(Error::MalformedInput(format!(
                        "forest bundle: bad split node {i}"
                    )));
                }
                nodes.push(Node::Split {
                    feature: self.feature[i] as u32,
                    threshold: self.threshold[i],
                    left: self.left[i],
                    right: self.right[i],
                });
            }
        }
        Ok(Tree::from_nodes(nodes))
    }
}

impl Forest {
    pub fn write_bundle<W: Write>(&self, w: W) -> Result<()> {
        let b = Bundle {
            format: FOREST_FORMAT.to_string(),
            config: self.config.clone(),
            n_features: self.n_features,
            class_names: self.class_names.clone(),
            trees: self.trees.iter().map(TreeArrays::from_tree).collect(),
        };
        serde_json::to_writer(w, &b)?;
        Ok(())
    }

    pub fn read_bundle<R: Read>(r: R) -> Result<Self> {
        let b: Bundle = serde_json::from_reader(r)?;
        if b.format != FOREST_FORMAT {
            return Err(Error::MalformedInput(format!(
                "unsupported forest format `{}` (expected `{FOREST_FORMAT}`)",
                b.format
            )));
        }
        let k = b.class_names.len();
        let trees = b
            .trees
            .into_iter()
            .map(|t| t.into_tree(k, b.n_features))
            .collect::<Result<Vec<_>>>()?;
        Ok(Forest {
            config: b.config,
            n_features: b.n_features,
            class_names: b.class_names,
            trees,
        })
    }
}
