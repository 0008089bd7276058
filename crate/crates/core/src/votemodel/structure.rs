//! Order-constrained greedy structure search (K2).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::DiscreteData;
use crate::error::{Error, Result};

/// How the node order for the search is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "order")]
pub enum OrderStrategy {
    /// Class order of the training set.
    #[default]
    ClassOrder,
    /// Highest marginal entropy first; ties by index.
    DescendingEntropy,
    /// An explicit permutation of the node indices.
    Explicit(Vec<usize>),
}

impl OrderStrategy {
    pub fn resolve(&self, data: &DiscreteData) -> Result<Vec<usize>> {
        let k = data.n_vars();
        match self {
            OrderStrategy::ClassOrder => Ok((0..k).collect()),
            OrderStrategy::DescendingEntropy => {
                let h: Vec<f64> = (0..k).map(|j| marginal_entropy(data, j)).collect();
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
                Ok(order)
            }
            OrderStrategy::Explicit(o) => {
                check_permutation(o, k)?;
                Ok(o.clone())
            }
        }
    }
}

fn check_permutation(order: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if order.len() != k {
        return Err(Error::InvalidArgument(format!(
            "order has {} entries, expected {k}",
            order.len()
        )));
    }
    for &o in order {
        if o >= k || seen[o] {
            return Err(Error::InvalidArgument(format!("order {order:?} is not a permutation")));
        }
        seen[o] = true;
    }
    Ok(())
}

fn marginal_entropy(data: &DiscreteData, var: usize) -> f64 {
    let mut counts = vec![0usize; data.n_bins()];
    for r in data.rows() {
        counts[r[var] as usize] += 1;
    }
    let n = data.n_rows() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// DAG over the class vote variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkStructure {
    /// Topological order used for the search.
    pub order: Vec<usize>,
    /// `parents[j]`: parents of node `j`, in the order they were added.
    pub parents: Vec<Vec<usize>>,
    pub max_parents: usize,
}

impl NetworkStructure {
    pub fn empty(order: Vec<usize>, max_parents: usize) -> Self {
        let k = order.len();
        NetworkStructure {
            order,
            parents: vec![Vec::new(); k],
            max_parents,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.parents.len()
    }

    pub fn n_edges(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// Check acyclicity (parents precede children in `order`) and the
    /// parent limit.
    pub fn validate(&self) -> Result<()> {
        let k = self.parents.len();
        check_permutation(&self.order, k)?;
        let mut pos = vec![0; k];
        for (i, &o) in self.order.iter().enumerate() {
            pos[o] = i;
        }
        for (child, ps) in self.parents.iter().enumerate() {
            if ps.len() > self.max_parents {
                return Err(Error::InvalidArgument(format!(
                    "node {child} has {} parents (max {})",
                    ps.len(),
                    self.max_parents
                )));
            }
            for &p in ps {
                if p >= k || pos[p] >= pos[child] {
                    return Err(Error::InvalidArgument(format!(
                        "edge {p} -> {child} violates the topological order"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Log Dirichlet-multinomial marginal likelihood of `child` given `parents`,
/// with a symmetric pseudo-count `alpha` per outcome:
///
/// sum over observed parent configurations `j` of
/// `lnG(r a) - lnG(N_j + r a) + sum_b [lnG(N_jb + a) - lnG(a)]`,
/// where `r` is the number of bins. Unobserved configurations contribute zero.
pub fn k2_local_score(data: &DiscreteData, child: usize, parents: &[usize], alpha: f64) -> Result<f64> {
    if data.n_rows() == 0 {
        return Err(Error::InvalidArgument("cannot score empty data".into()));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if child >= data.n_vars() || parents.iter().any(|&p| p >= data.n_vars() || p == child) {
        return Err(Error::InvalidArgument("bad child/parent index".into()));
    }
    let r = data.n_bins() as u64;
    let mut keys: Vec<(u64, u16)> = data
        .rows()
        .map(|row| {
            let cfg = parents
                .iter()
                .fold(0u64, |acc, &p| acc * r + row[p] as u64);
            (cfg, row[child])
        })
        .collect();
    keys.sort_unstable();

    let ra = r as f64 * alpha;
    let lg_ra = ln_gamma(ra);
    let lg_a = ln_gamma(alpha);
    let mut score = 0.0;
    let mut i = 0;
    while i < keys.len() {
        let cfg = keys[i].0;
        let mut n_row = 0usize;
        let mut inner = 0.0;
        while i < keys.len() && keys[i].0 == cfg {
            let b = keys[i].1;
            let mut n_b = 0usize;
            while i < keys.len() && keys[i] == (cfg, b) {
                n_b += 1;
                i += 1;
            }
            inner += ln_gamma(n_b as f64 + alpha) - lg_a;
            n_row += n_b;
        }
        score += lg_ra - ln_gamma(n_row as f64 + ra) + inner;
    }
    Ok(score)
}

/// Sum of local scores over all families.
pub fn network_score(data: &DiscreteData, s: &NetworkStructure, alpha: f64) -> Result<f64> {
    (0..s.n_nodes())
        .map(|j| k2_local_score(data, j, &s.parents[j], alpha))
        .sum()
}

/// An edge accepted during the search with the local score before and after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptedEdge {
    pub parent: usize,
    pub child: usize,
    pub score_before: f64,
    pub score_after: f64,
}

/// Result of [`learn_structure`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructureSearch {
    pub structure: NetworkStructure,
    pub accepted: Vec<AcceptedEdge>,
    /// Final local score of each node's family.
    pub family_scores: Vec<f64>,
}

impl StructureSearch {
    pub fn total_score(&self) -> f64 {
        self.family_scores.iter().sum()
    }
}

/// Greedy K2 search. For each node in `order`, repeatedly add the single
/// predecessor that most increases the local score; stop when no candidate
/// strictly improves it or `max_parents` is reached. Ties between candidates
/// go to the earliest node in the order.
pub fn learn_structure(
    data: &DiscreteData,
    order: &[usize],
    max_parents: usize,
    alpha: f64,
) -> Result<StructureSearch> {
    check_permutation(order, data.n_vars())?;
    let mut structure = NetworkStructure::empty(order.to_vec(), max_parents);
    let mut accepted = Vec::new();
    let mut family_scores = vec![0.0; data.n_vars()];

    for (pos, &child) in order.iter().enumerate() {
        let mut parents: Vec<usize> = Vec::new();
        let mut current = k2_local_score(data, child, &parents, alpha)?;
        while parents.len() < max_parents {
            let candidates: Vec<usize> = order[..pos]
                .iter()
                .copied()
                .filter(|c| !parents.contains(c))
                .collect();
            if candidates.is_empty() {
                break;
            }
            let scores: Vec<f64> = candidates
                .par_iter()
                .map(|&c| {
                    let mut trial = parents.clone();
                    trial.push(c);
                    k2_local_score(data, child, &trial, alpha)
                })
                .collect::<Result<_>>()?;
            let (mut best_i, mut best) = (0, scores[0]);
            for (i, &s) in scores.iter().enumerate().skip(1) {
                if s > best {
                    best = s;
                    best_i = i;
                }
            }
            if best > current {
                accepted.push(AcceptedEdge {
                    parent: candidates[best_i],
                    child,
                    score_before: current,
                    score_after: best,
                });
                parents.push(candidates[best_i]);
                current = best;
            } else {
                break;
            }
        }
        family_scores[child] = current;
        structure.parents[child] = parents;
    }
    Ok(StructureSearch {
        structure,
        accepted,
        family_scores,
    })
}
