//! Conditional probability tables with Dirichlet-prior point estimates.

use serde::{Deserialize, Serialize};

use super::{DiscreteData, NetworkStructure};
use crate::error::{Error, Result};

/// Upper bound on stored cells per table.
const MAX_CELLS: u64 = 50_000_000;

/// Which point estimate of a multinomial cell to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapVariant {
    /// Maximizer of `prod theta_b^(N_b + alpha)`: `(N_b + a) / (N + r a)`.
    #[default]
    PosteriorAsPrinted,
    /// Mode of the Dirichlet posterior: `(N_b + a - 1) / (N + r (a - 1))`.
    /// Requires `alpha > 1` so every cell stays positive.
    DirichletMode,
}

impl MapVariant {
    pub fn validate(self, alpha: f64) -> Result<()> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if self == MapVariant::DirichletMode && alpha <= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "dirichlet_mode needs alpha > 1, got {alpha}"
            )));
        }
        Ok(())
    }

    /// Estimate one row from its counts.
    pub fn estimate(self, counts: &[u64], alpha: f64) -> Vec<f64> {
        let r = counts.len() as f64;
        let total: u64 = counts.iter().sum();
        let a = match self {
            MapVariant::PosteriorAsPrinted => alpha,
            MapVariant::DirichletMode => alpha - 1.0,
        };
        let denom = total as f64 + r * a;
        counts.iter().map(|&c| (c as f64 + a) / denom).collect()
    }
}

/// Number of free parameters of a node with `n_parents` parents:
/// `(n_bins - 1) * n_bins^n_parents`.
pub fn parameter_count(n_bins: u64, n_parents: u32) -> Result<u64> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("n_bins must be >= 2, got {n_bins}")));
    }
    n_bins
        .checked_pow(n_parents)
        .and_then(|rows| rows.checked_mul(n_bins - 1))
        .ok_or_else(|| Error::InvalidArgument("parameter count overflows u64".into()))
}

/// `P(node | parents)`, stored row-major: one row of `n_bins` cells per
/// parent configuration. The configuration index treats the first parent as
/// the most significant digit in base `n_bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdTable {
    pub node: usize,
    pub parents: Vec<usize>,
    pub n_bins: usize,
    pub alpha: f64,
    pub probs: Vec<f64>,
}

impl CpdTable {
    pub fn n_rows(&self) -> usize {
        self.probs.len() / self.n_bins
    }

    pub fn row(&self, config: usize) -> &[f64] {
        &self.probs[config * self.n_bins..(config + 1) * self.n_bins]
    }

    /// Configuration index of the parents' bins in an assignment of all
    /// nodes.
    pub fn config_of(&self, assignment: &[u16]) -> usize {
        self.parents
            .iter()
            .fold(0usize, |acc, &p| acc * self.n_bins + assignment[p] as usize)
    }

    pub fn prob(&self, assignment: &[u16]) -> f64 {
        self.row(self.config_of(assignment))[assignment[self.node] as usize]
    }

    pub fn free_parameters(&self) -> u64 {
        ((self.n_bins - 1) * self.n_rows()) as u64
    }

    /// Check the shape and that every row is a strictly positive
    /// distribution.
    pub fn validate(&self) -> Result<()> {
        let expected = table_cells(self.n_bins, self.parents.len())?;
        if self.probs.len() as u64 != expected {
            return Err(Error::MalformedInput(format!(
                "cpd for node {} has {} cells, expected {expected}",
                self.node,
                self.probs.len()
            )));
        }
        for row in self.probs.chunks_exact(self.n_bins) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| p.is_nan() || p <= 0.0) {
                return Err(Error::MalformedInput(format!(
                    "cpd for node {} has a row that is not a positive distribution",
                    self.node
                )));
            }
        }
        Ok(())
    }
}

fn table_cells(n_bins: usize, n_parents: usize) -> Result<u64> {
    let cells = (n_bins as u64)
        .checked_pow(n_parents as u32 + 1)
        .filter(|&c| c <= MAX_CELLS);
    cells.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "table with {n_parents} parents over {n_bins} bins is too large"
        ))
    })
}

/// Fit one table per node. Unseen parent configurations get the uniform
/// prior-only row.
pub fn fit_cpds(
    structure: &NetworkStructure,
    data: &DiscreteData,
    alpha: f64,
    variant: MapVariant,
) -> Result<Vec<CpdTable>> {
    variant.validate(alpha)?;
    if structure.n_nodes() != data.n_vars() {
        return Err(Error::InvalidArgument(format!(
            "structure has {} nodes but data has {} columns",
            structure.n_nodes(),
            data.n_vars()
        )));
    }
    structure.validate()?;
    let r = data.n_bins();
    (0..structure.n_nodes())
        .map(|node| {
            let parents = structure.parents[node].clone();
            let cells = table_cells(r, parents.len())? as usize;
            let mut counts = vec![0u64; cells];
            for row in data.rows() {
                let cfg = parents.iter().fold(0usize, |acc, &p| acc * r + row[p] as usize);
                counts[cfg * r + row[node] as usize] += 1;
            }
            let mut probs = Vec::with_capacity(cells);
            for c in counts.chunks_exact(r) {
                probs.extend(variant.estimate(c, alpha));
            }
            Ok(CpdTable {
                node,
                parents,
                n_bins: r,
                alpha,
                probs,
            })
        })
        .collect()
}
