use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RANGE_TOLERANCE: f64 = 1e-9;

/// Maps values in `[0, 1]` to bins `edges[b] <= v < edges[b + 1]`; the top bin
/// is closed on the right so `1.0` lands in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    edges: Vec<f64>,
}

/// How bin edges are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    #[default]
    EqualWidth,
    /// Edges at pooled quantiles of the training votes. Coincident quantiles
    /// are merged, so the result may have fewer bins than requested.
    Quantile,
}

impl Discretizer {
    pub fn equal_width(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidArgument("n_bins must be positive".into()));
        }
        let edges = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
        Ok(Discretizer { edges })
    }

    pub fn quantile(values: &[f64], n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidArgument("n_bins must be positive".into()));
        }
        let mut v: Vec<f64> = values.iter().map(|x| x.clamp(0.0, 1.0)).collect();
        if v.is_empty() {
            return Self::equal_width(n_bins);
        }
        v.sort_by(f64::total_cmp);
        let mut edges = vec![0.0];
        for i in 1..n_bins {
            let q = crate::features::percentile(&v, i as f64 / n_bins as f64);
            if q > *edges.last().unwrap() && q < 1.0 {
                edges.push(q);
            }
        }
        edges.push(1.0);
        Ok(Discretizer { edges })
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        let ok = edges.len() >= 2
            && edges[0] == 0.0
            && edges[edges.len() - 1] == 1.0
            && edges.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::MalformedInput(format!("invalid bin edges {edges:?}")));
        }
        Ok(Discretizer { edges })
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Bin index of `v`. Values outside `[0, 1]` by more than 1e-9 are
    /// rejected; smaller excursions are clamped.
    pub fn bin(&self, v: f64) -> Result<usize> {
        if !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&v) {
            return Err(Error::InvalidArgument(format!("value {v} outside [0, 1]")));
        }
        let v = v.clamp(0.0, 1.0);
        let interior = &self.edges[1..self.edges.len() - 1];
        Ok(interior.partition_point(|&e| e <= v))
    }

    /// Bin every component of a vote vector.
    pub fn discretize(&self, v: &[f64]) -> Result<Vec<u16>> {
        v.iter().map(|&x| self.bin(x).map(|b| b as u16)).collect()
    }
}

/// Row-major matrix of bin indices: one row per object, one column per class
/// vote variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteData {
    n_vars: usize,
    n_bins: usize,
    values: Vec<u16>,
}

impl DiscreteData {
    pub fn new(n_vars: usize, n_bins: usize, values: Vec<u16>) -> Result<Self> {
        if n_vars == 0 || values.len() % n_vars != 0 {
            return Err(Error::InvalidArgument("data length is not a multiple of n_vars".into()));
        }
        if n_bins > u16::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!("too many bins ({n_bins})")));
        }
        if let Some(v) = values.iter().find(|&&v| v as usize >= n_bins) {
            return Err(Error::InvalidArgument(format!("bin {v} >= n_bins {n_bins}")));
        }
        Ok(DiscreteData { n_vars, n_bins, values })
    }

    /// Discretize a set of vote vectors.
    pub fn from_votes<V: AsRef<[f64]>>(votes: &[V], d: &Discretizer) -> Result<Self> {
        let k = votes.first().map(|v| v.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(votes.len() * k);
        for v in votes {
            if v.as_ref().len() != k {
                return Err(Error::InvalidArgument("vote vectors differ in length".into()));
            }
            values.extend(d.discretize(v.as_ref())?);
        }
        if k == 0 {
            return Err(Error::InvalidArgument("no vote vectors".into()));
        }
        Self::new(k, d.n_bins(), values)
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_vars
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, i: usize) -> &[u16] {
        &self.values[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn get(&self, row: usize, var: usize) -> u16 {
        self.values[row * self.n_vars + var]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.values.chunks_exact(self.n_vars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundaries_of_twenty_bins() {
        let d = Discretizer::equal_width(20).unwrap();
        assert_eq!(d.bin(0.0).unwrap(), 0);
        assert_eq!(d.bin(1.0).unwrap(), 19);
        assert_eq!(d.bin(0.05).unwrap(), 1);
        assert_eq!(d.bin(0.0499999).unwrap(), 0);
        assert_eq!(d.bin(0.95).unwrap(), 19);
        assert_eq!(d.bin(0.5).unwrap(), 10);
    }

    #[test]
    fn tolerance_and_rejection() {
        let d = Discretizer::equal_width(20).unwrap();
        assert_eq!(d.bin(-5e-10).unwrap(), 0);
        assert_eq!(d.bin(1.0 + 5e-10).unwrap(), 19);
        assert!(matches!(d.bin(-1e-6), Err(Error::InvalidArgument(_))));
        assert!(matches!(d.bin(1.01), Err(Error::InvalidArgument(_))));
        assert!(matches!(d.bin(f64::NAN), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn quantile_edges_are_valid() {
        let vals: Vec<f64> = (0..1000).map(|i| if i % 3 == 0 { 0.0 } else { i as f64 / 1000.0 }).collect();
        let d = Discretizer::quantile(&vals, 10).unwrap();
        assert!(Discretizer::from_edges(d.edges().to_vec()).is_ok());
        assert!(d.n_bins() <= 10);
    }

    #[test]
    fn from_edges_validation() {
        assert!(Discretizer::from_edges(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Discretizer::from_edges(vec![0.1, 1.0]).is_err());
        assert!(Discretizer::from_edges(vec![0.0, 0.3, 1.0]).is_ok());
    }

    proptest! {
        #[test]
        fn every_value_has_exactly_one_bin(v in 0.0f64..=1.0, n in 1usize..50) {
            let d = Discretizer::equal_width(n).unwrap();
            let b = d.bin(v).unwrap();
            prop_assert!(b < n);
            let e = d.edges();
            prop_assert!(e[b] <= v);
            prop_assert!(v < e[b + 1] || (b == n - 1 && v == 1.0));
        }
    }
}
