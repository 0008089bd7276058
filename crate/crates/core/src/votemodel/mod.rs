//! Bayesian network over discretized class-vote variables.

mod cpd;
mod discretize;
mod structure;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cpd::{fit_cpds, parameter_count, CpdTable, MapVariant};
pub use discretize::{Binning, DiscreteData, Discretizer};
pub use structure::{
    k2_local_score, learn_structure, network_score, AcceptedEdge, NetworkStructure, OrderStrategy,
    StructureSearch,
};

use crate::error::{Error, Result};

pub const VOTEMODEL_FORMAT: &str = "rfbn-votemodel/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteModelConfig {
    pub n_bins: usize,
    pub max_parents: usize,
    pub alpha: f64,
    pub order: OrderStrategy,
    pub binning: Binning,
    pub map: MapVariant,
}

impl Default for VoteModelConfig {
    fn default() -> Self {
        VoteModelConfig {
            n_bins: 20,
            max_parents: 2,
            alpha: 4.0,
            order: OrderStrategy::ClassOrder,
            binning: Binning::EqualWidth,
            map: MapVariant::PosteriorAsPrinted,
        }
    }
}

impl VoteModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::InvalidArgument(format!("n_bins must be >= 2, got {}", self.n_bins)));
        }
        if self.n_bins > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("n_bins too large ({})", self.n_bins)));
        }
        self.map.validate(self.alpha)
    }
}

/// Fitted network: discretizer, structure and one table per class vote.
#[derive(Debug, Clone)]
pub struct VoteModel {
    config: VoteModelConfig,
    discretizer: Discretizer,
    structure: NetworkStructure,
    cpds: Vec<CpdTable>,
    class_names: Vec<String>,
    log_probs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    format: String,
    config: VoteModelConfig,
    class_names: Vec<String>,
    edges: Vec<f64>,
    structure: NetworkStructure,
    cpds: Vec<CpdTable>,
}

impl VoteModel {
    /// Learn structure and parameters from vote vectors (one per object).
    pub fn fit<V: AsRef<[f64]> + Sync>(
        votes: &[V],
        class_names: &[String],
        cfg: &VoteModelConfig,
    ) -> Result<(VoteModel, StructureSearch)> {
        cfg.validate()?;
        if votes.is_empty() {
            return Err(Error::InvalidArgument("no vote vectors to fit".into()));
        }
        let k = class_names.len();
        if votes.iter().any(|v| v.as_ref().len() != k) {
            return Err(Error::InvalidArgument(format!("vote vectors must have {k} entries")));
        }
        let discretizer = match cfg.binning {
            Binning::EqualWidth => Discretizer::equal_width(cfg.n_bins)?,
            Binning::Quantile => {
                let pooled: Vec<f64> = votes.iter().flat_map(|v| v.as_ref().iter().copied()).collect();
                Discretizer::quantile(&pooled, cfg.n_bins)?
            }
        };
        let data = DiscreteData::from_votes(votes, &discretizer)?;
        let order = cfg.order.resolve(&data)?;
        let search = learn_structure(&data, &order, cfg.max_parents, cfg.alpha)?;
        let cpds = fit_cpds(&search.structure, &data, cfg.alpha, cfg.map)?;
        let model = Self::assemble(
            cfg.clone(),
            discretizer,
            search.structure.clone(),
            cpds,
            class_names.to_vec(),
        )?;
        Ok((model, search))
    }

    /// Build a model from explicit parts, validating their consistency.
    pub fn from_parts(
        config: VoteModelConfig,
        discretizer: Discretizer,
        structure: NetworkStructure,
        cpds: Vec<CpdTable>,
        class_names: Vec<String>,
    ) -> Result<VoteModel> {
        Self::assemble(config, discretizer, structure, cpds, class_names)
    }

    fn assemble(
        config: VoteModelConfig,
        discretizer: Discretizer,
        structure: NetworkStructure,
        cpds: Vec<CpdTable>,
        class_names: Vec<String>,
    ) -> Result<VoteModel> {
        let k = class_names.len();
        if structure.n_nodes() != k || cpds.len() != k {
            return Err(Error::MalformedInput(format!(
                "vote model has {k} classes, {} nodes, {} tables",
                structure.n_nodes(),
                cpds.len()
            )));
        }
        structure.validate()?;
        for (j, t) in cpds.iter().enumerate() {
            if t.node != j || t.parents != structure.parents[j] || t.n_bins != discretizer.n_bins() {
                return Err(Error::MalformedInput(format!("table {j} does not match the structure")));
            }
            t.validate()?;
        }
        let log_probs = cpds.iter().map(|t| t.probs.iter().map(|p| p.ln()).collect()).collect();
        Ok(VoteModel {
            config,
            discretizer,
            structure,
            cpds,
            class_names,
            log_probs,
        })
    }

    pub fn config(&self) -> &VoteModelConfig {
        &self.config
    }

    pub fn discretizer(&self) -> &Discretizer {
        &self.discretizer
    }

    pub fn structure(&self) -> &NetworkStructure {
        &self.structure
    }

    pub fn cpds(&self) -> &[CpdTable] {
        &self.cpds
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_nodes(&self) -> usize {
        self.class_names.len()
    }

    /// Free parameters stored across all tables.
    pub fn free_parameters(&self) -> u64 {
        self.cpds.iter().map(CpdTable::free_parameters).sum()
    }

    /// `sum_j ln P(b_j | parents)` for an assignment of bin indices.
    pub fn log_joint_bins(&self, bins: &[u16]) -> f64 {
        debug_assert_eq!(bins.len(), self.n_nodes());
        self.cpds
            .iter()
            .zip(&self.log_probs)
            .map(|(t, lp)| lp[t.config_of(bins) * t.n_bins + bins[t.node] as usize])
            .sum()
    }

    pub fn log_joint(&self, votes: &[f64]) -> Result<f64> {
        if votes.len() != self.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "vote vector has {} entries, model has {} classes",
                votes.len(),
                self.n_nodes()
            )));
        }
        let bins = self.discretizer.discretize(votes)?;
        Ok(self.log_joint_bins(&bins))
    }

    pub fn joint_probability(&self, votes: &[f64]) -> Result<f64> {
        self.log_joint(votes).map(f64::exp)
    }

    /// One minus the joint probability, computed from the log to keep
    /// precision when the joint is close to one.
    pub fn outlier_score(&self, votes: &[f64]) -> Result<f64> {
        self.log_joint(votes).map(score_from_log_joint)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let bundle = Bundle {
            format: VOTEMODEL_FORMAT.to_string(),
            config: self.config.clone(),
            class_names: self.class_names.clone(),
            edges: self.discretizer.edges().to_vec(),
            structure: self.structure.clone(),
            cpds: self.cpds.clone(),
        };
        serde_json::to_writer_pretty(w, &bundle)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<VoteModel> {
        let b: Bundle = serde_json::from_reader(r)?;
        if b.format != VOTEMODEL_FORMAT {
            return Err(Error::MalformedInput(format!("unknown vote model format {:?}", b.format)));
        }
        let d = Discretizer::from_edges(b.edges)?;
        Self::assemble(b.config, d, b.structure, b.cpds, b.class_names)
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_json(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_path(path: &Path) -> Result<VoteModel> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_json(BufReader::new(f))
    }
}

/// `1 - exp(log_joint)` without cancellation, kept inside `[0, 1)`: joints
/// below about `e^-37` would otherwise round to exactly 1.
pub fn score_from_log_joint(log_joint: f64) -> f64 {
    let s = -log_joint.exp_m1();
    if s > 0.0 {
        s.min(1.0 - f64::EPSILON / 2.0)
    } else {
        0.0
    }
}
