use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rfbn_core::lightcurve::Band;

/// Outlier detection for light curves: train a forest and a vote model,
/// score surveys, filter and review candidates.
#[derive(Debug, Parser)]
#[command(name = "rfbn", version)]
pub struct Cli {
    /// Directory holding run directories.
    #[arg(long, global = true, env = "RFBN_RUNS_DIR", default_value = "runs")]
    pub runs_dir: PathBuf,

    /// TOML file with pipeline settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for the forest and for clustering restarts [default: 0, or the config file].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Print the resolved pipeline settings as TOML before running.
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute features for every curve of a manifest and write a feature table.
    ExtractFeatures(ExtractArgs),
    /// Train a model on a labeled feature table.
    Train(TrainArgs),
    /// Score a feature table with a trained model.
    Score(ScoreArgs),
    /// Hold one class out, train on the rest and rank every object.
    EvaluateLoco(LocoArgs),
    /// Remove alias-period and cross-band artifacts from a run's candidates.
    Filter(FilterArgs),
    /// Match a run's candidates against a position catalog.
    Crossmatch(CrossmatchArgs),
    /// Group a run's candidates by k-means and export a colour-magnitude table.
    Cluster(ClusterArgs),
    /// Retrain with the artifact groups labeled in a run.
    Retrain(RetrainArgs),
    /// Serve the triage HTTP API over the runs directory.
    Serve(ServeArgs),
}

/// Overrides of the model settings.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Trees in the forest [default: 500].
    #[arg(long)]
    pub trees: Option<usize>,
    /// Features tried per split [default: floor(sqrt(13)) = 3].
    #[arg(long)]
    pub split_features: Option<usize>,
    /// Nodes with at most this many samples become leaves [default: 1].
    #[arg(long)]
    pub min_node_size: Option<usize>,
    /// Bins per vote variable [default: 20].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Parent limit per vote variable [default: 2].
    #[arg(long)]
    pub max_parents: Option<usize>,
    /// Dirichlet prior strength [default: 4].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Node order for the structure search: `class`, `entropy`, or a comma-separated permutation [default: class].
    #[arg(long)]
    pub order: Option<String>,
    /// Vote discretization [default: equal-width].
    #[arg(long, value_enum)]
    pub binning: Option<BinningArg>,
    /// Candidates kept per scoring run [default: 4000].
    #[arg(long)]
    pub retention: Option<usize>,
    /// SNR below which candidates are flagged [default: 5].
    #[arg(long)]
    pub snr_floor: Option<f64>,
    /// Minimum members of an artifact group [default: 5].
    #[arg(long)]
    pub min_group_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BinningArg {
    EqualWidth,
    Quantile,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Manifest CSV (`id,path[,red_path][,label],ra_deg,dec_deg`).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output feature table.
    #[arg(long)]
    pub out: PathBuf,
    /// Accept manifests without labels.
    #[arg(long)]
    pub unlabeled: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled feature table (from `extract-features`).
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub features: Option<PathBuf>,
    /// Labeled manifest; features are extracted first.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Class order, comma separated [default: order of first appearance].
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Run whose model is used.
    #[arg(long)]
    pub model: String,
    /// Feature table to score.
    #[arg(long)]
    pub features: PathBuf,
    /// Passband the table was measured in.
    #[arg(long, default_value = "blue", value_parser = parse_band)]
    pub band: Band,
}

#[derive(Debug, Args)]
pub struct LocoArgs {
    /// Labeled feature table.
    #[arg(long)]
    pub features: PathBuf,
    /// Class to hold out.
    #[arg(long)]
    pub hold: String,
    /// Rank window reported as recovered, as a multiple of the held class size.
    #[arg(long, default_value_t = 3.5)]
    pub window_factor: f64,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("which").required(true).multiple(true).args(["alias", "cross_band"])))]
pub struct FilterArgs {
    /// Run whose candidates are filtered.
    #[arg(long)]
    pub run: String,
    /// Apply the alias-period filter.
    #[arg(long)]
    pub alias: bool,
    /// Relative tolerance of the alias filter [default: 0.01, or the config file].
    #[arg(long, requires = "alias")]
    pub tolerance: Option<f64>,
    /// Red-band run; keep only candidates also near the top of its list.
    #[arg(long)]
    pub cross_band: Option<String>,
    /// Absolute red-list depth.
    #[arg(long, requires = "cross_band", conflicts_with = "depth_fraction")]
    pub depth: Option<usize>,
    /// Red-list depth as a fraction of its length [default: 0.001, or the config file].
    #[arg(long, requires = "cross_band")]
    pub depth_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CrossmatchArgs {
    #[arg(long)]
    pub run: String,
    /// Catalog CSV with `ra_deg,dec_deg,label`.
    #[arg(long)]
    pub catalog: PathBuf,
    /// Match radius in arcseconds.
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    /// Report path [default: `<run>/crossmatch-<catalog name>.json`].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub run: String,
    /// Fixed cluster count; otherwise chosen by silhouette.
    #[arg(long, conflicts_with_all = ["k_min", "k_max"])]
    pub k: Option<usize>,
    /// Smallest k tried.
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    /// Largest k tried.
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// k-means restarts.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Output directory [default: the run directory].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    /// Scored run whose label log defines the groups.
    #[arg(long)]
    pub run: String,
    /// Groups to use, comma separated [default: every labeled group].
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Shared token required in the `x-triage-token` header [default: none].
    #[arg(long, env = "RFBN_TOKEN")]
    pub token: Option<String>,
}

fn parse_band(s: &str) -> Result<Band, String> {
    s.parse().map_err(|e: rfbn_core::Error| e.to_string())
}
