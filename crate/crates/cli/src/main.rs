mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use rfbn_core::features::FeatureTable;
use rfbn_core::lightcurve::{load_manifest, load_unlabeled_manifest};
use rfbn_core::pipeline::{
    cluster_candidates, crossmatch, with_jobs, AliasConfig, Catalog, ClusterConfig, ClusterCount, Depth, FilterSpec,
    OutlierConfig, RunStore,
};
use rfbn_core::votemodel::{Binning, OrderStrategy};
use rfbn_triage::{ServiceConfig, ServiceError};

use args::{BinningArg, Cli, Command, ModelArgs};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] rfbn_core::Error),

    #[error("config file {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error(transparent)]
    Service(#[from] ServiceError),
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Config { .. } => "invalid_argument",
            CliError::Service(ServiceError::Core(e)) => e.category(),
            CliError::Service(_) => "io_error",
        }
    }

    /// The message without the stage prefix.
    fn detail(&self) -> String {
        match self {
            CliError::Core(rfbn_core::Error::Stage { source, .. }) => source.to_string(),
            other => other.to_string(),
        }
    }

    fn stage(&self) -> Option<&'static str> {
        match self {
            CliError::Core(e) => e.stage(),
            CliError::Config { .. } => Some("config"),
            CliError::Service(_) => Some("serve"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = command_name(&cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.stage().unwrap_or(command);
            eprintln!("error: stage `{stage}` failed [{}]: {}", e.category(), e.detail());
            ExitCode::from(1)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::ExtractFeatures(_) => "extract-features",
        Command::Train(_) => "train",
        Command::Score(_) => "score",
        Command::EvaluateLoco(_) => "evaluate-loco",
        Command::Filter(_) => "filter",
        Command::Crossmatch(_) => "crossmatch",
        Command::Cluster(_) => "cluster",
        Command::Retrain(_) => "retrain",
        Command::Serve(_) => "serve",
    }
}

/// Defaults, then the config file, then flags.
fn resolve_config(cli: &Cli, model: Option<&ModelArgs>) -> Result<OutlierConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| rfbn_core::Error::io(path, e).in_stage("config"))?;
            toml::from_str(&text).map_err(|e| CliError::Config {
                path: path.clone(),
                message: e.to_string(),
            })?
        }
        None => OutlierConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.forest.seed = seed;
    }
    if let Some(m) = model {
        apply_overrides(&mut cfg, m)?;
    }
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut OutlierConfig, m: &ModelArgs) -> Result<()> {
    fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *slot = v.clone();
        }
    }
    set(&mut cfg.forest.n_trees, &m.trees);
    if m.split_features.is_some() {
        cfg.forest.n_split_features = m.split_features;
    }
    set(&mut cfg.forest.min_node_size, &m.min_node_size);
    set(&mut cfg.vote_model.n_bins, &m.bins);
    set(&mut cfg.vote_model.max_parents, &m.max_parents);
    set(&mut cfg.vote_model.alpha, &m.alpha);
    set(&mut cfg.retention, &m.retention);
    set(&mut cfg.snr_floor, &m.snr_floor);
    set(&mut cfg.min_group_size, &m.min_group_size);
    if let Some(b) = m.binning {
        cfg.vote_model.binning = match b {
            BinningArg::EqualWidth => Binning::EqualWidth,
            BinningArg::Quantile => Binning::Quantile,
        };
    }
    if let Some(o) = &m.order {
        cfg.vote_model.order = parse_order(o)?;
    }
    Ok(())
}

fn parse_order(s: &str) -> Result<OrderStrategy> {
    match s.trim() {
        "class" => Ok(OrderStrategy::ClassOrder),
        "entropy" => Ok(OrderStrategy::DescendingEntropy),
        list => list
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(OrderStrategy::Explicit)
            .map_err(|_| {
                rfbn_core::Error::InvalidArgument(format!(
                    "order must be `class`, `entropy` or a list of node indices, got `{list}`"
                ))
                .in_stage("config")
                .into()
            }),
    }
}

fn run(cli: Cli) -> Result<()> {
    let model_args = match &cli.command {
        Command::Train(a) => Some(&a.model),
        Command::EvaluateLoco(a) => Some(&a.model),
        _ => None,
    };
    let cfg = resolve_config(&cli, model_args)?;
    if cli.print_config {
        let text = toml::to_string(&cfg).map_err(|e| CliError::Config {
            path: cli.config.clone().unwrap_or_default(),
            message: e.to_string(),
        })?;
        print!("{text}");
    }
    if let Command::Serve(a) = &cli.command {
        let svc = ServiceConfig {
            runs_dir: cli.runs_dir.clone(),
            token: a.token.clone(),
        };
        let rt = tokio::runtime::Runtime::new().map_err(ServiceError::Serve)?;
        println!("serving {} on http://{}", cli.runs_dir.display(), a.addr);
        return Ok(rt.block_on(rfbn_triage::serve(a.addr, &svc))?);
    }
    with_jobs(cli.jobs, || execute(&cli, &cfg))?
}

fn extract(manifest: &Path, labeled: bool, cfg: &OutlierConfig) -> Result<FeatureTable> {
    let m = if labeled { load_manifest(manifest) } else { load_unlabeled_manifest(manifest) }
        .map_err(|e| e.in_stage("manifest"))?;
    Ok(FeatureTable::from_manifest(&m, &cfg.features).map_err(|e| e.in_stage("extract"))?)
}

fn read_table(path: &Path) -> Result<FeatureTable> {
    Ok(FeatureTable::read_path(path).map_err(|e| e.in_stage("features"))?)
}

fn execute(cli: &Cli, cfg: &OutlierConfig) -> Result<()> {
    let store = || RunStore::open(&cli.runs_dir);
    match &cli.command {
        Command::ExtractFeatures(a) => {
            let table = extract(&a.manifest, !a.unlabeled, cfg)?;
            table.write_path(&a.out).map_err(|e| e.in_stage("persist"))?;
            println!(
                "{}: {} objects, {} classes",
                a.out.display(),
                table.len(),
                table.classes().len()
            );
        }
        Command::Train(a) => {
            let table = match (&a.features, &a.manifest) {
                (Some(f), _) => read_table(f)?,
                (None, Some(m)) => extract(m, true, cfg)?,
                (None, None) => unreachable!("clap requires one input"),
            };
            let store = store()?;
            let info = store.train(&table, a.classes.as_deref(), cfg)?;
            let report = store.report(&info.run_id)?;
            let macro_f = report.training.map_or(f64::NAN, |t| t.macro_f);
            println!(
                "{}: trained {} classes on {} objects, OOB macro F {macro_f:.4}",
                info.run_id,
                info.classes.len(),
                table.len()
            );
        }
        Command::Score(a) => {
            let (info, out) = store()?.score(&a.model, &a.features, a.band)?;
            println!(
                "{}: scored {} objects, kept {} candidates ({} low SNR)",
                info.run_id,
                out.n_scored,
                out.candidates.len(),
                out.n_low_snr
            );
        }
        Command::EvaluateLoco(a) => {
            let table = read_table(&a.features)?;
            let (info, rep) = store()?.loco(&table, &a.hold, cfg)?;
            let window = (a.window_factor * rep.n_held as f64).round() as usize;
            let within = rep.held_ranks.iter().filter(|&&r| r <= window).count();
            println!(
                "{}: {within} of {} `{}` objects within the top {window} of {} (OOB macro F {:.4})",
                info.run_id, rep.n_held, rep.held_class, rep.n_objects, rep.macro_f
            );
        }
        Command::Filter(a) => {
            let depth = match (a.depth, a.depth_fraction) {
                (Some(n), _) => Depth::Absolute(n),
                (None, Some(f)) => Depth::Proportional(f),
                (None, None) => cfg.cross_band_depth,
            };
            let spec = FilterSpec {
                alias: a.alias.then(|| AliasConfig {
                    tolerance: a.tolerance.unwrap_or(cfg.alias.tolerance),
                }),
                cross_band: a.cross_band.clone().map(|r| (r, depth)),
            };
            let (info, tallies) = store()?.filter(&a.run, &spec)?;
            let removed: Vec<String> = tallies
                .iter()
                .map(|(name, t)| format!("{name} removed {}", t.removed.len()))
                .collect();
            let input = tallies.values().next().map_or(0, |t| t.input);
            println!(
                "{}: kept {} of {input} candidates ({})",
                info.run_id,
                info.n_candidates.unwrap_or(0),
                removed.join(", ")
            );
        }
        Command::Crossmatch(a) => {
            let store = store()?;
            let (_, cands) = store.candidates(&a.run)?;
            let catalog = Catalog::read_path(&a.catalog).map_err(|e| e.in_stage("catalog"))?;
            let report = crossmatch(&cands, &catalog, a.radius).map_err(|e| e.in_stage("crossmatch"))?;
            let out = match &a.out {
                Some(p) => p.clone(),
                None => store.run_dir(&a.run)?.join(format!("crossmatch-{}.json", catalog.name)),
            };
            let json = serde_json::to_vec_pretty(&report).map_err(rfbn_core::Error::from)?;
            fs::write(&out, json).map_err(|e| rfbn_core::Error::io(&out, e).in_stage("persist"))?;
            println!(
                "{}: {} of {} candidates matched in `{}` within {}\" ({} skipped catalog rows) -> {}",
                a.run,
                report.n_matched,
                cands.len(),
                report.catalog,
                report.radius_arcsec,
                report.skipped_catalog_rows,
                out.display()
            );
        }
        Command::Cluster(a) => {
            let store = store()?;
            let (_, cands) = store.candidates(&a.run)?;
            let ccfg = ClusterConfig {
                count: match a.k {
                    Some(k) => ClusterCount::Fixed(k),
                    None => ClusterCount::Auto {
                        min: a.k_min,
                        max: a.k_max,
                    },
                },
                restarts: a.restarts,
                seed: cli.seed.unwrap_or(0),
            };
            let clustering = cluster_candidates(&cands, &ccfg).map_err(|e| e.in_stage("cluster"))?;
            let dir = match &a.out_dir {
                Some(d) => d.clone(),
                None => store.run_dir(&a.run)?,
            };
            let cmd = dir.join("cmd_export.csv");
            let f = fs::File::create(&cmd).map_err(|e| rfbn_core::Error::io(&cmd, e).in_stage("persist"))?;
            rfbn_core::pipeline::write_cmd_export(std::io::BufWriter::new(f), &cands, &clustering)
                .map_err(|e| e.in_stage("persist"))?;
            let summary = dir.join("clusters.json");
            let json = serde_json::to_vec_pretty(&clustering).map_err(rfbn_core::Error::from)?;
            fs::write(&summary, json).map_err(|e| rfbn_core::Error::io(&summary, e).in_stage("persist"))?;
            let sil = clustering.silhouette.map_or("n/a".to_string(), |s| format!("{s:.3}"));
            println!(
                "{}: {} candidates in {} clusters (silhouette {sil}) -> {}",
                a.run,
                cands.len(),
                clustering.k,
                cmd.display()
            );
        }
        Command::Retrain(a) => {
            let info = store()?.retrain(&a.run, a.groups.as_deref())?;
            println!(
                "{}: iteration {} with groups [{}], {} classes, {} candidates",
                info.run_id,
                info.iteration,
                info.artifact_groups.join(", "),
                info.classes.len(),
                info.n_candidates.unwrap_or(0)
            );
        }
        Command::Serve(_) => unreachable!("handled before the worker pool"),
    }
    Ok(())
}
