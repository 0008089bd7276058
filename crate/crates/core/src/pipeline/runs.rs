//! Run directories and the run-level operations shared by the command line
//! and the triage service.
//!
//! Layout of `<root>/<run_id>/`:
//!
//! ```text
//! run.json          RunInfo
//! report.json       RunReport
//! training.csv      training feature table (train / retrain runs)
//! model/            forest.json, votemodel.json, model.json
//! candidates.csv    ranked candidates (score / retrain / filter runs)
//! loco.json         leave-one-class-out report (loco runs)
//! labels.jsonl      reviewer labels, appended by the triage service
//! ```
//!
//! Everything except `labels.jsonl` is written once when the run is created.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::candidates::{read_candidates_path, write_candidates_path, CandidateRecord};
use super::filters::{alias_filter, cross_band_filter, AliasConfig, Depth, FilterTally};
use super::labels::{artifact_groups, read_labels, replay};
use super::loco::{leave_one_class_out, LocoReport};
use super::model::{hex, read_json, table_fingerprint, train_with_hook, write_json, OutlierConfig, OutlierModel, TrainOutput};
use super::retrain::{artifact_training_table, groups_from_map, ArtifactGroup};
use super::score::{score_batch, ScoreOptions, ScoreOutput};
use crate::error::{Error, Result};
use crate::features::{FeatureTable, FeatureTableReader};
use crate::lightcurve::Band;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Train,
    Score,
    Retrain,
    Filter,
    Loco,
}

impl RunKind {
    fn prefix(self) -> &'static str {
        match self {
            RunKind::Train => "train",
            RunKind::Score => "score",
            RunKind::Retrain => "retrain",
            RunKind::Filter => "filter",
            RunKind::Loco => "loco",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Complete,
    Failed { stage: String, message: String },
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub kind: RunKind,
    pub status: RunStatus,
    pub created: DateTime<Utc>,
    /// Run this one was derived from.
    pub parent: Option<String>,
    /// Run holding the model used (itself for train and retrain runs).
    pub model_run: Option<String>,
    /// Retraining iteration; 0 for a model trained without artifact classes.
    pub iteration: u32,
    pub classes: Vec<String>,
    pub artifact_groups: Vec<String>,
    pub n_candidates: Option<usize>,
    /// Feature table that was scored.
    pub input: Option<PathBuf>,
    pub band: Option<Band>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n_objects: usize,
    pub class_counts: Vec<(String, usize)>,
    /// OOB confusion matrix, rows = true class.
    pub confusion: Vec<Vec<usize>>,
    pub macro_f: f64,
    pub per_class_f: Vec<Option<f64>>,
    pub mean_oob_coverage: f64,
    pub uncovered: usize,
    /// `(node, parents)` by class name.
    pub structure: Vec<(String, Vec<String>)>,
    pub network_score: f64,
    pub free_parameters: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringSummary {
    pub n_scored: usize,
    pub n_candidates: usize,
    pub n_low_snr: usize,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub kind: RunKind,
    pub iteration: u32,
    pub config: OutlierConfig,
    pub classes: Vec<String>,
    pub training: Option<TrainingSummary>,
    pub scoring: Option<ScoringSummary>,
    pub filter_tallies: BTreeMap<String, FilterTally>,
    pub timing_ms: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

impl RunReport {
    fn new(run_id: &str, kind: RunKind, iteration: u32, config: &OutlierConfig) -> Self {
        RunReport {
            run_id: run_id.to_string(),
            kind,
            iteration,
            config: config.clone(),
            classes: Vec::new(),
            training: None,
            scoring: None,
            filter_tallies: BTreeMap::new(),
            timing_ms: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }
}

fn summarize_training(out: &TrainOutput) -> TrainingSummary {
    let classes = out.model.class_names();
    let vm = out.model.vote_model();
    let structure = vm
        .structure()
        .parents
        .iter()
        .enumerate()
        .map(|(j, ps)| (classes[j].clone(), ps.iter().map(|&p| classes[p].clone()).collect()))
        .collect();
    let mut counts = vec![0usize; classes.len()];
    for &l in &out.matrix.labels {
        counts[l] += 1;
    }
    TrainingSummary {
        n_objects: out.matrix.n_rows(),
        class_counts: classes.iter().cloned().zip(counts).collect(),
        confusion: out.confusion.clone(),
        macro_f: out.macro_f.score,
        per_class_f: out.macro_f.per_class.clone(),
        mean_oob_coverage: out.oob.mean_coverage(),
        uncovered: out.oob.uncovered.len(),
        structure,
        network_score: out.search.total_score(),
        free_parameters: vm.free_parameters(),
    }
}

/// A directory of runs.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn sha_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha_hex(&[&bytes]))
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Create a fresh directory whose name is derived from `key`. A clash
    /// with an existing run gets a numeric suffix.
    fn allocate(&self, kind: RunKind, key: &[&[u8]]) -> Result<(String, PathBuf)> {
        let base = format!("{}-{}", kind.prefix(), &sha_hex(key)[..12]);
        for n in 1.. {
            let id = if n == 1 { base.clone() } else { format!("{base}-{n}") };
            let dir = self.root.join(&id);
            match fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Error::io(&dir, e)),
            }
        }
        unreachable!()
    }

    /// Directory of an existing run.
    pub fn run_dir(&self, run_id: &str) -> Result<PathBuf> {
        let ok = !run_id.is_empty()
            && run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        let dir = self.root.join(run_id);
        if !ok || !dir.join("run.json").is_file() {
            return Err(Error::NotFound(format!("run `{run_id}`")));
        }
        Ok(dir)
    }

    pub fn info(&self, run_id: &str) -> Result<RunInfo> {
        read_json(&self.run_dir(run_id)?.join("run.json"))
    }

    pub fn report(&self, run_id: &str) -> Result<RunReport> {
        read_json(&self.run_dir(run_id)?.join("report.json"))
    }

    /// All runs, oldest first (ties by id).
    pub fn list(&self) -> Result<Vec<RunInfo>> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for e in entries {
            let e = e.map_err(|e| Error::io(&self.root, e))?;
            let p = e.path().join("run.json");
            if p.is_file() {
                out.push(read_json::<RunInfo>(&p)?);
            }
        }
        out.sort_by(|a, b| a.created.cmp(&b.created).then_with(|| a.run_id.cmp(&b.run_id)));
        Ok(out)
    }

    fn model_run_of(&self, run_id: &str) -> Result<String> {
        let info = self.info(run_id)?;
        info.model_run
            .ok_or_else(|| Error::NotFound(format!("run `{run_id}` has no model")))
    }

    pub fn load_model(&self, run_id: &str) -> Result<OutlierModel> {
        let m = self.model_run_of(run_id)?;
        OutlierModel::load(&self.run_dir(&m)?.join("model"))
    }

    /// Labeled training table of the run's model.
    pub fn training_table(&self, run_id: &str) -> Result<FeatureTable> {
        let m = self.model_run_of(run_id)?;
        FeatureTable::read_path(&self.run_dir(&m)?.join("training.csv"))
    }

    /// Ranked candidates and class names of a run.
    pub fn candidates(&self, run_id: &str) -> Result<(Vec<String>, Vec<CandidateRecord>)> {
        let p = self.run_dir(run_id)?.join("candidates.csv");
        if !p.is_file() {
            return Err(Error::NotFound(format!("run `{run_id}` has no candidates")));
        }
        read_candidates_path(&p)
    }

    pub fn labels_path(&self, run_id: &str) -> Result<PathBuf> {
        Ok(self.run_dir(run_id)?.join("labels.jsonl"))
    }

    fn finish(&self, dir: &Path, info: &RunInfo, report: &RunReport) -> Result<()> {
        write_json(&dir.join("report.json"), report)?;
        write_json(&dir.join("run.json"), info)
    }

    fn fail(&self, dir: &Path, mut info: RunInfo, err: Error) -> Error {
        info.status = RunStatus::Failed {
            stage: err.stage().unwrap_or("run").to_string(),
            message: err.to_string(),
        };
        let _ = write_json(&dir.join("run.json"), &info);
        err
    }

    fn new_info(&self, run_id: &str, kind: RunKind) -> RunInfo {
        RunInfo {
            run_id: run_id.to_string(),
            kind,
            status: RunStatus::Complete,
            created: Utc::now(),
            parent: None,
            model_run: None,
            iteration: 0,
            classes: Vec::new(),
            artifact_groups: Vec::new(),
            n_candidates: None,
            input: None,
            band: None,
        }
    }

    /// Train a model on a labeled feature table.
    pub fn train(&self, table: &FeatureTable, classes: Option<&[String]>, cfg: &OutlierConfig) -> Result<RunInfo> {
        let cfg_json = serde_json::to_vec(cfg)?;
        let fp = table_fingerprint(table)?;
        let cls = classes.map(|c| c.join("\n")).unwrap_or_default();
        let (id, dir) = self.allocate(RunKind::Train, &[fp.as_bytes(), &cfg_json, cls.as_bytes()])?;
        let mut info = self.new_info(&id, RunKind::Train);
        info.model_run = Some(id.clone());
        match self.train_into(&dir, &mut info, table, classes, cfg, 0) {
            Ok(report) => {
                self.finish(&dir, &info, &report)?;
                Ok(info)
            }
            Err(e) => Err(self.fail(&dir, info, e)),
        }
    }

    fn train_into(
        &self,
        dir: &Path,
        info: &mut RunInfo,
        table: &FeatureTable,
        classes: Option<&[String]>,
        cfg: &OutlierConfig,
        iteration: u32,
    ) -> Result<RunReport> {
        let t = Instant::now();
        table.write_path(&dir.join("training.csv")).map_err(|e| e.in_stage("persist"))?;
        let model_dir = dir.join("model");
        let out = train_with_hook(table, classes, cfg, &mut |f| OutlierModel::save_forest(f, &model_dir))?;
        out.model.save(&model_dir).map_err(|e| e.in_stage("persist"))?;
        info.classes = out.model.class_names().to_vec();
        info.iteration = iteration;
        let mut report = RunReport::new(&info.run_id, info.kind, iteration, cfg);
        report.classes = info.classes.clone();
        report.training = Some(summarize_training(&out));
        report.warnings.extend(out.matrix.warnings.iter().cloned());
        report.warnings.extend(out.oob.warnings.iter().cloned());
        report.warnings.extend(out.macro_f.warnings.iter().cloned());
        report.timing_ms.insert("train".into(), elapsed_ms(t));
        Ok(report)
    }

    /// Score a feature-table file with the model of `model_run`.
    pub fn score(&self, model_run: &str, input: &Path, band: Band) -> Result<(RunInfo, ScoreOutput)> {
        let model = self.load_model(model_run)?;
        let model_run = self.model_run_of(model_run)?;
        let fp = file_fingerprint(input)?;
        let (id, dir) = self.allocate(
            RunKind::Score,
            &[model_run.as_bytes(), fp.as_bytes(), band.to_string().as_bytes()],
        )?;
        let mut info = self.new_info(&id, RunKind::Score);
        info.parent = Some(model_run.clone());
        info.model_run = Some(model_run.clone());
        info.classes = model.class_names().to_vec();
        info.iteration = self.info(&model_run)?.iteration;
        info.input = Some(input.canonicalize().map_err(|e| Error::io(input, e))?);
        info.band = Some(band);
        let mut report = RunReport::new(&id, RunKind::Score, info.iteration, model.config());
        report.classes = info.classes.clone();
        match self.score_into(&dir, &mut info, &mut report, &model, input, band) {
            Ok(out) => {
                self.finish(&dir, &info, &report)?;
                Ok((info, out))
            }
            Err(e) => Err(self.fail(&dir, info, e)),
        }
    }

    fn score_into(
        &self,
        dir: &Path,
        info: &mut RunInfo,
        report: &mut RunReport,
        model: &OutlierModel,
        input: &Path,
        band: Band,
    ) -> Result<ScoreOutput> {
        let t = Instant::now();
        let f = fs::File::open(input).map_err(|e| Error::io(input, e).in_stage("score"))?;
        let rows = FeatureTableReader::new(std::io::BufReader::new(f)).map_err(|e| e.in_stage("score"))?;
        let opts = ScoreOptions {
            band,
            run_id: info.run_id.clone(),
            ..ScoreOptions::for_model(model)
        };
        let out = score_batch(model, rows, &opts).map_err(|e| e.in_stage("score"))?;
        write_candidates_path(&dir.join("candidates.csv"), model.class_names(), &out.candidates)
            .map_err(|e| e.in_stage("persist"))?;
        info.n_candidates = Some(out.candidates.len());
        report.scoring = Some(ScoringSummary {
            n_scored: out.n_scored,
            n_candidates: out.candidates.len(),
            n_low_snr: out.n_low_snr,
        });
        report.timing_ms.insert("score".into(), elapsed_ms(t));
        Ok(out)
    }

    /// Artifact groups recorded in a run's label log.
    pub fn labeled_groups(&self, run_id: &str) -> Result<Vec<ArtifactGroup>> {
        let labels = read_labels(&self.labels_path(run_id)?)?;
        Ok(groups_from_map(artifact_groups(&replay(&labels))))
    }

    /// Retrain the model behind `source_run` with artifact classes taken from
    /// its label log, then rescore the same input. `only` restricts which
    /// labeled groups are used. The new run holds both model and candidates.
    pub fn retrain(&self, source_run: &str, only: Option<&[String]>) -> Result<RunInfo> {
        let src = self.info(source_run)?;
        let input = src
            .input
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("run `{source_run}` has no scored input")))?;
        let mut groups = self.labeled_groups(source_run)?;
        if let Some(names) = only {
            for n in names {
                if !groups.iter().any(|g| &g.name == n) {
                    return Err(Error::NotFound(format!("artifact group `{n}` in run `{source_run}`")));
                }
            }
            groups.retain(|g| names.contains(&g.name));
        }
        let groups = groups;
        self.retrain_with_groups(source_run, &groups, &input)
    }

    /// As [`RunStore::retrain`] with explicit groups and input.
    pub fn retrain_with_groups(&self, source_run: &str, groups: &[ArtifactGroup], input: &Path) -> Result<RunInfo> {
        let model = self.load_model(source_run)?;
        let cfg = model.config().clone();
        let base = self.training_table(source_run)?;
        let (_, pool) = self.candidates(source_run)?;
        let pool: Vec<_> = pool.iter().map(CandidateRecord::to_feature_row).collect();
        let (table, classes) =
            artifact_training_table(&base, model.class_names(), &pool, groups, cfg.min_group_size)?;

        let src = self.info(source_run)?;
        let model_info = self.info(&self.model_run_of(source_run)?)?;
        let groups_json = serde_json::to_vec(groups)?;
        let (id, dir) = self.allocate(RunKind::Retrain, &[source_run.as_bytes(), &groups_json])?;
        let mut info = self.new_info(&id, RunKind::Retrain);
        info.parent = Some(source_run.to_string());
        info.model_run = Some(id.clone());
        info.artifact_groups = groups.iter().map(|g| g.name.clone()).collect();
        info.input = Some(input.to_path_buf());
        info.band = src.band;
        let iteration = model_info.iteration + 1;
        let result = (|| {
            let mut report = self.train_into(&dir, &mut info, &table, Some(&classes), &cfg, iteration)?;
            let model = OutlierModel::load(&dir.join("model")).map_err(|e| e.in_stage("persist"))?;
            self.score_into(&dir, &mut info, &mut report, &model, input, src.band.unwrap_or_default())?;
            Ok(report)
        })();
        match result {
            Ok(report) => {
                self.finish(&dir, &info, &report)?;
                Ok(info)
            }
            Err(e) => Err(self.fail(&dir, info, e)),
        }
    }

    /// Apply artifact filters to a run's candidates, producing a new run
    /// whose candidates keep their original ranks.
    pub fn filter(&self, source_run: &str, spec: &FilterSpec) -> Result<(RunInfo, BTreeMap<String, FilterTally>)> {
        let src = self.info(source_run)?;
        let (classes, cands) = self.candidates(source_run)?;
        let red = match &spec.cross_band {
            Some((red_run, _)) => Some(self.candidates(red_run)?.1),
            None => None,
        };
        let (kept, tallies) = apply_filters(cands, spec, red.as_deref())?;
        let spec_json = serde_json::to_vec(spec)?;
        let (id, dir) = self.allocate(RunKind::Filter, &[source_run.as_bytes(), &spec_json])?;
        let mut info = self.new_info(&id, RunKind::Filter);
        info.parent = Some(source_run.to_string());
        info.model_run = src.model_run.clone();
        info.classes = classes.clone();
        info.iteration = src.iteration;
        info.input = src.input.clone();
        info.band = src.band;
        info.n_candidates = Some(kept.len());
        let cfg = match self.load_model(source_run) {
            Ok(m) => m.config().clone(),
            Err(_) => OutlierConfig::default(),
        };
        let mut report = RunReport::new(&id, RunKind::Filter, src.iteration, &cfg);
        report.classes = classes.clone();
        report.filter_tallies = tallies.clone();
        let kept: Vec<CandidateRecord> = kept
            .into_iter()
            .map(|mut c| {
                c.run_id = id.clone();
                c
            })
            .collect();
        write_candidates_path(&dir.join("candidates.csv"), &classes, &kept)?;
        self.finish(&dir, &info, &report)?;
        Ok((info, tallies))
    }

    /// Leave-one-class-out evaluation, stored as `loco.json`.
    pub fn loco(&self, table: &FeatureTable, held_class: &str, cfg: &OutlierConfig) -> Result<(RunInfo, LocoReport)> {
        let fp = table_fingerprint(table)?;
        let cfg_json = serde_json::to_vec(cfg)?;
        let (id, dir) = self.allocate(RunKind::Loco, &[fp.as_bytes(), &cfg_json, held_class.as_bytes()])?;
        let mut info = self.new_info(&id, RunKind::Loco);
        let t = Instant::now();
        match leave_one_class_out(table, held_class, cfg) {
            Ok(rep) => {
                info.classes = rep.trained_classes.clone();
                write_json(&dir.join("loco.json"), &rep)?;
                let mut report = RunReport::new(&id, RunKind::Loco, 0, cfg);
                report.classes = info.classes.clone();
                report.timing_ms.insert("loco".into(), elapsed_ms(t));
                self.finish(&dir, &info, &report)?;
                Ok((info, rep))
            }
            Err(e) => Err(self.fail(&dir, info, e)),
        }
    }
}

/// Which filters to apply, in order: alias, then cross-band.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub alias: Option<AliasConfig>,
    /// Red-band run id and depth.
    pub cross_band: Option<(String, Depth)>,
}

/// Apply the filters of `spec` to a candidate list.
pub fn apply_filters(
    candidates: Vec<CandidateRecord>,
    spec: &FilterSpec,
    red: Option<&[CandidateRecord]>,
) -> Result<(Vec<CandidateRecord>, BTreeMap<String, FilterTally>)> {
    let mut tallies = BTreeMap::new();
    let mut kept = candidates;
    if let Some(a) = &spec.alias {
        let (k, t) = alias_filter(kept, a)?;
        kept = k;
        tallies.insert("alias".to_string(), t);
    }
    if let Some((_, depth)) = &spec.cross_band {
        let red = red.ok_or_else(|| Error::InvalidArgument("cross-band filter needs a red list".into()))?;
        let (k, t) = cross_band_filter(kept, red, *depth)?;
        kept = k;
        tallies.insert("cross_band".to_string(), t);
    }
    Ok((kept, tallies))
}
