//! Training and persistence of the combined forest + vote model.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::filters::{AliasConfig, Depth};
use crate::error::{Error, Result};
use crate::features::{impute, FeatureConfig, FeatureMatrix, FeatureTable, FeatureVector, N_FEATURES};
use crate::forest::{confusion_matrix, macro_f_score, Forest, ForestConfig, MacroF, OobVotes, VoteVector};
use crate::votemodel::{StructureSearch, VoteModel, VoteModelConfig};

pub const MODEL_FORMAT: &str = "rfbn-model/1";

/// Every tunable of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierConfig {
    pub forest: ForestConfig,
    pub vote_model: VoteModelConfig,
    pub features: FeatureConfig,
    /// Candidates kept per scoring run.
    pub retention: usize,
    /// Candidates with SNR below this are flagged `low_snr` (never removed).
    pub snr_floor: f64,
    /// Minimum members of an artifact group for retraining.
    pub min_group_size: usize,
    pub alias: AliasConfig,
    pub cross_band_depth: Depth,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig {
            forest: ForestConfig::default(),
            vote_model: VoteModelConfig::default(),
            features: FeatureConfig::default(),
            retention: 4000,
            snr_floor: 5.0,
            min_group_size: 5,
            alias: AliasConfig::default(),
            cross_band_depth: Depth::default(),
        }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        self.forest.validate(N_FEATURES)?;
        self.vote_model.validate()?;
        if self.retention == 0 {
            return Err(Error::InvalidArgument("retention must be positive".into()));
        }
        self.cross_band_depth.validate()?;
        self.alias.validate()
    }
}

/// Trained forest and vote model over the same classes.
#[derive(Debug, Clone)]
pub struct OutlierModel {
    config: OutlierConfig,
    forest: Forest,
    vote_model: VoteModel,
    medians: [f64; N_FEATURES],
    fingerprint: String,
    n_training: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    format: String,
    config: OutlierConfig,
    class_names: Vec<String>,
    medians: [f64; N_FEATURES],
    fingerprint: String,
    n_training: usize,
}

/// Everything produced while training, beyond the model itself.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: OutlierModel,
    pub matrix: FeatureMatrix,
    pub oob: OobVotes,
    pub macro_f: MacroF,
    pub confusion: Vec<Vec<usize>>,
    pub search: StructureSearch,
}

/// SHA-256 of the training table's CSV serialization, hex encoded.
pub fn table_fingerprint(table: &FeatureTable) -> Result<String> {
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    Ok(hex(&Sha256::digest(&buf)))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Train on a labeled feature table. `classes` fixes the class order (and so
/// the vote-variable order); `None` uses order of first appearance.
pub fn train_from_table(
    table: &FeatureTable,
    classes: Option<&[String]>,
    cfg: &OutlierConfig,
) -> Result<TrainOutput> {
    train_with_hook(table, classes, cfg, &mut |_| Ok(()))
}

/// As [`train_from_table`], calling `after_forest` once the forest is fitted.
pub(crate) fn train_with_hook(
    table: &FeatureTable,
    classes: Option<&[String]>,
    cfg: &OutlierConfig,
    after_forest: &mut dyn FnMut(&Forest) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let matrix = FeatureMatrix::from_table(table, classes).map_err(|e| e.in_stage("features"))?;
    if matrix.classes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {}",
            matrix.classes.len()
        ))
        .in_stage("features"));
    }
    let forest = Forest::fit(&matrix.x, &matrix.labels, &matrix.classes, &cfg.forest)
        .map_err(|e| e.in_stage("forest"))?;
    after_forest(&forest).map_err(|e| e.in_stage("persist"))?;
    let oob = forest.oob_vote_matrix(&matrix.x).map_err(|e| e.in_stage("oob"))?;
    let k = matrix.classes.len();
    let macro_f = macro_f_score(&oob.votes, &matrix.labels, k);
    let confusion = confusion_matrix(&oob.votes, &matrix.labels, k);
    let (vote_model, search) = VoteModel::fit(&oob.votes, &matrix.classes, &cfg.vote_model)
        .map_err(|e| e.in_stage("vote_model"))?;
    let model = OutlierModel {
        config: cfg.clone(),
        forest,
        vote_model,
        medians: matrix.medians,
        fingerprint: table_fingerprint(table)?,
        n_training: matrix.n_rows(),
    };
    Ok(TrainOutput {
        model,
        matrix,
        oob,
        macro_f,
        confusion,
        search,
    })
}

impl OutlierModel {
    /// Assemble from parts, checking that both halves use the same classes.
    pub fn from_parts(
        config: OutlierConfig,
        forest: Forest,
        vote_model: VoteModel,
        medians: [f64; N_FEATURES],
        fingerprint: String,
    ) -> Result<Self> {
        if forest.class_names() != vote_model.class_names() {
            return Err(Error::MalformedInput(format!(
                "forest classes {:?} differ from vote model classes {:?}",
                forest.class_names(),
                vote_model.class_names()
            )));
        }
        if forest.n_features() != N_FEATURES {
            return Err(Error::MalformedInput(format!(
                "forest expects {} features, tables have {N_FEATURES}",
                forest.n_features()
            )));
        }
        Ok(OutlierModel {
            config,
            forest,
            vote_model,
            medians,
            fingerprint,
            n_training: 0,
        })
    }

    pub fn config(&self) -> &OutlierConfig {
        &self.config
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn vote_model(&self) -> &VoteModel {
        &self.vote_model
    }

    pub fn class_names(&self) -> &[String] {
        self.forest.class_names()
    }

    pub fn medians(&self) -> &[f64; N_FEATURES] {
        &self.medians
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Full-forest votes for an object, imputing invalid features.
    pub fn votes(&self, fv: &FeatureVector) -> VoteVector {
        let x = impute(fv, &self.medians);
        let mut counts = vec![0u32; self.forest.n_classes()];
        self.forest.vote_counts_into(&x, &mut counts);
        VoteVector::from_counts(&counts)
    }

    /// Log joint probability of a vote vector under the vote model.
    pub fn log_joint(&self, votes: &[f64]) -> Result<f64> {
        self.vote_model.log_joint(votes)
    }

    /// Persist as `forest.json`, `votemodel.json` and `model.json` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_with(&dir.join("forest.json"), |w| self.forest.write_bundle(w))?;
        self.vote_model.write_path(&dir.join("votemodel.json"))?;
        let meta = ModelMeta {
            format: MODEL_FORMAT.to_string(),
            config: self.config.clone(),
            class_names: self.class_names().to_vec(),
            medians: self.medians,
            fingerprint: self.fingerprint.clone(),
            n_training: self.n_training,
        };
        write_with(&dir.join("model.json"), |w| {
            serde_json::to_writer_pretty(w, &meta).map_err(Error::from)
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ModelMeta = read_json(&dir.join("model.json"))?;
        if meta.format != MODEL_FORMAT {
            return Err(Error::MalformedInput(format!("unknown model format {:?}", meta.format)));
        }
        let fpath = dir.join("forest.json");
        let f = File::open(&fpath).map_err(|e| Error::io(&fpath, e))?;
        let forest = Forest::read_bundle(BufReader::new(f))?;
        let vote_model = VoteModel::read_path(&dir.join("votemodel.json"))?;
        if forest.class_names() != meta.class_names.as_slice() {
            return Err(Error::MalformedInput("model.json classes differ from forest".into()));
        }
        let mut m = Self::from_parts(meta.config, forest, vote_model, meta.medians, meta.fingerprint)?;
        m.n_training = meta.n_training;
        Ok(m)
    }

    /// Persist only the forest (used to keep partial artifacts).
    pub(crate) fn save_forest(forest: &Forest, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_with(&dir.join("forest.json"), |w| forest.write_bundle(w))
    }
}

pub(crate) fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(|e| Error::MalformedInput(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}
