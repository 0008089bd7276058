//! End-to-end outlier search: training, scoring, filtering, review and
//! retraining.

mod candidates;
mod cluster;
mod crossmatch;
mod filters;
mod labels;
mod loco;
mod model;
mod retrain;
mod runs;
mod score;

pub use crate::votemodel::score_from_log_joint;
pub use candidates::{
    assign_ranks, candidates_header, rank_order, read_candidates, read_candidates_path, write_candidates,
    write_candidates_path, CandidateRecord,
};
pub use cluster::{
    candidate_features, cluster_candidates, kmeans, silhouette, standardize, write_cmd_export, ClusterConfig,
    ClusterCount, Clustering,
};
pub use crossmatch::{angular_separation_deg, crossmatch, Catalog, CatalogRow, Counterpart, CrossmatchReport};
pub use filters::{
    alias_filter, cross_band_filter, AliasConfig, Depth, FilterTally, Removal, HARMONICS, SIDEREAL_DAY, SOLAR_DAY,
    YEAR,
};
pub use labels::{append_label, artifact_groups, read_labels, replay, Decision, TriageLabel, TriageState};
pub use loco::{leave_one_class_out, LocoEntry, LocoReport};
pub use model::{table_fingerprint, train_from_table, OutlierConfig, OutlierModel, TrainOutput, MODEL_FORMAT};
pub use retrain::{
    artifact_training_table, groups_from_map, retrain_with_artifacts, undersized_groups, ArtifactGroup,
};
pub use runs::{
    apply_filters, FilterSpec, RunInfo, RunKind, RunReport, RunStatus, RunStore, ScoringSummary, TrainingSummary,
};
pub use score::{score_batch, with_jobs, ScoreOptions, ScoreOutput};
