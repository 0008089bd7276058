//! Streaming batch scoring with bounded top-m retention.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::candidates::{assign_ranks, CandidateRecord};
use super::model::OutlierModel;
use crate::error::{Error, Result};
use crate::features::{FeatureRow, N_FEATURES};
use crate::lightcurve::Band;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Keep at most this many candidates; `None` keeps all.
    pub retention: Option<usize>,
    /// Rows read and scored together.
    pub chunk_size: usize,
    pub snr_floor: f64,
    pub band: Band,
    pub run_id: String,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            retention: Some(4000),
            chunk_size: 4096,
            snr_floor: 5.0,
            band: Band::Blue,
            run_id: String::new(),
        }
    }
}

impl ScoreOptions {
    /// Options matching a model's configuration.
    pub fn for_model(model: &OutlierModel) -> Self {
        ScoreOptions {
            retention: Some(model.config().retention),
            snr_floor: model.config().snr_floor,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreOutput {
    /// Retained candidates in rank order.
    pub candidates: Vec<CandidateRecord>,
    pub n_scored: usize,
    pub n_low_snr: usize,
}

/// Heap entry ordered so that the top is the least outlying retained object.
struct Entry {
    seq: usize,
    record: CandidateRecord,
}

impl Entry {
    fn key_cmp(&self, lj: f64, id: &str, seq: usize) -> Ordering {
        self.record
            .log_joint
            .total_cmp(&lj)
            .then_with(|| self.record.object_id.as_str().cmp(id))
            .then_with(|| self.seq.cmp(&seq))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other.record.log_joint, &other.record.object_id, other.seq)
    }
}

/// Score a stream of feature rows and return the ranked candidates.
///
/// Rows are consumed in chunks; each chunk is scored in parallel on the
/// current rayon pool. At most `retention` records are held at any time, so
/// memory does not grow with the input. The result depends only on the input
/// rows, not on the number of workers.
pub fn score_batch<I>(model: &OutlierModel, rows: I, opts: &ScoreOptions) -> Result<ScoreOutput>
where
    I: IntoIterator<Item = Result<FeatureRow>>,
{
    if opts.chunk_size == 0 {
        return Err(Error::InvalidArgument("chunk_size must be positive".into()));
    }
    if opts.retention == Some(0) {
        return Err(Error::InvalidArgument("retention must be positive".into()));
    }
    if model.forest().n_features() != N_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "model expects {} features, rows have {N_FEATURES}",
            model.forest().n_features()
        )));
    }
    let cap = opts.retention.unwrap_or(usize::MAX);
    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    let mut out = ScoreOutput::default();
    let mut iter = rows.into_iter();
    let mut chunk: Vec<FeatureRow> = Vec::with_capacity(opts.chunk_size.min(1 << 16));
    loop {
        chunk.clear();
        for row in iter.by_ref().take(opts.chunk_size) {
            chunk.push(row?);
        }
        if chunk.is_empty() {
            break;
        }
        let scored: Vec<(Vec<f64>, f64)> = chunk
            .par_iter()
            .map(|r| {
                let v = model.votes(&r.features);
                let lj = model.log_joint(v.as_slice())?;
                Ok((v.as_slice().to_vec(), lj))
            })
            .collect::<Result<_>>()?;
        for (row, (votes, lj)) in chunk.drain(..).zip(scored) {
            let seq = out.n_scored;
            out.n_scored += 1;
            if row.snr.is_some_and(|s| s < opts.snr_floor) {
                out.n_low_snr += 1;
            }
            if heap.len() >= cap {
                let top = heap.peek().expect("cap > 0");
                if top.key_cmp(lj, &row.object_id, seq) != Ordering::Greater {
                    continue;
                }
                heap.pop();
            }
            let mut record = CandidateRecord::from_row(row, votes, lj, opts.snr_floor);
            record.band = opts.band;
            record.run_id = opts.run_id.clone();
            heap.push(Entry { seq, record });
        }
    }
    let mut entries = heap.into_vec();
    entries.sort();
    let mut candidates: Vec<CandidateRecord> = entries.into_iter().map(|e| e.record).collect();
    assign_ranks(&mut candidates);
    out.candidates = candidates;
    Ok(out)
}

/// Run `f` on a rayon pool with `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidArgument("jobs must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
