//! Retrain jobs: queued in memory, mirrored to `<runs>/.jobs/<id>.json`, and
//! executed one at a time by a background worker.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rfbn_core::pipeline::RunStore;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainJob {
    pub job_id: String,
    pub source_run: String,
    pub groups: Vec<String>,
    pub status: JobStatus,
    /// The new run, once done.
    pub result_run: Option<String>,
    /// Retraining iteration of the new run.
    pub iteration: Option<u32>,
    pub error: Option<String>,
    pub queued_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
}

pub(crate) struct JobQueue {
    jobs: Mutex<BTreeMap<u64, RetrainJob>>,
    dir: PathBuf,
    tx: mpsc::UnboundedSender<u64>,
}

fn job_number(id: &str) -> Option<u64> {
    id.strip_prefix("job-")?.parse().ok()
}

impl JobQueue {
    /// Load earlier jobs and start the worker. Jobs left queued or running by
    /// a previous process are marked failed.
    pub(crate) fn start(store: Arc<RunStore>) -> rfbn_core::Result<Arc<JobQueue>> {
        let dir = store.root().join(".jobs");
        fs::create_dir_all(&dir).map_err(|e| rfbn_core::Error::io(&dir, e))?;
        let mut jobs = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(|e| rfbn_core::Error::io(&dir, e))? {
            let path = entry.map_err(|e| rfbn_core::Error::io(&dir, e))?.path();
            let Ok(bytes) = fs::read(&path) else { continue };
            let Ok(mut job) = serde_json::from_slice::<RetrainJob>(&bytes) else { continue };
            let Some(n) = job_number(&job.job_id) else { continue };
            if matches!(job.status, JobStatus::Queued | JobStatus::Running) {
                job.status = JobStatus::Failed;
                job.error = Some("interrupted by a service restart".into());
                job.finished_at = Some(Utc::now());
            }
            jobs.insert(n, job);
        }
        let (tx, rx) = mpsc::unbounded_channel();
        let queue = Arc::new(JobQueue {
            jobs: Mutex::new(jobs),
            dir,
            tx,
        });
        for job in queue.jobs.lock().expect("job table").values() {
            queue.persist(job);
        }
        tokio::spawn(worker(queue.clone(), store, rx));
        Ok(queue)
    }

    pub(crate) fn submit(&self, source_run: &str, groups: Vec<String>) -> RetrainJob {
        let mut jobs = self.jobs.lock().expect("job table");
        let n = jobs.keys().next_back().map_or(1, |k| k + 1);
        let job = RetrainJob {
            job_id: format!("job-{n}"),
            source_run: source_run.to_string(),
            groups,
            status: JobStatus::Queued,
            result_run: None,
            iteration: None,
            error: None,
            queued_at: Utc::now(),
            started_at: None,
            finished_at: None,
        };
        self.persist(&job);
        jobs.insert(n, job.clone());
        drop(jobs);
        let _ = self.tx.send(n);
        job
    }

    pub(crate) fn get(&self, job_id: &str) -> Option<RetrainJob> {
        let n = job_number(job_id)?;
        self.jobs.lock().expect("job table").get(&n).cloned()
    }

    fn update(&self, n: u64, f: impl FnOnce(&mut RetrainJob)) -> Option<RetrainJob> {
        let mut jobs = self.jobs.lock().expect("job table");
        let job = jobs.get_mut(&n)?;
        f(job);
        self.persist(job);
        Some(job.clone())
    }

    fn persist(&self, job: &RetrainJob) {
        if let Ok(bytes) = serde_json::to_vec_pretty(job) {
            let _ = fs::write(self.dir.join(format!("{}.json", job.job_id)), bytes);
        }
    }
}

async fn worker(queue: Arc<JobQueue>, store: Arc<RunStore>, mut rx: mpsc::UnboundedReceiver<u64>) {
    while let Some(n) = rx.recv().await {
        let Some(job) = queue.update(n, |j| {
            j.status = JobStatus::Running;
            j.started_at = Some(Utc::now());
        }) else {
            continue;
        };
        let store = store.clone();
        let result = tokio::task::spawn_blocking(move || store.retrain(&job.source_run, Some(&job.groups))).await;
        queue.update(n, |j| {
            j.finished_at = Some(Utc::now());
            match result {
                Ok(Ok(info)) => {
                    j.status = JobStatus::Done;
                    j.iteration = Some(info.iteration);
                    j.result_run = Some(info.run_id);
                }
                Ok(Err(e)) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e.to_string());
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(format!("retrain task panicked: {e}"));
                }
            }
        });
    }
}
