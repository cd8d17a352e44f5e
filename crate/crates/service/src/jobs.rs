use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;

use dashmap::DashSet;
use holter_core::canonical::content_digest;
use holter_core::domain::PatientBundle;
use holter_core::pipeline::{format_time, JobState, Pipeline};
use holter_core::report::Report;
use serde::{Deserialize, Serialize};

use crate::store::{FileStore, StoreError};

pub const JOBS: &str = "jobs";
pub const BUNDLES: &str = "bundles";
pub const REPORTS: &str = "reports";

/// A persisted pipeline job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub patient_id: String,
    /// Store key of the submitted bundle.
    pub bundle_ref: String,
    /// Content digest of the submitted bundle.
    pub bundle_digest: String,
    pub config_id: String,
    pub state: JobState,
    #[serde(default)]
    pub report_ref: Option<String>,
    pub created_at: String,
    pub updated_at: String,
}

/// Test hook: abort the process right after a point in a job's life.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrashPoint {
    /// After the job state with this name is persisted.
    State(String),
    /// After the report is written, before the job is marked done.
    ReportWritten,
}

impl CrashPoint {
    /// `report_written`, or a job state name such as `RunningFindings`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "" => None,
            "report_written" => Some(CrashPoint::ReportWritten),
            other => Some(CrashPoint::State(other.to_string())),
        }
    }
}

fn now() -> String {
    format_time(chrono::Utc::now())
}

/// Owns the job queue and the worker threads. The queue itself is the set of
/// Queued job records, so it survives restarts.
pub struct JobRunner {
    store: FileStore,
    pipelines: Arc<BTreeMap<String, Pipeline>>,
    sender: Mutex<Sender<String>>,
    claimed: DashSet<String>,
    crash: Option<CrashPoint>,
}

impl JobRunner {
    /// Starts `workers` threads and re-queues every job a previous process
    /// left unfinished.
    pub fn start(
        store: FileStore,
        pipelines: BTreeMap<String, Pipeline>,
        workers: usize,
        crash: Option<CrashPoint>,
    ) -> Result<Arc<Self>, StoreError> {
        let (tx, rx) = mpsc::channel::<String>();
        let runner = Arc::new(Self {
            store,
            pipelines: Arc::new(pipelines),
            sender: Mutex::new(tx),
            claimed: DashSet::new(),
            crash,
        });
        let rx = Arc::new(Mutex::new(rx));
        for i in 0..workers.max(1) {
            let runner = Arc::clone(&runner);
            let rx: Arc<Mutex<Receiver<String>>> = Arc::clone(&rx);
            thread::Builder::new()
                .name(format!("job-worker-{i}"))
                .spawn(move || loop {
                    let next = rx.lock().unwrap_or_else(|p| p.into_inner()).recv();
                    match next {
                        Ok(id) => runner.process(&id),
                        Err(_) => break,
                    }
                })
                .expect("spawn worker");
        }
        runner.recover()?;
        Ok(runner)
    }

    pub fn store(&self) -> &FileStore {
        &self.store
    }

    pub fn has_config(&self, id: &str) -> bool {
        self.pipelines.contains_key(id)
    }

    pub fn pipeline(&self, id: &str) -> Option<&Pipeline> {
        self.pipelines.get(id)
    }

    fn recover(&self) -> Result<(), StoreError> {
        for id in self.store.list(JOBS)? {
            let Some(rec) = self.store.get::<Job>(JOBS, &id)? else {
                continue;
            };
            if rec.document.state.is_terminal() {
                continue;
            }
            if rec.document.state != JobState::Queued {
                tracing::info!(job = %id, from = %rec.document.state, "re-queueing interrupted job");
                self.set_state(&id, JobState::Queued, None)?;
            }
            self.enqueue(&id);
        }
        Ok(())
    }

    pub fn enqueue(&self, job_id: &str) {
        let _ = self.sender.lock().unwrap_or_else(|p| p.into_inner()).send(job_id.to_string());
    }

    /// Persists a new Queued job and schedules it.
    pub fn submit(&self, job_id: &str, bundle: &PatientBundle, config_id: &str) -> Result<Job, StoreError> {
        let at = now();
        self.store.update::<PatientBundle, (), _>(BUNDLES, job_id, |_| Ok(bundle.clone()))?.ok();
        let job = Job {
            job_id: job_id.to_string(),
            patient_id: bundle.patient_id().to_string(),
            bundle_ref: format!("{BUNDLES}/{job_id}"),
            bundle_digest: content_digest(bundle),
            config_id: config_id.to_string(),
            state: JobState::Queued,
            report_ref: None,
            created_at: at.clone(),
            updated_at: at,
        };
        self.store.put(JOBS, job_id, None, &job)?;
        self.enqueue(job_id);
        Ok(job)
    }

    fn set_state(&self, job_id: &str, state: JobState, report_ref: Option<String>) -> Result<(), StoreError> {
        self.store
            .update::<Job, &'static str, _>(JOBS, job_id, |job| {
                let mut job = job.ok_or("job vanished")?;
                job.state = state;
                if report_ref.is_some() {
                    job.report_ref = report_ref;
                }
                job.updated_at = now();
                Ok(job)
            })?
            .map_err(|e| StoreError::Corrupt {
                path: self.store.root().join(JOBS).join(job_id),
                message: e.to_string(),
            })?;
        Ok(())
    }

    fn crash_if(&self, point: &CrashPoint) {
        if self.crash.as_ref() == Some(point) {
            tracing::warn!(?point, "crash injection");
            std::process::abort();
        }
    }

    fn process(&self, job_id: &str) {
        if !self.claimed.insert(job_id.to_string()) {
            return;
        }
        if let Err(e) = self.execute(job_id) {
            tracing::error!(job = %job_id, error = %e, "job failed on storage");
        }
        self.claimed.remove(job_id);
    }

    fn execute(&self, job_id: &str) -> Result<(), StoreError> {
        let Some(job) = self.store.get::<Job>(JOBS, job_id)? else {
            return Ok(());
        };
        if job.document.state != JobState::Queued {
            return Ok(());
        }
        let job = job.document;
        let fail = |reason: String| self.set_state(job_id, JobState::Failed { reason }, None);
        let Some(pipeline) = self.pipelines.get(&job.config_id) else {
            return fail(format!("unknown config `{}`", job.config_id));
        };
        let Some(bundle) = self.store.get::<PatientBundle>(BUNDLES, job_id)? else {
            return fail("bundle missing from store".into());
        };
        // Terminal states are persisted below, after the report is written.
        let observer = |s: &JobState| {
            if s.is_terminal() {
                return;
            }
            if let Err(e) = self.set_state(job_id, s.clone(), None) {
                tracing::error!(job = %job_id, error = %e, "cannot persist state");
            }
            self.crash_if(&CrashPoint::State(s.name().to_string()));
        };
        let outcome = pipeline.run(&bundle.document, &observer);
        if let Some(report) = &outcome.report {
            self.store.update::<Report, (), _>(REPORTS, job_id, |_| Ok(report.clone()))?.ok();
            self.crash_if(&CrashPoint::ReportWritten);
            self.set_state(job_id, outcome.state.clone(), Some(format!("{REPORTS}/{job_id}")))?;
        } else {
            self.set_state(job_id, outcome.state.clone(), None)?;
        }
        tracing::info!(job = %job_id, state = %outcome.state, "job finished");
        Ok(())
    }
}
