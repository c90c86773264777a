use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use gapscan::pipeline::Session;
use serde::Serialize;
use serde_json::Value;
use tokio::sync::Mutex;

use crate::config::ServerConfig;
use crate::error::ApiError;

/// One session: mutations queue on `writer`; reads use the last published snapshot.
pub struct SessionHandle {
    writer: Arc<Mutex<Session>>,
    snapshot: RwLock<Arc<Session>>,
}

impl SessionHandle {
    pub fn new(session: Session) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(session.clone())),
            writer: Arc::new(Mutex::new(session)),
        }
    }

    /// The state after the last completed mutation; never waits on a running one.
    pub fn read(&self) -> Arc<Session> {
        Arc::clone(&self.snapshot.read().expect("snapshot lock"))
    }

    /// Runs `f` on a blocking thread once every earlier mutation has finished.
    pub async fn write<T, F>(self: &Arc<Self>, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> gapscan::Result<T> + Send + 'static,
    {
        let mut guard = Arc::clone(&self.writer).lock_owned().await;
        let handle = Arc::clone(self);
        let out = tokio::task::spawn_blocking(move || {
            let out = f(&mut guard);
            *handle.snapshot.write().expect("snapshot lock") = Arc::new(guard.clone());
            out
        })
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
        Ok(out?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct Job {
    pub id: u64,
    pub session: u64,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

pub struct AppState {
    pub config: ServerConfig,
    sessions: RwLock<HashMap<u64, Arc<SessionHandle>>>,
    jobs: RwLock<HashMap<u64, Job>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            config,
            sessions: RwLock::new(HashMap::new()),
            jobs: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    fn fresh_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    pub fn insert_session(&self, session: Session) -> u64 {
        let id = self.fresh_id();
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(id, Arc::new(SessionHandle::new(session)));
        id
    }

    pub fn session(&self, id: u64) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn remove_session(&self, id: u64) -> Result<(), ApiError> {
        self.sessions
            .write()
            .expect("sessions lock")
            .remove(&id)
            .map(|_| ())
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn session_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.sessions.read().expect("sessions lock").keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn start_job(&self, session: u64) -> u64 {
        let id = self.fresh_id();
        let job = Job {
            id,
            session,
            status: JobStatus::Running,
            result: None,
            error: None,
        };
        self.jobs.write().expect("jobs lock").insert(id, job);
        id
    }

    pub fn finish_job(&self, id: u64, outcome: Result<Value, ApiError>) {
        let mut jobs = self.jobs.write().expect("jobs lock");
        if let Some(job) = jobs.get_mut(&id) {
            match outcome {
                Ok(v) => {
                    job.status = JobStatus::Done;
                    job.result = Some(v);
                }
                Err(e) => {
                    job.status = JobStatus::Failed;
                    job.error = Some(serde_json::json!({ "error": e.code, "message": e.message }));
                }
            }
        }
    }

    pub fn job(&self, id: u64) -> Result<Job, ApiError> {
        self.jobs
            .read()
            .expect("jobs lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("job", id))
    }
}
