//! FIFO job queue drained by a single background executor thread.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

const LOG_TAIL: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Finetune,
    Segment,
    Assess,
    Generate,
}

impl JobKind {
    pub fn is_training(self) -> bool {
        matches!(self, JobKind::Train | JobKind::Finetune)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub log: VecDeque<String>,
    pub error: Option<String>,
}

type Work = Box<dyn FnOnce(&JobHandle) -> Result<(), String> + Send>;

#[derive(Default)]
struct Inner {
    jobs: Vec<Job>,
}

/// Handed to running work for progress reports.
#[derive(Clone)]
pub struct JobHandle {
    id: u64,
    inner: Arc<Mutex<Inner>>,
}

impl JobHandle {
    fn with_job(&self, f: impl FnOnce(&mut Job)) {
        let mut inner = self.inner.lock().unwrap();
        if let Some(job) = inner.jobs.iter_mut().find(|j| j.id == self.id) {
            if !job.status.is_terminal() {
                f(job);
            }
        }
    }

    /// Progress never moves backwards and stays within `[0, 1]`.
    pub fn progress(&self, fraction: f64, message: &str) {
        self.with_job(|job| {
            if fraction.is_finite() {
                job.progress = job.progress.max(fraction.clamp(0.0, 1.0));
            }
            if !message.is_empty() {
                if job.log.len() == LOG_TAIL {
                    job.log.pop_front();
                }
                job.log.push_back(message.to_string());
            }
        });
    }
}

#[derive(Clone)]
pub struct JobQueue {
    inner: Arc<Mutex<Inner>>,
    tx: mpsc::Sender<(u64, Work)>,
}

impl JobQueue {
    pub fn start() -> JobQueue {
        let inner = Arc::new(Mutex::new(Inner::default()));
        let (tx, rx) = mpsc::channel::<(u64, Work)>();
        let exec = Arc::clone(&inner);
        thread::Builder::new()
            .name("dial-jobs".into())
            .spawn(move || {
                for (id, work) in rx {
                    let handle = JobHandle {
                        id,
                        inner: Arc::clone(&exec),
                    };
                    handle.with_job(|j| j.status = JobStatus::Running);
                    let result =
                        std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| work(&handle)))
                            .unwrap_or_else(|_| Err("job panicked".into()));
                    handle.with_job(|j| match result {
                        Ok(()) => {
                            j.progress = 1.0;
                            j.status = JobStatus::Done;
                        }
                        Err(e) => {
                            j.log.push_back(format!("error: {e}"));
                            j.error = Some(e);
                            j.status = JobStatus::Failed;
                        }
                    });
                }
            })
            .expect("spawn job executor");
        JobQueue { inner, tx }
    }

    pub fn submit(
        &self,
        kind: JobKind,
        work: impl FnOnce(&JobHandle) -> Result<(), String> + Send + 'static,
    ) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        let id = inner.jobs.len() as u64 + 1;
        inner.jobs.push(Job {
            id,
            kind,
            status: JobStatus::Queued,
            progress: 0.0,
            log: VecDeque::new(),
            error: None,
        });
        // Sending under the lock keeps ids in queue order.
        self.tx
            .send((id, Box::new(work)))
            .expect("job executor alive");
        id
    }

    pub fn get(&self, id: u64) -> Option<Job> {
        self.inner
            .lock()
            .unwrap()
            .jobs
            .iter()
            .find(|j| j.id == id)
            .cloned()
    }

    pub fn list(&self) -> Vec<Job> {
        self.inner.lock().unwrap().jobs.clone()
    }

    /// Whether a training or finetuning job is queued or running.
    pub fn training_active(&self) -> bool {
        self.inner
            .lock()
            .unwrap()
            .jobs
            .iter()
            .any(|j| j.kind.is_training() && !j.status.is_terminal())
    }
}
