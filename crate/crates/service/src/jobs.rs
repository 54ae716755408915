use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    /// Refit the choice model only.
    Refit,
    TrainReference,
    /// Refit and retrain the reference network.
    Iterate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub id: u64,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub error: Option<String>,
    /// Iteration index produced by a finished job.
    pub iteration: Option<usize>,
}

/// Job registry. At most one job is non-terminal at a time.
#[derive(Debug, Default)]
pub(crate) struct JobTable {
    next: u64,
    jobs: BTreeMap<u64, JobState>,
}

impl JobTable {
    pub fn get(&self, id: u64) -> Option<JobState> {
        self.jobs.get(&id).cloned()
    }

    pub fn active(&self) -> Option<u64> {
        self.jobs.values().find(|j| !j.status.is_terminal()).map(|j| j.id)
    }

    /// Queues a job, or returns the id of the one still in flight.
    pub fn start(&mut self, kind: JobKind) -> Result<u64, u64> {
        if let Some(running) = self.active() {
            return Err(running);
        }
        self.next += 1;
        let id = self.next;
        self.jobs.insert(
            id,
            JobState {
                id,
                kind,
                status: JobStatus::Queued,
                progress: 0.0,
                error: None,
                iteration: None,
            },
        );
        Ok(id)
    }

    fn update(&mut self, id: u64, f: impl FnOnce(&mut JobState)) {
        if let Some(j) = self.jobs.get_mut(&id) {
            if !j.status.is_terminal() {
                f(j);
            }
        }
    }

    pub fn running(&mut self, id: u64, progress: f64) {
        self.update(id, |j| {
            j.status = JobStatus::Running;
            j.progress = progress;
        });
    }

    pub fn finish(&mut self, id: u64, iteration: Option<usize>) {
        self.update(id, |j| {
            j.status = JobStatus::Done;
            j.progress = 1.0;
            j.iteration = iteration;
        });
    }

    pub fn fail(&mut self, id: u64, error: String) {
        self.update(id, |j| {
            j.status = JobStatus::Failed;
            j.error = Some(error);
        });
    }
}
