use std::fmt;
use std::time::{Duration, Instant};

use crossbeam::channel::{Receiver, RecvTimeoutError};
use serde::Serialize;

use super::ExecError;
use crate::index::SearchResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Search,
    Insert,
}

/// Where a request ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    Search(usize),
    Insertion,
    /// The single FIFO lane of serialized mode.
    Serial,
    /// Never ran (rejected at submission).
    None,
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lane::Search(i) => write!(f, "search-{i}"),
            Lane::Insertion => f.write_str("insertion"),
            Lane::Serial => f.write_str("serial"),
            Lane::None => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    /// One result per query, in submission order.
    Search(Vec<SearchResult>),
    /// Assigned id per vector; `None` for rejected duplicates.
    Insert(Vec<Option<u64>>),
}

impl Response {
    pub fn result_count(&self) -> usize {
        match self {
            Response::Search(r) => r.iter().map(SearchResult::len).sum(),
            Response::Insert(a) => a.iter().filter(|a| a.is_some()).count(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Timing {
    pub submitted: Instant,
    pub started: Instant,
    pub finished: Instant,
    pub lane: Lane,
}

impl Timing {
    /// Completion minus submission.
    pub fn latency(&self) -> Duration {
        self.finished - self.submitted
    }

    pub fn queued(&self) -> Duration {
        self.started.saturating_duration_since(self.submitted)
    }

    pub fn executing(&self) -> Duration {
        self.finished.saturating_duration_since(self.started)
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub result: Result<Response, ExecError>,
    pub timing: Timing,
}

/// Handle to a submitted request.
#[derive(Debug)]
pub struct Ticket {
    pub(crate) kind: RequestKind,
    pub(crate) submitted: Instant,
    pub(crate) rx: Receiver<Completion>,
}

impl Ticket {
    pub fn kind(&self) -> RequestKind {
        self.kind
    }

    pub fn submitted(&self) -> Instant {
        self.submitted
    }

    /// Blocks until the request completes.
    pub fn wait(self) -> Completion {
        self.rx.recv().unwrap_or_else(|_| self.abandoned())
    }

    /// `None` if the request is still running after `timeout`.
    pub fn wait_timeout(&self, timeout: Duration) -> Option<Completion> {
        match self.rx.recv_timeout(timeout) {
            Ok(c) => Some(c),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => Some(self.abandoned()),
        }
    }

    fn abandoned(&self) -> Completion {
        let now = Instant::now();
        Completion {
            result: Err(ExecError::ShutDown),
            timing: Timing { submitted: self.submitted, started: now, finished: now, lane: Lane::None },
        }
    }
}
