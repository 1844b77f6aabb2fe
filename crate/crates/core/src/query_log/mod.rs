//! Click-log data model: users, sessions, query events and their impressions.

mod ingest;
mod split;
mod tokenize;

pub use ingest::{
    ingest_log, parse_log, read_documents, write_log, ClickRecord, DocumentRecord, IngestOptions,
    LogFormat, LogRecord, ResultRecord,
};
pub use split::{filter_users, split_sessions, DatasetSplit, ProfileBoundary, SessionRole, SplitConfig};
pub use tokenize::Tokenizer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dwell time (seconds) that a click must strictly exceed to count as satisfied.
pub const SAT_DWELL_SECONDS: f64 = 30.0;

/// Maximum result-list length kept per query.
pub const MAX_RESULTS: usize = 20;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate query event (user {user}, session {session}, qid {qid})")]
    Duplicate {
        user: String,
        session: String,
        qid: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub doc_id: String,
    /// Original rank, starting at 1.
    pub position: u32,
    pub clicked: bool,
    pub dwell_seconds: f64,
    /// Timestamp of the (latest) click on this result, if clicked.
    pub click_ts: Option<i64>,
    pub is_last_click_in_session: bool,
    pub sat: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEvent {
    pub query_id: String,
    pub timestamp: i64,
    pub terms: Vec<String>,
    /// Ordered by position.
    pub impressions: Vec<Impression>,
}

impl QueryEvent {
    /// Normalised query text used for exact-match identity.
    pub fn query_key(&self) -> String {
        self.terms.join(" ")
    }

    pub fn has_sat(&self) -> bool {
        self.impressions.iter().any(|i| i.sat)
    }

    pub fn sat_docs(&self) -> impl Iterator<Item = &str> {
        self.impressions
            .iter()
            .filter(|i| i.sat)
            .map(|i| i.doc_id.as_str())
    }

    pub fn clicked_docs(&self) -> impl Iterator<Item = &str> {
        self.impressions
            .iter()
            .filter(|i| i.clicked)
            .map(|i| i.doc_id.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    /// Ordered by timestamp.
    pub events: Vec<QueryEvent>,
}

impl Session {
    pub fn start(&self) -> i64 {
        self.events.first().map_or(i64::MIN, |e| e.timestamp)
    }

    pub fn end(&self) -> i64 {
        self.events.last().map_or(i64::MIN, |e| e.timestamp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserLog {
    pub user_id: String,
    /// Ordered by first-event timestamp.
    pub sessions: Vec<Session>,
}

impl UserLog {
    pub fn num_events(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }
}

/// Which click is "the last one" for the SAT rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LastClickScope {
    /// The latest click across the whole session.
    #[default]
    Session,
    /// The latest click under each query.
    Query,
}

/// Marks the last click according to `scope`, overwriting previous marks.
pub fn mark_last_clicks(log: &mut UserLog, scope: LastClickScope) {
    for session in &mut log.sessions {
        for imp in session.events.iter_mut().flat_map(|e| e.impressions.iter_mut()) {
            imp.is_last_click_in_session = false;
        }
        match scope {
            LastClickScope::Session => {
                let mut last: Option<(usize, usize, i64)> = None;
                for (ei, ev) in session.events.iter().enumerate() {
                    for (ii, imp) in ev.impressions.iter().enumerate() {
                        if let Some(ts) = imp.click_ts.filter(|_| imp.clicked) {
                            if last.is_none_or(|(_, _, best)| ts >= best) {
                                last = Some((ei, ii, ts));
                            }
                        }
                    }
                }
                if let Some((ei, ii, _)) = last {
                    session.events[ei].impressions[ii].is_last_click_in_session = true;
                }
            }
            LastClickScope::Query => {
                for ev in &mut session.events {
                    let last = ev
                        .impressions
                        .iter()
                        .enumerate()
                        .filter(|(_, i)| i.clicked)
                        .filter_map(|(k, i)| i.click_ts.map(|ts| (ts, k)))
                        .max();
                    if let Some((_, k)) = last {
                        ev.impressions[k].is_last_click_in_session = true;
                    }
                }
            }
        }
    }
}

/// `sat = clicked && (dwell > 30s || last click)`.
pub fn label_sat_clicks(mut log: UserLog) -> UserLog {
    for imp in log
        .sessions
        .iter_mut()
        .flat_map(|s| s.events.iter_mut())
        .flat_map(|e| e.impressions.iter_mut())
    {
        imp.sat = imp.clicked
            && (imp.dwell_seconds > SAT_DWELL_SECONDS || imp.is_last_click_in_session);
    }
    log
}
