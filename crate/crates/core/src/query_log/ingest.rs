use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    label_sat_clicks, mark_last_clicks, Impression, LastClickScope, LogError, QueryEvent, Session,
    Tokenizer, UserLog, MAX_RESULTS,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LogFormat {
    #[default]
    Jsonl,
}

/// One line of the JSON-Lines click log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    pub qid: String,
    pub ts: i64,
    pub query: String,
    pub results: Vec<ResultRecord>,
    #[serde(default)]
    pub clicks: Vec<ClickRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub doc: String,
    pub pos: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickRecord {
    pub doc: String,
    pub ts: i64,
    pub dwell: f64,
}

/// One line of the companion document file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub format: LogFormat,
    pub tokenizer: Tokenizer,
    /// Records without a session id are segmented by this inactivity gap
    /// (seconds). `None` makes a missing session id an error.
    pub session_gap: Option<i64>,
    pub last_click_scope: LastClickScope,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            format: LogFormat::Jsonl,
            tokenizer: Tokenizer::default(),
            session_gap: None,
            last_click_scope: LastClickScope::Session,
        }
    }
}

impl IngestOptions {
    /// 30-minute inactivity segmentation for logs without session ids.
    pub fn with_gap_segmentation(mut self) -> Self {
        self.session_gap = Some(30 * 60);
        self
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads, validates, groups and SAT-labels a click log.
pub fn ingest_log(path: &Path, opts: &IngestOptions) -> Result<Vec<UserLog>, LogError> {
    let file = File::open(path).map_err(io_err(path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    parse_log(&lines, opts)
}

struct ParsedEvent {
    user: String,
    session: Option<String>,
    event: QueryEvent,
}

fn parse_line(line_no: usize, line: &str, tok: &Tokenizer) -> Result<Option<ParsedEvent>, LogError> {
    let err = |message: String| LogError::Parse {
        line: line_no,
        message,
    };
    let rec: LogRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;

    let mut results = rec.results;
    results.sort_by_key(|r| r.pos);
    if results.len() > MAX_RESULTS {
        return Err(err(format!("{} results exceed the limit of {MAX_RESULTS}", results.len())));
    }
    for (k, r) in results.iter().enumerate() {
        if r.pos as usize != k + 1 {
            return Err(err(format!(
                "result positions must be 1..{} without gaps or repeats",
                results.len()
            )));
        }
    }
    let mut impressions: Vec<Impression> = results
        .into_iter()
        .map(|r| Impression {
            doc_id: r.doc,
            position: r.pos,
            clicked: false,
            dwell_seconds: 0.0,
            click_ts: None,
            is_last_click_in_session: false,
            sat: false,
        })
        .collect();
    for c in rec.clicks {
        if !(c.dwell >= 0.0) {
            return Err(err(format!("negative dwell on click of {}", c.doc)));
        }
        let imp = impressions
            .iter_mut()
            .find(|i| i.doc_id == c.doc)
            .ok_or_else(|| err(format!("click on {} which is not among the results", c.doc)))?;
        imp.clicked = true;
        imp.dwell_seconds = imp.dwell_seconds.max(c.dwell);
        imp.click_ts = Some(imp.click_ts.map_or(c.ts, |t| t.max(c.ts)));
    }

    let terms = tok.tokenize(&rec.query);
    if terms.is_empty() {
        log::warn!("line {line_no}: query {:?} is empty after preprocessing; skipped", rec.query);
        return Ok(None);
    }
    Ok(Some(ParsedEvent {
        user: rec.user,
        session: rec.session,
        event: QueryEvent {
            query_id: rec.qid,
            timestamp: rec.ts,
            terms,
            impressions,
        },
    }))
}

/// Parses already-split lines. Blank lines are ignored.
pub fn parse_log<S: AsRef<str> + Sync>(lines: &[S], opts: &IngestOptions) -> Result<Vec<UserLog>, LogError> {
    let LogFormat::Jsonl = opts.format;
    let parsed: Vec<Result<Option<ParsedEvent>, LogError>> = lines
        .par_iter()
        .enumerate()
        .map(|(i, l)| {
            let l = l.as_ref().trim();
            if l.is_empty() {
                Ok(None)
            } else {
                parse_line(i + 1, l, &opts.tokenizer)
            }
        })
        .collect();

    let mut by_user: BTreeMap<String, BTreeMap<String, Vec<QueryEvent>>> = BTreeMap::new();
    let mut unsessioned: BTreeMap<String, Vec<QueryEvent>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, p) in parsed.into_iter().enumerate() {
        let Some(p) = p? else { continue };
        match p.session {
            Some(session) => {
                if !seen.insert((p.user.clone(), session.clone(), p.event.query_id.clone())) {
                    return Err(LogError::Duplicate {
                        user: p.user,
                        session,
                        qid: p.event.query_id,
                    });
                }
                by_user
                    .entry(p.user)
                    .or_default()
                    .entry(session)
                    .or_default()
                    .push(p.event);
            }
            None if opts.session_gap.is_some() => {
                unsessioned.entry(p.user).or_default().push(p.event);
            }
            None => {
                return Err(LogError::Parse {
                    line: i + 1,
                    message: "missing field `session`".into(),
                })
            }
        }
    }

    if let Some(gap) = opts.session_gap {
        for (user, mut events) in unsessioned {
            events.sort_by(|a, b| (a.timestamp, &a.query_id).cmp(&(b.timestamp, &b.query_id)));
            let sessions = by_user.entry(user.clone()).or_default();
            let mut k = 0;
            let mut prev: Option<i64> = None;
            for ev in events {
                if prev.is_some_and(|p| ev.timestamp - p > gap) {
                    k += 1;
                }
                prev = Some(ev.timestamp);
                let sid = format!("{user}#gap{k}");
                if !seen.insert((user.clone(), sid.clone(), ev.query_id.clone())) {
                    return Err(LogError::Duplicate {
                        user,
                        session: sid,
                        qid: ev.query_id,
                    });
                }
                sessions.entry(sid).or_default().push(ev);
            }
        }
    }

    let logs = by_user
        .into_iter()
        .map(|(user_id, sessions)| {
            let mut sessions: Vec<Session> = sessions
                .into_iter()
                .map(|(session_id, mut events)| {
                    events.sort_by(|a, b| (a.timestamp, &a.query_id).cmp(&(b.timestamp, &b.query_id)));
                    Session { session_id, events }
                })
                .collect();
            sessions.sort_by(|a, b| (a.start(), &a.session_id).cmp(&(b.start(), &b.session_id)));
            let mut log = UserLog { user_id, sessions };
            mark_last_clicks(&mut log, opts.last_click_scope);
            label_sat_clicks(log)
        })
        .collect();
    Ok(logs)
}

/// Writes logs back in the JSON-Lines record format, one event per line.
pub fn write_log<W: Write>(logs: &[UserLog], mut out: W) -> std::io::Result<()> {
    for log in logs {
        for s in &log.sessions {
            for e in &s.events {
                let rec = LogRecord {
                    user: log.user_id.clone(),
                    session: Some(s.session_id.clone()),
                    qid: e.query_id.clone(),
                    ts: e.timestamp,
                    query: e.query_key(),
                    results: e
                        .impressions
                        .iter()
                        .map(|i| ResultRecord {
                            doc: i.doc_id.clone(),
                            pos: i.position,
                        })
                        .collect(),
                    clicks: e
                        .impressions
                        .iter()
                        .filter(|i| i.clicked)
                        .map(|i| ClickRecord {
                            doc: i.doc_id.clone(),
                            ts: i.click_ts.unwrap_or(e.timestamp),
                            dwell: i.dwell_seconds,
                        })
                        .collect(),
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()
}

/// Loads the document file into `doc id -> normalised tokens`.
pub fn read_documents(path: &Path, tok: &Tokenizer) -> Result<BTreeMap<String, Vec<String>>, LogError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut docs = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.insert(rec.doc, tok.normalize_tokens(&rec.tokens));
    }
    Ok(docs)
}
