//! Model-ready view of a click log: text vectors, ranking features and
//! session roles, computed once and shared by training, evaluation and
//! baselines.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::hrnn::{Candidate, EventVectors, FeatureVector, Model};
use crate::query_log::{split_sessions, QueryEvent, SessionRole, SplitConfig, UserLog};
use crate::text_repr::{sat_doc_average, TextEncoder, TextVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedQuery {
    pub query_id: String,
    pub timestamp: i64,
    pub terms: Vec<String>,
    pub query_key: String,
    pub query_vec: Vec<f64>,
    /// Candidate documents in original order (indices into [`Dataset::doc_ids`]).
    pub docs: Vec<usize>,
    pub positions: Vec<u32>,
    pub clicked: Vec<bool>,
    pub sat: Vec<bool>,
    pub features: Vec<FeatureVector>,
    /// The same user issued this exact query earlier.
    pub repeated: bool,
    /// 1-based position of the query within its session.
    pub session_position: usize,
    pub click_entropy: f64,
}

impl PreparedQuery {
    pub fn has_sat(&self) -> bool {
        self.sat.iter().any(|&s| s)
    }

    /// Has both a relevant and an irrelevant candidate.
    pub fn is_trainable(&self) -> bool {
        self.has_sat() && self.sat.iter().any(|&s| !s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedSession {
    pub session_id: String,
    pub role: SessionRole,
    pub queries: Vec<PreparedQuery>,
    /// Per query: its vector and its SAT-doc average, the session encoder input.
    pub events: Vec<EventVectors>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedUser {
    pub user_id: String,
    pub sessions: Vec<PreparedSession>,
}

impl PreparedUser {
    pub fn has_role(&self, role: SessionRole) -> bool {
        self.sessions.iter().any(|s| s.role == role)
    }
}

/// Prepared users plus the document table their queries index into.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub users: Vec<PreparedUser>,
    pub doc_ids: Vec<String>,
    pub doc_vectors: Vec<Vec<f64>>,
    pub dim: usize,
}

impl Dataset {
    /// Builds features and vectors for every user with a supervised split.
    /// Click entropy uses SAT clicks from all users' non-test sessions.
    pub fn build(
        logs: &[UserLog],
        docs: &BTreeMap<String, Vec<String>>,
        encoder: &TextEncoder,
        split: &SplitConfig,
    ) -> Dataset {
        let roles: Vec<Vec<SessionRole>> = logs
            .iter()
            .map(|l| split_sessions(l, split).roles(l.sessions.len()))
            .collect();
        let entropy = ClickEntropy::from_logs(
            logs.iter()
                .zip(&roles)
                .flat_map(|(l, r)| l.sessions.iter().zip(r).filter(|(_, &r)| r != SessionRole::Test))
                .flat_map(|(s, _)| s.events.iter()),
        );

        let mut doc_index: HashMap<String, usize> = HashMap::new();
        let mut doc_ids = Vec::new();
        for log in logs {
            for imp in log.sessions.iter().flat_map(|s| &s.events).flat_map(|e| &e.impressions) {
                if !doc_index.contains_key(&imp.doc_id) {
                    doc_index.insert(imp.doc_id.clone(), doc_ids.len());
                    doc_ids.push(imp.doc_id.clone());
                }
            }
        }
        let dim = encoder.dim();
        let mut missing = 0usize;
        let doc_vectors: Vec<Vec<f64>> = doc_ids
            .iter()
            .map(|d| match docs.get(d) {
                Some(tokens) => encoder.represent(tokens).0,
                None => {
                    missing += 1;
                    vec![0.0; dim]
                }
            })
            .collect();
        if missing > 0 {
            log::warn!("{missing} candidate documents have no text; using zero vectors");
        }

        let users = logs
            .iter()
            .zip(&roles)
            .filter(|(_, r)| r.contains(&SessionRole::Test))
            .map(|(log, roles)| prepare_user(log, roles, &doc_index, &doc_vectors, encoder, &entropy))
            .collect();
        Dataset {
            users,
            doc_ids,
            doc_vectors,
            dim,
        }
    }

    pub fn doc(&self, idx: usize) -> &[f64] {
        &self.doc_vectors[idx]
    }

    pub fn candidates<'a>(&'a self, q: &PreparedQuery) -> Vec<Candidate<'a>> {
        q.docs
            .iter()
            .zip(&q.features)
            .map(|(&d, &f)| Candidate {
                doc: &self.doc_vectors[d],
                features: f,
            })
            .collect()
    }

    pub fn count_queries(&self, role: SessionRole, pred: impl Fn(&PreparedQuery) -> bool) -> usize {
        self.users
            .iter()
            .flat_map(|u| &u.sessions)
            .filter(|s| s.role == role)
            .flat_map(|s| &s.queries)
            .filter(|q| pred(q))
            .count()
    }
}

fn prepare_user(
    log: &UserLog,
    roles: &[SessionRole],
    doc_index: &HashMap<String, usize>,
    doc_vectors: &[Vec<f64>],
    encoder: &TextEncoder,
    entropy: &ClickEntropy,
) -> PreparedUser {
    let mut doc_clicks: HashMap<usize, u32> = HashMap::new();
    let mut query_doc_clicks: HashMap<(String, usize), u32> = HashMap::new();
    let mut seen_queries: std::collections::HashSet<String> = Default::default();
    let sessions = log
        .sessions
        .iter()
        .zip(roles)
        .map(|(session, &role)| {
            let mut queries = Vec::with_capacity(session.events.len());
            let mut events = Vec::with_capacity(session.events.len());
            for (n, ev) in session.events.iter().enumerate() {
                let key = ev.query_key();
                let docs: Vec<usize> = ev.impressions.iter().map(|i| doc_index[&i.doc_id]).collect();
                let h = entropy.get(&key);
                let features = ev
                    .impressions
                    .iter()
                    .zip(&docs)
                    .map(|(imp, d)| {
                        FeatureVector::new(
                            imp.position,
                            doc_clicks.get(d).copied().unwrap_or(0),
                            query_doc_clicks.get(&(key.clone(), *d)).copied().unwrap_or(0),
                            h,
                        )
                    })
                    .collect();
                let query_vec = encoder.represent(&ev.terms).0;
                let sat_vecs: Vec<TextVector> = ev
                    .impressions
                    .iter()
                    .zip(&docs)
                    .filter(|(i, _)| i.sat)
                    .map(|(_, &d)| TextVector(doc_vectors[d].clone()))
                    .collect();
                let sat_doc = sat_doc_average(&sat_vecs.iter().collect::<Vec<_>>(), encoder.dim()).0;
                events.push(EventVectors {
                    query: query_vec.clone(),
                    sat_doc,
                });
                queries.push(PreparedQuery {
                    query_id: ev.query_id.clone(),
                    timestamp: ev.timestamp,
                    terms: ev.terms.clone(),
                    repeated: seen_queries.contains(&key),
                    query_key: key.clone(),
                    query_vec,
                    positions: ev.impressions.iter().map(|i| i.position).collect(),
                    clicked: ev.impressions.iter().map(|i| i.clicked).collect(),
                    sat: ev.impressions.iter().map(|i| i.sat).collect(),
                    docs: docs.clone(),
                    features,
                    session_position: n + 1,
                    click_entropy: h,
                });
                // history counters advance only after the query's features are fixed
                for (imp, d) in ev.impressions.iter().zip(&docs) {
                    if imp.clicked {
                        *doc_clicks.entry(*d).or_default() += 1;
                        *query_doc_clicks.entry((key.clone(), *d)).or_default() += 1;
                    }
                }
                seen_queries.insert(key);
            }
            PreparedSession {
                session_id: session.session_id.clone(),
                role,
                queries,
                events,
            }
        })
        .collect();
    PreparedUser {
        user_id: log.user_id.clone(),
        sessions,
    }
}

/// Per-query click entropy in bits over SAT-clicked documents.
#[derive(Clone, Debug, Default)]
pub struct ClickEntropy {
    values: HashMap<String, f64>,
}

impl ClickEntropy {
    pub fn from_logs<'a>(events: impl Iterator<Item = &'a QueryEvent>) -> Self {
        let mut counts: HashMap<String, BTreeMap<&'a str, u64>> = HashMap::new();
        for ev in events {
            let entry = counts.entry(ev.query_key()).or_default();
            for d in ev.sat_docs() {
                *entry.entry(d).or_default() += 1;
            }
        }
        let values = counts
            .into_iter()
            .map(|(q, c)| (q, entropy_bits(c.values().copied())))
            .collect();
        ClickEntropy { values }
    }

    /// Zero for queries never seen (or never SAT-clicked).
    pub fn get(&self, query_key: &str) -> f64 {
        self.values.get(query_key).copied().unwrap_or(0.0)
    }
}

/// `-Σ p log2 p` of the normalised counts; zero for no mass.
pub fn entropy_bits(counts: impl Iterator<Item = u64>) -> f64 {
    let counts: Vec<u64> = counts.filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// User-level states `h2_1..h2_M` after each of the user's sessions, for
/// incremental scoring. Empty for models without a long-term term.
pub fn long_state_prefixes(model: &Model, user: &PreparedUser) -> Vec<Vec<f64>> {
    if !model.variant().uses_long_term() {
        return Vec::new();
    }
    let h1s: Vec<Vec<f64>> = user.sessions.iter().map(|s| model.session_vector(&s.events)).collect();
    model.encode_history(&h1s)
}

/// Attention weights over sessions `0..m` for query `n` of session `m`.
/// Empty when the user has no earlier session or the model has no
/// long-term term.
pub fn query_attention(model: &Model, user: &PreparedUser, m: usize, n: usize) -> Vec<f64> {
    let long = long_state_prefixes(model, user);
    let s = &user.sessions[m];
    let hist = &long[..m.min(long.len())];
    model.interest_state(hist, &s.events[..n], &s.queries[n].query_vec).attention_weights
}

/// Model scores for every query in sessions matching `role`, in order:
/// `(session index, query index, scores)`.
pub fn score_user(
    model: &Model,
    data: &Dataset,
    user: &PreparedUser,
    role: impl Fn(SessionRole) -> bool,
    query: impl Fn(&PreparedQuery) -> bool,
) -> Vec<(usize, usize, Vec<f64>)> {
    if !user.sessions.iter().any(|s| role(s.role)) {
        return Vec::new();
    }
    let long = long_state_prefixes(model, user);
    let mut out = Vec::new();
    for (m, s) in user.sessions.iter().enumerate() {
        if !role(s.role) {
            continue;
        }
        let hist = &long[..m.min(long.len())];
        for (n, q) in s.queries.iter().enumerate() {
            if !query(q) {
                continue;
            }
            let state = model.interest_state(hist, &s.events[..n], &q.query_vec);
            out.push((m, n, model.score_candidates(&state, &data.candidates(q))));
        }
    }
    out
}
