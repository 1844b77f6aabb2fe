use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::dataset::{Dataset, PreparedQuery, PreparedUser};
use crate::evaluation::{selected, Reranker};
use crate::query_log::SessionRole;

use super::fuse_with_original;

pub const DEFAULT_BETA: f64 = 0.5;

/// Timestamped clicks keyed by user and normalised query text. Every lookup
/// takes a cut-off time and only counts strictly earlier clicks.
#[derive(Clone, Debug, Default)]
pub struct ClickStore {
    /// (user, query) -> doc -> click times.
    by_user_query: HashMap<(String, String), BTreeMap<String, Vec<i64>>>,
    /// (query, doc) -> click times over all users.
    by_query_doc: HashMap<(String, String), Vec<i64>>,
}

fn count_before(times: &[i64], before: i64) -> u64 {
    times.iter().filter(|&&t| t < before).count() as u64
}

impl ClickStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_click(&mut self, user: &str, query: &str, doc: &str, ts: i64) {
        self.by_user_query
            .entry((user.to_string(), query.to_string()))
            .or_default()
            .entry(doc.to_string())
            .or_default()
            .push(ts);
        self.by_query_doc
            .entry((query.to_string(), doc.to_string()))
            .or_default()
            .push(ts);
    }

    /// All clicks of every session; lookups filter by time.
    pub fn from_dataset(data: &Dataset) -> Self {
        let mut store = ClickStore::new();
        for u in &data.users {
            for q in u.sessions.iter().flat_map(|s| &s.queries) {
                for (i, &d) in q.docs.iter().enumerate() {
                    if q.clicked[i] {
                        store.add_click(&u.user_id, &q.query_key, &data.doc_ids[d], q.timestamp);
                    }
                }
            }
        }
        store
    }

    /// `|clicks(q, d, u)|` before `before`.
    pub fn user_query_doc(&self, user: &str, query: &str, doc: &str, before: i64) -> u64 {
        self.by_user_query
            .get(&(user.to_string(), query.to_string()))
            .and_then(|m| m.get(doc))
            .map_or(0, |t| count_before(t, before))
    }

    /// `|clicks(q, •, u)|` before `before`.
    pub fn user_query(&self, user: &str, query: &str, before: i64) -> u64 {
        self.by_user_query
            .get(&(user.to_string(), query.to_string()))
            .map_or(0, |m| m.values().map(|t| count_before(t, before)).sum())
    }

    /// `|clicks(q, d, •)|` before `before`.
    pub fn query_doc(&self, query: &str, doc: &str, before: i64) -> u64 {
        self.by_query_doc
            .get(&(query.to_string(), doc.to_string()))
            .map_or(0, |t| count_before(t, before))
    }

    /// `user \t query \t doc \t ts`, one line per click, sorted.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut rows: Vec<(&str, &str, &str, i64)> = self
            .by_user_query
            .iter()
            .flat_map(|((u, q), docs)| {
                docs.iter()
                    .flat_map(move |(d, ts)| ts.iter().map(move |&t| (u.as_str(), q.as_str(), d.as_str(), t)))
            })
            .collect();
        rows.sort_unstable();
        writeln!(out, "user\tquery\tdoc\tts")?;
        for (u, q, d, t) in rows {
            writeln!(out, "{u}\t{q}\t{d}\t{t}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> std::io::Result<Self> {
        let mut store = ClickStore::new();
        for (i, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, format!("click store line {}", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let ts = f[3].parse().map_err(|_| bad())?;
            store.add_click(f[0], f[1], f[2], ts);
        }
        Ok(store)
    }
}

/// Smoothed share of the user's earlier clicks under this query that went to `doc`.
pub fn pclick_score(store: &ClickStore, user: &str, query: &str, doc: &str, before: i64, beta: f64) -> f64 {
    assert!(beta > 0.0, "smoothing must be positive");
    let num = store.user_query_doc(user, query, doc, before) as f64;
    let den = store.user_query(user, query, before) as f64 + beta;
    num / den
}

/// P-Click re-ranker: click share fused with the original order.
pub struct PClick {
    pub store: ClickStore,
    pub beta: f64,
}

impl PClick {
    pub fn new(store: ClickStore) -> Self {
        PClick {
            store,
            beta: DEFAULT_BETA,
        }
    }

    pub fn scores(&self, data: &Dataset, user: &PreparedUser, q: &PreparedQuery) -> Vec<f64> {
        q.docs
            .iter()
            .map(|&d| pclick_score(&self.store, &user.user_id, &q.query_key, &data.doc_ids[d], q.timestamp, self.beta))
            .collect()
    }
}

impl Reranker for PClick {
    fn name(&self) -> String {
        "p-click".into()
    }

    fn rerank_user(
        &self,
        data: &Dataset,
        user: &PreparedUser,
        select: &(dyn Fn(SessionRole, &PreparedQuery) -> bool + Sync),
    ) -> Vec<(usize, usize, Vec<usize>)> {
        selected(user, select)
            .map(|(m, n, q)| (m, n, fuse_with_original(&self.scores(data, user, q))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        let mut s = ClickStore::new();
        for (i, d) in ["a", "a", "a", "b"].iter().enumerate() {
            s.add_click("u", "q", d, i as i64);
        }
        assert!((pclick_score(&s, "u", "q", "a", 100, 0.5) - 3.0 / 4.5).abs() < 1e-12);
        assert_eq!(pclick_score(&s, "u", "unseen", "a", 100, 0.5), 0.0);
        let mut one = ClickStore::new();
        one.add_click("u", "q", "a", 0);
        assert!((pclick_score(&one, "u", "q", "a", 1, 0.5) - 1.0 / 1.5).abs() < 1e-12);
        assert_eq!(s.query_doc("q", "a", 100), 3);
    }

    #[test]
    fn future_clicks_are_invisible() {
        let mut s = ClickStore::new();
        s.add_click("u", "q", "a", 10);
        s.add_click("u", "q", "b", 20);
        let before = pclick_score(&s, "u", "q", "a", 15, 0.5);
        s.add_click("u", "q", "a", 30);
        s.add_click("u", "q", "c", 15);
        assert_eq!(pclick_score(&s, "u", "q", "a", 15, 0.5), before);
        assert_eq!(s.query_doc("q", "a", 15), 1);
        assert_eq!(s.user_query("u", "q", 15), 1);
    }

    #[test]
    fn tsv_is_sorted() {
        let mut s = ClickStore::new();
        s.add_click("v", "q", "a", 3);
        s.add_click("u", "q", "b", 2);
        s.add_click("u", "q", "a", 1);
        let mut out = Vec::new();
        s.write_tsv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "user\tquery\tdoc\tts\nu\tq\ta\t1\nu\tq\tb\t2\nv\tq\ta\t3\n");
        let back = ClickStore::read_tsv(text.as_bytes()).unwrap();
        let mut again = Vec::new();
        back.write_tsv(&mut again).unwrap();
        assert_eq!(again, text.as_bytes());
    }

    proptest! {
        #[test]
        fn score_is_in_unit_interval(clicks in proptest::collection::vec((0u8..4, 0i64..50), 0..40), beta in 0.01f64..5.0, t in 0i64..60) {
            let mut s = ClickStore::new();
            for (d, ts) in &clicks {
                s.add_click("u", "q", &format!("d{d}"), *ts);
            }
            let total: u64 = (0..4).map(|d| s.user_query_doc("u", "q", &format!("d{d}"), t)).sum();
            prop_assert_eq!(total, s.user_query("u", "q", t));
            for d in 0..4 {
                let p = pclick_score(&s, "u", "q", &format!("d{d}"), t, beta);
                prop_assert!((0.0..1.0).contains(&p));
            }
        }
    }
}
