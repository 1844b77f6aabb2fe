//! Log-based evaluation of re-rankers on the test split, with slice
//! breakdowns and paired significance tests.

mod metrics;

pub use metrics::{
    average_precision, avg_click_position, count_improved, inverse_pairs, inverse_pairs_of,
    precision_at_1, reciprocal_rank, InversePair,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{score_user, Dataset, PreparedQuery, PreparedUser};
use crate::hrnn::{rank_by_scores, Model};
use crate::query_log::SessionRole;

/// Click-entropy cutoff (bits) separating navigational from informational queries.
pub const ENTROPY_CUTOFF: f64 = 1.0;

/// Produces personalised orders for a user's queries.
pub trait Reranker: Sync {
    fn name(&self) -> String;

    /// `(session, query, ranking)` for every query of `user` accepted by `select`,
    /// in session then query order.
    fn rerank_user(
        &self,
        data: &Dataset,
        user: &PreparedUser,
        select: &(dyn Fn(SessionRole, &PreparedQuery) -> bool + Sync),
    ) -> Vec<(usize, usize, Vec<usize>)>;
}

/// The identity re-ranker.
pub struct OriginalRanking;

impl Reranker for OriginalRanking {
    fn name(&self) -> String {
        "original".into()
    }

    fn rerank_user(
        &self,
        _data: &Dataset,
        user: &PreparedUser,
        select: &(dyn Fn(SessionRole, &PreparedQuery) -> bool + Sync),
    ) -> Vec<(usize, usize, Vec<usize>)> {
        selected(user, select)
            .map(|(m, n, q)| (m, n, (0..q.docs.len()).collect()))
            .collect()
    }
}

impl Reranker for Model {
    fn name(&self) -> String {
        self.variant().to_string()
    }

    fn rerank_user(
        &self,
        data: &Dataset,
        user: &PreparedUser,
        select: &(dyn Fn(SessionRole, &PreparedQuery) -> bool + Sync),
    ) -> Vec<(usize, usize, Vec<usize>)> {
        let wanted: std::collections::HashSet<(usize, usize)> = selected(user, select).map(|(m, n, _)| (m, n)).collect();
        score_user(self, data, user, |_| true, |_| true)
            .into_iter()
            .filter(|(m, n, _)| wanted.contains(&(*m, *n)))
            .map(|(m, n, s)| (m, n, rank_by_scores(&s)))
            .collect()
    }
}

/// `(session, query, query)` triples of `user` accepted by `select`.
pub fn selected<'a>(
    user: &'a PreparedUser,
    select: &'a (dyn Fn(SessionRole, &PreparedQuery) -> bool + Sync),
) -> impl Iterator<Item = (usize, usize, &'a PreparedQuery)> + 'a {
    user.sessions.iter().enumerate().flat_map(move |(m, s)| {
        s.queries
            .iter()
            .enumerate()
            .filter(move |(_, q)| select(s.role, q))
            .map(move |(n, q)| (m, n, q))
    })
}

/// Test-session queries with at least one SAT click.
pub fn evaluated_query(role: SessionRole, q: &PreparedQuery) -> bool {
    role == SessionRole::Test && q.has_sat()
}

/// Metrics of one evaluated query under one re-ranker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub user: String,
    pub session: String,
    pub qid: String,
    pub click_entropy: f64,
    pub repeated: bool,
    pub session_position: usize,
    pub ap: f64,
    pub rr: f64,
    pub p1: f64,
    pub avg_click: f64,
    pub n_pairs: usize,
    pub n_better: usize,
    /// AP of the original order, for ΔMAP.
    pub original_ap: f64,
}

impl QueryOutcome {
    pub fn delta_ap(&self) -> f64 {
        self.ap - self.original_ap
    }

    pub fn entropy_slice(&self) -> &'static str {
        if self.click_entropy < ENTROPY_CUTOFF {
            "entropy<1"
        } else {
            "entropy>=1"
        }
    }

    pub fn repeat_slice(&self) -> &'static str {
        if self.repeated {
            "repeated"
        } else {
            "non-repeated"
        }
    }

    pub fn position_slice(&self) -> String {
        if self.session_position >= 5 {
            "position=5+".into()
        } else {
            format!("position={}", self.session_position)
        }
    }

    /// Composite slice label used in the per-query CSV.
    pub fn slice_label(&self) -> String {
        format!("{}|{}|{}", self.entropy_slice(), self.repeat_slice(), self.position_slice())
    }
}

pub fn query_outcome(user: &PreparedUser, m: usize, n: usize, ranking: &[usize]) -> QueryOutcome {
    let q = &user.sessions[m].queries[n];
    let original: Vec<usize> = (0..q.docs.len()).collect();
    let pairs = inverse_pairs_of(&q.clicked);
    let (better, _) = count_improved(&pairs, ranking);
    QueryOutcome {
        user: user.user_id.clone(),
        session: user.sessions[m].session_id.clone(),
        qid: q.query_id.clone(),
        click_entropy: q.click_entropy,
        repeated: q.repeated,
        session_position: q.session_position,
        ap: average_precision(ranking, &q.sat),
        rr: reciprocal_rank(ranking, &q.sat),
        p1: precision_at_1(ranking, &q.sat),
        avg_click: avg_click_position(ranking, &q.sat).unwrap_or(0.0),
        n_pairs: pairs.len(),
        n_better: better,
        original_ap: average_precision(&original, &q.sat),
    }
}

/// Per-query outcomes for every evaluated test query, users in dataset order.
pub fn evaluate_queries(data: &Dataset, ranker: &dyn Reranker) -> Vec<QueryOutcome> {
    let select = |role: SessionRole, q: &PreparedQuery| evaluated_query(role, q);
    let per_user: Vec<Vec<QueryOutcome>> = data
        .users
        .par_iter()
        .map(|u| {
            ranker
                .rerank_user(data, u, &select)
                .into_iter()
                .map(|(m, n, r)| query_outcome(u, m, n, &r))
                .collect()
        })
        .collect();
    per_user.into_iter().flatten().collect()
}

/// Aggregates over a group of queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub queries: usize,
    pub map: f64,
    pub original_map: f64,
    pub delta_map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub queries: usize,
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub avg_click: f64,
    pub better_pairs: usize,
    pub total_pairs: usize,
    /// Improved fraction of inverse pairs; `None` when there are none.
    pub p_improve: Option<f64>,
    pub delta_map: f64,
    pub slices: BTreeMap<String, SliceReport>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn slice_of(outcomes: &[&QueryOutcome]) -> SliceReport {
    let map = mean(outcomes.iter().map(|o| o.ap));
    let original_map = mean(outcomes.iter().map(|o| o.original_ap));
    SliceReport {
        queries: outcomes.len(),
        map,
        original_map,
        delta_map: map - original_map,
        mrr: mean(outcomes.iter().map(|o| o.rr)),
        p_at_1: mean(outcomes.iter().map(|o| o.p1)),
    }
}

impl MetricsReport {
    /// Folds outcomes in their given order. Empty slices are omitted.
    pub fn from_outcomes(model: &str, outcomes: &[QueryOutcome]) -> Self {
        let mut groups: BTreeMap<String, Vec<&QueryOutcome>> = BTreeMap::new();
        for o in outcomes {
            groups.entry(o.entropy_slice().into()).or_default().push(o);
            groups.entry(o.repeat_slice().into()).or_default().push(o);
            groups.entry(o.position_slice()).or_default().push(o);
        }
        let better: usize = outcomes.iter().map(|o| o.n_better).sum();
        let total: usize = outcomes.iter().map(|o| o.n_pairs).sum();
        let map = mean(outcomes.iter().map(|o| o.ap));
        MetricsReport {
            model: model.into(),
            queries: outcomes.len(),
            map,
            mrr: mean(outcomes.iter().map(|o| o.rr)),
            p_at_1: mean(outcomes.iter().map(|o| o.p1)),
            avg_click: mean(outcomes.iter().map(|o| o.avg_click)),
            better_pairs: better,
            total_pairs: total,
            p_improve: (total > 0).then(|| better as f64 / total as f64),
            delta_map: map - mean(outcomes.iter().map(|o| o.original_ap)),
            slices: groups.into_iter().map(|(k, v)| (k, slice_of(&v))).collect(),
        }
    }
}

/// Two-sided paired t-test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p_value: f64,
}

/// Paired t-test of `a - b`. Zero variance gives p = 1 for a zero mean
/// difference and p = 0 otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> PairedTTest {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(d.iter().copied());
    if n < 2 {
        return PairedTTest {
            n,
            mean_diff: md,
            t: 0.0,
            p_value: 1.0,
        };
    }
    let var = d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        let (t, p) = if md == 0.0 { (0.0, 1.0) } else { (md.signum() * f64::INFINITY, 0.0) };
        return PairedTTest { n, mean_diff: md, t, p_value: p };
    }
    let t = md / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom are positive");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    PairedTTest { n, mean_diff: md, t, p_value: p }
}

/// One model's evaluation, with its significance test against the original order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub report: MetricsReport,
    pub vs_original: PairedTTest,
    #[serde(skip)]
    pub outcomes: Vec<QueryOutcome>,
}

pub fn evaluate(data: &Dataset, ranker: &dyn Reranker) -> ModelEvaluation {
    let outcomes = evaluate_queries(data, ranker);
    let report = MetricsReport::from_outcomes(&ranker.name(), &outcomes);
    let aps: Vec<f64> = outcomes.iter().map(|o| o.ap).collect();
    let orig: Vec<f64> = outcomes.iter().map(|o| o.original_ap).collect();
    ModelEvaluation {
        report,
        vs_original: paired_t_test(&aps, &orig),
        outcomes,
    }
}

/// Aligned-column comparison table, one row per model.
pub fn comparison_table(evals: &[ModelEvaluation]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>7} {:>7} {:>7} {:>9} {:>8} {:>9} {:>8} {:>9}",
        "model", "MAP", "MRR", "P@1", "Avg.Click", "#Better", "P-Improve", "dMAP", "p(orig)"
    );
    for e in evals {
        let r = &e.report;
        let pi = r.p_improve.map_or("-".to_string(), |p| format!("{p:.4}"));
        let _ = writeln!(
            out,
            "{:<12} {:>7.4} {:>7.4} {:>7.4} {:>9.3} {:>8} {:>9} {:>+8.4} {:>9.2e}",
            r.model, r.map, r.mrr, r.p_at_1, r.avg_click, r.better_pairs, pi, r.delta_map, e.vs_original.p_value
        );
    }
    out
}

/// `user,session,qid,slice,ap,rr,p1,avg_click,n_pairs,n_better`
pub fn write_query_csv<W: Write>(mut out: W, outcomes: &[QueryOutcome]) -> std::io::Result<()> {
    writeln!(out, "user,session,qid,slice,ap,rr,p1,avg_click,n_pairs,n_better")?;
    for o in outcomes {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{:.4},{},{}",
            o.user,
            o.session,
            o.qid,
            o.slice_label(),
            o.ap,
            o.rr,
            o.p1,
            o.avg_click,
            o.n_pairs,
            o.n_better
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(ap: f64, orig: f64, entropy: f64, repeated: bool, pos: usize) -> QueryOutcome {
        QueryOutcome {
            user: "u".into(),
            session: "s".into(),
            qid: "q".into(),
            click_entropy: entropy,
            repeated,
            session_position: pos,
            ap,
            rr: ap,
            p1: 0.0,
            avg_click: 1.0,
            n_pairs: 2,
            n_better: 1,
            original_ap: orig,
        }
    }

    #[test]
    fn slice_examples() {
        let r = MetricsReport::from_outcomes("m", &[outcome(1.0, 0.5, 0.0, false, 1), outcome(0.5, 0.5, 0.0, true, 3)]);
        assert!(r.slices.contains_key("entropy<1"));
        assert!(!r.slices.contains_key("entropy>=1"));
        assert_eq!(r.slices["repeated"].queries, 1);
        assert_eq!(r.slices["non-repeated"].delta_map, 0.5);
        assert!(r.slices.contains_key("position=1") && r.slices.contains_key("position=3"));
        assert!(!r.slices.contains_key("position=2"));
        assert_eq!(r.p_improve, Some(0.5));
        assert!((r.delta_map - 0.25).abs() < 1e-15);
    }

    #[test]
    fn t_test_reference_values() {
        // differences (1, 2, 3, 4): mean 2.5, sd = sqrt(5/3), t = 2.5 / (sd / 2) = 3.8729833
        let a = [2.0, 4.0, 6.0, 8.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let t = paired_t_test(&a, &b);
        assert!((t.t - 3.872983346207417).abs() < 1e-12);
        // two-sided p for t = 3.873 on 3 df, from standard tables: 0.0305
        assert!((t.p_value - 0.0305).abs() < 5e-4, "{}", t.p_value);
        assert_eq!(paired_t_test(&b, &b).p_value, 1.0);
    }

    #[test]
    fn csv_has_one_row_per_outcome() {
        let rows = vec![outcome(1.0, 0.5, 2.0, false, 7); 3];
        let mut buf = Vec::new();
        write_query_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("entropy>=1|non-repeated|position=5+"));
    }
}
