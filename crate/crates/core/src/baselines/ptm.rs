use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PreparedQuery, PreparedUser};
use crate::evaluation::{selected, Reranker};
use crate::query_log::SessionRole;

use super::{fuse_with_original, BaselineError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    /// `alpha = 50 / k`, `beta = 0.01`, 500 sweeps.
    pub fn new(k: usize) -> Self {
        LdaConfig {
            k,
            alpha: 50.0 / k.max(1) as f64,
            beta: 0.01,
            iterations: 500,
            seed: 0,
        }
    }
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self::new(10)
    }
}

/// A fitted LDA model over a small corpus.
#[derive(Clone, Debug)]
pub struct Lda {
    pub k: usize,
    pub words: Vec<String>,
    /// `phi[z][w] = P(w | z)`.
    pub phi: Vec<Vec<f64>>,
    /// `theta[d][z] = P(z | d)`.
    pub theta: Vec<Vec<f64>>,
    /// Topic assignment counts per document.
    pub doc_topic_counts: Vec<Vec<u32>>,
    pub assignments: Vec<Vec<usize>>,
}

/// Collapsed Gibbs sampling. Single-threaded so a seed fixes the result.
pub fn fit_lda<D: AsRef<[S]>, S: AsRef<str>>(docs: &[D], cfg: &LdaConfig) -> Result<Lda, BaselineError> {
    if cfg.k == 0 || !(cfg.alpha > 0.0) || !(cfg.beta > 0.0) {
        return Err(BaselineError::Config("k, alpha and beta must be positive".into()));
    }
    let vocab: BTreeSet<&str> = docs.iter().flat_map(|d| d.as_ref()).map(|w| w.as_ref()).collect();
    if vocab.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    if cfg.k > vocab.len() {
        return Err(BaselineError::TooManyTopics {
            k: cfg.k,
            vocab: vocab.len(),
        });
    }
    let words: Vec<String> = vocab.iter().map(|w| w.to_string()).collect();
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let tokens: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.as_ref().iter().map(|w| index[w.as_ref()]).collect())
        .collect();

    let (k, v) = (cfg.k, words.len());
    let vbeta = v as f64 * cfg.beta;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut n_dz = vec![vec![0u32; k]; tokens.len()];
    let mut n_zw = vec![vec![0u32; v]; k];
    let mut n_z = vec![0u32; k];
    let mut z: Vec<Vec<usize>> = tokens
        .iter()
        .enumerate()
        .map(|(d, ws)| {
            ws.iter()
                .map(|&w| {
                    let t = rng.random_range(0..k);
                    n_dz[d][t] += 1;
                    n_zw[t][w] += 1;
                    n_z[t] += 1;
                    t
                })
                .collect()
        })
        .collect();

    let mut p = vec![0.0; k];
    for _ in 0..cfg.iterations {
        for (d, ws) in tokens.iter().enumerate() {
            for (i, &w) in ws.iter().enumerate() {
                let old = z[d][i];
                n_dz[d][old] -= 1;
                n_zw[old][w] -= 1;
                n_z[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (n_dz[d][t] as f64 + cfg.alpha) * (n_zw[t][w] as f64 + cfg.beta) / (n_z[t] as f64 + vbeta);
                    p[t] = total;
                }
                let u = rng.random::<f64>() * total;
                let new = p.iter().position(|&c| u < c).unwrap_or(k - 1);
                z[d][i] = new;
                n_dz[d][new] += 1;
                n_zw[new][w] += 1;
                n_z[new] += 1;
            }
        }
    }

    let phi = (0..k)
        .map(|t| {
            (0..v)
                .map(|w| (n_zw[t][w] as f64 + cfg.beta) / (n_z[t] as f64 + vbeta))
                .collect()
        })
        .collect();
    let kalpha = k as f64 * cfg.alpha;
    let theta = n_dz
        .iter()
        .map(|c| {
            let n: u32 = c.iter().sum();
            c.iter().map(|&x| (x as f64 + cfg.alpha) / (n as f64 + kalpha)).collect()
        })
        .collect();
    Ok(Lda {
        k,
        words,
        phi,
        theta,
        doc_topic_counts: n_dz,
        assignments: std::mem::take(&mut z),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtmConfig {
    pub lda: LdaConfig,
    /// Exponent on the user-topic affinity.
    pub lambda: f64,
    /// Dirichlet smoothing mass of the document prior.
    pub sigma: f64,
    /// Pseudo-count added to every user-topic count.
    pub user_epsilon: f64,
    /// Fuse with the original ranking by Borda count.
    pub fuse: bool,
}

impl Default for PtmConfig {
    fn default() -> Self {
        PtmConfig {
            lda: LdaConfig::default(),
            lambda: 1.0,
            sigma: 1.0,
            user_epsilon: 0.01,
            fuse: true,
        }
    }
}

/// Topic distributions, user affinities and the smoothed document prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub words: Vec<String>,
    /// `phi[z][w] = P(w | z)`.
    pub phi: Vec<Vec<f64>>,
    /// `P(z | d)` for documents of the clicked corpus.
    pub doc_topics: BTreeMap<String, Vec<f64>>,
    /// `P(u | z)` per user, indexed by `z`.
    pub user_topics: BTreeMap<String, Vec<f64>>,
    pub doc_clicks: BTreeMap<String, u64>,
    /// Size of the candidate document universe `|D|`.
    pub n_docs: usize,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
}

impl TopicModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lambda: f64,
        sigma: f64,
        words: Vec<String>,
        phi: Vec<Vec<f64>>,
        doc_topics: BTreeMap<String, Vec<f64>>,
        user_topics: BTreeMap<String, Vec<f64>>,
        doc_clicks: BTreeMap<String, u64>,
        n_docs: usize,
    ) -> Self {
        let mut tm = TopicModel {
            k: phi.len(),
            lambda,
            sigma,
            words,
            phi,
            doc_topics,
            user_topics,
            doc_clicks,
            n_docs,
            word_index: HashMap::new(),
        };
        tm.reindex();
        tm
    }

    fn reindex(&mut self) {
        self.word_index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    /// Fits on the SAT-clicked documents of non-test sessions. `P(u | z)` is
    /// the user's share of topic-`z` assignments in the documents they
    /// SAT-clicked, plus `user_epsilon`, normalised over users.
    pub fn fit(data: &Dataset, docs: &BTreeMap<String, Vec<String>>, cfg: &PtmConfig) -> Result<Self, BaselineError> {
        if !(cfg.sigma > 0.0) || !(cfg.user_epsilon > 0.0) {
            return Err(BaselineError::Config("sigma and user_epsilon must be positive".into()));
        }
        let mut doc_clicks: BTreeMap<String, u64> = BTreeMap::new();
        let mut user_sat: Vec<(String, Vec<String>)> = Vec::new();
        let mut corpus: BTreeSet<String> = BTreeSet::new();
        for u in &data.users {
            let mut sat_docs = Vec::new();
            for q in u.sessions.iter().filter(|s| s.role != SessionRole::Test).flat_map(|s| &s.queries) {
                for (i, &d) in q.docs.iter().enumerate() {
                    let id = &data.doc_ids[d];
                    if q.clicked[i] {
                        *doc_clicks.entry(id.clone()).or_default() += 1;
                    }
                    if q.sat[i] && docs.contains_key(id) {
                        corpus.insert(id.clone());
                        sat_docs.push(id.clone());
                    }
                }
            }
            user_sat.push((u.user_id.clone(), sat_docs));
        }
        let corpus: Vec<String> = corpus.into_iter().collect();
        let texts: Vec<&Vec<String>> = corpus.iter().map(|d| &docs[d]).collect();
        let lda = fit_lda(&texts, &cfg.lda)?;
        let k = lda.k;
        let pos: HashMap<&str, usize> = corpus.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();

        let counts: Vec<Vec<f64>> = user_sat
            .iter()
            .map(|(_, ds)| {
                let mut c = vec![cfg.user_epsilon; k];
                for d in ds {
                    for (t, &n) in lda.doc_topic_counts[pos[d.as_str()]].iter().enumerate() {
                        c[t] += n as f64;
                    }
                }
                c
            })
            .collect();
        let totals: Vec<f64> = (0..k).map(|t| counts.iter().map(|c| c[t]).sum()).collect();
        let user_topics = user_sat
            .iter()
            .zip(&counts)
            .map(|((u, _), c)| (u.clone(), (0..k).map(|t| c[t] / totals[t]).collect()))
            .collect();
        let doc_topics = corpus.iter().cloned().zip(lda.theta).collect();
        Ok(TopicModel::new(
            cfg.lambda,
            cfg.sigma,
            lda.words,
            lda.phi,
            doc_topics,
            user_topics,
            doc_clicks,
            data.doc_ids.len(),
        ))
    }

    /// `P̂(d) = (#clicks(d) + σ/|D|) / (Σ #clicks + σ)`.
    pub fn doc_prior(&self, doc: &str) -> f64 {
        let total: u64 = self.doc_clicks.values().sum();
        let c = self.doc_clicks.get(doc).copied().unwrap_or(0) as f64;
        (c + self.sigma / self.n_docs.max(1) as f64) / (total as f64 + self.sigma)
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer(out, self)
    }

    pub fn read_json<R: Read>(input: R) -> serde_json::Result<Self> {
        let mut tm: TopicModel = serde_json::from_reader(input)?;
        tm.reindex();
        Ok(tm)
    }
}

/// Log of `P̂(d) ∏_{w∈q} Σ_z P(w|z) P(u|z)^λ P(z|d)`. Documents outside the
/// clicked corpus get uniform `P(z|d)`; unknown users a constant affinity;
/// query words outside the topic vocabulary are skipped.
pub fn ptm_score<S: AsRef<str>>(tm: &TopicModel, user: &str, terms: &[S], doc: &str) -> f64 {
    let uniform = vec![1.0 / tm.k as f64; tm.k];
    let theta = tm.doc_topics.get(doc).unwrap_or(&uniform);
    let affinity: Vec<f64> = match tm.user_topics.get(user) {
        Some(pu) => pu.iter().map(|p| p.powf(tm.lambda)).collect(),
        None => vec![1.0; tm.k],
    };
    let mut log_score = tm.doc_prior(doc).ln();
    for w in terms {
        if let Some(&wi) = tm.word_index.get(w.as_ref()) {
            let s: f64 = (0..tm.k).map(|z| tm.phi[z][wi] * affinity[z] * theta[z]).sum();
            log_score += s.ln();
        }
    }
    log_score
}

/// Personalised topic-model re-ranker.
pub struct Ptm {
    pub model: TopicModel,
    pub fuse: bool,
}

impl Ptm {
    pub fn scores(&self, data: &Dataset, user: &PreparedUser, q: &PreparedQuery) -> Vec<f64> {
        q.docs
            .iter()
            .map(|&d| ptm_score(&self.model, &user.user_id, &q.terms, &data.doc_ids[d]))
            .collect()
    }
}

impl Reranker for Ptm {
    fn name(&self) -> String {
        "ptm".into()
    }

    fn rerank_user(
        &self,
        data: &Dataset,
        user: &PreparedUser,
        select: &(dyn Fn(SessionRole, &PreparedQuery) -> bool + Sync),
    ) -> Vec<(usize, usize, Vec<usize>)> {
        selected(user, select)
            .map(|(m, n, q)| {
                let s = self.scores(data, user, q);
                let ranking = if self.fuse {
                    fuse_with_original(&s)
                } else {
                    crate::hrnn::rank_by_scores(&s)
                };
                (m, n, ranking)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted_corpus(seed: u64) -> (Vec<Vec<String>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut docs = Vec::new();
        let mut group = Vec::new();
        for g in 0..2 {
            for _ in 0..20 {
                docs.push((0..120).map(|_| format!("g{g}w{}", rng.random_range(0..15))).collect());
                group.push(g);
            }
        }
        (docs, group)
    }

    fn purity(lda: &Lda, group: &[usize]) -> f64 {
        let mut table = vec![[0usize; 2]; lda.k];
        for (d, &g) in group.iter().enumerate() {
            let z = (0..lda.k).max_by(|&a, &b| lda.theta[d][a].total_cmp(&lda.theta[d][b])).unwrap();
            table[z][g] += 1;
        }
        table.iter().map(|r| r[0].max(r[1])).sum::<usize>() as f64 / group.len() as f64
    }

    #[test]
    fn recovers_a_planted_partition() {
        let good = (0..10)
            .filter(|&s| {
                let (docs, group) = planted_corpus(s);
                let cfg = LdaConfig {
                    iterations: 200,
                    seed: s,
                    ..LdaConfig::new(2)
                };
                purity(&fit_lda(&docs, &cfg).unwrap(), &group) >= 0.9
            })
            .count();
        assert!(good >= 8, "{good}/10 seeds reached purity 0.9");
    }

    #[test]
    fn distributions_are_normalised() {
        let (docs, _) = planted_corpus(3);
        let lda = fit_lda(&docs, &LdaConfig { iterations: 30, ..LdaConfig::new(4) }).unwrap();
        for row in lda.phi.iter().chain(&lda.theta) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_seed_fixes_assignments() {
        let (docs, _) = planted_corpus(1);
        let cfg = LdaConfig { iterations: 20, seed: 9, ..LdaConfig::new(3) };
        assert_eq!(fit_lda(&docs, &cfg).unwrap().assignments, fit_lda(&docs, &cfg).unwrap().assignments);
    }

    #[test]
    fn single_topic_degenerates() {
        let (docs, _) = planted_corpus(2);
        let lda = fit_lda(&docs, &LdaConfig { iterations: 5, ..LdaConfig::new(1) }).unwrap();
        assert!(lda.theta.iter().all(|t| t == &vec![1.0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let docs = vec![vec!["a", "b"]];
        assert!(matches!(fit_lda(&docs, &LdaConfig::new(3)), Err(BaselineError::TooManyTopics { .. })));
        let empty: Vec<Vec<&str>> = vec![vec![]];
        assert!(matches!(fit_lda(&empty, &LdaConfig::new(1)), Err(BaselineError::EmptyCorpus)));
    }

    fn hand_model(lambda: f64) -> TopicModel {
        let words = vec!["x".to_string(), "y".to_string()];
        let phi = vec![vec![0.8, 0.2], vec![0.3, 0.7]];
        let doc_topics = [("a", vec![0.9, 0.1]), ("b", vec![0.2, 0.8]), ("c", vec![0.5, 0.5])]
            .into_iter()
            .map(|(d, t)| (d.to_string(), t))
            .collect();
        let user_topics = [("u".to_string(), vec![0.6, 0.25])].into_iter().collect();
        let doc_clicks = [("a".to_string(), 3), ("b".to_string(), 1)].into_iter().collect();
        TopicModel::new(lambda, 1.0, words, phi, doc_topics, user_topics, doc_clicks, 3)
    }

    #[test]
    fn score_matches_direct_formula() {
        let tm = hand_model(1.0);
        // prior(a) = (3 + 1/3) / (4 + 1); query "x y"
        let prior = (3.0 + 1.0 / 3.0) / 5.0;
        let px = 0.8 * 0.6 * 0.9 + 0.3 * 0.25 * 0.1;
        let py = 0.2 * 0.6 * 0.9 + 0.7 * 0.25 * 0.1;
        let direct = prior * px * py;
        assert!((ptm_score(&tm, "u", &["x", "y"], "a").exp() - direct).abs() < 1e-12);
        let prior_c = (1.0 / 3.0) / 5.0;
        let direct_c = prior_c * (0.8 * 0.6 * 0.5 + 0.3 * 0.25 * 0.5);
        assert!((ptm_score(&tm, "u", &["x", "zz"], "c").exp() - direct_c).abs() < 1e-12);
        let priors: f64 = ["a", "b", "c"].iter().map(|d| tm.doc_prior(d)).sum();
        assert!((priors - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prior_is_uniform_without_clicks() {
        let mut tm = hand_model(1.0);
        tm.doc_clicks.clear();
        for d in ["a", "b", "c"] {
            assert!((tm.doc_prior(d) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_topic_ignores_the_user() {
        let words = vec!["x".to_string()];
        let docs: BTreeMap<String, Vec<f64>> = ["a", "b"].into_iter().map(|d| (d.to_string(), vec![1.0])).collect();
        let clicks: BTreeMap<String, u64> = [("a".to_string(), 1), ("b".to_string(), 4)].into_iter().collect();
        for lambda in [0.5, 1.0, 3.0] {
            let users = [("u".to_string(), vec![0.3])].into_iter().collect();
            let tm = TopicModel::new(lambda, 1.0, words.clone(), vec![vec![1.0]], docs.clone(), users, clicks.clone(), 2);
            let sa = ptm_score(&tm, "u", &["x"], "a");
            let sb = ptm_score(&tm, "u", &["x"], "b");
            assert_eq!(sa < sb, tm.doc_prior("a") < tm.doc_prior("b"));
            assert!(((sb - sa) - (tm.doc_prior("b") / tm.doc_prior("a")).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_keeps_scores() {
        let tm = hand_model(2.0);
        let mut buf = Vec::new();
        tm.write_json(&mut buf).unwrap();
        let back = TopicModel::read_json(&buf[..]).unwrap();
        assert_eq!(ptm_score(&back, "u", &["x", "y"], "b"), ptm_score(&tm, "u", &["x", "y"], "b"));
    }
}
