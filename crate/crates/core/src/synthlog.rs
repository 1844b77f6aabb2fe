//! Synthetic personalised click logs with known ground truth.
//!
//! Documents mix a primary and a secondary topic. Users prefer a few topics
//! whose weights drift slowly. Each session follows one topic. Ambiguous words
//! belong to two topics, so a query such as `amb3 gen7` retrieves documents of
//! both and only the user's interest tells which half is relevant. Candidate
//! lists are a deterministic function of the query text, like a
//! non-personalised engine. Clicks follow an examine-then-click model.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::query_log::{ClickRecord, DocumentRecord, LogRecord, ResultRecord};
use crate::text_repr::stable_hash;

/// 2013-01-01T00:00:00Z.
pub const DEFAULT_START_TS: i64 = 1_356_998_400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub n_ambiguous: usize,
    pub n_generic: usize,
    pub docs_per_topic: usize,
    pub doc_len: (usize, usize),
    /// Range of the mass a document puts on its secondary topic.
    pub secondary_mass: (f64, f64),
    /// Range of a document's quality, a relevance multiplier the base
    /// ranker does not see.
    pub quality: (f64, f64),
    pub embedding_dim: usize,
    /// Norm of the noise added to topic centroids in word embeddings.
    pub embedding_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_topics: 8,
            words_per_topic: 40,
            n_ambiguous: 12,
            n_generic: 30,
            docs_per_topic: 250,
            doc_len: (40, 80),
            secondary_mass: (0.05, 0.3),
            quality: (0.5, 1.0),
            embedding_dim: 50,
            embedding_noise: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_users: usize,
    pub sessions_per_user: (usize, usize),
    pub queries_per_session: (usize, usize),
    pub repeat_prob: f64,
    /// Chance that a repeated query looks for the documents that satisfied
    /// the user last time; those are then examined and fully relevant.
    pub refind_prob: f64,
    pub ambiguous_frac: f64,
    pub topics_per_user: usize,
    /// Preference mass spread uniformly over all topics.
    pub background_pref: f64,
    /// Per-session mixing rate towards a random preference direction.
    pub drift: f64,
    /// Examination probability is `1 / position^exponent`.
    pub examination_exponent: f64,
    /// Click probability of a fully irrelevant, examined document.
    pub click_floor: f64,
    /// Use 0/1 relevance (thresholded at `sat_threshold`).
    pub binary_relevance: bool,
    /// Relevance above which a click dwells longer than 30 s.
    pub sat_threshold: f64,
    /// Probability of flipping the long/short dwell outcome.
    pub dwell_noise: f64,
    /// Mean of the exponential extra dwell on satisfied clicks (seconds).
    pub long_dwell_mean: f64,
    /// Standard deviation of the base ranker's score noise.
    pub base_noise: f64,
    pub n_candidates: usize,
    pub n_off_topic: usize,
    /// Users whose history is two topic-disjoint blocks.
    pub n_probe_users: usize,
    pub start_ts: i64,
    pub span_days: i64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_users: 200,
            sessions_per_user: (16, 24),
            queries_per_session: (1, 4),
            repeat_prob: 0.3,
            refind_prob: 0.5,
            ambiguous_frac: 0.4,
            topics_per_user: 3,
            background_pref: 0.05,
            drift: 0.02,
            examination_exponent: 0.7,
            click_floor: 0.03,
            binary_relevance: false,
            sat_threshold: 0.5,
            dwell_noise: 0.1,
            long_dwell_mean: 60.0,
            base_noise: 0.3,
            n_candidates: 20,
            n_off_topic: 6,
            n_probe_users: 0,
            start_ts: DEFAULT_START_TS,
            span_days: 56,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, world: &WorldConfig) -> Result<(), String> {
        let probs = [
            ("repeat_prob", self.repeat_prob),
            ("refind_prob", self.refind_prob),
            ("ambiguous_frac", self.ambiguous_frac),
            ("background_pref", self.background_pref),
            ("drift", self.drift),
            ("click_floor", self.click_floor),
            ("sat_threshold", self.sat_threshold),
            ("dwell_noise", self.dwell_noise),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.sessions_per_user.0 == 0 || self.sessions_per_user.0 > self.sessions_per_user.1 {
            return Err("sessions_per_user must be a non-empty range starting at 1 or more".into());
        }
        if self.queries_per_session.0 == 0 || self.queries_per_session.0 > self.queries_per_session.1 {
            return Err("queries_per_session must be a non-empty range starting at 1 or more".into());
        }
        if self.topics_per_user == 0 || self.topics_per_user > world.n_topics {
            return Err(format!("topics_per_user must be in 1..={}", world.n_topics));
        }
        if self.n_candidates == 0 || self.n_candidates > crate::query_log::MAX_RESULTS {
            return Err(format!("n_candidates must be in 1..={}", crate::query_log::MAX_RESULTS));
        }
        if self.n_off_topic > self.n_candidates {
            return Err("n_off_topic cannot exceed n_candidates".into());
        }
        if self.n_probe_users > 0 && world.n_topics < 2 {
            return Err("probe users need at least two topics".into());
        }
        Ok(())
    }

    pub fn examination(&self, position: u32) -> f64 {
        (position as f64).powf(-self.examination_exponent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDoc {
    pub id: String,
    pub primary: usize,
    /// Topic mixture.
    pub theta: Vec<f64>,
    pub quality: f64,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub topic_words: Vec<Vec<String>>,
    /// Ambiguous word and its two topics.
    pub ambiguous: Vec<(String, [usize; 2])>,
    pub generic: Vec<String>,
    pub docs: Vec<SynthDoc>,
    docs_by_topic: Vec<Vec<usize>>,
    word_topics: HashMap<String, Vec<usize>>,
    zipf: WeightedIndex<f64>,
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive shape");
    let x: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    let s: f64 = x.iter().sum();
    x.into_iter().map(|v| v / s).collect()
}

impl World {
    pub fn new(config: WorldConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.n_topics;
        let topic_words: Vec<Vec<String>> = (0..k)
            .map(|t| (0..config.words_per_topic).map(|i| format!("t{t}w{i}")).collect())
            .collect();
        let generic: Vec<String> = (0..config.n_generic).map(|i| format!("gen{i}")).collect();
        let ambiguous: Vec<(String, [usize; 2])> = (0..config.n_ambiguous)
            .filter(|_| k >= 2)
            .map(|i| {
                let a = i % k;
                let b = (a + 1 + rng.random_range(0..k - 1)) % k;
                (format!("amb{i}"), [a, b])
            })
            .collect();
        let mut word_topics: HashMap<String, Vec<usize>> = HashMap::new();
        for (t, ws) in topic_words.iter().enumerate() {
            for w in ws {
                word_topics.insert(w.clone(), vec![t]);
            }
        }
        for (w, ts) in &ambiguous {
            word_topics.insert(w.clone(), ts.to_vec());
        }
        let zipf = WeightedIndex::new((1..=config.words_per_topic).map(|r| 1.0 / r as f64)).expect("non-empty topic vocabulary");
        let amb_of_topic: Vec<Vec<usize>> = (0..k)
            .map(|t| (0..ambiguous.len()).filter(|&i| ambiguous[i].1.contains(&t)).collect())
            .collect();

        let mut docs = Vec::with_capacity(k * config.docs_per_topic);
        let mut docs_by_topic = vec![Vec::new(); k];
        for t in 0..k {
            for j in 0..config.docs_per_topic {
                let mut theta = vec![0.0; k];
                if k >= 2 {
                    let sec = (t + 1 + rng.random_range(0..k - 1)) % k;
                    let m = rng.random_range(config.secondary_mass.0..=config.secondary_mass.1);
                    theta[t] = 1.0 - m;
                    theta[sec] = m;
                } else {
                    theta[t] = 1.0;
                }
                let quality = rng.random_range(config.quality.0..=config.quality.1);
                let len = rng.random_range(config.doc_len.0..=config.doc_len.1);
                let topic_pick = WeightedIndex::new(&theta).expect("normalised mixture");
                let tokens = (0..len)
                    .map(|_| {
                        if !generic.is_empty() && rng.random_bool(0.15) {
                            return generic.choose(&mut rng).unwrap().clone();
                        }
                        let z = topic_pick.sample(&mut rng);
                        if !amb_of_topic[z].is_empty() && rng.random_bool(0.1) {
                            let a = *amb_of_topic[z].choose(&mut rng).unwrap();
                            return ambiguous[a].0.clone();
                        }
                        topic_words[z][zipf.sample(&mut rng)].clone()
                    })
                    .collect();
                docs_by_topic[t].push(docs.len());
                docs.push(SynthDoc {
                    id: format!("d{t}x{j}"),
                    primary: t,
                    theta,
                    quality,
                    tokens,
                });
            }
        }
        World {
            config,
            seed,
            topic_words,
            ambiguous,
            generic,
            docs,
            docs_by_topic,
            word_topics,
            zipf,
        }
    }

    /// Topics a query's words point at, sorted.
    pub fn query_topics(&self, terms: &[String]) -> Vec<usize> {
        let mut ts: Vec<usize> = terms
            .iter()
            .filter_map(|w| self.word_topics.get(w))
            .flatten()
            .copied()
            .collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// The non-personalised engine: candidate document indices, best first.
    /// Depends only on the query text and the world.
    pub fn candidates(&self, terms: &[String], cfg: &GenConfig) -> Vec<usize> {
        let key = terms.join(" ");
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&key) ^ self.seed.rotate_left(17));
        let topics = self.query_topics(terms);
        let on_pool: Vec<usize> = topics.iter().flat_map(|&t| self.docs_by_topic[t].iter().copied()).collect();
        let off_pool: Vec<usize> = (0..self.docs.len())
            .filter(|&d| !topics.contains(&self.docs[d].primary))
            .collect();
        let n_off = cfg.n_off_topic.min(off_pool.len());
        let n_on = (cfg.n_candidates - n_off).min(on_pool.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, on_pool.len(), n_on)
            .into_iter()
            .map(|i| on_pool[i])
            .collect();
        picked.extend(index::sample(&mut rng, off_pool.len(), n_off).into_iter().map(|i| off_pool[i]));
        picked.sort_unstable();
        let noise = Normal::new(0.0, cfg.base_noise.max(0.0)).expect("finite noise");
        let mut scored: Vec<(f64, usize)> = picked
            .into_iter()
            .map(|d| {
                let s: f64 = topics.iter().map(|&t| self.docs[d].theta[t]).sum();
                (s + noise.sample(&mut rng), d)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, d)| d).collect()
    }

    pub fn relevance(&self, doc: usize, intent: usize, cfg: &GenConfig) -> f64 {
        let r = self.docs[doc].theta[intent] * self.docs[doc].quality;
        if cfg.binary_relevance {
            if r >= cfg.sat_threshold {
                1.0
            } else {
                0.0
            }
        } else {
            r
        }
    }

    pub fn document_records(&self) -> Vec<DocumentRecord> {
        self.docs
            .iter()
            .map(|d| DocumentRecord {
                doc: d.id.clone(),
                tokens: d.tokens.clone(),
            })
            .collect()
    }

    /// Word vectors: topic centroid plus noise; ambiguous words sit between
    /// their two centroids; generic words are noise only.
    pub fn embeddings(&self) -> Vec<(String, Vec<f64>)> {
        let dim = self.config.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_e3be_dd00);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let centroids: Vec<Vec<f64>> = (0..self.config.n_topics)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let sd = self.config.embedding_noise / (dim as f64).sqrt();
        let noisy = |base: Vec<f64>, rng: &mut ChaCha8Rng| -> Vec<f64> {
            base.into_iter().map(|x| x + sd * unit.sample(rng)).collect()
        };
        let mut out = Vec::new();
        for (t, ws) in self.topic_words.iter().enumerate() {
            for w in ws {
                out.push((w.clone(), noisy(centroids[t].clone(), &mut rng)));
            }
        }
        for (w, [a, b]) in &self.ambiguous {
            let mid: Vec<f64> = centroids[*a].iter().zip(&centroids[*b]).map(|(x, y)| 0.5 * (x + y)).collect();
            out.push((w.clone(), noisy(mid, &mut rng)));
        }
        for w in &self.generic {
            out.push((w.clone(), noisy(vec![0.0; dim], &mut rng)));
        }
        out
    }

    pub fn write_embeddings<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let emb = self.embeddings();
        writeln!(out, "{} {}", emb.len(), self.config.embedding_dim)?;
        for (w, v) in emb {
            write!(out, "{w}")?;
            for x in v {
                write!(out, " {x:.6}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Intent and true relevance of one generated query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub qid: String,
    pub topic: usize,
    pub relevance: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default)]
pub struct SynthLog {
    pub records: Vec<LogRecord>,
    pub truth: Vec<GroundTruth>,
}

impl SynthLog {
    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_truth<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.truth {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn lines(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialise"))
            .collect()
    }
}

/// Generates every user's log. Users are independent, with seeds derived
/// from `seed`, so the output does not depend on thread count.
pub fn generate(world: &World, cfg: &GenConfig, seed: u64) -> SynthLog {
    let mut jobs: Vec<(String, bool)> = (0..cfg.n_probe_users).map(|i| (format!("p{i:03}"), true)).collect();
    jobs.extend((0..cfg.n_users).map(|i| (format!("u{i:04}"), false)));
    let per_user: Vec<SynthLog> = jobs
        .par_iter()
        .map(|(id, probe)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(id));
            generate_user(world, cfg, id, *probe, &mut rng)
        })
        .collect();
    let mut out = SynthLog::default();
    for u in per_user {
        out.records.extend(u.records);
        out.truth.extend(u.truth);
    }
    out
}

struct PastQuery {
    terms: Vec<String>,
    intent: usize,
    /// Documents clicked with a long dwell on earlier issues.
    satisfied: Vec<usize>,
}

fn fresh_query<R: Rng + ?Sized>(world: &World, cfg: &GenConfig, topic: usize, ambiguous_ok: bool, rng: &mut R) -> Vec<String> {
    let amb: Vec<&(String, [usize; 2])> = world.ambiguous.iter().filter(|(_, ts)| ts.contains(&topic)).collect();
    let generic = |rng: &mut R| world.generic.choose(rng).cloned();
    if ambiguous_ok && !amb.is_empty() && rng.random_bool(cfg.ambiguous_frac) {
        let mut q = vec![amb.choose(rng).unwrap().0.clone()];
        q.extend(generic(rng));
        return q;
    }
    let n = rng.random_range(1..=3usize.min(world.config.words_per_topic));
    let mut words: Vec<String> = Vec::with_capacity(n + 1);
    while words.len() < n {
        let w = &world.topic_words[topic][world.zipf.sample(rng)];
        if !words.contains(w) {
            words.push(w.clone());
        }
    }
    if rng.random_bool(0.3) {
        words.extend(generic(rng));
    }
    words
}

fn generate_user(world: &World, cfg: &GenConfig, user: &str, probe: bool, rng: &mut ChaCha8Rng) -> SynthLog {
    let k = world.config.n_topics;
    let mut topics: Vec<usize> = index::sample(rng, k, cfg.topics_per_user.min(k)).into_vec();
    let weights = dirichlet(2.0, topics.len(), rng);
    let mut pref = vec![cfg.background_pref / k as f64; k];
    for (t, w) in topics.iter().zip(&weights) {
        pref[*t] += (1.0 - cfg.background_pref) * w;
    }
    if probe {
        topics.truncate(2);
        if topics.len() < 2 {
            topics = vec![0, 1];
        }
    }

    let n_sessions = rng.random_range(cfg.sessions_per_user.0..=cfg.sessions_per_user.1);
    let span = cfg.span_days * 86_400;
    let mut starts: Vec<i64> = (0..n_sessions).map(|_| rng.random_range(0..span.max(1))).collect();
    starts.sort_unstable();

    let exp_dwell = Exp::new(1.0 / cfg.long_dwell_mean.max(1e-9)).expect("positive rate");
    let mut past: Vec<PastQuery> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = SynthLog::default();
    let mut clock = i64::MIN;

    for s in 0..n_sessions {
        if s > 0 && cfg.drift > 0.0 {
            let dir = dirichlet(1.0, k, rng);
            for (p, d) in pref.iter_mut().zip(dir) {
                *p = (1.0 - cfg.drift) * *p + cfg.drift * d;
            }
        }
        let topic = if probe {
            // two history blocks; the last two sessions pick either block
            if s + 2 >= n_sessions {
                topics[rng.random_range(0..2)]
            } else if s < (n_sessions - 2) / 2 {
                topics[0]
            } else {
                topics[1]
            }
        } else {
            WeightedIndex::new(&pref).expect("preference is a distribution").sample(rng)
        };
        let session_id = format!("{user}s{s:02}");
        let mut ts = (cfg.start_ts + starts[s]).max(clock.saturating_add(1801));
        let n_q = rng.random_range(cfg.queries_per_session.0..=cfg.queries_per_session.1);
        for n in 0..n_q {
            let (terms, intent, targets) = if !probe && !past.is_empty() && rng.random_bool(cfg.repeat_prob) {
                let same: Vec<&PastQuery> = past.iter().filter(|p| p.intent == topic).collect();
                let p = if same.is_empty() { past.choose(rng).unwrap() } else { *same.choose(rng).unwrap() };
                let targets = if rng.random_bool(cfg.refind_prob) { p.satisfied.clone() } else { Vec::new() };
                (p.terms.clone(), p.intent, targets)
            } else {
                let mut q = fresh_query(world, cfg, topic, !probe, rng);
                for _ in 0..50 {
                    if !seen.contains_key(&q.join(" ")) {
                        break;
                    }
                    q = fresh_query(world, cfg, topic, !probe, rng);
                }
                (q, topic, Vec::new())
            };
            let key = terms.join(" ");
            let past_idx = *seen.entry(key.clone()).or_insert_with(|| {
                past.push(PastQuery {
                    terms: terms.clone(),
                    intent,
                    satisfied: Vec::new(),
                });
                past.len() - 1
            });

            let cands = world.candidates(&terms, cfg);
            let qid = format!("{session_id}q{n}");
            let mut relevance = BTreeMap::new();
            let mut clicks = Vec::new();
            let mut t_click = ts;
            for (i, &d) in cands.iter().enumerate() {
                let refound = targets.contains(&d);
                let rel = if refound { 1.0 } else { world.relevance(d, intent, cfg) };
                relevance.insert(world.docs[d].id.clone(), rel);
                let exam = if refound { 1.0 } else { cfg.examination(i as u32 + 1) };
                let p = exam * (cfg.click_floor + (1.0 - cfg.click_floor) * rel);
                if rng.random_bool(p.clamp(0.0, 1.0)) {
                    let satisfied = (rel > cfg.sat_threshold) != rng.random_bool(cfg.dwell_noise);
                    let dwell = if satisfied {
                        31 + exp_dwell.sample(rng) as i64
                    } else {
                        rng.random_range(2..=29)
                    };
                    if satisfied && !past[past_idx].satisfied.contains(&d) {
                        past[past_idx].satisfied.push(d);
                    }
                    t_click += rng.random_range(3..=15);
                    clicks.push(ClickRecord {
                        doc: world.docs[d].id.clone(),
                        ts: t_click,
                        dwell: dwell as f64,
                    });
                    t_click += dwell;
                }
            }
            out.records.push(LogRecord {
                user: user.to_string(),
                session: Some(session_id.clone()),
                qid: qid.clone(),
                ts,
                query: key,
                results: cands
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| ResultRecord {
                        doc: world.docs[d].id.clone(),
                        pos: i as u32 + 1,
                    })
                    .collect(),
                clicks,
            });
            out.truth.push(GroundTruth {
                qid,
                topic: intent,
                relevance,
            });
            ts = t_click + rng.random_range(10..=90);
        }
        clock = ts;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    use crate::evaluation::average_precision;
    use crate::query_log::{parse_log, IngestOptions};

    fn small_world() -> World {
        World::new(
            WorldConfig {
                docs_per_topic: 60,
                ..Default::default()
            },
            11,
        )
    }

    fn small_cfg(n_users: usize) -> GenConfig {
        GenConfig {
            n_users,
            sessions_per_user: (6, 10),
            ..Default::default()
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let w = small_world();
        let cfg = small_cfg(8);
        let a = generate(&w, &cfg, 3);
        let b = generate(&w, &cfg, 3);
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_records(&mut ba).unwrap();
        b.write_records(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_ne!(generate(&w, &cfg, 4).lines(), a.lines());
    }

    #[test]
    fn logs_pass_ingestion() {
        let w = small_world();
        let cfg = GenConfig {
            n_probe_users: 2,
            ..small_cfg(10)
        };
        let log = generate(&w, &cfg, 5);
        let users = parse_log(&log.lines(), &IngestOptions::default()).unwrap();
        assert_eq!(users.len(), 12);
        let n_events: usize = users.iter().map(|u| u.num_events()).sum();
        assert_eq!(n_events, log.records.len());
        for u in &users {
            for w in u.sessions.windows(2) {
                assert!(w[0].end() <= w[1].start());
            }
        }
    }

    #[test]
    fn single_topic_users_click_on_topic() {
        let w = small_world();
        let cfg = GenConfig {
            ambiguous_frac: 0.0,
            topics_per_user: 1,
            ..small_cfg(30)
        };
        let log = generate(&w, &cfg, 9);
        let users = parse_log(&log.lines(), &IngestOptions::default()).unwrap();
        let truth: HashMap<&str, &GroundTruth> = log.truth.iter().map(|t| (t.qid.as_str(), t)).collect();
        let doc_idx: HashMap<&str, usize> = w.docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        let (mut on, mut total) = (0usize, 0usize);
        for ev in users.iter().flat_map(|u| &u.sessions).flat_map(|s| &s.events) {
            let intent = truth[ev.query_id.as_str()].topic;
            for d in ev.sat_docs() {
                total += 1;
                if w.docs[doc_idx[d]].theta[intent] >= 0.5 {
                    on += 1;
                }
            }
        }
        assert!(total > 200);
        assert!(on as f64 / total as f64 > 0.95, "{on}/{total}");
    }

    #[test]
    fn without_position_bias_clicks_are_the_relevant_set() {
        let w = small_world();
        let cfg = GenConfig {
            examination_exponent: 0.0,
            binary_relevance: true,
            click_floor: 0.0,
            ..small_cfg(5)
        };
        let log = generate(&w, &cfg, 2);
        for (r, t) in log.records.iter().zip(&log.truth) {
            let clicked: HashSet<&str> = r.clicks.iter().map(|c| c.doc.as_str()).collect();
            let relevant: HashSet<&str> = t.relevance.iter().filter(|(_, &v)| v == 1.0).map(|(d, _)| d.as_str()).collect();
            assert_eq!(clicked, relevant);
        }
    }

    #[test]
    fn oracle_order_has_headroom_over_the_engine() {
        let w = small_world();
        let log = generate(&w, &small_cfg(20), 4);
        let (mut base, mut oracle, mut n) = (0.0, 0.0, 0);
        for (r, t) in log.records.iter().zip(&log.truth) {
            let rel: Vec<f64> = r.results.iter().map(|x| t.relevance[&x.doc]).collect();
            let relevant: Vec<bool> = rel.iter().map(|&v| v > 0.5).collect();
            if !relevant.contains(&true) {
                continue;
            }
            let original: Vec<usize> = (0..rel.len()).collect();
            let mut ideal = original.clone();
            ideal.sort_by(|&a, &b| rel[b].total_cmp(&rel[a]));
            base += average_precision(&original, &relevant);
            oracle += average_precision(&ideal, &relevant);
            n += 1;
        }
        assert!(n > 100);
        assert!(oracle / n as f64 > base / n as f64 + 0.05);
    }

    #[test]
    fn repeat_fraction_tracks_probability() {
        let w = small_world();
        for p in [0.1, 0.3, 0.6] {
            let cfg = GenConfig {
                repeat_prob: p,
                sessions_per_user: (20, 24),
                ..small_cfg(25)
            };
            let log = generate(&w, &cfg, 8);
            let mut seen: HashSet<(String, String)> = HashSet::new();
            let mut repeats = 0usize;
            for r in &log.records {
                if !seen.insert((r.user.clone(), r.query.clone())) {
                    repeats += 1;
                }
            }
            let frac = repeats as f64 / log.records.len() as f64;
            assert!(log.records.len() >= 1000);
            assert!((frac - p).abs() < 0.05, "p = {p}: {frac}");
        }
    }

    #[test]
    fn probe_users_have_two_disjoint_blocks() {
        let w = small_world();
        let cfg = GenConfig {
            n_probe_users: 3,
            ..small_cfg(0)
        };
        let log = generate(&w, &cfg, 1);
        let mut by_session: BTreeMap<String, HashSet<usize>> = BTreeMap::new();
        for (r, t) in log.records.iter().zip(&log.truth) {
            by_session.entry(r.session.clone().unwrap()).or_default().insert(t.topic);
        }
        assert!(by_session.values().all(|ts| ts.len() == 1));
        let user_topics: HashSet<usize> = by_session
            .iter()
            .filter(|(s, _)| s.starts_with("p000"))
            .flat_map(|(_, t)| t.iter().copied())
            .collect();
        assert_eq!(user_topics.len(), 2);
    }

    #[test]
    fn invalid_probability_is_rejected() {
        let cfg = GenConfig {
            repeat_prob: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate(&WorldConfig::default()).unwrap_err().contains("repeat_prob"));
    }
}
