//! Hierarchical recurrent scoring model with query-aware attention.
//!
//! A session-level GRU turns `[query; SAT-doc average]` steps into a
//! short-term interest vector, a user-level GRU runs over past session vectors,
//! and an attention MLP weights the user-level states by their relevance to the
//! current query. Documents are scored by two projected cosines plus a small
//! feature MLP.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CheckpointHeader, FORMAT_VERSION};

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_uniform, mlp_forward, gru_step, AutodiffError, GruParams, MlpParams, ParamId, ParamStore, Tape, Var};

/// Number of hand-crafted ranking features.
pub const NUM_FEATURES: usize = 4;

/// Which interest signals contribute to the score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Short-term plus the most recent long-term state.
    Hrnn,
    /// Short-term plus the attention-weighted long-term states.
    HrnnQa,
    ShortTerm,
    LongTerm,
}

impl ModelVariant {
    pub fn uses_short_term(self) -> bool {
        !matches!(self, ModelVariant::LongTerm)
    }

    pub fn uses_long_term(self) -> bool {
        !matches!(self, ModelVariant::ShortTerm)
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, ModelVariant::HrnnQa | ModelVariant::LongTerm)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Hrnn => "hrnn",
            ModelVariant::HrnnQa => "hrnn-qa",
            ModelVariant::ShortTerm => "short-term",
            ModelVariant::LongTerm => "long-term",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hrnn" => Ok(ModelVariant::Hrnn),
            "hrnn-qa" => Ok(ModelVariant::HrnnQa),
            "short-term" => Ok(ModelVariant::ShortTerm),
            "long-term" => Ok(ModelVariant::LongTerm),
            other => Err(format!("unknown model `{other}` (expected hrnn, hrnn-qa, short-term, long-term)")),
        }
    }
}

/// Layer widths and structural switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_e: usize,
    pub d_s1: usize,
    pub d_s2: usize,
    pub d_a: usize,
    pub d_f: usize,
    pub biases: bool,
    pub variant: ModelVariant,
}

impl ModelConfig {
    /// Full-size widths.
    pub fn full(variant: ModelVariant) -> Self {
        ModelConfig {
            d_e: 300,
            d_s1: 300,
            d_s2: 600,
            d_a: 1024,
            d_f: 64,
            biases: true,
            variant,
        }
    }

    /// Small widths for laptop-scale experiments.
    pub fn desk(variant: ModelVariant) -> Self {
        ModelConfig {
            d_e: 50,
            d_s1: 32,
            d_s2: 64,
            d_a: 64,
            d_f: 16,
            biases: true,
            variant,
        }
    }
}

/// Handles to every trainable array, registered in this field order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub gru1: GruParams,
    pub gru2: GruParams,
    pub attn: MlpParams,
    pub w_s: ParamId,
    pub w_l: ParamId,
    pub feat: MlpParams,
}

/// Ranking features of one candidate document.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub reciprocal_position: f64,
    pub log_user_doc_clicks: f64,
    pub log_user_query_doc_clicks: f64,
    pub click_entropy: f64,
}

impl FeatureVector {
    pub fn new(position: u32, user_doc_clicks: u32, user_query_doc_clicks: u32, click_entropy: f64) -> Self {
        FeatureVector {
            reciprocal_position: 1.0 / position.max(1) as f64,
            log_user_doc_clicks: (user_doc_clicks as f64).ln_1p(),
            log_user_query_doc_clicks: (user_query_doc_clicks as f64).ln_1p(),
            click_entropy,
        }
    }

    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.reciprocal_position,
            self.log_user_doc_clicks,
            self.log_user_query_doc_clicks,
            self.click_entropy,
        ]
    }
}

/// Text vectors of one past query event: the query and its SAT-doc average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventVectors {
    pub query: Vec<f64>,
    pub sat_doc: Vec<f64>,
}

/// A document to score.
#[derive(Clone, Copy, Debug)]
pub struct Candidate<'a> {
    pub doc: &'a [f64],
    pub features: FeatureVector,
}

/// User interest at the moment a query is issued.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestState {
    pub short_term: Vec<f64>,
    pub long_states: Vec<Vec<f64>>,
    pub attended: Vec<f64>,
    pub attention_weights: Vec<f64>,
}

/// Scores and interest nodes of one query, still on the tape.
#[derive(Clone, Debug)]
pub struct QueryGraph {
    pub scores: Vec<Var>,
    pub short_term: Var,
    pub attended: Var,
    pub attention_weights: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
}

impl Model {
    /// Glorot-initialised weights, zero biases, seeded.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let gru1 = GruParams::register(&mut store, "gru1", 2 * c.d_e, c.d_s1, c.biases, &mut rng);
        let gru2 = GruParams::register(&mut store, "gru2", c.d_s1, c.d_s2, c.biases, &mut rng);
        let attn = MlpParams::register(&mut store, "attn", c.d_e + c.d_s2, c.d_a, 1, &mut rng);
        let w_s = store.add("w_s", glorot_uniform(c.d_s1, c.d_e, &mut rng));
        let w_l = store.add("w_l", glorot_uniform(c.d_s2, c.d_e, &mut rng));
        let feat = MlpParams::register(&mut store, "feat", NUM_FEATURES, c.d_f, 1, &mut rng);
        Model {
            config,
            store,
            params: ModelParams {
                gru1,
                gru2,
                attn,
                w_s,
                w_l,
                feat,
            },
        }
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    /// Session-level states for `events`, optionally followed by a current
    /// query paired with a zero document vector.
    pub fn encode_session_on(
        &self,
        tape: &mut Tape<'_>,
        events: &[EventVectors],
        current_query: Option<&[f64]>,
    ) -> Result<Vec<Var>, AutodiffError> {
        let d_e = self.config.d_e;
        let mut h = tape.zeros(self.config.d_s1);
        let mut states = Vec::with_capacity(events.len() + 1);
        let mut x = vec![0.0; 2 * d_e];
        let steps = events
            .iter()
            .map(|e| (e.query.as_slice(), Some(e.sat_doc.as_slice())))
            .chain(current_query.map(|q| (q, None)));
        for (q, d) in steps {
            x[..d_e].copy_from_slice(q);
            match d {
                Some(d) => x[d_e..].copy_from_slice(d),
                None => x[d_e..].fill(0.0),
            }
            let xv = tape.input_vector(&x);
            h = gru_step(tape, &self.params.gru1, xv, h)?;
            states.push(h);
        }
        Ok(states)
    }

    /// User-level states over completed-session vectors, from a zero start.
    pub fn encode_history_on(&self, tape: &mut Tape<'_>, session_vectors: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let mut h = tape.zeros(self.config.d_s2);
        let mut states = Vec::with_capacity(session_vectors.len());
        for &s in session_vectors {
            h = gru_step(tape, &self.params.gru2, s, h)?;
            states.push(h);
        }
        Ok(states)
    }

    /// Softmax attention of `query` over `long_states`. Returns the weighted
    /// state and the weights, or a zero vector and `None` for no history.
    pub fn attend_on(&self, tape: &mut Tape<'_>, query: Var, long_states: &[Var]) -> Result<(Var, Option<Var>), AutodiffError> {
        if long_states.is_empty() {
            return Ok((tape.zeros(self.config.d_s2), None));
        }
        let mut e = Vec::with_capacity(long_states.len());
        for &h in long_states {
            let x = tape.concat(query, h);
            e.push(mlp_forward(tape, &self.params.attn, x)?);
        }
        let e = tape.stack(&e);
        let alpha = tape.softmax(e);
        Ok((tape.weighted_sum(alpha, long_states), Some(alpha)))
    }

    /// Long-term vector used for scoring under this model's variant.
    fn long_vector_on(&self, tape: &mut Tape<'_>, query: Var, long_states: &[Var]) -> Result<(Var, Option<Var>), AutodiffError> {
        if self.variant().uses_attention() {
            self.attend_on(tape, query, long_states)
        } else {
            match long_states.last() {
                Some(&h) => Ok((h, None)),
                None => Ok((tape.zeros(self.config.d_s2), None)),
            }
        }
    }

    /// Projected interest vectors `W_S^T h1` and `W_L^T h2q` for the enabled terms.
    fn projections_on(&self, tape: &mut Tape<'_>, short: Var, long: Var) -> (Option<Var>, Option<Var>) {
        let v = self.variant();
        let s = v.uses_short_term().then(|| {
            let w = tape.param(self.params.w_s);
            tape.matvec_t(w, short)
        });
        let l = v.uses_long_term().then(|| {
            let w = tape.param(self.params.w_l);
            tape.matvec_t(w, long)
        });
        (s, l)
    }

    fn score_on(
        &self,
        tape: &mut Tape<'_>,
        proj: (Option<Var>, Option<Var>),
        cand: &Candidate<'_>,
    ) -> Result<Var, AutodiffError> {
        let d = tape.input_vector(cand.doc);
        let f = tape.input_vector(&cand.features.to_array());
        let mut terms = Vec::with_capacity(3);
        if let Some(l) = proj.1 {
            terms.push(tape.cosine(l, d));
        }
        if let Some(s) = proj.0 {
            terms.push(tape.cosine(s, d));
        }
        let y = mlp_forward(tape, &self.params.feat, f)?;
        terms.push(tape.sum(y));
        Ok(tape.add_all(&terms))
    }

    /// Full differentiable graph for one query: past sessions, in-session
    /// prefix, the query itself, and every candidate's score.
    pub fn forward_query(
        &self,
        tape: &mut Tape<'_>,
        history: &[Vec<EventVectors>],
        prior: &[EventVectors],
        query: &[f64],
        candidates: &[Candidate<'_>],
    ) -> Result<QueryGraph, AutodiffError> {
        let v = self.variant();
        let short = *self
            .encode_session_on(tape, prior, Some(query))?
            .last()
            .expect("the current query adds one state");
        let (attended, weights) = if v.uses_long_term() {
            let mut h1s = Vec::with_capacity(history.len());
            for s in history {
                let states = self.encode_session_on(tape, s, None)?;
                h1s.push(match states.last() {
                    Some(&h) => h,
                    None => tape.zeros(self.config.d_s1),
                });
            }
            let h2s = self.encode_history_on(tape, &h1s)?;
            let q = tape.input_vector(query);
            self.long_vector_on(tape, q, &h2s)?
        } else {
            (tape.zeros(self.config.d_s2), None)
        };
        let proj = self.projections_on(tape, short, attended);
        let scores = candidates
            .iter()
            .map(|c| self.score_on(tape, proj, c))
            .collect::<Result<_, _>>()?;
        Ok(QueryGraph {
            scores,
            short_term: short,
            attended,
            attention_weights: weights,
        })
    }

    /// All session-level states of one session, forward only.
    pub fn encode_session(&self, events: &[EventVectors]) -> Vec<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let states = self.encode_session_on(&mut tape, events, None).expect("widths fixed at construction");
        states.iter().map(|&s| tape.value(s).to_vec()).collect()
    }

    /// The session's short-term vector: its last state, or zero when empty.
    pub fn session_vector(&self, events: &[EventVectors]) -> Vec<f64> {
        self.encode_session(events).pop().unwrap_or_else(|| vec![0.0; self.config.d_s1])
    }

    /// One user-level transition.
    pub fn long_step(&self, h2_prev: &[f64], session_vector: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new(&self.store);
        let h = tape.input_vector(h2_prev);
        let x = tape.input_vector(session_vector);
        let out = gru_step(&mut tape, &self.params.gru2, x, h).expect("widths fixed at construction");
        tape.value(out).to_vec()
    }

    pub fn encode_history(&self, session_vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; self.config.d_s2];
        session_vectors
            .iter()
            .map(|s| {
                h = self.long_step(&h, s);
                h.clone()
            })
            .collect()
    }

    /// Attention over `long_states` conditioned on `query`: (attended, weights).
    pub fn attend(&self, query: &[f64], long_states: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new(&self.store);
        let q = tape.input_vector(query);
        let hs: Vec<Var> = long_states.iter().map(|h| tape.input_vector(h)).collect();
        let (att, w) = self.attend_on(&mut tape, q, &hs).expect("widths fixed at construction");
        (tape.value(att).to_vec(), w.map(|w| tape.value(w).to_vec()).unwrap_or_default())
    }

    /// Interest state for `query` given precomputed user-level states.
    pub fn interest_state(&self, long_states: &[Vec<f64>], prior: &[EventVectors], query: &[f64]) -> InterestState {
        let mut tape = Tape::new(&self.store);
        let short = *self
            .encode_session_on(&mut tape, prior, Some(query))
            .expect("widths fixed at construction")
            .last()
            .expect("the current query adds one state");
        let short_term = tape.value(short).to_vec();
        let (attended, attention_weights) = match self.variant() {
            ModelVariant::ShortTerm => (vec![0.0; self.config.d_s2], Vec::new()),
            ModelVariant::Hrnn => match long_states.last() {
                Some(h) => {
                    let mut w = vec![0.0; long_states.len()];
                    w[long_states.len() - 1] = 1.0;
                    (h.clone(), w)
                }
                None => (vec![0.0; self.config.d_s2], Vec::new()),
            },
            ModelVariant::HrnnQa | ModelVariant::LongTerm => self.attend(query, long_states),
        };
        InterestState {
            short_term,
            long_states: long_states.to_vec(),
            attended,
            attention_weights,
        }
    }

    pub fn score_candidates(&self, state: &InterestState, candidates: &[Candidate<'_>]) -> Vec<f64> {
        let mut tape = Tape::new(&self.store);
        let short = tape.input_vector(&state.short_term);
        let long = tape.input_vector(&state.attended);
        let proj = self.projections_on(&mut tape, short, long);
        candidates
            .iter()
            .map(|c| {
                let s = self.score_on(&mut tape, proj, c).expect("widths fixed at construction");
                tape.scalar(s)
            })
            .collect()
    }

    pub fn score_document(&self, state: &InterestState, doc: &[f64], features: FeatureVector) -> f64 {
        self.score_candidates(state, &[Candidate { doc, features }])[0]
    }

    /// Candidate indices in personalised order.
    pub fn rerank(&self, state: &InterestState, candidates: &[Candidate<'_>]) -> Vec<usize> {
        rank_by_scores(&self.score_candidates(state, candidates))
    }
}

/// Indices sorted by descending score; ties keep the input order, which is
/// the original ranking.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].partial_cmp(&scores[a]) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    idx
}
