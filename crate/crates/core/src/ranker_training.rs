//! Pairwise LambdaRank training with validation-based early stopping.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Optimizer, OptimizerKind, ParamStore, Tape, LOG_CLAMP};
use crate::dataset::{score_user, Dataset, PreparedQuery};
use crate::evaluation::average_precision;
use crate::hrnn::{rank_by_scores, EventVectors, Model};
use crate::query_log::SessionRole;

/// A relevant (SAT) and an irrelevant candidate of the same query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub relevant: usize,
    pub irrelevant: usize,
}

/// Relevant × irrelevant pairs, subsampled uniformly to `cap` when larger.
pub fn generate_pairs<R: Rng + ?Sized>(sat: &[bool], cap: usize, rng: &mut R) -> Vec<TrainingPair> {
    let rel: Vec<usize> = (0..sat.len()).filter(|&i| sat[i]).collect();
    let irr: Vec<usize> = (0..sat.len()).filter(|&i| !sat[i]).collect();
    let total = rel.len() * irr.len();
    let make = |k: usize| TrainingPair {
        relevant: rel[k / irr.len()],
        irrelevant: irr[k % irr.len()],
    };
    if total <= cap {
        return (0..total).map(make).collect();
    }
    let mut picked = index::sample(rng, total, cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(make).collect()
}

/// `1 / (1 + exp(-(s_i - s_j)))`
pub fn pairwise_probability(score_i: f64, score_j: f64) -> f64 {
    let d = score_i - score_j;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// `|AP(after swapping ranks i and j) - AP(before)|`; `i`, `j` are 0-based
/// positions in `ranking`.
pub fn delta_map(ranking: &[usize], relevant: &[bool], i: usize, j: usize) -> f64 {
    if relevant[ranking[i]] == relevant[ranking[j]] {
        return 0.0;
    }
    let before = average_precision(ranking, relevant);
    let mut swapped = ranking.to_vec();
    swapped.swap(i, j);
    (average_precision(&swapped, relevant) - before).abs()
}

/// `(-p̄ ln p - (1 - p̄) ln(1 - p)) · |Δ|`, logs clamped at 1e-12.
pub fn pair_loss(p: f64, target: f64, delta: f64) -> f64 {
    let lp = p.max(LOG_CLAMP).ln();
    let lq = (1.0 - p).max(LOG_CLAMP).ln();
    (-target * lp - (1.0 - target) * lq) * delta.abs()
}

/// `(pair, |ΔMAP|)` for every pair, with swaps measured on the ranking
/// induced by `scores`.
pub fn weighted_pairs(scores: &[f64], sat: &[bool], pairs: &[TrainingPair]) -> Vec<(TrainingPair, f64)> {
    let ranking = rank_by_scores(scores);
    let mut rank = vec![0usize; ranking.len()];
    for (r, &d) in ranking.iter().enumerate() {
        rank[d] = r;
    }
    pairs
        .iter()
        .map(|&p| (p, delta_map(&ranking, sat, rank[p.relevant], rank[p.irrelevant])))
        .collect()
}

/// LambdaRank loss of one query over all of its pairs.
pub fn query_loss(scores: &[f64], sat: &[bool]) -> f64 {
    let pairs = generate_pairs(sat, usize::MAX, &mut ChaCha8Rng::seed_from_u64(0));
    weighted_pairs(scores, sat, &pairs)
        .iter()
        .map(|(p, d)| pair_loss(pairwise_probability(scores[p.relevant], scores[p.irrelevant]), 1.0, *d))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub pair_cap: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 30,
            patience: 3,
            pair_cap: 50,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no trainable queries in the training split")]
    EmptyTrainingSet,
    #[error("no trainable queries in the validation split")]
    EmptyValidationSet,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, user {user}, query {query}")]
    NonFinite { epoch: usize, user: String, query: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

/// Loss history and the chosen epoch. Wall-clock times are kept out of this
/// record so that reports of identical runs are identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub seed: u64,
    pub train_queries: usize,
    pub validation_queries: usize,
    /// Mean training loss before the first update.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
    pub optimizer_steps: u64,
}

impl TrainReport {
    pub fn best_train_loss(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.train_loss)
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    /// Optimizer state at the end of the last epoch run.
    pub optimizer: Optimizer,
    pub report: TrainReport,
    pub epoch_seconds: Vec<f64>,
}

/// Scores a model after each epoch; lower is better.
pub trait ValidationEvaluator {
    fn validation_loss(&mut self, model: &Model, epoch: usize) -> f64;
}

/// Mean LambdaRank query loss over the trainable queries of one split.
pub struct SplitLoss<'a> {
    pub data: &'a Dataset,
    pub role: SessionRole,
}

impl ValidationEvaluator for SplitLoss<'_> {
    fn validation_loss(&mut self, model: &Model, _epoch: usize) -> f64 {
        split_loss(model, self.data, self.role)
    }
}

pub fn split_loss(model: &Model, data: &Dataset, role: SessionRole) -> f64 {
    let per_user: Vec<Vec<f64>> = data
        .users
        .par_iter()
        .map(|u| {
            score_user(model, data, u, |r| r == role, PreparedQuery::is_trainable)
                .into_iter()
                .map(|(m, n, s)| query_loss(&s, &u.sessions[m].queries[n].sat))
                .collect()
        })
        .collect();
    let losses: Vec<f64> = per_user.into_iter().flatten().collect();
    if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    }
}

/// Optimizer state and epoch count carried over from a checkpoint.
pub struct ResumeState {
    pub optimizer: Optimizer,
    pub epochs_done: usize,
}

/// Trains `model`: users shuffled per epoch, sessions and
/// queries in time order, one optimizer step per query.
pub fn train(
    mut model: Model,
    data: &Dataset,
    config: &TrainConfig,
    validator: &mut dyn ValidationEvaluator,
    resume: Option<ResumeState>,
) -> Result<TrainOutcome, TrainError> {
    if !(config.learning_rate > 0.0) {
        return Err(TrainError::Config("learning rate must be positive".into()));
    }
    if config.patience == 0 {
        return Err(TrainError::Config("patience must be at least 1".into()));
    }
    let train_queries = data.count_queries(SessionRole::Train, PreparedQuery::is_trainable);
    let validation_queries = data.count_queries(SessionRole::Validation, PreparedQuery::is_trainable);
    if train_queries == 0 {
        return Err(TrainError::EmptyTrainingSet);
    }
    if validation_queries == 0 {
        return Err(TrainError::EmptyValidationSet);
    }

    let (mut optimizer, start) = match resume {
        Some(r) => (r.optimizer, r.epochs_done),
        None => (Optimizer::new(config.optimizer, config.learning_rate, &model.store), 0),
    };
    let initial_train_loss = split_loss(&model, data, SessionRole::Train);
    let mut epochs = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in start + 1..=start + config.max_epochs {
        let t0 = std::time::Instant::now();
        run_epoch(&mut model, &mut optimizer, data, config, epoch)?;
        let validation_loss = validator.validation_loss(&model, epoch);
        let train_loss = split_loss(&model, data, SessionRole::Train);
        epoch_seconds.push(t0.elapsed().as_secs_f64());
        log::info!("epoch {epoch}: train {train_loss:.5} validation {validation_loss:.5}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if !validation_loss.is_finite() || !train_loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                user: "<evaluation>".into(),
                query: "<evaluation>".into(),
            });
        }
        if best.as_ref().is_none_or(|(_, b, _)| validation_loss < *b) {
            best = Some((epoch, validation_loss, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_validation_loss) = match best {
        Some((e, l, store)) => {
            model.store = store;
            (e, l)
        }
        None => (start, f64::NAN),
    };
    Ok(TrainOutcome {
        report: TrainReport {
            model: model.variant().to_string(),
            seed: config.seed,
            train_queries,
            validation_queries,
            initial_train_loss,
            epochs,
            best_epoch,
            best_validation_loss,
            stopped_early,
            optimizer_steps: optimizer.step,
        },
        model,
        optimizer,
        epoch_seconds,
    })
}

fn run_epoch(
    model: &mut Model,
    optimizer: &mut Optimizer,
    data: &Dataset,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..data.users.len()).filter(|&u| data.users[u].has_role(SessionRole::Train)).collect();
    order.shuffle(&mut rng);
    for u in order {
        let user = &data.users[u];
        let history: Vec<Vec<EventVectors>> = user.sessions.iter().map(|s| s.events.clone()).collect();
        for (m, session) in user.sessions.iter().enumerate() {
            if session.role != SessionRole::Train {
                continue;
            }
            for (n, q) in session.queries.iter().enumerate() {
                if !q.is_trainable() {
                    continue;
                }
                let candidates = data.candidates(q);
                let grads = {
                    let mut tape = Tape::new(&model.store);
                    let graph = model
                        .forward_query(&mut tape, &history[..m], &session.events[..n], &q.query_vec, &candidates)
                        .expect("model widths match the dataset");
                    let scores: Vec<f64> = graph.scores.iter().map(|&s| tape.scalar(s)).collect();
                    let pairs = generate_pairs(&q.sat, config.pair_cap, &mut rng);
                    let terms: Vec<_> = weighted_pairs(&scores, &q.sat, &pairs)
                        .into_iter()
                        .filter(|(_, d)| *d > 0.0)
                        .map(|(p, d)| tape.pair_loss(graph.scores[p.relevant], graph.scores[p.irrelevant], 1.0, d))
                        .collect();
                    if terms.is_empty() {
                        continue;
                    }
                    let loss = tape.add_all(&terms);
                    let grads = tape.backward(loss).expect("loss is a fresh scalar root");
                    if !tape.scalar(loss).is_finite() || !grads.is_finite() {
                        return Err(TrainError::NonFinite {
                            epoch,
                            user: user.user_id.clone(),
                            query: q.query_id.clone(),
                        });
                    }
                    grads
                };
                optimizer.apply(&mut model.store, &grads);
            }
        }
    }
    Ok(())
}
