use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use hrnn_core::baselines::{ClickStore, LdaConfig, PClick, Ptm, PtmConfig, TopicModel};
use hrnn_core::dataset::{query_attention, Dataset};
use hrnn_core::evaluation::{comparison_table, evaluate, paired_t_test, write_query_csv, ModelEvaluation, OriginalRanking, PairedTTest, Reranker};
use hrnn_core::hrnn::{read_checkpoint, write_checkpoint, Checkpoint, Model};
use hrnn_core::query_log::{ingest_log, write_log, SessionRole};
use hrnn_core::ranker_training::{train as fit, ResumeState, SplitLoss, TrainConfig};
use hrnn_core::synthlog::{generate, GenConfig, World, WorldConfig};
use serde::Serialize;

use crate::data::{default_dim, ensure_dir, ingest_options, require_file, Inputs};
use crate::{usage, AttentionArgs, BaselineArgs, EvaluateArgs, IngestArgs, RerankArgs, SynthArgs, TrainArgs};

/// Attention weights below this are flagged, as in the usual session plots.
const ATTENTION_DISPLAY_THRESHOLD: f64 = 0.01;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let world_cfg = WorldConfig {
        n_topics: a.topics,
        embedding_dim: a.embedding_dim,
        ..Default::default()
    };
    let gen = GenConfig {
        n_users: a.users,
        n_probe_users: a.probe_users,
        sessions_per_user: (a.min_sessions, a.max_sessions),
        repeat_prob: a.repeat_prob,
        refind_prob: a.refind_prob,
        ambiguous_frac: a.ambiguous_frac,
        drift: a.drift,
        click_floor: a.click_floor,
        dwell_noise: a.dwell_noise,
        ..Default::default()
    };
    if a.topics == 0 || a.embedding_dim == 0 {
        return Err(usage("--topics and --embedding-dim must be positive"));
    }
    gen.validate(&world_cfg).map_err(usage)?;
    ensure_dir(&a.out.out)?;

    let world = World::new(world_cfg.clone(), a.seed);
    let log = generate(&world, &gen, a.seed.wrapping_add(1));
    let dir = &a.out.out;
    let mut out = create(&dir.join("log.jsonl"))?;
    log.write_records(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("truth.jsonl"))?;
    log.write_truth(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("docs.jsonl"))?;
    for d in world.document_records() {
        serde_json::to_writer(&mut out, &d)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let mut out = create(&dir.join("embeddings.txt"))?;
    world.write_embeddings(&mut out)?;
    out.flush()?;
    write_json(
        &dir.join("synth.json"),
        &serde_json::json!({ "seed": a.seed, "world": world_cfg, "generator": gen }),
    )?;
    log::info!("wrote {} query records to {}", log.records.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct LogStats {
    users: usize,
    sessions: usize,
    queries: usize,
    impressions: usize,
    clicks: usize,
    sat_clicks: usize,
    queries_with_sat: usize,
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    require_file(&a.log, "log file")?;
    let users = ingest_log(&a.log, &ingest_options(a.gap_sessions)).map_err(|e| usage(e.to_string()))?;
    ensure_dir(&a.out.out)?;
    let events: Vec<_> = users.iter().flat_map(|u| &u.sessions).flat_map(|s| &s.events).collect();
    let imps = events.iter().flat_map(|e| &e.impressions);
    let stats = LogStats {
        users: users.len(),
        sessions: users.iter().map(|u| u.sessions.len()).sum(),
        queries: events.len(),
        impressions: imps.clone().count(),
        clicks: imps.clone().filter(|i| i.clicked).count(),
        sat_clicks: imps.filter(|i| i.sat).count(),
        queries_with_sat: events.iter().filter(|e| e.has_sat()).count(),
    };
    write_log(&users, create(&a.out.out.join("ingested.jsonl"))?)?;
    write_json(&a.out.out.join("log_stats.json"), &stats)?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    model: String,
    epoch_seconds: Vec<f64>,
    total_seconds: f64,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    if let Some(r) = &a.resume {
        require_file(r, "checkpoint")?;
    }
    if !(a.lr > 0.0) || a.patience == 0 || a.pair_cap == 0 {
        return Err(usage("--lr, --patience and --pair-cap must be positive"));
    }
    let resumed: Option<Checkpoint> = match &a.resume {
        Some(path) => Some(read_checkpoint(BufReader::new(File::open(path)?)).map_err(|e| usage(format!("{}: {e}", path.display())))?),
        None => None,
    };
    let config = match &resumed {
        Some(c) => c.header.config,
        None => a.model.config(),
    };
    let inputs = Inputs::load(&a.data)?;
    let (data, vocab_hash) = inputs.dataset(&a.data, config.d_e)?;
    ensure_dir(&a.out.out)?;

    let train_cfg = TrainConfig {
        learning_rate: a.lr,
        max_epochs: a.epochs,
        patience: a.patience,
        pair_cap: a.pair_cap,
        seed: a.seed,
        ..Default::default()
    };
    let (model, resume) = match resumed {
        Some(c) => {
            c.check_vocab(&vocab_hash).map_err(|e| usage(e.to_string()))?;
            let optimizer = c
                .optimizer
                .ok_or_else(|| usage("checkpoint has no optimizer state to resume from"))?;
            log::info!("resuming after epoch {}", c.header.epochs);
            let state = ResumeState {
                optimizer,
                epochs_done: c.header.epochs,
            };
            (c.model, Some(state))
        }
        None => (Model::new(config, a.seed), None),
    };
    let name = config.variant.to_string();
    log::info!("training {name} on {} users", data.users.len());
    let t0 = Instant::now();
    let mut validator = SplitLoss {
        data: &data,
        role: SessionRole::Validation,
    };
    let outcome = fit(model, &data, &train_cfg, &mut validator, resume)?;
    let epochs_done = outcome.report.epochs.last().map_or(0, |e| e.epoch);

    let dir = &a.out.out;
    let mut out = create(&dir.join(format!("{name}.ckpt")))?;
    write_checkpoint(&mut out, &outcome.model, Some(&outcome.optimizer), &vocab_hash, a.seed, epochs_done)?;
    out.flush()?;
    write_json(&dir.join(format!("{name}.report.json")), &outcome.report)?;
    write_json(
        &dir.join(format!("{name}.timing.json")),
        &Timing {
            model: name.clone(),
            epoch_seconds: outcome.epoch_seconds.clone(),
            total_seconds: t0.elapsed().as_secs_f64(),
        },
    )?;
    log::info!(
        "best epoch {} (validation loss {:.5}); wrote {}",
        outcome.report.best_epoch,
        outcome.report.best_validation_loss,
        dir.join(format!("{name}.ckpt")).display()
    );
    Ok(())
}

pub fn baseline(a: &BaselineArgs) -> Result<()> {
    let inputs = Inputs::load(&a.data)?;
    let (data, _) = inputs.dataset(&a.data, default_dim(&a.data)?)?;
    ensure_dir(&a.out.out)?;
    let store = ClickStore::from_dataset(&data);
    let mut out = create(&a.out.out.join("pclick.tsv"))?;
    store.write_tsv(&mut out)?;
    out.flush()?;

    let cfg = PtmConfig {
        lda: LdaConfig {
            iterations: a.gibbs_iterations,
            seed: a.seed,
            ..LdaConfig::new(a.topics)
        },
        lambda: a.ptm_lambda,
        sigma: a.ptm_sigma,
        ..Default::default()
    };
    let t0 = Instant::now();
    let tm = TopicModel::fit(&data, &inputs.docs, &cfg).map_err(|e| usage(e.to_string()))?;
    log::info!("fitted {} topics in {:.1}s", tm.k, t0.elapsed().as_secs_f64());
    let mut out = create(&a.out.out.join("ptm.json"))?;
    tm.write_json(&mut out)?;
    out.flush()?;
    Ok(())
}

fn load_model(path: &Path, vocab_hash: Option<&str>) -> Result<Model> {
    require_file(path, "checkpoint")?;
    let ckpt = read_checkpoint(BufReader::new(File::open(path)?)).with_context(|| path.display().to_string())?;
    if let Some(h) = vocab_hash {
        ckpt.check_vocab(h).with_context(|| path.display().to_string())?;
    }
    Ok(ckpt.model)
}

fn load_baselines(dir: &Path, beta: f64) -> (Result<PClick>, Result<Ptm>) {
    let pclick = (|| -> Result<PClick> {
        let path = dir.join("pclick.tsv");
        let store = ClickStore::read_tsv(BufReader::new(File::open(&path).with_context(|| path.display().to_string())?))?;
        Ok(PClick { store, beta })
    })();
    let ptm = (|| -> Result<Ptm> {
        let path = dir.join("ptm.json");
        let model = TopicModel::read_json(BufReader::new(File::open(&path).with_context(|| path.display().to_string())?))?;
        Ok(Ptm { model, fuse: true })
    })();
    (pclick, ptm)
}

#[derive(Serialize)]
struct Comparison {
    model: String,
    against: String,
    test: PairedTTest,
}

#[derive(Serialize)]
struct EvaluationSummary {
    models: Vec<String>,
    errors: BTreeMap<String, String>,
    comparisons: Vec<Comparison>,
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    if !(a.pclick_beta > 0.0) {
        return Err(usage("--pclick-beta must be positive"));
    }
    let inputs = Inputs::load(&a.data)?;
    ensure_dir(&a.out.out)?;
    let mut errors: BTreeMap<String, String> = BTreeMap::new();

    // Models may differ in input width; build one dataset per width.
    let mut rankers: Vec<Box<dyn Reranker>> = vec![Box::new(OriginalRanking)];
    if let Some(dir) = &a.baselines {
        let (pc, ptm) = load_baselines(dir, a.pclick_beta);
        match pc {
            Ok(p) => rankers.push(Box::new(p)),
            Err(e) => {
                errors.insert("p-click".into(), format!("{e:#}"));
            }
        }
        match ptm {
            Ok(p) => rankers.push(Box::new(p)),
            Err(e) => {
                errors.insert("ptm".into(), format!("{e:#}"));
            }
        }
    }
    let base_dim = default_dim(&a.data)?;
    let mut datasets: HashMap<usize, (Dataset, String)> = HashMap::new();
    datasets.insert(base_dim, inputs.dataset(&a.data, base_dim)?);
    let mut models: Vec<(Model, usize)> = Vec::new();
    for path in &a.checkpoints {
        let label = path.display().to_string();
        let header = (|| -> Result<Checkpoint> {
            require_file(path, "checkpoint")?;
            Ok(read_checkpoint(BufReader::new(File::open(path)?))?)
        })();
        let dim = match header {
            Ok(c) => c.header.config.d_e,
            Err(e) => {
                errors.insert(label, format!("{e:#}"));
                continue;
            }
        };
        if !datasets.contains_key(&dim) {
            match inputs.dataset(&a.data, dim) {
                Ok(d) => {
                    datasets.insert(dim, d);
                }
                Err(e) => {
                    errors.insert(label, format!("{e:#}"));
                    continue;
                }
            }
        }
        match load_model(path, Some(&datasets[&dim].1)) {
            Ok(m) => models.push((m, dim)),
            Err(e) => {
                errors.insert(label, format!("{e:#}"));
            }
        }
    }

    let mut evals: Vec<ModelEvaluation> = Vec::new();
    for r in &rankers {
        evals.push(evaluate(&datasets[&base_dim].0, r.as_ref()));
    }
    for (m, dim) in &models {
        evals.push(evaluate(&datasets[dim].0, m));
    }
    for (name, e) in &errors {
        log::error!("{name}: {e}");
    }

    let dir = &a.out.out;
    for e in &evals {
        let name = &e.report.model;
        write_json(&dir.join(format!("report_{name}.json")), e)?;
        let mut out = create(&dir.join(format!("queries_{name}.csv")))?;
        write_query_csv(&mut out, &e.outcomes)?;
        out.flush()?;
    }
    let baselines: Vec<&ModelEvaluation> = evals
        .iter()
        .filter(|e| ["original", "p-click", "ptm"].contains(&e.report.model.as_str()))
        .collect();
    let mut comparisons = Vec::new();
    for e in &evals {
        for b in &baselines {
            if b.report.model == e.report.model {
                continue;
            }
            let x: Vec<f64> = e.outcomes.iter().map(|o| o.ap).collect();
            let y: Vec<f64> = b.outcomes.iter().map(|o| o.ap).collect();
            comparisons.push(Comparison {
                model: e.report.model.clone(),
                against: b.report.model.clone(),
                test: paired_t_test(&x, &y),
            });
        }
    }
    let table = comparison_table(&evals);
    fs::write(dir.join("comparison.txt"), &table)?;
    write_json(
        &dir.join("summary.json"),
        &EvaluationSummary {
            models: evals.iter().map(|e| e.report.model.clone()).collect(),
            errors: errors.clone(),
            comparisons,
        },
    )?;
    print!("{table}");
    if evals.len() == 1 && !errors.is_empty() {
        log::warn!("only the original ranking could be evaluated");
    }
    Ok(())
}


#[derive(Serialize)]
struct RerankRow<'a> {
    user: &'a str,
    session: &'a str,
    qid: &'a str,
    original: Vec<&'a str>,
    reranked: Vec<&'a str>,
}

pub fn rerank(a: &RerankArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let ckpt = read_checkpoint(BufReader::new(File::open(&a.checkpoint)?)).map_err(|e| usage(e.to_string()))?;
    let inputs = Inputs::load(&a.data)?;
    let (data, hash) = inputs.dataset(&a.data, ckpt.header.config.d_e)?;
    ckpt.check_vocab(&hash).map_err(|e| usage(e.to_string()))?;
    let model = ckpt.model;
    if let Some(u) = &a.user {
        if !data.users.iter().any(|x| &x.user_id == u) {
            return Err(usage(format!("user {u} has no test sessions")));
        }
    }
    ensure_dir(&a.out.out)?;
    let mut out = create(&a.out.out.join("rerank.jsonl"))?;
    let test = |r: SessionRole, _: &_| r == SessionRole::Test;
    for user in data.users.iter().filter(|u| a.user.as_ref().is_none_or(|x| x == &u.user_id)) {
        for (m, n, ranking) in model.rerank_user(&data, user, &test) {
            let s = &user.sessions[m];
            let q = &s.queries[n];
            let row = RerankRow {
                user: &user.user_id,
                session: &s.session_id,
                qid: &q.query_id,
                original: q.docs.iter().map(|&d| data.doc_ids[d].as_str()).collect(),
                reranked: ranking.iter().map(|&i| data.doc_ids[q.docs[i]].as_str()).collect(),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AttentionRow {
    session_index: usize,
    session_id: String,
    representative_query: String,
    weight: f64,
    below_display_threshold: bool,
}

#[derive(Serialize)]
struct AttentionDump {
    user: String,
    query_id: String,
    query: String,
    note: Option<String>,
    rows: Vec<AttentionRow>,
}

/// Most frequent normalised query of a session; ties go to the earliest.
fn representative_query(queries: &[String]) -> String {
    let mut counts: Vec<(&String, usize)> = Vec::new();
    for q in queries {
        match counts.iter_mut().find(|(k, _)| *k == q) {
            Some((_, c)) => *c += 1,
            None => counts.push((q, 1)),
        }
    }
    let best = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    counts
        .into_iter()
        .find(|(_, c)| *c == best)
        .map(|(q, _)| q.clone())
        .unwrap_or_default()
}

pub fn attention(a: &AttentionArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let ckpt = read_checkpoint(BufReader::new(File::open(&a.checkpoint)?)).map_err(|e| usage(e.to_string()))?;
    if !ckpt.header.config.variant.uses_attention() {
        return Err(usage(format!("a {} checkpoint has no attention", ckpt.header.config.variant)));
    }
    let inputs = Inputs::load(&a.data)?;
    let (data, hash) = inputs.dataset(&a.data, ckpt.header.config.d_e)?;
    ckpt.check_vocab(&hash).map_err(|e| usage(e.to_string()))?;
    let user = data
        .users
        .iter()
        .find(|u| u.user_id == a.user)
        .ok_or_else(|| usage(format!("unknown user {} (or no test sessions)", a.user)))?;
    let located = user.sessions.iter().enumerate().find_map(|(m, s)| {
        s.queries.iter().enumerate().find_map(|(n, q)| {
            let wanted = match &a.query_id {
                Some(id) => &q.query_id == id,
                None => s.role == SessionRole::Test,
            };
            wanted.then_some((m, n))
        })
    });
    let (m, n) = located.ok_or_else(|| usage(format!("query not found for user {}", a.user)))?;
    let weights = query_attention(&ckpt.model, user, m, n);
    let rows: Vec<AttentionRow> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let s = &user.sessions[i];
            let keys: Vec<String> = s.queries.iter().map(|q| q.query_key.clone()).collect();
            AttentionRow {
                session_index: i,
                session_id: s.session_id.clone(),
                representative_query: representative_query(&keys),
                weight: w,
                below_display_threshold: w < ATTENTION_DISPLAY_THRESHOLD,
            }
        })
        .collect();
    let q = &user.sessions[m].queries[n];
    let dump = AttentionDump {
        user: user.user_id.clone(),
        query_id: q.query_id.clone(),
        query: q.query_key.clone(),
        note: rows.is_empty().then(|| "user has no earlier sessions".to_string()),
        rows,
    };
    ensure_dir(&a.out.out)?;
    write_json(&a.out.out.join("attention.json"), &dump)?;
    let mut out = create(&a.out.out.join("attention.tsv"))?;
    writeln!(out, "session\tsession_id\tquery\tweight\tbelow_0.01")?;
    for r in &dump.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{}",
            r.session_index, r.session_id, r.representative_query, r.weight, r.below_display_threshold
        )?;
    }
    out.flush()?;
    Ok(())
}
