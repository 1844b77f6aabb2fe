use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{Context, Result};
use hrnn_core::dataset::Dataset;
use hrnn_core::pipeline::corpus_vocab;
use hrnn_core::query_log::{ingest_log, read_documents, IngestOptions, LogError, SplitConfig, UserLog};
use hrnn_core::text_repr::{load_embeddings, EmbeddingMatrix, TermWeighting, TextEncoder, TextError};

use crate::{usage, DataArgs};

/// Width used when no checkpoint or embedding file fixes it.
pub const DEFAULT_DIM: usize = 50;

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn log_error(e: LogError) -> anyhow::Error {
    match e {
        LogError::Io { .. } => anyhow::Error::new(e),
        other => usage(other.to_string()),
    }
}

fn text_error(e: TextError) -> anyhow::Error {
    match e {
        TextError::Io(_) => anyhow::Error::new(e),
        other => usage(other.to_string()),
    }
}

pub fn ingest_options(gap_sessions: bool) -> IngestOptions {
    let opts = IngestOptions::default();
    if gap_sessions {
        opts.with_gap_segmentation()
    } else {
        opts
    }
}

/// Width declared in the header line of a word2vec text file.
pub fn embedding_file_dim(path: &Path) -> Result<usize> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut header = String::new();
    BufReader::new(file).read_line(&mut header)?;
    header
        .split_whitespace()
        .nth(1)
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| usage(format!("{}: missing `count dim` header", path.display())))
}

/// Parsed inputs shared by every data-consuming command.
pub struct Inputs {
    pub users: Vec<UserLog>,
    pub docs: BTreeMap<String, Vec<String>>,
}

impl Inputs {
    pub fn load(args: &DataArgs) -> Result<Self> {
        require_file(&args.log, "log file")?;
        require_file(&args.docs, "document file")?;
        if let Some(e) = &args.embeddings {
            require_file(e, "embedding file")?;
        }
        let opts = ingest_options(args.gap_sessions);
        let users = ingest_log(&args.log, &opts).map_err(log_error)?;
        let docs = read_documents(&args.docs, &opts.tokenizer).map_err(log_error)?;
        log::info!("loaded {} users and {} documents", users.len(), docs.len());
        Ok(Inputs { users, docs })
    }

    /// Encoder of width `dim` plus the vocabulary hash checkpoints are tied to.
    pub fn encoder(&self, args: &DataArgs, dim: usize) -> Result<(TextEncoder, String)> {
        let vocab = corpus_vocab(&self.users, &self.docs).map_err(text_error)?;
        let hash = vocab.content_hash();
        let emb = match &args.embeddings {
            Some(path) => load_embeddings(path, &vocab, dim).map_err(text_error)?,
            None => EmbeddingMatrix::fallback(&vocab, dim),
        };
        Ok((TextEncoder::new(vocab, emb, TermWeighting::default()), hash))
    }

    pub fn dataset(&self, args: &DataArgs, dim: usize) -> Result<(Dataset, String)> {
        let (encoder, hash) = self.encoder(args, dim)?;
        let data = Dataset::build(&self.users, &self.docs, &encoder, &SplitConfig::default());
        if data.users.is_empty() {
            return Err(usage("no user has enough sessions for a test split"));
        }
        Ok((data, hash))
    }
}

/// Width for commands whose models do not fix one.
pub fn default_dim(args: &DataArgs) -> Result<usize> {
    match &args.embeddings {
        Some(p) => embedding_file_dim(p),
        None => Ok(DEFAULT_DIM),
    }
}
