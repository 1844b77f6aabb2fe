//! Glue from raw logs and documents to a prepared [`Dataset`].

use std::collections::BTreeMap;
use std::io::BufReader;

use crate::dataset::Dataset;
use crate::query_log::{parse_log, IngestOptions, LogError, SplitConfig, Tokenizer, UserLog};
use crate::synthlog::{generate, GenConfig, SynthLog, World, WorldConfig};
use crate::text_repr::{build_vocab, read_word2vec, EmbeddingMatrix, TermWeighting, TextEncoder, TextError, Vocabulary};

/// Vocabulary over document and query tokens.
pub fn corpus_vocab(logs: &[UserLog], docs: &BTreeMap<String, Vec<String>>) -> Result<Vocabulary, TextError> {
    let mut texts: Vec<Vec<String>> = docs.values().cloned().collect();
    texts.extend(
        logs.iter()
            .flat_map(|l| &l.sessions)
            .flat_map(|s| &s.events)
            .map(|e| e.terms.clone()),
    );
    build_vocab(&texts, 1)
}

/// Document texts as `read_documents` would load them from disk.
pub fn documents(world: &World, tok: &Tokenizer) -> BTreeMap<String, Vec<String>> {
    world
        .document_records()
        .into_iter()
        .map(|d| (d.doc, tok.normalize_tokens(&d.tokens)))
        .collect()
}

/// A generated world with its log already ingested.
pub struct SynthCorpus {
    pub world: World,
    pub log: SynthLog,
    pub users: Vec<UserLog>,
    pub docs: BTreeMap<String, Vec<String>>,
}

impl SynthCorpus {
    pub fn generate(world: WorldConfig, gen: &GenConfig, seed: u64) -> Result<Self, LogError> {
        let world = World::new(world, seed);
        let log = generate(&world, gen, seed.wrapping_add(1));
        let opts = IngestOptions::default();
        let users = parse_log(&log.lines(), &opts)?;
        let docs = documents(&world, &opts.tokenizer);
        Ok(SynthCorpus { world, log, users, docs })
    }

    /// Encoder over the world's planted word vectors.
    pub fn encoder(&self) -> Result<TextEncoder, TextError> {
        let vocab = corpus_vocab(&self.users, &self.docs)?;
        let mut buf = Vec::new();
        self.world.write_embeddings(&mut buf).map_err(TextError::Io)?;
        let emb: EmbeddingMatrix = read_word2vec(BufReader::new(&buf[..]), &vocab, self.world.config.embedding_dim)?;
        Ok(TextEncoder::new(vocab, emb, TermWeighting::default()))
    }

    pub fn dataset(&self, split: &SplitConfig) -> Result<Dataset, TextError> {
        Ok(Dataset::build(&self.users, &self.docs, &self.encoder()?, split))
    }
}
