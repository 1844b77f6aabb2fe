//! Vocabulary statistics, frozen word embeddings, and TF-IDF weighted text vectors.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Deref;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Scale applied to hash-seeded fallback embeddings.
pub const FALLBACK_SCALE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("embedding file has dimension {found}, configured width is {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense fixed-width vector for a query or document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextVector(pub Vec<f64>);

impl TextVector {
    pub fn zeros(dim: usize) -> Self {
        TextVector(vec![0.0; dim])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl Deref for TextVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<u32>,
    n_docs: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn df(&self, idx: usize) -> u32 {
        self.df[idx]
    }

    /// `word\tindex\tdf`, one line per word in index order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, w) in self.words.iter().enumerate() {
            writeln!(out, "{w}\t{i}\t{}", self.df[i])?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the TSV dump; identifies the vocabulary in checkpoints.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to a Vec cannot fail");
        let digest = Sha256::digest(&buf);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds the vocabulary over a document corpus. Indices follow lexical order.
pub fn build_vocab<S: AsRef<str>>(docs: &[Vec<S>], min_count: usize) -> Result<Vocabulary, TextError> {
    if docs.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, (usize, u32)> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
        for w in &seen {
            counts.entry(w).or_default().0 += 1;
        }
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            counts.entry(w).or_default().1 += 1;
        }
    }
    let (words, df): (Vec<String>, Vec<u32>) = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_count)
        .map(|(w, (_, d))| (w.to_string(), d))
        .unzip();
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(Vocabulary {
        words,
        index,
        df,
        n_docs: docs.len(),
    })
}

/// Frozen `|V| x d_e` embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Hash-seeded fallback vectors for every vocabulary word.
    pub fn fallback(vocab: &Vocabulary, dim: usize) -> Self {
        let mut data = Vec::with_capacity(vocab.len() * dim);
        for w in vocab.words() {
            data.extend(fallback_vector(w, dim));
        }
        EmbeddingMatrix { dim, data }
    }
}

/// Stable 64-bit hash of a word (first eight bytes of its SHA-256).
pub fn stable_hash(word: &str) -> u64 {
    let d = Sha256::digest(word.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has at least eight bytes"))
}

/// Deterministic pseudo-normal vector for a word missing from the embedding file.
pub fn fallback_vector(word: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(word));
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            FALLBACK_SCALE * z
        })
        .collect()
}

/// Loads word2vec text-format vectors for vocabulary words; the rest fall back.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<EmbeddingMatrix, TextError> {
    let reader = BufReader::new(File::open(path)?);
    read_word2vec(reader, vocab, dim)
}

pub fn read_word2vec<R: BufRead>(reader: R, vocab: &Vocabulary, dim: usize) -> Result<EmbeddingMatrix, TextError> {
    let mut m = EmbeddingMatrix::fallback(vocab, dim);
    let mut lines = reader.lines();
    let header = lines.next().ok_or(TextError::Malformed {
        line: 1,
        message: "missing header".into(),
    })??;
    let mut parts = header.split_whitespace();
    let bad_header = || TextError::Malformed {
        line: 1,
        message: "header must be `count dim`".into(),
    };
    let _count: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad_header)?;
    let file_dim: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad_header)?;
    if file_dim != dim {
        return Err(TextError::DimensionMismatch {
            expected: dim,
            found: file_dim,
        });
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let Some(idx) = vocab.get(word) else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| TextError::Malformed {
                line: i + 2,
                message: format!("{e}"),
            })?;
        if values.len() != dim {
            return Err(TextError::Malformed {
                line: i + 2,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        m.data[idx * dim..(idx + 1) * dim].copy_from_slice(&values);
    }
    Ok(m)
}

/// How token weights are derived when averaging embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermWeighting {
    /// `tf * (ln((N + 1) / (df + 1)) + 1)`
    #[default]
    TfIdf,
    /// `tf * ln(N / df)`
    TfIdfRaw,
    /// Raw term frequency.
    Tf,
}

impl TermWeighting {
    fn idf(self, n_docs: usize, df: u32) -> f64 {
        let (n, df) = (n_docs as f64, df as f64);
        match self {
            TermWeighting::TfIdf => ((n + 1.0) / (df + 1.0)).ln() + 1.0,
            TermWeighting::TfIdfRaw => {
                if df > 0.0 {
                    (n / df).ln()
                } else {
                    0.0
                }
            }
            TermWeighting::Tf => 1.0,
        }
    }
}

/// Vocabulary, embeddings and weighting scheme bundled together.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    pub weighting: TermWeighting,
}

impl TextEncoder {
    pub fn new(vocab: Vocabulary, embeddings: EmbeddingMatrix, weighting: TermWeighting) -> Self {
        TextEncoder {
            vocab,
            embeddings,
            weighting,
        }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn represent<S: AsRef<str>>(&self, tokens: &[S]) -> TextVector {
        represent(tokens, &self.vocab, &self.embeddings, self.weighting)
    }
}

/// Weighted mean of in-vocabulary token embeddings; zero when nothing is known.
pub fn represent<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    emb: &EmbeddingMatrix,
    weighting: TermWeighting,
) -> TextVector {
    let mut tf: BTreeMap<usize, usize> = BTreeMap::new();
    for t in tokens {
        if let Some(i) = vocab.get(t.as_ref()) {
            *tf.entry(i).or_default() += 1;
        }
    }
    let mut v = vec![0.0; emb.dim()];
    let mut total = 0.0;
    for (i, count) in tf {
        let w = count as f64 * weighting.idf(vocab.n_docs(), vocab.df(i));
        if w <= 0.0 {
            continue;
        }
        total += w;
        for (vk, ek) in v.iter_mut().zip(emb.row(i)) {
            *vk += w * ek;
        }
    }
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
    TextVector(v)
}

/// Element-wise mean of the SAT-clicked document vectors; zero for none.
pub fn sat_doc_average(docs: &[&TextVector], dim: usize) -> TextVector {
    let mut v = vec![0.0; dim];
    if docs.is_empty() {
        return TextVector(v);
    }
    for d in docs {
        for (a, b) in v.iter_mut().zip(d.iter()) {
            *a += b;
        }
    }
    let n = docs.len() as f64;
    v.iter_mut().for_each(|x| *x /= n);
    TextVector(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn corpus() -> Vec<Vec<&'static str>> {
        vec![vec!["a", "b"], vec!["b"]]
    }

    #[test]
    fn vocab_counts() {
        let v = build_vocab(&corpus(), 1).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.df(v.get("a").unwrap()), 1);
        assert_eq!(v.df(v.get("b").unwrap()), 2);
        let v = build_vocab(&corpus(), 2).unwrap();
        assert_eq!(v.words(), &["b".to_string()]);
        let empty: Vec<Vec<&str>> = vec![];
        assert!(matches!(build_vocab(&empty, 1), Err(TextError::EmptyCorpus)));
    }

    #[test]
    fn df_matches_recount_on_random_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let docs: Vec<Vec<String>> = (0..100)
            .map(|_| (0..rng.random_range(1..15)).map(|_| format!("w{}", rng.random_range(0..40))).collect())
            .collect();
        let v = build_vocab(&docs, 1).unwrap();
        for (i, w) in v.words().iter().enumerate() {
            let recount = docs.iter().filter(|d| d.iter().any(|t| t == w)).count();
            assert_eq!(v.df(i) as usize, recount, "{w}");
            assert!(v.df(i) as usize <= v.n_docs());
        }
    }

    #[test]
    fn word2vec_loading() {
        let v = build_vocab(&corpus(), 1).unwrap();
        let file = "3 2\na 0.5 -1\nzz 9 9\nb 2 3\n";
        let m = read_word2vec(file.as_bytes(), &v, 2).unwrap();
        assert_eq!(m.row(v.get("a").unwrap()), &[0.5, -1.0]);
        assert_eq!(m.row(v.get("b").unwrap()), &[2.0, 3.0]);
        let err = read_word2vec("3 100\n".as_bytes(), &v, 300).unwrap_err();
        assert!(matches!(err, TextError::DimensionMismatch { expected: 300, found: 100 }));
    }

    #[test]
    fn missing_words_get_stable_fallback() {
        let v = build_vocab(&corpus(), 1).unwrap();
        let m = read_word2vec("1 4\na 1 1 1 1\n".as_bytes(), &v, 4).unwrap();
        let b = m.row(v.get("b").unwrap());
        assert_eq!(b, fallback_vector("b", 4).as_slice());
        // frozen value: identical across processes and platforms
        assert_eq!(stable_hash("b"), stable_hash("b"));
        assert_ne!(fallback_vector("b", 4), fallback_vector("c", 4));
    }

    fn encoder() -> TextEncoder {
        let docs = vec![vec!["a", "b", "c"], vec!["a", "c"], vec!["a"], vec!["d"]];
        let v = build_vocab(&docs, 1).unwrap();
        let e = EmbeddingMatrix::fallback(&v, 3);
        TextEncoder::new(v, e, TermWeighting::TfIdf)
    }

    #[test]
    fn single_word_is_its_row() {
        let enc = encoder();
        let r = enc.represent(&["c"]);
        let row = enc.embeddings.row(enc.vocab.get("c").unwrap());
        for (a, b) in r.iter().zip(row) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn all_oov_is_zero() {
        assert!(encoder().represent(&["zz", "yy"]).is_zero());
        assert!(encoder().represent::<&str>(&[]).is_zero());
    }

    #[test]
    fn three_word_hand_computed_mean() {
        // N = 4; df(a) = 3, df(b) = 1, df(c) = 2
        // idf = ln(5 / (df + 1)) + 1; text "a b b c": weights 1*idf(a), 2*idf(b), 1*idf(c)
        let enc = encoder();
        let idf = |df: f64| (5.0f64 / (df + 1.0)).ln() + 1.0;
        let (wa, wb, wc) = (idf(3.0), 2.0 * idf(1.0), idf(2.0));
        let row = |w: &str| enc.embeddings.row(enc.vocab.get(w).unwrap()).to_vec();
        let (ra, rb, rc) = (row("a"), row("b"), row("c"));
        let r = enc.represent(&["a", "b", "b", "c", "oov"]);
        for k in 0..3 {
            let expected = (wa * ra[k] + wb * rb[k] + wc * rc[k]) / (wa + wb + wc);
            assert!((r.0[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sat_average_examples() {
        assert!(sat_doc_average(&[], 2).is_zero());
        let a = TextVector(vec![1.0, 0.0]);
        let b = TextVector(vec![0.0, 1.0]);
        assert_eq!(sat_doc_average(&[&a], 2), a);
        assert_eq!(sat_doc_average(&[&a, &b], 2).0, vec![0.5, 0.5]);
    }

    #[test]
    fn vocab_hash_is_content_addressed() {
        let a = build_vocab(&corpus(), 1).unwrap();
        let b = build_vocab(&corpus(), 1).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), build_vocab(&corpus(), 2).unwrap().content_hash());
    }

    proptest! {
        #[test]
        fn doubling_text_is_invariant_and_in_hull(idx in proptest::collection::vec(0usize..4, 1..10)) {
            let enc = encoder();
            let words = ["a", "b", "c", "d"];
            let text: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
            let doubled: Vec<&str> = text.iter().chain(text.iter()).copied().collect();
            let (r1, r2) = (enc.represent(&text), enc.represent(&doubled));
            for (x, y) in r1.iter().zip(r2.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            // convex hull: each coordinate within the used rows' range
            for k in 0..3 {
                let vals: Vec<f64> = text.iter().map(|w| enc.embeddings.row(enc.vocab.get(w).unwrap())[k]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(r1[k] >= lo - 1e-12 && r1[k] <= hi + 1e-12);
            }
        }
    }
}
