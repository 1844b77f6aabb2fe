use std::collections::HashSet;
use std::fs;
use std::path::Path;

const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

/// Lowercases, splits on non-alphanumerics, and drops stopwords and tokens
/// shorter than `min_len` characters.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
    min_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::from_stopword_list(DEFAULT_STOPWORDS)
    }
}

impl Tokenizer {
    /// One stopword per line; `#` starts a comment.
    pub fn from_stopword_list(list: &str) -> Self {
        let stopwords = list
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Tokenizer {
            stopwords,
            min_len: 2,
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_stopword_list(&fs::read_to_string(path)?))
    }

    pub fn with_min_len(mut self, min_len: usize) -> Self {
        self.min_len = min_len;
        self
    }

    pub fn is_stopword(&self, w: &str) -> bool {
        self.stopwords.contains(w)
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| t.chars().count() >= self.min_len && !self.stopwords.contains(t))
            .collect()
    }

    /// Re-applies the filter to already-split tokens (document files).
    pub fn normalize_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens
            .iter()
            .flat_map(|t| self.tokenize(t.as_ref()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_drops_noise() {
        let t = Tokenizer::default();
        assert_eq!(
            t.tokenize("The JAVA string-to-int, a guide!"),
            vec!["java", "string", "int", "guide"]
        );
    }

    #[test]
    fn custom_stopwords_and_min_len() {
        let t = Tokenizer::from_stopword_list("# comment\nfoo\n").with_min_len(3);
        assert_eq!(t.tokenize("foo bar to xyz"), vec!["bar", "xyz"]);
    }

    #[test]
    fn tokenizing_is_idempotent() {
        let t = Tokenizer::default();
        let once = t.tokenize("Virginia welfare LOTTERY ban 2013");
        assert_eq!(t.tokenize(&once.join(" ")), once);
    }
}
