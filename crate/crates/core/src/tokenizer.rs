//! Vocabulary files and greedy longest-match tokenization.
//!
//! A vocabulary file holds one token per line; the (zero-based) line number
//! among token lines is the token id. An optional first line `#eos <id>`
//! designates the end-of-sequence token, otherwise the last token is used.
//! Within a token line, `\n`, `\t`, `\r` and `\\` are unescaped so that
//! whitespace tokens can be written down.

use std::collections::HashMap;
use std::path::Path;

use crate::digest::sha256_of_parts;

pub type TokenId = u32;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty vocabulary")]
    Empty,
    #[error("duplicate token {token:?} (ids {first} and {second})")]
    Duplicate { token: String, first: TokenId, second: TokenId },
    #[error("line {line}: empty token")]
    EmptyToken { line: usize },
    #[error("malformed #eos header: {0:?}")]
    BadHeader(String),
    #[error("eos id {eos} out of range for vocabulary of size {size}")]
    EosOutOfRange { eos: TokenId, size: usize },
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: HashMap<char, usize>,
    token: Option<TokenId>,
}

/// An immutable, densely indexed vocabulary.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    eos: TokenId,
    fingerprint: String,
    trie: Vec<TrieNode>,
}

impl Vocab {
    /// Builds a vocabulary; `eos` defaults to the last token.
    pub fn from_tokens(tokens: Vec<String>, eos: Option<TokenId>) -> Result<Vocab, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let eos = eos.unwrap_or((tokens.len() - 1) as TokenId);
        if eos as usize >= tokens.len() {
            return Err(VocabError::EosOutOfRange { eos, size: tokens.len() });
        }
        let mut trie = vec![TrieNode::default()];
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(VocabError::EmptyToken { line: id + 1 });
            }
            let mut node = 0;
            for ch in tok.chars() {
                node = match trie[node].children.get(&ch) {
                    Some(&next) => next,
                    None => {
                        trie.push(TrieNode::default());
                        let next = trie.len() - 1;
                        trie[node].children.insert(ch, next);
                        next
                    }
                };
            }
            if let Some(first) = trie[node].token {
                return Err(VocabError::Duplicate {
                    token: tok.clone(),
                    first,
                    second: id as TokenId,
                });
            }
            trie[node].token = Some(id as TokenId);
        }
        let fingerprint = sha256_of_parts(tokens.iter().map(String::as_str));
        Ok(Vocab { tokens, eos, fingerprint, trie })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    /// Content hash of the ordered token list.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        let mut node = 0;
        for ch in token.chars() {
            node = *self.trie[node].children.get(&ch)?;
        }
        self.trie[node].token
    }

    /// Concatenates token strings. Out-of-range ids are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().filter_map(|&id| self.token(id)).collect()
    }

    /// Serializes in the vocabulary file format.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("#eos {}\n", self.eos);
        for t in &self.tokens {
            out.push_str(&escape(t));
            out.push('\n');
        }
        out
    }
}

/// Result of tokenizing a text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tokenized {
    pub ids: Vec<TokenId>,
    /// Characters that no token covered.
    pub skipped: usize,
}

/// Greedy longest-match segmentation, left to right. Characters not covered
/// by any token are skipped and counted.
pub fn tokenize(vocab: &Vocab, text: &str) -> Tokenized {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Tokenized::default();
    let mut i = 0;
    while i < chars.len() {
        let mut node = 0;
        let mut best: Option<(TokenId, usize)> = None;
        for (j, ch) in chars[i..].iter().enumerate() {
            match vocab.trie[node].children.get(ch) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(id) = vocab.trie[node].token {
                best = Some((id, j + 1));
            }
        }
        match best {
            Some((id, len)) => {
                out.ids.push(id);
                i += len;
            }
            None => {
                out.skipped += 1;
                i += 1;
            }
        }
    }
    out
}

pub fn parse_vocab(input: &str) -> Result<Vocab, VocabError> {
    let mut lines = input.lines().peekable();
    let mut eos = None;
    let mut header_lines = 0;
    if let Some(first) = lines.peek() {
        if let Some(rest) = first.strip_prefix("#eos") {
            let id = rest
                .trim()
                .parse::<TokenId>()
                .map_err(|_| VocabError::BadHeader(first.to_string()))?;
            eos = Some(id);
            header_lines = 1;
            lines.next();
        }
    }
    let mut tokens = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            return Err(VocabError::EmptyToken { line: i + 1 + header_lines });
        }
        tokens.push(unescape(line));
    }
    Vocab::from_tokens(tokens, eos)
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocab, VocabError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| VocabError::Io { path: path.display().to_string(), source })?;
    parse_vocab(&text)
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}
