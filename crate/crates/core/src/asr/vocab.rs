use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{IrisError, Result};

pub const BLANK: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
const SPECIALS: [&str; 4] = ["<blank>", "<unk>", "<sos>", "<eos>"];

/// Character vocabulary: four specials followed by characters in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for c in set {
            index.insert(c, tokens.len());
            tokens.push(c.to_string());
        }
        Self { tokens, index }
    }

    /// Every character that appears in `texts`.
    pub fn from_transcripts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_chars(texts.into_iter().flat_map(str::chars))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Ids of ordinary characters (everything after the specials).
    pub fn char_ids(&self) -> std::ops::Range<usize> {
        SPECIALS.len()..self.tokens.len()
    }

    /// Maps characters to ids; unseen characters become `<unk>`.
    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence {
            ids: text.chars().map(|c| self.index.get(&c).copied().unwrap_or(UNK)).collect(),
        }
    }

    /// Concatenates character tokens; specials other than `<unk>` are dropped.
    pub fn decode(&self, seq: &TokenSequence) -> String {
        seq.ids
            .iter()
            .filter_map(|&id| match id {
                UNK => Some("?"),
                BLANK | SOS | EOS => None,
                _ => self.token(id),
            })
            .collect()
    }

    /// One token per line; the line index is the id.
    pub fn to_file_contents(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(contents: &str) -> Result<Self> {
        let lines: Vec<&str> = contents.lines().collect();
        if lines.len() < SPECIALS.len() || lines[..SPECIALS.len()] != SPECIALS {
            return Err(IrisError::Config(format!(
                "vocabulary must start with {}",
                SPECIALS.join(", ")
            )));
        }
        let mut chars = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(SPECIALS.len()) {
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(IrisError::Config(format!(
                        "vocabulary line {i} `{line}` is not a single character"
                    )))
                }
            }
        }
        let vocab = Self::from_chars(chars.iter().copied());
        if vocab.len() != lines.len() || vocab.tokens[SPECIALS.len()..] != lines[SPECIALS.len()..] {
            return Err(IrisError::Config(
                "vocabulary characters must be unique and sorted".into(),
            ));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_contents()).map_err(|e| IrisError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| IrisError::io(path, e))?)
    }
}

/// Token ids of one transcript (no `<sos>`/`<eos>` framing).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    /// Checks ids against `vocab_size` and rejects framing and blank tokens.
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab_size) {
            return Err(IrisError::InvalidArgument(format!(
                "token id {bad} outside vocabulary of {vocab_size}"
            )));
        }
        if ids.iter().any(|&id| matches!(id, BLANK | SOS | EOS)) {
            return Err(IrisError::InvalidArgument(
                "transcripts may not contain <blank>, <sos> or <eos>".into(),
            ));
        }
        Ok(Self { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
