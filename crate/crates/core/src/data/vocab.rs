use std::collections::HashMap;

use super::DataError;

/// Reserved spelling of the unknown-word token.
pub const UNK_TOKEN: &str = "<unk>";

/// Fixed word list; a word's id is its line index in the vocabulary file.
///
/// If the file has no `<unk>` line, the unknown id is reserved just past the
/// last word, so [`len`](Self::len) is one larger than the line count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
    unk: u32,
}

impl Vocab {
    pub fn from_words(words: Vec<String>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(DataError::Parse {
                    file: "vocab".into(),
                    line: i + 1,
                    message: format!("invalid vocabulary entry {w:?}"),
                });
            }
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(DataError::Parse {
                    file: "vocab".into(),
                    line: i + 1,
                    message: format!("duplicate vocabulary entry {w:?}"),
                });
            }
        }
        let unk = index.get(UNK_TOKEN).copied().unwrap_or(words.len() as u32);
        Ok(Self { words, index, unk })
    }

    /// One token per line; a trailing newline is allowed.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Self::from_words(Vec::new());
        }
        Self::from_words(body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect())
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    /// Number of ids, including a reserved unknown id.
    pub fn len(&self) -> usize {
        if (self.unk as usize) < self.words.len() {
            self.words.len()
        } else {
            self.words.len() + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(self.unk)
    }

    /// Whitespace split, then per-word lookup.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, DataError> {
        let tokens: Vec<u32> = text.split_whitespace().map(|w| self.id(w)).collect();
        if tokens.is_empty() {
            return Err(DataError::EmptyText);
        }
        Ok(tokens)
    }
}
