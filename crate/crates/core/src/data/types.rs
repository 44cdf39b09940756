use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DataError, Vocab};

/// One textual behavior. Identity is the trimmed text, byte for byte.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AtomicBehavior {
    text: String,
    tokens: Vec<u32>,
}

impl AtomicBehavior {
    pub fn new(text: &str, vocab: &Vocab) -> Result<Self, DataError> {
        let text = text.trim();
        let tokens = vocab.tokenize(text)?;
        Ok(Self { text: text.to_string(), tokens })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Deduplication key.
    pub fn key(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn token_len(&self) -> usize {
        self.tokens.len()
    }
}

/// `N` ordered domain sequences of behaviors, oldest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserProfile {
    pub user_id: String,
    pub sequences: Vec<Vec<Arc<AtomicBehavior>>>,
}

impl UserProfile {
    pub fn n_domains(&self) -> usize {
        self.sequences.len()
    }

    pub fn behavior_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// `l_u`: total tokens over all behaviors of all domains.
    pub fn token_length(&self) -> usize {
        self.sequences.iter().flatten().map(|b| b.token_len()).sum()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.sequences.is_empty() {
            return Err(DataError::Inconsistent(format!("user {} has no sequences", self.user_id)));
        }
        if let Some(n) = self.sequences.iter().position(Vec::is_empty) {
            return Err(DataError::Inconsistent(format!("user {} sequence {n} is empty", self.user_id)));
        }
        Ok(())
    }

    /// Keeps the newest behaviors, taken round-robin across domains by
    /// recency rank, until `budget` tokens are used. Every domain keeps at
    /// least its newest behavior; chronological order is preserved.
    pub fn truncated(&self, budget: usize) -> UserProfile {
        let mut keep: Vec<usize> = vec![0; self.sequences.len()];
        let mut used = 0usize;
        for (n, seq) in self.sequences.iter().enumerate() {
            keep[n] = 1;
            used += seq[seq.len() - 1].token_len();
        }
        let longest = self.sequences.iter().map(Vec::len).max().unwrap_or(0);
        'outer: for rank in 1..longest {
            for (n, seq) in self.sequences.iter().enumerate() {
                if rank >= seq.len() {
                    continue;
                }
                let b = &seq[seq.len() - 1 - rank];
                if used + b.token_len() > budget {
                    break 'outer;
                }
                used += b.token_len();
                keep[n] += 1;
            }
        }
        UserProfile {
            user_id: self.user_id.clone(),
            sequences: self.sequences.iter().zip(&keep).map(|(s, &k)| s[s.len() - k..].to_vec()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemProfile {
    pub item_id: String,
    pub title: Arc<AtomicBehavior>,
}

/// One impression. `user` and `item` index into the owning [`Dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtrRecord {
    pub ts: u64,
    pub user: usize,
    pub item: usize,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Profiles plus time-ordered train/valid/test impressions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub users: Vec<UserProfile>,
    pub items: Vec<ItemProfile>,
    pub train: Vec<CtrRecord>,
    pub valid: Vec<CtrRecord>,
    pub test: Vec<CtrRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[CtrRecord] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Domain count shared by every user.
    pub fn n_domains(&self) -> Result<usize, DataError> {
        let n = self.users.first().map_or(0, UserProfile::n_domains);
        if let Some(u) = self.users.iter().find(|u| u.n_domains() != n) {
            return Err(DataError::Inconsistent(format!(
                "user {} has {} domains, expected {n}",
                u.user_id,
                u.n_domains()
            )));
        }
        Ok(n)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for u in &self.users {
            u.validate()?;
        }
        self.n_domains()?;
        for r in self.train.iter().chain(&self.valid).chain(&self.test) {
            if r.user >= self.users.len() || r.item >= self.items.len() || r.label > 1 {
                return Err(DataError::Inconsistent(format!("record at ts {} is out of range", r.ts)));
            }
        }
        Ok(())
    }

    pub fn behavior_instances(&self) -> usize {
        self.users.iter().map(UserProfile::behavior_count).sum()
    }

    pub fn base_rate(&self) -> f64 {
        let all: Vec<_> = self.train.iter().chain(&self.valid).chain(&self.test).collect();
        if all.is_empty() {
            return 0.0;
        }
        all.iter().filter(|r| r.label == 1).count() as f64 / all.len() as f64
    }
}
