//! Atomic behavior encoding.
//!
//! Each distinct behavior is embedded on its own (positions from 0), run
//! through the low blocks and pooled once. The pooled vectors form the
//! [`BehaviorEmbeddingTable`] that the high blocks read instead of tokens.

mod file;

pub use file::{decode_table, encode_table, load_table, save_table, TABLE_MAGIC, TABLE_VERSION};

use std::path::PathBuf;
use std::sync::Arc;

use indexmap::IndexMap;
use rayon::prelude::*;
use thiserror::Error;

use crate::cost::CostProbe;
use crate::data::{AtomicBehavior, AtomicSet};
use crate::nn::{pool, NnError, PoolMode, Tensor2, TransformerStack};

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("behavior {0:?} has no tokens")]
    EmptyBehavior(String),
    #[error("behavior {0:?} is not in the embedding table")]
    MissingBehavior(String),
    #[error("cannot build a table from an empty behavior set")]
    EmptySet,
    #[error("table dimension {table} does not match model dimension {model}")]
    DimMismatch { table: usize, model: usize },
    #[error("table was built from low-layer weights {table:016x} but the model has {model:016x}; re-run encode")]
    StaleTable { table: u64, model: u64 },
    #[error("not a behavior table (bad magic)")]
    BadMagic,
    #[error("table format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("table checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("table file is truncated")]
    TruncatedFile,
    #[error("corrupt table: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Low-block hidden states (`K × d`) of one behavior.
pub fn low_states(
    stack: &TransformerStack,
    behavior: &AtomicBehavior,
    probe: Option<&CostProbe>,
) -> Result<Tensor2, TableError> {
    if behavior.tokens().is_empty() {
        return Err(TableError::EmptyBehavior(behavior.text().to_string()));
    }
    let x = stack.embed(behavior.tokens())?;
    Ok(stack.forward(stack.low_range(), &x, stack.attention(), probe)?)
}

/// Pooled low-block embedding of one behavior; independent of any context.
pub fn encode_atomic(
    stack: &TransformerStack,
    behavior: &AtomicBehavior,
    mode: PoolMode,
    probe: Option<&CostProbe>,
) -> Result<Vec<f64>, TableError> {
    Ok(pool(&low_states(stack, behavior, probe)?, mode)?)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

/// How [`BehaviorEmbeddingTable::lookup`] treats unknown behaviors.
#[derive(Clone, Copy)]
pub enum MissPolicy<'a> {
    Error,
    EncodeOnMiss(&'a TransformerStack),
}

/// What to do when a table's fingerprint does not match the current weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StalePolicy {
    #[default]
    Error,
    Warn,
}

/// Offline store of pooled behavior embeddings, kept as 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorEmbeddingTable {
    dim: usize,
    pool: PoolMode,
    fingerprint: u64,
    entries: IndexMap<String, Vec<f32>>,
}

impl BehaviorEmbeddingTable {
    pub fn new(dim: usize, pool: PoolMode, fingerprint: u64) -> Self {
        Self { dim, pool, fingerprint, entries: IndexMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pool_mode(&self) -> PoolMode {
        self.pool
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub(crate) fn insert_raw(&mut self, key: String, v: Vec<f32>) -> Result<(), TableError> {
        if v.len() != self.dim {
            return Err(TableError::Corrupt(format!("vector for {key:?} has length {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(TableError::Corrupt(format!("vector for {key:?} is not finite")));
        }
        if self.entries.insert(key.clone(), v).is_some() {
            return Err(TableError::Corrupt(format!("duplicate key {key:?}")));
        }
        Ok(())
    }

    /// Stored vector, or (with [`MissPolicy::EncodeOnMiss`]) a freshly
    /// encoded one that is inserted before it is returned.
    pub fn lookup(&mut self, behavior: &AtomicBehavior, policy: MissPolicy<'_>) -> Result<&[f32], TableError> {
        if !self.entries.contains_key(behavior.key()) {
            match policy {
                MissPolicy::Error => return Err(TableError::MissingBehavior(behavior.key().to_string())),
                MissPolicy::EncodeOnMiss(stack) => {
                    if stack.d() != self.dim {
                        return Err(TableError::DimMismatch { table: self.dim, model: stack.d() });
                    }
                    let v = encode_atomic(stack, behavior, self.pool, None)?;
                    self.entries.insert(behavior.key().to_string(), to_f32(&v));
                }
            }
        }
        Ok(self.entries.get(behavior.key()).expect("present").as_slice())
    }

    /// Read-only lookup that treats a miss as an error.
    pub fn require(&self, behavior: &AtomicBehavior) -> Result<&[f32], TableError> {
        self.get(behavior.key()).ok_or_else(|| TableError::MissingBehavior(behavior.key().to_string()))
    }

    /// Encodes, under the table's pool mode, every behavior that is missing.
    pub fn fill_missing<'b>(
        &mut self,
        stack: &TransformerStack,
        behaviors: impl IntoIterator<Item = &'b Arc<AtomicBehavior>>,
    ) -> Result<usize, TableError> {
        let mut added = 0;
        for b in behaviors {
            if !self.entries.contains_key(b.key()) {
                self.lookup(b, MissPolicy::EncodeOnMiss(stack))?;
                added += 1;
            }
        }
        Ok(added)
    }

    /// Fails (or, under [`StalePolicy::Warn`], logs) when the table was
    /// built from different low-layer weights or another width.
    pub fn check_fresh(&self, stack: &TransformerStack, policy: StalePolicy) -> Result<(), TableError> {
        if self.dim != stack.d() {
            return Err(TableError::DimMismatch { table: self.dim, model: stack.d() });
        }
        let model = stack.low_fingerprint();
        if model != self.fingerprint {
            let err = TableError::StaleTable { table: self.fingerprint, model };
            match policy {
                StalePolicy::Error => return Err(err),
                StalePolicy::Warn => log::warn!("{err}"),
            }
        }
        Ok(())
    }
}

/// Encodes every behavior of `set` exactly once. Work is spread over the
/// rayon pool; entries are inserted in the set's order.
pub fn build_table(
    stack: &TransformerStack,
    set: &AtomicSet,
    mode: PoolMode,
    probe: Option<&CostProbe>,
) -> Result<BehaviorEmbeddingTable, TableError> {
    if set.is_empty() {
        return Err(TableError::EmptySet);
    }
    let behaviors: Vec<&Arc<AtomicBehavior>> = set.iter().collect();
    let vectors: Vec<Vec<f32>> = behaviors
        .par_iter()
        .map(|b| encode_atomic(stack, b, mode, probe).map(|v| to_f32(&v)))
        .collect::<Result<_, _>>()?;
    let mut table = BehaviorEmbeddingTable::new(stack.d(), mode, stack.low_fingerprint());
    for (b, v) in behaviors.into_iter().zip(vectors) {
        table.entries.insert(b.key().to_string(), v);
    }
    Ok(table)
}

/// In-memory cache of per-token low-block states, one entry per distinct
/// behavior. Feeds the token-level high stack of the `fp_abe` ablation.
#[derive(Clone, Debug, Default)]
pub struct TokenStateCache {
    entries: IndexMap<String, Tensor2>,
}

impl TokenStateCache {
    pub fn build(stack: &TransformerStack, set: &AtomicSet, probe: Option<&CostProbe>) -> Result<Self, TableError> {
        let behaviors: Vec<&Arc<AtomicBehavior>> = set.iter().collect();
        let states: Vec<Tensor2> =
            behaviors.par_iter().map(|b| low_states(stack, b, probe)).collect::<Result<_, _>>()?;
        Ok(Self { entries: behaviors.into_iter().map(|b| b.key().to_string()).zip(states).collect() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, behavior: &AtomicBehavior) -> Result<&Tensor2, TableError> {
        self.entries.get(behavior.key()).ok_or_else(|| TableError::MissingBehavior(behavior.key().to_string()))
    }
}
