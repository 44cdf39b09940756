use std::sync::Arc;

use indexmap::IndexMap;

use super::{AtomicBehavior, ItemProfile, UserProfile};

/// Distinct behaviors of a corpus in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AtomicSet {
    entries: IndexMap<String, Arc<AtomicBehavior>>,
}

impl AtomicSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `true` if the behavior was not present yet.
    pub fn insert(&mut self, b: &Arc<AtomicBehavior>) -> bool {
        if self.entries.contains_key(b.key()) {
            return false;
        }
        self.entries.insert(b.key().to_string(), Arc::clone(b));
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&Arc<AtomicBehavior>> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Arc<AtomicBehavior>> {
        self.entries.values()
    }
}

/// Every behavior of every user sequence, then every item title,
/// deduplicated by key.
pub fn extract_atomic_set(users: &[UserProfile], items: &[ItemProfile]) -> AtomicSet {
    let mut set = AtomicSet::new();
    for b in users.iter().flat_map(|u| u.sequences.iter().flatten()) {
        set.insert(b);
    }
    for it in items {
        set.insert(&it.title);
    }
    set
}
