use super::{DataItem, ItemKind};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone)]
struct Entry {
    item: DataItem,
    stamp: u64,
}

/// Bounded item cache with recency order.
///
/// Eviction removes the least recently used background item, or the least
/// recently used learning item when no background item is held.
#[derive(Debug, Clone)]
pub struct CacheStore {
    capacity: usize,
    entries: HashMap<u64, Entry>,
    // stamp -> key, oldest first
    learning: BTreeMap<u64, u64>,
    background: BTreeMap<u64, u64>,
    clock: u64,
}

impl CacheStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: HashMap::new(),
            learning: BTreeMap::new(),
            background: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `N_c`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// `N_l`.
    pub fn n_learning(&self) -> usize {
        self.learning.len()
    }

    /// `N_b`.
    pub fn n_background(&self) -> usize {
        self.background.len()
    }

    pub fn contains(&self, key: u64) -> bool {
        self.entries.contains_key(&key)
    }

    pub fn get(&self, key: u64) -> Option<&DataItem> {
        self.entries.get(&key).map(|e| &e.item)
    }

    fn order_mut(&mut self, kind: ItemKind) -> &mut BTreeMap<u64, u64> {
        match kind {
            ItemKind::Learning => &mut self.learning,
            ItemKind::Background => &mut self.background,
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Marks `key` most recently used. Returns false if it is not cached.
    pub fn touch(&mut self, key: u64) -> bool {
        let stamp = self.tick();
        let Some(e) = self.entries.get_mut(&key) else {
            return false;
        };
        let (old, kind) = (e.stamp, e.item.kind);
        e.stamp = stamp;
        let order = self.order_mut(kind);
        order.remove(&old);
        order.insert(stamp, key);
        true
    }

    /// The item that the next insertion into a full cache would displace.
    pub fn eviction_candidate(&self) -> Option<&DataItem> {
        self.background
            .values()
            .next()
            .or_else(|| self.learning.values().next())
            .map(|k| &self.entries[k].item)
    }

    /// Caches `item` as most recently used, evicting first if the cache is
    /// full. An already cached key is refreshed in place. Returns the evicted
    /// item, if any.
    pub fn insert(&mut self, item: DataItem) -> Option<DataItem> {
        if self.capacity == 0 {
            return Some(item);
        }
        if self.touch(item.key) {
            return None;
        }
        let evicted = if self.is_full() {
            self.evict_one()
        } else {
            None
        };
        let stamp = self.tick();
        let key = item.key;
        self.order_mut(item.kind).insert(stamp, key);
        self.entries.insert(key, Entry { item, stamp });
        evicted
    }

    fn evict_one(&mut self) -> Option<DataItem> {
        let (_, key) = self
            .background
            .pop_first()
            .or_else(|| self.learning.pop_first())?;
        self.entries.remove(&key).map(|e| e.item)
    }

    pub fn remove(&mut self, key: u64) -> Option<DataItem> {
        let e = self.entries.remove(&key)?;
        self.order_mut(e.item.kind).remove(&e.stamp);
        Some(e.item)
    }

    /// Learning items, most recently used first.
    pub fn learning_by_recency(&self) -> impl Iterator<Item = &DataItem> + '_ {
        self.learning.values().rev().map(|k| &self.entries[k].item)
    }

    /// Every cached item, most recently used first.
    pub fn iter_by_recency(&self) -> Vec<&DataItem> {
        let mut all: Vec<&Entry> = self.entries.values().collect();
        all.sort_unstable_by_key(|e| std::cmp::Reverse(e.stamp));
        all.into_iter().map(|e| &e.item).collect()
    }

    /// Keys of cached learning items in ascending key order.
    pub fn learning_keys(&self) -> Vec<u64> {
        let mut keys: Vec<u64> = self.learning.values().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.entries.len() > self.capacity {
            return Err(format!(
                "{} entries exceed capacity {}",
                self.entries.len(),
                self.capacity
            ));
        }
        if self.learning.len() + self.background.len() != self.entries.len() {
            return Err("recency lists disagree with entries".into());
        }
        for (stamp, key) in self.learning.iter().chain(&self.background) {
            match self.entries.get(key) {
                Some(e) if e.stamp == *stamp => {}
                _ => return Err(format!("stale recency entry for key {key}")),
            }
        }
        Ok(())
    }
}
