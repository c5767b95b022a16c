//! Per-node edge cache: admission with record-based deduplication, record
//! exchange bookkeeping, and differentiated-data requests.
//!
//! Learning items admitted to a node are recorded in its local filter. The
//! filters received from neighbours are folded with the local one into a
//! global record, and an arriving learning item that already queries true
//! there is not cached again. A node that wants more data sends a request
//! vector marking positions set in some neighbour's record but not in its
//! own; a responder returns the cached items whose positions are all marked.

mod records;
mod store;

pub use records::{NeighborRecords, RecordError, RecordOutcome};
pub use store::CacheStore;

use crate::ccbf::{query_bits, BitArray, CcbfParams, InsertOutcome};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Learning,
    Background,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataItem {
    /// Unique within a scenario. Filters see it as its 8 little-endian bytes.
    pub key: u64,
    pub kind: ItemKind,
    /// Class label; meaningful for learning items only.
    pub label: u8,
    pub payload_bytes: u32,
    pub origin: NodeId,
}

impl DataItem {
    pub fn key_bytes(&self) -> [u8; 8] {
        self.key.to_le_bytes()
    }

    pub fn is_learning(&self) -> bool {
        self.kind == ItemKind::Learning
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdmitDecision {
    CachedNew,
    /// The global record already holds the key; the cache is untouched.
    SkippedDuplicateElsewhere,
    CachedBackground,
    /// Cached after displacing another item.
    EvictedThenCached,
    /// The key is already in this cache; only its recency was refreshed.
    AlreadyCached,
}

impl AdmitDecision {
    /// A learning item that was not cached before is now cached.
    pub fn is_new_learning(self) -> bool {
        matches!(self, Self::CachedNew | Self::EvictedThenCached)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admission {
    pub decision: AdmitDecision,
    pub evicted: Option<DataItem>,
    /// Outcome of recording a newly cached learning item.
    pub record: Option<RecordOutcome>,
}

impl Admission {
    fn new(decision: AdmitDecision, evicted: Option<DataItem>) -> Self {
        Self {
            decision,
            evicted,
            record: None,
        }
    }

    /// A cached learning item could not be added to the local record.
    pub fn unrecorded(&self) -> bool {
        self.record
            .is_some_and(|r| r.local != InsertOutcome::Inserted)
    }
}

/// Which record a learning item is checked against before caching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// The global fold: skip items held by any known neighbour.
    Global,
    /// The local record only. Used for requested data, which is by
    /// construction present in some neighbour's record.
    Local,
}

/// Admits `item`, checking learning items against the global record.
pub fn admit(store: &mut CacheStore, records: &mut NeighborRecords, item: DataItem) -> Admission {
    admit_gated(store, records, item, Gate::Global)
}

pub fn admit_gated(
    store: &mut CacheStore,
    records: &mut NeighborRecords,
    item: DataItem,
    gate: Gate,
) -> Admission {
    if item.is_learning() {
        let key = item.key_bytes();
        if store.touch(item.key) {
            return Admission::new(AdmitDecision::AlreadyCached, None);
        }
        let known = match gate {
            Gate::Global => records.global().query(&key),
            Gate::Local => records.local().query(&key),
        };
        if known {
            return Admission::new(AdmitDecision::SkippedDuplicateElsewhere, None);
        }
        let evicted = store.insert(item);
        forget_evicted(records, evicted.as_ref());
        let decision = if evicted.is_some() {
            AdmitDecision::EvictedThenCached
        } else {
            AdmitDecision::CachedNew
        };
        Admission {
            record: Some(records.record(&key)),
            ..Admission::new(decision, evicted)
        }
    } else {
        let evicted = store.insert(item);
        forget_evicted(records, evicted.as_ref());
        Admission::new(AdmitDecision::CachedBackground, evicted)
    }
}

/// Records `item` after it has been admitted by other means. Background
/// items are never recorded.
pub fn record_local(records: &mut NeighborRecords, item: &DataItem) -> Option<RecordOutcome> {
    item.is_learning()
        .then(|| records.record(&item.key_bytes()))
}

fn forget_evicted(records: &mut NeighborRecords, evicted: Option<&DataItem>) {
    if let Some(e) = evicted.filter(|e| e.is_learning()) {
        records.forget_local(&e.key_bytes());
    }
}

/// Admission for nodes that keep no records: every new item is cached.
pub fn admit_plain(store: &mut CacheStore, item: DataItem) -> Admission {
    let learning = item.is_learning();
    if store.touch(item.key) {
        return Admission::new(AdmitDecision::AlreadyCached, None);
    }
    let evicted = store.insert(item);
    let decision = match (learning, evicted.is_some()) {
        (false, _) => AdmitDecision::CachedBackground,
        (true, true) => AdmitDecision::EvictedThenCached,
        (true, false) => AdmitDecision::CachedNew,
    };
    Admission::new(decision, evicted)
}

/// Positions wanted by a requester, with a cap on the number of items a
/// responder returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestVector {
    pub bits: BitArray,
    pub budget: u32,
}

impl RequestVector {
    /// Bytes on the wire: the packed vector plus a 4-byte budget.
    pub fn wire_len(&self) -> usize {
        self.bits.byte_len() + 4
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.any()
    }
}

/// OR of every stored neighbour record's aggregate array, minus the
/// positions set in the local record. Empty when no neighbour record is
/// stored.
pub fn build_request(records: &NeighborRecords, budget: u32) -> RequestVector {
    let mut bits = BitArray::zeros(records.params().m as usize);
    for (_, f) in records.interfaces() {
        bits.or_assign(f.or_bits());
    }
    bits.and_not_assign(records.local().or_bits());
    RequestVector { bits, budget }
}

/// Up to `req.budget` cached learning items whose positions are all set in
/// the request, most recently used first.
pub fn answer_request(
    store: &CacheStore,
    params: &CcbfParams,
    req: &RequestVector,
) -> Vec<DataItem> {
    if req.is_empty() {
        return Vec::new();
    }
    store
        .learning_by_recency()
        .filter(|item| query_bits(params, &req.bits, &item.key_bytes()))
        .take(req.budget as usize)
        .cloned()
        .collect()
}

/// Admits requested items, checking each against the local record. Returns
/// how many were newly cached.
pub fn integrate_response(
    store: &mut CacheStore,
    records: &mut NeighborRecords,
    items: Vec<DataItem>,
) -> usize {
    items
        .into_iter()
        .filter(|item| {
            admit_gated(store, records, item.clone(), Gate::Local)
                .decision
                .is_new_learning()
        })
        .count()
}
