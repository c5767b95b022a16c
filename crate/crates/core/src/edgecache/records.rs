use super::NodeId;
use crate::ccbf::{Ccbf, CcbfParams, InsertOutcome, ParamsError, WireError};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    Wire(#[from] WireError),
    #[error("record parameter `{field}` differs from local parameters")]
    ParamMismatch { field: &'static str },
}

/// Result of recording one item in the local and global filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOutcome {
    pub local: InsertOutcome,
    pub global: InsertOutcome,
}

/// A node's own record (`CCBF` of its cached learning items), the latest
/// record received over each interface (`CCBF_l`), and their combination
/// (`CCBF_g`).
#[derive(Debug, Clone)]
pub struct NeighborRecords {
    params: CcbfParams,
    local: Ccbf,
    per_interface: BTreeMap<NodeId, Ccbf>,
    global: Ccbf,
    saturated: bool,
}

impl NeighborRecords {
    pub fn new(params: CcbfParams) -> Result<Self, ParamsError> {
        let local = Ccbf::new(params)?;
        Ok(Self {
            params,
            global: local.clone(),
            local,
            per_interface: BTreeMap::new(),
            saturated: false,
        })
    }

    pub fn params(&self) -> &CcbfParams {
        &self.params
    }

    pub fn local(&self) -> &Ccbf {
        &self.local
    }

    pub fn global(&self) -> &Ccbf {
        &self.global
    }

    pub fn interface(&self, id: NodeId) -> Option<&Ccbf> {
        self.per_interface.get(&id)
    }

    pub fn interfaces(&self) -> impl Iterator<Item = (NodeId, &Ccbf)> + '_ {
        self.per_interface.iter().map(|(&id, f)| (id, f))
    }

    /// The last fold had to leave out at least one interface because the
    /// combined count would exceed the filter capacity.
    pub fn saturated(&self) -> bool {
        self.saturated
    }

    /// Inserts `key` into the local record and, incrementally, into the
    /// global one.
    pub fn record(&mut self, key: &[u8]) -> RecordOutcome {
        let local = self.local.insert(key);
        let global = self.global.insert(key);
        for (which, outcome) in [("local", local), ("global", global)] {
            if matches!(
                outcome,
                InsertOutcome::CapacityExceeded | InsertOutcome::PositionOverflow
            ) {
                log::warn!("{which} record rejected an insert: {outcome:?}");
            }
        }
        RecordOutcome { local, global }
    }

    /// Removes `key` from the local record only. Neighbour records and the
    /// global fold are never deleted from, since their bits may be shared
    /// with other nodes' items.
    pub fn forget_local(&mut self, key: &[u8]) {
        self.local.delete(key);
    }

    /// Replaces the record stored for `interface` and refolds the global
    /// record. On error the state is unchanged.
    pub fn receive(&mut self, interface: NodeId, wire: &[u8]) -> Result<(), RecordError> {
        let filter = Ccbf::from_bytes(wire)?;
        self.receive_filter(interface, filter)
    }

    pub fn receive_filter(&mut self, interface: NodeId, filter: Ccbf) -> Result<(), RecordError> {
        if let Some(field) = self.params.first_mismatch(filter.params()) {
            return Err(RecordError::ParamMismatch { field });
        }
        self.per_interface.insert(interface, filter);
        self.refold();
        Ok(())
    }

    /// Drops the record stored for `interface`.
    pub fn remove_interface(&mut self, interface: NodeId) {
        if self.per_interface.remove(&interface).is_some() {
            self.refold();
        }
    }

    /// Rebuilds the global record from the local record and every stored
    /// neighbour record, in interface order. Records that would overflow the
    /// capacity are skipped and the fold is flagged saturated.
    pub fn refold(&mut self) {
        let mut global = self.local.clone();
        let mut saturated = false;
        for (id, f) in &self.per_interface {
            if let Err(e) = global.combine_from(f) {
                log::debug!("record from interface {id} left out of global fold: {e}");
                saturated = true;
            }
        }
        self.global = global;
        self.saturated = saturated;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u32) -> CcbfParams {
        CcbfParams {
            m: 16_384,
            g: 4,
            k: 7,
            n,
            hash_seed: 11,
            matrix_seed: 12,
        }
    }

    fn filter_with(p: CcbfParams, keys: impl IntoIterator<Item = u64>) -> Ccbf {
        let mut f = Ccbf::new(p).unwrap();
        for k in keys {
            f.insert(&k.to_le_bytes());
        }
        f
    }

    #[test]
    fn received_record_reaches_global() {
        let p = params(2000);
        let mut r = NeighborRecords::new(p).unwrap();
        r.receive(3, &filter_with(p, [42]).to_bytes()).unwrap();
        assert!(r.global().query(&42u64.to_le_bytes()));
        assert!(!r.local().query(&42u64.to_le_bytes()));
    }

    #[test]
    fn replacement_does_not_double_count() {
        let p = params(2000);
        let mut r = NeighborRecords::new(p).unwrap();
        let f = filter_with(p, 0..10);
        r.receive(1, &f.to_bytes()).unwrap();
        r.receive(1, &f.to_bytes()).unwrap();
        assert_eq!(r.global().item_count(), 10);
        let g = filter_with(p, 100..105);
        r.receive(1, &g.to_bytes()).unwrap();
        assert_eq!(r.global().item_count(), 5);
        assert!(!r.global().query(&0u64.to_le_bytes()));
    }

    #[test]
    fn two_interfaces_fold_within_capacity() {
        let p = params(2000);
        let mut r = NeighborRecords::new(p).unwrap();
        for k in 10_000..10_300u64 {
            r.record(&k.to_le_bytes());
        }
        let a = filter_with(p, 0..800);
        let b = filter_with(p, 1000..1800);
        // A false positive while building can turn an insert into a duplicate.
        assert!(a.item_count() >= 795 && b.item_count() >= 795);
        r.receive(1, &a.to_bytes()).unwrap();
        r.receive(2, &b.to_bytes()).unwrap();
        let local = r.local().item_count();
        assert_eq!(
            r.global().item_count(),
            a.item_count() + b.item_count() + local
        );
        assert!(!r.saturated());
        r.global().check_invariants().unwrap();
    }

    #[test]
    fn overflowing_fold_is_flagged() {
        let p = params(1000);
        let mut r = NeighborRecords::new(p).unwrap();
        r.receive(1, &filter_with(p, 0..600).to_bytes()).unwrap();
        r.receive(2, &filter_with(p, 1000..1600).to_bytes())
            .unwrap();
        assert!(r.saturated());
        assert_eq!(r.global().item_count(), 600);
        assert!(r.global().query(&5u64.to_le_bytes()));
    }

    #[test]
    fn mismatched_record_is_rejected() {
        let p = params(2000);
        let mut r = NeighborRecords::new(p).unwrap();
        let other = CcbfParams { hash_seed: 99, ..p };
        let err = r
            .receive(1, &filter_with(other, [1]).to_bytes())
            .unwrap_err();
        assert!(matches!(
            err,
            RecordError::ParamMismatch { field: "hash_seed" }
        ));
        assert!(r.interface(1).is_none());
        let err = r.receive(1, b"nonsense").unwrap_err();
        assert!(matches!(err, RecordError::Wire(_)));
    }
}
