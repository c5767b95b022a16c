use super::config::{derive_seed, ConfigError, LearnerKind, ScenarioConfig};
use super::learner::Learner;
use super::queue::EventQueue;
use super::topology::{NodeKind, Topology};
use super::Scheme;
use crate::ccbf::CcbfParams;
use crate::edgecache::{
    admit, admit_gated, admit_plain, answer_request, build_request, Admission, AdmitDecision,
    CacheStore, DataItem, Gate, ItemKind, NeighborRecords, NodeId, RequestVector,
};
use crate::learning::{
    argmax, estimate_c, optimal_weights, soft_vote_vectors, ClassTask, ConvergenceTracker,
    EnsembleWeights, Sample, SubModel, SyntheticLearner, SyntheticParams, TinyMlp,
};
use crate::metrics::{accuracy, Confusion, MetricsSeries, NodeSnapshot, Snapshot, Terminal};
use crate::rng::SplitMix64;
use std::collections::HashSet;

const VALIDATION_KEY_BASE: u64 = 1 << 61;
const TEST_KEY_BASE: u64 = 1 << 60;
const BACKGROUND_KEY_BASE: u64 = 1 << 62;
const DIGEST_KEY_BYTES: u64 = 8;

#[derive(Debug, Clone)]
pub enum Request {
    /// Positions wanted by the requester.
    Vector(RequestVector),
    /// Keys the requester already holds.
    Digest { keys: Vec<u64>, budget: u32 },
}

#[derive(Debug, Clone)]
pub enum Payload {
    DataPush(DataItem),
    RecordExchange(Vec<u8>),
    DiffRequest(Request),
    DiffResponse(Vec<DataItem>),
    ModelUpload { bytes: u64 },
}

impl Payload {
    pub fn bytes(&self) -> u64 {
        match self {
            Self::DataPush(item) => item.payload_bytes as u64,
            Self::RecordExchange(b) => b.len() as u64,
            Self::DiffRequest(Request::Vector(r)) => r.wire_len() as u64,
            Self::DiffRequest(Request::Digest { keys, .. }) => {
                DIGEST_KEY_BYTES * keys.len() as u64 + 4
            }
            Self::DiffResponse(items) => items.iter().map(|i| i.payload_bytes as u64).sum(),
            Self::ModelUpload { bytes } => *bytes,
        }
    }

    /// Background traffic is not learning overhead.
    pub fn counts_as_overhead(&self) -> bool {
        !matches!(self, Self::DataPush(item) if !item.is_learning())
    }
}

enum Event {
    Deliver {
        src: NodeId,
        dst: NodeId,
        sent_at: f64,
        payload: Payload,
    },
    DeviceEmit(usize),
    SharedEmit {
        device: usize,
        item: DataItem,
    },
    Background(usize),
    TrainTick,
    Gossip,
    PeriodicRequest,
    Snapshot,
}

/// Event counts used to reconcile where every learning item went.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    /// Distinct learning items generated by end devices.
    pub learning_generated: u64,
    /// Learning pushes from devices, including second observations.
    pub learning_pushes: u64,
    pub learning_pushes_delivered: u64,
    pub learning_pushes_in_flight: u64,
    pub admitted_new: u64,
    pub skipped_duplicate: u64,
    pub already_cached: u64,
    pub forwarded_to_dc: u64,
    pub fetched_items_received: u64,
    pub fetched_new: u64,
    pub fetched_skipped: u64,
    pub evicted_learning: u64,
    pub evicted_background: u64,
    pub background_delivered: u64,
    /// Cached learning items the local record could not hold.
    pub unrecorded: u64,
    pub records_sent: u64,
    pub records_rejected: u64,
    pub requests_sent: u64,
    pub responses_sent: u64,
    pub range_widenings: u64,
    pub model_uploads: u64,
    pub messages_delivered: u64,
    /// Deliveries earlier than send time plus path delay. Always zero.
    pub causality_violations: u64,
    /// Delivered bytes times hops, split by message type.
    pub overhead: OverheadBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverheadBreakdown {
    pub data_push: u64,
    pub records: u64,
    pub requests: u64,
    pub responses: u64,
    pub model_uploads: u64,
}

impl OverheadBreakdown {
    pub fn total(&self) -> u64 {
        self.data_push + self.records + self.requests + self.responses + self.model_uploads
    }

    fn add(&mut self, payload: &Payload, cost: u64) {
        let slot = match payload {
            Payload::DataPush(_) => &mut self.data_push,
            Payload::RecordExchange(_) => &mut self.records,
            Payload::DiffRequest(_) => &mut self.requests,
            Payload::DiffResponse(_) => &mut self.responses,
            Payload::ModelUpload { .. } => &mut self.model_uploads,
        };
        *slot += cost;
    }
}

/// Raw cache contents of every edge node at one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheDump {
    pub t: f64,
    pub nodes: Vec<(String, Vec<(u64, ItemKind)>)>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scheme: Scheme,
    pub series: MetricsSeries,
    /// Every sub-model latched convergence before the horizon.
    pub converged: bool,
    pub end_time: f64,
    /// Convergence time of each sub-model, in edge (or partition) order.
    pub convergence_times: Vec<Option<f64>>,
    /// Final collaboration range of each edge node.
    pub ranges: Vec<u32>,
    /// Distinct items each sub-model trained on.
    pub items_trained: Vec<usize>,
    pub weights: EnsembleWeights,
    pub weights_fallback: bool,
    pub counters: Counters,
    pub dumps: Vec<CacheDump>,
    /// Learning items cached at each edge when the run ended.
    pub final_learning: Vec<u64>,
}

impl RunResult {
    pub fn terminal(&self) -> &Terminal {
        self.series
            .terminal
            .as_ref()
            .expect("run results carry a terminal record")
    }

    /// Checks that every learning push and every cached learning item is
    /// accounted for.
    pub fn check_conservation(&self) -> Result<(), String> {
        let c = &self.counters;
        if c.learning_pushes != c.learning_pushes_delivered + c.learning_pushes_in_flight {
            return Err(format!(
                "pushes {} != delivered {} + in flight {}",
                c.learning_pushes, c.learning_pushes_delivered, c.learning_pushes_in_flight
            ));
        }
        let outcomes = c.admitted_new + c.skipped_duplicate + c.already_cached + c.forwarded_to_dc;
        if c.learning_pushes_delivered != outcomes {
            return Err(format!(
                "delivered {} != admitted {} + skipped {} + already cached {} + forwarded {}",
                c.learning_pushes_delivered,
                c.admitted_new,
                c.skipped_duplicate,
                c.already_cached,
                c.forwarded_to_dc
            ));
        }
        let cached: u64 = self.final_learning.iter().sum();
        if cached + c.evicted_learning != c.admitted_new + c.fetched_new {
            return Err(format!(
                "cached {cached} + evicted {} != admitted {} + fetched {}",
                c.evicted_learning, c.admitted_new, c.fetched_new
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep the raw cache contents at every snapshot.
    pub record_cache_dumps: bool,
}

struct Unit {
    learner: Learner,
    tracker: ConvergenceTracker,
    pending: Vec<Sample>,
    new_last_round: usize,
    converged_at: Option<f64>,
    frozen: Option<Learner>,
}

impl Unit {
    fn model(&self) -> &Learner {
        self.frozen.as_ref().unwrap_or(&self.learner)
    }
}

struct EdgeNode {
    id: NodeId,
    store: CacheStore,
    records: Option<NeighborRecords>,
    unit: Option<Unit>,
    range: u32,
    next_peer: usize,
    /// A neighbour record arrived since the last request, so the request
    /// vector may name items not asked for yet.
    records_fresh: bool,
}

struct Device {
    node: NodeId,
    edge: usize,
    rng: SplitMix64,
    emitted: u64,
    quota: u64,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    scheme: Scheme,
    topo: Topology,
    task: ClassTask,
    params: CcbfParams,
    queue: EventQueue<Event>,
    now: f64,
    edges: Vec<EdgeNode>,
    edge_index: Vec<Option<usize>>,
    central: Vec<Unit>,
    devices: Vec<Device>,
    background_rng: Vec<SplitMix64>,
    background_seq: Vec<u64>,
    validation: Vec<Sample>,
    overhead: u64,
    counters: Counters,
    series: MetricsSeries,
    dumps: Option<Vec<CacheDump>>,
    max_range: u32,
    finished: bool,
}

/// Runs one scheme on a scenario.
pub fn run(cfg: &ScenarioConfig, scheme: Scheme, seed: u64) -> Result<RunResult, ConfigError> {
    run_with(cfg, scheme, seed, &RunOptions::default())
}

pub fn run_with(
    cfg: &ScenarioConfig,
    scheme: Scheme,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunResult, ConfigError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg, scheme, seed, opts);
    sim.execute();
    Ok(sim.finish())
}

fn new_unit(cfg: &ScenarioConfig, task: &ClassTask, model_seed: u64, index: u64) -> Unit {
    let l = &cfg.learner;
    let learner = match l.kind {
        LearnerKind::Synthetic => Learner::Synthetic(SyntheticLearner::new(
            SyntheticParams {
                dims: task.classes(),
                ..l.synthetic.clone()
            },
            model_seed,
            derive_seed(model_seed, 100 + index),
        )),
        LearnerKind::Mlp => Learner::Mlp(TinyMlp::new(
            l.mlp.clone(),
            task.feature_dims(),
            task.classes(),
            derive_seed(model_seed, 100 + index),
        )),
    };
    Unit {
        learner,
        tracker: ConvergenceTracker::new(l.window, l.epsilon),
        pending: Vec::new(),
        new_last_round: 0,
        converged_at: None,
        frozen: None,
    }
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, scheme: Scheme, seed: u64, opts: &RunOptions) -> Self {
        let topo = Topology::build(&cfg.topology);
        let wseed = cfg.workload_seed(seed);
        let mseed = cfg.model_seed(seed);
        let task = ClassTask::new(cfg.workload.task(), wseed);
        let params = cfg.ccbf.params(seed);
        let max_range = cfg.max_range(topo.edge_diameter());

        let mut edge_index = vec![None; topo.len()];
        let edges: Vec<EdgeNode> = topo
            .edges()
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                edge_index[id as usize] = Some(i);
                EdgeNode {
                    id,
                    store: CacheStore::new(cfg.topology.cache_capacity),
                    records: (scheme == Scheme::CCache)
                        .then(|| NeighborRecords::new(params).expect("validated parameters")),
                    unit: (scheme != Scheme::Centralized)
                        .then(|| new_unit(cfg, &task, mseed, i as u64)),
                    range: cfg.scheme.initial_range_hops.min(max_range),
                    next_peer: 0,
                    records_fresh: false,
                }
            })
            .collect();
        let central = if scheme == Scheme::Centralized {
            (0..cfg.learner.central_models)
                .map(|i| new_unit(cfg, &task, mseed, i as u64))
                .collect()
        } else {
            Vec::new()
        };

        let n_dev = topo.devices().len() as u64;
        let total = cfg.workload.learning_items;
        let devices = topo
            .devices()
            .iter()
            .enumerate()
            .map(|(i, &node)| {
                let edge_node = topo.attachment(node).expect("devices attach to an edge");
                Device {
                    node,
                    edge: edge_index[edge_node as usize].expect("attachment is an edge"),
                    rng: SplitMix64::derive(wseed, 1000 + i as u64),
                    emitted: 0,
                    quota: total / n_dev + u64::from((i as u64) < total % n_dev),
                }
            })
            .collect();
        let background_rng = (0..edges.len())
            .map(|i| SplitMix64::derive(wseed, 2000 + i as u64))
            .collect();
        let validation =
            task.samples((0..cfg.learner.validation_size as u64).map(|i| VALIDATION_KEY_BASE + i));

        Self {
            cfg,
            scheme,
            topo,
            task,
            params,
            queue: EventQueue::default(),
            now: 0.0,
            background_seq: vec![0; edges.len()],
            edges,
            edge_index,
            central,
            devices,
            background_rng,
            validation,
            overhead: 0,
            counters: Counters::default(),
            series: MetricsSeries::default(),
            dumps: opts.record_cache_dumps.then(Vec::new),
            max_range,
            finished: false,
        }
    }

    fn has_workload(&self) -> bool {
        let w = &self.cfg.workload;
        (w.learning_items > 0 && w.device_rate_hz > 0.0) || w.background_rate_hz > 0.0
    }

    fn execute(&mut self) {
        if !self.has_workload() {
            return;
        }
        let w = &self.cfg.workload;
        let s = &self.cfg.scheme;
        if w.device_rate_hz > 0.0 {
            for i in 0..self.devices.len() {
                if self.devices[i].quota > 0 {
                    let dt = self.devices[i].rng.exponential(w.device_rate_hz);
                    self.queue.push(dt, Event::DeviceEmit(i));
                }
            }
        }
        if w.background_rate_hz > 0.0 {
            for i in 0..self.edges.len() {
                let dt = self.background_rng[i].exponential(w.background_rate_hz);
                self.queue.push(dt, Event::Background(i));
            }
        }
        self.queue.push(s.train_round_s, Event::TrainTick);
        match self.scheme {
            Scheme::CCache => self.queue.push(s.record_exchange_period_s, Event::Gossip),
            Scheme::PCache => self.queue.push(s.p_cache_period_s, Event::PeriodicRequest),
            Scheme::Centralized => {}
        }
        self.queue.push(s.snapshot_period_s, Event::Snapshot);

        let horizon = s.horizon_s;
        while let Some(at) = self.queue.peek_time() {
            if at > horizon {
                self.now = horizon;
                break;
            }
            let (at, event) = self.queue.pop().expect("peeked");
            self.now = at;
            self.handle(event);
            if self.finished {
                break;
            }
        }
        if self.series.snapshots.last().is_none_or(|s| s.t < self.now) {
            self.snapshot();
        }
    }

    fn send(&mut self, src: NodeId, dst: NodeId, payload: Payload) {
        let delay = self.topo.path_delay(src, dst, payload.bytes());
        self.queue.push(
            self.now + delay,
            Event::Deliver {
                src,
                dst,
                sent_at: self.now,
                payload,
            },
        );
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Deliver {
                src,
                dst,
                sent_at,
                payload,
            } => {
                self.counters.messages_delivered += 1;
                if self.now < sent_at + self.topo.path_delay(src, dst, payload.bytes()) {
                    self.counters.causality_violations += 1;
                }
                if payload.counts_as_overhead() {
                    let cost = payload.bytes() * self.topo.hops(src, dst) as u64;
                    self.overhead += cost;
                    self.counters.overhead.add(&payload, cost);
                }
                self.deliver(src, dst, payload);
            }
            Event::DeviceEmit(i) => self.device_emit(i),
            Event::SharedEmit { device, item } => {
                let d = &self.devices[device];
                let (node, edge) = (d.node, self.edges[d.edge].id);
                self.counters.learning_pushes += 1;
                self.send(node, edge, Payload::DataPush(item));
            }
            Event::Background(i) => self.background(i),
            Event::TrainTick => self.train_tick(),
            Event::Gossip => self.gossip(),
            Event::PeriodicRequest => self.periodic_request(),
            Event::Snapshot => {
                self.snapshot();
                self.queue.push(
                    self.now + self.cfg.scheme.snapshot_period_s,
                    Event::Snapshot,
                );
            }
        }
    }

    fn device_emit(&mut self, i: usize) {
        let w = &self.cfg.workload;
        let n_dev = self.devices.len();
        let per_edge = self.cfg.topology.devices_per_edge;
        let d = &mut self.devices[i];
        let key = ((i as u64) << 40) | d.emitted;
        d.emitted += 1;
        let item = DataItem {
            key,
            kind: ItemKind::Learning,
            label: self.task.label(key) as u8,
            payload_bytes: w.learning_bytes,
            origin: d.node,
        };
        // A share of items is observed again later by a device attached to a
        // different edge node.
        if w.shared_fraction > 0.0 && d.rng.next_f64() < w.shared_fraction {
            let others = n_dev - per_edge;
            let mut j = d.rng.below(others as u64) as usize;
            if j >= d.edge * per_edge {
                j += per_edge;
            }
            let [lo, hi] = w.shared_delay_s;
            let delay = lo + (hi - lo) * d.rng.next_f64();
            let shared = DataItem {
                origin: self.devices[j].node,
                ..item.clone()
            };
            self.queue.push(
                self.now + delay,
                Event::SharedEmit {
                    device: j,
                    item: shared,
                },
            );
        }
        let d = &mut self.devices[i];
        let (node, edge, more) = (d.node, d.edge, d.emitted < d.quota);
        if more {
            let dt = d.rng.exponential(w.device_rate_hz);
            self.queue.push(self.now + dt, Event::DeviceEmit(i));
        }
        self.counters.learning_generated += 1;
        self.counters.learning_pushes += 1;
        let edge_id = self.edges[edge].id;
        self.send(node, edge_id, Payload::DataPush(item));
    }

    fn background(&mut self, i: usize) {
        let w = &self.cfg.workload;
        let seq = self.background_seq[i];
        self.background_seq[i] += 1;
        let item = DataItem {
            key: BACKGROUND_KEY_BASE | ((i as u64) << 40) | seq,
            kind: ItemKind::Background,
            label: 0,
            payload_bytes: w.background_bytes,
            origin: Topology::DATA_CENTER,
        };
        let dt = self.background_rng[i].exponential(w.background_rate_hz);
        self.queue.push(self.now + dt, Event::Background(i));
        let edge = self.edges[i].id;
        self.send(Topology::DATA_CENTER, edge, Payload::DataPush(item));
    }

    fn deliver(&mut self, src: NodeId, dst: NodeId, payload: Payload) {
        match self.topo.kind(dst) {
            NodeKind::Edge => {
                let e = self.edge_index[dst as usize].expect("edge index");
                self.deliver_to_edge(e, src, payload);
            }
            NodeKind::DataCenter => match payload {
                Payload::DataPush(item) => {
                    let from = self.edge_index[src as usize].unwrap_or(0);
                    let part = from % self.central.len().max(1);
                    let sample = self.task.sample(item.key);
                    if let Some(u) = self.central.get_mut(part) {
                        u.pending.push(sample);
                    }
                }
                Payload::ModelUpload { .. } => self.counters.model_uploads += 1,
                _ => {}
            },
            _ => {}
        }
    }

    fn note_admission(&mut self, e: usize, item_key: u64, a: &Admission) {
        if let Some(ev) = &a.evicted {
            match ev.kind {
                ItemKind::Learning => self.counters.evicted_learning += 1,
                ItemKind::Background => self.counters.evicted_background += 1,
            }
        }
        if a.unrecorded() {
            self.counters.unrecorded += 1;
        }
        if a.decision.is_new_learning() {
            let sample = self.task.sample(item_key);
            if let Some(u) = self.edges[e].unit.as_mut() {
                u.pending.push(sample);
            }
        }
    }

    fn deliver_to_edge(&mut self, e: usize, src: NodeId, payload: Payload) {
        match payload {
            Payload::DataPush(item) if item.is_learning() => {
                self.counters.learning_pushes_delivered += 1;
                if self.scheme == Scheme::Centralized {
                    self.counters.forwarded_to_dc += 1;
                    let id = self.edges[e].id;
                    self.send(id, Topology::DATA_CENTER, Payload::DataPush(item));
                    return;
                }
                let key = item.key;
                let node = &mut self.edges[e];
                let a = match node.records.as_mut() {
                    Some(r) => admit(&mut node.store, r, item),
                    None => admit_plain(&mut node.store, item),
                };
                match a.decision {
                    AdmitDecision::SkippedDuplicateElsewhere => {
                        self.counters.skipped_duplicate += 1
                    }
                    AdmitDecision::AlreadyCached => self.counters.already_cached += 1,
                    _ => self.counters.admitted_new += 1,
                }
                self.note_admission(e, key, &a);
            }
            Payload::DataPush(item) => {
                self.counters.background_delivered += 1;
                let key = item.key;
                let node = &mut self.edges[e];
                let a = match node.records.as_mut() {
                    Some(r) => admit(&mut node.store, r, item),
                    None => admit_plain(&mut node.store, item),
                };
                self.note_admission(e, key, &a);
            }
            Payload::RecordExchange(bytes) => {
                let node = &mut self.edges[e];
                if let Some(r) = node.records.as_mut() {
                    match r.receive(src, &bytes) {
                        Ok(()) => node.records_fresh = true,
                        Err(err) => {
                            log::warn!("edge {e}: rejected record from node {src}: {err}");
                            self.counters.records_rejected += 1;
                        }
                    }
                }
            }
            Payload::DiffRequest(req) => {
                let node = &self.edges[e];
                let items: Vec<DataItem> = match &req {
                    Request::Vector(v) => answer_request(&node.store, &self.params, v),
                    Request::Digest { keys, budget } => {
                        let held: HashSet<u64> = keys.iter().copied().collect();
                        node.store
                            .learning_by_recency()
                            .filter(|i| !held.contains(&i.key))
                            .take(*budget as usize)
                            .cloned()
                            .collect()
                    }
                };
                if !items.is_empty() {
                    self.counters.responses_sent += 1;
                    let id = node.id;
                    self.send(id, src, Payload::DiffResponse(items));
                }
            }
            Payload::DiffResponse(items) => {
                for item in items {
                    self.counters.fetched_items_received += 1;
                    let key = item.key;
                    let node = &mut self.edges[e];
                    let a = match node.records.as_mut() {
                        Some(r) => admit_gated(&mut node.store, r, item, Gate::Local),
                        None => admit_plain(&mut node.store, item),
                    };
                    if a.decision.is_new_learning() {
                        self.counters.fetched_new += 1;
                    } else {
                        self.counters.fetched_skipped += 1;
                    }
                    self.note_admission(e, key, &a);
                }
            }
            Payload::ModelUpload { .. } => {}
        }
    }

    fn train_unit(u: &mut Unit, validation: &[Sample], now: f64) -> bool {
        if u.converged_at.is_some() {
            return false;
        }
        let batch = std::mem::take(&mut u.pending);
        u.new_last_round = batch.len();
        if !batch.is_empty() {
            u.learner.train(&batch);
        }
        // Rounds before the first data are not evidence of a plateau.
        if u.learner.distinct_items_seen() == 0 {
            return false;
        }
        u.tracker.observe(u.learner.validation_accuracy(validation));
        if u.tracker.converged() {
            u.converged_at = Some(now);
            u.frozen = Some(u.learner.clone());
            return true;
        }
        false
    }

    fn train_tick(&mut self) {
        let now = self.now;
        let validation = std::mem::take(&mut self.validation);
        if self.scheme == Scheme::Centralized {
            for u in &mut self.central {
                Self::train_unit(u, &validation, now);
            }
            self.finished = self.central.iter().all(|u| u.converged_at.is_some());
        } else {
            for e in 0..self.edges.len() {
                let unit = self.edges[e].unit.as_mut().expect("edge learner");
                let latched = Self::train_unit(unit, &validation, now);
                if latched {
                    let id = self.edges[e].id;
                    let bytes = self.cfg.scheme.model_upload_bytes;
                    self.send(id, Topology::DATA_CENTER, Payload::ModelUpload { bytes });
                }
                if self.scheme == Scheme::CCache {
                    self.collaborate(e);
                }
            }
            self.finished = self
                .edges
                .iter()
                .all(|n| n.unit.as_ref().is_some_and(|u| u.converged_at.is_some()));
        }
        self.validation = validation;
        self.queue
            .push(self.now + self.cfg.scheme.train_round_s, Event::TrainTick);
    }

    /// Widens the range of a learner that gained no data in its last round,
    /// then asks in-range edges for differentiated data if it has stalled.
    fn collaborate(&mut self, e: usize) {
        let max = self.max_range;
        let stall = self.cfg.scheme.stall_gain;
        let budget = self.cfg.scheme.request_budget;
        let node = &mut self.edges[e];
        let unit = node.unit.as_ref().expect("edge learner");
        if unit.converged_at.is_some() || unit.learner.distinct_items_seen() == 0 {
            return;
        }
        let new_range = widen_range(
            node.range,
            max,
            unit.new_last_round,
            unit.tracker.converged(),
        );
        if new_range != node.range {
            node.range = new_range;
            self.counters.range_widenings += 1;
        }
        if !node.records_fresh || !unit.tracker.last_gain().is_some_and(|g| g < stall) {
            return;
        }
        node.records_fresh = false;
        let records = node.records.as_ref().expect("records");
        let req = build_request(records, budget);
        if req.is_empty() {
            return;
        }
        let (id, range) = (node.id, node.range);
        for dst in self.topo.edges_within(id, range) {
            self.counters.requests_sent += 1;
            self.send(id, dst, Payload::DiffRequest(Request::Vector(req.clone())));
        }
    }

    fn gossip(&mut self) {
        for e in 0..self.edges.len() {
            let node = &self.edges[e];
            let bytes = node.records.as_ref().expect("records").local().to_bytes();
            let (id, range) = (node.id, node.range);
            for dst in self.topo.edges_within(id, range) {
                self.counters.records_sent += 1;
                self.send(id, dst, Payload::RecordExchange(bytes.clone()));
            }
        }
        self.queue.push(
            self.now + self.cfg.scheme.record_exchange_period_s,
            Event::Gossip,
        );
    }

    fn periodic_request(&mut self) {
        let budget = self.cfg.scheme.request_budget;
        let n = self.edges.len();
        for e in 0..n {
            let node = &mut self.edges[e];
            if n < 2 || node.unit.as_ref().is_some_and(|u| u.converged_at.is_some()) {
                continue;
            }
            let k = node.next_peer % (n - 1);
            node.next_peer += 1;
            let peer = if k >= e { k + 1 } else { k };
            let keys = node.store.learning_keys();
            let (id, dst) = (node.id, self.edges[peer].id);
            self.counters.requests_sent += 1;
            self.send(
                id,
                dst,
                Payload::DiffRequest(Request::Digest { keys, budget }),
            );
        }
        self.queue.push(
            self.now + self.cfg.scheme.p_cache_period_s,
            Event::PeriodicRequest,
        );
    }

    fn snapshot(&mut self) {
        let nodes = self
            .edges
            .iter()
            .map(|n| NodeSnapshot {
                node: self.topo.name(n.id).to_string(),
                n_l: n.store.n_learning() as u64,
                n_c: n.store.len() as u64,
                n_b: n.store.n_background() as u64,
            })
            .collect();
        self.series.snapshots.push(Snapshot {
            t: self.now,
            nodes,
            overhead_bytes: self.overhead,
        });
        if let Some(d) = self.dumps.as_mut() {
            d.push(CacheDump {
                t: self.now,
                nodes: self
                    .edges
                    .iter()
                    .map(|n| {
                        let mut items: Vec<(u64, ItemKind)> = n
                            .store
                            .iter_by_recency()
                            .iter()
                            .map(|i| (i.key, i.kind))
                            .collect();
                        items.sort_unstable_by_key(|&(k, _)| k);
                        (self.topo.name(n.id).to_string(), items)
                    })
                    .collect(),
            });
        }
    }

    fn finish(mut self) -> RunResult {
        let units: Vec<&Unit> = if self.scheme == Scheme::Centralized {
            self.central.iter().collect()
        } else {
            self.edges.iter().filter_map(|n| n.unit.as_ref()).collect()
        };
        let convergence_times: Vec<Option<f64>> = units.iter().map(|u| u.converged_at).collect();
        let converged = !units.is_empty() && convergence_times.iter().all(Option::is_some);
        let latency = if converged {
            convergence_times
                .iter()
                .flatten()
                .fold(0.0, |a: f64, &b| a.max(b))
        } else {
            self.now
        };
        let items_trained = units
            .iter()
            .map(|u| u.model().distinct_items_seen())
            .collect();
        let models: Vec<&dyn SubModel> = units.iter().map(|u| u.model() as &dyn SubModel).collect();
        let (weights, fallback, confusion) =
            evaluate(&models, &self.validation, &self.task, self.cfg);
        let acc = accuracy(&confusion).unwrap_or(0.0);

        for (_, ev) in self.queue.iter() {
            if let Event::Deliver {
                dst,
                payload: Payload::DataPush(item),
                ..
            } = ev
            {
                if item.is_learning() && self.topo.kind(*dst) == NodeKind::Edge {
                    self.counters.learning_pushes_in_flight += 1;
                }
            }
        }
        self.series.terminal = Some(Terminal {
            scheme: self.scheme.name().to_string(),
            latency_s: latency,
            accuracy: acc,
            confusion,
        });
        RunResult {
            scheme: self.scheme,
            converged,
            end_time: self.now,
            convergence_times,
            ranges: self.edges.iter().map(|n| n.range).collect(),
            items_trained,
            weights,
            weights_fallback: fallback,
            counters: self.counters,
            dumps: self.dumps.unwrap_or_default(),
            final_learning: self
                .edges
                .iter()
                .map(|n| n.store.n_learning() as u64)
                .collect(),
            series: self.series,
        }
    }
}

/// Collaboration range after a training round: one hop wider, up to `max`,
/// when the round brought no new items and the learner has not converged.
pub fn widen_range(range: u32, max: u32, new_items: usize, converged: bool) -> u32 {
    if new_items == 0 && !converged {
        (range + 1).min(max.max(range))
    } else {
        range
    }
}

/// Fits ensemble weights on the validation set and classifies a held-out
/// test set, with class 0 as the positive class.
fn evaluate(
    models: &[&dyn SubModel],
    validation: &[Sample],
    task: &ClassTask,
    cfg: &ScenarioConfig,
) -> (EnsembleWeights, bool, Confusion) {
    let (weights, fallback) =
        match estimate_c(models, validation).and_then(|c| optimal_weights(&c, None)) {
            Ok(s) => (s.weights, s.fallback),
            Err(_) => (EnsembleWeights::uniform(models.len().max(1)), true),
        };
    let mut confusion = Confusion::default();
    for i in 0..cfg.learner.test_size as u64 {
        let x = task.sample(TEST_KEY_BASE + i);
        let outputs: Vec<Vec<f64>> = models.iter().map(|m| m.output(&x)).collect();
        let predicted = soft_vote_vectors(&outputs, &weights)
            .map(|v| argmax(&v))
            .unwrap_or(0);
        confusion.observe(predicted, x.label, 0);
    }
    (weights, fallback, confusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::render_csv;
    use crate::simnet::TopologyConfig;

    fn small() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.learner.validation_size = 500;
        cfg.learner.test_size = 1000;
        cfg
    }

    #[test]
    fn same_seed_same_csv() {
        let cfg = small();
        for scheme in Scheme::ALL {
            let a = run(&cfg, scheme, 9).unwrap();
            let b = run(&cfg, scheme, 9).unwrap();
            assert_eq!(render_csv(&a.series), render_csv(&b.series), "{scheme}");
            assert_eq!(a.counters, b.counters);
        }
    }

    #[test]
    fn zero_rate_workload_ends_immediately() {
        let mut cfg = small();
        cfg.workload.device_rate_hz = 0.0;
        cfg.workload.background_rate_hz = 0.0;
        let r = run(&cfg, Scheme::CCache, 1).unwrap();
        assert!(r.series.snapshots.is_empty());
        assert!(!r.converged);
        assert_eq!(r.end_time, 0.0);
        assert_eq!(r.counters.messages_delivered, 0);
    }

    #[test]
    fn widen_range_rules() {
        // Converged: unchanged even with no new items.
        assert_eq!(widen_range(1, 2, 0, true), 1);
        // New data arrived: unchanged.
        assert_eq!(widen_range(1, 2, 5, false), 1);
        // Stalled: one hop wider.
        assert_eq!(widen_range(1, 2, 0, false), 2);
        // Clamped at the maximum.
        assert_eq!(widen_range(2, 2, 0, false), 2);
    }

    #[test]
    fn widened_range_reaches_every_edge_on_the_default_ring() {
        let topo = Topology::build(&TopologyConfig::default());
        let max = topo.edge_diameter();
        let first = topo.edges()[0];
        let before = topo.edges_within(first, 1);
        let after = topo.edges_within(first, widen_range(1, max, 0, false));
        // Independent oracle: ring neighbours of edge 0 are edges 1 and 3.
        let e = topo.edges();
        assert_eq!(before, vec![e[1], e[3]]);
        assert_eq!(after, vec![e[1], e[2], e[3]]);
    }

    #[test]
    fn items_are_conserved_in_every_scheme() {
        let cfg = small();
        for scheme in Scheme::ALL {
            let r = run(&cfg, scheme, 4).unwrap();
            r.check_conservation()
                .unwrap_or_else(|e| panic!("{scheme}: {e}"));
            assert!(r.counters.learning_pushes > 0);
        }
    }

    #[test]
    fn items_in_flight_at_the_horizon_are_counted() {
        let mut cfg = small();
        cfg.scheme.horizon_s = 50.0;
        // Slow links keep pushes in flight past the cut-off.
        cfg.topology.bandwidth_bps = 2e4;
        let r = run(&cfg, Scheme::PCache, 2).unwrap();
        assert!(!r.converged);
        assert!(r.counters.learning_pushes_in_flight > 0);
        r.check_conservation().unwrap();
    }

    #[test]
    fn overhead_never_decreases_and_matches_breakdown() {
        let cfg = small();
        for scheme in Scheme::ALL {
            let r = run(&cfg, scheme, 3).unwrap();
            r.series.check_invariants().unwrap();
            for w in r.series.snapshots.windows(2) {
                assert!(w[1].overhead_bytes >= w[0].overhead_bytes);
            }
            assert_eq!(r.series.final_overhead(), r.counters.overhead.total());
        }
    }

    #[test]
    fn no_message_arrives_before_its_path_delay() {
        let cfg = small();
        for scheme in Scheme::ALL {
            let r = run(&cfg, scheme, 5).unwrap();
            assert!(r.counters.messages_delivered > 0);
            assert_eq!(r.counters.causality_violations, 0, "{scheme}");
        }
    }

    #[test]
    fn centralized_keeps_learning_items_off_the_edges() {
        let r = run(&small(), Scheme::Centralized, 1).unwrap();
        assert!(r.final_learning.iter().all(|&n| n == 0));
        assert_eq!(
            r.counters.forwarded_to_dc,
            r.counters.learning_pushes_delivered
        );
        assert_eq!(r.counters.overhead.records, 0);
    }

    #[test]
    fn ccache_skips_items_already_held_elsewhere() {
        let r = run(&small(), Scheme::CCache, 1).unwrap();
        assert!(r.counters.skipped_duplicate > 0);
        assert!(r.counters.records_sent > 0);
        let p = run(&small(), Scheme::PCache, 1).unwrap();
        assert_eq!(p.counters.skipped_duplicate, 0);
    }

    #[test]
    fn stalled_isolated_node_widens_to_the_maximum() {
        // A tiny workload dries up long before any learner converges, so
        // rounds bring nothing new and ranges grow until clamped.
        let mut cfg = small();
        cfg.workload.learning_items = 40;
        cfg.workload.shared_fraction = 0.0;
        cfg.workload.device_rate_hz = 5.0;
        cfg.scheme.horizon_s = 400.0;
        let r = run(&cfg, Scheme::CCache, 1).unwrap();
        let max = Topology::build(&cfg.topology).edge_diameter();
        assert!(r.ranges.iter().all(|&x| x <= max));
        assert!(r.ranges.contains(&max));
        assert!(r.counters.range_widenings > 0);
    }

    #[test]
    fn dumps_match_snapshot_counts() {
        let opts = RunOptions {
            record_cache_dumps: true,
        };
        let r = run_with(&small(), Scheme::CCache, 1, &opts).unwrap();
        assert_eq!(r.dumps.len(), r.series.snapshots.len());
        for (d, s) in r.dumps.iter().zip(&r.series.snapshots) {
            assert_eq!(d.t, s.t);
            for ((name, items), n) in d.nodes.iter().zip(&s.nodes) {
                assert_eq!(name, &n.node);
                assert_eq!(items.len() as u64, n.n_c);
            }
        }
    }
}
