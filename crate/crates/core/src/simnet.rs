//! Deterministic lockstep network simulation.
//!
//! Every node's round-`r` outbox is collected before any delivery, and all
//! deliveries of round `r` complete before any node starts round `r + 1`.
//! The engine records what the corrupted nodes see (their inbound and
//! outbound messages plus a state snapshot per round) and a per-message
//! trace for cost accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, NodeId};
use crate::modreal::{ModScalar, ModulusContext};

/// Per-node random stream.
pub type NodeRng = ChaCha12Rng;

/// Independent, reproducible stream for `node`: the master seed keys the
/// generator and the node id selects the stream.
pub fn seed_node_rng(master_seed: u64, node: NodeId) -> NodeRng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(node.get() as u64);
    rng
}

/// Message contents as seen by the engine.
pub trait Payload: Clone + Serialize {
    fn kind(&self) -> &'static str;
    /// Size in scalar units for communication accounting.
    fn size_units(&self) -> usize;
}

#[derive(Debug, Clone, Serialize)]
pub struct Message<P> {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub round: usize,
    pub payload: P,
}

/// A node's behavior under the lockstep engine.
pub trait NodeProgram {
    type Payload: Payload;
    type Snapshot: Clone + Serialize;
    type Output;

    fn id(&self) -> NodeId;

    /// Rounds the node needs before halting.
    fn round_budget(&self) -> usize;

    fn is_halted(&self) -> bool;

    fn on_round_start(&mut self, round: usize) -> Result<()>;

    fn outbox(&mut self, round: usize) -> Result<Vec<(NodeId, Self::Payload)>>;

    fn on_deliver(&mut self, round: usize, from: NodeId, payload: &Self::Payload) -> Result<()>;

    fn on_round_end(&mut self, _round: usize) -> Result<()> {
        Ok(())
    }

    /// Scalar units of protocol state currently held.
    fn memory_units(&self) -> usize {
        0
    }

    fn snapshot(&self, round: usize) -> Self::Snapshot;

    /// The node's private data, as recorded in an adversary view when the
    /// node is corrupted.
    fn private_input(&self) -> Vec<f64>;

    fn output(&self) -> Result<Self::Output>;
}

/// Everything the corrupted set observes during one run.
#[derive(Debug, Clone, Serialize)]
pub struct AdversaryView<P, Snap> {
    pub corrupted: BTreeSet<NodeId>,
    pub tau: usize,
    pub private_inputs: BTreeMap<NodeId, Vec<f64>>,
    pub inbound: Vec<Message<P>>,
    pub outbound: Vec<Message<P>>,
    /// One snapshot per corrupted node per round, taken at round end.
    pub internal: BTreeMap<NodeId, Vec<Snap>>,
}

impl<P, Snap> AdversaryView<P, Snap> {
    fn new(corrupted: BTreeSet<NodeId>, tau: usize) -> Self {
        AdversaryView {
            internal: corrupted.iter().map(|&c| (c, Vec::new())).collect(),
            corrupted,
            tau,
            private_inputs: BTreeMap::new(),
            inbound: Vec::new(),
            outbound: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub round: usize,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub payload_kind: &'static str,
    pub payload_size: usize,
}

/// Per-message log of a run plus per-node peak memory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RoundTrace {
    pub node_count: usize,
    pub rounds: usize,
    pub completed: bool,
    pub records: Vec<TraceRecord>,
    pub peak_memory: Vec<usize>,
}

impl RoundTrace {
    pub fn messages_in_round(&self, round: usize) -> usize {
        self.records.iter().filter(|r| r.round == round).count()
    }

    /// CSV with header `round,sender,receiver,payload_kind,payload_size`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["round", "sender", "receiver", "payload_kind", "payload_size"]).expect("writing to memory");
        for r in &self.records {
            w.write_record([
                r.round.to_string(),
                r.sender.to_string(),
                r.receiver.to_string(),
                r.payload_kind.to_string(),
                r.payload_size.to_string(),
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Communication and memory cost per node, indexed by `id - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub message_units: Vec<usize>,
    pub messages: Vec<usize>,
    pub peak_memory_units: Vec<usize>,
}

pub fn cost_report(trace: &RoundTrace) -> Result<CostReport> {
    if !trace.completed {
        return Err(Error::domain("cost report needs a completed trace"));
    }
    let mut message_units = vec![0; trace.node_count];
    let mut messages = vec![0; trace.node_count];
    for r in &trace.records {
        message_units[r.sender.index()] += r.payload_size;
        messages[r.sender.index()] += 1;
    }
    Ok(CostReport { message_units, messages, peak_memory_units: trace.peak_memory.clone() })
}

pub struct RunResult<P: NodeProgram> {
    pub outputs: Vec<P::Output>,
    pub view: AdversaryView<P::Payload, P::Snapshot>,
    pub trace: RoundTrace,
    /// Final node states, in id order.
    pub nodes: Vec<P>,
}

/// Runs `programs` (one per node, in id order) until every node halts.
pub fn run_protocol<P: NodeProgram>(
    graph: &DirectedGraph,
    corrupted: &BTreeSet<NodeId>,
    tau: usize,
    mut programs: Vec<P>,
) -> Result<RunResult<P>> {
    let m = graph.node_count();
    if programs.len() != m {
        return Err(Error::domain(format!("{} programs for {m} nodes", programs.len())));
    }
    for (i, p) in programs.iter().enumerate() {
        if p.id() != NodeId::from_index(i) {
            return Err(Error::domain(format!("program {i} has id {}", p.id())));
        }
    }
    if corrupted.len() > tau {
        return Err(Error::domain(format!("{} corrupted nodes exceed tau = {tau}", corrupted.len())));
    }
    if let Some(c) = corrupted.iter().find(|c| c.index() >= m) {
        return Err(Error::domain(format!("corrupted node {c} is not in the graph")));
    }

    let mut view = AdversaryView::new(corrupted.clone(), tau);
    for &c in corrupted {
        view.private_inputs.insert(c, programs[c.index()].private_input());
    }
    let mut trace = RoundTrace { node_count: m, peak_memory: vec![0; m], ..RoundTrace::default() };
    let sample_memory = |programs: &[P], trace: &mut RoundTrace| {
        for (peak, p) in trace.peak_memory.iter_mut().zip(programs) {
            *peak = (*peak).max(p.memory_units());
        }
    };

    let mut round = 0;
    loop {
        let active: Vec<usize> = (0..m).filter(|&i| !programs[i].is_halted()).collect();
        if active.is_empty() {
            break;
        }
        for &i in &active {
            let budget = programs[i].round_budget();
            if round >= budget {
                return Err(Error::BudgetExceeded { node: NodeId::from_index(i), budget });
            }
        }

        for &i in &active {
            programs[i].on_round_start(round)?;
        }
        sample_memory(&programs, &mut trace);

        let mut in_flight: Vec<Message<P::Payload>> = Vec::new();
        for &i in &active {
            let sender = NodeId::from_index(i);
            for (receiver, payload) in programs[i].outbox(round)? {
                if !graph.has_edge(sender, receiver) {
                    return Err(Error::Protocol(format!(
                        "node {sender} sent to {receiver} in round {round}, but ({sender}, {receiver}) is not an edge"
                    )));
                }
                in_flight.push(Message { sender, receiver, round, payload });
            }
        }

        for msg in &in_flight {
            debug_assert_eq!(msg.round, round);
            let r = msg.receiver.index();
            if programs[r].is_halted() {
                return Err(Error::Protocol(format!("message to halted node {}", msg.receiver)));
            }
            programs[r].on_deliver(round, msg.sender, &msg.payload)?;
            trace.records.push(TraceRecord {
                round,
                sender: msg.sender,
                receiver: msg.receiver,
                payload_kind: msg.payload.kind(),
                payload_size: msg.payload.size_units(),
            });
        }

        for &i in &active {
            programs[i].on_round_end(round)?;
        }
        sample_memory(&programs, &mut trace);

        for msg in in_flight {
            let to_adv = corrupted.contains(&msg.receiver);
            let from_adv = corrupted.contains(&msg.sender);
            match (from_adv, to_adv) {
                (true, true) => {
                    view.outbound.push(msg.clone());
                    view.inbound.push(msg);
                }
                (true, false) => view.outbound.push(msg),
                (false, true) => view.inbound.push(msg),
                (false, false) => {}
            }
        }
        for &c in corrupted {
            view.internal.get_mut(&c).expect("seeded above").push(programs[c.index()].snapshot(round));
        }
        round += 1;
    }

    trace.rounds = round;
    trace.completed = true;
    let outputs = programs.iter().map(|p| p.output()).collect::<Result<Vec<_>>>()?;
    Ok(RunResult { outputs, view, trace, nodes: programs })
}

/// Parameters of one protocol run.
///
/// `node_count` is the node count the nodes assume; it defaults to the
/// graph's size and may be raised to an upper bound. The modulus is
/// `node_count * range_bound`.
#[derive(Debug, Clone)]
pub struct RunConfig<S: ModScalar> {
    graph: Arc<DirectedGraph>,
    rounds_per_sweep: usize,
    k: usize,
    range_bound: S,
    node_count: usize,
    ctx: ModulusContext<S>,
    master_seed: u64,
    corrupted: BTreeSet<NodeId>,
    tau: usize,
}

impl<S: ModScalar> RunConfig<S> {
    pub fn new(
        graph: impl Into<Arc<DirectedGraph>>,
        rounds_per_sweep: usize,
        k: usize,
        range_bound: f64,
        params: S::Params,
    ) -> Result<Self> {
        let graph = graph.into();
        let m = graph.node_count();
        Self::with_assumed_node_count(graph, rounds_per_sweep, k, range_bound, params, m)
    }

    /// Like [`RunConfig::new`], but nodes assume `node_count` nodes from the
    /// start, so `k` is validated against that count.
    pub fn with_assumed_node_count(
        graph: impl Into<Arc<DirectedGraph>>,
        rounds_per_sweep: usize,
        k: usize,
        range_bound: f64,
        params: S::Params,
        node_count: usize,
    ) -> Result<Self> {
        let graph = graph.into();
        if rounds_per_sweep == 0 {
            return Err(Error::domain("T must be at least 1"));
        }
        if !range_bound.is_finite() || range_bound <= 0.0 {
            return Err(Error::domain(format!("range bound a must be positive, got {range_bound}")));
        }
        let a = S::quantize(range_bound, &params)?;
        if a <= S::zero() {
            return Err(Error::domain(format!("range bound {range_bound} rounds to zero")));
        }
        let mut config = RunConfig {
            node_count,
            ctx: ModulusContext::new(1.0, params)?,
            graph,
            rounds_per_sweep,
            k,
            range_bound: a,
            master_seed: 0,
            corrupted: BTreeSet::new(),
            tau: 0,
        };
        config.rebuild_context()?;
        if !config.graph.is_strongly_connected() {
            log::warn!("graph is not strongly connected; the run is best-effort");
        } else if let Ok(d) = config.graph.diameter() {
            if rounds_per_sweep < d {
                log::warn!("T = {rounds_per_sweep} is below the graph diameter {d}; top-k may not converge");
            }
        }
        Ok(config)
    }

    fn rebuild_context(&mut self) -> Result<()> {
        if self.k == 0 || self.k > self.node_count {
            return Err(Error::domain(format!("k must lie in 1..={}, got {}", self.node_count, self.k)));
        }
        let modulus = self.range_bound.to_real(self.ctx.params()) * self.node_count as f64;
        self.ctx = ModulusContext::new(modulus, *self.ctx.params())?;
        Ok(())
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    /// Also raises `tau` to at least the size of the set.
    pub fn with_corrupted(mut self, corrupted: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        self.corrupted = corrupted.into_iter().collect();
        if let Some(c) = self.corrupted.iter().find(|c| c.index() >= self.graph.node_count()) {
            return Err(Error::domain(format!("corrupted node {c} is not in the graph")));
        }
        self.tau = self.tau.max(self.corrupted.len());
        Ok(self)
    }

    pub fn with_tau(mut self, tau: usize) -> Result<Self> {
        if tau < self.corrupted.len() {
            return Err(Error::domain(format!("tau = {tau} is below the {} corrupted nodes", self.corrupted.len())));
        }
        self.tau = tau;
        Ok(self)
    }

    /// Nodes assume `bound` nodes instead of the true count.
    pub fn with_node_count_bound(mut self, bound: usize) -> Result<Self> {
        if bound < self.graph.node_count() {
            log::warn!("node count bound {bound} is below the true count {}", self.graph.node_count());
        }
        self.node_count = bound;
        self.rebuild_context()?;
        Ok(self)
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<DirectedGraph> {
        Arc::clone(&self.graph)
    }

    pub fn rounds_per_sweep(&self) -> usize {
        self.rounds_per_sweep
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn range_bound(&self) -> S {
        self.range_bound
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn ctx(&self) -> &ModulusContext<S> {
        &self.ctx
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn corrupted(&self) -> &BTreeSet<NodeId> {
        &self.corrupted
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Number of top-k sweeps: `ceil(m / k)`.
    pub fn sweeps(&self) -> usize {
        self.node_count.div_ceil(self.k)
    }

    pub fn recovery_rounds(&self) -> usize {
        self.rounds_per_sweep * self.sweeps()
    }
}
