//! The TITAN node program.
//!
//! Round 0 is the noise exchange: every node sends a uniform mask to each
//! out-neighbor, folds received and sent masks into its perturbation `t_i`
//! and publishes only `x̃_i = mod(x_i + t_i, ma)`. Because every mask is
//! added once and subtracted once, the perturbed values sum to the true sum
//! modulo `ma`. Rounds `1..=T·ceil(m/k)` run `ceil(m/k)` top-k sweeps; each
//! sweep recovers the next `k` perturbed values, skipping ids already
//! recovered. Each node then reduces its recovered buffer and divides by
//! `m`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use super::topk::{RankedEntry, Slot, TopKBlock};
use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, NodeId};
use crate::modreal::{ModScalar, ModValue, ModulusContext};
use crate::simnet::{run_protocol, seed_node_rng, AdversaryView, NodeProgram, NodeRng, Payload, RoundTrace, RunConfig};

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", content = "data", rename_all = "kebab-case")]
pub enum TitanPayload<S: ModScalar> {
    /// One mask per coordinate.
    EdgeNoise(Arc<Vec<S>>),
    TopkLists(Arc<TopKBlock<S>>),
}

impl<S: ModScalar> Payload for TitanPayload<S> {
    fn kind(&self) -> &'static str {
        match self {
            TitanPayload::EdgeNoise(_) => "edge-noise",
            TitanPayload::TopkLists(_) => "topk-lists",
        }
    }

    fn size_units(&self) -> usize {
        match self {
            TitanPayload::EdgeNoise(r) => r.len(),
            TitanPayload::TopkLists(b) => 2 * b.k() * b.dims(),
        }
    }
}

/// `t_i = mod(sum of received masks - sum of sent masks, ma)` for one
/// coordinate.
pub fn perturbation<S: ModScalar>(ctx: &ModulusContext<S>, received: &[S], sent: &[S]) -> ModValue<S> {
    ctx.sub(ctx.sum(received.iter().copied()), ctx.sum(sent.iter().copied()))
}

/// `x̃_i = mod(x_i + t_i, ma)`. The input must lie in `[0, a)`.
pub fn perturb_input<S: ModScalar>(ctx: &ModulusContext<S>, a: S, x: S, t: ModValue<S>) -> Result<ModValue<S>> {
    if x < S::zero() || x >= a {
        return Err(Error::domain(format!("input {} is outside [0, {})", ctx.to_real(x), ctx.to_real(a))));
    }
    Ok(ctx.add(ctx.reduce(x), t))
}

/// Corrupted-node state recorded at the end of each round. The heavy parts
/// are shared with the node, so recording is cheap.
#[derive(Debug, Clone, Serialize)]
pub struct TitanSnapshot<S: ModScalar> {
    pub round: usize,
    pub sent_noises: Arc<BTreeMap<NodeId, Arc<Vec<S>>>>,
    pub received_noises: Arc<BTreeMap<NodeId, Arc<Vec<S>>>>,
    pub perturbation: Option<Arc<Vec<S>>>,
    pub perturbed: Option<Arc<Vec<S>>>,
    pub lists: Arc<TopKBlock<S>>,
    /// Per coordinate, the entries recovered so far in recovery order.
    pub recovered: Vec<Vec<RankedEntry<S>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TitanOutput<S: ModScalar> {
    /// `mod(sum of recovered values, ma)` per coordinate: the sum of the
    /// inputs.
    pub aggregate: Vec<ModValue<S>>,
    /// `aggregate / m` in real units.
    pub average: Vec<f64>,
}

pub struct TitanNode<S: ModScalar> {
    id: NodeId,
    ctx: ModulusContext<S>,
    range_bound: S,
    node_count: usize,
    k: usize,
    rounds_per_sweep: usize,
    sweeps: usize,
    out: Vec<NodeId>,
    inn: Vec<NodeId>,
    rng: NodeRng,
    input: Vec<S>,
    sent: Arc<BTreeMap<NodeId, Arc<Vec<S>>>>,
    received: BTreeMap<NodeId, Arc<Vec<S>>>,
    received_shared: Arc<BTreeMap<NodeId, Arc<Vec<S>>>>,
    perturbation: Option<Arc<Vec<S>>>,
    perturbed: Option<Arc<Vec<S>>>,
    lists: Arc<TopKBlock<S>>,
    next: TopKBlock<S>,
    /// Flat `d × node_count` buffer; coordinate `c` fills
    /// `recovered[c*node_count..][..filled[c]]`.
    recovered: Vec<Slot<S>>,
    filled: Vec<usize>,
    /// Flat `d × id_space` membership mask of recovered ids.
    recovered_mask: Vec<bool>,
    id_space: usize,
    rounds_done: usize,
}

impl<S: ModScalar> TitanNode<S> {
    pub fn new(config: &RunConfig<S>, id: NodeId, input: Vec<S>) -> Result<Self> {
        let graph = config.graph();
        let d = input.len();
        let a = config.range_bound();
        if let Some(x) = input.iter().find(|&&x| x < S::zero() || x >= a) {
            return Err(Error::domain(format!(
                "input {} of node {id} is outside [0, {})",
                config.ctx().to_real(*x),
                config.ctx().to_real(a)
            )));
        }
        let id_space = graph.node_count();
        Ok(TitanNode {
            id,
            ctx: *config.ctx(),
            range_bound: a,
            node_count: config.node_count(),
            k: config.k(),
            rounds_per_sweep: config.rounds_per_sweep(),
            sweeps: config.sweeps(),
            out: graph.out_neighbors(id)?.to_vec(),
            inn: graph.in_neighbors(id)?.to_vec(),
            rng: seed_node_rng(config.master_seed(), id),
            input,
            sent: Arc::new(BTreeMap::new()),
            received: BTreeMap::new(),
            received_shared: Arc::new(BTreeMap::new()),
            perturbation: None,
            perturbed: None,
            lists: Arc::new(TopKBlock::new(d, config.k())),
            next: TopKBlock::new(0, 0),
            recovered: vec![None; d * config.node_count()],
            filled: vec![0; d],
            recovered_mask: vec![false; d * id_space],
            id_space,
            rounds_done: 0,
        })
    }

    pub fn dims(&self) -> usize {
        self.input.len()
    }

    pub fn context(&self) -> &ModulusContext<S> {
        &self.ctx
    }

    fn total_rounds(&self) -> usize {
        1 + self.rounds_per_sweep * self.sweeps
    }

    fn phase_error(&self, message: impl Into<String>) -> Error {
        Error::Phase { node: self.id, message: message.into() }
    }

    /// Draws one mask per out-edge and coordinate. Only allowed once.
    pub fn draw_edge_noises(&mut self) -> Result<Vec<(NodeId, Arc<Vec<S>>)>> {
        if !self.sent.is_empty() || self.perturbation.is_some() {
            return Err(self.phase_error("edge noises were already drawn"));
        }
        let d = self.dims();
        let mut sent = BTreeMap::new();
        for &j in &self.out {
            let r: Vec<S> = (0..d).map(|_| self.ctx.sample(&mut self.rng).value()).collect();
            sent.insert(j, Arc::new(r));
        }
        self.sent = Arc::new(sent);
        Ok(self.sent.iter().map(|(&j, r)| (j, Arc::clone(r))).collect())
    }

    fn receive_noise(&mut self, from: NodeId, r: &Arc<Vec<S>>) -> Result<()> {
        if self.inn.binary_search(&from).is_err() {
            return Err(self.phase_error(format!("edge noise from {from}, which is not an in-neighbor")));
        }
        if r.len() != self.dims() {
            return Err(Error::MalformedMessage(format!("{} noise coordinates, expected {}", r.len(), self.dims())));
        }
        if r.iter().any(|&v| self.ctx.wrap(v).is_err()) {
            return Err(Error::MalformedMessage(format!("edge noise from {from} outside [0, ma)")));
        }
        if self.received.insert(from, Arc::clone(r)).is_some() {
            return Err(self.phase_error(format!("second edge noise from {from}")));
        }
        Ok(())
    }

    /// Folds the masks into `t_i` and `x̃_i`.
    pub fn compute_perturbation(&mut self) -> Result<()> {
        if self.perturbation.is_some() {
            return Err(self.phase_error("perturbation was already computed"));
        }
        if let Some(missing) = self.inn.iter().find(|j| !self.received.contains_key(j)) {
            return Err(self.phase_error(format!("no edge noise from in-neighbor {missing}")));
        }
        let d = self.dims();
        let mut t = Vec::with_capacity(d);
        let mut xt = Vec::with_capacity(d);
        for c in 0..d {
            let received: Vec<S> = self.received.values().map(|r| r[c]).collect();
            let sent: Vec<S> = self.sent.values().map(|r| r[c]).collect();
            let tc = perturbation(&self.ctx, &received, &sent);
            t.push(tc.value());
            xt.push(perturb_input(&self.ctx, self.range_bound, self.input[c], tc)?.value());
        }
        self.perturbation = Some(Arc::new(t));
        self.perturbed = Some(Arc::new(xt));
        self.received_shared = Arc::new(self.received.clone());
        Ok(())
    }

    fn is_recovered(&self, c: usize, id: NodeId) -> bool {
        self.recovered_mask.get(c * self.id_space + id.index()).copied().unwrap_or(false)
    }

    /// Loads this node's own entry for the next sweep, or nothing if its id
    /// was already recovered for that coordinate.
    fn seed_sweep(&mut self) {
        let perturbed = Arc::clone(self.perturbed.as_ref().expect("seeded after perturbation"));
        let mut block = TopKBlock::new(self.dims(), self.k);
        for (c, &v) in perturbed.iter().enumerate() {
            let own = (!self.is_recovered(c, self.id)).then(|| RankedEntry::new(v, self.id));
            block.seed(c, own);
        }
        self.lists = Arc::new(block);
    }

    /// Appends the sweep's winners to the recovered buffer.
    fn close_sweep(&mut self) {
        let m = self.node_count;
        for c in 0..self.dims() {
            for e in self.lists.list(c).iter().flatten() {
                let mask = c * self.id_space + e.id.index();
                if self.recovered_mask.get(mask).copied().unwrap_or(true) {
                    continue;
                }
                if self.filled[c] == m {
                    log::warn!("node {}: recovered buffer full; the node count bound is too small", self.id);
                    break;
                }
                self.recovered_mask[mask] = true;
                self.recovered[c * m + self.filled[c]] = Some(*e);
                self.filled[c] += 1;
            }
        }
    }

    /// Entries recovered for coordinate `c`, in recovery order.
    pub fn recovered(&self, c: usize) -> &[Slot<S>] {
        let m = self.node_count;
        &self.recovered[c * m..c * m + self.filled[c]]
    }

    pub fn recovered_ids(&self, c: usize) -> Vec<NodeId> {
        self.recovered(c).iter().flatten().map(|e| e.id).collect()
    }

    pub fn perturbation_values(&self) -> Option<&[S]> {
        self.perturbation.as_deref().map(Vec::as_slice)
    }

    pub fn perturbed_values(&self) -> Option<&[S]> {
        self.perturbed.as_deref().map(Vec::as_slice)
    }

    pub fn sent_noises(&self) -> &BTreeMap<NodeId, Arc<Vec<S>>> {
        &self.sent
    }

    pub fn received_noises(&self) -> &BTreeMap<NodeId, Arc<Vec<S>>> {
        &self.received
    }

    pub fn lists(&self) -> &TopKBlock<S> {
        &self.lists
    }
}

impl<S: ModScalar> NodeProgram for TitanNode<S> {
    type Payload = TitanPayload<S>;
    type Snapshot = TitanSnapshot<S>;
    type Output = TitanOutput<S>;

    fn id(&self) -> NodeId {
        self.id
    }

    fn round_budget(&self) -> usize {
        self.total_rounds()
    }

    fn is_halted(&self) -> bool {
        self.rounds_done >= self.total_rounds()
    }

    fn on_round_start(&mut self, round: usize) -> Result<()> {
        if round > 0 {
            self.next = (*self.lists).clone();
        }
        Ok(())
    }

    fn outbox(&mut self, round: usize) -> Result<Vec<(NodeId, TitanPayload<S>)>> {
        if round == 0 {
            return Ok(self.draw_edge_noises()?.into_iter().map(|(j, r)| (j, TitanPayload::EdgeNoise(r))).collect());
        }
        Ok(self.out.iter().map(|&j| (j, TitanPayload::TopkLists(Arc::clone(&self.lists)))).collect())
    }

    fn on_deliver(&mut self, round: usize, from: NodeId, payload: &TitanPayload<S>) -> Result<()> {
        match (round, payload) {
            (0, TitanPayload::EdgeNoise(r)) => self.receive_noise(from, r),
            (r, TitanPayload::TopkLists(block)) if r > 0 => {
                if self.inn.binary_search(&from).is_err() {
                    return Err(Error::Protocol(format!("node {} got lists from non-neighbor {from}", self.id)));
                }
                let (mask, space) = (&self.recovered_mask, self.id_space);
                self.next.absorb(block, |c, id| mask.get(c * space + id.index()).copied().unwrap_or(false))
            }
            (r, p) => Err(self.phase_error(format!("unexpected {} message in round {r}", p.kind()))),
        }
    }

    fn on_round_end(&mut self, round: usize) -> Result<()> {
        if round == 0 {
            self.compute_perturbation()?;
            self.seed_sweep();
        } else {
            self.lists = Arc::new(std::mem::replace(&mut self.next, TopKBlock::new(0, 0)));
            let step = (round - 1) % self.rounds_per_sweep;
            let sweep = (round - 1) / self.rounds_per_sweep;
            if step + 1 == self.rounds_per_sweep {
                self.close_sweep();
                if sweep + 1 < self.sweeps {
                    self.seed_sweep();
                }
            }
        }
        self.rounds_done += 1;
        Ok(())
    }

    fn memory_units(&self) -> usize {
        (2 * self.k + self.node_count) * self.dims()
    }

    fn snapshot(&self, round: usize) -> TitanSnapshot<S> {
        TitanSnapshot {
            round,
            sent_noises: Arc::clone(&self.sent),
            received_noises: Arc::clone(&self.received_shared),
            perturbation: self.perturbation.clone(),
            perturbed: self.perturbed.clone(),
            lists: Arc::clone(&self.lists),
            recovered: (0..self.dims()).map(|c| self.recovered(c).iter().flatten().copied().collect()).collect(),
        }
    }

    fn private_input(&self) -> Vec<f64> {
        self.input.iter().map(|&x| self.ctx.to_real(x)).collect()
    }

    fn output(&self) -> Result<TitanOutput<S>> {
        if !self.is_halted() {
            return Err(self.phase_error("output requested before the final round"));
        }
        let m = self.node_count as f64;
        let aggregate: Vec<ModValue<S>> = (0..self.dims())
            .map(|c| self.ctx.settle(self.ctx.sum(self.recovered(c).iter().flatten().map(|e| e.value))))
            .collect();
        let average = aggregate.iter().map(|v| self.ctx.to_real(v.value()) / m).collect();
        Ok(TitanOutput { aggregate, average })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoundCount {
    /// All rounds including the noise exchange.
    pub total: usize,
    /// Top-k rounds only: `T * ceil(m / k)`.
    pub recovery: usize,
}

pub struct TitanRun<S: ModScalar> {
    pub outputs: Vec<TitanOutput<S>>,
    pub view: AdversaryView<TitanPayload<S>, TitanSnapshot<S>>,
    pub trace: RoundTrace,
    pub nodes: Vec<TitanNode<S>>,
    /// Inputs after quantization, in id order.
    pub inputs: Vec<Vec<S>>,
    pub rounds: RoundCount,
}

impl<S: ModScalar> TitanRun<S> {
    /// The common output, or an error if any two nodes disagree.
    pub fn agreed_output(&self) -> Result<&TitanOutput<S>> {
        let first = self.outputs.first().ok_or_else(|| Error::Protocol("no nodes".into()))?;
        match self.outputs.iter().position(|o| o != first) {
            None => Ok(first),
            Some(i) => Err(Error::Protocol(format!("nodes 1 and {} disagree on the output", i + 1))),
        }
    }

    /// Honest perturbed inputs `x̃_i`, keyed by id.
    pub fn perturbed_inputs(&self) -> BTreeMap<NodeId, Vec<S>> {
        self.nodes.iter().filter_map(|n| n.perturbed_values().map(|v| (n.id, v.to_vec()))).collect()
    }
}

/// Quantizes `inputs` (one vector per node, in id order) and runs TITAN.
pub fn run_titan<S: ModScalar>(config: &RunConfig<S>, inputs: &[Vec<f64>]) -> Result<TitanRun<S>> {
    let ctx = config.ctx();
    let quantized = inputs
        .iter()
        .map(|x| x.iter().map(|&v| ctx.quantize(v)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    run_titan_quantized(config, quantized)
}

/// Runs TITAN on inputs already on the backend's grid.
pub fn run_titan_quantized<S: ModScalar>(config: &RunConfig<S>, inputs: Vec<Vec<S>>) -> Result<TitanRun<S>> {
    let graph = config.graph();
    let m = graph.node_count();
    if inputs.len() != m {
        return Err(Error::domain(format!("{} inputs for {m} nodes", inputs.len())));
    }
    let d = inputs.first().map_or(0, Vec::len);
    if inputs.iter().any(|x| x.len() != d) {
        return Err(Error::domain("inputs differ in dimension"));
    }
    let nodes =
        graph.nodes().zip(&inputs).map(|(id, x)| TitanNode::new(config, id, x.clone())).collect::<Result<Vec<_>>>()?;
    let res = run_protocol(graph, config.corrupted(), config.tau(), nodes)?;
    Ok(TitanRun {
        outputs: res.outputs,
        view: res.view,
        trace: res.trace,
        nodes: res.nodes,
        inputs,
        rounds: RoundCount { total: 1 + config.recovery_rounds(), recovery: config.recovery_rounds() },
    })
}

/// Recovers the exact node count: every node inputs 1 with `a = 2` and
/// modulus `2 * bound`, so the aggregate is `m` as long as `bound >= m`.
pub fn estimate_node_count<S: ModScalar>(
    graph: &DirectedGraph,
    bound: usize,
    rounds_per_sweep: usize,
    k: usize,
    seed: u64,
    params: S::Params,
) -> Result<usize> {
    if bound < graph.node_count() {
        log::warn!("node count bound {bound} is below the true count; the estimate is meaningless");
    }
    let config = RunConfig::<S>::with_assumed_node_count(graph.clone(), rounds_per_sweep, k, 2.0, params, bound)?
        .with_seed(seed);
    let run = run_titan(&config, &vec![vec![1.0]; graph.node_count()])?;
    let out = run.agreed_output()?;
    Ok(config.ctx().to_real(out.aggregate[0].value()).round() as usize)
}

/// For coordinate `coord`, the first value each honest id carried in any
/// top-k message received by a corrupted node.
pub fn first_observed_perturbed<S: ModScalar>(
    view: &AdversaryView<TitanPayload<S>, TitanSnapshot<S>>,
    coord: usize,
) -> BTreeMap<NodeId, S> {
    let mut seen = BTreeMap::new();
    for msg in &view.inbound {
        if let TitanPayload::TopkLists(block) = &msg.payload {
            for e in block.list(coord).iter().flatten() {
                if !view.corrupted.contains(&e.id) {
                    seen.entry(e.id).or_insert(e.value);
                }
            }
        }
    }
    seen
}

/// Honest ids, for convenience in audits.
pub fn honest_nodes(graph: &DirectedGraph, corrupted: &BTreeSet<NodeId>) -> Vec<NodeId> {
    graph.nodes().filter(|i| !corrupted.contains(i)).collect()
}
