//! Top-k consensus: nodes repeatedly merge their list of the k largest
//! `(value, id)` pairs with their in-neighbors' lists. After at least
//! diameter-many rounds on a strongly connected graph every node holds the
//! global top k.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, NodeId};
use crate::modreal::ModScalar;
use crate::simnet::{run_protocol, NodeProgram, Payload};

/// A value tagged with the node that contributed it. Ordered by value, then
/// by id, so ties go to the larger id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedEntry<S> {
    pub value: S,
    pub id: NodeId,
}

impl<S: ModScalar> RankedEntry<S> {
    pub fn new(value: S, id: NodeId) -> Self {
        RankedEntry { value, id }
    }

    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        self.value.total_cmp(&other.value).then(self.id.cmp(&other.id))
    }
}

/// `None` is the empty marker and ranks below every entry.
pub type Slot<S> = Option<RankedEntry<S>>;

/// Wire form of one list: parallel value and id vectors with empty entries
/// at matching positions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKList<S> {
    pub values: Vec<Option<S>>,
    pub ids: Vec<Option<NodeId>>,
}

impl<S: ModScalar> TopKList<S> {
    pub fn empty(k: usize) -> Self {
        TopKList { values: vec![None; k], ids: vec![None; k] }
    }

    pub fn from_slots(slots: &[Slot<S>]) -> Self {
        TopKList {
            values: slots.iter().map(|s| s.map(|e| e.value)).collect(),
            ids: slots.iter().map(|s| s.map(|e| e.id)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Validates the pairing and returns the present entries.
    pub fn entries(&self) -> Result<Vec<RankedEntry<S>>> {
        if self.values.len() != self.ids.len() {
            return Err(Error::MalformedMessage(format!(
                "value list has {} entries, id list has {}",
                self.values.len(),
                self.ids.len()
            )));
        }
        self.values
            .iter()
            .zip(&self.ids)
            .filter_map(|pair| match pair {
                (Some(v), Some(id)) => Some(Ok(RankedEntry::new(*v, *id))),
                (None, None) => None,
                _ => Some(Err(Error::MalformedMessage("value and id lists disagree on empty positions".into()))),
            })
            .collect()
    }

    pub fn present_values(&self) -> Vec<S> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn present_ids(&self) -> Vec<NodeId> {
        self.ids.iter().flatten().copied().collect()
    }
}

/// Merges arbitrary lists: dedupes the union by id (keeping the larger value
/// if an id shows up twice), orders by rank descending and keeps the top `k`,
/// padding with empty entries.
pub fn topk_merge<S: ModScalar>(own: &TopKList<S>, neighbors: &[TopKList<S>], k: usize) -> Result<TopKList<S>> {
    let mut all = own.entries()?;
    for n in neighbors {
        all.extend(n.entries()?);
    }
    all.sort_by(|a, b| a.id.cmp(&b.id).then(b.rank_cmp(a)));
    all.dedup_by_key(|e| e.id);
    all.sort_by(|a, b| b.rank_cmp(a));
    let mut slots: Vec<Slot<S>> = all.into_iter().take(k).map(Some).collect();
    slots.resize(k, None);
    Ok(TopKList::from_slots(&slots))
}

/// `d` independent lists of capacity `k`, stored flat. Each list is sorted
/// by rank descending with empty slots trailing.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKBlock<S> {
    k: usize,
    slots: Vec<Slot<S>>,
}

impl<S: ModScalar> TopKBlock<S> {
    pub fn new(dims: usize, k: usize) -> Self {
        TopKBlock { k, slots: vec![None; dims * k] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> usize {
        self.slots.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn list(&self, coord: usize) -> &[Slot<S>] {
        &self.slots[coord * self.k..(coord + 1) * self.k]
    }

    /// Resets coordinate `coord` to a single entry (or nothing).
    pub fn seed(&mut self, coord: usize, entry: Slot<S>) {
        let k = self.k;
        let list = &mut self.slots[coord * k..(coord + 1) * k];
        list.fill(None);
        list[0] = entry;
    }

    pub fn to_lists(&self) -> Vec<TopKList<S>> {
        (0..self.dims()).map(|c| TopKList::from_slots(self.list(c))).collect()
    }

    /// Builds a block from wire lists, validating and sorting each one.
    pub fn from_lists(lists: &[TopKList<S>], k: usize) -> Result<Self> {
        let mut block = TopKBlock::new(lists.len(), k);
        for (c, l) in lists.iter().enumerate() {
            if l.len() != k {
                return Err(Error::MalformedMessage(format!("list of length {} where k = {k}", l.len())));
            }
            let merged = topk_merge(l, &[], k)?;
            for (slot, (v, id)) in block.slots[c * k..(c + 1) * k].iter_mut().zip(merged.values.iter().zip(&merged.ids))
            {
                *slot = v.zip(*id).map(|(v, id)| RankedEntry::new(v, id));
            }
        }
        Ok(block)
    }

    /// Merges `other` into `self` coordinate by coordinate, skipping entries
    /// for which `excluded(coord, id)` holds.
    pub fn absorb(&mut self, other: &TopKBlock<S>, mut excluded: impl FnMut(usize, NodeId) -> bool) -> Result<()> {
        if other.k != self.k || other.slots.len() != self.slots.len() {
            return Err(Error::MalformedMessage(format!(
                "block of {} lists with k = {} merged into {} lists with k = {}",
                other.dims(),
                other.k,
                self.dims(),
                self.k
            )));
        }
        let k = self.k;
        let mut scratch: Vec<Slot<S>> = vec![None; k];
        for c in 0..self.dims() {
            let mine = &mut self.slots[c * k..(c + 1) * k];
            merge_sorted(mine, other.list(c), &mut scratch, |id| excluded(c, id));
            mine.copy_from_slice(&scratch);
        }
        Ok(())
    }
}

/// Two-way merge of rank-sorted lists into `out`, dropping duplicates.
/// A given id always carries the same value, so duplicates are adjacent.
fn merge_sorted<S: ModScalar>(
    a: &[Slot<S>],
    b: &[Slot<S>],
    out: &mut [Slot<S>],
    mut excluded: impl FnMut(NodeId) -> bool,
) {
    let (mut i, mut j, mut n) = (0, 0, 0);
    let mut last: Option<NodeId> = None;
    while n < out.len() {
        let take_a = match (a.get(i).copied().flatten(), b.get(j).copied().flatten()) {
            (None, None) => break,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(x), Some(y)) => x.rank_cmp(&y) != Ordering::Less,
        };
        let entry = if take_a {
            i += 1;
            a[i - 1].unwrap()
        } else {
            j += 1;
            b[j - 1].unwrap()
        };
        if last == Some(entry.id) || excluded(entry.id) {
            continue;
        }
        last = Some(entry.id);
        out[n] = Some(entry);
        n += 1;
    }
    out[n..].fill(None);
}

impl<S: ModScalar> Serialize for TopKBlock<S> {
    fn serialize<Z: Serializer>(&self, s: Z) -> std::result::Result<Z::Ok, Z::Error> {
        let mut st = s.serialize_struct("TopKBlock", 2)?;
        st.serialize_field("k", &self.k)?;
        st.serialize_field("lists", &self.to_lists())?;
        st.end()
    }
}

/// Top-k message: one list per coordinate.
#[derive(Debug, Clone, Serialize)]
pub struct TopKPayload<S: ModScalar>(pub std::sync::Arc<TopKBlock<S>>);

impl<S: ModScalar> Payload for TopKPayload<S> {
    fn kind(&self) -> &'static str {
        "topk-lists"
    }
    fn size_units(&self) -> usize {
        2 * self.0.k() * self.0.dims()
    }
}

/// Stand-alone top-k node: one scalar entry, `T` rounds.
pub struct TopKNode<S: ModScalar> {
    id: NodeId,
    out: Vec<NodeId>,
    in_set: BTreeSet<NodeId>,
    own: Slot<S>,
    excluded: BTreeSet<NodeId>,
    rounds: usize,
    done: usize,
    lists: std::sync::Arc<TopKBlock<S>>,
    next: TopKBlock<S>,
}

impl<S: ModScalar> NodeProgram for TopKNode<S> {
    type Payload = TopKPayload<S>;
    type Snapshot = TopKList<S>;
    type Output = TopKList<S>;

    fn id(&self) -> NodeId {
        self.id
    }

    fn round_budget(&self) -> usize {
        self.rounds
    }

    fn is_halted(&self) -> bool {
        self.done >= self.rounds
    }

    fn on_round_start(&mut self, round: usize) -> Result<()> {
        if round == 0 {
            let own = self.own.filter(|e| !self.excluded.contains(&e.id));
            std::sync::Arc::make_mut(&mut self.lists).seed(0, own);
        }
        self.next = (*self.lists).clone();
        Ok(())
    }

    fn outbox(&mut self, _round: usize) -> Result<Vec<(NodeId, TopKPayload<S>)>> {
        Ok(self.out.iter().map(|&j| (j, TopKPayload(self.lists.clone()))).collect())
    }

    fn on_deliver(&mut self, _round: usize, from: NodeId, payload: &TopKPayload<S>) -> Result<()> {
        if !self.in_set.contains(&from) {
            return Err(Error::Protocol(format!("node {} got a list from non-neighbor {from}", self.id)));
        }
        let excluded = &self.excluded;
        self.next.absorb(&payload.0, |_, id| excluded.contains(&id))
    }

    fn on_round_end(&mut self, _round: usize) -> Result<()> {
        self.lists = std::sync::Arc::new(std::mem::replace(&mut self.next, TopKBlock::new(0, 0)));
        self.done += 1;
        Ok(())
    }

    fn memory_units(&self) -> usize {
        2 * self.lists.k() * self.lists.dims()
    }

    fn snapshot(&self, _round: usize) -> TopKList<S> {
        TopKList::from_slots(self.lists.list(0))
    }

    fn private_input(&self) -> Vec<f64> {
        Vec::new()
    }

    fn output(&self) -> Result<TopKList<S>> {
        Ok(TopKList::from_slots(self.lists.list(0)))
    }
}

/// Runs `rounds` rounds of top-k consensus where node `i` contributes
/// `values[i - 1]` and ignores every id in `excluded[i - 1]` (its own
/// included). Returns each node's final list.
pub fn run_topk<S: ModScalar>(
    graph: &DirectedGraph,
    rounds: usize,
    k: usize,
    values: &[S],
    excluded: &[BTreeSet<NodeId>],
) -> Result<Vec<TopKList<S>>> {
    let m = graph.node_count();
    if rounds == 0 {
        return Err(Error::domain("T must be at least 1"));
    }
    if k == 0 || k > m {
        return Err(Error::domain(format!("k must lie in 1..={m}, got {k}")));
    }
    if values.len() != m || excluded.len() != m {
        return Err(Error::domain(format!("expected {m} values and exclusion sets")));
    }
    let nodes = graph
        .nodes()
        .map(|id| {
            let block = TopKBlock::new(1, k);
            Ok(TopKNode {
                id,
                out: graph.out_neighbors(id)?.to_vec(),
                in_set: graph.in_neighbors(id)?.iter().copied().collect(),
                own: Some(RankedEntry::new(values[id.index()], id)),
                excluded: excluded[id.index()].clone(),
                rounds,
                done: 0,
                lists: std::sync::Arc::new(block.clone()),
                next: block,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(run_protocol(graph, &BTreeSet::new(), 0, nodes)?.outputs)
}
