//! Private least squares over a horizontally partitioned system.
//!
//! Node `i` holds rows `(A_i, b_i)`. The normal equations only need
//! `sum A_iᵀA_i` and `sum A_iᵀb_i`, so every node packs the upper triangle of
//! its gram matrix and its moment vector into one vector, shifts it by a
//! public offset `c` so every entry lies in `[0, a)`, and the network
//! aggregates all entries with one TITAN run. Each node then subtracts
//! `m * c` and solves the normal equations itself.

pub mod io;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::modreal::ModScalar;
use crate::protocol::{run_titan_quantized, RoundCount, TitanPayload, TitanSnapshot};
use crate::simnet::{AdversaryView, RoundTrace, RunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::domain(format!("A has {} rows but b has {} entries", a.nrows(), b.len())));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("system has non-finite entries"));
        }
        Ok(LinearSystem { a, b })
    }

    pub fn equations(&self) -> usize {
        self.a.nrows()
    }

    pub fn variables(&self) -> usize {
        self.a.ncols()
    }

    /// Fails unless `AᵀA` is numerically full rank.
    pub fn check_full_rank(&self) -> Result<()> {
        let (p, n) = self.a.shape();
        if n == 0 || p < n {
            return Err(Error::Rank(format!("{p} equations cannot determine {n} variables")));
        }
        let sv = self.a.clone().svd(false, false).singular_values;
        let max = sv.max();
        let min = sv.min();
        let tol = max * (p.max(n) as f64) * f64::EPSILON;
        if !(max > 0.0 && min > tol) {
            return Err(Error::Rank(format!("smallest singular value {min:e} is below {tol:e}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub blocks: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl Partition {
    pub fn row_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|(a, _)| a.nrows()).collect()
    }

    pub fn node_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn variables(&self) -> usize {
        self.blocks.first().map_or(0, |(a, _)| a.ncols())
    }

    /// Stacks the blocks back into one system.
    pub fn stack(&self) -> Result<LinearSystem> {
        let n = self.variables();
        let rows: Vec<_> = self.blocks.iter().flat_map(|(a, _)| a.row_iter().map(|r| r.into_owned())).collect();
        let a = if rows.is_empty() { DMatrix::zeros(0, n) } else { DMatrix::from_rows(&rows) };
        let b = DVector::from_iterator(a.nrows(), self.blocks.iter().flat_map(|(_, b)| b.iter().copied()));
        LinearSystem::new(a, b)
    }

    pub fn local_updates(&self) -> Vec<LocalUpdate> {
        self.blocks.iter().map(|(a, b)| local_update(a, b)).collect()
    }
}

/// Splits rows into contiguous blocks of the given sizes.
pub fn partition_system(sys: &LinearSystem, row_counts: &[usize]) -> Result<Partition> {
    if row_counts.is_empty() || row_counts.contains(&0) {
        return Err(Error::domain("row counts must be positive and non-empty"));
    }
    let total: usize = row_counts.iter().sum();
    if total != sys.equations() {
        return Err(Error::domain(format!("row counts sum to {total}, system has {} rows", sys.equations())));
    }
    let mut start = 0;
    let blocks = row_counts
        .iter()
        .map(|&p| {
            let block = (sys.a.rows(start, p).into_owned(), sys.b.rows(start, p).into_owned());
            start += p;
            block
        })
        .collect();
    Ok(Partition { blocks })
}

/// Row counts for `p` rows over `m` nodes, as even as possible with the
/// larger blocks first.
pub fn even_row_counts(p: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| p / m + usize::from(i < p % m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub gram: DMatrix<f64>,
    pub moment: DVector<f64>,
}

pub fn local_update(a: &DMatrix<f64>, b: &DVector<f64>) -> LocalUpdate {
    LocalUpdate { gram: a.tr_mul(a), moment: a.tr_mul(b) }
}

impl LocalUpdate {
    /// Upper triangle of the gram matrix row by row, then the moment.
    pub fn pack(&self) -> Vec<f64> {
        let n = self.moment.len();
        let mut out = Vec::with_capacity(packed_len(n));
        for r in 0..n {
            for c in r..n {
                out.push(self.gram[(r, c)]);
            }
        }
        out.extend(self.moment.iter());
        out
    }
}

pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2 + n
}

/// Inverse of [`LocalUpdate::pack`], mirroring the triangle.
pub fn unpack(values: &[f64], n: usize) -> Result<LocalUpdate> {
    if values.len() != packed_len(n) {
        return Err(Error::domain(format!("{} packed values for n = {n}", values.len())));
    }
    let mut gram = DMatrix::zeros(n, n);
    let mut it = values.iter();
    for r in 0..n {
        for c in r..n {
            let v = *it.next().expect("length checked");
            gram[(r, c)] = v;
            gram[(c, r)] = v;
        }
    }
    Ok(LocalUpdate { gram, moment: DVector::from_iterator(n, it.copied()) })
}

/// Offset `c >= max(0, -min)` and range bound `a = 2 * (max + c)` (or 1 if
/// every shifted entry is 0), so every shifted entry lies in `[0, a)`.
pub fn choose_shift_and_range(updates: &[LocalUpdate]) -> Result<(f64, f64)> {
    let entries = updates.iter().flat_map(|u| u.gram.iter().chain(u.moment.iter()).copied());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in entries {
        if !e.is_finite() {
            return Err(Error::domain("non-finite entry in a local update"));
        }
        lo = lo.min(e);
        hi = hi.max(e);
    }
    if lo > hi {
        return Ok((0.0, 1.0));
    }
    let c = (-lo).max(0.0);
    let span = hi + c;
    Ok((c, if span > 0.0 { 2.0 * span } else { 1.0 }))
}

/// Checks that every shifted entry lies in `[0, a)`.
pub fn validate_shift_and_range(updates: &[LocalUpdate], offset: f64, range_bound: f64) -> Result<()> {
    for (i, u) in updates.iter().enumerate() {
        if let Some(e) = u.pack().into_iter().find(|&e| !(e + offset >= 0.0 && e + offset < range_bound)) {
            return Err(Error::domain(format!(
                "node {}: entry {e} shifted by {offset} is outside [0, {range_bound})",
                i + 1
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PrivateSolution<S: ModScalar> {
    /// `x* = (mX)⁻¹(mY)`.
    pub x: Vec<f64>,
    /// `X = (1/m) sum A_iᵀA_i`, row-major.
    pub gram_average: Vec<f64>,
    /// `Y = (1/m) sum A_iᵀb_i`.
    pub moment_average: Vec<f64>,
    /// `sum` of the quantized packed entries, recovered from the aggregate.
    pub packed_sums: Vec<S>,
    pub rounds: RoundCount,
    #[serde(skip)]
    pub view: AdversaryView<TitanPayload<S>, TitanSnapshot<S>>,
    #[serde(skip)]
    pub trace: RoundTrace,
}

/// Quantized, shifted packed entries of each node: `q(e) + q(c)`.
pub fn shifted_inputs<S: ModScalar>(updates: &[LocalUpdate], offset: S, params: &S::Params) -> Result<Vec<Vec<S>>> {
    updates.iter().map(|u| u.pack().into_iter().map(|e| Ok(S::quantize(e, params)? + offset)).collect()).collect()
}

/// Runs the private solver. `config` carries the graph, `T`, `k`, the range
/// bound `a`, the seed and the corrupted set; `offset` is the public shift
/// `c`.
pub fn solve_private<S: ModScalar>(
    partition: &Partition,
    config: &RunConfig<S>,
    offset: f64,
) -> Result<PrivateSolution<S>> {
    let m = partition.node_count();
    let n = partition.variables();
    if m != config.graph().node_count() {
        return Err(Error::domain(format!("{m} blocks for {} nodes", config.graph().node_count())));
    }
    if config.node_count() != m {
        return Err(Error::domain("the solver needs the exact node count"));
    }
    if partition.blocks.iter().any(|(a, _)| a.ncols() != n) {
        return Err(Error::domain("blocks differ in variable count"));
    }
    if !(offset.is_finite() && offset >= 0.0) {
        return Err(Error::domain(format!("offset must be non-negative, got {offset}")));
    }
    let params = config.ctx().params();
    let updates = partition.local_updates();
    let c = S::quantize(offset, params)?;
    let inputs = shifted_inputs(&updates, c, params)?;
    let run = run_titan_quantized(config, inputs)?;
    let out = run.agreed_output()?;

    let total_shift = (0..m).fold(S::zero(), |acc, _| acc + c);
    let packed_sums: Vec<S> = out.aggregate.iter().map(|v| v.value() - total_shift).collect();
    let real: Vec<f64> = packed_sums.iter().map(|&s| s.to_real(params)).collect();
    let sums = unpack(&real, n)?;

    // Every node solves the same normal equations; confirm they agree.
    let mut x: Option<DVector<f64>> = None;
    for id in config.graph().nodes() {
        let xi = solve_normal_equations(&sums, id)?;
        match &x {
            Some(prev) if *prev != xi => {
                return Err(Error::Protocol(format!("node {id} computed a different solution")));
            }
            Some(_) => {}
            None => x = Some(xi),
        }
    }
    let x = x.unwrap_or_else(|| DVector::zeros(n));
    let mf = m as f64;
    Ok(PrivateSolution {
        x: x.iter().copied().collect(),
        gram_average: sums.gram.transpose().iter().map(|v| v / mf).collect(),
        moment_average: sums.moment.iter().map(|v| v / mf).collect(),
        packed_sums,
        rounds: run.rounds,
        view: run.view,
        trace: run.trace,
    })
}

fn solve_normal_equations(sums: &LocalUpdate, node: NodeId) -> Result<DVector<f64>> {
    let chol = sums
        .gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Rank(format!("node {node}: aggregated gram matrix is not positive definite")))?;
    Ok(chol.solve(&sums.moment))
}

/// Least-squares solution of the full system via Householder QR.
pub fn direct_lssol(sys: &LinearSystem) -> Result<DVector<f64>> {
    sys.check_full_rank()?;
    let qr = sys.a.clone().qr();
    let qtb = qr.q().tr_mul(&sys.b);
    qr.r().solve_upper_triangular(&qtb).ok_or_else(|| Error::Rank("triangular factor is singular".into()))
}

pub fn relative_error(x: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Moves row `row` (0-based within node `donor`'s block) into node
/// `recipient`'s block at the same index, clamped to its length, so moving
/// it back restores the original partition. The stacked system keeps the same multiset of
/// rows, so the gram and moment sums and the solution are unchanged.
pub fn make_equivalent_system(
    part: &Partition,
    corrupted: &BTreeSet<NodeId>,
    row: usize,
    donor: NodeId,
    recipient: NodeId,
) -> Result<Partition> {
    let m = part.node_count();
    for who in [donor, recipient] {
        if who.index() >= m {
            return Err(Error::domain(format!("node {who} is not in the partition")));
        }
        if corrupted.contains(&who) {
            return Err(Error::domain(format!("node {who} is corrupted")));
        }
    }
    if donor == recipient {
        return Err(Error::domain("donor and recipient must differ"));
    }
    let (da, db) = &part.blocks[donor.index()];
    if da.nrows() < 2 {
        return Err(Error::domain(format!("node {donor} needs at least two rows to give one away")));
    }
    if row >= da.nrows() {
        return Err(Error::domain(format!("row {row} is out of range for node {donor}")));
    }
    let mut blocks = part.blocks.clone();
    let moved_a = da.row(row).into_owned();
    let moved_b = db[row];
    blocks[donor.index()] = (da.clone().remove_row(row), db.clone().remove_row(row));
    let (ra, rb) = &blocks[recipient.index()];
    let at = row.min(ra.nrows());
    let mut new_a = ra.clone().insert_row(at, 0.0);
    new_a.set_row(at, &moved_a);
    let new_b = rb.clone().insert_row(at, moved_b);
    blocks[recipient.index()] = (new_a, new_b);
    Ok(Partition { blocks })
}
