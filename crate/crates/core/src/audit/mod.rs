//! Statistical checks of the privacy claims.
//!
//! The protocol promises that what a corrupted set sees has the same
//! distribution for any two input sets that agree on the corrupted nodes'
//! data and on the released sum. The audit samples many runs on both input
//! sets, reduces each run's view to scalar coordinates and compares the two
//! populations coordinate by coordinate with a two-sample KS test.
//!
//! Coordinates per run:
//! * each honest `x̃_i`, as first seen in a message to a corrupted node;
//! * each mask on an edge with a corrupted endpoint;
//! * the released aggregate;
//! * each honest residual `x̃_i - t_i^A`, where `t_i^A` is the part of
//!   `t_i` made of masks the adversary knows;
//! * the residual sum over each connected component of the honest
//!   subgraph. When removing the corrupted set isolates honest nodes, this
//!   is exactly their input sum, which is how a star with a corrupted hub
//!   leaks.

pub mod ks;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, NodeId};
use crate::modreal::{ModScalar, ModulusContext};
use crate::protocol::{first_observed_perturbed, run_titan, TitanRun};
use crate::simnet::RunConfig;

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_RUNS: usize = 1000;
pub const MIN_SAMPLES: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    pub label: String,
    pub samples: Vec<f64>,
    pub modulus: f64,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, samples: Vec<f64>, modulus: f64) -> Result<Self> {
        if !(modulus.is_finite() && modulus > 0.0) {
            return Err(Error::domain(format!("modulus must be positive, got {modulus}")));
        }
        if let Some(s) = samples.iter().find(|&&s| !(0.0..modulus).contains(&s)) {
            return Err(Error::domain(format!("sample {s} is outside [0, {modulus})")));
        }
        Ok(SampleSet { label: label.into(), samples, modulus })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    Indistinguishable,
    Distinguishable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub test: String,
    pub statistic: f64,
    /// Bonferroni-corrected where several coordinates are tested.
    pub p_value: f64,
    pub threshold: f64,
    pub expectation: Expectation,
    pub pass: bool,
    pub sample_sizes: Vec<usize>,
    pub coordinates: usize,
    /// Label of the coordinate with the smallest p-value.
    pub worst_coordinate: Option<String>,
}

impl AuditReport {
    /// `p >= threshold`: no evidence the populations differ.
    pub fn indistinguishable(&self) -> bool {
        self.p_value >= self.threshold
    }

    /// Re-reads the report as a negative control, which passes when the
    /// populations are told apart.
    pub fn as_negative_control(mut self) -> Self {
        self.expectation = Expectation::Distinguishable;
        self.pass = !self.indistinguishable();
        self
    }
}

/// One-sample KS test of `s` against uniform on `[0, modulus)`.
pub fn uniformity_test(s: &SampleSet, alpha: f64) -> Result<AuditReport> {
    if s.samples.is_empty() {
        return Err(Error::domain(format!("sample set {} is empty", s.label)));
    }
    if s.samples.len() < MIN_SAMPLES {
        return Err(Error::domain(format!(
            "sample set {} has {} samples, at least {MIN_SAMPLES} are needed",
            s.label,
            s.samples.len()
        )));
    }
    let d = ks::one_sample_uniform(&s.samples, 0.0, s.modulus);
    let p = ks::one_sample_p(d, s.samples.len());
    Ok(AuditReport {
        test: format!("uniformity:{}", s.label),
        statistic: d,
        p_value: p,
        threshold: alpha,
        expectation: Expectation::Indistinguishable,
        pass: p >= alpha,
        sample_sizes: vec![s.samples.len()],
        coordinates: 1,
        worst_coordinate: Some(s.label.clone()),
    })
}

/// Moves `delta` from honest node `donor` to honest node `recipient` on the
/// backend's grid. The result has the same sum and the same corrupted
/// entries as `x`.
pub fn make_equivalent_inputs<S: ModScalar>(
    x: &[f64],
    range_bound: f64,
    params: &S::Params,
    corrupted: &BTreeSet<NodeId>,
    delta: f64,
    donor: NodeId,
    recipient: NodeId,
) -> Result<Vec<f64>> {
    for who in [donor, recipient] {
        if who.index() >= x.len() {
            return Err(Error::domain(format!("node {who} is out of range")));
        }
        if corrupted.contains(&who) {
            return Err(Error::domain(format!("node {who} is corrupted")));
        }
    }
    if donor == recipient {
        return Err(Error::domain("donor and recipient must differ"));
    }
    let a = S::quantize(range_bound, params)?;
    let mut q = x.iter().map(|&v| S::quantize(v, params)).collect::<Result<Vec<_>>>()?;
    let d = S::quantize(delta, params)?;
    q[donor.index()] = q[donor.index()] - d;
    q[recipient.index()] = q[recipient.index()] + d;
    for who in [donor, recipient] {
        let v = q[who.index()];
        if v < S::zero() || v >= a {
            return Err(Error::domain(format!(
                "moving {delta} puts node {who} at {}, outside [0, {range_bound})",
                v.to_real(params)
            )));
        }
    }
    Ok(q.into_iter().map(|v| v.to_real(params)).collect())
}

/// Connected components of the symmetrized graph after deleting
/// `removed`, as sorted id lists.
pub fn honest_components(graph: &DirectedGraph, removed: &BTreeSet<NodeId>) -> Vec<Vec<NodeId>> {
    let adj = graph.symmetrized();
    let mut seen = vec![false; graph.node_count()];
    for r in removed {
        if let Some(s) = seen.get_mut(r.index()) {
            *s = true;
        }
    }
    let mut comps = Vec::new();
    for start in 0..graph.node_count() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![NodeId::from_index(start)];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(NodeId::from_index(v));
                    queue.push_back(v);
                }
            }
        }
        comp.sort();
        comps.push(comp);
    }
    comps
}

/// Scalar coordinates of one run's adversary view, in a fixed order.
pub fn view_coordinates<S: ModScalar>(run: &TitanRun<S>, graph: &DirectedGraph) -> Result<Vec<(String, f64)>> {
    let view = &run.view;
    let corrupted = &view.corrupted;
    let first = corrupted.iter().next().ok_or_else(|| Error::domain("the audit needs a corrupted node"))?;
    let ctx: &ModulusContext<S> = run.nodes[first.index()].context();
    let d = run.inputs.first().map_or(0, Vec::len);
    let mut coords = Vec::new();

    // masks on edges with a corrupted endpoint, keyed (sender, receiver)
    let mut known: BTreeMap<(NodeId, NodeId), &[S]> = BTreeMap::new();
    for c in corrupted {
        let snap = view.internal[c].first().ok_or_else(|| Error::domain("empty view"))?;
        for (&j, r) in snap.sent_noises.iter() {
            known.insert((*c, j), r.as_slice());
        }
        for (&j, r) in snap.received_noises.iter() {
            known.insert((j, *c), r.as_slice());
        }
    }
    for coord in 0..d {
        let observed = first_observed_perturbed(view, coord);
        let honest: Vec<NodeId> = graph.nodes().filter(|i| !corrupted.contains(i)).collect();
        let mut residual = BTreeMap::new();
        for &i in &honest {
            let Some(&xt) = observed.get(&i) else { continue };
            coords.push((format!("x~[{i}][{coord}]"), ctx.to_real(xt)));
            let mut known_t = ctx.reduce(S::zero());
            for (&(s, r), noise) in &known {
                if r == i {
                    known_t = ctx.add(known_t, ctx.reduce(noise[coord]));
                } else if s == i {
                    known_t = ctx.sub(known_t, ctx.reduce(noise[coord]));
                }
            }
            let res = ctx.sub(ctx.reduce(xt), known_t);
            residual.insert(i, res);
            coords.push((format!("residual[{i}][{coord}]"), ctx.to_real(res.value())));
        }
        for (&(s, r), noise) in &known {
            coords.push((format!("r[{s}->{r}][{coord}]"), ctx.to_real(noise[coord])));
        }
        for comp in honest_components(graph, corrupted) {
            if comp.iter().all(|i| residual.contains_key(i)) {
                let sum = ctx.sum(comp.iter().map(|i| residual[i].value()));
                let label = comp.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
                coords.push((format!("component[{label}][{coord}]"), ctx.to_real(sum.value())));
            }
        }
        let last = view.internal[first].last().ok_or_else(|| Error::domain("empty view"))?;
        let aggregate = ctx.sum(last.recovered[coord].iter().map(|e| e.value));
        coords.push((format!("aggregate[{coord}]"), ctx.to_real(aggregate.value())));
    }
    Ok(coords)
}

/// Derives `count` run seeds from a master seed.
pub fn run_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.gen()).collect()
}

fn sample_views<S: ModScalar>(
    config: &RunConfig<S>,
    inputs: &[Vec<f64>],
    seeds: &[u64],
) -> Result<Vec<Vec<(String, f64)>>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let run = run_titan(&config.clone().with_seed(seed), inputs)?;
            view_coordinates(&run, config.graph())
        })
        .collect()
}

/// Runs TITAN `runs` times on each of `x` and `x2` (one scalar input per
/// node) and compares every view coordinate with a two-sample KS test.
/// Passes when the Bonferroni-corrected smallest p-value is at least
/// `alpha`.
pub fn view_indistinguishability_test<S: ModScalar>(
    config: &RunConfig<S>,
    x: &[f64],
    x2: &[f64],
    runs: usize,
    alpha: f64,
) -> Result<AuditReport> {
    let graph = config.graph();
    let m = graph.node_count();
    if x.len() != m || x2.len() != m {
        return Err(Error::domain(format!("both input sets need {m} values")));
    }
    if config.corrupted().is_empty() {
        return Err(Error::domain("the audit needs at least one corrupted node"));
    }
    if let Some(c) = config.corrupted().iter().find(|c| x[c.index()] != x2[c.index()]) {
        return Err(Error::domain(format!("corrupted node {c} has different inputs")));
    }
    if runs < MIN_SAMPLES {
        return Err(Error::domain(format!("at least {MIN_SAMPLES} runs per side are needed, got {runs}")));
    }
    let kappa = graph.weak_vertex_connectivity();
    if kappa < config.tau() + 1 {
        log::warn!("weak vertex-connectivity {kappa} is below tau + 1 = {}; privacy is not expected", config.tau() + 1);
    }

    let seeds = run_seeds(config.master_seed(), 2 * runs);
    let (even, odd): (Vec<_>, Vec<_>) = seeds.chunks(2).map(|p| (p[0], p[1])).unzip();
    let lift = |v: &[f64]| v.iter().map(|&s| vec![s]).collect::<Vec<_>>();
    let left = sample_views(config, &lift(x), &even)?;
    let right = sample_views(config, &lift(x2), &odd)?;

    // A coordinate is tested only if every run on both sides has it.
    let labels: Vec<String> = left[0].iter().map(|(l, _)| l.clone()).collect();
    let column = |side: &[Vec<(String, f64)>], label: &str| -> Option<Vec<f64>> {
        side.iter().map(|coords| coords.iter().find(|(l, _)| l == label).map(|(_, v)| *v)).collect()
    };
    let mut worst: Option<(f64, f64, String)> = None;
    let mut tested = 0;
    for label in labels {
        let (Some(a), Some(b)) = (column(&left, &label), column(&right, &label)) else { continue };
        tested += 1;
        let d = ks::two_sample(&a, &b);
        let p = ks::two_sample_p(d, a.len(), b.len());
        if worst.as_ref().is_none_or(|(wp, _, _)| p < *wp) {
            worst = Some((p, d, label));
        }
    }
    let (p, d, label) = worst.ok_or_else(|| Error::domain("no view coordinate was observed in every run"))?;
    let corrected = (p * tested as f64).min(1.0);
    Ok(AuditReport {
        test: "view-indistinguishability".into(),
        statistic: d,
        p_value: corrected,
        threshold: alpha,
        expectation: Expectation::Indistinguishable,
        pass: corrected >= alpha,
        sample_sizes: vec![runs, runs],
        coordinates: tested,
        worst_coordinate: Some(label),
    })
}

/// Samples of node `node`'s perturbation `t_i` and perturbed input `x̃_i`
/// (coordinate 0) over `runs` independent seeds.
pub fn perturbation_samples<S: ModScalar>(
    config: &RunConfig<S>,
    inputs: &[Vec<f64>],
    node: NodeId,
    runs: usize,
) -> Result<(SampleSet, SampleSet)> {
    let seeds = run_seeds(config.master_seed(), runs);
    let pairs: Vec<(f64, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let run = run_titan(&config.clone().with_seed(seed), inputs)?;
            let n = run.nodes.get(node.index()).ok_or_else(|| Error::domain(format!("no node {node}")))?;
            let ctx = config.ctx();
            let t = n.perturbation_values().expect("run completed")[0];
            let xt = n.perturbed_values().expect("run completed")[0];
            Ok((ctx.to_real(t), ctx.to_real(xt)))
        })
        .collect::<Result<_>>()?;
    let modulus = config.ctx().modulus_real();
    let (t, xt): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok((SampleSet::new(format!("t[{node}]"), t, modulus)?, SampleSet::new(format!("x~[{node}]"), xt, modulus)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphKind};
    use crate::modreal::{Fixed, Scale};

    fn id(i: u32) -> NodeId {
        NodeId::new(i).unwrap()
    }

    #[test]
    fn uniformity_rejects_constants_and_small_sets() {
        let constant = SampleSet::new("c", vec![1.0; 600], 10.0).unwrap();
        assert!(!uniformity_test(&constant, 0.01).unwrap().pass);
        let grid = SampleSet::new("g", (0..1000).map(|i| i as f64 / 100.0).collect(), 10.0).unwrap();
        assert!(uniformity_test(&grid, 0.01).unwrap().pass);
        assert!(uniformity_test(&SampleSet::new("e", vec![], 1.0).unwrap(), 0.01).is_err());
        assert!(uniformity_test(&SampleSet::new("s", vec![0.5; 10], 1.0).unwrap(), 0.01).is_err());
        assert!(SampleSet::new("bad", vec![1.0], 1.0).is_err());
    }

    #[test]
    fn equivalent_inputs_examples() {
        let p = Scale::default();
        let corrupted = BTreeSet::from([id(1)]);
        let x = [1.0, 2.0, 3.0];
        let same = make_equivalent_inputs::<Fixed>(&x, 4.0, &p, &corrupted, 0.0, id(2), id(3)).unwrap();
        assert_eq!(same, x);
        let moved = make_equivalent_inputs::<Fixed>(&x, 4.0, &p, &corrupted, 0.5, id(2), id(3)).unwrap();
        assert_eq!(moved, vec![1.0, 1.5, 3.5]);
        assert!(make_equivalent_inputs::<Fixed>(&x, 4.0, &p, &corrupted, 0.5, id(1), id(3)).is_err());
        assert!(make_equivalent_inputs::<Fixed>(&x, 4.0, &p, &corrupted, 1.5, id(2), id(3)).is_err());
    }

    #[test]
    fn components_after_removal() {
        let ring = generate_graph(GraphKind::Ring, 5, 0).unwrap();
        assert_eq!(honest_components(&ring, &BTreeSet::from([id(1)])), vec![vec![id(2), id(3), id(4), id(5)]]);
        let star = generate_graph(GraphKind::Star, 4, 0).unwrap();
        assert_eq!(honest_components(&star, &BTreeSet::from([id(1)])).len(), 3);
    }

    #[test]
    fn star_residuals_equal_inputs() {
        let star = generate_graph(GraphKind::Star, 4, 0).unwrap();
        let config = RunConfig::<Fixed>::new(star.clone(), 2, 4, 10.0, Default::default())
            .unwrap()
            .with_corrupted([id(1)])
            .unwrap()
            .with_seed(8);
        let run = run_titan(&config, &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let coords = view_coordinates(&run, &star).unwrap();
        let get = |l: &str| coords.iter().find(|(k, _)| k == l).unwrap().1;
        assert_eq!(get("residual[2][0]"), 2.0);
        assert_eq!(get("residual[4][0]"), 4.0);
        assert_eq!(get("aggregate[0]"), 10.0);
    }

    #[test]
    fn audit_preconditions() {
        let ring = generate_graph(GraphKind::Ring, 3, 0).unwrap();
        let config = RunConfig::<Fixed>::new(ring, 2, 3, 4.0, Default::default()).unwrap();
        assert!(view_indistinguishability_test(&config, &[1.0; 3], &[1.0; 3], 500, 0.01).is_err());
        let config = config.with_corrupted([id(1)]).unwrap();
        assert!(view_indistinguishability_test(&config, &[1.0; 3], &[2.0, 1.0, 1.0], 500, 0.01).is_err());
        assert!(view_indistinguishability_test(&config, &[1.0; 3], &[1.0; 3], 10, 0.01).is_err());
    }
}
