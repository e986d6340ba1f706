use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::Serialize;
use titan::audit::{make_equivalent_inputs, view_indistinguishability_test, AuditReport};
use titan::protocol::{honest_nodes, RoundCount};
use titan::solver::io::{matrix_to_csv, read_matrix, read_partition_spec, read_vector, vector_to_csv};
use titan::solver::{
    choose_shift_and_range, direct_lssol, partition_system, relative_error, solve_private, validate_shift_and_range,
    LinearSystem,
};
use titan::{
    cost_report, estimate_node_count, run_titan, CostReport, DirectedGraph, Fixed, ModScalar, NodeId, RunConfig,
};

use crate::config::{AuditSpec, BackendChoice, GenSpec, Mode, SystemSpec};
use crate::gen::generate_system;
use crate::{render, AuditArgs, CliError, CommonArgs, ConsensusArgs, EstimateArgs, GenArgs, Outcome, Resolved};

/// Relative error the solver must reach against the direct solution.
pub const SOLVE_TOLERANCE: f64 = 1e-6;

type Done = (Outcome, Option<PathBuf>);

macro_rules! by_backend {
    ($backend:expr, $f:ident($($arg:expr),*)) => {
        match $backend {
            BackendChoice::Exact => $f::<Fixed>($($arg),*),
            BackendChoice::Float => $f::<f64>($($arg),*),
        }
    };
}

fn run_config<S: ModScalar>(r: &mut Resolved, graph: DirectedGraph, a: f64) -> Result<RunConfig<S>, CliError> {
    let m = graph.node_count();
    let c = &mut r.config;
    let t = *c.rounds_per_sweep.get_or_insert(m);
    let k = *c.k.get_or_insert(m);
    c.a = Some(a);
    let ids = c.corrupted_ids()?;
    let mut config = RunConfig::<S>::new(graph, t, k, a, S::default_params())?.with_seed(c.seed).with_corrupted(ids)?;
    if let Some(tau) = c.tau {
        config = config.with_tau(tau)?;
    }
    Ok(config)
}

fn trace_file(r: &Resolved, trace: &titan::RoundTrace) -> Result<Option<(String, String)>, CliError> {
    if !r.config.trace {
        return Ok(None);
    }
    if r.config.out.is_none() {
        return Err(CliError::Precondition("--trace needs --out".into()));
    }
    Ok(Some(("trace.csv".into(), trace.to_csv())))
}

fn finish(
    name: &'static str,
    r: &Resolved,
    result: impl Serialize,
    files: Vec<(String, String)>,
    failure: Option<String>,
) -> Done {
    let report = render(name, &r.config, result);
    (Outcome { name, report, files, failure }, r.config.out.clone())
}

pub fn gen(args: &GenArgs) -> Result<Done, CliError> {
    let mut r = Resolved::new(&args.common, Mode::Gen)?;
    let mut spec =
        r.config.gen.clone().unwrap_or(GenSpec { m: None, p: 0, n: 0, mean: 0.0, variance: 2.0, identity: false });
    spec.m = args.m.or(spec.m);
    spec.p = args.p.unwrap_or(spec.p);
    spec.n = args.n.unwrap_or(spec.n);
    spec.mean = args.mean.unwrap_or(spec.mean);
    spec.variance = args.variance.unwrap_or(spec.variance);
    spec.identity |= args.identity;
    let m = match (spec.m, &r.config.graph) {
        (Some(m), _) => m,
        (None, Some(_)) => r.graph()?.node_count(),
        (None, None) => return Err(CliError::Precondition("gen needs --m or a graph".into())),
    };
    spec.m = Some(m);
    if r.config.out.is_none() {
        return Err(CliError::Precondition("gen needs --out".into()));
    }
    let g = generate_system(&spec, m, r.config.seed)?;
    r.config.gen = Some(spec);

    #[derive(Serialize)]
    struct GenResult {
        equations: usize,
        variables: usize,
        row_counts: Vec<usize>,
        attempt: u64,
        files: [&'static str; 3],
    }
    let files = vec![
        ("A.csv".to_string(), matrix_to_csv(&g.system.a)),
        ("b.csv".to_string(), vector_to_csv(&g.system.b)),
        ("partition.json".to_string(), serde_json::to_string_pretty(&g.partition).expect("serializes") + "\n"),
    ];
    let result = GenResult {
        equations: g.system.equations(),
        variables: g.system.variables(),
        row_counts: g.partition.row_counts.clone(),
        attempt: g.attempt,
        files: ["A.csv", "b.csv", "partition.json"],
    };
    Ok(finish("gen", &r, result, files, None))
}

#[derive(Serialize)]
struct NodeAverage {
    node: NodeId,
    average: Vec<f64>,
}

#[derive(Serialize)]
struct ConsensusResult {
    agree: bool,
    /// Every node's aggregate matches the sum of quantized inputs.
    exact: bool,
    expected_average: Vec<f64>,
    outputs: Vec<NodeAverage>,
    rounds: RoundCount,
    cost: CostReport,
    trace: Option<String>,
}

pub fn consensus(args: &ConsensusArgs) -> Result<Done, CliError> {
    let mut r = Resolved::new(&args.common, Mode::Consensus)?;
    if let Some(path) = &args.inputs {
        r.config.inputs = Some(crate::config::InputSpec::File { path: crate::config::absolute(path)? });
    }
    by_backend!(r.config.backend, consensus_with(r))
}

fn consensus_with<S: ModScalar>(mut r: Resolved) -> Result<Done, CliError> {
    let graph = r.graph()?;
    let m = graph.node_count();
    let inputs = r.inputs(m)?;
    let a = r.config.a.ok_or_else(|| CliError::Precondition("consensus needs the range bound a".into()))?;
    let config = run_config::<S>(&mut r, graph, a)?;
    let run = run_titan(&config, &inputs)?;
    let ctx = config.ctx();
    let d = run.inputs.first().map_or(0, Vec::len);

    let expected: Vec<_> = (0..d).map(|c| ctx.sum(run.inputs.iter().map(|x| x[c]))).collect();
    let agree = run.agreed_output().is_ok();
    let exact = run.outputs.iter().all(|o| {
        o.aggregate
            .iter()
            .zip(&expected)
            .all(|(got, want)| ctx.circular_distance(got.value(), want.value()) <= ctx.tolerance())
    });
    let mf = config.node_count() as f64;
    let files: Vec<_> = trace_file(&r, &run.trace)?.into_iter().collect();
    let result = ConsensusResult {
        agree,
        exact,
        expected_average: expected.iter().map(|v| ctx.to_real(v.value()) / mf).collect(),
        outputs: run
            .outputs
            .iter()
            .zip(graph_ids(m))
            .map(|(o, node)| NodeAverage { node, average: o.average.clone() })
            .collect(),
        rounds: run.rounds,
        cost: cost_report(&run.trace)?,
        trace: files.first().map(|(name, _)| name.clone()),
    };
    let failure = match (agree, exact) {
        (false, _) => Some("nodes disagree on the output".to_string()),
        (true, false) => Some("output differs from the average of the inputs".to_string()),
        _ => None,
    };
    Ok(finish("consensus", &r, result, files, failure))
}

fn graph_ids(m: usize) -> impl Iterator<Item = NodeId> {
    (0..m).map(NodeId::from_index)
}

#[derive(Serialize)]
struct SolveResult {
    x: Vec<f64>,
    direct: Vec<f64>,
    relative_error: f64,
    tolerance: f64,
    offset: f64,
    range_bound: f64,
    /// Shift and range taken from the data rather than the config.
    derived_shift: bool,
    rounds: RoundCount,
    cost: CostReport,
    trace: Option<String>,
}

fn load_system(r: &Resolved, graph: &DirectedGraph) -> Result<(LinearSystem, Vec<usize>), CliError> {
    let spec =
        r.config.system.clone().ok_or_else(|| CliError::Precondition("solve needs a \"system\" section".into()))?;
    match spec {
        SystemSpec::Files { a, b, partition } => {
            let sys = LinearSystem::new(read_matrix(&r.path(&a))?, read_vector(&r.path(&b))?)?;
            Ok((sys, read_partition_spec(&r.path(&partition))?.row_counts))
        }
        SystemSpec::Generate(spec) => {
            let m = spec.m.unwrap_or(graph.node_count());
            let g = generate_system(&spec, m, r.config.seed)?;
            Ok((g.system, g.partition.row_counts))
        }
    }
}

pub fn solve(args: &CommonArgs) -> Result<Done, CliError> {
    let r = Resolved::new(args, Mode::Solve)?;
    by_backend!(r.config.backend, solve_with(r))
}

fn solve_with<S: ModScalar>(mut r: Resolved) -> Result<Done, CliError> {
    let graph = r.graph()?;
    let (sys, row_counts) = load_system(&r, &graph)?;
    sys.check_full_rank()?;
    let part = partition_system(&sys, &row_counts)?;
    let updates = part.local_updates();
    let derived_shift = r.config.offset.is_none() || r.config.a.is_none();
    let (c, a) = if derived_shift {
        let (c, a) = choose_shift_and_range(&updates)?;
        (r.config.offset.unwrap_or(c), r.config.a.unwrap_or(a))
    } else {
        (r.config.offset.unwrap_or_default(), r.config.a.unwrap_or_default())
    };
    validate_shift_and_range(&updates, c, a)?;
    r.config.offset = Some(c);

    let config = run_config::<S>(&mut r, graph, a)?;
    let sol = solve_private(&part, &config, c)?;
    let direct = direct_lssol(&sys)?;
    let err = relative_error(&sol.x, direct.as_slice());
    let files: Vec<_> = trace_file(&r, &sol.trace)?.into_iter().collect();
    let result = SolveResult {
        x: sol.x.clone(),
        direct: direct.iter().copied().collect(),
        relative_error: err,
        tolerance: SOLVE_TOLERANCE,
        offset: c,
        range_bound: a,
        derived_shift,
        rounds: sol.rounds,
        cost: cost_report(&sol.trace)?,
        trace: files.first().map(|(name, _)| name.clone()),
    };
    let failure = (err > SOLVE_TOLERANCE).then(|| format!("relative error {err:e} exceeds {SOLVE_TOLERANCE:e}"));
    Ok(finish("solve", &r, result, files, failure))
}

#[derive(Serialize)]
struct AuditResult {
    weak_vertex_connectivity: usize,
    tau: usize,
    /// Whether the graph is connected enough for privacy to hold.
    privacy_expected: bool,
    inputs: Vec<f64>,
    alternative: Vec<f64>,
    reports: Vec<AuditReport>,
    all_as_expected: bool,
}

pub fn audit(args: &AuditArgs) -> Result<Done, CliError> {
    let mut r = Resolved::new(&args.common, Mode::Audit)?;
    let mut spec = r.config.audit.clone().unwrap_or_default();
    spec.runs = args.runs.unwrap_or(spec.runs);
    spec.alpha = args.alpha.unwrap_or(spec.alpha);
    r.config.audit = Some(spec);
    by_backend!(r.config.backend, audit_with(r))
}

fn audit_with<S: ModScalar>(mut r: Resolved) -> Result<Done, CliError> {
    let graph = r.graph()?;
    let m = graph.node_count();
    let x: Vec<f64> = r
        .inputs(m)?
        .into_iter()
        .map(|row| match row.as_slice() {
            [v] => Ok(*v),
            _ => Err(CliError::Precondition("the audit takes one scalar input per node".into())),
        })
        .collect::<Result<_, _>>()?;
    let a = r.config.a.ok_or_else(|| CliError::Precondition("audit needs the range bound a".into()))?;
    let kappa = graph.weak_vertex_connectivity();
    let config = run_config::<S>(&mut r, graph, a)?;
    let corrupted: BTreeSet<NodeId> = config.corrupted().clone();
    if corrupted.is_empty() {
        return Err(CliError::Precondition("the audit needs at least one corrupted node (--corrupted)".into()));
    }
    let honest = honest_nodes(config.graph(), &corrupted);
    let mut spec: AuditSpec = r.config.audit.clone().unwrap_or_default();
    let pick = |given: Option<u32>, fallback: usize| -> Result<NodeId, CliError> {
        match given {
            Some(id) => NodeId::new(id).ok_or_else(|| CliError::Precondition("node ids start at 1".into())),
            None => honest
                .get(fallback)
                .copied()
                .ok_or_else(|| CliError::Precondition("the audit needs two honest nodes".into())),
        }
    };
    let params = *config.ctx().params();
    let x2 = match &spec.alternative {
        Some(alt) => alt.clone(),
        None => {
            let (donor, recipient) = (pick(spec.donor, 0)?, pick(spec.recipient, 1)?);
            let (xd, xr) = (x[donor.index()], x.get(recipient.index()).copied().unwrap_or(0.0));
            let delta = *spec.delta.get_or_insert(xd.min(a - xr).max(0.0) / 2.0);
            spec.donor = Some(donor.get());
            spec.recipient = Some(recipient.get());
            make_equivalent_inputs::<S>(&x, a, &params, &corrupted, delta, donor, recipient)?
        }
    };
    let privacy_expected = kappa > config.tau();
    let mut main = view_indistinguishability_test(&config, &x, &x2, spec.runs, spec.alpha)?;
    if !privacy_expected {
        main = main.as_negative_control();
    }
    let mut reports = vec![main];
    if spec.controls {
        let target = pick(spec.recipient, 1)?;
        let gap = a - x2[target.index()];
        let shift = if gap > 1.0 { 1.0 } else { gap / 2.0 };
        let mut x3 = x2.clone();
        x3[target.index()] += shift;
        let mut control =
            view_indistinguishability_test(&config, &x, &x3, spec.runs, spec.alpha)?.as_negative_control();
        control.test = "differing-sums-control".into();
        reports.push(control);
    }
    r.config.audit = Some(spec);

    for rep in &reports {
        eprintln!(
            "{:<28} expect {:<18} p = {:<12.4e} alpha = {:<6} {}",
            rep.test,
            format!("{:?}", rep.expectation).to_lowercase(),
            rep.p_value,
            rep.threshold,
            if rep.pass { "PASS" } else { "FAIL" }
        );
    }
    let all = reports.iter().all(|rep| rep.pass);
    let result = AuditResult {
        weak_vertex_connectivity: kappa,
        tau: config.tau(),
        privacy_expected,
        inputs: x,
        alternative: x2,
        reports,
        all_as_expected: all,
    };
    let failure = (!all).then(|| "an audit did not match its expectation".to_string());
    Ok(finish("audit", &r, result, Vec::new(), failure))
}

#[derive(Serialize)]
struct EstimateResult {
    bound: usize,
    estimate: usize,
    node_count: usize,
    matches: bool,
    rounds: RoundCount,
}

pub fn estimate_m(args: &EstimateArgs) -> Result<Done, CliError> {
    let mut r = Resolved::new(&args.common, Mode::EstimateM)?;
    if args.bound.is_some() {
        r.config.node_count_bound = args.bound;
    }
    by_backend!(r.config.backend, estimate_with(r))
}

fn estimate_with<S: ModScalar>(mut r: Resolved) -> Result<Done, CliError> {
    let graph = r.graph()?;
    let m = graph.node_count();
    let c = &mut r.config;
    let bound = c.node_count_bound.ok_or_else(|| CliError::Precondition("estimate-m needs --bound".into()))?;
    let t = *c.rounds_per_sweep.get_or_insert(bound);
    let k = *c.k.get_or_insert(bound);
    if k == 0 {
        return Err(CliError::Precondition("k must be positive".into()));
    }
    let estimate = estimate_node_count::<S>(&graph, bound, t, k, c.seed, S::default_params())?;
    let recovery = t * bound.div_ceil(k);
    let result = EstimateResult {
        bound,
        estimate,
        node_count: m,
        matches: estimate == m,
        rounds: RoundCount { total: 1 + recovery, recovery },
    };
    let failure = (estimate != m).then(|| format!("estimated {estimate} nodes, the graph has {m}"));
    Ok(finish("estimate-m", &r, result, Vec::new(), failure))
}

#[derive(Serialize)]
struct GraphInfo {
    node_count: usize,
    edge_count: usize,
    strongly_connected: bool,
    diameter: Option<usize>,
    weak_vertex_connectivity: usize,
}

pub fn graph_info(args: &CommonArgs) -> Result<Done, CliError> {
    let r = Resolved::new(args, Mode::GraphInfo)?;
    let g = r.graph()?;
    let info = GraphInfo {
        node_count: g.node_count(),
        edge_count: g.edges().len(),
        strongly_connected: g.is_strongly_connected(),
        diameter: g.diameter().ok(),
        weak_vertex_connectivity: g.weak_vertex_connectivity(),
    };
    Ok(finish("graph-info", &r, info, Vec::new(), None))
}
