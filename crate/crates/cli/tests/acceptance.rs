//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 1 3`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use titan::audit::{make_equivalent_inputs, view_indistinguishability_test};
use titan::protocol::run_titan_quantized;
use titan::{
    cost_report, estimate_node_count, generate_graph, run_titan, run_topk, DirectedGraph, ExactRunConfig, Fixed,
    FloatRunConfig, GraphKind, ModScalar, NodeId, RoundTrace, Scale,
};

type Criterion = (u32, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Verdict {
    verdict(false, detail)
}

/// A strongly connected digraph: random edges at a random density,
/// redrawn until strongly connected, else a relabelled ring with chords.
fn random_strong_graph(rng: &mut ChaCha8Rng, m: usize) -> DirectedGraph {
    if m >= 2 {
        let density = rng.gen_range(0.15..0.7);
        for _ in 0..50 {
            let edges: Vec<(u32, u32)> = (1..=m as u32)
                .flat_map(|i| (1..=m as u32).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j)
                .filter(|_| rng.gen_bool(density))
                .collect();
            let g = DirectedGraph::new(m, edges).unwrap();
            if g.is_strongly_connected() {
                return g;
            }
        }
    }
    let chords = rng.gen_range(0..=m).min((m * m.saturating_sub(1)).saturating_sub(m));
    let base = generate_graph(GraphKind::RingWithChords(chords), m, rng.gen()).unwrap();
    let mut perm: Vec<u32> = (1..=m as u32).collect();
    perm.shuffle(rng);
    DirectedGraph::new(m, base.edges().iter().map(|&(a, b)| (perm[a.index()], perm[b.index()]))).unwrap()
}

/// Number of top-k rounds actually executed, read off the trace.
fn measured_recovery_rounds(trace: &RoundTrace) -> usize {
    trace.records.iter().filter(|r| r.payload_kind == "topk-lists").map(|r| r.round).max().unwrap_or(0)
}

struct ExactInstance {
    m: usize,
    k: usize,
    t: usize,
    exact: bool,
    recovery: usize,
    measured: usize,
}

fn criterion_one_instances() -> Vec<ExactInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let scale = Scale::default();
    (0..200)
        .map(|_| {
            let m = rng.gen_range(2..=30);
            let g = random_strong_graph(&mut rng, m);
            let t = g.diameter().unwrap();
            let k = rng.gen_range(1..=m);
            let d = rng.gen_range(1..=3);
            let a = rng.gen_range(1.0..1000.0);
            let inputs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.gen_range(0.0..a)).collect()).collect();
            let config = ExactRunConfig::new(g, t, k, a, scale).unwrap().with_seed(rng.gen());
            let run = run_titan(&config, &inputs).unwrap();
            let ctx = config.ctx();
            let exact = (0..d).all(|c| {
                let want = ctx.sum(run.inputs.iter().map(|x| x[c]));
                let avg = ctx.to_real(want.value()) / m as f64;
                run.outputs.iter().all(|o| o.aggregate[c] == want && o.average[c] == avg)
            });
            ExactInstance {
                m,
                k,
                t,
                exact,
                recovery: run.rounds.recovery,
                measured: measured_recovery_rounds(&run.trace),
            }
        })
        .collect()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let runs = criterion_one_instances();
    let elapsed = start.elapsed();
    let wrong = runs.iter().filter(|r| !r.exact).count();
    verdict(
        wrong == 0 && elapsed < Duration::from_secs(30),
        format!("{} graphs, {wrong} inexact, {:.1}s (limit 30s)", runs.len(), elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Verdict {
    let runs = criterion_one_instances();
    let off = runs
        .iter()
        .filter(|r| {
            let want = r.t * r.m.div_ceil(r.k);
            r.recovery != want || r.measured != want
        })
        .count();

    let start = Instant::now();
    let g = generate_graph(GraphKind::Ring, 100, 0).unwrap();
    let config = ExactRunConfig::new(g, 100, 10, 100.0, Scale::default()).unwrap().with_seed(7);
    let inputs: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 * 0.5]).collect();
    let run = run_titan(&config, &inputs).unwrap();
    let elapsed = start.elapsed();
    let large = measured_recovery_rounds(&run.trace);
    let ok = off == 0 && run.rounds.recovery == 1000 && large == 1000 && elapsed < Duration::from_secs(60);
    verdict(
        ok,
        format!(
            "{off} of {} small runs off T*ceil(m/k); m=100 ring: {large} recovery rounds, {:.1}s (limit 60s)",
            runs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// `(value, id)` pairs sorted by value then id, both descending, cut to
/// `k` and padded with empty slots.
fn sort_oracle(values: &[Fixed], k: usize) -> Vec<Option<(Fixed, NodeId)>> {
    let mut all: Vec<(Fixed, NodeId)> = values.iter().enumerate().map(|(i, &v)| (v, NodeId::from_index(i))).collect();
    all.sort_by(|a, b| b.cmp(a));
    let mut top: Vec<_> = all.into_iter().take(k).map(Some).collect();
    top.resize(k, None);
    top
}

fn topk_agrees(g: &DirectedGraph, t: usize, k: usize, values: &[Fixed]) -> bool {
    let m = g.node_count();
    let lists = run_topk(g, t, k, values, &vec![BTreeSet::new(); m]).unwrap();
    let want = sort_oracle(values, k);
    lists.iter().all(|l| {
        let got: Vec<_> = l.values.iter().zip(&l.ids).map(|(v, i)| v.zip(*i)).collect();
        got == want
    })
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut agreed = 0;
    for _ in 0..500 {
        let m = rng.gen_range(1..=12);
        let g = random_strong_graph(&mut rng, m);
        let t = g.diameter().unwrap().max(1);
        let k = rng.gen_range(1..=m);
        // a small value range forces ties
        let values: Vec<Fixed> = (0..m).map(|_| Fixed::from_ticks(rng.gen_range(0..6))).collect();
        agreed += usize::from(topk_agrees(&g, t, k, &values));
    }
    let mut control_disagreements = 0;
    for _ in 0..100 {
        let m = rng.gen_range(4..=12);
        let g = generate_graph(GraphKind::Ring, m, 0).unwrap();
        let k = rng.gen_range(1..=m);
        let values: Vec<Fixed> = (0..m).map(|_| Fixed::from_ticks(rng.gen_range(0..1000))).collect();
        control_disagreements += usize::from(!topk_agrees(&g, m - 2, k, &values));
    }
    verdict(
        agreed == 500 && control_disagreements >= 1,
        format!("{agreed}/500 agree with the sort oracle; T = diameter - 1 control disagrees in {control_disagreements}/100"),
    )
}

fn perturbation_sum<S: ModScalar>(run: &titan::TitanRun<S>, ctx: &titan::modreal::ModulusContext<S>) -> f64 {
    let sum = ctx.sum(run.nodes.iter().map(|n| n.perturbation_values().expect("completed")[0]));
    ctx.circular_distance(sum.value(), S::zero())
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let (mut exact_bad, mut float_worst) = (0, 0.0f64);
    for _ in 0..1000 {
        let m = rng.gen_range(2..=12);
        let g = random_strong_graph(&mut rng, m);
        let t = g.diameter().unwrap();
        let a = rng.gen_range(0.5..500.0);
        let seed = rng.gen();
        let inputs: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(0.0..a)]).collect();

        let config = ExactRunConfig::new(g.clone(), t, m, a, Scale::default()).unwrap().with_seed(seed);
        let run = run_titan(&config, &inputs).unwrap();
        exact_bad += usize::from(perturbation_sum(&run, config.ctx()) != 0.0);

        let config = FloatRunConfig::new(g, t, m, a, Default::default()).unwrap().with_seed(seed);
        let run = run_titan(&config, &inputs).unwrap();
        float_worst = float_worst.max(perturbation_sum(&run, config.ctx()) / config.ctx().modulus_real());
    }
    verdict(
        exact_bad == 0 && float_worst <= 1e-9,
        format!(
            "exact: {exact_bad}/1000 nonzero sums; float: worst |sum t| = {float_worst:.2e} x modulus (limit 1e-9)"
        ),
    )
}

fn titan_bin() -> &'static str {
    env!("CARGO_BIN_EXE_titan")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

struct CliRun {
    code: i32,
    stdout: Vec<u8>,
    report: Value,
}

fn cli(args: &[&str], out: Option<&Path>) -> CliRun {
    let mut cmd = Command::new(titan_bin());
    cmd.args(args);
    if let Some(out) = out {
        cmd.arg("--out").arg(out);
    }
    let output = cmd.output().expect("binary runs");
    let report = serde_json::from_slice(&output.stdout).unwrap_or(Value::Null);
    CliRun { code: output.status.code().unwrap_or(-1), stdout: output.stdout, report }
}

fn solve_check(config: &str, rounds: u64, limit: Duration) -> (bool, String) {
    let start = Instant::now();
    let path = configs().join(config);
    let run = cli(&["solve", "--config", path.to_str().unwrap()], None);
    let elapsed = start.elapsed();
    let r = &run.report["result"];
    let err = r["relative_error"].as_f64().unwrap_or(f64::INFINITY);
    let got = r["rounds"]["recovery"].as_u64().unwrap_or(0);
    let ok = run.code == 0 && err <= 1e-6 && got == rounds && elapsed < limit;
    (ok, format!("{config}: rel err {err:.2e}, {got} recovery rounds, {:.1}s", elapsed.as_secs_f64()))
}

fn criterion_5() -> Verdict {
    let (a_ok, a) = solve_check("small-solve.json", 5, Duration::from_secs(60));
    let (b_ok, b) = solve_check("large-solve.json", 1000, Duration::from_secs(600));
    verdict(a_ok && b_ok, format!("(a) {a}; (b) {b}"))
}

fn ring5_config(seed: u64) -> ExactRunConfig {
    let g = generate_graph(GraphKind::Ring, 5, 0).unwrap();
    ExactRunConfig::new(g, 4, 5, 8.0, Scale::default())
        .unwrap()
        .with_seed(seed)
        .with_corrupted([NodeId::new(1).unwrap()])
        .unwrap()
}

const AUDIT_X: [f64; 5] = [1.0, 2.5, 3.0, 4.25, 5.0];

fn equivalent(x: &[f64], corrupted: &BTreeSet<NodeId>) -> Vec<f64> {
    let id = |i| NodeId::new(i).unwrap();
    make_equivalent_inputs::<Fixed>(x, 8.0, &Scale::default(), corrupted, 1.0, id(2), id(4)).unwrap()
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let config = ring5_config(0xC6);
    let x2 = equivalent(&AUDIT_X, config.corrupted());
    let report = view_indistinguishability_test(&config, &AUDIT_X, &x2, 1000, 0.01).unwrap();
    let elapsed = start.elapsed();
    verdict(
        report.pass && elapsed < Duration::from_secs(120),
        format!(
            "{} coordinates, corrected p = {:.3} (alpha 0.01), {:.1}s (limit 120s)",
            report.coordinates,
            report.p_value,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Verdict {
    let config = ring5_config(0xC7);
    let mut shifted = AUDIT_X;
    shifted[3] += 1.0;
    let sums = view_indistinguishability_test(&config, &AUDIT_X, &shifted, 1000, 0.01).unwrap().as_negative_control();

    let star = generate_graph(GraphKind::Star, 5, 0).unwrap();
    let kappa = star.weak_vertex_connectivity();
    let config = ExactRunConfig::new(star, 2, 5, 8.0, Scale::default())
        .unwrap()
        .with_seed(0xC7)
        .with_corrupted([NodeId::new(1).unwrap()])
        .unwrap();
    let x2 = equivalent(&AUDIT_X, config.corrupted());
    let leak = view_indistinguishability_test(&config, &AUDIT_X, &x2, 1000, 0.01).unwrap().as_negative_control();
    verdict(
        sums.pass && leak.pass && kappa == 1,
        format!(
            "(a) differing sums p = {:.1e} via {}; (b) star, kappa = {kappa}: p = {:.1e} via {}",
            sums.p_value,
            sums.worst_coordinate.unwrap_or_default(),
            leak.p_value,
            leak.worst_coordinate.unwrap_or_default()
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let mut wrong = Vec::new();
    for _ in 0..50 {
        let m = rng.gen_range(1..=50);
        let bound = rng.gen_range(m..=2 * m + 5);
        let g = random_strong_graph(&mut rng, m);
        let k = rng.gen_range(1..=bound);
        let est = estimate_node_count::<Fixed>(&g, bound, bound, k, rng.gen(), Scale::default()).unwrap();
        if est != m {
            wrong.push((m, bound, est));
        }
    }
    verdict(wrong.is_empty(), format!("50 (m, bound) pairs, mismatches: {wrong:?}"))
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC9);
    let mut bad = 0;
    for _ in 0..20 {
        let m = rng.gen_range(2..=15);
        let g = random_strong_graph(&mut rng, m);
        let t = g.diameter().unwrap();
        let k = rng.gen_range(1..=m);
        let d = rng.gen_range(1..=4);
        let inputs: Vec<Vec<Fixed>> =
            (0..m).map(|_| (0..d).map(|_| Fixed::from_ticks(rng.gen_range(0..1 << 20))).collect()).collect();
        let config = ExactRunConfig::new(g.clone(), t, k, 1.0, Scale::default()).unwrap().with_seed(rng.gen());
        let run = run_titan_quantized(&config, inputs).unwrap();
        let cost = cost_report(&run.trace).unwrap();
        let sweeps = m.div_ceil(k);
        for id in g.nodes() {
            let out = g.out_neighbors(id).unwrap().len();
            let units = out * (2 * k * t * sweeps + 1) * d;
            if cost.message_units[id.index()] != units || cost.peak_memory_units[id.index()] != (2 * k + m) * d {
                bad += 1;
            }
        }
    }

    // k = 1 against k = m on one ring: rounds T*m vs T, memory (2+m)d vs 3md
    let (m, d) = (8, 2);
    let g = generate_graph(GraphKind::Ring, m, 0).unwrap();
    let t = m - 1;
    let inputs = vec![vec![Fixed::from_ticks(5); d]; m];
    let run_k = |k| {
        let config = ExactRunConfig::new(g.clone(), t, k, 1.0, Scale::default()).unwrap();
        let run = run_titan_quantized(&config, inputs.clone()).unwrap();
        (run.rounds.recovery, cost_report(&run.trace).unwrap().peak_memory_units[0])
    };
    let (slow, fast) = (run_k(1), run_k(m));
    let tradeoff = slow == (t * m, (2 + m) * d) && fast == (t, 3 * m * d);
    verdict(
        bad == 0 && tradeoff,
        format!("{bad} node-level mismatches over 20 configs; k=1 (rounds, memory) = {slow:?}, k=m = {fast:?}"),
    )
}

fn criterion_10() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = |name: &str| configs().join(name).to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "gen",
            vec![
                "gen".into(),
                "--m".into(),
                "5".into(),
                "--p".into(),
                "15".into(),
                "--n".into(),
                "5".into(),
                "--seed".into(),
                "11".into(),
            ],
        ),
        ("consensus", vec!["consensus".into(), "--config".into(), cfg("consensus-ring3.json"), "--trace".into()]),
        ("solve", vec!["solve".into(), "--config".into(), cfg("small-solve.json"), "--trace".into()]),
        ("audit", vec!["audit".into(), "--config".into(), cfg("audit-ring5.json"), "--runs".into(), "500".into()]),
        ("estimate-m", vec!["estimate-m".into(), "--config".into(), cfg("estimate-m.json")]),
        ("graph-info", vec!["graph-info".into(), "--config".into(), cfg("ring100.json")]),
    ];
    let mut differing = Vec::new();
    for (name, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (o1, o2) = (dir.path().join(format!("{name}-1")), dir.path().join(format!("{name}-2")));
        let (r1, r2) = (cli(&args, Some(&o1)), cli(&args, Some(&o2)));
        let mut same = r1.code == 0 && r2.code == 0 && r1.stdout == r2.stdout && !r1.stdout.is_empty();
        for entry in std::fs::read_dir(&o1).unwrap() {
            let file = entry.unwrap().file_name();
            same &= std::fs::read(o1.join(&file)).ok() == std::fs::read(o2.join(&file)).ok();
        }
        if !same {
            differing.push(*name);
        }
    }
    verdict(
        differing.is_empty(),
        format!("{} commands run twice, reports/traces differing: {differing:?}", commands.len()),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "exact average recovery", criterion_1),
        (2, "round count", criterion_2),
        (3, "top-k oracle equivalence", criterion_3),
        (4, "aggregate invariance", criterion_4),
        (5, "solver correctness", criterion_5),
        (6, "privacy audit positive", criterion_6),
        (7, "privacy audit negative controls", criterion_7),
        (8, "node-count estimation", criterion_8),
        (9, "cost accounting", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut stdout = std::io::stdout();
    for (n, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = std::panic::catch_unwind(check).unwrap_or_else(|_| fail("panicked"));
        failed += usize::from(!v.pass);
        writeln!(
            stdout,
            "criterion {n:>2} {:<4} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        )
        .unwrap();
        stdout.flush().unwrap();
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
