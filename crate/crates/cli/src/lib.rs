//! Library side of the `titan` binary: argument definitions, config
//! resolution and the subcommands. `main.rs` only maps the outcome to an
//! exit code.

pub mod commands;
pub mod config;
pub mod gen;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{absolute, parse_id_list, BackendChoice, ExperimentConfig, GraphSpec, InputSpec, Mode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Precondition(_) => 1,
            CliError::Mismatch(_) => 2,
            CliError::Input(_) => 3,
        }
    }
}

impl From<titan::Error> for CliError {
    fn from(e: titan::Error) -> Self {
        use titan::Error as E;
        match e {
            E::Parse { .. } | E::Io(_) => CliError::Input(e.to_string()),
            E::Protocol(_) => CliError::Mismatch(e.to_string()),
            _ => CliError::Precondition(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "titan", version, about = "Private average consensus, private least squares and privacy audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian linear system split evenly over m nodes.
    Gen(GenArgs),
    /// Run private average consensus on per-node inputs.
    Consensus(ConsensusArgs),
    /// Solve a partitioned least-squares problem privately.
    Solve(CommonArgs),
    /// Statistical check that the adversary's view hides honest inputs.
    Audit(AuditArgs),
    /// Recover the exact node count from an upper bound.
    EstimateM(EstimateArgs),
    /// Connectivity, diameter and weak vertex-connectivity of a graph.
    GraphInfo(CommonArgs),
}

#[derive(Debug, Clone)]
pub struct IdList(pub Vec<u32>);

fn id_list(s: &str) -> Result<IdList, String> {
    parse_id_list(s).map(IdList)
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Edge-list file: node count on the first line, then "i j" per edge.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Rounds per top-k sweep.
    #[arg(long = "T")]
    pub rounds_per_sweep: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Public bound on every input entry.
    #[arg(long)]
    pub a: Option<f64>,
    /// Public shift added to every solver entry.
    #[arg(long)]
    pub offset: Option<f64>,
    /// Comma-separated corrupted node ids, e.g. "1,3".
    #[arg(long, value_parser = id_list)]
    pub corrupted: Option<IdList>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Write the message trace as CSV next to the report (needs --out).
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub mean: Option<f64>,
    #[arg(long)]
    pub variance: Option<f64>,
    /// A = I; needs p = n.
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConsensusArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with one row of inputs per node.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Monte Carlo runs per input set.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Upper bound on the node count known to every node.
    #[arg(long)]
    pub bound: Option<usize>,
}

/// A config with flags merged in, plus the directory its relative paths
/// refer to.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub base: PathBuf,
}

impl Resolved {
    pub fn new(args: &CommonArgs, mode: Mode) -> Result<Self, CliError> {
        let (mut config, base) = match &args.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => (ExperimentConfig::default(), PathBuf::from(".")),
        };
        if let Some(declared) = config.mode {
            if declared != mode {
                return Err(CliError::Precondition(format!("config is for {declared:?}, not {mode:?}")));
            }
        }
        config.mode = Some(mode);
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(path) = &args.graph {
            config.graph = Some(GraphSpec::File { path: absolute(path)? });
        }
        macro_rules! take {
            ($($field:ident <- $flag:ident),*) => {
                $(if args.$flag.is_some() { config.$field = args.$flag; })*
            };
        }
        take!(rounds_per_sweep <- rounds_per_sweep, k <- k, a <- a, offset <- offset, tau <- tau);
        if let Some(IdList(ids)) = &args.corrupted {
            config.corrupted = ids.clone();
        }
        if let Some(b) = args.backend {
            config.backend = b;
        }
        if let Some(out) = &args.out {
            config.out = Some(out.clone());
        }
        config.trace |= args.trace;
        Ok(Resolved { config, base })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn graph(&self) -> Result<titan::DirectedGraph, CliError> {
        self.config
            .graph
            .as_ref()
            .ok_or_else(|| CliError::Precondition("no graph given (config \"graph\" or --graph)".into()))?
            .build(&self.base)
    }

    /// One input vector per node.
    pub fn inputs(&self, m: usize) -> Result<Vec<Vec<f64>>, CliError> {
        let spec = self
            .config
            .inputs
            .as_ref()
            .ok_or_else(|| CliError::Precondition("no inputs given (config \"inputs\" or --inputs)".into()))?;
        let rows: Vec<Vec<f64>> = match spec {
            InputSpec::Scalars(v) => v.iter().map(|&x| vec![x]).collect(),
            InputSpec::Vectors(v) => v.clone(),
            InputSpec::File { path } => {
                let matrix = titan::solver::io::read_matrix(&self.path(path))?;
                matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
            }
        };
        if rows.len() != m {
            return Err(CliError::Precondition(format!("{} input rows for {m} nodes", rows.len())));
        }
        Ok(rows)
    }
}

/// A finished command: the JSON report, side files, and whether the
/// result verified.
#[derive(Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub report: String,
    pub files: Vec<(String, String)>,
    pub failure: Option<String>,
}

#[derive(Serialize)]
struct Meta {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
}

#[derive(Serialize)]
struct Report<'a, R: Serialize> {
    meta: Meta,
    config: &'a ExperimentConfig,
    result: R,
}

pub(crate) fn render<R: Serialize>(name: &'static str, config: &ExperimentConfig, result: R) -> String {
    let report =
        Report { meta: Meta { tool: "titan", version: env!("CARGO_PKG_VERSION"), command: name }, config, result };
    let mut text = serde_json::to_string_pretty(&report).expect("reports serialize");
    text.push('\n');
    text
}

/// Runs a command and writes its report (and side files) to the output
/// directory, if one is set.
pub fn execute(cli: Cli) -> Result<Outcome, CliError> {
    let (outcome, out) = match cli.command {
        Command::Gen(args) => commands::gen(&args)?,
        Command::Consensus(args) => commands::consensus(&args)?,
        Command::Solve(args) => commands::solve(&args)?,
        Command::Audit(args) => commands::audit(&args)?,
        Command::EstimateM(args) => commands::estimate_m(&args)?,
        Command::GraphInfo(args) => commands::graph_info(&args)?,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        let report = (format!("{}.json", outcome.name), outcome.report.clone());
        for (name, contents) in outcome.files.iter().chain(std::iter::once(&report)) {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(outcome)
}
