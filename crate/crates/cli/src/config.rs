//! JSON experiment configuration and flag overrides.
//!
//! Relative paths inside a config file are resolved against the file's
//! directory. Paths given as flags are resolved against the working
//! directory before they are merged in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use titan::{generate_graph, parse_graph, DirectedGraph, GraphKind, NodeId};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Gen,
    Consensus,
    Solve,
    Audit,
    EstimateM,
    GraphInfo,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    #[default]
    Exact,
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring {
        m: usize,
    },
    RingWithChords {
        m: usize,
        chords: usize,
        #[serde(default)]
        seed: u64,
    },
    Complete {
        m: usize,
    },
    Star {
        m: usize,
    },
    /// Edge-list text embedded in the config.
    Inline {
        text: String,
    },
    File {
        path: PathBuf,
    },
}

impl GraphSpec {
    pub fn build(&self, base: &Path) -> Result<DirectedGraph, CliError> {
        Ok(match self {
            GraphSpec::Ring { m } => generate_graph(GraphKind::Ring, *m, 0)?,
            GraphSpec::RingWithChords { m, chords, seed } => {
                generate_graph(GraphKind::RingWithChords(*chords), *m, *seed)?
            }
            GraphSpec::Complete { m } => generate_graph(GraphKind::Complete, *m, 0)?,
            GraphSpec::Star { m } => generate_graph(GraphKind::Star, *m, 0)?,
            GraphSpec::Inline { text } => parse_graph(text)?,
            GraphSpec::File { path } => {
                let path = base.join(path);
                let text =
                    std::fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                parse_graph(&text)?
            }
        })
    }
}

/// Per-node inputs: one scalar each, one vector each, or a CSV file with
/// one row per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Scalars(Vec<f64>),
    Vectors(Vec<Vec<f64>>),
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    Files { a: PathBuf, b: PathBuf, partition: PathBuf },
    Generate(GenSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    /// Defaults to the graph's node count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub p: usize,
    pub n: usize,
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "default_variance")]
    pub variance: f64,
    #[serde(default)]
    pub identity: bool,
}

fn default_variance() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Second input set. Derived from `inputs` by moving `delta` from
    /// `donor` to `recipient` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<u32>,
    /// Also run the differing-sums negative control.
    #[serde(default = "yes")]
    pub controls: bool,
}

fn default_runs() -> usize {
    titan::audit::DEFAULT_RUNS
}

fn default_alpha() -> f64 {
    titan::audit::DEFAULT_ALPHA
}

fn yes() -> bool {
    true
}

impl Default for AuditSpec {
    fn default() -> Self {
        AuditSpec {
            runs: default_runs(),
            alpha: default_alpha(),
            alternative: None,
            delta: None,
            donor: None,
            recipient: None,
            controls: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub rounds_per_sweep: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub corrupted: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    #[serde(default)]
    pub backend: BackendChoice,
    /// Upper bound on the node count, for `estimate-m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_count_bound: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenSpec>,
    /// Output directory. Not embedded in reports, so the same experiment
    /// written to two places yields identical bytes.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub trace: bool,
}

impl ExperimentConfig {
    /// Reads a config file and returns it with the directory its relative
    /// paths refer to.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: line {}: {e}", path.display(), e.line())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    pub fn corrupted_ids(&self) -> Result<Vec<NodeId>, CliError> {
        self.corrupted
            .iter()
            .map(|&c| NodeId::new(c).ok_or_else(|| CliError::Precondition("node ids start at 1".into())))
            .collect()
    }
}

/// Parses `"1,3"` into ids; the empty string means none.
pub fn parse_id_list(s: &str) -> Result<Vec<u32>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u32>().map_err(|_| format!("not a node id: {t:?}")))
        .collect()
}

/// Resolves `path` against the working directory.
pub fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"graph": {"kind": "ring", "m": 5}, "T": 4}"#).unwrap();
        assert_eq!(c.graph, Some(GraphSpec::Ring { m: 5 }));
        assert_eq!(c.rounds_per_sweep, Some(4));
        assert_eq!(c.backend, BackendChoice::Exact);
        assert!(c.corrupted.is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"grpah": {}}"#).is_err());
    }

    #[test]
    fn inputs_accept_scalars_vectors_and_files() {
        let parse = |s: &str| serde_json::from_str::<InputSpec>(s).unwrap();
        assert_eq!(parse("[1, 2.5]"), InputSpec::Scalars(vec![1.0, 2.5]));
        assert_eq!(parse("[[1], [2]]"), InputSpec::Vectors(vec![vec![1.0], vec![2.0]]));
        assert_eq!(parse(r#"{"path": "x.csv"}"#), InputSpec::File { path: "x.csv".into() });
    }

    #[test]
    fn system_spec_round_trips() {
        let s = SystemSpec::Generate(GenSpec { m: None, p: 15, n: 5, mean: 0.0, variance: 2.0, identity: false });
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains(r#""source":"generate""#));
        assert_eq!(serde_json::from_str::<SystemSpec>(&text).unwrap(), s);
    }

    #[test]
    fn id_lists() {
        assert_eq!(parse_id_list("1,3").unwrap(), vec![1, 3]);
        assert_eq!(parse_id_list(" 2 , 4 ").unwrap(), vec![2, 4]);
        assert!(parse_id_list("").unwrap().is_empty());
        assert!(parse_id_list("x").is_err());
    }

    #[test]
    fn inline_graph_builds() {
        let spec = GraphSpec::Inline { text: "3\n1 2\n2 3\n3 1\n".into() };
        let g = spec.build(Path::new(".")).unwrap();
        assert_eq!(g.node_count(), 3);
        assert!(g.is_strongly_connected());
    }
}
