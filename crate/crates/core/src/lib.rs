//! Private finite-time average consensus over directed graphs (TITAN), a
//! private least-squares solver built on it, and a statistical audit of the
//! privacy claims.
//!
//! The numeric core is generic over [`ModScalar`]. [`Fixed`] is the exact
//! backend used by default; `f32`/`f64` trade exactness for speed. The
//! aliases below fix the backend for common use.
//!
//! ```
//! use titan::{generate_graph, run_titan, ExactRunConfig, GraphKind};
//!
//! # fn main() -> titan::Result<()> {
//! let graph = generate_graph(GraphKind::Ring, 3, 0)?;
//! let config = ExactRunConfig::new(graph, 2, 1, 4.0, Default::default())?.with_seed(7);
//! let run = run_titan(&config, &[vec![1.0], vec![2.0], vec![3.0]])?;
//! assert_eq!(run.agreed_output()?.average, vec![2.0]);
//! # Ok(())
//! # }
//! ```

pub mod audit;
pub mod error;
pub mod graph;
pub mod modreal;
pub mod protocol;
pub mod simnet;
pub mod solver;

pub use error::{Error, Result};
pub use graph::{generate_graph, parse_graph, DirectedGraph, GraphKind, IncidenceMatrix, NodeId};
pub use modreal::{Backend, Fixed, ModScalar, ModValue, ModulusContext, Scale, Tolerance};
pub use protocol::{estimate_node_count, run_titan, run_topk, topk_merge, TitanOutput, TitanRun};
pub use simnet::{cost_report, run_protocol, seed_node_rng, AdversaryView, CostReport, RoundTrace, RunConfig};

pub type ExactContext = ModulusContext<Fixed>;
pub type FloatContext = ModulusContext<f64>;
pub type ExactRunConfig = RunConfig<Fixed>;
pub type FloatRunConfig = RunConfig<f64>;
pub type ExactTitanRun = protocol::TitanRun<Fixed>;
pub type FloatTitanRun = protocol::TitanRun<f64>;
pub type ExactSolution = solver::PrivateSolution<Fixed>;
