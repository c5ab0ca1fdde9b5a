//! Simulation and analysis of momentum-accelerated decentralized stochastic
//! gradient tracking over time-varying directed graphs.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: directed graph sequences and their diameter / edge-utility.
//! - [`mixing`]: row-stochastic pull and column-stochastic push weights.
//! - [`flows`]: the `pi` and `phi` stochastic vector sequences.
//! - [`problems`]: local costs, datasets, stochastic gradient oracles.
//! - [`engine`]: the synchronous-round algorithms (DSGTm-TV, DSGT, DSGD).
//! - [`theory`]: convergence constants, the 4x4 composite system and
//!   admissible stepsize / momentum bounds.
//! - [`metrics`]: error components, identity residuals, loss and accuracy.
//! - [`harness`]: configuration, multi-seed runs and file output.

pub mod engine;
pub mod flows;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod mixing;
pub mod problems;
pub mod rng;
pub mod theory;

pub use engine::{Algorithm, AgentState, NetworkState, StepSchedule};
pub use flows::{flow_floor, phi_sequence, pi_sequence, StochasticFlow};
pub use graph::{
    generate_sequence, graph_stats, is_strongly_connected, union_graph, Digraph, DigraphSeq,
    GeneratorSpec, GraphStats, Topology,
};
pub use harness::{load_config, run_experiment, ExperimentConfig};
pub use metrics::{ErrorVector, RunRecord};
pub use mixing::{build_mixing, validate_mixing, MixingPair, WeightRule};
pub use problems::{Dataset, OracleConfig, OracleMode, Problem, ProblemKind};
pub use theory::{CompositeSystem, GlobalConstants, StepConstants};
