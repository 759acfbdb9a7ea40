//! Batch command-line surface over the flow-expansion library: simulate
//! ensembles, decompose covariances along both routes, run the spectral
//! identity checks, and benchmark the two decomposition paths.
//!
//! Runs are deterministic for fixed seeds regardless of `--threads`, and
//! every run leaves a `summary.json` behind (schema version
//! [`run::SCHEMA_VERSION`]).

pub mod bench;
pub mod cli;
pub mod run;

pub use cli::Cli;
pub use run::execute;
