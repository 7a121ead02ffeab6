//! Multi-objective evolutionary search over two-block CNN cell genotypes,
//! trading predicted classification error against analytically counted
//! FLOPs.
//!
//! Modules, bottom up: [`genotype`] (encoding, validation, decoding),
//! [`complexity`] (FLOPs and parameter counts), [`moea`] (non-dominated
//! sorting, crowding, selection, hypervolume), [`variation`] (crossover and
//! mutation), [`eda`] (Bayesian-network sampling and the `rho` schedule),
//! [`evaluation`] (surrogate and external trainer protocol), [`search`] (the
//! generational loop), [`rundir`] and [`analysis`] (artifacts and reports).

pub mod analysis;
pub mod complexity;
pub mod eda;
pub mod evaluation;
pub mod genotype;
pub mod moea;
pub mod rundir;
pub mod search;
pub mod variation;

pub use complexity::{network_cost, CostReport, MacroConfig};
pub use eda::{BlockBayesNet, RhoState};
pub use evaluation::{
    EvalRequest, EvalResult, EvalStatus, Evaluator, ExternalEvaluator, SurrogateSpec, SyntheticEvaluator,
};
pub use genotype::{ArchitectureGenotype, BlockGenotype, BlockKind, Digest, NodeGene, OpCode, SearchSpaceSpec};
pub use moea::{Individual, ObjectiveVector, Origin};
pub use search::{run_search, Archive, SearchConfig, SearchError, SearchMode, SearchState};
