pub mod error;
pub mod exact;
pub mod game;
pub mod generators;
mod hull;
pub mod io;
pub mod kernel;
pub mod measure;
pub mod solver;
pub mod stage;
pub mod verify;

pub use error::{Error, Result};
pub use game::{KernelDecomposition, StochasticGameSpec, ValidationReport};
pub use kernel::{block_rank_profile, check_coarser, KernelMatrix};
pub use measure::{CandidateField, Cell, GridSpace, SplitSelection, StepFunction};
pub use solver::{solve, EquilibriumResult, SolverOptions, StrategyPiece};
pub use stage::{build_stage_game, nash_enumerate, AggregateVector, NashPoint, StageGame};
pub use verify::{deviation_residual, simulate_payoffs, Certificate, SimulationOptions, SimulationReport};
