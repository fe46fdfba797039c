//! Solvers and verification tools for long-run average (ergodic) impulse
//! control of finite-state Markov chains.
//!
//! The controlled object is a discrete-time chain on a one-dimensional grid
//! together with an impulse mechanism: at the start of a step the controller
//! may relocate the state into a designated target region `U`, paying a
//! strictly negative cost, after which reward accrues and the chain makes an
//! ordinary transition.  Two solution routes are provided for the long-run
//! average criterion and are expected to agree: a vanishing-discount sweep
//! over discounted quasi-variational inequalities, and a direct bisection on
//! the average reward rate.  Supporting modules compute potentials (Poisson
//! equation solutions), extract and analyse stationary impulse policies,
//! simulate controlled paths reproducibly, and study spatial truncations of
//! the reward.
//!
//! All numerical kernels are generic over the floating-point scalar through
//! [`scalar::Scalar`]; the type aliases at the crate root fix the common
//! double-precision instantiation.

// Guards are written `!(x > 0)` on purpose: the negation rejects NaN, which
// `x <= 0` would let through.  Index loops over matrix rows stay as ranges.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

pub mod chain;
pub mod cost;
pub mod discounted;
pub mod ergodic;
pub mod instances;
pub mod io;
pub mod linalg;
pub mod potentials;
pub mod scalar;
pub mod simulate;
pub mod stopping;
pub mod strategy;
pub mod truncation;

use thiserror::Error;

/// Crate-wide error type.  Variants map onto the CLI exit-code taxonomy:
/// input/validation problems, numeric failures, and verification failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller input (grids, kernels, configs).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A model was structurally unusable (reducible kernel, degenerate rows).
    #[error("degenerate model: {0}")]
    Degenerate(String),
    /// A linear system could not be solved reliably.
    #[error("singular or ill-conditioned system: {0}")]
    Singular(String),
    /// An iterative solver hit its cap before meeting its tolerance.
    #[error("{what}: iteration cap {cap} reached (residual {residual:.3e})")]
    IterationCap {
        what: String,
        cap: usize,
        residual: f64,
    },
    /// A root bracket did not straddle the root.
    #[error("bracketing failure: {0}")]
    Bracket(String),
    /// A mathematical bound that should hold was violated.
    #[error("bound `{check}` violated at state {state} (slack {slack:.3e})")]
    BoundViolation {
        check: String,
        state: usize,
        slack: f64,
    },
    /// An operation was requested in a regime where it is undefined.
    #[error("regime error: {0}")]
    Regime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// File contents could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use chain::{ErgodicityProfile, StateGrid, TransitionKernel};
pub use cost::{CostKind, CostSpec};
pub use discounted::DiscountedSolution;
pub use ergodic::{ErgodicSolution, Regime, SolutionMethod};
pub use potentials::{PotentialTable, RewardSpec};
pub use simulate::{SimulationPaths, SimulationReport};
pub use strategy::{CycleStats, ImpulsePolicy};
pub use truncation::{TruncatedReward, TruncationReport};

/// Double-precision aliases for the main model and solution types.
pub type Grid64 = StateGrid<f64>;
pub type Kernel64 = TransitionKernel<f64>;
pub type Reward64 = RewardSpec<f64>;
pub type Cost64 = CostSpec<f64>;
pub type Discounted64 = DiscountedSolution<f64>;
pub type Ergodic64 = ErgodicSolution<f64>;
pub type Policy64 = ImpulsePolicy<f64>;

/// Single-precision aliases; the solvers run at any [`scalar::Scalar`] type,
/// although the shipped tolerances are calibrated for `f64`.
pub type Grid32 = StateGrid<f32>;
pub type Kernel32 = TransitionKernel<f32>;
