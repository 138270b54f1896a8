//! Activated random walk on finite boxes of `Z^2`.
//!
//! Particles are active or sleeping. An active particle reads the next
//! instruction from the stack of its current site: a sleep instruction puts
//! it to sleep when it is alone, a move instruction sends it to a neighbor.
//! A sleeping particle wakes up when another particle arrives. Particles are
//! killed on leaving the box.
//!
//! * [`lattice`]: the box, its boundary and the cycle partition.
//! * [`instructions`]: counter-based per-site instruction stacks.
//! * [`engine`]: Abelian stabilization producing the odometer, sleep field
//!   and exit measure.
//! * [`balance`]: exact mass-balance checks, KL divergence and the Chernoff bound.
//! * [`experiments`]: Monte Carlo estimators and the single-particle oracle.

pub mod balance;
pub mod engine;
pub mod experiments;
pub mod instructions;
pub mod lattice;

pub use balance::{
    abelian_check, chernoff_bound, kl_divergence, verify_all, AbelianReport, BalanceReport, ChernoffBound, CountMode,
    FieldTuple,
};
pub use engine::{
    stabilize, Configuration, EngineError, SchedulerPolicy, SiteState, StabilizationResult, StabilizeParams,
    DEFAULT_BUDGET,
};
pub use experiments::{
    density_curve, estimate_tail, estimate_zeta_c, sample_initial, single_particle_oracle, DensityCurvePoint,
    ExperimentError, InitialCondition, SimParams, TailEstimate, VerifyMode, ZetaCEstimate,
};
pub use instructions::{Instruction, InstructionStream, SiteStream, SleepRate, StreamSource, GENERATOR_ID};
pub use lattice::{Direction, Site, SquareBox};
