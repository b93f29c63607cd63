//! Exact equilibrium prices for linear exchange markets.
//!
//! The solver raises prices multiplicatively on the set of buyers with the
//! largest surplus, keeping a balanced maximum flow in the equality network
//! between updates. Once the surplus is small enough, exact rational prices
//! are recovered from the final equality structure by solving one integer
//! linear system per component.
//!
//! Two arithmetic modes are available: [`solver::Mode::Exact`] keeps every
//! price as a rational, [`solver::Mode::Fixed`] keeps prices as powers of
//! `1 + 1/L` with rounded capacities, so that all numbers stay polynomially
//! bounded.

pub mod balanced_flow;
pub mod extraction;
pub mod flow;
pub mod market;
pub mod numerics;
pub mod parallel;
pub mod price_update;
pub mod solver;
pub mod verify;

pub use market::{Market, MarketError};
pub use numerics::Profile;
pub use parallel::Execution;
pub use solver::{solve, Mode, Solution, SolveError, SolverConfig};
pub use verify::{check_equilibrium, EquilibriumReport};

/// Exact rational used for all prices, flows and surpluses.
pub type Q = num_rational::BigRational;
