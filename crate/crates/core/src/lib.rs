//! Numerical laboratory for a selection-mutation model with horizontal gene
//! transfer.
//!
//! The crate is organised around the quantities one needs to study the
//! long-time, small-mutation behaviour of the model
//!
//! ```text
//! eps d_t n - eps^2 d_zz n = (1 - g z^2 - rho) n + tau n * int n(y)/rho H(z - y) dy
//! ```
//!
//! * [`kernels`]: transfer kernels `H`, growth rate and parameter scaling.
//! * [`ess`]: kernel constants, closed-form mono/dimorphic equilibria,
//!   trimorphic equilibria by Newton continuation, ESS verification.
//! * [`pde`]: asymptotic-preserving finite-difference solver for the
//!   Hopf-Cole transformed equation.
//! * [`spectral`]: principal eigenvalue of `-eps^2 d_zz - R` on an interval.
//! * [`cli`]: configuration, scenario dispatch and CSV/JSON output.

pub mod cli;
pub mod error;
pub mod ess;
pub mod kernels;
pub mod pde;
pub mod roots;
pub mod spectral;

pub use error::{Error, Result};
pub use ess::{DiscreteEss, EssOutcome, KernelConstants};
pub use kernels::{growth, KernelKind, ModelParams, PhysicalParams, TransferKernel};
