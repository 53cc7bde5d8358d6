//! Simulation and exact-computation toolkit for critical branching processes
//! in an i.i.d. random environment whose associated random walk has
//! regularly-varying tails of index 1 (the Cauchy domain of attraction).
//!
//! The crate is organised around the objects the theory is built from:
//!
//! - [`heavy_tail`]: mean-zero step laws with exact `p L(x)/x` tails and the
//!   slowly-varying calculus (`l*`, truncated means, the scaling sequences
//!   `a_n`, `h_n`, `b_n`).
//! - [`environment`]: random offspring generating functions, the induced
//!   log-mean walk, and the truncated second-moment functionals `eta`,
//!   `zeta(a)`.
//! - [`fluctuation`]: walk paths, ladder structure, renewal-function
//!   estimation, the exact Spitzer series engine for `P(L_n >= 0)` and
//!   `P(M_n < 0)`, and an exhaustive lattice oracle.
//! - [`conditioned`]: the Doob h-transform measure: weighted and kernel
//!   samplers, harmonicity checks, prospective minima and the Tanaka
//!   decomposition diagnostics.
//! - [`bpre`]: quenched/annealed survival probabilities via generating
//!   function iteration and the ratio experiments that probe the
//!   `P(Z_n > 0) ~ K P(L_n >= 0)` asymptotics.
//! - [`mc`]: reproducible, worker-count-invariant parallel Monte Carlo
//!   plumbing shared by all of the above.

pub mod bpre;
pub mod conditioned;
pub mod environment;
pub mod fluctuation;
pub mod heavy_tail;
pub mod mc;

pub use heavy_tail::{ScalingSequences, SlowlyVaryingSpec, StepLaw};
pub use mc::StepSampler;
