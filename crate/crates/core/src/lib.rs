//! Truncated discrete generalized exchange-driven (DGED) cluster kinetics.
//!
//! Clusters of size `p` exchange a chunk of size `k` with clusters of size
//! `q`: `<p> + <q> -> <p-k> + <q+k>` at rate `a(p,q;k) c_p c_q`. The crate
//! simulates the system truncated at a maximal cluster size `N`, in the
//! isolated variant (the void-cluster concentration `c_0` evolves) and the
//! non-isolated variant (`c_0` is held by a bath), and provides the
//! diagnostics that go with it:
//!
//! - [`kernels`]: rate-coefficient families, structural audits and growth-bound certificates.
//! - [`state`]: truncated concentration vectors, initial data, moments and norms.
//! - [`fluxes`]: the four truncated flux families, the right-hand side, a reaction
//!   enumeration oracle, weighted-moment rates and the balanced form.
//! - [`integrate`]: adaptive and fixed-step Runge–Kutta time stepping with a
//!   nonnegativity policy.
//! - [`analysis`]: σ-moment tools, detailed-balance equilibria, the entropy-type
//!   functional and truncation-convergence studies.
//! - [`cli`]: configuration-driven commands and their file formats.

pub mod analysis;
pub mod cli;
pub mod fluxes;
pub mod integrate;
pub mod kernels;
pub mod state;
mod sum;

pub use analysis::{BalanceProfile, EquilibriumSpec, SigmaFunction};
pub use fluxes::{FluxBreakdown, WeightSequence};
pub use integrate::{IntegratorConfig, Method, Trajectory};
pub use kernels::{AuditReport, BoundCertificate, QWeights, RateKernel};
pub use state::{ConcentrationState, InitialShape, InitialSpec, Variant};
