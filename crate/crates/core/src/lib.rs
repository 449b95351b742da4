//! Energy flexibility envelopes for linear systems with state-dependent losses.
//!
//! The crate computes two families of cumulative-energy envelopes for a
//! flexible load described by `dx/dt = A x + B_p p + B_d d`:
//!
//! - trajectory-dependent (TD) envelopes, the classic minimum/maximum energy
//!   consumption potential per lead time, and
//! - trajectory-independent (TI) envelopes, which guarantee that *every*
//!   power trajectory whose cumulative energy stays inside them keeps the
//!   states within their bounds. Scalar, distributed (per-load box) and
//!   centralized (pooled, fixed dispatch) variants are provided.
//!
//! The [`verify`] module checks those guarantees empirically: corridor
//! sampling, adversarial extremal trajectories and exhaustive enumeration on
//! small instances.

pub mod cli;
pub mod envelope;
pub mod error;
pub mod expm;
pub mod model;
pub mod opt;
pub mod rc;
pub mod study;
pub mod td;
pub mod ti_multi;
pub mod ti_scalar;
pub mod verify;

mod assembly;

pub use envelope::{EnvelopeKind, EnvelopeSeries};
pub use error::{Error, Result};
pub use model::{
    check_state_feasibility, discretize, simulate, DiscreteSystem, LinearLossySystem, Scheme,
    StateTrajectory, Trajectory, TrajectoryVerdict,
};
