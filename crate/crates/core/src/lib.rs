//! Equivariant N-body diffusion aligned to an energy oracle.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: a small define-by-run reverse-mode tape over dense `f64` tensors.
//! * [`nbody`]: configurations, the zero center-of-mass projection and rigid motions.
//! * [`oracle`]: analytic energy/force oracles and a learned pair-potential surrogate.
//! * [`diffusion`]: noise schedules, the equivariant score network, pretraining and sampling.
//! * [`rewards`]: terminal rewards, energy shaping potentials and telescoped returns.
//! * [`fedgrpo`]: shared-prefix rollouts, two-channel advantages and the clipped trainer.
//! * [`theory`]: numerical checks of the Gibbs-tilt characterization and TV bounds.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod fedgrpo;
pub mod nbody;
pub mod optim;
pub mod oracle;
pub mod rewards;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use nbody::{Configuration, ForceField, RigidMotion, Topology};
