//! Numerical checks of the alignment theory on discretized and toy systems.
//!
//! * the KL-regularized optimum is the Gibbs tilt of the reference law;
//! * a uniform energy error `δ` bounds the TV distance of two tilts by `tanh(β δ)`;
//! * the score change induced by post-training behaves like a force.

mod alchemical;
mod grid;
mod tilt_check;

pub use alchemical::{alchemical_force, alignment_study, cosine_alignment, AlignmentReport};
pub use grid::{
    gibbs_tilt, lr_lemma_check, regularized_objective, tv_distance, verify_tv_bound, GridDensity, LemmaCheck, TiltReport,
};
pub use tilt_check::{histogram, pair_distance, terminal_tilt_check, HistogramRow, TiltCheckConfig, TiltCheckReport};
