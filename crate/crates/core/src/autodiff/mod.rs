//! Reverse-mode differentiation over the kernels in [`crate::ops`].

mod gradcheck;
mod session;
mod tape;

pub use gradcheck::{
    compensated_dot, finite_diff_at, finite_diff_grad, param_gradcheck, projection, randomize_params, relative_error,
    tape_gradcheck, GradSample, DEFAULT_STEP, REL_ERR_FLOOR,
};
pub use session::Session;
pub use tape::{Gradients, Mode, RunningStats, Tape, Var};
