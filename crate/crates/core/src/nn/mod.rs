//! Parameters, dropout, loss, optimiser and gradient checking.

pub mod adam;
pub mod dropout;
pub mod gradcheck;
pub mod loss;
pub mod params;

pub use adam::{adam_step, TrainStepState};
pub use dropout::{dropout_apply, dropout_mask, DropoutMode, DropoutPlan, DEFAULT_DROPOUT};
pub use gradcheck::{finite_difference_check, grad_check, rel_error, GradCheckReport};
pub use loss::l1_loss;
pub use params::{init_params, Param, ParamStore};
