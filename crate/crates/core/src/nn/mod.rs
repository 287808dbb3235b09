//! Minimal dense-matrix reverse-mode autodiff, the Adam optimizer, and the
//! gradient-checking harness with the closed-form one-layer gradient oracle.

mod adam;
mod gradcheck;
mod tape;

pub use adam::AdamState;
pub use gradcheck::{analytic_gcn_grad, grad_check, GradCheckReport};
pub use tape::{softmax_rows_value, Tape, VarId};
