// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod fault;
pub mod qp;
pub mod allocation;
pub mod planner;
pub mod trajopt;
pub mod sim;
pub mod harness;
