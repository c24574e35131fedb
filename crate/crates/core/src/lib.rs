#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod energy;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod observables;
pub mod transfer;
pub mod wkb;
