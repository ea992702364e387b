//! Layers, initialisation and optimisers.

mod binder;
mod dropout;
mod init;
mod linear;
mod lstm;
mod optim;

pub use binder::Binder;
pub use dropout::dropout;
pub use init::{xavier_init, xavier_init_with};
pub use linear::{Activation, BoundLinear, LinearLayer};
pub use lstm::{BoundLstm, LstmCell};
pub use optim::{clip_global_norm, Direction, Optimizer, OptimizerKind};
