#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod config;
pub mod crossing;
pub mod error;
pub mod gaussian_oracle;
pub mod ingest;
pub mod kramers;
pub mod linalg;
pub mod model;
pub mod objectives;
pub mod observe;
pub mod optimize;
pub mod ou;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
pub use kramers::{kramers_model, Kramers, KramersParams};
pub use model::{DiffusionParam, SecondOrderModel, Theta, Transform};
pub use ou::OuFlow;
