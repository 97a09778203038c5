//! Numerical core for moderate deviations of small-noise jump SDEs driven by
//! Poisson random measures.
//!
//! The crate is `no_std` with `alloc`: every routine is a pure function of its
//! inputs and a seed. File formats, parallel experiment runners and the CLI
//! live in the companion `modev` crate.
#![no_std]
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod jump_sde;
pub mod lemma;
pub mod linalg;
pub mod mark_space;
pub mod mdp_limit;
pub mod models;
mod ode;
pub mod pollutant;
pub mod prm;
pub mod quadrature;
pub mod rate;
pub mod rng;
pub mod sum;

pub use error::{Error, Result};
pub use jump_sde::{Dynamics, ModelSpec, PathGrid, ScalingSchedule};
pub use mark_space::{MarkFunction, MarkMeasure};
pub use prm::{ControlField, CostReport, Event, PointRealization};
