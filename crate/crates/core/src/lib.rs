//! Model predictive control with stage costs built from the dilation
//! structure of a homogeneous control system.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cost;
pub mod error;
pub mod homogeneity;
pub mod mpc;
pub mod ocp;
pub mod sampling;
pub mod systems;

pub use cost::{check_cost_homogeneity, CostKind, StageCost};
pub use error::{Error, Result};
pub use homogeneity::DilationStructure;
pub use systems::{builtin, ControlSignal, ControlSystem, SystemParams, Trajectory};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/dilations.md")]
    struct Dilations;
    #[doc = include_str!("../../../book/src/costs.md")]
    struct Costs;
    #[doc = include_str!("../../../book/src/ocp.md")]
    struct Ocp;
    #[doc = include_str!("../../../book/src/mpc.md")]
    struct Mpc;
    #[doc = include_str!("../../../book/src/growth.md")]
    struct Growth;
}
