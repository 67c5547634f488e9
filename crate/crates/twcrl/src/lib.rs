//! Learn a dense reward function from successful and failed demonstrations
//! using time-weighted contrastive labels, then train a TD3 policy against it.
//!
//! The crate is organized around a small set of building blocks:
//!
//! * [`mdp`] — trajectories, demonstration sets, and finite MDP descriptions
//! * [`trap`] — trap-state analysis for finite MDPs, with a reachability oracle
//! * [`timeweight`] — the time-weighted labeling function and its validation oracles
//! * [`maze`] — continuous point-mass maze environments with absorbing goal/trap discs
//! * [`nn`] — dense networks with analytic gradients and an Adam optimizer
//! * [`reward`] — contrastive reward learning on labeled demonstration states
//! * [`td3`] — twin-critic off-policy actor-critic with delayed policy updates
//! * [`pipeline`] — the iterative label → fit reward → train policy → collect loop
//!
//! Numeric kernels ([`timeweight`], [`nn`]) are generic over the scalar type via
//! [`Scalar`]; everything else, and all file formats, instantiate them at [`Real`]
//! (`f64`).

pub mod error;
pub mod maze;
pub mod mdp;
pub mod nn;
pub mod pipeline;
pub mod reward;
pub mod rng;
pub mod td3;
pub mod timeweight;
pub mod trap;

pub use error::{Error, Result};

use std::fmt::Debug;

/// Scalar type used by all concrete models, environments, and file formats.
pub type Real = f64;

/// Floating-point scalar bound for the generic numeric kernels.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + num_traits::FromPrimitive + Copy + Debug + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: num_traits::Float + num_traits::NumAssign + num_traits::FromPrimitive + Copy + Debug + Send + Sync + 'static
{
}
