//! Identification of the reaction terms of monodomain-type models as small
//! feedforward networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`activation`] – scalar activations and the smoothed-ReLU family,
//! * [`nn`] – the network map, its state Jacobian, weight sensitivities,
//!   Lipschitz certificate and generalized-Jacobian enclosure,
//! * [`forward`] – Crank–Nicolson/Newton solvers for the ODE and PDE models and
//!   FitzHugh–Nagumo data generation,
//! * [`adjoint`] – objective, continuous and discrete adjoints, gradient
//!   assembly and KKT diagnostics,
//! * [`optimize`] – Barzilai–Borwein descent with Armijo backtracking,
//! * [`check`] – finite-difference gradient verification,
//! * [`io`] – text formats for weights, trajectories and datasets.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the tolerances in the
//! test-suite are calibrated for.

pub mod activation;
pub mod adjoint;
pub mod check;
pub mod error;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod optimize;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ActivationSpec64 = activation::ActivationSpec<f64>;
pub type WeightStack64 = nn::WeightStack<f64>;
pub type WeightStack32 = nn::WeightStack<f32>;
pub type WeightGradient64 = nn::WeightGradient<f64>;
pub type Trajectory64 = forward::Trajectory<f64>;
pub type Trajectory32 = forward::Trajectory<f32>;
pub type Dataset64 = forward::Dataset<f64>;
pub type FieldTrajectory64 = forward::FieldTrajectory<f64>;
pub type AdjointTrajectory64 = adjoint::AdjointTrajectory<f64>;
pub type TrainConfig64 = optimize::TrainConfig<f64>;
pub type TrainReport64 = optimize::TrainReport<f64>;
