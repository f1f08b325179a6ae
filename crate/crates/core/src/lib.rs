//! Weighted neural tangent kernels for fully connected networks.
//!
//! The crate computes the infinite-width Σ/Σ̇ recursion and its layer-wise
//! decomposition, empirical kernels of finite networks, ridge-regression
//! estimators built on those kernels, gradient-based learning of the
//! layer weights, and width sweeps that measure how training dynamics
//! approach the kernel regime.

pub mod activation;
pub mod analytic;
pub mod cli;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod layers;
pub mod linalg;
pub mod mc;
pub mod network;
pub mod protocol;
pub mod quadrature;
pub mod regression;
pub mod synthetic;
pub mod weights;

pub use activation::{ActivationKind, SmoothActivation};
pub use analytic::{
    analytic_layer_kernels, layer_kernels_from_stack, ntk_from_stack, quadrature_moment, relu_dot_moment,
    relu_moment, sigma_recursion, wntk_recursion, BivariateMoment, NetworkShape, SigmaStack,
};
pub use error::{ErrorClass, Result, WntkError};
pub use layers::{wntk_weighted_sum, LayerKernelStack, LayerWeights};
pub use linalg::{FactorizationKind, KernelMatrix, SymmetricSolver};
pub use mc::{mc_kernel_oracle, McKernelEstimate};
pub use network::{
    adjusted_gd_step, empirical_layer_kernels, empirical_wntk, init_mlp, pretrain_to_threshold,
    train_adjusted_gd, JacobianMatrix, Mlp, MlpSpec, Parameterization, PerParameterRates, PretrainOutcome,
};
