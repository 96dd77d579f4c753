//! Robust estimation of stochastic frontier production models by minimum
//! density power divergence.

// `!(x > 0.0)` is used on purpose so that NaN lands in the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alpha_select;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod fit;
pub mod io;
pub mod model;
pub mod objective;
pub mod optim;
pub mod quadrature;
pub mod report;
pub mod robustness;
pub mod stats;

pub use alpha_select::{select_alpha, McsResult, SelectConfig, Selection};
pub use data::Dataset;
pub use efficiency::{mse_te, technical_efficiency, TEScores};
pub use error::{Result, SfaError};
pub use fit::{fit_alpha_path, fit_from, fit_mdpd, FitOptions, FitResult};
pub use model::{FrontierSpec, PseudoFamily, SfModel, Theta, SIGMA_FLOOR};
pub use objective::{Alpha, MdpdObjective};
pub use quadrature::QuadratureConfig;
pub use robustness::{run_simulation, Contamination, SimConfig, SimReport};
