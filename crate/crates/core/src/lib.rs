//! Mixtures of logistic normal multinomial factor analyzers for clustering
//! compositional count data.
//!
//! Counts `W_i` are modelled as multinomial given compositions whose
//! additive log-ratio transform `Y_i` follows a Gaussian mixture with
//! factor-analytic covariances `Lambda_g Lambda_g^T + D_g`. Estimation is by
//! a variational AECM algorithm; model choice over the number of components,
//! latent factors and the eight covariance constraints is by BIC.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops mirror
// the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod compositional;
pub mod elbo;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mixture;
pub mod par;
pub mod selection;
pub mod simulate;
pub mod varinf;

pub use compositional::{alr, alr_inv, CountMatrix};
pub use error::{Error, Result};
pub use mixture::{fit_aecm, FitConfig, FitResult, InitSpec, ModelConstraint};
pub use par::Exec;
pub use selection::{ari, grid_search, GridSpec, SelectionReport};
