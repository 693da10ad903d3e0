//! The variational AECM engine for mixtures of LNM factor analyzers.
//!
//! Each sweep runs two cycles:
//!
//! 1. refine every variational site `(m_ig, v_ig)`, recompute
//!    responsibilities from the cycle-1 bound, update `pi` and `mu`;
//! 2. compute the factor posteriors `(m~_ig, V~_g)` under the old `(Lambda, D)`,
//!    recompute responsibilities from the cycle-2 bound, then update `D` and
//!    `Lambda` under the chosen [`ModelConstraint`].
//!
//! After each sweep the surrogate objective
//! `sum_i log sum_g pi_g exp(F_ig)` (cycle-1 bound in place of the
//! intractable log-density) is recorded and tested for Aitken convergence.

mod engine;
mod estep;
mod init;
mod mstep;
mod woodbury;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::elbo::VariationalSite;
use crate::error::{Error, Result};

pub use engine::{fit_aecm, fit_partition, FitConfig, FitResult, PreparedData};
pub use estep::{log_softmax_rows, responsibilities, update_pi_mu, Cycle};
pub use init::{initial_partition, initialize, kmeans, InitKind, InitSpec};
pub use mstep::{mstep_stats, update_lambda_d, LoadingScatter, MStepStats};
pub use woodbury::{dense_inverse, woodbury_inverse};

/// Parameters of one mixture component: `Sigma = Lambda Lambda^T + diag(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub mu: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl ComponentParams {
    pub fn sigma(&self) -> DMatrix<f64> {
        let mut s = &self.lambda * self.lambda.transpose();
        for j in 0..self.d.len() {
            s[(j, j)] += self.d[j];
        }
        s
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn q(&self) -> usize {
        self.lambda.ncols()
    }
}

/// One of the eight members of the parsimonious family.
///
/// The code letters are, in order: loadings shared across groups, noise
/// shared across groups, noise isotropic (`D_g = d_g I`). `C` means the
/// constraint is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelConstraint {
    pub lambda_shared: bool,
    pub d_shared: bool,
    pub d_isotropic: bool,
}

impl ModelConstraint {
    pub const UUU: Self = Self::new(false, false, false);
    pub const UUC: Self = Self::new(false, false, true);
    pub const UCU: Self = Self::new(false, true, false);
    pub const UCC: Self = Self::new(false, true, true);
    pub const CUU: Self = Self::new(true, false, false);
    pub const CUC: Self = Self::new(true, false, true);
    pub const CCU: Self = Self::new(true, true, false);
    pub const CCC: Self = Self::new(true, true, true);

    /// All eight, in table order.
    pub const ALL: [Self; 8] = [Self::UUU, Self::UUC, Self::UCU, Self::UCC, Self::CUU, Self::CUC, Self::CCU, Self::CCC];

    pub const fn new(lambda_shared: bool, d_shared: bool, d_isotropic: bool) -> Self {
        ModelConstraint { lambda_shared, d_shared, d_isotropic }
    }

    pub fn code(&self) -> String {
        let c = |b: bool| if b { 'C' } else { 'U' };
        [c(self.lambda_shared), c(self.d_shared), c(self.d_isotropic)].iter().collect()
    }
}

impl fmt::Display for ModelConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for ModelConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let flags: Vec<bool> = s
            .trim()
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'C' => Ok(true),
                'U' => Ok(false),
                _ => Err(()),
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("unknown model code {s:?}")))?;
        match flags[..] {
            [a, b, c] => Ok(Self::new(a, b, c)),
            _ => Err(Error::InvalidArgument(format!("unknown model code {s:?}"))),
        }
    }
}

impl Serialize for ModelConstraint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for ModelConstraint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything the AECM iterations carry from sweep to sweep.
#[derive(Debug, Clone)]
pub struct MixtureState {
    pub pi: Vec<f64>,
    pub components: Vec<ComponentParams>,
    /// Variational sites, row-major `n x G` (index `i * G + g`).
    pub sites: Vec<VariationalSite>,
    /// Factor means `m~_ig`, row-major `n x G`.
    pub factor_means: Vec<DVector<f64>>,
    /// Factor covariances `V~_g`, one per component.
    pub factor_covs: Vec<DMatrix<f64>>,
    /// Responsibilities, `n x G`.
    pub resp: DMatrix<f64>,
}

impl MixtureState {
    pub fn n(&self) -> usize {
        self.resp.nrows()
    }

    pub fn g(&self) -> usize {
        self.pi.len()
    }

    pub fn site(&self, i: usize, g: usize) -> &VariationalSite {
        &self.sites[i * self.g() + g]
    }

    /// Hard labels by argmax; ties go to the lower component index.
    pub fn labels(&self) -> Vec<usize> {
        hard_labels(&self.resp)
    }
}

/// Argmax of each row, lowest index on ties.
pub fn hard_labels(resp: &DMatrix<f64>) -> Vec<usize> {
    (0..resp.nrows())
        .map(|i| {
            let mut best = 0;
            for g in 1..resp.ncols() {
                if resp[(i, g)] > resp[(i, best)] {
                    best = g;
                }
            }
            best
        })
        .collect()
}
