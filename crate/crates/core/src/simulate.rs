//! Synthetic LNM-FA data.
//!
//! Each observation draws, in this order and from one seeded ChaCha stream:
//! its component, `Y ~ N(mu_g, Lambda_g Lambda_g^T + D_g)` through the
//! Cholesky factor, a total count uniform on `total_range`, and the counts
//! through sequential binomial draws.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::compositional::{alr_inv, CountMatrix, LatentVector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mixture::ComponentParams;

/// Everything needed to generate one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub pi: Vec<f64>,
    pub components: Vec<ComponentParams>,
    pub n: usize,
    /// Inclusive range of per-sample totals.
    pub total_range: (u64, u64),
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pi.len() != self.components.len() || self.pi.is_empty() {
            return Err(Error::Dimension(format!(
                "{} weights for {} components",
                self.pi.len(),
                self.components.len()
            )));
        }
        if (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.pi.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidArgument("mixing weights must be positive and sum to 1".into()));
        }
        if self.n == 0 || self.total_range.0 > self.total_range.1 || self.total_range.0 == 0 {
            return Err(Error::InvalidArgument("need n >= 1 and 1 <= lo <= hi".into()));
        }
        let k = self.components[0].k();
        if self.components.iter().any(|c| c.k() != k || c.d.len() != k || c.lambda.nrows() != k) {
            return Err(Error::Dimension("components disagree on K".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.components[0].k()
    }
}

/// A generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub counts: CountMatrix,
    /// Component of each sample, `0..G`.
    pub true_labels: Vec<usize>,
    /// Latent ALR vectors, `n x K`.
    pub true_y: DMatrix<f64>,
}

/// Draw `Multinomial(total, p)` as a chain of binomials.
fn multinomial(rng: &mut ChaCha8Rng, total: u64, p: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; p.len()];
    let mut left = total;
    let mut mass = 1.0f64;
    for (j, &pj) in p.iter().enumerate() {
        if j + 1 == p.len() {
            out[j] = left;
            break;
        }
        if left == 0 {
            break;
        }
        let prob = if mass > 0.0 { (pj / mass).clamp(0.0, 1.0) } else { 1.0 };
        let x = Binomial::new(left, prob).expect("probability in [0, 1]").sample(rng);
        out[j] = x;
        left -= x;
        mass -= pj;
    }
    out
}

/// Generate a dataset; the same spec always gives the same output.
pub fn generate(spec: &SimSpec) -> Result<SimOutput> {
    spec.validate()?;
    let k = spec.k();
    let chols = spec
        .components
        .iter()
        .map(|c| linalg::cholesky(&c.sigma(), "component covariance").map(|ch| ch.l()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let mut true_y = DMatrix::zeros(spec.n, k);
    for i in 0..spec.n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut g = spec.pi.len() - 1;
        for (h, &p) in spec.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                g = h;
                break;
            }
        }
        let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let y = &spec.components[g].mu + &chols[g] * z;
        let p = alr_inv(&LatentVector(y.clone()));
        let total = rng.random_range(spec.total_range.0..=spec.total_range.1);
        rows.push(multinomial(&mut rng, total, p.as_slice()));
        labels.push(g);
        true_y.set_row(i, &y.transpose());
    }
    Ok(SimOutput { counts: CountMatrix::from_rows(rows)?, true_labels: labels, true_y })
}

const STUDY1_MU: [[f64; 10]; 3] = [
    [-0.17, 0.03, 0.08, 0.24, 0.24, -0.06, -0.03, 0.14, -0.11, 0.14],
    [0.33, 0.63, 0.44, 0.60, 0.32, 0.52, 0.39, 0.50, 0.51, 0.45],
    [-0.59, -0.66, -0.55, -0.45, -0.60, -0.68, -0.53, -0.41, -0.65, -0.46],
];

const LAMBDA_A: [[f64; 3]; 10] = [
    [-0.003, 0.386, -0.242],
    [-0.278, 0.090, 0.128],
    [-0.131, 0.187, 0.375],
    [0.424, 0.092, -0.983],
    [0.038, -0.796, -0.423],
    [0.275, 0.062, 0.242],
    [-0.222, 0.204, -0.574],
    [-0.100, 0.116, -0.265],
    [0.284, 0.422, -0.205],
    [0.030, -0.353, 0.153],
];

const STUDY2_MU: [[f64; 10]; 3] = [
    [0.16, -0.13, 0.06, 0.13, 0.00, -0.06, -0.02, -0.11, 0.00, 0.03],
    [0.79, 1.01, 0.66, 0.76, 0.86, 0.83, 0.66, 0.68, 0.85, 0.84],
    [-0.77, -0.89, -0.88, -0.78, -0.71, -0.89, -0.86, -0.82, -0.86, -0.80],
];

const LAMBDA_B: [[f64; 3]; 10] = [
    [-0.426, -0.289, 0.050],
    [-0.070, 0.267, 0.120],
    [0.126, -0.184, -0.140],
    [0.276, -0.690, 0.394],
    [0.085, -0.243, -0.400],
    [-0.137, 0.104, -0.305],
    [0.400, 0.491, -0.434],
    [0.199, 0.334, 0.054],
    [0.167, 0.022, -0.167],
    [0.299, -0.133, -0.338],
];

const LAMBDA_C: [[f64; 3]; 10] = [
    [0.082, -0.167, 0.050],
    [0.146, 0.123, -0.033],
    [0.164, -0.075, -0.142],
    [-0.107, -0.062, 0.002],
    [0.086, 0.054, -0.143],
    [-0.078, -0.051, 0.155],
    [-0.074, -0.252, -0.048],
    [-0.059, 0.112, 0.076],
    [0.047, 0.054, -0.019],
    [0.220, -0.122, -0.026],
];

const STUDY2_D: [[f64; 10]; 3] = [
    [0.03, 0.004, 0.028, 0.015, 0.005, 0.029, 0.003, 0.016, 0.014, 0.015],
    [0.004, 0.03, 0.015, 0.003, 0.029, 0.015, 0.028, 0.03, 0.005, 0.03],
    [0.022, 0.006, 0.03, 0.018, 0.011, 0.002, 0.004, 0.015, 0.025, 0.005],
];

fn loadings(rows: &[[f64; 3]; 10]) -> DMatrix<f64> {
    DMatrix::from_fn(10, 3, |r, c| rows[r][c])
}

/// Study 1: three components sharing loadings and an isotropic noise
/// variance of 0.01 (model CCC).
pub fn study1() -> SimSpec {
    let lambda = loadings(&LAMBDA_A);
    SimSpec {
        pi: vec![0.5, 0.3, 0.2],
        components: STUDY1_MU
            .iter()
            .map(|mu| ComponentParams {
                mu: DVector::from_row_slice(mu),
                lambda: lambda.clone(),
                d: DVector::from_element(10, 0.01),
            })
            .collect(),
        n: 1000,
        total_range: (5000, 10000),
        seed: 0,
    }
}

/// Study 2: three components with their own loadings and diagonal noise
/// (model UUU).
pub fn study2() -> SimSpec {
    let lambdas = [loadings(&LAMBDA_A), loadings(&LAMBDA_B), loadings(&LAMBDA_C)];
    SimSpec {
        pi: vec![0.5, 0.3, 0.2],
        components: (0..3)
            .map(|g| ComponentParams {
                mu: DVector::from_row_slice(&STUDY2_MU[g]),
                lambda: lambdas[g].clone(),
                d: DVector::from_row_slice(&STUDY2_D[g]),
            })
            .collect(),
        n: 1000,
        total_range: (5000, 10000),
        seed: 0,
    }
}

/// The built-in specifications by name.
pub fn builtin_specs() -> Vec<(&'static str, SimSpec)> {
    vec![("study1", study1()), ("study2", study2())]
}

pub fn builtin_spec(name: &str) -> Result<SimSpec> {
    builtin_specs()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown built-in spec {name:?} (have study1, study2)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_values() {
        let s1 = study1();
        assert_eq!(s1.pi, vec![0.5, 0.3, 0.2]);
        assert!(s1.components.iter().all(|c| c.d.iter().all(|&d| d == 0.01)));
        let s2 = study2();
        assert_eq!(&s2.components[0].d.as_slice()[..3], &[0.03, 0.004, 0.028]);
        assert_eq!(s2.components[0].lambda, s1.components[0].lambda);
        assert!(builtin_spec("study3").is_err());
    }

    #[test]
    fn deterministic_and_in_range() {
        let mut spec = study1();
        spec.n = 50;
        spec.seed = 11;
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        for row in a.counts.rows() {
            let t: u64 = row.iter().sum();
            assert!((5000..=10000).contains(&t));
        }
        spec.seed = 12;
        assert_ne!(a, generate(&spec).unwrap());
    }

    #[test]
    fn multinomial_conserves_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = multinomial(&mut rng, 1000, &[0.2, 0.0, 0.5, 0.3]);
        assert_eq!(x.iter().sum::<u64>(), 1000);
        assert_eq!(x[1], 0);
    }
}
