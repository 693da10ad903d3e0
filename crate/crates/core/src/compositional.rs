//! Additive log-ratio geometry and count tables.
//!
//! The last coordinate of every composition (and the last column of every
//! [`CountMatrix`]) is the ALR reference. Callers who want a different
//! reference taxon should reorder columns first, see
//! [`CountMatrix::with_reference`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A point in the open simplex: `K + 1` strictly positive probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition(DVector<f64>);

impl Composition {
    /// Validate and wrap a probability vector.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::InvalidArgument("a composition needs at least two parts".into()));
        }
        for (index, &x) in p.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::Domain { index, message: format!("composition entry {x} is not in (0, 1)") });
            }
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("composition sums to {total}, not 1")));
        }
        Ok(Composition(DVector::from_vec(p)))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// A point in log-ratio space (`K` finite reals).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub DVector<f64>);

impl LatentVector {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Additive log-ratio transform, `y_k = log(p_k / p_{K+1})`.
///
/// `p` need not be normalised; only the ratios matter. Every entry must be
/// strictly positive.
pub fn alr(p: &[f64]) -> Result<LatentVector> {
    if p.len() < 2 {
        return Err(Error::InvalidArgument("alr needs at least two parts".into()));
    }
    if let Some((index, &x)) = p.iter().enumerate().find(|(_, &x)| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain { index, message: format!("alr requires strictly positive entries, got {x}") });
    }
    let k = p.len() - 1;
    let log_ref = p[k].ln();
    Ok(LatentVector(DVector::from_iterator(k, p[..k].iter().map(|&x| x.ln() - log_ref))))
}

/// Inverse ALR transform with max-shift stabilisation.
///
/// The implicit reference term `exp(0) = 1` takes part in the shift, so
/// inputs up to |y| ~ 700 neither overflow nor lose the reference entry.
pub fn alr_inv(y: &LatentVector) -> Composition {
    let y = y.as_slice();
    let shift = y.iter().copied().fold(0.0f64, f64::max);
    let mut p: Vec<f64> = y.iter().map(|&v| (v - shift).exp()).collect();
    p.push((-shift).exp());
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Composition(DVector::from_vec(p))
}

/// `log(sum_k exp(x_k) + 1)`, the ALR normaliser, without overflow.
pub fn log1p_sum_exp(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let shift = x.clone().fold(0.0f64, f64::max);
    let s: f64 = x.map(|v| (v - shift).exp()).sum::<f64>() + (-shift).exp();
    shift + s.ln()
}

/// An `n x (K + 1)` table of nonnegative counts with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    counts: Vec<u64>,
    n: usize,
    parts: usize,
    taxa_names: Vec<String>,
    sample_ids: Vec<String>,
}

impl CountMatrix {
    /// Build from rows. Every row must have at least one count.
    pub fn new(rows: Vec<Vec<u64>>, taxa_names: Vec<String>, sample_ids: Vec<String>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidArgument("count matrix has no rows".into()));
        }
        let parts = taxa_names.len();
        if parts < 2 {
            return Err(Error::InvalidArgument("count matrix needs at least two taxa".into()));
        }
        if sample_ids.len() != n {
            return Err(Error::Dimension(format!("{} sample ids for {} rows", sample_ids.len(), n)));
        }
        let mut counts = Vec::with_capacity(n * parts);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != parts {
                return Err(Error::Dimension(format!("row {i} has {} entries, expected {parts}", row.len())));
            }
            if row.iter().all(|&c| c == 0) {
                return Err(Error::Domain { index: i, message: "row total is zero".into() });
            }
            counts.extend(row);
        }
        Ok(CountMatrix { counts, n, parts, taxa_names, sample_ids })
    }

    /// Build with generated labels (`taxon1..`, `sample1..`).
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let parts = rows.first().map_or(0, Vec::len);
        let taxa = (1..=parts).map(|j| format!("taxon{j}")).collect();
        let samples = (1..=rows.len()).map(|i| format!("sample{i}")).collect();
        Self::new(rows, taxa, samples)
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Latent dimension `K` (number of taxa minus the reference).
    pub fn k(&self) -> usize {
        self.parts - 1
    }

    pub fn n_taxa(&self) -> usize {
        self.parts
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.counts[i * self.parts..(i + 1) * self.parts]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.parts)
    }

    pub fn taxa_names(&self) -> &[String] {
        &self.taxa_names
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Move the named taxon to the last column so it becomes the ALR reference.
    pub fn with_reference(&self, name: &str) -> Result<Self> {
        let Some(col) = self.taxa_names.iter().position(|t| t == name) else {
            return Err(Error::InvalidArgument(format!("unknown reference taxon {name:?}")));
        };
        let mut order: Vec<usize> = (0..self.parts).filter(|&j| j != col).collect();
        order.push(col);
        let rows = self.rows().map(|r| order.iter().map(|&j| r[j]).collect()).collect();
        let taxa = order.iter().map(|&j| self.taxa_names[j].clone()).collect();
        Self::new(rows, taxa, self.sample_ids.clone())
    }
}

/// Replace zero counts by `pseudo` (initialisation only).
pub fn replace_zeros(w: &CountMatrix, pseudo: f64) -> Result<DMatrix<f64>> {
    if !(pseudo > 0.0) {
        return Err(Error::InvalidArgument(format!("pseudo-count must be positive, got {pseudo}")));
    }
    Ok(DMatrix::from_fn(w.n(), w.n_taxa(), |i, j| {
        let c = w.row(i)[j];
        if c == 0 {
            pseudo
        } else {
            c as f64
        }
    }))
}

/// ALR of every zero-replaced row; an `n x K` matrix.
pub fn empirical_alr(w: &CountMatrix, pseudo: f64) -> Result<DMatrix<f64>> {
    let smoothed = replace_zeros(w, pseudo)?;
    let k = w.k();
    let mut out = DMatrix::zeros(w.n(), k);
    for i in 0..w.n() {
        let row: Vec<f64> = smoothed.row(i).iter().copied().collect();
        let y = alr(&row)?;
        out.row_mut(i).copy_from(&y.0.transpose());
    }
    Ok(out)
}
