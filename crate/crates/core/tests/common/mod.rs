//! Helpers shared by the integration tests: random instances and oracles
//! written independently of the library code paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| uniform(r, -scale, scale))
}

pub fn random_vector(r: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(r, lo, hi))
}

/// `A A^T / k + diag` with entries bounded away from singular.
pub fn random_spd(r: &mut impl Rng, k: usize) -> DMatrix<f64> {
    let a = random_matrix(r, k, k, 1.0);
    let mut s = &a * a.transpose() / k as f64;
    for j in 0..k {
        s[(j, j)] += uniform(r, 0.1, 0.6);
    }
    s
}

pub fn random_counts(r: &mut impl Rng, parts: usize, max_each: u64) -> Vec<u64> {
    loop {
        let w: Vec<u64> = (0..parts).map(|_| r.random_range(0..=max_each)).collect();
        if w.iter().sum::<u64>() > 0 {
            return w;
        }
    }
}

pub fn ln_fact(n: u64) -> f64 {
    (1..=n).map(|x| (x as f64).ln()).sum()
}

/// Cycle-1 bound coded term by term from its definition, with a dense
/// inverse and determinant.
pub fn elbo1_oracle(w: &[u64], m: &[f64], v: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let k = m.len();
    let total: u64 = w.iter().sum();
    let c = ln_fact(total) - w.iter().map(|&x| ln_fact(x)).sum::<f64>();
    let lin: f64 = (0..k).map(|j| w[j] as f64 * m[j]).sum();
    let denom: f64 = (0..k).map(|j| (m[j] + v[j] * v[j] / 2.0).exp()).sum::<f64>() + 1.0;
    let sinv = sigma.clone().try_inverse().unwrap();
    let det = sigma.determinant();
    let e = DVector::from_fn(k, |j, _| m[j] - mu[j]);
    let quad = (e.transpose() * &sinv * &e)[(0, 0)];
    let log_det_v: f64 = v.iter().map(|x| (x * x).ln()).sum();
    let tr: f64 = (0..k).map(|j| sinv[(j, j)] * v[j] * v[j]).sum();
    c + lin - total as f64 * denom.ln() + 0.5 * log_det_v + k as f64 / 2.0 - 0.5 * det.ln() - 0.5 * quad - 0.5 * tr
}

/// Cycle-2 bound coded from its definition.
#[allow(clippy::too_many_arguments)]
pub fn elbo2_oracle(
    w: &[u64],
    m: &[f64],
    v: &[f64],
    m_t: &DVector<f64>,
    v_t: &DMatrix<f64>,
    mu: &[f64],
    lambda: &DMatrix<f64>,
    d: &[f64],
) -> f64 {
    let k = m.len();
    let q = lambda.ncols();
    let total: u64 = w.iter().sum();
    let c = ln_fact(total) - w.iter().map(|&x| ln_fact(x)).sum::<f64>();
    let lin: f64 = (0..k).map(|j| w[j] as f64 * m[j]).sum();
    let denom: f64 = (0..k).map(|j| (m[j] + v[j] * v[j] / 2.0).exp()).sum::<f64>() + 1.0;
    let d_inv = DMatrix::from_diagonal(&DVector::from_fn(k, |j, _| 1.0 / d[j]));
    let big_v = DMatrix::from_diagonal(&DVector::from_fn(k, |j, _| v[j] * v[j]));
    let e = DVector::from_fn(k, |j, _| m[j] - mu[j]);
    let ltdl = lambda.transpose() * &d_inv * lambda;
    let log_det_v: f64 = v.iter().map(|x| (x * x).ln()).sum();
    let log_det_d: f64 = d.iter().map(|x| x.ln()).sum();
    let inner = log_det_v + v_t.determinant().ln() + (q + k) as f64
        - log_det_d
        - m_t.dot(m_t)
        - v_t.trace()
        - (&d_inv * (&big_v + &e * e.transpose())).trace()
        + 2.0 * (e.transpose() * &d_inv * lambda * m_t)[(0, 0)]
        - (m_t.transpose() * &ltdl * m_t)[(0, 0)]
        - (&ltdl * v_t).trace();
    c + lin - total as f64 * denom.ln() + 0.5 * inner
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Log marginal probability of `w = (w1, w2)` under a one-dimensional
/// logistic normal multinomial with mean `mu` and variance `s2`, by
/// adaptive quadrature around the mode of the integrand.
pub fn log_marginal_k1(w: [u64; 2], mu: f64, s2: f64) -> f64 {
    let n = (w[0] + w[1]) as f64;
    let log_int = |y: f64| {
        let log1pe = if y > 0.0 { y + (-y).exp().ln_1p() } else { y.exp().ln_1p() };
        w[0] as f64 * y - n * log1pe - 0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (y - mu) * (y - mu) / (2.0 * s2)
    };
    // mode by bisection on the derivative (the integrand is log-concave)
    let deriv = |y: f64| w[0] as f64 - n / (1.0 + (-y).exp()) - (y - mu) / s2;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mode = 0.5 * (lo + hi);
    let peak = log_int(mode);
    let curv = n * 0.25 + 1.0 / s2;
    let width = 40.0 / curv.sqrt();
    let f = |y: f64| (log_int(y) - peak).exp();
    let area = integrate(&f, mode - width, mode + width, 1e-14);
    let c = ln_fact(n as u64) - ln_fact(w[0]) - ln_fact(w[1]);
    c + peak + area.ln()
}

/// Adjusted Rand index by enumerating every pair of observations.
pub fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut pairs) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1.0;
            if sa && sb {
                both += 1.0;
            }
            if sa {
                only_a += 1.0;
            }
            if sb {
                only_b += 1.0;
            }
        }
    }
    let expected = only_a * only_b / pairs;
    let max = 0.5 * (only_a + only_b);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

/// Largest single-step decrease of a trace (negative when it only rises).
pub fn max_drop(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max)
}

/// Maximise a concave function of a few variables by cyclic golden-section
/// searches, keeping each coordinate at or above `lower`. Each bracket is
/// sized from the previous pass's moves.
pub fn coordinate_maximize(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], lower: &[f64]) -> Vec<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x = x0.to_vec();
    let mut radius = vec![2.0; x.len()];
    let mut best = f(&x);
    let mut quiet = 0;
    for _ in 0..20000 {
        let before = best;
        for j in 0..x.len() {
            let eval = |t: f64, x: &mut Vec<f64>| {
                let keep = x[j];
                x[j] = t;
                let val = f(x);
                x[j] = keep;
                val
            };
            let (lo, hi) = ((x[j] - radius[j]).max(lower[j]), x[j] + radius[j]);
            let (mut a, mut b) = (lo, hi);
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            let (mut fc, mut fd) = (eval(c, &mut x), eval(d, &mut x));
            while b - a > 1e-14 * (1.0 + x[j].abs()) {
                if fc > fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = eval(c, &mut x);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = eval(d, &mut x);
                }
            }
            let t = 0.5 * (a + b);
            let ft = eval(t, &mut x);
            let step = (t - x[j]).abs();
            if ft >= best {
                x[j] = t;
                best = ft;
            }
            // an optimum on the bracket edge means the bracket was too small
            let edge = hi - t < 1e-9 || (t - lo < 1e-9 && lo > lower[j]);
            radius[j] = if edge { radius[j] * 4.0 } else { (4.0 * step).clamp(1e-10, 2.0) };
        }
        quiet = if best - before < 1e-15 { quiet + 1 } else { 0 };
        if quiet >= 5 {
            break;
        }
    }
    x
}
