//! Model-level correlation functions and covariance assembly.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CorrelationModel, FieldModel, Lag, LocationSet, PoissonFieldModel, ZipFieldModel};
use crate::specfun::{
    bessel_i0e, bessel_i1e, bvn_upper, normal_cdf, normal_quantile, SeriesControl, Truncator,
};
use crate::table::PoissonTable;

/// Underlying Gaussian correlation `ρ*(h)` at `lag`, nugget included.
pub fn rho_underlying(model: &CorrelationModel, lag: Lag) -> f64 {
    model.rho(lag)
}

/// Correlation of a Poisson field with constant mean `λ` whose underlying
/// correlation at the lag is `rho`:
/// `ρ²[1 - e^{-z}(I₀(z) + I₁(z))]`, `z = 2λ/(1-ρ²)`.
pub fn rho_poisson_stationary(rho: f64, lambda: f64) -> f64 {
    let r2 = rho * rho;
    if r2 >= 1.0 {
        return 1.0;
    }
    if r2 == 0.0 {
        return 0.0;
    }
    let z = 2.0 * lambda / (1.0 - r2);
    let v = r2 * (1.0 - (bessel_i0e(z) + bessel_i1e(z)));
    v.clamp(0.0, r2)
}

/// Correlation between counts with means `λ_i`, `λ_j`:
/// `ρ²(1-ρ²)/√(λ_iλ_j) Σ_{r≥0} γ*(r+1, λ_i/(1-ρ²)) γ*(r+1, λ_j/(1-ρ²))`.
pub fn rho_poisson_nonstationary(
    rho: f64,
    lambda_i: f64,
    lambda_j: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    check_rate("rho_poisson_nonstationary", lambda_i)?;
    check_rate("rho_poisson_nonstationary", lambda_j)?;
    let r2 = rho * rho;
    if r2 >= 1.0 {
        return Ok(1.0);
    }
    if r2 == 0.0 {
        return Ok(0.0);
    }
    let q = 1.0 - r2;
    let (ai, aj) = (lambda_i / q, lambda_j / q);
    let sum = if ai.max(aj) < DIRECT_RATE {
        min_mean_direct(ai, aj, ctrl)?
    } else {
        min_mean_tables(ai, aj, ctrl)?
    };
    let v = r2 * q * sum / (lambda_i * lambda_j).sqrt();
    Ok(v.clamp(0.0, r2))
}

/// Rates below this run the survival recurrences from `e^{-a}` directly.
const DIRECT_RATE: f64 = 600.0;

/// `Σ_{r≥0} P(X_i > r) P(X_j > r)` for independent Poisson variables, i.e.
/// `E min(X_i, X_j)`, by upward recurrences on the masses.
fn min_mean_direct(ai: f64, aj: f64, ctrl: &SeriesControl) -> Result<f64> {
    let (mut pi, mut pj) = ((-ai).exp(), (-aj).exp());
    let (mut si, mut sj) = (-(-ai).exp_m1(), -(-aj).exp_m1());
    let mut trunc = Truncator::new(*ctrl, "rho_poisson_nonstationary");
    let mut sum = 0.0;
    let mut r = 0.0;
    loop {
        let term = si * sj;
        sum += term;
        if term == 0.0 || trunc.done(term, sum)? {
            return Ok(sum);
        }
        r += 1.0;
        pi *= ai / r;
        pj *= aj / r;
        si = (si - pi).max(0.0);
        sj = (sj - pj).max(0.0);
    }
}

fn min_mean_tables(ai: f64, aj: f64, ctrl: &SeriesControl) -> Result<f64> {
    let ti = PoissonTable::new(ai);
    let tj = PoissonTable::new(aj);
    // γ*(r+1, a) = P(X > r); both factors are exactly 1 below the tables' lower ends.
    let start = ti.lo().min(tj.lo());
    let mut sum = start as f64;
    let mut trunc = Truncator::new(*ctrl, "rho_poisson_nonstationary");
    let mut r = start;
    loop {
        let term = ti.sf(r) * tj.sf(r);
        sum += term;
        if term == 0.0 || trunc.done(term, sum)? {
            return Ok(sum);
        }
        r += 1;
    }
}

/// `ρ_N` choosing the closed form when the two means coincide.
pub fn rho_poisson(rho: f64, lambda_i: f64, lambda_j: f64, ctrl: &SeriesControl) -> Result<f64> {
    if lambda_i == lambda_j {
        check_rate("rho_poisson", lambda_i)?;
        Ok(rho_poisson_stationary(rho, lambda_i))
    } else {
        rho_poisson_nonstationary(rho, lambda_i, lambda_j, ctrl)
    }
}

fn check_rate(op: &'static str, lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(op, format!("rate must be positive and finite, got {lambda}")))
    }
}

/// Parameters of the Poisson log-Gaussian comparison model
/// `Y | Z ~ Poisson(Z)`, `Z = exp(μ + σ²G)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LgParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl LgParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "need finite mu and sigma2 > 0, got ({mu}, {sigma2})"
            )));
        }
        Ok(LgParams { mu, sigma2 })
    }

    /// `E(Y) = exp(μ + σ²/2)`.
    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma2).exp()
    }

    /// Size of the jump at the origin: `E(Y)⁻¹ / (E(Y)⁻¹ + e^{σ²} - 1)`.
    pub fn nugget(&self) -> f64 {
        let inv = 1.0 / self.mean();
        inv / (inv + self.sigma2.exp_m1())
    }
}

/// Poisson log-Gaussian correlation at a nonzero lag with underlying
/// correlation `rho`. At lag zero the correlation is 1.
pub fn rho_poisson_lg(rho: f64, p: &LgParams) -> f64 {
    (p.sigma2 * rho).exp_m1() / (p.sigma2.exp_m1() + 1.0 / p.mean())
}

/// Poisson Gaussian-copula correlation `Corr(F⁻¹(Φ(Z_i)), F⁻¹(Φ(Z_j)))` for
/// Poisson(λ) margins.
///
/// Evaluated exactly as `E(C_iC_j) = Σ_{n,m≥0} P(Z_i > t_n, Z_j > t_m)` with
/// thresholds `t_n = Φ⁻¹(P(C ≤ n))`; the integrand of the double integral is
/// a step function, which defeats Gauss–Hermite rules.
pub fn rho_poisson_gc(rho: f64, lambda: f64) -> Result<f64> {
    check_rate("rho_poisson_gc", lambda)?;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::domain("rho_poisson_gc", format!("|rho| must be ≤ 1, got {rho}")));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let thresholds = gc_thresholds(lambda)?;
    let mean: f64 = thresholds.iter().map(|&(_, sf)| sf).sum();
    let second: f64 = thresholds
        .iter()
        .enumerate()
        .map(|(n, &(_, sf))| (2 * n + 1) as f64 * sf)
        .sum();
    let k = thresholds.len();
    let rows: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|n| {
            let tn = thresholds[n].0;
            let mut acc = 0.5 * bvn_upper(tn, tn, rho);
            for &(tm, _) in &thresholds[n + 1..] {
                acc += bvn_upper(tn, tm, rho);
            }
            acc
        })
        .collect();
    let cross = 2.0 * rows.iter().sum::<f64>();
    let var = second - mean * mean;
    Ok((cross - mean * mean) / var)
}

/// `(t_n, P(C > n))` for `n = 0, 1, …` while the survival is representable.
fn gc_thresholds(lambda: f64) -> Result<Vec<(f64, f64)>> {
    let table = PoissonTable::new(lambda);
    let mut out = Vec::new();
    for n in 0..table.end() {
        let sf = table.sf(n);
        if sf < 1e-300 {
            break;
        }
        let cdf = table.cdf(n);
        let t = if cdf < 1e-300 {
            f64::NEG_INFINITY
        } else if cdf < 0.5 {
            normal_quantile(cdf)?
        } else {
            -normal_quantile(sf)?
        };
        out.push((t, sf));
    }
    Ok(out)
}

/// Correlation of the zero-inflated field `Y = B·N` between two sites, from
/// the moments of the independent layers: `E(Y_iY_j) = P(B_i=B_j=1)·E(N_iN_j)`.
///
/// `rho1` and `rho2` are the underlying correlations (nugget included) of the
/// Bernoulli and Poisson layers at the lag.
pub fn rho_zip(
    rho1: f64,
    rho2: f64,
    theta: f64,
    lambda_i: f64,
    lambda_j: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    let (cov, var_i, var_j) = zip_cov_parts(rho1, rho2, theta, lambda_i, lambda_j, ctrl)?;
    Ok(cov / (var_i * var_j).sqrt())
}

fn zip_cov_parts(
    rho1: f64,
    rho2: f64,
    theta: f64,
    lambda_i: f64,
    lambda_j: f64,
    ctrl: &SeriesControl,
) -> Result<(f64, f64, f64)> {
    let p = normal_cdf(theta);
    let keep = 1.0 - p;
    let pi11 = bvn_upper(theta, theta, rho1);
    let rn = rho_poisson(rho2, lambda_i, lambda_j, ctrl)?;
    let cross = pi11 * (lambda_i * lambda_j + rn * (lambda_i * lambda_j).sqrt());
    let cov = cross - keep * keep * lambda_i * lambda_j;
    let var = |l: f64| keep * l * (1.0 + p * l);
    Ok((cov, var(lambda_i), var(lambda_j)))
}

/// Covariance between the observations at `lag` for sites with means
/// `λ_i`, `λ_j` (Poisson-layer means for ZIP).
pub(crate) fn pair_covariance(
    model: &FieldModel,
    lag: Lag,
    lambda_i: f64,
    lambda_j: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    match model {
        FieldModel::Poisson(m) => {
            let rho = m.corr.rho(lag);
            if lag.is_zero() {
                return Ok(lambda_i);
            }
            Ok((lambda_i * lambda_j).sqrt() * rho_poisson(rho, lambda_i, lambda_j, ctrl)?)
        }
        FieldModel::Zip(m) => {
            let rho1 = m.corr_b.rho(lag);
            let rho2 = m.base.corr.rho(lag);
            if lag.is_zero() {
                let p = m.zero_prob();
                return Ok((1.0 - p) * lambda_i * (1.0 + p * lambda_i));
            }
            Ok(zip_cov_parts(rho1, rho2, m.theta, lambda_i, lambda_j, ctrl)?.0)
        }
    }
}

/// Marginal variance of the observation with Poisson-layer mean `λ`.
pub(crate) fn marginal_variance(model: &FieldModel, lambda: f64) -> f64 {
    match model {
        FieldModel::Poisson(_) => lambda,
        FieldModel::Zip(m) => {
            let p = m.zero_prob();
            (1.0 - p) * lambda * (1.0 + p * lambda)
        }
    }
}

/// Covariance matrix `Σ_ij = Cov(Y(s_i), Y(s_j))` of the observed counts.
pub fn build_covariance(
    model: &FieldModel,
    locs: &LocationSet,
    ctrl: &SeriesControl,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    let lambdas = model.base().means();
    if lambdas.len() != locs.len() {
        return Err(Error::InvalidInput(format!(
            "model has {} design rows for {} locations",
            lambdas.len(),
            locs.len()
        )));
    }
    let n = locs.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| {
                    if i == j {
                        Ok(marginal_variance(model, lambdas[i]))
                    } else {
                        pair_covariance(model, locs.lag(i, j), lambdas[i], lambdas[j], ctrl)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Covariance between observed sites (rows) and target sites (columns).
pub fn build_cross_covariance(
    model: &FieldModel,
    locs: &LocationSet,
    lambdas: &[f64],
    targets: &LocationSet,
    target_lambdas: &[f64],
    ctrl: &SeriesControl,
) -> Result<DMatrix<f64>> {
    let cols: Vec<Vec<f64>> = (0..targets.len())
        .into_par_iter()
        .map(|k| {
            (0..locs.len())
                .map(|i| {
                    pair_covariance(model, locs.cross_lag(i, targets, k), lambdas[i], target_lambdas[k], ctrl)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = DMatrix::zeros(locs.len(), targets.len());
    for (k, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            m[(i, k)] = v;
        }
    }
    Ok(m)
}

/// Cholesky factor with escalating diagonal jitter: none, then 1e-10 up to
/// 1e-6 in factors of ten, relative to the mean diagonal.
pub fn cholesky_jittered(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let scale = m.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10;
    while jitter <= 1e-6 * 1.0001 {
        let mut mj = m.clone();
        for i in 0..n {
            mj[(i, i)] += jitter * scale;
        }
        if let Some(c) = Cholesky::new(mj) {
            log::debug!("cholesky of {n}x{n} needed relative jitter {jitter:e}");
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        size: n,
        max_jitter: 1e-6,
    })
}

/// Correlation matrix of the underlying Gaussian field.
pub fn underlying_correlation_matrix(corr: &CorrelationModel, locs: &LocationSet) -> DMatrix<f64> {
    let n = locs.len();
    DMatrix::from_fn(n, n, |i, j| corr.rho(locs.lag(i, j)))
}

/// Poisson covariance with a single shared model, for callers that only have
/// the Poisson parameters.
pub fn poisson_covariance(
    model: &PoissonFieldModel,
    locs: &LocationSet,
    ctrl: &SeriesControl,
) -> Result<DMatrix<f64>> {
    build_covariance(&FieldModel::Poisson(model.clone()), locs, ctrl)
}

/// ZIP covariance.
pub fn zip_covariance(
    model: &ZipFieldModel,
    locs: &LocationSet,
    ctrl: &SeriesControl,
) -> Result<DMatrix<f64>> {
    build_covariance(&FieldModel::Zip(model.clone()), locs, ctrl)
}
