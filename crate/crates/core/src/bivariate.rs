//! Exact bivariate distributions: Poisson-field count pairs, the
//! zero-inflated extension, the exponential-field densities, and the
//! Gaussian-copula comparison pmf.
//!
//! The Poisson pair probabilities are closed-form series in `q = 1-ρ²`. Each
//! case is evaluated in a regrouped form where every term is a product of a
//! probability weight (Poisson or negative binomial in the summation index)
//! and a bounded factor, so nothing overflows at large `λ/(1-ρ²)`:
//!
//! * `(0,0)`: `Σ_k q ρ^{2k} Q(k+1,a_i) Q(k+1,a_j)`;
//! * `(b,0)`: `Poi(b;λ_i) Σ_s Poi(s; ρ²a_i) E_s[Q(ℓ+1, a_j)]`, where `E_s`
//!   is the expectation under a Pólya urn started from `(1, b)` after `s`
//!   draws;
//! * `(n,n)`: negative-binomial mixtures of `γ*` products plus the tail
//!   sums `U(c) = Σ_{t≥c} ρ^{2(t-c)} Poi(t; a)`;
//! * `(a,b)`, `a>b`: `Poi(a;λ_i) Σ_s Poi(s; ρ²a_i) (E¹_s[γ*(b+ℓ,a_j)] -
//!   E²_s[γ*(b+1+ℓ,a_j)])` with urns started from `(b, a-b+1)` and `(b+1, a-b)`.
//!
//! Here `a_i = λ_i/(1-ρ²)`, `Q` and `γ*` are the regularized upper and lower
//! incomplete gamma functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{
    bessel_i0e, bvn_upper, ln_poisson_density, normal_cdf, normal_quantile, SeriesControl,
    Truncator,
};
use crate::table::PoissonTable;

/// Largest `|ρ|` accepted by the pair probabilities.
pub const MAX_ABS_RHO: f64 = 0.999;

/// Slack allowed before a probability outside `[0,1]` counts as an error.
const CLAMP_SLACK: f64 = 1e-9;

/// `P(N(s_i)=n, N(s_j)=m)` for means `λ_i`, `λ_j` and underlying correlation `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariatePoissonQuery {
    pub n: u64,
    pub m: u64,
    pub lambda_i: f64,
    pub lambda_j: f64,
    pub rho: f64,
}

/// Poisson probability mass `e^{-λ}λⁿ/n!`.
pub fn poisson_marginal_pmf(n: u64, lambda: f64) -> Result<f64> {
    check_rate("poisson_marginal_pmf", lambda)?;
    Ok(ln_poisson_density(n as f64, lambda).exp())
}

fn check_rate(op: &'static str, lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(op, format!("rate must be positive and finite, got {lambda}")))
    }
}

fn check_rho(op: &'static str, rho: f64) -> Result<()> {
    if rho.abs() <= MAX_ABS_RHO {
        Ok(())
    } else {
        Err(Error::domain(
            op,
            format!("|rho| = {} exceeds {MAX_ABS_RHO}; the series cannot be controlled", rho.abs()),
        ))
    }
}

/// Joint probability of a count pair.
pub fn bivariate_pmf(q: &BivariatePoissonQuery, ctrl: &SeriesControl) -> Result<f64> {
    check_rate("bivariate_pmf", q.lambda_i)?;
    check_rate("bivariate_pmf", q.lambda_j)?;
    check_rho("bivariate_pmf", q.rho)?;
    if q.rho == 0.0 {
        return Ok(ln_poisson_density(q.n as f64, q.lambda_i).exp()
            * ln_poisson_density(q.m as f64, q.lambda_j).exp());
    }
    // Canonical orientation: first count ≥ second, ties ordered by rate, so
    // (n,m,λ_i,λ_j) and (m,n,λ_j,λ_i) run identical arithmetic.
    let swap = q.n < q.m || (q.n == q.m && q.lambda_i > q.lambda_j);
    let (n, m, li, lj) = if swap {
        (q.m, q.n, q.lambda_j, q.lambda_i)
    } else {
        (q.n, q.m, q.lambda_i, q.lambda_j)
    };
    PairKernel::new(li, lj, q.rho).pmf(n as usize, m as usize, ctrl)
}

/// Series state shared by all cells of one `(λ_i, λ_j, ρ)` triple.
pub(crate) struct PairKernel {
    li: f64,
    q: f64,
    r2: f64,
    ti: PoissonTable,
    tj: PoissonTable,
}

impl PairKernel {
    /// Requires `0 < |ρ| ≤ MAX_ABS_RHO` and positive finite rates.
    pub(crate) fn new(li: f64, lj: f64, rho: f64) -> Self {
        let r2 = rho * rho;
        let q = 1.0 - r2;
        PairKernel {
            li,
            q,
            r2,
            ti: PoissonTable::new(li / q),
            tj: PoissonTable::new(lj / q),
        }
    }

    /// Cell `(n, m)` with `n ≥ m` (callers orient the pair).
    pub(crate) fn pmf(&self, n: usize, m: usize, ctrl: &SeriesControl) -> Result<f64> {
        debug_assert!(n >= m);
        let v = if n == 0 {
            self.cell_zero(ctrl)?
        } else if m == 0 {
            self.cell_axis(n, ctrl)?
        } else if n == m {
            self.cell_diagonal(n, ctrl)?
        } else {
            self.cell_off_diagonal(n, m, ctrl)?
        };
        finish(v)
    }

    fn cell_zero(&self, ctrl: &SeriesControl) -> Result<f64> {
        let mut trunc = Truncator::new(*ctrl, "bivariate_pmf(0,0)");
        let mut w = self.q;
        let mut sum = 0.0;
        let mut k = 0;
        loop {
            let term = w * self.ti.cdf(k) * self.tj.cdf(k);
            sum += term;
            if trunc.done(term, sum)? {
                return Ok(sum);
            }
            w *= self.r2;
            k += 1;
        }
    }

    /// Weights `Poi(a; λ_i) Poi(s; ρ²a_i)`, `s = 0, 1, …`, in log space.
    fn urn_weights(&self, a: usize) -> impl Iterator<Item = f64> {
        let mu = self.r2 * self.li / self.q;
        let ln_mu = mu.ln();
        let mut lw = ln_poisson_density(a as f64, self.li) - mu;
        let mut s = 0usize;
        std::iter::from_fn(move || {
            if s > 0 {
                lw += ln_mu - (s as f64).ln();
            }
            s += 1;
            Some(lw.exp())
        })
    }

    fn cell_axis(&self, b: usize, ctrl: &SeriesControl) -> Result<f64> {
        let mut urn = Urn::new(1.0, b as f64);
        let mut trunc = Truncator::new(*ctrl, "bivariate_pmf(b,0)");
        let mut sum = 0.0;
        for w in self.urn_weights(b) {
            let e = urn.expect(|l| self.tj.cdf(l));
            sum += w * e;
            if trunc.done(w, sum)? {
                break;
            }
            urn.draw();
        }
        Ok(sum)
    }

    fn cell_off_diagonal(&self, a: usize, b: usize, ctrl: &SeriesControl) -> Result<f64> {
        let mut u1 = Urn::new(b as f64, (a - b + 1) as f64);
        let mut u2 = Urn::new((b + 1) as f64, (a - b) as f64);
        let mut trunc = Truncator::new(*ctrl, "bivariate_pmf(a,b)");
        let mut sum = 0.0;
        for w in self.urn_weights(a) {
            // γ*(b+ℓ) = sf(b+ℓ-1); complement Q(b+ℓ) = cdf(b+ℓ-1)
            let (g1, c1) = u1.expect2(|l| (self.tj.sf(b + l - 1), self.tj.cdf(b + l - 1)));
            let (g2, c2) = u2.expect2(|l| (self.tj.sf(b + l), self.tj.cdf(b + l)));
            let diff = if g1 > 0.5 { c2 - c1 } else { g1 - g2 };
            sum += w * diff;
            if trunc.done(w, sum)? {
                break;
            }
            u1.draw();
            u2.draw();
        }
        Ok(sum)
    }

    fn cell_diagonal(&self, n: usize, ctrl: &SeriesControl) -> Result<f64> {
        let ui = tail_sums(&self.ti, self.r2);
        let uj = tail_sums(&self.tj, self.r2);
        let u = |t: &[f64], c: usize| t.get(c).copied().unwrap_or(0.0);
        let g = |c: usize| self.ti.lower_gamma(c) * self.tj.lower_gamma(c);
        let h = |c: usize| {
            let (a, b) = (self.ti.upper_gamma(c), self.tj.upper_gamma(c));
            a + b - a * b
        };
        // Both negative-binomial weight sequences sum to one, so the γ*γ*
        // difference can be traded for the same difference in 1-γ*γ*, which
        // avoids cancelling two near-unit sums when n sits below both means.
        let complement = g(n) > 0.5;
        let ln_r2 = self.r2.ln();
        let ln_q = self.q.ln();
        let mut lw_n = n as f64 * ln_q;
        let mut lw_n1 = (n + 1) as f64 * ln_q;
        let mut trunc = Truncator::new(*ctrl, "bivariate_pmf(n,n)");
        let mut sum = 0.0;
        let mut k = 0usize;
        loop {
            let c = n + k;
            let w = lw_n.exp();
            let w1 = lw_n1.exp();
            let (gi, gj) = (self.ti.lower_gamma(c), self.tj.lower_gamma(c));
            let cross = u(&ui, c) * gj + gi * u(&uj, c);
            let term = if complement {
                w * (cross + h(c)) - w1 * h(c + 1)
            } else {
                w * (cross - g(c)) + w1 * g(c + 1)
            };
            sum += term;
            let envelope = w * (1.0 + u(&ui, c) + u(&uj, c)) + w1;
            if trunc.done(envelope, sum)? {
                return Ok(sum);
            }
            lw_n += ln_r2 + ((n + k) as f64 / (k + 1) as f64).ln();
            lw_n1 += ln_r2 + ((n + 1 + k) as f64 / (k + 1) as f64).ln();
            k += 1;
        }
    }
}

/// `U(c) = Σ_{t≥c} r2^{t-c} Poi(t)` for `c` over the table range, by the
/// backward recurrence `U(c) = Poi(c) + r2·U(c+1)`.
fn tail_sums(t: &PoissonTable, r2: f64) -> Vec<f64> {
    let end = t.end();
    let mut u = vec![0.0; end];
    let mut acc = 0.0;
    for c in (0..end).rev() {
        acc = t.pmf(c) + r2 * acc;
        u[c] = acc;
    }
    u
}

fn finish(v: f64) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::numerical("bivariate_pmf", "series produced NaN"));
    }
    if v < -CLAMP_SLACK || v > 1.0 + CLAMP_SLACK {
        return Err(Error::numerical(
            "bivariate_pmf",
            format!("probability {v:e} outside [0,1] beyond round-off"),
        ));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Pólya urn over the number `ℓ` of "first-colour" draws: starting weights
/// `x0` (first colour) and `y0`; after `s` draws `π_s(ℓ)` is beta-binomial.
struct Urn {
    x0: f64,
    y0: f64,
    s: usize,
    pi: Vec<f64>,
}

impl Urn {
    fn new(x0: f64, y0: f64) -> Self {
        Urn {
            x0,
            y0,
            s: 0,
            pi: vec![1.0],
        }
    }

    fn draw(&mut self) {
        let s = self.s as f64;
        let tot = self.x0 + self.y0 + s;
        self.pi.push(0.0);
        for l in (0..=self.s).rev() {
            let p = self.pi[l];
            let lf = l as f64;
            self.pi[l + 1] += p * (self.x0 + lf) / tot;
            self.pi[l] = p * (self.y0 + s - lf) / tot;
        }
        self.s += 1;
    }

    fn expect(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.pi.iter().enumerate().map(|(l, p)| p * f(l)).sum()
    }

    fn expect2(&self, f: impl Fn(usize) -> (f64, f64)) -> (f64, f64) {
        self.pi.iter().enumerate().fold((0.0, 0.0), |acc, (l, p)| {
            let (a, b) = f(l);
            (acc.0 + p * a, acc.1 + p * b)
        })
    }
}

/// Log pair probability for the likelihood, reusing one kernel.
pub(crate) fn ln_pair_pmf(
    n: u64,
    m: u64,
    lambda_i: f64,
    lambda_j: f64,
    rho: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    let p = bivariate_pmf(
        &BivariatePoissonQuery {
            n,
            m,
            lambda_i,
            lambda_j,
            rho,
        },
        ctrl,
    )?;
    Ok(p.ln())
}

/// Marginal pmf of the zero-inflated field with structural-zero probability
/// `p = Φ(θ)`.
pub fn zip_marginal_pmf(y: u64, lambda: f64, theta: f64) -> Result<f64> {
    check_rate("zip_marginal_pmf", lambda)?;
    let p = normal_cdf(theta);
    let poi = ln_poisson_density(y as f64, lambda).exp();
    Ok(if y == 0 {
        p + (1.0 - p) * poi
    } else {
        (1.0 - p) * poi
    })
}

/// Parameters of a zero-inflated pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipPairParams {
    pub theta: f64,
    /// Underlying correlation of the Bernoulli layer at the lag.
    pub rho1: f64,
    /// Underlying correlation of the Poisson layer at the lag.
    pub rho2: f64,
    pub lambda_i: f64,
    pub lambda_j: f64,
}

/// Joint pmf of a zero-inflated pair by total probability over the four
/// Bernoulli states `(B_i, B_j)`.
pub fn zip_bivariate_pmf(y_i: u64, y_j: u64, p: &ZipPairParams, ctrl: &SeriesControl) -> Result<f64> {
    check_rate("zip_bivariate_pmf", p.lambda_i)?;
    check_rate("zip_bivariate_pmf", p.lambda_j)?;
    if !(p.rho1.abs() <= 1.0) {
        return Err(Error::domain("zip_bivariate_pmf", format!("|rho1| must be ≤ 1, got {}", p.rho1)));
    }
    let keep = 1.0 - normal_cdf(p.theta);
    // B = 1 exactly when G < 0, G having mean θ.
    let pi11 = bvn_upper(p.theta, p.theta, p.rho1);
    let pi10 = (keep - pi11).max(0.0);
    let pi00 = (1.0 - 2.0 * keep + pi11).max(0.0);
    let mut total = 0.0;
    if pi11 > 0.0 {
        let joint = bivariate_pmf(
            &BivariatePoissonQuery {
                n: y_i,
                m: y_j,
                lambda_i: p.lambda_i,
                lambda_j: p.lambda_j,
                rho: p.rho2,
            },
            ctrl,
        )?;
        total += pi11 * joint;
    }
    if y_j == 0 {
        total += pi10 * ln_poisson_density(y_i as f64, p.lambda_i).exp();
    }
    if y_i == 0 {
        total += pi10 * ln_poisson_density(y_j as f64, p.lambda_j).exp();
    }
    if y_i == 0 && y_j == 0 {
        total += pi00;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Kibble bivariate exponential density of `(W(s_i), W(s_j))` with rates
/// `λ_i`, `λ_j` and underlying correlation `ρ`.
pub fn exp_bivariate_pdf(w_i: f64, w_j: f64, lambda_i: f64, lambda_j: f64, rho: f64) -> Result<f64> {
    check_rate("exp_bivariate_pdf", lambda_i)?;
    check_rate("exp_bivariate_pdf", lambda_j)?;
    if !(w_i > 0.0 && w_j > 0.0) {
        return Err(Error::domain("exp_bivariate_pdf", "arguments must be positive"));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::domain("exp_bivariate_pdf", format!("|rho| must be < 1, got {rho}")));
    }
    let q = 1.0 - rho * rho;
    let z = 2.0 * (rho * rho * lambda_i * lambda_j * w_i * w_j).sqrt() / q;
    let expo = z - (lambda_i * w_i + lambda_j * w_j) / q;
    Ok(lambda_i * lambda_j / q * expo.exp() * bessel_i0e(z))
}

/// Joint density of an exponential field on the line with exponential
/// underlying correlation `exp(-|s-s'|/φ)`; the field is Markov, so the
/// density is a chain of bivariate factors.
pub fn exp_multivariate_pdf_1d(w: &[f64], locs: &[f64], lambda: &[f64], phi: f64) -> Result<f64> {
    const OP: &str = "exp_multivariate_pdf_1d";
    let n = w.len();
    if n == 0 || locs.len() != n || lambda.len() != n {
        return Err(Error::domain(OP, "w, locs and lambda must be non-empty and equally long"));
    }
    if !(phi > 0.0) {
        return Err(Error::domain(OP, format!("range must be positive, got {phi}")));
    }
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::domain(OP, "arguments must be positive"));
    }
    if locs.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::domain(OP, "coordinates must be strictly increasing"));
    }
    for &l in lambda {
        check_rate(OP, l)?;
    }
    let rho: Vec<f64> = locs.windows(2).map(|p| (-(p[1] - p[0]) / phi).exp()).collect();
    let q: Vec<f64> = rho.iter().map(|r| 1.0 - r * r).collect();
    let mut ln_f: f64 = lambda.iter().map(|l| l.ln()).sum();
    if n == 1 {
        return Ok((ln_f - lambda[0] * w[0]).exp());
    }
    for i in 0..n {
        let coef = if i == 0 {
            1.0 / q[0]
        } else if i == n - 1 {
            1.0 / q[n - 2]
        } else {
            (1.0 - rho[i - 1] * rho[i - 1] * rho[i] * rho[i]) / (q[i - 1] * q[i])
        };
        ln_f -= coef * lambda[i] * w[i];
    }
    for i in 0..n - 1 {
        let z = 2.0 * rho[i] * (w[i] * lambda[i] * w[i + 1] * lambda[i + 1]).sqrt() / q[i];
        ln_f += z + bessel_i0e(z).ln() - q[i].ln();
    }
    Ok(ln_f.exp())
}

/// Pair pmf of the Poisson Gaussian-copula field
/// `C(s) = F_λ⁻¹(Φ(Z(s)))`, from rectangle probabilities of the bivariate
/// normal.
pub fn gc_bivariate_pmf(n: u64, m: u64, lambda_i: f64, lambda_j: f64, rho: f64) -> Result<f64> {
    check_rate("gc_bivariate_pmf", lambda_i)?;
    check_rate("gc_bivariate_pmf", lambda_j)?;
    if !(rho.abs() <= 1.0) {
        return Err(Error::domain("gc_bivariate_pmf", format!("|rho| must be ≤ 1, got {rho}")));
    }
    // P(C ≥ k) = P(Z > t_{k-1}), t_{-1} = -∞
    let threshold = |k: u64, l: f64| -> Result<f64> {
        if k == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        let t = PoissonTable::new(l);
        let cdf = t.cdf(k as usize - 1);
        let sf = t.sf(k as usize - 1);
        if sf <= 0.0 {
            Ok(f64::INFINITY)
        } else if cdf <= 0.0 {
            Ok(f64::NEG_INFINITY)
        } else if cdf < 0.5 {
            normal_quantile(cdf)
        } else {
            Ok(-normal_quantile(sf)?)
        }
    };
    let (a0, a1) = (threshold(n, lambda_i)?, threshold(n + 1, lambda_i)?);
    let (b0, b1) = (threshold(m, lambda_j)?, threshold(m + 1, lambda_j)?);
    let v = bvn_upper(a0, b0, rho) - bvn_upper(a1, b0, rho) - bvn_upper(a0, b1, rho)
        + bvn_upper(a1, b1, rho);
    Ok(v.max(0.0))
}

/// Correlation of a count pair computed from the pmf table (moment route),
/// used as a consistency check on the closed forms.
pub fn correlation_from_pmf(
    lambda_i: f64,
    lambda_j: f64,
    rho: f64,
    cap: usize,
    ctrl: &SeriesControl,
) -> Result<f64> {
    let mut e_ij = 0.0;
    for n in 0..=cap {
        for m in 0..=cap {
            if n == 0 || m == 0 {
                continue;
            }
            let p = bivariate_pmf(
                &BivariatePoissonQuery {
                    n: n as u64,
                    m: m as u64,
                    lambda_i,
                    lambda_j,
                    rho,
                },
                ctrl,
            )?;
            e_ij += (n * m) as f64 * p;
        }
    }
    Ok((e_ij - lambda_i * lambda_j) / (lambda_i * lambda_j).sqrt())
}
