//! Scalar special functions and log-space probability kernels.
//!
//! Everything here is a pure function of its arguments. Functions that can
//! overflow for the rates used by the field models (`λ/(1-ρ²)` easily exceeds
//! 10⁵) have a log-space or exponentially scaled form.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const EPS: f64 = f64::EPSILON;

/// Truncation control for the infinite series in the correlation and
/// bivariate-probability formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_terms: usize,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_terms: 1_000_000,
        }
    }
}

impl SeriesControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol >= 0.0) || self.max_terms < 1 {
            return Err(Error::InvalidInput(format!(
                "series control needs rel_tol > 0, abs_tol >= 0, max_terms >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// A truncated series value together with what the truncation achieved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum {
    pub value: f64,
    pub terms: usize,
    /// Magnitude of the last term added; an estimate of the truncation error
    /// for geometrically decaying tails.
    pub last_term: f64,
}

/// Implements the stopping rule shared by every series: stop once the term
/// envelope has been below `max(abs_tol, rel_tol * reference)` for three
/// consecutive terms while decreasing.
#[derive(Debug)]
pub(crate) struct Truncator {
    ctrl: SeriesControl,
    op: &'static str,
    run: usize,
    terms: usize,
    prev: f64,
    last: f64,
}

impl Truncator {
    pub(crate) fn new(ctrl: SeriesControl, op: &'static str) -> Self {
        Truncator {
            ctrl,
            op,
            run: 0,
            terms: 0,
            prev: f64::INFINITY,
            last: f64::INFINITY,
        }
    }

    /// Registers one term. Returns `Ok(true)` once the series may stop.
    pub(crate) fn done(&mut self, envelope: f64, reference: f64) -> Result<bool> {
        self.terms += 1;
        let env = envelope.abs();
        let threshold = self.ctrl.abs_tol.max(self.ctrl.rel_tol * reference.abs());
        if env <= threshold && env <= self.prev {
            self.run += 1;
        } else {
            self.run = 0;
        }
        self.prev = env;
        self.last = env;
        if self.run >= 3 {
            return Ok(true);
        }
        if self.terms >= self.ctrl.max_terms {
            return Err(Error::Truncation {
                op: self.op,
                terms: self.terms,
                last_term: env,
            });
        }
        Ok(false)
    }

    pub(crate) fn terms(&self) -> usize {
        self.terms
    }
}

// ---------------------------------------------------------------------------
// Gamma family
// ---------------------------------------------------------------------------

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln Γ(x+1) - (x+½) ln x + x - ln √(2π)`.
fn stirling_error(x: f64) -> f64 {
    if x >= 10.0 {
        const C: [f64; 8] = [
            1.0 / 12.0,
            -1.0 / 360.0,
            1.0 / 1260.0,
            -1.0 / 1680.0,
            1.0 / 1188.0,
            -691.0 / 360_360.0,
            1.0 / 156.0,
            -3617.0 / 122_400.0,
        ];
        let r = 1.0 / (x * x);
        let mut acc = 0.0;
        for c in C.iter().rev() {
            acc = acc * r + c;
        }
        acc / x
    } else {
        ln_gamma(x + 1.0) - (x + 0.5) * x.ln() + x - LN_SQRT_2PI
    }
}

/// Deviance term `x ln(x/m) + m - x`, computed without cancellation when `x ≈ m`.
fn bd0(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `ln(xᵃ e⁻ˣ / Γ(a+1))` for real `a ≥ 0`, `x > 0`: the log Poisson mass
/// extended to real `a`, evaluated in saddle-point form.
pub(crate) fn ln_poisson_density(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        return -x;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if a < 10.0 {
        return a * x.ln() - x - ln_gamma(a + 1.0);
    }
    -stirling_error(a) - bd0(a, x) - 0.5 * (2.0 * PI * a).ln()
}

/// Log of the Poisson probability mass `e^{-λ} λⁿ / n!`.
pub fn poisson_ln_pmf(n: u64, lambda: f64) -> f64 {
    ln_poisson_density(n as f64, lambda)
}

/// Poisson probability mass `e^{-λ} λⁿ / n!`.
pub fn poisson_pmf(n: u64, lambda: f64) -> f64 {
    poisson_ln_pmf(n, lambda).exp()
}

/// Log of the regularized incomplete gamma pair `(ln P(a,x), ln Q(a,x))`.
fn ln_inc_gamma_pq(a: f64, x: f64) -> Result<(f64, f64)> {
    const OP: &str = "reg_lower_inc_gamma";
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain(OP, format!("shape a must be positive, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(Error::domain(OP, format!("argument x must be nonnegative, got {x}")));
    }
    if x == 0.0 {
        return Ok((f64::NEG_INFINITY, 0.0));
    }
    if x.is_infinite() {
        return Ok((0.0, f64::NEG_INFINITY));
    }
    let max_iter = 100_000 + (50.0 * a.sqrt()) as usize + (10.0 * x.sqrt()) as usize;
    if x < a + 1.0 {
        // P = xᵃe⁻ˣ/Γ(a+1) · Σ xⁿ / ((a+1)…(a+n))
        let mut sum = 1.0;
        let mut del = 1.0;
        let mut ap = a;
        let mut n = 0;
        loop {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            n += 1;
            if del < sum * EPS * 0.5 {
                break;
            }
            if n > max_iter {
                return Err(Error::Truncation {
                    op: OP,
                    terms: n,
                    last_term: del,
                });
            }
        }
        let ln_p = ln_poisson_density(a, x) + sum.ln();
        let ln_q = ln_one_minus_exp(ln_p);
        Ok((ln_p, ln_q))
    } else {
        // Q via the Legendre continued fraction (modified Lentz).
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        let mut i = 1usize;
        loop {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
            i += 1;
            if i > max_iter {
                return Err(Error::Truncation {
                    op: OP,
                    terms: i,
                    last_term: (del - 1.0).abs(),
                });
            }
        }
        let ln_q = ln_poisson_density(a, x) + a.ln() + h.ln();
        let ln_p = ln_one_minus_exp(ln_q);
        Ok((ln_p, ln_q))
    }
}

/// `ln(1 - eˣ)` for `x ≤ 0`.
fn ln_one_minus_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Regularized lower incomplete gamma function `γ*(a,x) = γ(a,x)/Γ(a)`.
///
/// Uses the power series below `x = a + 1` and the continued fraction for
/// the complement above it.
pub fn reg_lower_inc_gamma(a: f64, x: f64) -> Result<f64> {
    Ok(ln_inc_gamma_pq(a, x)?.0.exp())
}

/// `ln γ*(a,x)`, accurate in the lower tail where `γ*` underflows.
pub fn ln_reg_lower_inc_gamma(a: f64, x: f64) -> Result<f64> {
    Ok(ln_inc_gamma_pq(a, x)?.0)
}

/// Regularized upper incomplete gamma function `Γ(a,x)/Γ(a) = 1 - γ*(a,x)`.
pub fn reg_upper_inc_gamma(a: f64, x: f64) -> Result<f64> {
    Ok(ln_inc_gamma_pq(a, x)?.1.exp())
}

/// Product `γ*(a,x)·γ*(a,x₂)` of two regularized lower incomplete gammas
/// sharing a shape parameter.
pub fn reg_inc_gamma_product(a: f64, x: f64, x2: f64) -> Result<f64> {
    let l1 = ln_reg_lower_inc_gamma(a, x)?;
    let l2 = ln_reg_lower_inc_gamma(a, x2)?;
    Ok((l1 + l2).exp())
}

/// Log rising factorial `ln (a)ₖ = ln Γ(a+k) - ln Γ(a)` for `a > 0`.
pub fn pochhammer_log(a: f64, k: u64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::domain(
            "pochhammer_log",
            format!("a must be positive, got {a}"),
        ));
    }
    if k <= 64 {
        Ok((0..k).map(|i| (a + i as f64).ln()).sum())
    } else {
        Ok(ln_gamma(a + k as f64) - ln_gamma(a))
    }
}

// ---------------------------------------------------------------------------
// Bessel functions
// ---------------------------------------------------------------------------

/// Exponentially scaled modified Bessel function `e⁻ˣ Iₙ(x)` for order 0 or 1.
pub fn bessel_i_scaled(order: u32, x: f64) -> Result<f64> {
    if order > 1 {
        return Err(Error::domain(
            "bessel_i_scaled",
            format!("only orders 0 and 1 are supported, got {order}"),
        ));
    }
    if !(x >= 0.0) {
        return Err(Error::domain(
            "bessel_i_scaled",
            format!("x must be nonnegative, got {x}"),
        ));
    }
    Ok(bessel_ie(order, x))
}

pub(crate) fn bessel_i0e(x: f64) -> f64 {
    bessel_ie(0, x.abs())
}

pub(crate) fn bessel_i1e(x: f64) -> f64 {
    bessel_ie(1, x)
}

fn bessel_ie(order: u32, x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else if x < 25.0 {
        bessel_ie_series(order, x)
    } else {
        bessel_ie_asymptotic(order, x)
    }
}

/// Σ (x/2)^{2k+ν} / (k! (k+ν)!), all terms positive.
fn bessel_ie_series(order: u32, x: f64) -> f64 {
    let nu = order as f64;
    let q = 0.25 * x * x;
    let mut term = if order == 0 { 1.0 } else { 0.5 * x };
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + nu));
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    sum * (-x).exp()
}

/// Hankel asymptotic expansion; the smallest term is of order e^{-2x}.
fn bessel_ie_asymptotic(order: u32, x: f64) -> f64 {
    let nu = order as f64;
    let mu = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut k = 0.0f64;
    loop {
        k += 1.0;
        let next = -term * (mu - (2.0 * k - 1.0).powi(2)) / (k * 8.0 * x);
        if next.abs() >= term.abs() || next.abs() < 1e-17 * sum.abs() {
            if next.abs() < term.abs() {
                sum += next;
            }
            break;
        }
        term = next;
        sum += term;
    }
    sum / (2.0 * PI * x).sqrt()
}

// ---------------------------------------------------------------------------
// Confluent hypergeometric
// ---------------------------------------------------------------------------

/// Scaled summation of a series of positive or alternating terms: returns
/// `(ln |Σ|, sign, terms, last_term_relative)`.
fn hyp1f1_reg_scaled(
    a: f64,
    b: f64,
    x: f64,
    ctrl: &SeriesControl,
) -> Result<(f64, f64, usize, f64)> {
    const OP: &str = "reg_confluent_1f1";
    const RESCALE: f64 = 1e280;
    let ln_rescale = RESCALE.ln();
    // term₀ = 1/Γ(b), kept in scaled form.
    let mut log_scale = -ln_gamma(b);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut trunc = Truncator::new(*ctrl, OP);
    let mut k = 0.0;
    // Γ(b) is infinite only for b ≤ 0, excluded by the caller.
    if x == 0.0 || a == 0.0 {
        return Ok((log_scale, 1.0, 1, 0.0));
    }
    loop {
        let ratio = (a + k) * x / ((b + k) * (k + 1.0));
        term *= ratio;
        sum += term;
        k += 1.0;
        if term == 0.0 {
            break;
        }
        if sum.abs() > RESCALE || term.abs() > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            log_scale += ln_rescale;
        }
        let decreasing = ratio.abs() < 1.0;
        if trunc.done(term, sum)? && decreasing {
            break;
        }
    }
    let sign = sum.signum();
    Ok((
        sum.abs().ln() + log_scale,
        sign,
        trunc.terms() + 1,
        (term / sum).abs(),
    ))
}

fn check_1f1_args(b: f64, x: f64) -> Result<()> {
    if !(b > 0.0) {
        return Err(Error::domain(
            "reg_confluent_1f1",
            format!("b must be positive, got {b}"),
        ));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(
            "reg_confluent_1f1",
            format!("x must be finite and nonnegative, got {x}"),
        ));
    }
    Ok(())
}

/// Regularized confluent hypergeometric function
/// `₁F̃₁(a;b;x) = Σₖ (a)ₖ xᵏ / (Γ(b+k) k!)`, truncated per `ctrl`.
///
/// Overflows to `+∞` for large `x`; use [`ln_reg_confluent_1f1`] there.
pub fn reg_confluent_1f1(a: f64, b: f64, x: f64, ctrl: &SeriesControl) -> Result<SeriesSum> {
    check_1f1_args(b, x)?;
    let (ln_abs, sign, terms, last_rel) = hyp1f1_reg_scaled(a, b, x, ctrl)?;
    let value = sign * ln_abs.exp();
    Ok(SeriesSum {
        value,
        terms,
        last_term: last_rel * value.abs(),
    })
}

/// `ln ₁F̃₁(a;b;x)`; requires the series sum to be positive (true for `a ≥ 0`).
pub fn ln_reg_confluent_1f1(a: f64, b: f64, x: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_1f1_args(b, x)?;
    let (ln_abs, sign, _, _) = hyp1f1_reg_scaled(a, b, x, ctrl)?;
    if sign <= 0.0 {
        return Err(Error::domain(
            "ln_reg_confluent_1f1",
            format!("series sum is not positive for a = {a}"),
        ));
    }
    Ok(ln_abs)
}

/// `𝒮(a; b; c, x, x₂) = ₁F̃₁(a;b;x) · γ*(c,x₂)`.
pub fn s_kernel(a: f64, b: f64, c: f64, x: f64, x2: f64, ctrl: &SeriesControl) -> Result<f64> {
    let g = ln_reg_lower_inc_gamma(c, x2)?;
    if g == f64::NEG_INFINITY {
        check_1f1_args(b, x)?;
        return Ok(0.0);
    }
    let (ln_abs, sign, _, _) = hyp1f1_reg_scaled(a, b, x, ctrl)?;
    check_1f1_args(b, x)?;
    Ok(sign * (ln_abs + g).exp())
}

// ---------------------------------------------------------------------------
// Normal and Poisson distribution helpers
// ---------------------------------------------------------------------------

/// Standard normal cdf `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal survival `1 - Φ(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0,1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(
            "normal_quantile",
            format!("p must lie in (0,1), got {p}"),
        ));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    let tail = |q: f64| {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    };
    let mut x = if p < P_LOW {
        tail(p)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail(1.0 - p)
    };
    // One Halley step against the erfc-based cdf; work in the smaller tail.
    let e = if x < 0.0 {
        normal_cdf(x) - p
    } else {
        (1.0 - p) - normal_sf(x)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x -= u / (1.0 + 0.5 * x * u);
    Ok(x)
}

/// Smallest `k` with `P(Poisson(λ) ≤ k) ≥ p`, by cumulative summation of
/// log-space masses.
pub fn poisson_quantile(p: f64, lambda: f64) -> Result<u64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(
            "poisson_quantile",
            format!("p must lie in (0,1), got {p}"),
        ));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(
            "poisson_quantile",
            format!("lambda must be positive and finite, got {lambda}"),
        ));
    }
    // Below k0 the cdf is < 1e-30 and contributes nothing representable.
    let k0 = if lambda < 100.0 {
        0
    } else {
        (lambda - 12.0 * lambda.sqrt()).floor().max(0.0) as u64
    };
    let mut cdf = if k0 == 0 {
        0.0
    } else {
        reg_upper_inc_gamma(k0 as f64, lambda)?
    };
    let mut k = k0;
    loop {
        let pmf = poisson_pmf(k, lambda);
        cdf += pmf;
        if cdf >= p || (k as f64 > lambda && pmf < 1e-300) {
            return Ok(k);
        }
        k += 1;
    }
}

fn gauss_legendre_20() -> &'static ([f64; 10], [f64; 10]) {
    static NODES: OnceLock<([f64; 10], [f64; 10])> = OnceLock::new();
    NODES.get_or_init(|| {
        let (x, w) = gauss_legendre(20);
        let mut xs = [0.0; 10];
        let mut ws = [0.0; 10];
        // keep the positive half; the rule is symmetric
        for (slot, (xi, wi)) in x.iter().zip(&w).filter(|(xi, _)| **xi > 0.0).enumerate() {
            xs[slot] = *xi;
            ws[slot] = *wi;
        }
        (xs, ws)
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `Pₙ`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp;
        loop {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Bivariate standard normal cdf `P(X ≤ x, Y ≤ y)` with correlation `rho`.
pub fn bivariate_normal_cdf(x: f64, y: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::domain(
            "bivariate_normal_cdf",
            format!("|rho| must be < 1, got {rho}"),
        ));
    }
    Ok(bvn_upper(-x, -y, rho))
}

/// Upper orthant `P(X > h, Y > k)`; accepts `|rho| ≤ 1` (degenerate limits
/// are exact). Genz's reduction to a single integral, 20-point
/// Gauss–Legendre in every regime.
pub(crate) fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY {
            1.0
        } else {
            normal_sf(k)
        };
    }
    if k == f64::NEG_INFINITY {
        return normal_sf(h);
    }
    if r == 0.0 {
        return normal_sf(h) * normal_sf(k);
    }
    let (xs, ws) = gauss_legendre_20();
    let tp = 2.0 * PI;
    let mut hk = h * k;
    let mut k = k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = 0.5 * r.asin();
        for (xi, wi) in xs.iter().zip(ws) {
            for s in [1.0 - xi, 1.0 + xi] {
                let sn = (asr * s).sin();
                bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / tp + normal_sf(h) * normal_sf(k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -0.5 * (bs / as_ + hk);
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = tp.sqrt() * normal_sf(b / a);
                bvn -= (-0.5 * hk).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a *= 0.5;
            let mut acc = 0.0;
            for (xi, wi) in xs.iter().zip(ws) {
                for s in [1.0 - xi, 1.0 + xi] {
                    let xs2 = (a * s) * (a * s);
                    let asr = -0.5 * (bs / xs2 + hk);
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs2 * (1.0 + 5.0 * d * xs2);
                        let rs = (1.0 - xs2).sqrt();
                        let ep = (-0.5 * hk * xs2 / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                        acc += wi * asr.exp() * (sp - ep);
                    }
                }
            }
            bvn = (a * acc - bvn) / tp;
        }
        if r > 0.0 {
            bvn += normal_sf(h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                normal_cdf(k) - normal_cdf(h)
            } else {
                normal_sf(h) - normal_sf(k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}
