//! Poisson mass, cdf and survival tables over the non-negligible range of a
//! rate, shared by the correlation and bivariate series.

use crate::specfun::ln_poisson_density;

/// Masses below this are treated as zero.
const TINY: f64 = 1e-300;

/// Upper-tail masses below this fraction of the modal mass are dropped.
/// Survival values stay exact to about 1e-16 wherever the mass is above
/// 1e-34 of the mode's, far beyond any count the series are asked about.
const UPPER_CUT: f64 = 1e-50;

#[derive(Debug, Clone)]
pub(crate) struct PoissonTable {
    lo: usize,
    /// `[pmf, P(X ≤ k), P(X > k)]` for `k = lo, lo+1, …`; the cdf is summed
    /// upward and the survival function downward.
    rows: Vec<[f64; 3]>,
}

impl PoissonTable {
    pub(crate) fn new(rate: f64) -> Self {
        debug_assert!(rate > 0.0 && rate.is_finite());
        let mode = rate.floor() as usize;
        let pm = ln_poisson_density(mode as f64, rate).exp();
        let mut rows = Vec::with_capacity(64 + 20 * rate.sqrt() as usize);
        let mut p = pm;
        let mut k = mode;
        while k > 0 {
            p *= k as f64 / rate;
            if p < TINY {
                break;
            }
            rows.push([p, 0.0, 0.0]);
            k -= 1;
        }
        let lo = mode - rows.len();
        rows.reverse();
        rows.push([pm, 0.0, 0.0]);
        let cut = (pm * UPPER_CUT).max(TINY);
        let mut p = pm;
        let mut k = mode;
        loop {
            k += 1;
            p *= rate / k as f64;
            if p < cut {
                break;
            }
            rows.push([p, 0.0, 0.0]);
        }
        let mut acc = 0.0;
        for r in rows.iter_mut() {
            acc += r[0];
            r[1] = acc;
        }
        let mut acc = 0.0;
        for r in rows.iter_mut().rev() {
            r[2] = acc;
            acc += r[0];
        }
        PoissonTable { lo, rows }
    }

    /// First index with non-negligible mass.
    pub(crate) fn lo(&self) -> usize {
        self.lo
    }

    /// One past the last index with non-negligible mass.
    pub(crate) fn end(&self) -> usize {
        self.lo + self.rows.len()
    }

    pub(crate) fn pmf(&self, k: usize) -> f64 {
        if k < self.lo || k >= self.end() {
            0.0
        } else {
            self.rows[k - self.lo][0]
        }
    }

    /// `P(X ≤ k)`.
    pub(crate) fn cdf(&self, k: usize) -> f64 {
        if k < self.lo {
            0.0
        } else if k >= self.end() {
            1.0
        } else {
            self.rows[k - self.lo][1]
        }
    }

    /// `P(X > k)`.
    pub(crate) fn sf(&self, k: usize) -> f64 {
        if k < self.lo {
            1.0
        } else if k >= self.end() {
            0.0
        } else {
            self.rows[k - self.lo][2]
        }
    }

    /// `Q(c, rate) = P(X ≤ c-1)`, the regularized upper incomplete gamma.
    pub(crate) fn upper_gamma(&self, c: usize) -> f64 {
        if c == 0 {
            0.0
        } else {
            self.cdf(c - 1)
        }
    }

    /// `γ*(c, rate) = P(X ≥ c)`, the regularized lower incomplete gamma.
    pub(crate) fn lower_gamma(&self, c: usize) -> f64 {
        if c == 0 {
            1.0
        } else {
            self.sf(c - 1)
        }
    }
}
