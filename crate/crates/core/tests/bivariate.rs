use poisson_field::bivariate::*;
use poisson_field::specfun::{ln_gamma, poisson_quantile, SeriesControl};

fn q(n: u64, m: u64, li: f64, lj: f64, rho: f64) -> BivariatePoissonQuery {
    BivariatePoissonQuery {
        n,
        m,
        lambda_i: li,
        lambda_j: lj,
        rho,
    }
}

fn pmf(n: u64, m: u64, li: f64, lj: f64, rho: f64) -> f64 {
    bivariate_pmf(&q(n, m, li, lj, rho), &SeriesControl::default()).unwrap()
}

fn ln_binom(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let (k, n) = (k as f64, n as f64);
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0) + k * p.ln() + (n - k) * (1.0 - p).ln()
}

fn ln_poi(k: u64, a: f64) -> f64 {
    k as f64 * a.ln() - a - ln_gamma(k as f64 + 1.0)
}

/// Independent route to the pair pmf. A Kibble pair of exponentials is a
/// gamma mixture over a shared geometric index, which makes the two renewal
/// counts Bernoulli(1-ρ²) thinnings of the first Π_i and Π_j points of one
/// marked sequence, with Π ~ Poisson(λ/(1-ρ²)) independent across sites.
fn thinning_oracle(n: u64, m: u64, li: f64, lj: f64, rho: f64) -> f64 {
    let qq = 1.0 - rho * rho;
    let (ai, aj) = (li / qq, lj / qq);
    let cap = |a: f64| (a + 15.0 * a.sqrt() + 40.0) as u64;
    let mut total = 0.0;
    for pi in n..cap(ai) {
        let wi = ln_poi(pi, ai);
        for pj in m..cap(aj) {
            let w = wi + ln_poi(pj, aj);
            let lp = if pi <= pj {
                if m < n {
                    continue;
                }
                ln_binom(n, pi, qq) + ln_binom(m - n, pj - pi, qq)
            } else {
                if n < m {
                    continue;
                }
                ln_binom(m, pj, qq) + ln_binom(n - m, pi - pj, qq)
            };
            total += (w + lp).exp();
        }
    }
    total
}

#[test]
fn matches_thinning_oracle_across_cases() {
    let cases = [
        (1.3, 2.1, 0.6),
        (6.0, 4.0, 0.9),
        (2.0, 2.0, 0.5),
        (0.5, 0.5, 0.1),
        (5.0, 5.0, 0.75),
        (20.0, 20.0, 0.9),
        (0.7, 9.0, 0.3),
    ];
    for &(li, lj, rho) in &cases {
        for n in 0..14u64 {
            for m in 0..14u64 {
                let got = pmf(n, m, li, lj, rho);
                let want = thinning_oracle(n, m, li, lj, rho);
                assert!(
                    (got - want).abs() <= 1e-9 * want + 1e-13,
                    "({n},{m}) λ=({li},{lj}) ρ={rho}: {got:e} vs {want:e}"
                );
            }
        }
    }
}

#[test]
fn frozen_reference_cells() {
    // closed-form series in its original (unregrouped) form, 40 digits
    let cases = [
        ((0, 0, 1.3, 2.1, 0.6), 0.066_115_920_962_925_21),
        ((1, 0, 2.0, 2.0, 0.5), 0.036_484_341_057_043_05),
        ((3, 1, 6.0, 4.0, 0.9), 0.015_092_558_514_061_584),
        ((2, 2, 1.3, 2.1, 0.6), 0.078_998_564_222_408_08),
    ];
    let tight = SeriesControl {
        rel_tol: 1e-15,
        ..SeriesControl::default()
    };
    for ((n, m, li, lj, r), want) in cases {
        let got = bivariate_pmf(&q(n, m, li, lj, r), &tight).unwrap();
        let oracle = thinning_oracle(n, m, li, lj, r);
        assert!((got - oracle).abs() < 1e-12 * oracle, "{got} vs oracle {oracle}");
        assert!((got - want).abs() < 1e-10 * want, "{got} vs frozen {want}");
    }
}

#[test]
fn symmetry_is_exact() {
    for &(li, lj, rho) in &[(1.3, 2.1, 0.6), (4.0, 9.0, 0.85), (3.0, 3.0, 0.4)] {
        for n in 0..=15u64 {
            for m in 0..=15u64 {
                assert_eq!(pmf(n, m, li, lj, rho), pmf(m, n, lj, li, rho));
            }
        }
    }
}

#[test]
fn independence_factorizes() {
    for n in 0..10u64 {
        for m in 0..10u64 {
            let got = pmf(n, m, 2.0, 3.0, 0.0);
            let want = poisson_marginal_pmf(n, 2.0).unwrap() * poisson_marginal_pmf(m, 3.0).unwrap();
            assert!((got - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn normalization_and_marginals() {
    let (li, lj, rho) = (5.0, 5.0, 0.5);
    let k = poisson_quantile(1.0 - 1e-9, 5.0).unwrap() + 10;
    let mut total = 0.0;
    for n in 0..=k {
        let mut row = 0.0;
        for m in 0..=k {
            row += pmf(n, m, li, lj, rho);
        }
        let marg = poisson_marginal_pmf(n, li).unwrap();
        assert!((row - marg).abs() <= 1e-7, "row {n}: {row} vs {marg}");
        total += row;
    }
    assert!(total >= 1.0 - 1e-6 && total <= 1.0 + 1e-9, "total {total}");
}

#[test]
fn moment_correlation_matches_closed_form() {
    let ctrl = SeriesControl::default();
    for &(l, rho) in &[(2.0, 0.5), (5.0, 0.9), (0.5, 0.1)] {
        let cap = poisson_quantile(1.0 - 1e-12, l).unwrap() as usize + 15;
        let got = correlation_from_pmf(l, l, rho, cap, &ctrl).unwrap();
        let want = poisson_field::correlation::rho_poisson_stationary(rho, l);
        assert!((got - want).abs() < 1e-6, "λ={l} ρ={rho}: {got} vs {want}");
    }
}

#[test]
fn large_rates_stay_finite() {
    let ctrl = SeriesControl::default();
    for &(n, m) in &[(0u64, 0u64), (1000, 0), (990, 990), (1010, 985)] {
        let v = bivariate_pmf(&q(n, m, 1000.0, 1000.0, 0.9), &ctrl).unwrap();
        assert!(v.is_finite() && (0.0..=1.0).contains(&v));
    }
}

#[test]
fn zip_degenerates_to_poisson() {
    let ctrl = SeriesControl::default();
    let p = ZipPairParams {
        theta: -8.0,
        rho1: 0.4,
        rho2: 0.6,
        lambda_i: 2.0,
        lambda_j: 3.0,
    };
    for yi in 0..8 {
        for yj in 0..8 {
            let z = zip_bivariate_pmf(yi, yj, &p, &ctrl).unwrap();
            let b = pmf(yi, yj, 2.0, 3.0, 0.6);
            assert!((z - b).abs() < 1e-6);
        }
        let zm = zip_marginal_pmf(yi, 2.0, -8.0).unwrap();
        assert!((zm - poisson_marginal_pmf(yi, 2.0).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn zip_independent_layers_factorize() {
    let ctrl = SeriesControl::default();
    let p = ZipPairParams {
        theta: 0.3,
        rho1: 0.0,
        rho2: 0.0,
        lambda_i: 2.0,
        lambda_j: 1.5,
    };
    for yi in 0..8 {
        for yj in 0..8 {
            let z = zip_bivariate_pmf(yi, yj, &p, &ctrl).unwrap();
            let want = zip_marginal_pmf(yi, 2.0, 0.3).unwrap() * zip_marginal_pmf(yj, 1.5, 0.3).unwrap();
            assert!((z - want).abs() < 1e-10);
        }
    }
}

#[test]
fn zip_pair_is_normalized() {
    let ctrl = SeriesControl::default();
    let p = ZipPairParams {
        theta: 0.0,
        rho1: 0.5,
        rho2: 0.5,
        lambda_i: 2.0,
        lambda_j: 2.0,
    };
    let mut total = 0.0;
    for yi in 0..25 {
        for yj in 0..25 {
            total += zip_bivariate_pmf(yi, yj, &p, &ctrl).unwrap();
        }
    }
    assert!((total - 1.0).abs() < 1e-8);
}

/// Simpson's rule on [0, top] with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, top: f64, n: usize) -> f64 {
    let h = top / n as f64;
    let mut s = f(0.0) + f(top);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn exponential_pair_density_integrates_to_one() {
    let (li, lj, rho) = (2.0, 3.0, 0.6);
    let f = |wi: f64, wj: f64| exp_bivariate_pdf(wi.max(1e-300), wj.max(1e-300), li, lj, rho).unwrap();
    let marg = |wi: f64| simpson(|wj| f(wi, wj), 30.0 / lj, 2000);
    let total = simpson(marg, 30.0 / li, 2000);
    assert!((total - 1.0).abs() < 1e-6, "total {total}");
    for &wi in &[0.1, 0.5, 1.4] {
        let want = li * (-li * wi).exp();
        assert!((marg(wi) - want).abs() < 1e-6, "marginal at {wi}");
    }
}

#[test]
fn chain_density_collapses_and_marginalizes() {
    let locs = [0.0, 0.4, 1.1];
    let lam = [2.0, 3.0, 1.5];
    let phi = 0.8;
    let rho01 = (-0.4f64 / phi).exp();
    let two = exp_multivariate_pdf_1d(&[0.3, 0.7], &locs[..2], &lam[..2], phi).unwrap();
    let pair = exp_bivariate_pdf(0.3, 0.7, 2.0, 3.0, rho01).unwrap();
    assert!((two - pair).abs() < 1e-12 * pair);
    // integrating out the last site of a Markov chain leaves the first two
    let w = [0.3, 0.7];
    let m = simpson(
        |w3| exp_multivariate_pdf_1d(&[w[0], w[1], w3.max(1e-300)], &locs, &lam, phi).unwrap(),
        40.0 / lam[2],
        4000,
    );
    assert!((m - pair).abs() < 1e-6 * pair, "{m} vs {pair}");
}

#[test]
fn gaussian_copula_pmf_is_a_pmf() {
    let mut total = 0.0;
    for n in 0..30 {
        let mut row = 0.0;
        for m in 0..30 {
            row += gc_bivariate_pmf(n, m, 3.0, 3.0, 0.6).unwrap();
        }
        assert!((row - poisson_marginal_pmf(n, 3.0).unwrap()).abs() < 1e-9);
        total += row;
    }
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn domain_errors() {
    let ctrl = SeriesControl::default();
    assert!(bivariate_pmf(&q(1, 1, -1.0, 2.0, 0.5), &ctrl).is_err());
    assert!(bivariate_pmf(&q(1, 1, 1.0, 2.0, 0.9991), &ctrl).is_err());
    assert!(exp_bivariate_pdf(-0.1, 1.0, 1.0, 1.0, 0.2).is_err());
    assert!(exp_multivariate_pdf_1d(&[1.0, 1.0], &[1.0, 0.5], &[1.0, 1.0], 1.0).is_err());
}
