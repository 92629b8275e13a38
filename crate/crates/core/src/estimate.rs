//! Weighted pairwise-likelihood fitting of Poisson and zero-inflated fields,
//! the misspecified Gaussian baselines, and standard errors.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bivariate::{ln_pair_pmf, zip_bivariate_pmf, ZipPairParams};
use crate::correlation::{build_covariance, rho_poisson};
use crate::error::{Error, Result};
use crate::model::{
    linear_predictor, CorrelationModel, Family, FieldModel, LocationSet, PoissonFieldModel, SeedSpec,
    ZipFieldModel,
};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::pairs::{weighted_pairs, Pair, PairWeights};
use crate::simulate::{PoissonSampler, ZipSampler};
use crate::specfun::{normal_cdf, normal_quantile, SeriesControl};

/// Pairs per parallel chunk; partial sums are combined in chunk order.
const CHUNK: usize = 64;

/// Largest problem the dense Gaussian likelihood accepts.
const MAX_ML_SITES: usize = 5000;

/// Observed counts with their locations and design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitData {
    pub locs: LocationSet,
    pub counts: Vec<u64>,
    /// One row per location; first column is the constant 1.
    pub design: Vec<Vec<f64>>,
}

impl FitData {
    pub fn new(locs: LocationSet, counts: Vec<u64>, design: Vec<Vec<f64>>) -> Result<Self> {
        let d = FitData { locs, counts, design };
        d.validate()?;
        Ok(d)
    }

    pub fn intercept_only(locs: LocationSet, counts: Vec<u64>) -> Result<Self> {
        let n = locs.len();
        Self::new(locs, counts, vec![vec![1.0]; n])
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.design.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.locs.len();
        if n == 0 {
            return Err(Error::InvalidInput("no observations".into()));
        }
        if self.counts.len() != n || self.design.len() != n {
            return Err(Error::InvalidInput(format!(
                "{n} locations, {} counts, {} design rows",
                self.counts.len(),
                self.design.len()
            )));
        }
        let p = self.n_covariates();
        if p == 0 || self.design.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidInput("design rows must share a nonzero width".into()));
        }
        Ok(())
    }

    /// Observations at the given indices.
    pub fn subset(&self, idx: &[usize]) -> FitData {
        FitData {
            locs: self.locs.subset(idx),
            counts: idx.iter().map(|&i| self.counts[i]).collect(),
            design: idx.iter().map(|&i| self.design[i].clone()).collect(),
        }
    }
}

/// Model parameters in natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub family: Family,
    pub beta: Vec<f64>,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_t: Option<f64>,
    /// Nugget of the Poisson layer.
    #[serde(default)]
    pub nugget: f64,
    /// Bernoulli-layer mean; present exactly for zero-inflated models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Nugget of the Bernoulli layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nugget_b: Option<f64>,
}

impl ParameterVector {
    pub fn corr(&self) -> CorrelationModel {
        CorrelationModel {
            family: self.family,
            alpha: self.alpha,
            nugget: self.nugget,
            alpha_t: self.alpha_t,
        }
    }

    /// Bernoulli-layer correlation: same family and ranges, own nugget.
    pub fn corr_b(&self) -> CorrelationModel {
        CorrelationModel {
            nugget: self.nugget_b.unwrap_or(0.0),
            ..self.corr()
        }
    }

    pub fn poisson_model(&self, design: Vec<Vec<f64>>) -> Result<PoissonFieldModel> {
        PoissonFieldModel::new(self.beta.clone(), design, self.corr())
    }

    pub fn field_model(&self, design: Vec<Vec<f64>>) -> Result<FieldModel> {
        let base = self.poisson_model(design)?;
        Ok(match self.theta {
            None => FieldModel::Poisson(base),
            Some(theta) => FieldModel::Zip(ZipFieldModel {
                base,
                theta,
                corr_b: self.corr_b(),
            }),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.corr().validate()?;
        self.corr_b().validate()?;
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("beta must be nonempty and finite".into()));
        }
        if self.theta.is_some_and(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("theta must be finite".into()));
        }
        Ok(())
    }

    fn rates(&self, design: &[Vec<f64>]) -> Vec<f64> {
        design.iter().map(|x| linear_predictor(x, &self.beta).exp()).collect()
    }
}

/// Which likelihood a fit maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PoissonWpl,
    GaussianWpl,
    GaussianMl,
    ZipWpl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::PoissonWpl => "poisson_wpl",
            Method::GaussianWpl => "gaussian_wpl",
            Method::GaussianMl => "gaussian_ml",
            Method::ZipWpl => "zip_wpl",
        }
    }

    pub fn uses_pairs(self) -> bool {
        self != Method::GaussianMl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub family: Family,
    pub weights: PairWeights,
    /// Estimate the nugget(s) instead of holding them at their initial value.
    #[serde(default)]
    pub estimate_nugget: bool,
    #[serde(default)]
    pub init: Option<ParameterVector>,
    #[serde(default)]
    pub optimizer: NelderMeadConfig,
    #[serde(default)]
    pub series: SeriesControl,
}

impl FitConfig {
    pub fn new(family: Family, weights: PairWeights) -> Self {
        FitConfig {
            family,
            weights,
            estimate_nugget: false,
            init: None,
            optimizer: NelderMeadConfig::default(),
            series: SeriesControl::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub estimate: ParameterVector,
    /// Maximized log (pairwise) likelihood.
    pub objective: f64,
    pub n_pairs_used: usize,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Names of the free parameters, in the order of `std_errors`.
    pub parameter_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
}

impl FitResult {
    /// Free parameters in natural scale, ordered as `parameter_names`.
    pub fn values(&self) -> Vec<f64> {
        layout_of(&self.estimate, self.parameter_names.iter().any(|n| n == "nugget")).natural(&self.estimate)
    }
}

/// Map between natural parameters and the unconstrained optimizer scale:
/// identity for β and θ, log for ranges, logit for nuggets.
#[derive(Debug, Clone)]
struct Layout {
    p: usize,
    family: Family,
    space_time: bool,
    nugget: bool,
    zip: bool,
    fixed: ParameterVector,
}

#[derive(Clone, Copy)]
enum Tf {
    Id,
    Log,
    Logit,
}

impl Tf {
    fn fwd(self, v: f64) -> f64 {
        match self {
            Tf::Id => v,
            Tf::Log => v.ln(),
            Tf::Logit => (v / (1.0 - v)).ln(),
        }
    }

    fn back(self, x: f64) -> f64 {
        match self {
            Tf::Id => x,
            Tf::Log => x.exp(),
            Tf::Logit => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// d(natural)/dx.
    fn slope(self, x: f64) -> f64 {
        match self {
            Tf::Id => 1.0,
            Tf::Log => x.exp(),
            Tf::Logit => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }

    fn step(self) -> f64 {
        match self {
            Tf::Id => 0.1,
            Tf::Log => 0.25,
            Tf::Logit => 0.5,
        }
    }
}

fn layout_of(pv: &ParameterVector, nugget: bool) -> Layout {
    Layout {
        p: pv.beta.len(),
        family: pv.family,
        space_time: pv.family == Family::SeparableSpaceTimeWendland,
        nugget,
        zip: pv.theta.is_some(),
        fixed: pv.clone(),
    }
}

impl Layout {
    fn slots(&self) -> Vec<(String, Tf)> {
        let mut s: Vec<(String, Tf)> = (0..self.p).map(|k| (format!("beta{k}"), Tf::Id)).collect();
        s.push(("alpha".into(), Tf::Log));
        if self.space_time {
            s.push(("alpha_t".into(), Tf::Log));
        }
        if self.nugget {
            s.push(("nugget".into(), Tf::Logit));
        }
        if self.zip {
            s.push(("theta".into(), Tf::Id));
            if self.nugget {
                s.push(("nugget_b".into(), Tf::Logit));
            }
        }
        s
    }

    fn names(&self) -> Vec<String> {
        self.slots().into_iter().map(|s| s.0).collect()
    }

    fn natural(&self, pv: &ParameterVector) -> Vec<f64> {
        let mut v = pv.beta.clone();
        v.push(pv.alpha);
        if self.space_time {
            v.push(pv.alpha_t.unwrap_or(f64::NAN));
        }
        if self.nugget {
            v.push(pv.nugget);
        }
        if self.zip {
            v.push(pv.theta.unwrap_or(f64::NAN));
            if self.nugget {
                v.push(pv.nugget_b.unwrap_or(0.0));
            }
        }
        v
    }

    fn to_x(&self, pv: &ParameterVector) -> Vec<f64> {
        self.natural(pv)
            .into_iter()
            .zip(self.slots())
            .map(|(v, (_, t))| t.fwd(v))
            .collect()
    }

    fn from_x(&self, x: &[f64]) -> ParameterVector {
        let slots = self.slots();
        let nat: Vec<f64> = x.iter().zip(&slots).map(|(&v, (_, t))| t.back(v)).collect();
        let mut it = nat.into_iter();
        let mut pv = self.fixed.clone();
        pv.family = self.family;
        pv.beta = (0..self.p).map(|_| it.next().unwrap()).collect();
        pv.alpha = it.next().unwrap();
        if self.space_time {
            pv.alpha_t = it.next();
        }
        if self.nugget {
            pv.nugget = it.next().unwrap();
        }
        if self.zip {
            pv.theta = it.next();
            if self.nugget {
                pv.nugget_b = it.next();
            }
        }
        pv
    }

    fn steps(&self) -> Vec<f64> {
        self.slots().iter().map(|(_, t)| t.step()).collect()
    }

    fn slopes(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.slots()).map(|(&v, (_, t))| t.slope(v)).collect()
    }
}

/// Sum over chunks of pairs, combined in fixed order.
fn pair_sum(pairs: &[Pair], f: impl Fn(&Pair) -> Result<f64> + Sync) -> Result<f64> {
    let parts: Vec<f64> = pairs
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(&f).sum::<Result<f64>>())
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.into_iter().sum())
}

fn check_params(pv: &ParameterVector, data: &FitData) -> Result<()> {
    data.validate()?;
    pv.validate()?;
    if pv.beta.len() != data.n_covariates() {
        return Err(Error::InvalidInput(format!(
            "beta has {} entries, design has {} columns",
            pv.beta.len(),
            data.n_covariates()
        )));
    }
    Ok(())
}

fn pairs_for(data: &FitData, weights: &PairWeights) -> Result<Vec<Pair>> {
    let pairs = weighted_pairs(&data.locs, weights)?;
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    Ok(pairs)
}

fn poisson_pl(pv: &ParameterVector, data: &FitData, pairs: &[Pair], ctrl: &SeriesControl) -> Result<f64> {
    let lam = pv.rates(&data.design);
    let corr = pv.corr();
    match pv.theta {
        None => pair_sum(pairs, |p| {
            ln_pair_pmf(data.counts[p.i], data.counts[p.j], lam[p.i], lam[p.j], corr.rho(p.lag), ctrl)
        }),
        Some(theta) => {
            let corr_b = pv.corr_b();
            pair_sum(pairs, |p| {
                let zp = ZipPairParams {
                    theta,
                    rho1: corr_b.rho(p.lag),
                    rho2: corr.rho(p.lag),
                    lambda_i: lam[p.i],
                    lambda_j: lam[p.j],
                };
                Ok(zip_bivariate_pmf(data.counts[p.i], data.counts[p.j], &zp, ctrl)?.ln())
            })
        }
    }
}

/// Log pairwise likelihood `Σ_{i<j, ζ_ij=1} log p(n_i, n_j)`, using the
/// zero-inflated pair law when `params.theta` is set.
pub fn wpl_objective(
    params: &ParameterVector,
    data: &FitData,
    weights: &PairWeights,
    ctrl: &SeriesControl,
) -> Result<f64> {
    check_params(params, data)?;
    poisson_pl(params, data, &pairs_for(data, weights)?, ctrl)
}

fn ln_bvn_density(x: f64, y: f64, r: f64) -> f64 {
    let q = 1.0 - r * r;
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * q.ln() - (x * x - 2.0 * r * x * y + y * y) / (2.0 * q)
}

fn gaussian_pl(pv: &ParameterVector, data: &FitData, pairs: &[Pair], ctrl: &SeriesControl) -> Result<f64> {
    let lam = pv.rates(&data.design);
    let corr = pv.corr();
    pair_sum(pairs, |p| {
        let (li, lj) = (lam[p.i], lam[p.j]);
        let r = rho_poisson(corr.rho(p.lag), li, lj, ctrl)?;
        let x = (data.counts[p.i] as f64 - li) / li.sqrt();
        let y = (data.counts[p.j] as f64 - lj) / lj.sqrt();
        Ok(ln_bvn_density(x, y, r) - 0.5 * (li * lj).ln())
    })
}

/// Pairwise likelihood of bivariate normal kernels with the Poisson field's
/// means, variances and correlations.
pub fn gaussian_wpl_objective(
    params: &ParameterVector,
    data: &FitData,
    weights: &PairWeights,
    ctrl: &SeriesControl,
) -> Result<f64> {
    check_params(params, data)?;
    gaussian_pl(params, data, &pairs_for(data, weights)?, ctrl)
}

/// Full multivariate normal log-likelihood with mean `λ` and the Poisson
/// field's covariance; `-∞` when the covariance does not factor.
pub fn gaussian_ml_objective(params: &ParameterVector, data: &FitData, ctrl: &SeriesControl) -> Result<f64> {
    check_params(params, data)?;
    if data.len() > MAX_ML_SITES {
        return Err(Error::InvalidInput(format!(
            "dense likelihood limited to {MAX_ML_SITES} sites, got {}",
            data.len()
        )));
    }
    let model = FieldModel::Poisson(params.poisson_model(data.design.clone())?);
    let sigma = build_covariance(&model, &data.locs, ctrl)?;
    let Some(chol) = Cholesky::new(sigma) else {
        return Ok(f64::NEG_INFINITY);
    };
    let lam = params.rates(&data.design);
    let resid = DVector::from_iterator(data.len(), data.counts.iter().zip(&lam).map(|(&c, l)| c as f64 - l));
    let z = chol.l().solve_lower_triangular(&resid).expect("cholesky factor has a positive diagonal");
    let logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let n = data.len() as f64;
    Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + z.norm_squared()))
}

/// Independence Poisson regression by iteratively reweighted least squares.
pub fn poisson_irls(design: &[Vec<f64>], counts: &[u64]) -> Result<Vec<f64>> {
    let n = design.len();
    let p = design.first().map_or(0, |r| r.len());
    if n == 0 || p == 0 || counts.len() != n {
        return Err(Error::InvalidInput("IRLS needs matching nonempty design and counts".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, k| design[i][k]);
    let y = DVector::from_iterator(n, counts.iter().map(|&c| c as f64));
    let ybar = y.mean();
    let mut beta = DVector::zeros(p);
    beta[0] = (ybar + 0.1).ln();
    for _ in 0..50 {
        let eta = &x * &beta;
        let mu = eta.map(f64::exp);
        let z = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / mu[i]);
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for i in 0..n {
            let row = x.row(i);
            xtwx += mu[i] * row.transpose() * row;
            xtwz += mu[i] * z[i] * row.transpose();
        }
        let Some(next) = xtwx.cholesky().map(|c| c.solve(&xtwz)) else {
            return Err(Error::numerical("poisson_irls", "singular weighted design"));
        };
        let change = (&next - &beta).amax();
        beta = next;
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::numerical("poisson_irls", "diverged (all-zero counts?)"));
        }
        if change < 1e-10 {
            break;
        }
    }
    Ok(beta.iter().copied().collect())
}

/// 25th percentile of a sample, ignoring zeros.
fn lower_quartile(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|d| *d > 0.0);
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 4])
}

/// Starting values: IRLS for β, lower-quartile distance (and time lag) for
/// the ranges, 0.1 for estimated nuggets, and the zero-excess probit for θ.
pub fn default_init(method: Method, data: &FitData, cfg: &FitConfig) -> Result<ParameterVector> {
    data.validate()?;
    let n = data.len();
    // a strided subsample keeps this quadratic scan cheap on large inputs
    let stride = n.div_ceil(2000).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut dists = Vec::new();
    let mut tlags = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[..a] {
            let lag = data.locs.lag(i, j);
            dists.push(lag.h);
            if let Some(t) = lag.t_lag {
                tlags.push(t);
            }
        }
    }
    let alpha = lower_quartile(dists).unwrap_or(1.0);
    let alpha_t = (cfg.family == Family::SeparableSpaceTimeWendland).then(|| lower_quartile(tlags).unwrap_or(1.0));
    let nug = if cfg.estimate_nugget { 0.1 } else { 0.0 };
    let mut beta = poisson_irls(&data.design, &data.counts)?;
    let mut theta = None;
    let mut nugget_b = None;
    if method == Method::ZipWpl {
        // moment match: zero share z = p + (1-p)e^{-λ}, mean = (1-p)λ
        let mean = data.counts.iter().sum::<u64>() as f64 / n as f64;
        let zero = data.counts.iter().filter(|&&c| c == 0).count() as f64 / n as f64;
        let mut p: f64 = 0.0;
        for _ in 0..200 {
            let lam = mean / (1.0 - p);
            let e = (-lam).exp();
            p = ((zero - e) / (1.0 - e)).clamp(0.01, 0.99);
        }
        beta[0] -= (1.0 - p).ln();
        theta = Some(normal_quantile(p)?);
        nugget_b = Some(nug);
    }
    Ok(ParameterVector {
        family: cfg.family,
        beta,
        alpha,
        alpha_t,
        nugget: nug,
        theta,
        nugget_b,
    })
}

/// Objective bound to one data set, for the optimizer and the sandwich.
struct Bound<'a> {
    method: Method,
    data: &'a FitData,
    pairs: Vec<Pair>,
    ctrl: SeriesControl,
}

impl<'a> Bound<'a> {
    fn new(method: Method, data: &'a FitData, cfg: &FitConfig) -> Result<Self> {
        let pairs = if method.uses_pairs() {
            pairs_for(data, &cfg.weights)?
        } else {
            Vec::new()
        };
        Ok(Bound {
            method,
            data,
            pairs,
            ctrl: cfg.series,
        })
    }

    fn eval(&self, pv: &ParameterVector) -> Result<f64> {
        match self.method {
            Method::PoissonWpl | Method::ZipWpl => poisson_pl(pv, self.data, &self.pairs, &self.ctrl),
            Method::GaussianWpl => gaussian_pl(pv, self.data, &self.pairs, &self.ctrl),
            Method::GaussianMl => gaussian_ml_objective(pv, self.data, &self.ctrl),
        }
    }

    fn eval_x(&self, lay: &Layout, x: &[f64]) -> f64 {
        let pv = lay.from_x(x);
        match pv.validate().and_then(|_| self.eval(&pv)) {
            Ok(v) => v,
            Err(e) => {
                log::trace!("objective rejected {x:?}: {e}");
                f64::NEG_INFINITY
            }
        }
    }
}

/// Maximizes the chosen likelihood with Nelder–Mead over transformed
/// parameters. Non-convergence is flagged in the result, not raised.
pub fn fit(method: Method, data: &FitData, cfg: &FitConfig) -> Result<FitResult> {
    data.validate()?;
    if data.len() < 30 {
        log::warn!("fitting with only {} observations", data.len());
    }
    let mut init = match &cfg.init {
        Some(pv) => pv.clone(),
        None => default_init(method, data, cfg)?,
    };
    init.family = cfg.family;
    match method {
        Method::ZipWpl if init.theta.is_none() => {
            init.theta = default_init(method, data, cfg)?.theta;
        }
        Method::ZipWpl => {}
        _ => {
            init.theta = None;
            init.nugget_b = None;
        }
    }
    if method == Method::ZipWpl && init.nugget_b.is_none() {
        init.nugget_b = Some(init.nugget);
    }
    if cfg.estimate_nugget {
        init.nugget = init.nugget.clamp(1e-3, 0.999);
        init.nugget_b = init.nugget_b.map(|v| v.clamp(1e-3, 0.999));
    }
    check_params(&init, data)?;
    let bound = Bound::new(method, data, cfg)?;
    let lay = layout_of(&init, cfg.estimate_nugget);
    let x0 = lay.to_x(&init);
    let r = nelder_mead(|x| -bound.eval_x(&lay, x), &x0, &lay.steps(), &cfg.optimizer);
    if !r.f.is_finite() {
        return Err(Error::numerical("fit", "objective is not finite anywhere the optimizer looked"));
    }
    if !r.converged {
        log::warn!("{method:?} fit stopped after {} evaluations without converging", r.evals);
    }
    Ok(FitResult {
        method,
        estimate: lay.from_x(&r.x),
        objective: -r.f,
        n_pairs_used: bound.pairs.len(),
        converged: r.converged,
        iterations: r.iterations,
        evaluations: r.evals,
        parameter_names: lay.names(),
        std_errors: None,
    })
}

pub fn fit_poisson_wpl(data: &FitData, cfg: &FitConfig) -> Result<FitResult> {
    fit(Method::PoissonWpl, data, cfg)
}

pub fn fit_gaussian_wpl(data: &FitData, cfg: &FitConfig) -> Result<FitResult> {
    fit(Method::GaussianWpl, data, cfg)
}

pub fn fit_gaussian_ml(data: &FitData, cfg: &FitConfig) -> Result<FitResult> {
    fit(Method::GaussianMl, data, cfg)
}

pub fn fit_zip_wpl(data: &FitData, cfg: &FitConfig) -> Result<FitResult> {
    fit(Method::ZipWpl, data, cfg)
}

/// Counts simulated from the fitted model at the data's locations and design.
pub fn simulate_from_fit(fit: &FitResult, data: &FitData, seed: SeedSpec) -> Result<Vec<u64>> {
    match fit.estimate.field_model(data.design.clone())? {
        FieldModel::Poisson(m) => PoissonSampler::new(&m, &data.locs)?.sample(seed),
        FieldModel::Zip(m) => ZipSampler::new(&m, &data.locs)?.sample(seed),
    }
}

fn sample_sd(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    (0..d)
        .map(|k| {
            let m = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            (rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect()
}

/// Parametric bootstrap: simulate `b` data sets at the estimate, refit each
/// from the estimate, and return the standard deviation of the refits per
/// free parameter. Failed or unconverged refits are dropped, up to 10%.
pub fn bootstrap_std_errors(
    fit: &FitResult,
    data: &FitData,
    cfg: &FitConfig,
    b: usize,
    seed: SeedSpec,
) -> Result<Vec<f64>> {
    if b < 2 {
        return Err(Error::InvalidInput(format!("bootstrap needs at least 2 replicates, got {b}")));
    }
    if b < 50 {
        log::warn!("bootstrap with only {b} replicates");
    }
    if !fit.converged {
        log::warn!("bootstrapping an unconverged fit");
    }
    let mut rcfg = cfg.clone();
    rcfg.init = Some(fit.estimate.clone());
    let refits: Vec<Option<Vec<f64>>> = (0..b as u64)
        .into_par_iter()
        .map(|k| {
            let counts = simulate_from_fit(fit, data, seed.child(k)).ok()?;
            let d = FitData {
                counts,
                ..data.clone()
            };
            let r = self::fit(fit.method, &d, &rcfg).ok()?;
            r.converged.then(|| r.values())
        })
        .collect();
    let ok: Vec<Vec<f64>> = refits.into_iter().flatten().collect();
    let failed = b - ok.len();
    if failed * 10 > b || ok.len() < 2 {
        return Err(Error::numerical(
            "bootstrap_std_errors",
            format!("{failed} of {b} bootstrap refits failed"),
        ));
    }
    if failed > 0 {
        log::info!("bootstrap excluded {failed} of {b} refits");
    }
    Ok(sample_sd(&ok))
}

/// Sandwich standard errors `diag(H⁻¹JH⁻¹)^{1/2}` for the pairwise methods,
/// with `H` the numerical Hessian of the objective at the estimate and `J`
/// the covariance of numerical scores over `b` data sets simulated at the
/// estimate. An expert diagnostic; the bootstrap is the supported path.
pub fn godambe_std_errors(
    fit: &FitResult,
    data: &FitData,
    cfg: &FitConfig,
    b: usize,
    seed: SeedSpec,
) -> Result<Vec<f64>> {
    if !fit.method.uses_pairs() {
        return Err(Error::InvalidInput("the sandwich applies to pairwise likelihoods only".into()));
    }
    if b < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 score replicates, got {b}")));
    }
    let lay = layout_of(&fit.estimate, fit.parameter_names.iter().any(|n| n == "nugget"));
    let x = lay.to_x(&fit.estimate);
    let d = x.len();
    let h = 1e-4;
    let bound = Bound::new(fit.method, data, cfg)?;
    let f = |x: &[f64]| bound.eval_x(&lay, x);
    let at = |dx: &[(usize, f64)]| {
        let mut y = x.clone();
        for &(k, s) in dx {
            y[k] += s;
        }
        f(&y)
    };
    let f0 = f(&x);
    let mut hess = DMatrix::zeros(d, d);
    for a in 0..d {
        for c in 0..=a {
            let v = if a == c {
                (at(&[(a, h)]) - 2.0 * f0 + at(&[(a, -h)])) / (h * h)
            } else {
                (at(&[(a, h), (c, h)]) - at(&[(a, h), (c, -h)]) - at(&[(a, -h), (c, h)]) + at(&[(a, -h), (c, -h)]))
                    / (4.0 * h * h)
            };
            hess[(a, c)] = -v;
            hess[(c, a)] = -v;
        }
    }
    let scores: Vec<Vec<f64>> = (0..b as u64)
        .into_par_iter()
        .map(|k| {
            let counts = simulate_from_fit(fit, data, seed.child(k))?;
            let sim = FitData {
                counts,
                ..data.clone()
            };
            let bs = Bound::new(fit.method, &sim, cfg)?;
            Ok((0..d)
                .map(|a| {
                    let mut up = x.clone();
                    let mut dn = x.clone();
                    up[a] += h;
                    dn[a] -= h;
                    (bs.eval_x(&lay, &up) - bs.eval_x(&lay, &dn)) / (2.0 * h)
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut j = DMatrix::zeros(d, d);
    let n = scores.len() as f64;
    let mean: Vec<f64> = (0..d).map(|a| scores.iter().map(|s| s[a]).sum::<f64>() / n).collect();
    for s in &scores {
        for a in 0..d {
            for c in 0..d {
                j[(a, c)] += (s[a] - mean[a]) * (s[c] - mean[c]) / (n - 1.0);
            }
        }
    }
    let hinv = hess
        .try_inverse()
        .ok_or_else(|| Error::numerical("godambe_std_errors", "singular Hessian"))?;
    let cov = &hinv * j * &hinv;
    let slopes = lay.slopes(&x);
    Ok((0..d).map(|a| slopes[a].abs() * cov[(a, a)].max(0.0).sqrt()).collect())
}

/// Structural-zero probability implied by a zero-inflated fit.
pub fn implied_zero_prob(pv: &ParameterVector) -> Option<f64> {
    pv.theta.map(normal_cdf)
}
