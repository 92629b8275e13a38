//! Replicated simulation studies, the Monte-Carlo pair oracle and the
//! empirical semivariogram.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit, FitConfig, FitData, Method};
use crate::model::{CorrelationModel, LocationSet, PoissonFieldModel, SeedSpec, ZipFieldModel};
use crate::optim::NelderMeadConfig;
use crate::pairs::{weighted_pairs, PairWeights};
use crate::simulate::{perturbed_grid, uniform_design, PoissonSampler, ZipSampler};
use crate::specfun::SeriesControl;

/// Where the observations sit. Locations are drawn once per study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyDesign {
    PerturbedGrid {
        n_per_side: usize,
        spacing: f64,
        jitter: f64,
    },
    /// `sites` uniform points in the unit square, each observed at every time.
    UniformSpaceTime { sites: usize, times: Vec<f64> },
}

impl StudyDesign {
    pub fn locations(&self, seed: SeedSpec) -> Result<LocationSet> {
        match self {
            StudyDesign::PerturbedGrid {
                n_per_side,
                spacing,
                jitter,
            } => perturbed_grid(*n_per_side, *spacing, *jitter, seed),
            StudyDesign::UniformSpaceTime { sites, times } => {
                if *sites == 0 || times.is_empty() {
                    return Err(Error::InvalidInput("space-time design needs sites and times".into()));
                }
                let mut rng = seed.rng();
                let pts: Vec<[f64; 2]> = (0..*sites).map(|_| [rng.random(), rng.random()]).collect();
                LocationSet::space_time_product(&pts, times)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub id: String,
    /// Intercept first; every further coefficient multiplies an independent
    /// uniform(0,1) covariate redrawn per replicate.
    pub beta: Vec<f64>,
    pub corr: CorrelationModel,
    /// Bernoulli-layer mean of a zero-inflated truth (same correlation as the
    /// Poisson layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub design: StudyDesign,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub weights: PairWeights,
    pub seed: u64,
    #[serde(default)]
    pub estimate_nugget: bool,
    #[serde(default)]
    pub optimizer: NelderMeadConfig,
    #[serde(default)]
    pub series: SeriesControl,
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidInput("a study needs at least 2 replicates".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("a study needs at least one method".into()));
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("beta must be nonempty and finite".into()));
        }
        self.corr.validate()?;
        self.weights.validate()?;
        let zip = self.theta.is_some();
        if self.methods.iter().any(|m| (*m == Method::ZipWpl) != zip) {
            return Err(Error::InvalidInput(
                "zip_wpl must be the only method exactly when the truth is zero-inflated".into(),
            ));
        }
        Ok(())
    }

    /// True parameter values, named as in `FitResult::parameter_names`.
    pub fn truth(&self) -> (Vec<String>, Vec<f64>) {
        let mut names: Vec<String> = (0..self.beta.len()).map(|k| format!("beta{k}")).collect();
        let mut vals = self.beta.clone();
        names.push("alpha".into());
        vals.push(self.corr.alpha);
        if let Some(at) = self.corr.alpha_t {
            names.push("alpha_t".into());
            vals.push(at);
        }
        if self.estimate_nugget {
            names.push("nugget".into());
            vals.push(self.corr.nugget);
        }
        if let Some(th) = self.theta {
            names.push("theta".into());
            vals.push(th);
            if self.estimate_nugget {
                names.push("nugget_b".into());
                vals.push(self.corr.nugget);
            }
        }
        (names, vals)
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            estimate_nugget: self.estimate_nugget,
            optimizer: self.optimizer,
            series: self.series,
            ..FitConfig::new(self.corr.family, self.weights)
        }
    }

    /// Data set of replicate `r`: covariates from child 0, counts from child 1
    /// of the replicate seed.
    pub fn replicate_data(&self, locs: &LocationSet, r: usize) -> Result<FitData> {
        let seed = self.replicate_seed(r);
        let design = uniform_design(locs.len(), self.beta.len() - 1, seed.child(0));
        let base = PoissonFieldModel::new(self.beta.clone(), design.clone(), self.corr)?;
        let counts = match self.theta {
            None => PoissonSampler::new(&base, locs)?.sample(seed.child(1))?,
            Some(theta) => ZipSampler::new(
                &ZipFieldModel {
                    base,
                    theta,
                    corr_b: self.corr,
                },
                locs,
            )?
            .sample(seed.child(1))?,
        };
        FitData::new(locs.clone(), counts, design)
    }

    pub fn locations(&self) -> Result<LocationSet> {
        self.design.locations(SeedSpec::new(self.seed, 0).child(u64::MAX))
    }

    fn replicate_seed(&self, r: usize) -> SeedSpec {
        SeedSpec::new(self.seed, 0).child(r as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: Vec<ReplicateFailure>,
    pub parameters: Vec<ParameterSummary>,
    /// Total fitting wall-clock. Left out of the serialized report so that
    /// reports depend only on the spec.
    #[serde(skip)]
    pub seconds: f64,
}

impl MethodSummary {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / (self.failures.len() + self.successes) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub replicate: usize,
    pub method: Method,
    pub values: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub id: String,
    pub replicates: usize,
    pub parameter_names: Vec<String>,
    pub methods: Vec<MethodSummary>,
    /// Successful fits, by replicate then method.
    pub estimates: Vec<ReplicateEstimate>,
}

impl StudyReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Long-format CSV: replicate, method, parameter, estimate.
    pub fn write_estimates_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "method", "parameter", "estimate"])?;
        for e in &self.estimates {
            for (name, v) in self.parameter_names.iter().zip(&e.values) {
                out.write_record([
                    e.replicate.to_string(),
                    e.method.as_str().to_string(),
                    name.clone(),
                    format!("{v:?}"),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

type Outcome = std::result::Result<(Vec<f64>, f64), String>;

/// Simulates every replicate, fits it with every method and aggregates bias
/// and MSE over the successful fits. Failed or unconverged fits are logged
/// and counted, never averaged. Identical specs give identical reports.
pub fn run_study(spec: &StudySpec) -> Result<StudyReport> {
    spec.validate()?;
    let locs = spec.locations()?;
    let cfg = spec.fit_config();
    let (names, truth) = spec.truth();
    log::info!(
        "study {}: {} replicates at {} locations, methods {:?}",
        spec.id,
        spec.replicates,
        locs.len(),
        spec.methods
    );
    let per_rep: Vec<Vec<(Outcome, f64)>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let data = spec.replicate_data(&locs, r);
            let row: Vec<(Outcome, f64)> = spec
                .methods
                .iter()
                .map(|&m| {
                    let t0 = Instant::now();
                    let out = match &data {
                        Err(e) => Err(format!("simulation: {e}")),
                        Ok(d) => match fit(m, d, &cfg) {
                            Ok(f) if f.converged => Ok((f.values(), f.objective)),
                            Ok(f) => Err(format!("not converged after {} evaluations", f.evaluations)),
                            Err(e) => Err(e.to_string()),
                        },
                    };
                    if let Err(msg) = &out {
                        log::warn!("study {} replicate {r} {}: {msg}", spec.id, m.as_str());
                    }
                    (out, t0.elapsed().as_secs_f64())
                })
                .collect();
            log::debug!("study {} replicate {r} done", spec.id);
            row
        })
        .collect();

    let mut methods = Vec::new();
    let mut estimates = Vec::new();
    for (k, &m) in spec.methods.iter().enumerate() {
        let mut failures = Vec::new();
        let mut rows = Vec::new();
        let mut seconds = 0.0;
        for (r, rep) in per_rep.iter().enumerate() {
            let (out, secs) = &rep[k];
            seconds += secs;
            match out {
                Ok((v, _)) if v.len() != truth.len() => failures.push(ReplicateFailure {
                    replicate: r,
                    reason: format!("{} estimates for {} parameters", v.len(), truth.len()),
                }),
                Ok((v, _)) => rows.push(v.clone()),
                Err(msg) => failures.push(ReplicateFailure {
                    replicate: r,
                    reason: msg.clone(),
                }),
            }
        }
        let parameters = summarize(&names, &truth, &rows);
        methods.push(MethodSummary {
            method: m,
            successes: rows.len(),
            failures,
            parameters,
            seconds,
        });
    }
    for (r, rep) in per_rep.iter().enumerate() {
        for (k, (out, _)) in rep.iter().enumerate() {
            if let Ok((values, objective)) = out {
                if values.len() == truth.len() {
                    estimates.push(ReplicateEstimate {
                        replicate: r,
                        method: spec.methods[k],
                        values: values.clone(),
                        objective: *objective,
                    });
                }
            }
        }
    }
    for s in &methods {
        log::info!(
            "study {} {}: {} ok, {} failed, {:.1}s fitting",
            spec.id,
            s.method.as_str(),
            s.successes,
            s.failures.len(),
            s.seconds
        );
    }
    Ok(StudyReport {
        id: spec.id.clone(),
        replicates: spec.replicates,
        parameter_names: names,
        methods,
        estimates,
    })
}

fn summarize(names: &[String], truth: &[f64], rows: &[Vec<f64>]) -> Vec<ParameterSummary> {
    let n = rows.len() as f64;
    names
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(k, (name, &t))| {
            let (mean, bias, mse) = if rows.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
                let bias = rows.iter().map(|r| r[k] - t).sum::<f64>() / n;
                let mse = rows.iter().map(|r| (r[k] - t).powi(2)).sum::<f64>() / n;
                (mean, bias, mse)
            };
            ParameterSummary {
                name: name.clone(),
                truth: t,
                mean,
                bias,
                mse,
            }
        })
        .collect()
}

/// Empirical joint distribution of `(N_i, N_j)` from the renewal
/// construction at two sites whose latent Gaussian correlation is `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPairTable {
    pub n_reps: u64,
    pub k_max: u64,
    /// `counts[n][m]` for `n, m ≤ k_max`.
    pub counts: Vec<Vec<u64>>,
    /// Pairs with either count above `k_max`.
    pub overflow: u64,
    pub mean_i: f64,
    pub mean_j: f64,
    pub correlation: f64,
    /// Standard error of `correlation` from 100 batch means.
    pub correlation_se: f64,
}

impl McPairTable {
    pub fn frequency(&self, n: u64, m: u64) -> f64 {
        self.counts[n as usize][m as usize] as f64 / self.n_reps as f64
    }

    /// Binomial standard error of a cell with probability `p`.
    pub fn binomial_se(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.n_reps as f64).sqrt()
    }

    /// Sum of all cell counts and the overflow over `n_reps`; one exactly.
    pub fn total_frequency(&self) -> f64 {
        let inside: u64 = self.counts.iter().flatten().sum();
        (inside + self.overflow) as f64 / self.n_reps as f64
    }
}

const MC_BATCHES: u64 = 100;

/// Simulates `n_reps` independent pairs by counting unit-rate exponential
/// copies `(g₁² + g₂²)/2` below `λ_i` and `λ_j`, the Gaussian pairs having
/// correlation `rho`. Batch `b` draws from `seed.child(b)`.
pub fn mc_bivariate_oracle(lambda_i: f64, lambda_j: f64, rho: f64, n_reps: u64, k_max: u64, seed: SeedSpec) -> Result<McPairTable> {
    if n_reps < 100_000 {
        return Err(Error::InvalidInput(format!("need at least 1e5 pairs, got {n_reps}")));
    }
    if !(lambda_i > 0.0 && lambda_j > 0.0 && lambda_i.is_finite() && lambda_j.is_finite()) {
        return Err(Error::InvalidInput("rates must be positive and finite".into()));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho must lie in [-1,1], got {rho}")));
    }
    let side = (k_max + 1) as usize;
    let s = (1.0 - rho * rho).sqrt();
    let batch = |b: u64| {
        let lo = n_reps * b / MC_BATCHES;
        let hi = n_reps * (b + 1) / MC_BATCHES;
        let mut rng = seed.child(b).rng();
        let mut counts = vec![vec![0u64; side]; side];
        let mut overflow = 0u64;
        let (mut si, mut sj, mut sii, mut sjj, mut sij) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in lo..hi {
            let mut n = [0u64; 2];
            let mut acc = [0.0f64; 2];
            let mut open = [true; 2];
            while open[0] || open[1] {
                let mut e = [0.0; 2];
                for _ in 0..2 {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let g2 = rho * z1 + s * z2;
                    e[0] += 0.5 * z1 * z1;
                    e[1] += 0.5 * g2 * g2;
                }
                for (k, lam) in [lambda_i, lambda_j].into_iter().enumerate() {
                    if open[k] {
                        acc[k] += e[k];
                        if acc[k] > lam {
                            open[k] = false;
                        } else {
                            n[k] += 1;
                        }
                    }
                }
            }
            if n[0] <= k_max && n[1] <= k_max {
                counts[n[0] as usize][n[1] as usize] += 1;
            } else {
                overflow += 1;
            }
            let (x, y) = (n[0] as f64, n[1] as f64);
            si += x;
            sj += y;
            sii += x * x;
            sjj += y * y;
            sij += x * y;
        }
        (counts, overflow, hi - lo, [si, sj, sii, sjj, sij])
    };
    let parts: Vec<_> = (0..MC_BATCHES).into_par_iter().map(batch).collect();
    let mut counts = vec![vec![0u64; side]; side];
    let mut overflow = 0;
    let mut tot = [0.0; 5];
    let mut batch_corr = Vec::new();
    let corr_of = |s: &[f64; 5], n: f64| {
        let (mi, mj) = (s[0] / n, s[1] / n);
        let cov = s[4] / n - mi * mj;
        cov / ((s[2] / n - mi * mi) * (s[3] / n - mj * mj)).sqrt()
    };
    for (c, o, len, sums) in &parts {
        for (row, crow) in counts.iter_mut().zip(c) {
            for (a, b) in row.iter_mut().zip(crow) {
                *a += b;
            }
        }
        overflow += o;
        for k in 0..5 {
            tot[k] += sums[k];
        }
        batch_corr.push(corr_of(sums, *len as f64));
    }
    let nb = batch_corr.len() as f64;
    let bm = batch_corr.iter().sum::<f64>() / nb;
    let bvar = batch_corr.iter().map(|c| (c - bm).powi(2)).sum::<f64>() / (nb - 1.0);
    let n = n_reps as f64;
    Ok(McPairTable {
        n_reps,
        k_max,
        counts,
        overflow,
        mean_i: tot[0] / n,
        mean_j: tot[1] / n,
        correlation: corr_of(&tot, n),
        correlation_se: (bvar / nb).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemivariogramBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_distance: f64,
    pub gamma: f64,
    pub n_pairs: usize,
    /// Fewer than two pairs: the estimate is not reliable.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Semivariogram {
    pub bins: Vec<SemivariogramBin>,
    /// Indices of bins `[edges[k], edges[k+1])` that held no pair.
    pub empty_bins: Vec<usize>,
}

impl Semivariogram {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["lower", "upper", "mean_distance", "gamma", "n_pairs", "flagged"])?;
        for b in &self.bins {
            out.write_record([
                format!("{:?}", b.lower),
                format!("{:?}", b.upper),
                format!("{:?}", b.mean_distance),
                format!("{:?}", b.gamma),
                b.n_pairs.to_string(),
                b.flagged.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Matheron estimator `γ(h) = Σ (y_i - y_j)² / 2N(h)` over the pairs whose
/// distance falls in `[edges[k], edges[k+1])`. Space-time data contribute only
/// pairs observed at the same time.
pub fn empirical_semivariogram(locs: &LocationSet, values: &[f64], edges: &[f64]) -> Result<Semivariogram> {
    if values.len() != locs.len() {
        return Err(Error::InvalidInput(format!(
            "{} values for {} locations",
            values.len(),
            locs.len()
        )));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || !(edges[0] >= 0.0) {
        return Err(Error::InvalidInput(
            "bin edges must be nonnegative and strictly increasing, at least two".into(),
        ));
    }
    let nb = edges.len() - 1;
    let w = PairWeights {
        xi_s: edges[nb],
        xi_t: locs.has_time().then_some(0.0),
    };
    let mut sum = vec![0.0; nb];
    let mut dist = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for p in weighted_pairs(locs, &w)? {
        let h = p.lag.h;
        if h < edges[0] || h >= edges[nb] {
            continue;
        }
        let k = edges.partition_point(|e| *e <= h) - 1;
        sum[k] += (values[p.i] - values[p.j]).powi(2);
        dist[k] += h;
        count[k] += 1;
    }
    let mut bins = Vec::new();
    let mut empty_bins = Vec::new();
    for k in 0..nb {
        if count[k] == 0 {
            empty_bins.push(k);
            continue;
        }
        let c = count[k] as f64;
        bins.push(SemivariogramBin {
            lower: edges[k],
            upper: edges[k + 1],
            mean_distance: dist[k] / c,
            gamma: sum[k] / (2.0 * c),
            n_pairs: count[k],
            flagged: count[k] < 2,
        });
    }
    if !empty_bins.is_empty() {
        log::warn!("semivariogram bins {empty_bins:?} hold no pairs and were omitted");
    }
    Ok(Semivariogram { bins, empty_bins })
}
