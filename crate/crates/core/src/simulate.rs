//! Exact simulation of the Gaussian, exponential, Poisson and zero-inflated
//! fields, and the perturbed-grid sampling design.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::correlation::{cholesky_jittered, underlying_correlation_matrix};
use crate::error::{Error, Result};
use crate::model::{CorrelationModel, LocationSet, PoissonFieldModel, SeedSpec, ZipFieldModel};

/// Exponential-field copies generated per Cholesky product.
const BATCH: usize = 8;

/// Correlated standard normal draws from one factorization of the correlation
/// matrix.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    chol_l: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(locs: &LocationSet, corr: &CorrelationModel) -> Result<Self> {
        corr.validate()?;
        if locs.is_empty() {
            return Err(Error::InvalidInput("no locations to simulate at".into()));
        }
        let c = cholesky_jittered(underlying_correlation_matrix(corr, locs))?;
        Ok(GaussianSampler { chol_l: c.unpack() })
    }

    pub fn len(&self) -> usize {
        self.chol_l.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `k` independent fields as the columns of an `n × k` matrix.
    pub fn draw_columns<R: Rng>(&self, rng: &mut R, k: usize) -> DMatrix<f64> {
        let n = self.len();
        let z = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.chol_l * z
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.draw_columns(rng, 1).column(0).iter().copied().collect()
    }
}

/// Zero-mean, unit-variance Gaussian field with correlation `corr`.
pub fn simulate_gaussian(locs: &LocationSet, corr: &CorrelationModel, seed: SeedSpec) -> Result<Vec<f64>> {
    let s = GaussianSampler::new(locs, corr)?;
    Ok(s.draw(&mut seed.rng()))
}

/// Exponential field `W(s) = (G₁²(s) + G₂²(s)) / (2λ(s))`.
pub fn simulate_exponential(
    locs: &LocationSet,
    lambda: &[f64],
    corr: &CorrelationModel,
    seed: SeedSpec,
) -> Result<Vec<f64>> {
    check_rates(lambda, locs.len())?;
    let s = GaussianSampler::new(locs, corr)?;
    let g = s.draw_columns(&mut seed.rng(), 2);
    Ok((0..locs.len())
        .map(|i| (g[(i, 0)].powi(2) + g[(i, 1)].powi(2)) / (2.0 * lambda[i]))
        .collect())
}

fn check_rates(lambda: &[f64], n: usize) -> Result<()> {
    if lambda.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} rates for {n} locations",
            lambda.len()
        )));
    }
    if let Some(l) = lambda.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidInput(format!("rates must be positive, got {l}")));
    }
    Ok(())
}

/// Renewal-count sampler for a fixed Poisson field model and location set.
///
/// Each site counts how many unit-rate exponential copies `λ(s)W_k(s)` fit
/// below `tλ(s)`; copies share the factorized correlation across sites.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    gauss: GaussianSampler,
    /// `tλ(s)` per site.
    means: Vec<f64>,
    max_copies: usize,
}

impl PoissonSampler {
    pub fn new(model: &PoissonFieldModel, locs: &LocationSet) -> Result<Self> {
        model.validate()?;
        if model.len() != locs.len() {
            return Err(Error::InvalidInput(format!(
                "model has {} design rows for {} locations",
                model.len(),
                locs.len()
            )));
        }
        let means = model.means();
        check_rates(&means, locs.len())?;
        let top = means.iter().cloned().fold(0.0, f64::max);
        Ok(PoissonSampler {
            gauss: GaussianSampler::new(locs, &model.corr)?,
            means,
            max_copies: (10.0 * top) as usize + 200,
        })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// One realization; copy batch `b` draws from sub-stream `b` of `seed`.
    pub fn sample(&self, seed: SeedSpec) -> Result<Vec<u64>> {
        let n = self.means.len();
        let mut acc = vec![0.0; n];
        let mut count = vec![0u64; n];
        let mut open = n;
        let mut done = vec![false; n];
        let mut copies = 0usize;
        let mut batch = 0u64;
        while open > 0 {
            if copies >= self.max_copies {
                return Err(Error::numerical(
                    "simulate_poisson_field",
                    format!("renewal guard hit after {copies} copies"),
                ));
            }
            let g = self.gauss.draw_columns(&mut seed.substream(batch), 2 * BATCH);
            batch += 1;
            for c in 0..BATCH {
                for i in 0..n {
                    if done[i] {
                        continue;
                    }
                    acc[i] += 0.5 * (g[(i, 2 * c)].powi(2) + g[(i, 2 * c + 1)].powi(2));
                    if acc[i] > self.means[i] {
                        done[i] = true;
                        open -= 1;
                    } else {
                        count[i] += 1;
                    }
                }
                copies += 1;
                if open == 0 {
                    break;
                }
            }
        }
        Ok(count)
    }
}

/// Poisson field by renewal counting of exponential-field copies.
pub fn simulate_poisson_field(model: &PoissonFieldModel, locs: &LocationSet, seed: SeedSpec) -> Result<Vec<u64>> {
    PoissonSampler::new(model, locs)?.sample(seed)
}

/// Sampler for `Y = B·N`, the Bernoulli and Poisson layers independent.
#[derive(Debug, Clone)]
pub struct ZipSampler {
    bern: GaussianSampler,
    theta: f64,
    pois: PoissonSampler,
}

impl ZipSampler {
    pub fn new(model: &ZipFieldModel, locs: &LocationSet) -> Result<Self> {
        model.validate()?;
        Ok(ZipSampler {
            bern: GaussianSampler::new(locs, &model.corr_b)?,
            theta: model.theta,
            pois: PoissonSampler::new(&model.base, locs)?,
        })
    }

    pub fn sample(&self, seed: SeedSpec) -> Result<Vec<u64>> {
        let g = self.bern.draw(&mut seed.child(0).rng());
        let n = self.pois.sample(seed.child(1))?;
        Ok(n.into_iter()
            .zip(g)
            .map(|(c, z)| if self.theta + z < 0.0 { c } else { 0 })
            .collect())
    }
}

/// Zero-inflated Poisson field.
pub fn simulate_zip_field(model: &ZipFieldModel, locs: &LocationSet, seed: SeedSpec) -> Result<Vec<u64>> {
    ZipSampler::new(model, locs)?.sample(seed)
}

/// `n × n` grid with the given spacing, each coordinate shifted by an
/// independent uniform on `[-jitter, jitter]`.
pub fn perturbed_grid(n_per_side: usize, spacing: f64, jitter: f64, seed: SeedSpec) -> Result<LocationSet> {
    if n_per_side == 0 || !(spacing > 0.0) || !(jitter >= 0.0) || jitter >= spacing / 2.0 {
        return Err(Error::InvalidInput(format!(
            "grid needs n ≥ 1, spacing > 0 and 0 ≤ jitter < spacing/2, got ({n_per_side}, {spacing}, {jitter})"
        )));
    }
    let mut rng = seed.rng();
    let mut pts = Vec::with_capacity(n_per_side * n_per_side);
    for i in 0..n_per_side {
        for j in 0..n_per_side {
            let mut p = [i as f64 * spacing, j as f64 * spacing];
            if jitter > 0.0 {
                for c in &mut p {
                    *c += rng.random_range(-jitter..=jitter);
                }
            }
            pts.push(p);
        }
    }
    LocationSet::new_2d(pts)
}

/// Design rows `[1, u_1, .., u_k]` with independent uniform(0,1) covariates,
/// drawn site by site.
pub fn uniform_design(n: usize, k: usize, seed: SeedSpec) -> Vec<Vec<f64>> {
    let mut rng = seed.rng();
    (0..n)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((0..k).map(|_| rng.random::<f64>()));
            row
        })
        .collect()
}
