//! Optimal linear prediction under the Poisson and zero-inflated models, and
//! cross-validated prediction error.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::correlation::{build_covariance, build_cross_covariance, cholesky_jittered, marginal_variance};
use crate::error::{Error, Result};
use crate::estimate::{fit, FitConfig, FitData, Method};
use crate::model::{linear_predictor, FieldModel, LocationSet, SeedSpec};
use crate::specfun::SeriesControl;

/// Negative MSEs down to this (relative to the target variance) are round-off.
const MSE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub predicted: Vec<f64>,
    pub mse: Vec<f64>,
}

impl PredictionResult {
    /// Replaces negative predictions by zero, for reporting.
    pub fn clamp_nonnegative(&mut self) {
        for p in &mut self.predicted {
            *p = p.max(0.0);
        }
    }
}

/// `Ŷ(s₀) = μ(s₀) + cᵀΣ⁻¹(Y - μ)` with `MSE = σ²(s₀) - cᵀΣ⁻¹c`, where `μ`,
/// `σ²`, `Σ` and `c` are the marginal means, variances and covariances of the
/// observed field (Poisson or zero-inflated). `target_design` holds the
/// covariate rows at the targets. One factorization serves all targets.
pub fn linear_predict(
    model: &FieldModel,
    locs: &LocationSet,
    counts: &[u64],
    targets: &LocationSet,
    target_design: &[Vec<f64>],
    ctrl: &SeriesControl,
) -> Result<PredictionResult> {
    model.validate()?;
    let base = model.base();
    if counts.len() != locs.len() {
        return Err(Error::InvalidInput(format!(
            "{} counts for {} locations",
            counts.len(),
            locs.len()
        )));
    }
    if target_design.len() != targets.len() || target_design.iter().any(|r| r.len() != base.beta.len()) {
        return Err(Error::InvalidInput(
            "target design must have one row of len(beta) per target".into(),
        ));
    }
    let lam = base.means();
    let lam0: Vec<f64> = target_design
        .iter()
        .map(|x| base.horizon * linear_predictor(x, &base.beta).exp())
        .collect();
    let keep = match model {
        FieldModel::Poisson(_) => 1.0,
        FieldModel::Zip(m) => 1.0 - m.zero_prob(),
    };
    let sigma = build_covariance(model, locs, ctrl)?;
    let chol = cholesky_jittered(sigma)?;
    let resid = DVector::from_iterator(locs.len(), counts.iter().zip(&lam).map(|(&y, l)| y as f64 - keep * l));
    let w = chol.solve(&resid);
    let c = build_cross_covariance(model, locs, &lam, targets, &lam0, ctrl)?;
    let mut predicted = Vec::with_capacity(targets.len());
    let mut mse = Vec::with_capacity(targets.len());
    for (k, &l0) in lam0.iter().enumerate() {
        let ck = c.column(k).into_owned();
        predicted.push(keep * l0 + ck.dot(&w));
        let var0 = marginal_variance(model, l0);
        let m = var0 - ck.dot(&chol.solve(&ck));
        if m < -MSE_SLACK * var0.max(1.0) {
            log::warn!("prediction MSE {m:e} at target {k} is negative beyond round-off; clamped");
        }
        mse.push(m.max(0.0));
    }
    Ok(PredictionResult { predicted, mse })
}

pub fn rmse(predicted: &[f64], observed: &[u64]) -> f64 {
    let n = predicted.len() as f64;
    (predicted
        .iter()
        .zip(observed)
        .map(|(p, &y)| (p - y as f64).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    /// RMSE per successful repeat, in repeat order.
    pub rmse: Vec<f64>,
    pub mean_rmse: f64,
    /// RMSE of predicting every holdout site by the training mean, paired
    /// with `rmse`.
    pub baseline_rmse: Vec<f64>,
    pub mean_baseline_rmse: f64,
    /// Repeats whose fit or prediction failed.
    pub failed: Vec<usize>,
}

/// Random train/holdout splits: fit on a `split` fraction of the sites,
/// linearly predict the rest, and record the holdout RMSE.
pub fn crossval_rmse(
    method: Method,
    data: &FitData,
    cfg: &FitConfig,
    split: f64,
    repeats: usize,
    seed: SeedSpec,
) -> Result<CrossValReport> {
    data.validate()?;
    if !(split > 0.0 && split < 1.0) || repeats == 0 {
        return Err(Error::InvalidInput(format!(
            "need 0 < split < 1 and repeats ≥ 1, got ({split}, {repeats})"
        )));
    }
    let n = data.len();
    let n_train = (split * n as f64).round() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::InvalidInput(format!(
            "split {split} of {n} sites leaves an empty training or holdout set"
        )));
    }
    let mut rmses = Vec::new();
    let mut base = Vec::new();
    let mut failed = Vec::new();
    for r in 0..repeats {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed.child(r as u64).rng());
        let (train, hold) = idx.split_at(n_train);
        let mut train = train.to_vec();
        let mut hold = hold.to_vec();
        train.sort_unstable();
        hold.sort_unstable();
        let tr = data.subset(&train);
        let ho = data.subset(&hold);
        let outcome = fit(method, &tr, cfg).and_then(|f| {
            let model = f.estimate.field_model(tr.design.clone())?;
            linear_predict(&model, &tr.locs, &tr.counts, &ho.locs, &ho.design, &cfg.series)
        });
        match outcome {
            Ok(p) => {
                rmses.push(rmse(&p.predicted, &ho.counts));
                let m = tr.counts.iter().sum::<u64>() as f64 / tr.len() as f64;
                base.push(rmse(&vec![m; ho.len()], &ho.counts));
            }
            Err(e) => {
                log::warn!("cross-validation repeat {r} failed: {e}");
                failed.push(r);
            }
        }
    }
    if rmses.is_empty() {
        return Err(Error::numerical("crossval_rmse", "every repeat failed"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CrossValReport {
        mean_rmse: mean(&rmses),
        mean_baseline_rmse: mean(&base),
        rmse: rmses,
        baseline_rmse: base,
        failed,
    })
}
