//! Locations, underlying correlation models and the field models built on them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::normal_cdf;

/// Spatial (1-D or 2-D) coordinates with an optional time coordinate per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSet {
    points: Vec<[f64; 2]>,
    dim: usize,
    times: Option<Vec<f64>>,
}

/// Separation between two locations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lag {
    /// Euclidean spatial distance.
    pub h: f64,
    /// Absolute time separation, for space-time locations.
    pub t_lag: Option<f64>,
}

impl Lag {
    pub fn spatial(h: f64) -> Self {
        Lag { h, t_lag: None }
    }

    pub fn space_time(h: f64, t_lag: f64) -> Self {
        Lag {
            h,
            t_lag: Some(t_lag),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.h == 0.0 && self.t_lag.is_none_or(|t| t == 0.0)
    }
}

impl LocationSet {
    pub fn new_2d(points: Vec<[f64; 2]>) -> Result<Self> {
        Self::build(points, 2, None)
    }

    pub fn new_1d(xs: Vec<f64>) -> Result<Self> {
        Self::build(xs.into_iter().map(|x| [x, 0.0]).collect(), 1, None)
    }

    /// 2-D points each carrying its own time coordinate.
    pub fn with_times(points: Vec<[f64; 2]>, times: Vec<f64>) -> Result<Self> {
        if points.len() != times.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} time stamps",
                points.len(),
                times.len()
            )));
        }
        Self::build(points, 2, Some(times))
    }

    /// Every site observed at every time; ordered time-major (all sites at
    /// the first time, then all sites at the second, ...).
    pub fn space_time_product(sites: &[[f64; 2]], times: &[f64]) -> Result<Self> {
        let mut pts = Vec::with_capacity(sites.len() * times.len());
        let mut ts = Vec::with_capacity(sites.len() * times.len());
        for &t in times {
            for &s in sites {
                pts.push(s);
                ts.push(t);
            }
        }
        Self::with_times(pts, ts)
    }

    fn build(points: Vec<[f64; 2]>, dim: usize, times: Option<Vec<f64>>) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite())
            || times.iter().flatten().any(|t| !t.is_finite())
        {
            return Err(Error::InvalidInput("coordinates must be finite".into()));
        }
        let set = LocationSet { points, dim, times };
        let mut order: Vec<usize> = (0..set.len()).collect();
        let key = |i: usize| {
            let p = set.points[i];
            (p[0], p[1], set.time(i).unwrap_or(0.0))
        };
        order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
        if let Some(w) = order.windows(2).find(|w| key(w[0]) == key(w[1])) {
            return Err(Error::InvalidInput(format!(
                "locations {} and {} coincide",
                w[0].min(w[1]),
                w[0].max(w[1])
            )));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_time(&self) -> bool {
        self.times.is_some()
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn time(&self, i: usize) -> Option<f64> {
        self.times.as_ref().map(|t| t[i])
    }

    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.points[i], self.points[j]);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    pub fn lag(&self, i: usize, j: usize) -> Lag {
        Lag {
            h: self.distance(i, j),
            t_lag: self.times.as_ref().map(|t| (t[i] - t[j]).abs()),
        }
    }

    /// Lag between point `i` of `self` and point `j` of `other`.
    pub fn cross_lag(&self, i: usize, other: &LocationSet, j: usize) -> Lag {
        let (a, b) = (self.points[i], other.points[j]);
        let t_lag = match (self.time(i), other.time(j)) {
            (Some(s), Some(t)) => Some((s - t).abs()),
            _ => None,
        };
        Lag {
            h: (a[0] - b[0]).hypot(a[1] - b[1]),
            t_lag,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> LocationSet {
        LocationSet {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            dim: self.dim,
            times: self
                .times
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `(1 - r/α)⁴₊`
    GeneralizedWendland4,
    /// `exp(-r/α)`
    Exponential,
    /// `(1 - r/α)⁴₊ (1 - |t|/α_t)⁴₊`
    SeparableSpaceTimeWendland,
}

/// Correlation function of the latent standard Gaussian field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationModel {
    pub family: Family,
    pub alpha: f64,
    #[serde(default)]
    pub nugget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_t: Option<f64>,
}

impl CorrelationModel {
    pub fn wendland(alpha: f64) -> Self {
        CorrelationModel {
            family: Family::GeneralizedWendland4,
            alpha,
            nugget: 0.0,
            alpha_t: None,
        }
    }

    pub fn exponential(alpha: f64) -> Self {
        CorrelationModel {
            family: Family::Exponential,
            alpha,
            nugget: 0.0,
            alpha_t: None,
        }
    }

    pub fn space_time(alpha: f64, alpha_t: f64) -> Self {
        CorrelationModel {
            family: Family::SeparableSpaceTimeWendland,
            alpha,
            nugget: 0.0,
            alpha_t: Some(alpha_t),
        }
    }

    pub fn with_nugget(mut self, nugget: f64) -> Self {
        self.nugget = nugget;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "range alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.nugget) {
            return Err(Error::InvalidInput(format!(
                "nugget must lie in [0,1), got {}",
                self.nugget
            )));
        }
        match (self.family, self.alpha_t) {
            (Family::SeparableSpaceTimeWendland, Some(at)) if at > 0.0 && at.is_finite() => Ok(()),
            (Family::SeparableSpaceTimeWendland, _) => Err(Error::InvalidInput(
                "space-time family needs a positive alpha_t".into(),
            )),
            (_, None) => Ok(()),
            (_, Some(_)) => Err(Error::InvalidInput(
                "alpha_t is only meaningful for the space-time family".into(),
            )),
        }
    }

    /// Correlation at `lag` including the nugget mixture.
    pub fn rho(&self, lag: Lag) -> f64 {
        if lag.is_zero() {
            return 1.0;
        }
        (1.0 - self.nugget) * self.rho_smooth(lag)
    }

    /// Correlation of the continuous part, without the nugget.
    pub fn rho_smooth(&self, lag: Lag) -> f64 {
        let wendland = |r: f64, a: f64| {
            let u = 1.0 - r / a;
            if u > 0.0 {
                u * u * u * u
            } else {
                0.0
            }
        };
        match self.family {
            Family::GeneralizedWendland4 => wendland(lag.h, self.alpha),
            Family::Exponential => (-lag.h / self.alpha).exp(),
            Family::SeparableSpaceTimeWendland => {
                let at = self.alpha_t.unwrap_or(f64::INFINITY);
                wendland(lag.h, self.alpha) * wendland(lag.t_lag.unwrap_or(0.0), at)
            }
        }
    }

    /// Whether correlation is exactly zero beyond this spatial distance.
    pub fn support(&self) -> Option<f64> {
        match self.family {
            Family::Exponential => None,
            _ => Some(self.alpha),
        }
    }
}

/// Log-linear mean `λ(s) = exp(x(s)ᵀβ)` plus the underlying correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFieldModel {
    pub beta: Vec<f64>,
    /// One row per location; the first column is the constant 1.
    pub design: Vec<Vec<f64>>,
    pub corr: CorrelationModel,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_horizon() -> f64 {
    1.0
}

impl PoissonFieldModel {
    pub fn new(beta: Vec<f64>, design: Vec<Vec<f64>>, corr: CorrelationModel) -> Result<Self> {
        let m = PoissonFieldModel {
            beta,
            design,
            corr,
            horizon: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    /// Constant mean `λ` at `n` locations.
    pub fn constant(lambda: f64, n: usize, corr: CorrelationModel) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Self::new(vec![lambda.ln()], vec![vec![1.0]; n], corr)
    }

    pub fn validate(&self) -> Result<()> {
        self.corr.validate()?;
        if self.beta.is_empty() {
            return Err(Error::InvalidInput("beta must not be empty".into()));
        }
        if let Some(r) = self.design.iter().find(|r| r.len() != self.beta.len()) {
            return Err(Error::InvalidInput(format!(
                "design row has {} columns, beta has {}",
                r.len(),
                self.beta.len()
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.design.len()
    }

    pub fn is_empty(&self) -> bool {
        self.design.is_empty()
    }

    /// Mean count `tλ(s)` per location.
    pub fn means(&self) -> Vec<f64> {
        self.design
            .iter()
            .map(|x| self.horizon * linear_predictor(x, &self.beta).exp())
            .collect()
    }
}

pub(crate) fn linear_predictor(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

/// Zero-inflated field `Y = B·N` with `B = 1{G < 0}`, `G` Gaussian with mean
/// `θ` and correlation `corr_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipFieldModel {
    pub base: PoissonFieldModel,
    pub theta: f64,
    pub corr_b: CorrelationModel,
}

impl ZipFieldModel {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.corr_b.validate()?;
        if !self.theta.is_finite() {
            return Err(Error::InvalidInput("theta must be finite".into()));
        }
        Ok(())
    }

    /// Probability of a structural zero, `Φ(θ)`.
    pub fn zero_prob(&self) -> f64 {
        normal_cdf(self.theta)
    }

    /// Means `(1-p)λ(s)`.
    pub fn means(&self) -> Vec<f64> {
        let keep = 1.0 - self.zero_prob();
        self.base.means().into_iter().map(|l| keep * l).collect()
    }
}

/// Either field model, for operations defined on both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldModel {
    Poisson(PoissonFieldModel),
    Zip(ZipFieldModel),
}

impl FieldModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            FieldModel::Poisson(m) => m.validate(),
            FieldModel::Zip(m) => m.validate(),
        }
    }

    pub fn base(&self) -> &PoissonFieldModel {
        match self {
            FieldModel::Poisson(m) => m,
            FieldModel::Zip(m) => &m.base,
        }
    }

    /// Marginal means of the observed counts.
    pub fn means(&self) -> Vec<f64> {
        match self {
            FieldModel::Poisson(m) => m.means(),
            FieldModel::Zip(m) => m.means(),
        }
    }
}

/// Seed plus stream index; distinct streams give independent generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl SeedSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        SeedSpec { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Generator for sub-stream `k` of this stream.
    pub fn substream(&self, k: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(k.wrapping_add(1))));
        rng.set_stream(self.stream);
        rng
    }

    /// Derived seed for an independent child computation.
    pub fn child(&self, k: u64) -> SeedSpec {
        SeedSpec {
            seed: splitmix(self.seed.wrapping_add(splitmix(self.stream)) ^ splitmix(!k)),
            stream: k,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wendland_values() {
        let c = CorrelationModel::wendland(0.5);
        assert!((c.rho(Lag::spatial(0.25)) - 0.0625).abs() < 1e-15);
        assert_eq!(c.rho(Lag::spatial(0.6)), 0.0);
        assert_eq!(c.rho(Lag::spatial(0.0)), 1.0);
    }

    #[test]
    fn nugget_only_applies_off_origin() {
        let c = CorrelationModel::exponential(1.0).with_nugget(0.3);
        assert_eq!(c.rho(Lag::spatial(0.0)), 1.0);
        assert!((c.rho(Lag::spatial(1.0)) - 0.7 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn space_time_separable() {
        let c = CorrelationModel::space_time(0.2, 1.0);
        let v = c.rho(Lag::space_time(0.1, 0.5));
        assert!((v - 0.5f64.powi(4) * 0.5f64.powi(4)).abs() < 1e-15);
        assert_eq!(c.rho(Lag::space_time(0.0, 1.0)), 0.0);
        assert!(c.validate().is_ok());
        assert!(CorrelationModel::wendland(0.2).with_nugget(1.0).validate().is_err());
    }

    #[test]
    fn duplicate_locations_rejected() {
        assert!(LocationSet::new_2d(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).is_err());
        let st = LocationSet::space_time_product(&[[0.0, 0.0], [1.0, 0.0]], &[0.0, 1.0]).unwrap();
        assert_eq!(st.len(), 4);
        assert_eq!(st.lag(0, 3), Lag::space_time(1.0, 1.0));
    }

    #[test]
    fn seeds_are_reproducible_and_separated() {
        use rand::Rng;
        let a: u64 = SeedSpec::new(7, 1).rng().random();
        let b: u64 = SeedSpec::new(7, 1).rng().random();
        let c: u64 = SeedSpec::new(7, 2).rng().random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s1: u64 = SeedSpec::new(7, 1).substream(0).random();
        let s2: u64 = SeedSpec::new(7, 1).substream(1).random();
        assert_ne!(s1, s2);
    }
}
