//! Poisson random fields built from renewal counting of exponential fields:
//! simulation, correlation and bivariate distributions, pairwise-likelihood
//! estimation and linear prediction.

pub mod bivariate;
pub mod correlation;
pub mod error;
pub mod estimate;
pub mod io;
pub mod model;
pub mod optim;
pub mod pairs;
pub mod predict;
pub mod simulate;
pub mod specfun;
pub mod study;
mod table;

pub use error::{Error, Result};
pub use model::{CorrelationModel, Family, FieldModel, Lag, LocationSet, PoissonFieldModel, SeedSpec, ZipFieldModel};
pub use specfun::SeriesControl;
