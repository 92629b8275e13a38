//! Location pairs selected by cut-off weights, found with a uniform grid index.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Lag, LocationSet};

/// Cut-off weights: a pair enters the pairwise likelihood iff its spatial
/// distance is at most `xi_s` and, for space-time data, its time lag is at
/// most `xi_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairWeights {
    pub xi_s: f64,
    /// No temporal restriction when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_t: Option<f64>,
}

impl PairWeights {
    pub fn spatial(xi_s: f64) -> Self {
        PairWeights { xi_s, xi_t: None }
    }

    pub fn space_time(xi_s: f64, xi_t: f64) -> Self {
        PairWeights {
            xi_s,
            xi_t: Some(xi_t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi_s > 0.0) {
            return Err(Error::InvalidInput(format!("xi_s must be positive, got {}", self.xi_s)));
        }
        if let Some(t) = self.xi_t {
            if !(t >= 0.0) {
                return Err(Error::InvalidInput(format!("xi_t must be nonnegative, got {t}")));
            }
        }
        Ok(())
    }

    pub fn admits(&self, lag: Lag) -> bool {
        lag.h <= self.xi_s && self.xi_t.is_none_or(|xt| lag.t_lag.unwrap_or(0.0) <= xt)
    }
}

/// A pair of observation indices with its lag, oriented so `i` has the
/// smaller location in coordinate order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub lag: Lag,
}

/// All pairs with weight one, sorted by location coordinates (x, y, then
/// time), so the list and any sum over it do not depend on how the
/// observations are numbered.
pub fn weighted_pairs(locs: &LocationSet, w: &PairWeights) -> Result<Vec<Pair>> {
    w.validate()?;
    let n = locs.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let pts = locs.points();
    let (x0, y0) = pts
        .iter()
        .fold((f64::INFINITY, f64::INFINITY), |a, p| (a.0.min(p[0]), a.1.min(p[1])));
    let cell = |p: &[f64; 2]| {
        (
            ((p[0] - x0) / w.xi_s).floor() as i64,
            ((p[1] - y0) / w.xi_s).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize| (pts[i][0], pts[i][1], locs.time(i).unwrap_or(0.0));
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
    });
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut out = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if rank[j] <= rank[i] {
                        continue;
                    }
                    let lag = locs.lag(i, j);
                    if w.admits(lag) {
                        out.push(Pair { i, j, lag });
                    }
                }
            }
        }
    }
    out.sort_by_key(|p| (rank[p.i], rank[p.j]));
    Ok(out)
}
