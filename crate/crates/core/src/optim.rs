//! Derivative-free Nelder–Mead minimization with restarts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    /// Stop when the spread of simplex values is below `ftol·(1 + |f_best|)`.
    pub ftol: f64,
    /// ... and the largest vertex distance from the best vertex is below this.
    pub xtol: f64,
    pub max_evals: usize,
    /// Fresh simplices built around the incumbent after the first run.
    pub restarts: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            ftol: 1e-6,
            xtol: 1e-5,
            max_evals: 2000,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`; `step` sets the initial simplex edge per
/// coordinate. Non-finite values count as `+∞`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    cfg: &NelderMeadConfig,
) -> OptimResult {
    assert_eq!(x0.len(), step.len());
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evals = 0;
    let mut iterations = 0;
    let mut best = x0.to_vec();
    let mut fbest = eval(&best, &mut evals);
    let mut converged = false;
    for _ in 0..=cfg.restarts {
        let run = simplex_run(&mut eval, &best, fbest, step, cfg, &mut evals);
        iterations += run.iterations;
        converged = run.converged;
        if run.f <= fbest {
            best = run.x;
            fbest = run.f;
        }
        if !converged {
            break;
        }
    }
    OptimResult {
        x: best,
        f: fbest,
        evals,
        iterations,
        converged,
    }
}

fn simplex_run(
    eval: &mut impl FnMut(&[f64], &mut usize) -> f64,
    x0: &[f64],
    f0: f64,
    step: &[f64],
    cfg: &NelderMeadConfig,
    evals: &mut usize,
) -> OptimResult {
    let d = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut vals = vec![f0];
    for k in 0..d {
        let mut p = x0.to_vec();
        p[k] += step[k];
        vals.push(eval(&p, evals));
        pts.push(p);
    }
    let mut iterations = 0;
    let converged = loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&k| pts[k].clone()).collect();
        vals = order.iter().map(|&k| vals[k]).collect();

        let spread = vals[d] - vals[0];
        let diam = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if spread <= cfg.ftol * (1.0 + vals[0].abs()) && diam <= cfg.xtol {
            break true;
        }
        if *evals >= cfg.max_evals {
            break false;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..d)
            .map(|k| pts[..d].iter().map(|p| p[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[d])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr, evals);
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = eval(&xe, evals);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let xc = along(if fr < vals[d] { 0.5 } else { -0.5 });
        let fc = eval(&xc, evals);
        if fc < vals[d].min(fr) {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        for k in 1..=d {
            let p: Vec<f64> = pts[k].iter().zip(&pts[0]).map(|(a, b)| b + 0.5 * (a - b)).collect();
            vals[k] = eval(&p, evals);
            pts[k] = p;
        }
    };
    OptimResult {
        x: pts[0].clone(),
        f: vals[0],
        evals: *evals,
        iterations,
        converged,
    }
}
