//! CSV exchange of observations, targets and predictions.
//!
//! Columns are `x`, optional `y`, optional `t`, then `count` for observations,
//! then covariates. Every other column is read as a covariate, in file order;
//! the design gets a leading column of ones.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::estimate::FitData;
use crate::model::LocationSet;
use crate::predict::PredictionResult;

const COORDS: [&str; 3] = ["x", "y", "t"];

/// Observations plus the names of the covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub data: FitData,
    pub covariates: Vec<String>,
}

struct Parsed {
    locs: LocationSet,
    counts: Option<Vec<u64>>,
    design: Vec<Vec<f64>>,
    covariates: Vec<String>,
}

fn parse<R: Read>(r: R, need_count: bool) -> Result<Parsed> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let ix = col("x").ok_or_else(|| Error::InvalidInput("CSV lacks an 'x' column".into()))?;
    let (iy, it, ic) = (col("y"), col("t"), col("count"));
    if need_count && ic.is_none() {
        return Err(Error::InvalidInput("CSV lacks a 'count' column".into()));
    }
    if it.is_some() && iy.is_none() {
        return Err(Error::InvalidInput("a 't' column needs a 'y' column".into()));
    }
    let cov_idx: Vec<usize> = (0..header.len())
        .filter(|k| !COORDS.contains(&header[*k].as_str()) && header[*k] != "count")
        .collect();
    let covariates = cov_idx.iter().map(|&k| header[k].clone()).collect();
    let mut pts = Vec::new();
    let mut times = Vec::new();
    let mut counts = Vec::new();
    let mut design = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let num = |k: usize| -> Result<f64> {
            let s = &rec[k];
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidInput(format!("row {row}, column '{}': bad number '{s}'", header[k])))
        };
        pts.push([num(ix)?, iy.map(num).transpose()?.unwrap_or(0.0)]);
        if let Some(k) = it {
            times.push(num(k)?);
        }
        if let Some(k) = ic {
            let s = &rec[k];
            counts.push(
                s.parse::<u64>()
                    .map_err(|_| Error::InvalidInput(format!("row {row}: count '{s}' is not a nonnegative integer")))?,
            );
        }
        let mut d = vec![1.0];
        for &k in &cov_idx {
            d.push(num(k)?);
        }
        design.push(d);
    }
    if pts.is_empty() {
        return Err(Error::InvalidInput("CSV has no data rows".into()));
    }
    let locs = match (iy, it) {
        (None, _) => LocationSet::new_1d(pts.iter().map(|p| p[0]).collect())?,
        (Some(_), None) => LocationSet::new_2d(pts)?,
        (Some(_), Some(_)) => LocationSet::with_times(pts, times)?,
    };
    Ok(Parsed {
        locs,
        counts: ic.map(|_| counts),
        design,
        covariates,
    })
}

pub fn read_observations<R: Read>(r: R) -> Result<ObservationTable> {
    let p = parse(r, true)?;
    Ok(ObservationTable {
        data: FitData::new(p.locs, p.counts.unwrap_or_default(), p.design)?,
        covariates: p.covariates,
    })
}

/// Prediction targets: locations and design rows. A `count` column, if
/// present, is ignored.
pub fn read_targets<R: Read>(r: R) -> Result<(LocationSet, Vec<Vec<f64>>)> {
    let p = parse(r, false)?;
    Ok((p.locs, p.design))
}

fn coord_header(locs: &LocationSet) -> Vec<String> {
    let mut h = vec!["x".to_string()];
    if locs.dim() == 2 {
        h.push("y".into());
    }
    if locs.has_time() {
        h.push("t".into());
    }
    h
}

fn coord_fields(locs: &LocationSet, i: usize) -> Vec<String> {
    let p = locs.point(i);
    let mut f = vec![format!("{:?}", p[0])];
    if locs.dim() == 2 {
        f.push(format!("{:?}", p[1]));
    }
    if let Some(t) = locs.time(i) {
        f.push(format!("{t:?}"));
    }
    f
}

/// Writes observations so that `read_observations` recovers them exactly.
/// Covariates without a given name are called `u1`, `u2`, ...
pub fn write_observations<W: Write>(w: W, data: &FitData, covariates: &[String]) -> Result<()> {
    let k = data.n_covariates() - 1;
    let mut names: Vec<String> = covariates.iter().take(k).cloned().collect();
    names.extend((names.len() + 1..=k).map(|j| format!("u{j}")));
    let mut out = csv::Writer::from_writer(w);
    let mut header = coord_header(&data.locs);
    header.push("count".into());
    header.extend(names);
    out.write_record(&header)?;
    for i in 0..data.len() {
        let mut f = coord_fields(&data.locs, i);
        f.push(data.counts[i].to_string());
        f.extend(data.design[i][1..].iter().map(|v| format!("{v:?}")));
        out.write_record(&f)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_predictions<W: Write>(w: W, targets: &LocationSet, p: &PredictionResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = coord_header(targets);
    header.extend(["predicted".into(), "mse".into()]);
    out.write_record(&header)?;
    for i in 0..targets.len() {
        let mut f = coord_fields(targets, i);
        f.push(format!("{:?}", p.predicted[i]));
        f.push(format!("{:?}", p.mse[i]));
        out.write_record(&f)?;
    }
    out.flush()?;
    Ok(())
}
