use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use poisson_field::bivariate::{bivariate_pmf, gc_bivariate_pmf, BivariatePoissonQuery};
use poisson_field::correlation::{rho_poisson, rho_poisson_gc, rho_poisson_lg, LgParams};
use poisson_field::estimate::{
    bootstrap_std_errors, fit, godambe_std_errors, FitConfig, FitData, FitResult, Method,
};
use poisson_field::io::{read_observations, read_targets, write_observations, write_predictions};
use poisson_field::predict::{crossval_rmse, linear_predict};
use poisson_field::simulate::{perturbed_grid, simulate_poisson_field, simulate_zip_field, uniform_design};
use poisson_field::study::{run_study, StudySpec};
use poisson_field::{CorrelationModel, Error, Lag, PoissonFieldModel, SeedSpec, SeriesControl, ZipFieldModel};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "poisson-field", version, about = "Poisson random fields: simulate, fit, predict, study")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Log as JSON lines on stderr.
    #[arg(long, global = true)]
    log_json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    PoissonWpl,
    GaussianWpl,
    GaussianMl,
    ZipWpl,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::PoissonWpl => Method::PoissonWpl,
            MethodArg::GaussianWpl => Method::GaussianWpl,
            MethodArg::GaussianMl => Method::GaussianMl,
            MethodArg::ZipWpl => Method::ZipWpl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StdErrors {
    Bootstrap,
    Godambe,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate counts at a perturbed grid or at the locations of a CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// `grid` or a CSV with x, y[, t] and covariate columns.
        #[arg(long, default_value = "grid")]
        locs: String,
        #[arg(long, default_value_t = 15)]
        grid_side: usize,
        #[arg(long, default_value_t = 0.05)]
        grid_spacing: f64,
        #[arg(long, default_value_t = 0.015)]
        grid_jitter: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to a data CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "poisson-wpl")]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        std_errors: Option<StdErrors>,
        /// Bootstrap or score-simulation size for standard errors.
        #[arg(long, default_value_t = 100)]
        boot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Optimal linear prediction at target locations from a fitted model.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report negative predictions as zero.
        #[arg(long)]
        clamp: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Random-split cross-validation of the prediction RMSE.
    Crossval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "poisson-wpl")]
        method: MethodArg,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-repeat RMSE CSV.
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run a replicated simulation study.
    Study {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Long-format CSV of every replicate estimate.
        #[arg(long)]
        replicates_csv: Option<PathBuf>,
    },
    /// Correlation curves of the Poisson, Poisson log-Gaussian and Poisson
    /// Gaussian-copula fields against distance.
    CorrTable {
        #[arg(long)]
        model: PathBuf,
        /// `start:stop:step`, inclusive of stop.
        #[arg(long, default_value = "0:1:0.01")]
        distances: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Poisson and Gaussian-copula pair probabilities on a count grid.
    PmfGrid {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 12)]
        max_count: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Model block for `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimModel {
    beta: Vec<f64>,
    corr: CorrelationModel,
    /// Bernoulli-layer mean of a zero-inflated field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    /// Bernoulli-layer correlation; defaults to `corr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corr_b: Option<CorrelationModel>,
}

#[derive(Serialize)]
struct SimSidecar<'a> {
    model: &'a SimModel,
    seed: u64,
    locs: &'a str,
    n: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct CurveSpec {
    /// Defaults to the mean of `lg`.
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    lg: Option<LgParams>,
}

#[derive(Debug, Clone, Deserialize)]
struct CorrTableModel {
    corr: CorrelationModel,
    curves: Vec<CurveSpec>,
}

enum Failure {
    Usage(String),
    Lib(Error),
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Run<T> = std::result::Result<T, Failure>;

fn open(path: &Path) -> Run<BufReader<File>> {
    let f = File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(BufReader::new(f))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Run<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())).into())
}

/// Writes through a temporary file in the destination directory, renamed into
/// place once complete.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> poisson_field::Result<()>) -> Run<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::from)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush().map_err(Error::from)?;
    }
    tmp.persist(path).map_err(|e| Error::from(e.error))?;
    Ok(())
}

fn write_json_atomic<T: Serialize>(path: &Path, v: &T) -> Run<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, v)?;
        writeln!(w)?;
        Ok(())
    })
}

fn parse_range(s: &str) -> Run<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("distances must be start:stop:step, got '{s}'")))?;
    let [a, b, h] = parts[..] else {
        return Err(Failure::Usage(format!("distances must be start:stop:step, got '{s}'")));
    };
    if !(h > 0.0) || b < a || !a.is_finite() || !b.is_finite() {
        return Err(Failure::Usage(format!("bad distance range '{s}'")));
    }
    let n = ((b - a) / h + 1e-9).floor() as usize;
    // rounded so that 0.1 * 3 prints as 0.3
    Ok((0..=n).map(|k| ((a + k as f64 * h) * 1e12).round() / 1e12).collect())
}

fn simulate_cmd(
    model_path: &Path,
    locs: &str,
    grid: (usize, f64, f64),
    seed: u64,
    out: &Path,
) -> Run<()> {
    let model: SimModel = read_json(model_path)?;
    if model.beta.is_empty() {
        return Err(Error::InvalidInput("model needs at least an intercept in 'beta'".into()).into());
    }
    let root = SeedSpec::new(seed, 0);
    let (points, design) = if locs == "grid" {
        let pts = perturbed_grid(grid.0, grid.1, grid.2, root.child(0))?;
        let design = uniform_design(pts.len(), model.beta.len() - 1, root.child(1));
        (pts, design)
    } else {
        read_targets(open(Path::new(locs))?)?
    };
    let base = PoissonFieldModel::new(model.beta.clone(), design.clone(), model.corr)?;
    let counts = match model.theta {
        None => simulate_poisson_field(&base, &points, root.child(2))?,
        Some(theta) => simulate_zip_field(
            &ZipFieldModel {
                base,
                theta,
                corr_b: model.corr_b.unwrap_or(model.corr),
            },
            &points,
            root.child(2),
        )?,
    };
    let data = FitData::new(points, counts, design)?;
    write_atomic(out, |w| write_observations(w, &data, &[]))?;
    let mut side = out.as_os_str().to_owned();
    side.push(".json");
    write_json_atomic(
        Path::new(&side),
        &SimSidecar {
            model: &model,
            seed,
            locs,
            n: data.len(),
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn fit_cmd(
    data: &Path,
    config: &Path,
    method: Method,
    out: &Path,
    se: Option<StdErrors>,
    boot: usize,
    seed: u64,
) -> Run<()> {
    let table = read_observations(open(data)?)?;
    let cfg: FitConfig = read_json(config)?;
    let mut res = fit(method, &table.data, &cfg)?;
    if res.converged {
        let s = SeedSpec::new(seed, 0);
        res.std_errors = match se {
            None => None,
            Some(StdErrors::Bootstrap) => Some(bootstrap_std_errors(&res, &table.data, &cfg, boot, s)?),
            Some(StdErrors::Godambe) => Some(godambe_std_errors(&res, &table.data, &cfg, boot, s)?),
        };
    }
    write_json_atomic(out, &res)?;
    if res.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn predict_cmd(fit_path: &Path, data: &Path, targets: &Path, out: &Path, clamp: bool, config: Option<&Path>) -> Run<()> {
    let res: FitResult = read_json(fit_path)?;
    let table = read_observations(open(data)?)?;
    let (tlocs, tdesign) = read_targets(open(targets)?)?;
    let ctrl = match config {
        Some(p) => read_json::<FitConfig>(p)?.series,
        None => SeriesControl::default(),
    };
    let model = res.estimate.field_model(table.data.design.clone())?;
    let mut p = linear_predict(&model, &table.data.locs, &table.data.counts, &tlocs, &tdesign, &ctrl)?;
    if clamp {
        p.clamp_nonnegative();
    }
    write_atomic(out, |w| write_predictions(w, &tlocs, &p))
}

#[allow(clippy::too_many_arguments)]
fn crossval_cmd(
    data: &Path,
    config: &Path,
    method: Method,
    split: f64,
    repeats: usize,
    seed: u64,
    out: &Path,
    summary: Option<&Path>,
) -> Run<()> {
    let table = read_observations(open(data)?)?;
    let cfg: FitConfig = read_json(config)?;
    let rep = crossval_rmse(method, &table.data, &cfg, split, repeats, SeedSpec::new(seed, 0))?;
    let ok: Vec<usize> = (0..repeats).filter(|r| !rep.failed.contains(r)).collect();
    write_atomic(out, |w| {
        writeln!(w, "repeat,rmse,baseline_rmse")?;
        for (k, r) in ok.iter().enumerate() {
            writeln!(w, "{r},{:?},{:?}", rep.rmse[k], rep.baseline_rmse[k])?;
        }
        Ok(())
    })?;
    if let Some(s) = summary {
        write_json_atomic(s, &rep)?;
    }
    log::info!(
        "mean RMSE {:.4} vs intercept-only {:.4} over {} repeats",
        rep.mean_rmse,
        rep.mean_baseline_rmse,
        ok.len()
    );
    Ok(())
}

fn study_cmd(spec: &Path, out: &Path, csv: Option<&Path>) -> Run<()> {
    let spec: StudySpec = read_json(spec)?;
    let report = run_study(&spec)?;
    for m in &report.methods {
        log::info!("{}: {:.2}s total fitting time", m.method.as_str(), m.seconds);
    }
    write_json_atomic(out, &report)?;
    if let Some(p) = csv {
        write_atomic(p, |w| report.write_estimates_csv(w))?;
    }
    Ok(())
}

fn corr_table_cmd(model: &Path, distances: &str, out: &Path) -> Run<()> {
    let m: CorrTableModel = read_json(model)?;
    m.corr.validate()?;
    let hs = parse_range(distances)?;
    let ctrl = SeriesControl::default();
    let mut rows = Vec::new();
    for c in &m.curves {
        let lambda = match (c.lambda, c.lg) {
            (Some(l), _) => l,
            (None, Some(lg)) => LgParams::new(lg.mu, lg.sigma2)?.mean(),
            (None, None) => return Err(Error::InvalidInput("each curve needs 'lambda' or 'lg'".into()).into()),
        };
        for &h in &hs {
            let lag = Lag::spatial(h);
            let r = m.corr.rho(lag);
            let zero = lag.is_zero();
            let rn = rho_poisson(r, lambda, lambda, &ctrl)?;
            let rlg = match c.lg {
                Some(_) if zero => Some(1.0),
                Some(lg) => Some(rho_poisson_lg(r, &LgParams::new(lg.mu, lg.sigma2)?)),
                None => None,
            };
            let rgc = if zero { 1.0 } else { rho_poisson_gc(r, lambda)? };
            rows.push((lambda, h, r, rn, rlg, rgc));
        }
    }
    write_atomic(out, |w| {
        writeln!(w, "lambda,distance,rho_underlying,rho_poisson,rho_lg,rho_gc")?;
        for (l, h, r, rn, rlg, rgc) in &rows {
            let lg = rlg.map(|v| format!("{v:?}")).unwrap_or_default();
            writeln!(w, "{l:?},{h:?},{r:?},{rn:?},{lg},{rgc:?}")?;
        }
        Ok(())
    })
}

fn pmf_grid_cmd(lambda: f64, rho: f64, max: u64, out: &Path) -> Run<()> {
    let ctrl = SeriesControl::default();
    let mut rows = Vec::new();
    for n in 0..=max {
        for m in 0..=max {
            let pp = bivariate_pmf(
                &BivariatePoissonQuery {
                    n,
                    m,
                    lambda_i: lambda,
                    lambda_j: lambda,
                    rho,
                },
                &ctrl,
            )?;
            let pg = gc_bivariate_pmf(n, m, lambda, lambda, rho)?;
            rows.push((n, m, pg, pp));
        }
    }
    write_atomic(out, |w| {
        writeln!(w, "n,m,p_gc,p_poisson,difference")?;
        for (n, m, pg, pp) in &rows {
            writeln!(w, "{n},{m},{pg:?},{pp:?},{:?}", pg - pp)?;
        }
        Ok(())
    })
}

fn init_logging(verbose: u8, json: bool) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let mut b = env_logger::Builder::new();
    b.filter_level(level).parse_default_env();
    if json {
        b.format(|buf, rec| {
            let line = serde_json::json!({
                "level": rec.level().as_str(),
                "target": rec.target(),
                "message": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    b.init();
}

fn run(cli: Cli) -> Run<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.cmd {
        Cmd::Simulate {
            model,
            locs,
            grid_side,
            grid_spacing,
            grid_jitter,
            seed,
            out,
        } => simulate_cmd(&model, &locs, (grid_side, grid_spacing, grid_jitter), seed, &out),
        Cmd::Fit {
            data,
            config,
            method,
            out,
            std_errors,
            boot,
            seed,
        } => fit_cmd(&data, &config, method.into(), &out, std_errors, boot, seed),
        Cmd::Predict {
            fit,
            data,
            targets,
            out,
            clamp,
            config,
        } => predict_cmd(&fit, &data, &targets, &out, clamp, config.as_deref()),
        Cmd::Crossval {
            data,
            config,
            method,
            split,
            repeats,
            seed,
            out,
            summary,
        } => crossval_cmd(&data, &config, method.into(), split, repeats, seed, &out, summary.as_deref()),
        Cmd::Study {
            spec,
            out,
            replicates_csv,
        } => study_cmd(&spec, &out, replicates_csv.as_deref()),
        Cmd::CorrTable { model, distances, out } => corr_table_cmd(&model, &distances, &out),
        Cmd::PmfGrid {
            lambda,
            rho,
            max_count,
            out,
        } => pmf_grid_cmd(lambda, rho, max_count, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose, cli.log_json);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::NotConverged) => {
            eprintln!("error: optimizer did not converge (result written)");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_DATA })
        }
    }
}
