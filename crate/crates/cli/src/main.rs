use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lpkfda::dataset::{EvaluationGrid, FunctionalDataset};
use lpkfda::estimation::{
    default_noise_bandwidth, estimate_covariance, estimate_mean, estimate_noise_variance,
};
use lpkfda::flm::{coefficient_bands, fit_flm, Restriction};
use lpkfda::inference::{
    covariance_eigen, global_test, sample_mixture, Methods, MixtureNull, Retention, TestOptions,
};
use lpkfda::io::{
    curves_table, dataset_table, grid_table, load_covariates, load_dataset, parse_contrast, parse_rhs,
    read_report, surface_table, to_csv, write_atomic, LoadOptions,
};
use lpkfda::numerics::spawn_stream;
use lpkfda::simulation::{generate_sample, run_bandwidth_study, SimConfig, BANDWIDTH_MULTIPLIERS};
use lpkfda::smoothing::{default_candidates, reconstruct, select_bandwidth, CurveSet};
use lpkfda::{FdaError, KernelFamily, SmootherSpec};

#[derive(Parser)]
#[command(
    name = "lpkfda",
    version,
    about = "Smoothing-first inference for functional data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// GCV scores over candidate bandwidths and the selected h*.
    Gcv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        /// Comma-separated candidate bandwidths (default: 30 log-spaced values).
        #[arg(long)]
        candidates: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstructed curves on the grid.
    Smooth {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean function of the reconstructions.
    Mean {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Covariance surface; eigenvalues are printed to stdout.
    Cov {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        #[arg(long, default_value_t = 0.9999)]
        trace_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Noise variance function.
    Sigma2 {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        /// Defaults to (b - a) N^(-1/5).
        #[arg(long)]
        noise_bandwidth: Option<f64>,
        #[arg(long, default_value = "gaussian")]
        noise_kernel: KernelFamily,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Functional linear model coefficients with pointwise bands.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        /// Covariates CSV (subject_id,x1,...,xq).
        #[arg(long)]
        covariates: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global test of C beta(t) = c(t) on an interval.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        #[arg(long)]
        covariates: PathBuf,
        /// Contrast rows, inline (`1,-1,0;0,1,-1`) or a file.
        #[arg(long)]
        contrast: String,
        /// c(t): inline constants or a CSV `t,c1,...,ck` (default zero).
        #[arg(long)]
        rhs: Option<String>,
        /// `a,b` or one of whole, spring, summer, autumn (default: the domain).
        #[arg(long)]
        interval: Option<String>,
        #[arg(long, default_value = "chi2,sim,boot")]
        methods: String,
        #[arg(long = "B-sim", default_value_t = 10_000)]
        b_sim: usize,
        #[arg(long = "B-boot", default_value_t = 10_000)]
        b_boot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.9999)]
        trace_fraction: f64,
        /// Retain every positive eigenvalue instead of a trace fraction.
        #[arg(long)]
        positive_count: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bandwidth study on simulated data (one CSV row per replicate and multiplier).
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        #[arg(long, default_value = "gaussian")]
        kernel: KernelFamily,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draws from the chi-square-type null mixture.
    Nulldist {
        /// Mixture weights, comma-separated.
        #[arg(long, conflicts_with = "report", required_unless_present = "report")]
        lambdas: Option<String>,
        /// Degrees of freedom per term.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Take the mixture from a test report instead.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes one simulated dataset as `subject_id,t,y`.
    Generate {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Observations CSV (subject_id,t,y).
    #[arg(long)]
    data: PathBuf,
    /// Domain `a,b` (default: observed time range).
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value_t = 1)]
    min_points: usize,
    #[arg(long)]
    drop_below_min: bool,
}

#[derive(Args)]
struct SmootherArgs {
    #[arg(long, default_value = "gaussian")]
    kernel: KernelFamily,
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// A positive number or `gcv`.
    #[arg(long, default_value = "gcv")]
    bandwidth: String,
    #[arg(long, default_value_t = 101)]
    grid_size: usize,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 40)]
    m: usize,
    #[arg(long, default_value_t = 0.1)]
    r_miss: f64,
    #[arg(long, default_value_t = 400)]
    grid_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig {
            n: self.n,
            m: self.m,
            r_miss: self.r_miss,
            grid_size: self.grid_size,
            seed: self.seed,
            ..SimConfig::default()
        }
    }
}

enum CliError {
    Usage(String),
    Fda(FdaError),
}

impl From<FdaError> for CliError {
    fn from(e: FdaError) -> Self {
        CliError::Fda(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_list(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("{what}: not a number: {v:?}")))
        })
        .collect()
}

fn parse_pair(text: &str, what: &str) -> CliResult<(f64, f64)> {
    match parse_list(text, what)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(usage(format!("{what} must be `a,b`"))),
    }
}

fn parse_interval(text: &str) -> CliResult<(f64, f64)> {
    match text.trim().to_ascii_lowercase().as_str() {
        "whole" => Ok((1.0, 365.0)),
        "spring" => Ok((60.0, 151.0)),
        "summer" => Ok((152.0, 243.0)),
        "autumn" | "fall" => Ok((244.0, 334.0)),
        _ => parse_pair(text, "--interval"),
    }
}

fn parse_methods(text: &str) -> CliResult<Methods> {
    let mut m = Methods::default();
    for part in text.split(',').map(str::trim) {
        match part {
            "chi2" => m.chi2 = true,
            "sim" => m.sim = true,
            "boot" => m.boot = true,
            other => return Err(usage(format!("unknown method {other:?}"))),
        }
    }
    Ok(m)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, bytes)?,
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Fda(e.into()))?,
    }
    Ok(())
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn load(data: &DataArgs) -> CliResult<FunctionalDataset> {
    let domain = data
        .domain
        .as_deref()
        .map(|d| parse_pair(d, "--domain"))
        .transpose()?;
    let options = LoadOptions {
        min_points: data.min_points,
        drop_below_min: data.drop_below_min,
        domain,
    };
    let (dataset, report) = load_dataset(&data.data, &options)?;
    if !report.dropped.is_empty() {
        eprintln!(
            "{}",
            json!({"dropped_subjects": report.dropped.len(), "ids": report.dropped})
        );
    }
    Ok(dataset)
}

fn resolve_spec(dataset: &FunctionalDataset, s: &SmootherArgs) -> CliResult<SmootherSpec> {
    let template = SmootherSpec::new(s.kernel, s.order, 1.0)?;
    if s.bandwidth.eq_ignore_ascii_case("gcv") {
        let cands = default_candidates(dataset)?;
        let h = select_bandwidth(dataset, &template, &cands)?.h_star;
        Ok(template.with_bandwidth(h)?)
    } else {
        let h: f64 = s
            .bandwidth
            .parse()
            .map_err(|_| usage("--bandwidth must be a number or `gcv`"))?;
        Ok(template.with_bandwidth(h)?)
    }
}

fn smoothed(data: &DataArgs, s: &SmootherArgs) -> CliResult<(FunctionalDataset, CurveSet)> {
    let dataset = load(data)?;
    let spec = resolve_spec(&dataset, s)?;
    let (a, b) = dataset.interval();
    let grid = EvaluationGrid::uniform(a, b, s.grid_size)?;
    let curves = reconstruct(&dataset, &grid, &spec)?;
    Ok((dataset, curves))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gcv {
            data,
            smoother,
            candidates,
            out,
        } => {
            let dataset = load(&data)?;
            let template = SmootherSpec::new(smoother.kernel, smoother.order, 1.0)?;
            let cands = match candidates {
                Some(c) => parse_list(&c, "--candidates")?,
                None => default_candidates(&dataset)?,
            };
            let res = select_bandwidth(&dataset, &template, &cands)?;
            #[derive(serde::Serialize)]
            struct Row {
                bandwidth: f64,
                gcv: f64,
            }
            let rows: Vec<Row> = res
                .candidates
                .iter()
                .zip(&res.scores)
                .map(|(&bandwidth, &gcv)| Row { bandwidth, gcv })
                .collect();
            let table = to_csv(&rows)?;
            match out {
                Some(p) => {
                    write_atomic(&p, &table)?;
                    print_json(&json!({"h_star": res.h_star}));
                }
                None => {
                    emit(None, &table)?;
                    eprintln!("{}", json!({"h_star": res.h_star}));
                }
            }
        }
        Command::Smooth { data, smoother, out } => {
            let (_, curves) = smoothed(&data, &smoother)?;
            emit(
                out.as_deref(),
                &curves_table(&curves.grid, &curves.subject_ids, &curves.curves)?,
            )?;
        }
        Command::Mean { data, smoother, out } => {
            let (_, curves) = smoothed(&data, &smoother)?;
            let mean = estimate_mean(&curves)?;
            emit(
                out.as_deref(),
                &grid_table(&mean.grid, &[("mean", &mean.values)])?,
            )?;
        }
        Command::Cov {
            data,
            smoother,
            trace_fraction,
            out,
        } => {
            let (_, curves) = smoothed(&data, &smoother)?;
            let cov = estimate_covariance(&curves, &estimate_mean(&curves)?)?;
            let eig = covariance_eigen(&cov, Retention::TraceFraction(trace_fraction))?;
            let summary = json!({"eigenvalues": eig.retained(), "m_hat": eig.m_hat});
            match out {
                Some(p) => {
                    write_atomic(&p, &surface_table(&cov.grid, &cov.matrix)?)?;
                    print_json(&summary);
                }
                None => {
                    emit(None, &surface_table(&cov.grid, &cov.matrix)?)?;
                    eprintln!("{summary}");
                }
            }
        }
        Command::Sigma2 {
            data,
            smoother,
            noise_bandwidth,
            noise_kernel,
            out,
        } => {
            let (dataset, curves) = smoothed(&data, &smoother)?;
            let b = noise_bandwidth.unwrap_or_else(|| default_noise_bandwidth(&dataset));
            let est = estimate_noise_variance(&dataset, &curves, b, noise_kernel)?;
            let values: Vec<f64> = est.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            emit(out.as_deref(), &grid_table(&est.grid, &[("sigma2", &values)])?)?;
        }
        Command::Fit {
            data,
            smoother,
            covariates,
            level,
            out,
        } => {
            let (_, curves) = smoothed(&data, &smoother)?;
            let x = load_covariates(&covariates, &curves.subject_ids)?;
            let fit = fit_flm(&curves, &x)?;
            let bands = coefficient_bands(&fit, level)?;
            let mut names = Vec::new();
            let mut cols = Vec::new();
            for (r, label) in x.labels().iter().enumerate() {
                for (prefix, m) in [
                    ("", &fit.beta),
                    ("lower_", &bands.lower),
                    ("upper_", &bands.upper),
                ] {
                    names.push(format!("{prefix}{label}"));
                    cols.push(m.row(r).to_vec());
                }
            }
            let columns: Vec<(&str, &[f64])> = names
                .iter()
                .zip(&cols)
                .map(|(n, c)| (n.as_str(), c.as_slice()))
                .collect();
            emit(out.as_deref(), &grid_table(&fit.grid, &columns)?)?;
        }
        Command::Test {
            data,
            smoother,
            covariates,
            contrast,
            rhs,
            interval,
            methods,
            b_sim,
            b_boot,
            seed,
            trace_fraction,
            positive_count,
            out,
        } => {
            let methods = parse_methods(&methods)?;
            let interval = interval.as_deref().map(parse_interval).transpose()?;
            let (dataset, curves) = smoothed(&data, &smoother)?;
            let x = load_covariates(&covariates, &curves.subject_ids)?;
            let fit = fit_flm(&curves, &x)?;
            let c = parse_contrast(&contrast)?;
            let rhs_m = parse_rhs(rhs.as_deref(), c.rows(), &fit.grid)?;
            let interval = interval.unwrap_or(dataset.interval());
            let restriction = Restriction::new(c, rhs_m, interval)?;
            let options = TestOptions {
                methods,
                b_sim,
                b_boot,
                seed,
                retention: if positive_count {
                    Retention::PositiveCount
                } else {
                    Retention::TraceFraction(trace_fraction)
                },
            };
            let mut report = global_test(&fit, &restriction, &options)?;
            report.config = json!({
                "data": data.data,
                "kernel": curves.spec.family(),
                "order": curves.spec.order(),
                "bandwidth": curves.spec.bandwidth(),
                "grid_size": smoother.grid_size,
                "domain": dataset.interval(),
                "contrast": contrast,
                "rhs": rhs,
                "n_subjects": dataset.n_subjects(),
            });
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Fda(FdaError::Io(e.to_string())))?;
            if let Some(p) = out {
                write_atomic(&p, text.as_bytes())?;
            }
            println!("{text}");
        }
        Command::Simulate {
            sim,
            replicates,
            kernel,
            order,
            out,
        } => {
            let template = SmootherSpec::new(kernel, order, 1.0)?;
            let study = run_bandwidth_study(&sim.config(), replicates, &BANDWIDTH_MULTIPLIERS, &template)?;
            for (r, e) in &study.dropped {
                eprintln!("{}", json!({"dropped_replicate": r, "error": e}));
            }
            emit(out.as_deref(), &to_csv(&study.rows)?)?;
        }
        Command::Nulldist {
            lambdas,
            k,
            report,
            draws,
            seed,
            out,
        } => {
            let mixture = match (lambdas, report) {
                (Some(l), _) => MixtureNull::new(parse_list(&l, "--lambdas")?, k)?,
                (None, Some(p)) => read_report(&p)?.mixture,
                (None, None) => return Err(usage("need --lambdas or --report")),
            };
            let values = sample_mixture(&mixture, draws, &mut spawn_stream(seed, 0));
            #[derive(serde::Serialize)]
            struct Row {
                value: f64,
            }
            let rows: Vec<Row> = values.into_iter().map(|value| Row { value }).collect();
            emit(out.as_deref(), &to_csv(&rows)?)?;
        }
        Command::Generate { sim, out } => {
            let cfg = sim.config();
            let sample = generate_sample(&cfg, &mut spawn_stream(cfg.seed, 0))?;
            emit(out.as_deref(), &dataset_table(&sample.dataset)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", json!({"error": "Usage", "message": msg}));
            ExitCode::from(2)
        }
        Err(CliError::Fda(e)) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(if e.is_data_error() { 3 } else { 4 })
        }
    }
}
