//! Command-line front end of the `tvcm` binary.
//!
//! Every failure is reported on stderr as one JSON line
//! `{"error":{"kind":…,"code":…,"message":…}}` with exit code 2 (usage),
//! 3 (data) or 4 (numerical failure).

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bandwidth;
use crate::experiments::{self, EvalGrid, StudyConfig};
use crate::fit::{self, FitPoint};
use crate::io::{self, fmt_f64, TransformSpec};
use crate::kernel::Kernel;
use crate::simulate::{self, SimConfig, Surface};
use crate::svg::{self, Series, Stroke};
use crate::{par, Dataset, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "tvcm", version, about = "Bivariate time-varying coefficient models with a terminal event")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// RNG seed (folds, simulation, subsampling)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); never changes results
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Response transform applied at ingestion: `none` or `log<scale>`
    #[arg(long, global = true, default_value = "none")]
    transform: String,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Probability mass kept by the truncated kernel
    #[arg(long, global = true, default_value_t = crate::kernel::DEFAULT_COVERAGE)]
    kernel_coverage: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate β(t0, s0) with sandwich standard errors and CIs
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        t0: f64,
        #[arg(long)]
        s0: f64,
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Keep each observation with this probability before fitting
        #[arg(long)]
        subsample: Option<f64>,
    },
    /// Estimate β(t, T − t) along slices of fixed T
    Slice {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated T values
        #[arg(long = "T", value_delimiter = ',', required = true)]
        t_fixed: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        t_step: f64,
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Add the reference surfaces as a truth column (simulated data only)
        #[arg(long)]
        truth: bool,
        /// Write one SVG per (T, coefficient) into this directory
        #[arg(long)]
        svg_dir: Option<PathBuf>,
        #[arg(long)]
        subsample: Option<f64>,
    },
    /// Cross-validate a bandwidth grid and undersmooth the winner
    Cv {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated bandwidths (default: 10 log-spaced on [0.5, 4])
        #[arg(long, value_delimiter = ',')]
        h_grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = bandwidth::DEFAULT_FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = bandwidth::DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long)]
        subsample: Option<f64>,
    },
    /// Generate a dataset from the reference process
    Simulate {
        /// TOML simulation config
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of subjects when no config is given
        #[arg(long)]
        n: Option<usize>,
        /// Zero the error process
        #[arg(long)]
        noiseless: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-subject event and censoring times
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Run a Monte Carlo study and write its tables
    Study {
        /// TOML study config
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from an existing record log in out-dir
        #[arg(long)]
        resume: bool,
    },
    /// Quadrature moments of the kernel
    KernelMoments {
        #[arg(long, default_value_t = 64)]
        quadrature_n: usize,
    },
    /// Render a coverage table (t,s,coverage[,valid]) as an SVG heatmap
    Heatmap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "coverage")]
        title: String,
    },
}

/// Sink for command output and error records.
pub type Sink<'a> = &'a mut (dyn Write + Send);

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Tables go to `out`, error records to `err`.
pub fn run_from<I, T>(args: I, out: Sink, err: Sink) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            _ => {
                let msg = e.render().to_string();
                let body: Vec<&str> = msg
                    .lines()
                    .map(str::trim)
                    .take_while(|l| !l.starts_with("Usage:"))
                    .filter(|l| !l.is_empty())
                    .collect();
                report_error(err, "usage", 2, body.join(" ").trim_start_matches("error: "));
                return 2;
            }
        },
    };
    let threads = cli.common.threads;
    let outcome = par::with_threads(threads, || run(cli, &mut *out, &mut *err));
    let _ = out.flush();
    match outcome {
        Ok(code) => code,
        Err(e) => {
            report_error(err, e.kind(), e.exit_code(), &e.to_string());
            e.exit_code()
        }
    }
}

fn report_error(err: Sink, kind: &str, code: i32, message: &str) {
    let record = serde_json::json!({ "error": { "kind": kind, "code": code, "message": message } });
    let _ = writeln!(err, "{record}");
}

fn run(cli: Cli, out: Sink, err: Sink) -> Result<i32> {
    let common = &cli.common;
    let kernel = Kernel::truncated_gaussian(common.kernel_coverage)?;
    match &cli.command {
        Command::Fit {
            data,
            t0,
            s0,
            h,
            alpha,
            subsample,
        } => cmd_fit(out, common, &kernel, data, *t0, *s0, *h, *alpha, *subsample),
        Command::Slice {
            data,
            t_fixed,
            t_step,
            h,
            alpha,
            truth,
            svg_dir,
            subsample,
        } => cmd_slice(out, 
            common,
            &kernel,
            data,
            t_fixed,
            *t_step,
            *h,
            *alpha,
            *truth,
            svg_dir.as_deref(),
            *subsample,
        ),
        Command::Cv {
            data,
            h_grid,
            folds,
            gamma,
            subsample,
        } => cmd_cv(out, common, &kernel, data, h_grid.clone(), *folds, *gamma, *subsample),
        Command::Simulate {
            config,
            n,
            noiseless,
            out,
            truth_out,
        } => cmd_simulate(common, config.as_deref(), *n, *noiseless, out, truth_out.as_deref()),
        Command::Study {
            config,
            out_dir,
            resume,
        } => cmd_study(out, err, common, config, out_dir, *resume),
        Command::KernelMoments { quadrature_n } => {
            let m = kernel.moments(*quadrature_n)?;
            match common.format {
                Format::Json => writeln!(out, "{}", to_json(&m))?,
                Format::Csv => {
                    writeln!(out, "quantity,value")?;
                    writeln!(out, "mass,{}", fmt_f64(m.mass))?;
                    writeln!(out, "mu0,{}", fmt_f64(m.mu0))?;
                    writeln!(out, "mu1_x,{}", fmt_f64(m.mu1[0]))?;
                    writeln!(out, "mu1_y,{}", fmt_f64(m.mu1[1]))?;
                    writeln!(out, "mu2_xx,{}", fmt_f64(m.mu2[0][0]))?;
                    writeln!(out, "mu2_xy,{}", fmt_f64(m.mu2[0][1]))?;
                    writeln!(out, "mu2_yy,{}", fmt_f64(m.mu2[1][1]))?;
                    writeln!(out, "truncation_radius,{}", fmt_f64(kernel.truncation_radius()))?;
                }
            }
            Ok(0)
        }
        Command::Heatmap { input, out, title } => cmd_heatmap(input, out, title),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn load(common: &Common, path: &Path, subsample: Option<f64>) -> Result<Dataset> {
    let transform = TransformSpec::parse(&common.transform)?;
    let (ds, report) = io::load_csv(path, transform)?;
    for d in &report.diagnostics {
        log::warn!("{d}");
    }
    log::info!(
        "ingested {} rows: {} kept, {} rejected, {} subjects dropped",
        report.rows_in,
        report.rows_kept,
        report.rows_rejected,
        report.subjects_dropped
    );
    match subsample {
        Some(fraction) => {
            let (ds, dropped) = io::subsample_observation_times(&ds, fraction, common.seed.unwrap_or(0))?;
            if dropped > 0 {
                log::warn!("subsampling emptied {dropped} subjects; dropped");
            }
            Ok(ds)
        }
        None => Ok(ds),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    out: Sink,
    common: &Common,
    kernel: &Kernel,
    data: &Path,
    t0: f64,
    s0: f64,
    h: f64,
    alpha: f64,
    subsample: Option<f64>,
) -> Result<i32> {
    let ds = load(common, data, subsample)?;
    let design = ds.complete_cases()?;
    let fits = fit::fit_grid(&design, &[(t0, s0)], h, kernel, true)?;
    let f = &fits[0];
    let n = design.n_subjects();
    let ci = match f.status {
        fit::FitStatus::Ok => fit::confidence_interval(f, n, alpha)?,
        fit::FitStatus::EmptySupport => return Err(Error::EmptySupport { t0, s0, n_eff: f.n_eff }),
        fit::FitStatus::Singular => return Err(Error::Singular { t0, s0, n_eff: f.n_eff }),
    };
    if f.extrapolated {
        log::warn!("({t0}, {s0}) lies outside the observed (t, T − t) range");
    }
    let se = f.standard_errors(n).unwrap_or_default();
    match common.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                fit: &'a FitPoint,
                n: usize,
                alpha: f64,
                se: &'a [f64],
                ci: &'a [(f64, f64)],
            }
            let body = Out {
                fit: f,
                n,
                alpha,
                se: &se,
                ci: &ci,
            };
            writeln!(out, "{}", to_json(&body))?;
        }
        Format::Csv => {
            writeln!(out, "t0,s0,h,k,estimate,se,lower,upper,n_eff,status")?;
            for k in 0..f.p() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    fmt_f64(t0),
                    fmt_f64(s0),
                    fmt_f64(h),
                    k + 1,
                    fmt_f64(f.beta_hat[k]),
                    fmt_f64(se[k]),
                    fmt_f64(ci[k].0),
                    fmt_f64(ci[k].1),
                    f.n_eff,
                    f.status
                )?;
            }
        }
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SliceOut {
    t_fixed: f64,
    t: f64,
    s: f64,
    k: usize,
    estimate: f64,
    se: f64,
    lower: f64,
    upper: f64,
    truth: Option<f64>,
    n_eff: usize,
    status: String,
}

#[allow(clippy::too_many_arguments)]
fn cmd_slice(
    out: Sink,
    common: &Common,
    kernel: &Kernel,
    data: &Path,
    t_fixed: &[f64],
    t_step: f64,
    h: f64,
    alpha: f64,
    truth: bool,
    svg_dir: Option<&Path>,
    subsample: Option<f64>,
) -> Result<i32> {
    if !(t_step > 0.0) {
        return Err(Error::InvalidArgument("t-step must be positive".into()));
    }
    let ds = load(common, data, subsample)?;
    let design = ds.complete_cases()?;
    let n = design.n_subjects();
    let z = fit::normal_quantile(alpha);
    let resid = fit::residuals(&design, h, kernel)?;
    let mut rows = Vec::new();
    for &big_t in t_fixed {
        let grid = fit::slice_grid(big_t, &fit::slice_times(big_t, t_step))?;
        let fits = fit::fit_grid_with(&design, &grid, h, kernel, Some(&resid));
        for f in &fits {
            let se = f.standard_errors(n);
            for k in 0..design.p() {
                let (est, se_k) = match (&se, f.is_ok()) {
                    (Some(se), true) => (f.beta_hat[k], se[k]),
                    _ => (f64::NAN, f64::NAN),
                };
                let truth = (truth && k < 3).then(|| simulate::true_beta(k + 1, f.t0, f.s0));
                rows.push(SliceOut {
                    t_fixed: big_t,
                    t: f.t0,
                    s: f.s0,
                    k: k + 1,
                    estimate: est,
                    se: se_k,
                    lower: est - z * se_k,
                    upper: est + z * se_k,
                    truth,
                    n_eff: f.n_eff,
                    status: f.status.to_string(),
                });
            }
        }
    }
    match common.format {
        Format::Json => writeln!(out, "{}", to_json(&rows))?,
        Format::Csv => {
            let mut table = String::from("T,t,s,k,estimate,se,lower,upper,n_eff,status");
            if truth {
                table.push_str(",truth");
            }
            table.push('\n');
            for r in &rows {
                let _ = write!(
                    table,
                    "{},{},{},{},{},{},{},{},{},{}",
                    fmt_f64(r.t_fixed),
                    fmt_f64(r.t),
                    fmt_f64(r.s),
                    r.k,
                    fmt_f64(r.estimate),
                    fmt_f64(r.se),
                    fmt_f64(r.lower),
                    fmt_f64(r.upper),
                    r.n_eff,
                    r.status
                );
                if let Some(tr) = r.truth {
                    let _ = write!(table, ",{}", fmt_f64(tr));
                }
                table.push('\n');
            }
            out.write_all(table.as_bytes())?;
        }
    }
    if let Some(dir) = svg_dir {
        std::fs::create_dir_all(dir)?;
        for &big_t in t_fixed {
            for k in 1..=design.p() {
                let sel: Vec<&SliceOut> = rows.iter().filter(|r| r.t_fixed == big_t && r.k == k).collect();
                let mut series = vec![
                    Series {
                        label: "estimate".into(),
                        points: sel.iter().map(|r| (r.t, r.estimate)).collect(),
                        stroke: Stroke::LongDash,
                    },
                    Series {
                        label: "lower".into(),
                        points: sel.iter().map(|r| (r.t, r.lower)).collect(),
                        stroke: Stroke::Dash,
                    },
                    Series {
                        label: "upper".into(),
                        points: sel.iter().map(|r| (r.t, r.upper)).collect(),
                        stroke: Stroke::Dash,
                    },
                ];
                if truth {
                    series.insert(
                        0,
                        Series {
                            label: "truth".into(),
                            points: sel.iter().filter_map(|r| r.truth.map(|v| (r.t, v))).collect(),
                            stroke: Stroke::Solid,
                        },
                    );
                }
                let plot = svg::line_plot(&format!("beta_{k}(t, {big_t} - t)"), "t", &format!("beta_{k}"), &series);
                std::fs::write(dir.join(format!("slice_T{big_t}_beta{k}.svg")), plot)?;
            }
        }
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_cv(
    out: Sink,
    common: &Common,
    kernel: &Kernel,
    data: &Path,
    h_grid: Option<Vec<f64>>,
    folds: usize,
    gamma: f64,
    subsample: Option<f64>,
) -> Result<i32> {
    let ds = load(common, data, subsample)?;
    let design = ds.complete_cases()?;
    let grid = h_grid.unwrap_or_else(bandwidth::default_grid);
    let cv = bandwidth::select_bandwidth(&design, &grid, folds, common.seed.unwrap_or(0), gamma, kernel)?;
    match common.format {
        Format::Json => {
            let mut v = serde_json::to_value(&cv).expect("serializable");
            v["undersmoothing_factor"] = serde_json::json!(cv.undersmoothing_factor());
            writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("serializable"))?;
        }
        Format::Csv => write!(out, "{}", cv_table(&cv))?,
    }
    Ok(0)
}

fn cv_table(cv: &bandwidth::CvResult) -> String {
    let mut out = String::from(
        "h,score,excluded_fraction,selected,h_selected,h_undersmoothed,undersmoothing_factor,gamma,n,folds,seed\n",
    );
    for i in 0..cv.h_grid.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(cv.h_grid[i]),
            if cv.scores[i].is_finite() { fmt_f64(cv.scores[i]) } else { "inf".into() },
            fmt_f64(cv.excluded_fraction[i]),
            (cv.h_grid[i] == cv.h_selected) as u8,
            fmt_f64(cv.h_selected),
            fmt_f64(cv.h_undersmoothed),
            fmt_f64(cv.undersmoothing_factor()),
            fmt_f64(cv.gamma),
            cv.n,
            cv.folds,
            cv.seed
        );
    }
    out
}

fn cmd_simulate(
    common: &Common,
    config: Option<&Path>,
    n: Option<usize>,
    noiseless: bool,
    out: &Path,
    truth_out: Option<&Path>,
) -> Result<i32> {
    let mut cfg: SimConfig = match (config, n) {
        (Some(path), _) => io::load_config(path)?,
        (None, Some(n)) => SimConfig::new(n, 0),
        (None, None) => return Err(Error::InvalidArgument("simulate needs --config or --n".into())),
    };
    if let Some(n) = n {
        cfg.n = n;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if noiseless {
        cfg.noise = false;
    }
    let sim = simulate::gen_dataset(&cfg)?;
    io::save_csv(&sim.dataset, None, out)?;
    if let Some(path) = truth_out {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "subject_id,event_time,censor_time,x2,x3_0,scheduled_visits")?;
        for (s, t) in sim.dataset.subjects().iter().zip(&sim.truth) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.id,
                fmt_f64(t.event_time),
                fmt_f64(t.censor_time),
                fmt_f64(t.x2),
                fmt_f64(t.x3_0),
                t.scheduled_visits
            )?;
        }
        w.flush()?;
    }
    let censored = sim.dataset.n_subjects() - sim.dataset.n_complete();
    log::info!(
        "{} subjects, {} observations, {:.3} censored",
        sim.dataset.n_subjects(),
        sim.dataset.n_observations(),
        censored as f64 / sim.dataset.n_subjects() as f64
    );
    if matches!(cfg.surface, Surface::Constant(_)) {
        log::info!("constant coefficient surface");
    }
    Ok(0)
}

fn cmd_study(out: Sink, err: Sink, common: &Common, config: &Path, out_dir: &Path, resume: bool) -> Result<i32> {
    let mut cfg: StudyConfig = io::load_config(config)?;
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("records.csv");
    if !resume && log_path.exists() {
        std::fs::remove_file(&log_path)?;
    }
    let run = experiments::run_study_logged(&cfg, Some(&log_path))?;
    let result = &run.result;

    let mut summary = String::from(
        "point,t,s,k,truth,mean_estimate,bias,empirical_sd,mean_se,coverage,coverage_mcse,valid\n",
    );
    for s in &result.summaries {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.point,
            fmt_f64(s.t0),
            fmt_f64(s.s0),
            s.k + 1,
            fmt_f64(s.truth),
            fmt_opt(s.mean_estimate),
            fmt_opt(s.bias),
            fmt_opt(s.empirical_sd),
            fmt_opt(s.mean_se),
            fmt_opt(s.coverage),
            fmt_opt(s.coverage_mcse),
            s.valid
        );
    }
    std::fs::write(out_dir.join("summary.csv"), summary)?;

    if let EvalGrid::Slices { t_fixed, .. } = &cfg.grid {
        for &big_t in t_fixed {
            let rows = experiments::slice_summary(result, big_t)?;
            let mut table = String::from(
                "t,k,truth,mean_estimate,empirical_lower,empirical_upper,estimated_lower,estimated_upper,valid\n",
            );
            for r in &rows {
                let _ = writeln!(
                    table,
                    "{},{},{},{},{},{},{},{},{}",
                    fmt_f64(r.t),
                    r.k + 1,
                    fmt_f64(r.truth),
                    fmt_opt(r.mean_estimate),
                    fmt_opt(r.empirical_lower),
                    fmt_opt(r.empirical_upper),
                    fmt_opt(r.estimated_lower),
                    fmt_opt(r.estimated_upper),
                    r.valid
                );
            }
            std::fs::write(out_dir.join(format!("slice_T{big_t}.csv")), table)?;
            for k in 0..result.p {
                let sel: Vec<_> = rows.iter().filter(|r| r.k == k).collect();
                let line = |f: fn(&experiments::SliceRow) -> f64| sel.iter().map(|r| (r.t, f(r))).collect();
                let series = vec![
                    Series { label: "truth".into(), points: line(|r| r.truth), stroke: Stroke::Solid },
                    Series { label: "mean estimate".into(), points: line(|r| r.mean_estimate), stroke: Stroke::LongDash },
                    Series { label: "empirical SE band".into(), points: line(|r| r.empirical_lower), stroke: Stroke::Dash },
                    Series { label: "".into(), points: line(|r| r.empirical_upper), stroke: Stroke::Dash },
                    Series { label: "estimated SE band".into(), points: line(|r| r.estimated_lower), stroke: Stroke::DotDash },
                    Series { label: "".into(), points: line(|r| r.estimated_upper), stroke: Stroke::DotDash },
                ];
                let plot = svg::line_plot(&format!("beta_{}(t, {big_t} - t)", k + 1), "t", "", &series);
                std::fs::write(out_dir.join(format!("slice_T{big_t}_beta{}.svg", k + 1)), plot)?;
            }
        }
    }
    if let EvalGrid::Rectangular { .. } = &cfg.grid {
        for k in 0..result.p {
            let cells = experiments::coverage_heatmap(result, k)?;
            std::fs::write(out_dir.join(format!("heatmap_beta{}.csv", k + 1)), heat_table(&cells))?;
            let svg_cells: Vec<_> = cells.iter().map(|c| (c.t, c.s, c.coverage)).collect();
            std::fs::write(
                out_dir.join(format!("heatmap_beta{}.svg", k + 1)),
                svg::heatmap(&format!("coverage, beta_{}", k + 1), "t", "T - t", &svg_cells),
            )?;
        }
    }

    #[derive(Serialize)]
    struct Meta<'a> {
        replications: usize,
        alpha: f64,
        bandwidths: &'a [f64],
        cv: &'a [bandwidth::CvResult],
        missing_points: bool,
        config: &'a StudyConfig,
    }
    let meta = Meta {
        replications: result.replications,
        alpha: result.alpha,
        bandwidths: &result.bandwidths,
        cv: &result.cv,
        missing_points: result.has_missing_points(),
        config: &cfg,
    };
    std::fs::write(out_dir.join("metadata.json"), to_json(&meta) + "\n")?;
    if common.format == Format::Json {
        writeln!(out, "{}", to_json(&result.summaries))?;
    }
    if result.has_missing_points() {
        report_error(err, "numerical", 4, "some grid points had zero valid replications");
        return Ok(4);
    }
    Ok(0)
}

fn fmt_opt(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        fmt_f64(x)
    }
}

fn heat_table(cells: &[experiments::HeatCell]) -> String {
    let mut out = String::from("t,s,coverage,valid\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(c.t),
            fmt_f64(c.s),
            c.coverage.map_or_else(|| "NA".to_string(), fmt_f64),
            c.valid
        );
    }
    out
}

fn cmd_heatmap(input: &Path, out: &Path, title: &str) -> Result<i32> {
    let mut reader = csv::Reader::from_path(input)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", input.display())))
    };
    let (ti, si, ci) = (col("t")?, col("s")?, col("coverage")?);
    let mut cells = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j).unwrap_or("").parse::<f64>().map_err(|_| Error::Row {
                line: i as u64 + 2,
                message: format!("column {j} is not numeric"),
            })
        };
        let cov = match rec.get(ci).unwrap_or("") {
            "NA" | "" => None,
            _ => Some(num(ci)?),
        };
        cells.push((num(ti)?, num(si)?, cov));
    }
    let mut ts: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let mut ss: Vec<f64> = cells.iter().map(|c| c.1).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ss.sort_by(f64::total_cmp);
    ss.dedup();
    if ts.len() * ss.len() != cells.len() {
        return Err(Error::NotRectangular(format!("{} cells", cells.len())));
    }
    std::fs::write(out, svg::heatmap(title, "t", "T - t", &cells))?;
    Ok(0)
}
