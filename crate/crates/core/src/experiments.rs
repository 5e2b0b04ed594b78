//! Monte Carlo replication studies: slice estimates with two kinds of
//! confidence bands, and pointwise coverage over an evaluation grid.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandwidth::{self, CvResult};
use crate::error::{Error, Result};
use crate::fit::{self, FitStatus};
use crate::kernel::Kernel;
use crate::par;
use crate::rng;
use crate::simulate::{self, SimConfig};

/// Replications evaluated concurrently before their records are appended.
/// Fixed so the record log does not depend on the worker count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Use `h` as given.
    Fixed,
    /// Cross-validate every replication.
    CvPerReplication,
    /// Cross-validate replication 0, reuse its undersmoothed bandwidth.
    #[default]
    CvOnce,
}

fn default_folds() -> usize {
    bandwidth::DEFAULT_FOLDS
}
fn default_gamma() -> f64 {
    bandwidth::DEFAULT_GAMMA
}
fn default_alpha() -> f64 {
    0.05
}
fn default_coverage() -> f64 {
    crate::kernel::DEFAULT_COVERAGE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthConfig {
    #[serde(default)]
    pub policy: Policy,
    /// Bandwidth for the fixed policy.
    #[serde(default)]
    pub h: Option<f64>,
    /// CV grid; defaults to ten log-spaced values on `[0.5, 4]`.
    #[serde(default)]
    pub h_grid: Option<Vec<f64>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        BandwidthConfig {
            policy: Policy::CvOnce,
            h: None,
            h_grid: None,
            folds: default_folds(),
            gamma: default_gamma(),
        }
    }
}

impl BandwidthConfig {
    pub fn grid(&self) -> Vec<f64> {
        self.h_grid.clone().unwrap_or_else(bandwidth::default_grid)
    }
}

/// Evaluation points of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalGrid {
    Points { points: Vec<(f64, f64)> },
    /// Full product `t_values × s_values`.
    Rectangular { t_values: Vec<f64>, s_values: Vec<f64> },
    /// Anti-diagonals `{(t, T − t)}` for each `T`, with `t = step, 2·step, …`.
    Slices { t_fixed: Vec<f64>, t_step: f64 },
}

impl EvalGrid {
    pub fn points(&self) -> Result<Vec<(f64, f64)>> {
        let pts = match self {
            EvalGrid::Points { points } => points.clone(),
            EvalGrid::Rectangular { t_values, s_values } => t_values
                .iter()
                .flat_map(|&t| s_values.iter().map(move |&s| (t, s)))
                .collect(),
            EvalGrid::Slices { t_fixed, t_step } => {
                if !(*t_step > 0.0) {
                    return Err(Error::Config("t_step must be positive".into()));
                }
                let mut pts = Vec::new();
                for &big_t in t_fixed {
                    pts.extend(fit::slice_grid(big_t, &fit::slice_times(big_t, *t_step))?);
                }
                pts
            }
        };
        if pts.is_empty() {
            return Err(Error::Config("evaluation grid is empty".into()));
        }
        if pts.iter().any(|&(t, s)| !(t >= 0.0 && s >= 0.0)) {
            return Err(Error::Config("evaluation points need t ≥ 0 and s ≥ 0".into()));
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub replications: usize,
    #[serde(default)]
    pub bandwidth: BandwidthConfig,
    pub grid: EvalGrid,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Probability mass kept by the truncated kernel.
    #[serde(default = "default_coverage")]
    pub kernel_coverage: f64,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.bandwidth.policy == Policy::Fixed
            && !self.bandwidth.h.is_some_and(|h| h.is_finite() && h > 0.0)
        {
            return Err(Error::Config("fixed bandwidth policy needs a positive h".into()));
        }
        self.grid.points()?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::truncated_gaussian(self.kernel_coverage)
    }

    /// Simulation settings of replication `rep`.
    pub fn replication_sim(&self, rep: usize) -> SimConfig {
        let mut sim = self.sim.clone();
        sim.seed = rng::derive_seed(self.sim.seed, rep as u64);
        sim
    }
}

/// One replication's outcome at one point and coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub rep: usize,
    pub point: usize,
    pub k: usize,
    pub t0: f64,
    pub s0: f64,
    pub h: f64,
    pub status: FitStatus,
    pub n_eff: usize,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

impl Record {
    fn valid(&self) -> bool {
        self.status == FitStatus::Ok && self.se.is_finite()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Aggregate at one point and coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub point: usize,
    pub t0: f64,
    pub s0: f64,
    pub k: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Standard deviation of the estimates across valid replications.
    pub empirical_sd: f64,
    /// Mean of the estimated standard errors.
    pub mean_se: f64,
    /// Share of valid replications whose interval covers the truth; NaN
    /// when no replication was valid.
    pub coverage: f64,
    /// `sqrt(c(1 − c)/R)`.
    pub coverage_mcse: f64,
    pub valid: usize,
}

impl PointSummary {
    pub fn is_missing(&self) -> bool {
        self.valid == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub replications: usize,
    pub alpha: f64,
    pub p: usize,
    pub points: Vec<(f64, f64)>,
    pub summaries: Vec<PointSummary>,
    /// Bandwidth used by each replication.
    pub bandwidths: Vec<f64>,
    /// CV outcome behind the bandwidth(s), when CV was run.
    pub cv: Vec<CvResult>,
}

impl StudyResult {
    pub fn summary(&self, point: usize, k: usize) -> &PointSummary {
        &self.summaries[point * self.p + k]
    }

    /// True when some grid point had no valid replication.
    pub fn has_missing_points(&self) -> bool {
        (0..self.points.len()).any(|i| (0..self.p).all(|k| self.summary(i, k).is_missing()))
    }
}

/// Aggregates per-replication records (any order) into point summaries.
pub fn aggregate(
    records: &[Record],
    points: &[(f64, f64)],
    p: usize,
    surface: &simulate::Surface,
) -> Vec<PointSummary> {
    let mut sorted: Vec<&Record> = records.iter().collect();
    sorted.sort_by_key(|r| (r.point, r.k, r.rep));
    let mut out = Vec::with_capacity(points.len() * p);
    let mut cursor = 0;
    for (i, &(t0, s0)) in points.iter().enumerate() {
        for k in 0..p {
            let mut est = CompensatedSum::default();
            let mut est_sq = CompensatedSum::default();
            let mut se = CompensatedSum::default();
            let mut covered = 0usize;
            let mut valid = 0usize;
            let mut values = Vec::new();
            while cursor < sorted.len() && (sorted[cursor].point, sorted[cursor].k) == (i, k) {
                let r = sorted[cursor];
                cursor += 1;
                if !r.valid() {
                    continue;
                }
                valid += 1;
                est.add(r.estimate);
                se.add(r.se);
                covered += r.covered as usize;
                values.push(r.estimate);
            }
            let truth = surface.eval(k, t0, s0);
            let (mean, sd, mean_se, coverage) = if valid == 0 {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let nv = valid as f64;
                let mean = est.value() / nv;
                for v in &values {
                    est_sq.add((v - mean) * (v - mean));
                }
                let sd = if valid > 1 {
                    (est_sq.value() / (nv - 1.0)).sqrt()
                } else {
                    0.0
                };
                (mean, sd, se.value() / nv, covered as f64 / nv)
            };
            out.push(PointSummary {
                point: i,
                t0,
                s0,
                k,
                truth,
                mean_estimate: mean,
                bias: mean - truth,
                empirical_sd: sd,
                mean_se,
                coverage,
                coverage_mcse: if valid == 0 {
                    f64::NAN
                } else {
                    (coverage * (1.0 - coverage) / valid as f64).sqrt()
                },
                valid,
            });
        }
    }
    out
}

fn replication_records(
    config: &StudyConfig,
    rep: usize,
    h: Option<f64>,
    points: &[(f64, f64)],
    kernel: &Kernel,
) -> Result<(Vec<Record>, f64, Option<CvResult>)> {
    let sim = simulate::gen_dataset(&config.replication_sim(rep))?;
    let design = sim.dataset.complete_cases()?;
    let (h, cv) = match h {
        Some(h) => (h, None),
        None => {
            let cv = run_cv(config, &design, rep, kernel)?;
            (cv.h_undersmoothed, Some(cv))
        }
    };
    let fits = fit::fit_grid(&design, points, h, kernel, true)?;
    let n = design.n_subjects();
    let p = design.p();
    let z = fit::normal_quantile(config.alpha);
    let mut records = Vec::with_capacity(points.len() * p);
    for (i, f) in fits.iter().enumerate() {
        let se = f.standard_errors(n).filter(|_| f.is_ok());
        for k in 0..p {
            let truth = config.sim.surface.eval(k, f.t0, f.s0);
            let (est, se_k) = match &se {
                Some(se) => (f.beta_hat[k], se[k]),
                None => (f64::NAN, f64::NAN),
            };
            let (lower, upper) = (est - z * se_k, est + z * se_k);
            records.push(Record {
                rep,
                point: i,
                k,
                t0: f.t0,
                s0: f.s0,
                h,
                status: f.status,
                n_eff: f.n_eff,
                estimate: est,
                se: se_k,
                lower,
                upper,
                covered: se.is_some() && lower <= truth && truth <= upper,
            });
        }
    }
    Ok((records, h, cv))
}

fn run_cv(
    config: &StudyConfig,
    design: &crate::data::CaseDesign,
    rep: usize,
    kernel: &Kernel,
) -> Result<CvResult> {
    let b = &config.bandwidth;
    bandwidth::select_bandwidth(
        design,
        &b.grid(),
        b.folds,
        rng::derive_seed(config.sim.seed ^ 0xC5_F01D, rep as u64),
        b.gamma,
        kernel,
    )
}

/// Complete study output: aggregates plus the raw records they came from.
#[derive(Debug, Clone)]
pub struct StudyRun {
    pub result: StudyResult,
    pub records: Vec<Record>,
}

/// Runs every replication in memory.
pub fn run_study(config: &StudyConfig) -> Result<StudyRun> {
    run_study_logged(config, None)
}

/// Runs the study, appending each finished replication to `log` (CSV) and
/// skipping replications already present in it.
pub fn run_study_logged(config: &StudyConfig, log: Option<&Path>) -> Result<StudyRun> {
    config.validate()?;
    let kernel = config.kernel()?;
    let points = config.grid.points()?;
    let p = config.sim.p;

    let mut records = match log {
        Some(path) if path.exists() => read_records(path, points.len() * p)?,
        _ => Vec::new(),
    };
    let mut done = vec![false; config.replications];
    for r in &records {
        if r.rep < config.replications {
            done[r.rep] = true;
        }
    }
    records.retain(|r| r.rep < config.replications);
    let mut bandwidth_of: Vec<f64> = vec![f64::NAN; config.replications];
    for r in &records {
        bandwidth_of[r.rep] = r.h;
    }

    let mut cv_results = Vec::new();
    let fixed_h = match config.bandwidth.policy {
        Policy::Fixed => config.bandwidth.h,
        Policy::CvPerReplication => None,
        Policy::CvOnce => {
            let sim = simulate::gen_dataset(&config.replication_sim(0))?;
            let cv = run_cv(config, &sim.dataset.complete_cases()?, 0, &kernel)?;
            let h = cv.h_undersmoothed;
            cv_results.push(cv);
            Some(h)
        }
    };

    let mut writer = match log {
        Some(path) => {
            // rewrite so a torn final replication is dropped
            write_records(path, &records)?;
            Some(OpenOptions::new().append(true).open(path)?)
        }
        None => None,
    };

    let pending: Vec<usize> = (0..config.replications).filter(|&r| !done[r]).collect();
    for chunk in pending.chunks(CHUNK) {
        let outcomes = par::map(chunk, |&rep| {
            replication_records(config, rep, fixed_h, &points, &kernel)
        });
        for (&rep, outcome) in chunk.iter().zip(outcomes) {
            let (recs, h, cv) = outcome?;
            bandwidth_of[rep] = h;
            if let Some(cv) = cv {
                cv_results.push(cv);
            }
            if let Some(w) = writer.as_mut() {
                let mut buf = Vec::new();
                for r in &recs {
                    writeln!(buf, "{}", record_row(r))?;
                }
                w.write_all(&buf)?;
                w.flush()?;
            }
            records.extend(recs);
        }
    }

    let summaries = aggregate(
        &records,
        &points,
        p,
        &config.sim.surface,
    );
    records.sort_by_key(|r| (r.rep, r.point, r.k));
    Ok(StudyRun {
        result: StudyResult {
            replications: config.replications,
            alpha: config.alpha,
            p,
            points,
            summaries,
            bandwidths: bandwidth_of,
            cv: cv_results,
        },
        records,
    })
}

pub const RECORD_HEADER: &str =
    "rep,point,k,t0,s0,h,status,n_eff,estimate,se,lower,upper,covered";

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

fn record_row(r: &Record) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.rep,
        r.point,
        r.k + 1,
        fmt(r.t0),
        fmt(r.s0),
        fmt(r.h),
        r.status,
        r.n_eff,
        fmt(r.estimate),
        fmt(r.se),
        fmt(r.lower),
        fmt(r.upper),
        r.covered as u8
    )
}

/// Writes the record log header followed by `records`.
pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(f, "{}", record_row(r))?;
    }
    f.flush()?;
    Ok(())
}

fn parse_status(s: &str) -> Option<FitStatus> {
    match s {
        "ok" => Some(FitStatus::Ok),
        "singular" => Some(FitStatus::Singular),
        "empty_support" => Some(FitStatus::EmptySupport),
        _ => None,
    }
}

/// Reads a record log, keeping only replications with all
/// `rows_per_rep` rows present.
pub fn read_records(path: &Path, rows_per_rep: usize) -> Result<Vec<Record>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if no == 0 {
            if line.trim() != RECORD_HEADER {
                return Err(Error::Data(format!("{}: unexpected header", path.display())));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<Record> {
            if f.len() != 13 {
                return None;
            }
            Some(Record {
                rep: f[0].parse().ok()?,
                point: f[1].parse().ok()?,
                k: f[2].parse::<usize>().ok()?.checked_sub(1)?,
                t0: f[3].parse().ok()?,
                s0: f[4].parse().ok()?,
                h: f[5].parse().ok()?,
                status: parse_status(f[6])?,
                n_eff: f[7].parse().ok()?,
                estimate: f[8].parse().ok()?,
                se: f[9].parse().ok()?,
                lower: f[10].parse().ok()?,
                upper: f[11].parse().ok()?,
                covered: f[12] == "1",
            })
        })();
        match parsed {
            Some(r) => out.push(r),
            None => log::warn!("{}:{}: skipping torn record", path.display(), no + 1),
        }
    }
    let mut counts = std::collections::BTreeMap::new();
    for r in &out {
        *counts.entry(r.rep).or_insert(0usize) += 1;
    }
    out.retain(|r| counts[&r.rep] == rows_per_rep);
    Ok(out)
}

/// One heatmap cell; `coverage` is `None` when no replication was valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub t: f64,
    pub s: f64,
    pub coverage: Option<f64>,
    pub valid: usize,
}

/// Long-format coverage table of coefficient `k` (zero-based) over a
/// rectangular grid.
pub fn coverage_heatmap(result: &StudyResult, k: usize) -> Result<Vec<HeatCell>> {
    if k >= result.p {
        return Err(Error::InvalidArgument(format!("coefficient {} out of range", k + 1)));
    }
    let mut ts: Vec<f64> = result.points.iter().map(|p| p.0).collect();
    let mut ss: Vec<f64> = result.points.iter().map(|p| p.1).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ss.sort_by(f64::total_cmp);
    ss.dedup();
    if ts.len() * ss.len() != result.points.len() {
        return Err(Error::NotRectangular(format!(
            "{} points do not form a {}×{} product",
            result.points.len(),
            ts.len(),
            ss.len()
        )));
    }
    let mut cells = Vec::with_capacity(result.points.len());
    for &t in &ts {
        for &s in &ss {
            let i = result
                .points
                .iter()
                .position(|&q| q == (t, s))
                .ok_or_else(|| Error::NotRectangular(format!("missing cell ({t}, {s})")))?;
            let sm = result.summary(i, k);
            cells.push(HeatCell {
                t,
                s,
                coverage: (!sm.is_missing()).then_some(sm.coverage),
                valid: sm.valid,
            });
        }
    }
    Ok(cells)
}

/// One row of a slice panel: truth, mean estimate and two bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub t: f64,
    pub k: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    /// Band from the spread of the estimates.
    pub empirical_lower: f64,
    pub empirical_upper: f64,
    /// Band from the mean estimated standard error.
    pub estimated_lower: f64,
    pub estimated_upper: f64,
    pub valid: usize,
}

/// Panel data for `β_k(t, T − t)` at `T = t_fixed`, every coefficient.
pub fn slice_summary(result: &StudyResult, t_fixed: f64) -> Result<Vec<SliceRow>> {
    let z = fit::normal_quantile(result.alpha);
    let mut idx: Vec<usize> = (0..result.points.len())
        .filter(|&i| {
            let (t, s) = result.points[i];
            (t + s - t_fixed).abs() <= 1e-9 * t_fixed.abs().max(1.0)
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::SliceAbsent(t_fixed));
    }
    idx.sort_by(|&a, &b| result.points[a].0.total_cmp(&result.points[b].0));
    let mut rows = Vec::new();
    for k in 0..result.p {
        for &i in &idx {
            let s = result.summary(i, k);
            rows.push(SliceRow {
                t: s.t0,
                k,
                truth: s.truth,
                mean_estimate: s.mean_estimate,
                empirical_lower: s.mean_estimate - z * s.empirical_sd,
                empirical_upper: s.mean_estimate + z * s.empirical_sd,
                estimated_lower: s.mean_estimate - z * s.mean_se,
                estimated_upper: s.mean_estimate + z * s.mean_se,
                valid: s.valid,
            });
        }
    }
    Ok(rows)
}
