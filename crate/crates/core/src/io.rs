//! Long-format CSV ingestion and export, response transforms, observation
//! subsampling and config files.
//!
//! One row per visit:
//!
//! ```text
//! subject_id,visit_time,response,followup_end,event_observed,x_<name>...
//! ```
//!
//! Every `x_`-prefixed column is a non-intercept covariate, in header order;
//! the intercept is injected. `followup_end` and `event_observed` must be
//! constant within a subject.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Subject, Visit};
use crate::error::{Error, Result};
use crate::rng;

pub const REQUIRED_COLUMNS: [&str; 5] = [
    "subject_id",
    "visit_time",
    "response",
    "followup_end",
    "event_observed",
];
pub const COVARIATE_PREFIX: &str = "x_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    None,
    /// `y ↦ ln(y/scale + 1)`.
    LogScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub scale: f64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec {
            kind: TransformKind::None,
            scale: 1000.0,
        }
    }
}

impl TransformSpec {
    pub fn log_scale(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("transform scale must be positive, got {scale}")));
        }
        Ok(TransformSpec {
            kind: TransformKind::LogScale,
            scale,
        })
    }

    /// Parses the CLI spelling: `none` or `log<scale>` (e.g. `log1000`).
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TransformSpec::default()),
            _ => match s.strip_prefix("log") {
                Some(scale) => {
                    let scale = scale.parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("unknown transform `{s}`"))
                    })?;
                    Self::log_scale(scale)
                }
                None => Err(Error::InvalidArgument(format!("unknown transform `{s}`"))),
            },
        }
    }

    pub fn apply(&self, y: f64) -> Option<f64> {
        match self.kind {
            TransformKind::None => Some(y),
            TransformKind::LogScale => {
                let r = y / self.scale;
                (r > -1.0).then(|| r.ln_1p())
            }
        }
    }
}

/// Row and subject accounting of one ingestion.
///
/// `rows_in = rows_kept + rows_rejected`; a subject whose every row was
/// rejected is dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub rows_in: usize,
    pub rows_kept: usize,
    pub rows_rejected: usize,
    pub subjects_kept: usize,
    pub subjects_dropped: usize,
    pub covariate_names: Vec<String>,
    /// One line per rejected row or dropped subject.
    pub diagnostics: Vec<String>,
}

impl IngestionReport {
    pub fn is_balanced(&self) -> bool {
        self.rows_in == self.rows_kept + self.rows_rejected
    }
}

pub fn load_csv(path: &Path, transform: TransformSpec) -> Result<(Dataset, IngestionReport)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_csv(file, transform)
}

struct Row {
    line: u64,
    time: f64,
    response: f64,
    followup_end: f64,
    event_observed: bool,
    covariates: Vec<f64>,
}

/// Parses and validates a long-format CSV stream.
pub fn read_csv<R: Read>(input: R, transform: TransformSpec) -> Result<(Dataset, IngestionReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = find(name)
            .ok_or_else(|| Error::Data(format!("schema mismatch: missing column `{name}`")))?;
    }
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(COVARIATE_PREFIX))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let p = cov_cols.len() + 1;

    let mut report = IngestionReport {
        covariate_names: cov_cols.iter().map(|(_, h)| h.clone()).collect(),
        ..Default::default()
    };
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Row>> = HashMap::new();
    let mut subject_meta: HashMap<String, (f64, bool, u64)> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        report.rows_in += 1;
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(cols[0]).to_string();
        let parsed = parse_row(&record, &cols, &cov_cols);
        let row = match parsed {
            Ok(row) => row,
            Err(msg) => {
                report.rows_rejected += 1;
                report.diagnostics.push(format!("line {line}: {msg}"));
                if !groups.contains_key(&id) && !id.is_empty() {
                    order.push(id.clone());
                    groups.insert(id, Vec::new());
                }
                continue;
            }
        };
        if id.is_empty() {
            report.rows_rejected += 1;
            report.diagnostics.push(format!("line {line}: empty subject_id"));
            continue;
        }
        match subject_meta.get(&id) {
            Some(&(end, observed, first_line)) => {
                if end != row.followup_end {
                    return Err(Error::Row {
                        line,
                        message: format!(
                            "subject {id}: followup_end {} differs from {end} on line {first_line}",
                            row.followup_end
                        ),
                    });
                }
                if observed != row.event_observed {
                    return Err(Error::Row {
                        line,
                        message: format!(
                            "subject {id}: event_observed differs from line {first_line}"
                        ),
                    });
                }
            }
            None => {
                subject_meta.insert(id.clone(), (row.followup_end, row.event_observed, line));
            }
        }
        let response = transform.apply(row.response).ok_or_else(|| Error::Row {
            line,
            message: format!(
                "response {} outside the transform domain (y/{} must exceed −1)",
                row.response, transform.scale
            ),
        })?;
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(Row { response, ..row });
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).unwrap_or_default();
        rows.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.line.cmp(&b.line)));
        let mut visits: Vec<Visit> = Vec::with_capacity(rows.len());
        let mut meta = None;
        for row in rows {
            if visits.last().is_some_and(|v| v.time == row.time) {
                report.rows_rejected += 1;
                report
                    .diagnostics
                    .push(format!("line {}: duplicate visit_time {} for subject {id}", row.line, row.time));
                continue;
            }
            meta = Some((row.followup_end, row.event_observed));
            let mut covariates = Vec::with_capacity(p);
            covariates.push(1.0);
            covariates.extend_from_slice(&row.covariates);
            visits.push(Visit {
                time: row.time,
                covariates,
                response: row.response,
            });
        }
        let Some((followup_end, event_observed)) = meta else {
            report.subjects_dropped += 1;
            report
                .diagnostics
                .push(format!("subject {id}: no valid visits, dropped"));
            log::warn!("subject {id} has no valid visits; dropped");
            continue;
        };
        report.rows_kept += visits.len();
        subjects.push(Subject {
            id,
            visits,
            followup_end,
            event_observed,
        });
    }
    report.subjects_kept = subjects.len();
    debug_assert!(report.is_balanced());
    Ok((Dataset::new(subjects, p)?, report))
}

fn parse_row(
    record: &csv::StringRecord,
    cols: &[usize; 5],
    cov_cols: &[(usize, String)],
) -> std::result::Result<Row, String> {
    let num = |i: usize, name: &str| -> std::result::Result<f64, String> {
        let raw = record.get(i).unwrap_or("");
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("{name} `{raw}` is not a finite number")),
        }
    };
    let time = num(cols[1], "visit_time")?;
    let response = num(cols[2], "response")?;
    let followup_end = num(cols[3], "followup_end")?;
    let event_observed = match record.get(cols[4]).unwrap_or("") {
        "1" => true,
        "0" => false,
        other => return Err(format!("event_observed `{other}` must be 0 or 1")),
    };
    if time < 0.0 {
        return Err(format!("visit_time {time} is negative"));
    }
    if followup_end <= 0.0 {
        return Err(format!("followup_end {followup_end} must be positive"));
    }
    if time > followup_end {
        return Err(format!("visit_time {time} exceeds followup_end {followup_end}"));
    }
    let covariates = cov_cols
        .iter()
        .map(|(i, name)| num(*i, name))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Row {
        line: record.position().map(|p| p.line()).unwrap_or(0),
        time,
        response,
        followup_end,
        event_observed,
        covariates,
    })
}

/// `{:.16e}`: 17 significant digits, exact round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a dataset in the long CSV schema. Covariate columns are named
/// `names` when given, otherwise `x_2, x_3, …`.
pub fn write_csv<W: Write>(dataset: &Dataset, names: Option<&[String]>, out: W) -> Result<()> {
    let p = dataset.p();
    let default_names: Vec<String> = (2..=p).map(|k| format!("x_{k}")).collect();
    let names = names.unwrap_or(&default_names);
    if names.len() != p - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} covariate names for p = {p}",
            names.len()
        )));
    }
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(names.iter().map(String::as_str));
    w.write_record(&header)?;
    for s in dataset.subjects() {
        for v in &s.visits {
            let mut row = vec![
                s.id.clone(),
                fmt_f64(v.time),
                fmt_f64(v.response),
                fmt_f64(s.followup_end),
                (s.event_observed as u8).to_string(),
            ];
            row.extend(v.covariates[1..].iter().map(|&x| fmt_f64(x)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, names: Option<&[String]>, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(dataset, names, f)
}

/// Keeps each observation independently with probability `fraction`;
/// subjects left without observations are dropped. Returns the number of
/// dropped subjects alongside the subsample.
pub fn subsample_observation_times(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, usize)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok((dataset.clone(), 0));
    }
    let mut dropped = 0;
    let mut subjects = Vec::with_capacity(dataset.n_subjects());
    for (i, s) in dataset.subjects().iter().enumerate() {
        let mut rng = rng::substream(seed, i as u64);
        let visits: Vec<Visit> = s
            .visits
            .iter()
            .filter(|_| rng.random::<f64>() < fraction)
            .cloned()
            .collect();
        if visits.is_empty() {
            dropped += 1;
            continue;
        }
        subjects.push(Subject {
            visits,
            ..s.clone()
        });
    }
    Ok((Dataset::new(subjects, dataset.p())?, dropped))
}

/// Reads a TOML config file.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}
