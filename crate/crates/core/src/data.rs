//! Longitudinal data with a terminal event, and the flattened complete-case
//! design used by every estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measurement occasion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub time: f64,
    /// Covariate row; entry 0 is the intercept and always equals 1.
    pub covariates: Vec<f64>,
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub visits: Vec<Visit>,
    /// `T ∧ C`.
    pub followup_end: f64,
    /// `1(T ≤ C)`.
    pub event_observed: bool,
}

impl Subject {
    /// Terminal event time, known only for complete cases.
    pub fn event_time(&self) -> Option<f64> {
        self.event_observed.then_some(self.followup_end)
    }

    fn validate(&self, p: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Data(format!("subject {}: {msg}", self.id)));
        if self.visits.is_empty() {
            return fail("no visits".into());
        }
        if !(self.followup_end.is_finite() && self.followup_end > 0.0) {
            return fail(format!("followup_end must be positive, got {}", self.followup_end));
        }
        let mut prev = f64::NEG_INFINITY;
        for v in &self.visits {
            if !(v.time.is_finite() && v.time >= 0.0) {
                return fail(format!("visit time {} must be finite and non-negative", v.time));
            }
            if v.time <= prev {
                return fail(format!("visit times not strictly increasing at {}", v.time));
            }
            if v.time > self.followup_end {
                return fail(format!(
                    "visit time {} exceeds followup_end {}",
                    v.time, self.followup_end
                ));
            }
            if v.covariates.len() != p {
                return fail(format!(
                    "covariate row has length {}, expected {p}",
                    v.covariates.len()
                ));
            }
            if v.covariates[0] != 1.0 {
                return fail("intercept column must equal 1".into());
            }
            if !v.response.is_finite() || v.covariates.iter().any(|x| !x.is_finite()) {
                return fail(format!("non-finite value at visit time {}", v.time));
            }
            prev = v.time;
        }
        Ok(())
    }
}

/// Validated collection of subjects sharing covariate dimension `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<Subject>,
    p: usize,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Data("covariate dimension must be at least 1".into()));
        }
        for s in &subjects {
            s.validate(p)?;
        }
        Ok(Dataset { subjects, p })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn into_subjects(self) -> Vec<Subject> {
        self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.visits.len()).sum()
    }

    pub fn complete_case_subjects(&self) -> impl Iterator<Item = &Subject> {
        self.subjects.iter().filter(|s| s.event_observed)
    }

    pub fn n_complete(&self) -> usize {
        self.complete_case_subjects().count()
    }

    /// Flattened design over the complete cases.
    pub fn complete_cases(&self) -> Result<CaseDesign> {
        let cc: Vec<&Subject> = self.complete_case_subjects().collect();
        if cc.is_empty() {
            return Err(Error::NoCompleteCases);
        }
        Ok(CaseDesign::build(&cc, self.p, self.subjects.len()))
    }
}

/// Complete-case observations laid out subject-major, with a uniform-grid
/// index over `(τ, T − τ)` for kernel-support queries.
#[derive(Debug, Clone)]
pub struct CaseDesign {
    p: usize,
    n_total: usize,
    ids: Vec<String>,
    offsets: Vec<usize>,
    time: Vec<f64>,
    residual_life: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    subject_of: Vec<u32>,
    index: GridIndex,
}

impl CaseDesign {
    fn build(subjects: &[&Subject], p: usize, n_total: usize) -> Self {
        let n_obs: usize = subjects.iter().map(|s| s.visits.len()).sum();
        let mut design = CaseDesign {
            p,
            n_total,
            ids: Vec::with_capacity(subjects.len()),
            offsets: Vec::with_capacity(subjects.len() + 1),
            time: Vec::with_capacity(n_obs),
            residual_life: Vec::with_capacity(n_obs),
            x: Vec::with_capacity(n_obs * p),
            y: Vec::with_capacity(n_obs),
            subject_of: Vec::with_capacity(n_obs),
            index: GridIndex::default(),
        };
        design.offsets.push(0);
        for (i, s) in subjects.iter().enumerate() {
            design.ids.push(s.id.clone());
            for v in &s.visits {
                design.time.push(v.time);
                design.residual_life.push(s.followup_end - v.time);
                design.x.extend_from_slice(&v.covariates);
                design.y.push(v.response);
                design.subject_of.push(i as u32);
            }
            design.offsets.push(design.time.len());
        }
        design.index = GridIndex::build(&design.time, &design.residual_life);
        design
    }

    /// Design restricted to the listed complete-case subjects (local indices),
    /// kept in the given order.
    pub fn subset(&self, subjects: &[usize]) -> CaseDesign {
        let n_obs: usize = subjects
            .iter()
            .map(|&i| self.offsets[i + 1] - self.offsets[i])
            .sum();
        let mut out = CaseDesign {
            p: self.p,
            n_total: self.n_total,
            ids: Vec::with_capacity(subjects.len()),
            offsets: Vec::with_capacity(subjects.len() + 1),
            time: Vec::with_capacity(n_obs),
            residual_life: Vec::with_capacity(n_obs),
            x: Vec::with_capacity(n_obs * self.p),
            y: Vec::with_capacity(n_obs),
            subject_of: Vec::with_capacity(n_obs),
            index: GridIndex::default(),
        };
        out.offsets.push(0);
        for (local, &i) in subjects.iter().enumerate() {
            out.ids.push(self.ids[i].clone());
            let r = self.offsets[i]..self.offsets[i + 1];
            out.time.extend_from_slice(&self.time[r.clone()]);
            out.residual_life.extend_from_slice(&self.residual_life[r.clone()]);
            out.x
                .extend_from_slice(&self.x[r.start * self.p..r.end * self.p]);
            out.y.extend_from_slice(&self.y[r.clone()]);
            out.subject_of.extend(std::iter::repeat_n(local as u32, r.len()));
            out.offsets.push(out.time.len());
        }
        out.index = GridIndex::build(&out.time, &out.residual_life);
        out
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of complete-case subjects.
    pub fn n_subjects(&self) -> usize {
        self.ids.len()
    }

    /// Number of subjects in the originating dataset, censored included.
    pub fn n_total_subjects(&self) -> usize {
        self.n_total
    }

    pub fn n_obs(&self) -> usize {
        self.time.len()
    }

    pub fn subject_id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    /// Observation range of complete-case subject `i`.
    pub fn subject_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn subject_of(&self, obs: usize) -> usize {
        self.subject_of[obs] as usize
    }

    pub fn time(&self, obs: usize) -> f64 {
        self.time[obs]
    }

    /// `T_i − τ_ij`.
    pub fn residual_life(&self, obs: usize) -> f64 {
        self.residual_life[obs]
    }

    pub fn covariates(&self, obs: usize) -> &[f64] {
        &self.x[obs * self.p..(obs + 1) * self.p]
    }

    pub fn response(&self, obs: usize) -> f64 {
        self.y[obs]
    }

    /// `(τ_min, τ_max, s_min, s_max)` over the observations.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let fold = |v: &[f64]| {
            v.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
        };
        let (t_lo, t_hi) = fold(&self.time);
        let (s_lo, s_hi) = fold(&self.residual_life);
        (t_lo, t_hi, s_lo, s_hi)
    }

    /// Observation indices whose `(τ, T − τ)` lies in the square of half-width
    /// `radius` around `(t0, s0)`, ascending.
    pub fn candidates(&self, t0: f64, s0: f64, radius: f64) -> Vec<u32> {
        self.index.query(
            &self.time,
            &self.residual_life,
            t0 - radius,
            t0 + radius,
            s0 - radius,
            s0 + radius,
        )
    }
}

/// Uniform bucket grid over two coordinates, CSR layout.
#[derive(Debug, Clone, Default)]
struct GridIndex {
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl GridIndex {
    fn build(a: &[f64], b: &[f64]) -> Self {
        let n = a.len();
        if n == 0 {
            return GridIndex {
                dims: [1, 1],
                cell: [1.0, 1.0],
                starts: vec![0, 0],
                ..Default::default()
            };
        }
        let range = |v: &[f64]| {
            v.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                    (lo.min(x), hi.max(x))
                })
        };
        let (a_lo, a_hi) = range(a);
        let (b_lo, b_hi) = range(b);
        let side = ((n as f64 / 4.0).sqrt().ceil() as usize).clamp(1, 256);
        let width = |lo: f64, hi: f64| {
            let w = (hi - lo) / side as f64;
            if w > 0.0 {
                w
            } else {
                1.0
            }
        };
        let cell = [width(a_lo, a_hi), width(b_lo, b_hi)];
        let dims = [side, side];
        let origin = [a_lo, b_lo];
        let locate = |x: f64, axis: usize| -> usize {
            (((x - origin[axis]) / cell[axis]).floor().max(0.0) as usize).min(dims[axis] - 1)
        };
        let n_cells = dims[0] * dims[1];
        let mut counts = vec![0u32; n_cells + 1];
        let cell_of: Vec<usize> = (0..n)
            .map(|i| locate(a[i], 0) * dims[1] + locate(b[i], 1))
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; n];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        GridIndex {
            origin,
            cell,
            dims,
            starts: counts,
            items,
        }
    }

    fn query(&self, a: &[f64], b: &[f64], a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> Vec<u32> {
        let mut out = Vec::new();
        if self.items.is_empty() {
            return out;
        }
        let span = |lo: f64, hi: f64, axis: usize| -> Option<(usize, usize)> {
            let first = ((lo - self.origin[axis]) / self.cell[axis]).floor();
            let last = ((hi - self.origin[axis]) / self.cell[axis]).floor();
            let max = (self.dims[axis] - 1) as f64;
            if last < 0.0 || first > max {
                // points clamped into edge cells may still qualify
                let edge = if last < 0.0 { 0 } else { self.dims[axis] - 1 };
                return Some((edge, edge));
            }
            Some((first.max(0.0) as usize, last.min(max) as usize))
        };
        let (Some((i0, i1)), Some((j0, j1))) = (span(a_lo, a_hi, 0), span(b_lo, b_hi, 1)) else {
            return out;
        };
        for i in i0..=i1 {
            for j in j0..=j1 {
                let c = i * self.dims[1] + j;
                for &obs in &self.items[self.starts[c] as usize..self.starts[c + 1] as usize] {
                    let (x, y) = (a[obs as usize], b[obs as usize]);
                    if x >= a_lo && x <= a_hi && y >= b_lo && y <= b_hi {
                        out.push(obs);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}
