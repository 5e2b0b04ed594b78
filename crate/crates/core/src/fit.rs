//! Local weighted least squares for the bivariate coefficient surfaces,
//! residuals, sandwich variance and pointwise confidence intervals.
//!
//! At a target point `(t0, s0)` every complete-case observation `(i, j)`
//! receives the weight `w_ij = h⁻² K((τ_ij − t0)/h, (T_i − τ_ij − s0)/h)`.
//! The estimate is `β̂ = A⁻¹ b` with
//!
//! ```text
//! A = Σ_i X_iᵀ K_i X_i,    b = Σ_i X_iᵀ K_i Y_i,
//! ```
//!
//! and its sandwich covariance on the `n h²` scale is
//!
//! ```text
//! V̂ = n h² A⁻¹ M A⁻¹,      M = Σ_i (X_iᵀ K_i ε̂_i)(X_iᵀ K_i ε̂_i)ᵀ,
//! ```
//!
//! where `ε̂_ij` is the residual of observation `(i, j)` under the fit at its
//! own point `(τ_ij, T_i − τ_ij)`.
//!
//! Sums run over kernel-support candidates in ascending observation order,
//! so each fit is a deterministic function of its inputs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::CaseDesign;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::par;

/// Reciprocal condition number of `A` below which a point is declared singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    Singular,
    EmptySupport,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Ok => "ok",
            FitStatus::Singular => "singular",
            FitStatus::EmptySupport => "empty_support",
        }
    }
}

impl std::fmt::Display for FitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Estimate at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub t0: f64,
    pub s0: f64,
    pub h: f64,
    /// `β̂(t0, s0)`; NaN unless `status` is ok.
    pub beta_hat: Vec<f64>,
    /// Sandwich covariance, `p × p` row-major, when requested.
    pub v_hat: Option<Vec<f64>>,
    /// Observations with nonzero kernel weight.
    pub n_eff: usize,
    pub status: FitStatus,
    /// `(t0, s0)` lies outside the observed `(τ, T − τ)` ranges.
    pub extrapolated: bool,
    /// Support observations whose own residual could not be formed; they
    /// contribute nothing to the sandwich middle term.
    pub residuals_excluded: usize,
}

impl FitPoint {
    pub fn p(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn is_ok(&self) -> bool {
        self.status == FitStatus::Ok
    }

    /// `V̂_kl`.
    pub fn v(&self, k: usize, l: usize) -> Option<f64> {
        let p = self.p();
        self.v_hat.as_ref().map(|v| v[k * p + l])
    }

    /// `sqrt(V̂_kk / (n h²))` for each coefficient.
    pub fn standard_errors(&self, n: usize) -> Option<Vec<f64>> {
        let scale = n as f64 * self.h * self.h;
        (0..self.p())
            .map(|k| self.v(k, k).map(|v| (v.max(0.0) / scale).sqrt()))
            .collect()
    }
}

/// Weighted normal equations at one point.
struct LocalSystem {
    a: Vec<f64>,
    b: Vec<f64>,
    /// Support observations and their weights, ascending.
    support: Vec<(u32, f64)>,
}

fn assemble(design: &CaseDesign, t0: f64, s0: f64, h: f64, kernel: &Kernel) -> LocalSystem {
    let p = design.p();
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    let radius = kernel.truncation_radius() * h;
    let mut support = Vec::new();
    for obs in design.candidates(t0, s0, radius) {
        let o = obs as usize;
        let w = kernel.weight(design.time(o) - t0, design.residual_life(o) - s0, h);
        if w <= 0.0 {
            continue;
        }
        let x = design.covariates(o);
        let y = design.response(o);
        for k in 0..p {
            let wx = w * x[k];
            b[k] += wx * y;
            for l in k..p {
                a[k * p + l] += wx * x[l];
            }
        }
        support.push((obs, w));
    }
    for k in 0..p {
        for l in 0..k {
            a[k * p + l] = a[l * p + k];
        }
    }
    LocalSystem { a, b, support }
}

/// Solution of a local system, with the factor kept for the sandwich.
struct Solved {
    status: FitStatus,
    beta: Vec<f64>,
    inverse: Option<DMatrix<f64>>,
}

fn solve(sys: &LocalSystem, p: usize) -> Solved {
    let failed = |status| Solved {
        status,
        beta: vec![f64::NAN; p],
        inverse: None,
    };
    if sys.support.len() < p {
        return failed(FitStatus::EmptySupport);
    }
    let a = DMatrix::from_row_slice(p, p, &sys.a);
    let eig = SymmetricEigen::new(a.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    if !(hi > 0.0) || !(lo / hi >= RCOND_THRESHOLD) {
        return failed(FitStatus::Singular);
    }
    let Some(chol) = a.cholesky() else {
        return failed(FitStatus::Singular);
    };
    let beta = chol.solve(&DVector::from_column_slice(&sys.b));
    Solved {
        status: FitStatus::Ok,
        beta: beta.iter().copied().collect(),
        inverse: Some(chol.inverse()),
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")))
    }
}

fn outside_range(design: &CaseDesign, t0: f64, s0: f64) -> bool {
    let (t_lo, t_hi, s_lo, s_hi) = design.bounds();
    t0 < t_lo || t0 > t_hi || s0 < s_lo || s0 > s_hi
}

fn fit_point(
    design: &CaseDesign,
    t0: f64,
    s0: f64,
    h: f64,
    kernel: &Kernel,
    resid: Option<&ResidualTable>,
) -> FitPoint {
    let p = design.p();
    let sys = assemble(design, t0, s0, h, kernel);
    let solved = solve(&sys, p);
    let mut point = FitPoint {
        t0,
        s0,
        h,
        beta_hat: solved.beta,
        v_hat: None,
        n_eff: sys.support.len(),
        status: solved.status,
        extrapolated: outside_range(design, t0, s0),
        residuals_excluded: 0,
    };
    if let (Some(resid), Some(inv)) = (resid, solved.inverse.as_ref()) {
        let (v, excluded) = sandwich(design, &sys, inv, resid, h);
        point.v_hat = Some(v);
        point.residuals_excluded = excluded;
    }
    point
}

/// Sandwich `n h² A⁻¹ M A⁻¹`, symmetrized.
fn sandwich(
    design: &CaseDesign,
    sys: &LocalSystem,
    a_inv: &DMatrix<f64>,
    resid: &ResidualTable,
    h: f64,
) -> (Vec<f64>, usize) {
    let p = design.p();
    let mut m = DMatrix::<f64>::zeros(p, p);
    let mut score = DVector::<f64>::zeros(p);
    let mut current: Option<usize> = None;
    let mut excluded = 0;
    for &(obs, w) in &sys.support {
        let o = obs as usize;
        let subject = design.subject_of(o);
        if current != Some(subject) {
            if current.is_some() {
                m.ger(1.0, &score, &score, 1.0);
                score.fill(0.0);
            }
            current = Some(subject);
        }
        let Some(e) = resid.get(o) else {
            excluded += 1;
            continue;
        };
        let x = design.covariates(o);
        for k in 0..p {
            score[k] += w * x[k] * e;
        }
    }
    if current.is_some() {
        m.ger(1.0, &score, &score, 1.0);
    }
    let scale = design.n_subjects() as f64 * h * h;
    let v = a_inv * m * a_inv * scale;
    let mut out = vec![0.0; p * p];
    for k in 0..p {
        for l in 0..p {
            out[k * p + l] = 0.5 * (v[(k, l)] + v[(l, k)]);
        }
    }
    (out, excluded)
}

/// `β̂(t0, s0; h)`; `v_hat` is left unset.
pub fn local_fit(design: &CaseDesign, t0: f64, s0: f64, h: f64, kernel: &Kernel) -> Result<FitPoint> {
    check_bandwidth(h)?;
    Ok(fit_point(design, t0, s0, h, kernel, None))
}

/// Per-observation residuals `ε̂_ij = Y_ij − X_ij β̂(τ_ij, T_i − τ_ij; h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTable {
    h: f64,
    values: Vec<f64>,
    n_invalid: usize,
}

impl ResidualTable {
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Residual of observation `obs`, `None` when its own fit failed.
    pub fn get(&self, obs: usize) -> Option<f64> {
        let v = self.values[obs];
        (!v.is_nan()).then_some(v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_invalid(&self) -> usize {
        self.n_invalid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Residual table at bandwidth `h`. Observations whose local fit fails are
/// marked invalid and counted; the table is always complete.
pub fn residuals(design: &CaseDesign, h: f64, kernel: &Kernel) -> Result<ResidualTable> {
    check_bandwidth(h)?;
    let values = par::map_range(design.n_obs(), |o| {
        let fit = fit_point(design, design.time(o), design.residual_life(o), h, kernel, None);
        if fit.is_ok() {
            let x = design.covariates(o);
            design.response(o) - x.iter().zip(&fit.beta_hat).map(|(x, b)| x * b).sum::<f64>()
        } else {
            f64::NAN
        }
    });
    let n_invalid = values.iter().filter(|v| v.is_nan()).count();
    Ok(ResidualTable { h, values, n_invalid })
}

/// Memoizes residual tables of one design by `(h, kernel)`.
#[derive(Debug, Default)]
pub struct ResidualCache {
    tables: Mutex<HashMap<[u64; 3], Arc<ResidualTable>>>,
}

impl ResidualCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(
        &self,
        design: &CaseDesign,
        h: f64,
        kernel: &Kernel,
    ) -> Result<Arc<ResidualTable>> {
        let key = [
            h.to_bits(),
            kernel.truncation_radius().to_bits(),
            kernel.normalizer().to_bits(),
        ];
        if let Some(t) = self.tables.lock().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(residuals(design, h, kernel)?);
        self.tables
            .lock()
            .expect("cache poisoned")
            .entry(key)
            .or_insert_with(|| Arc::clone(&table));
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.tables.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sandwich covariance `V̂(t0, s0)` (`p × p`, row-major).
pub fn sandwich_variance(
    design: &CaseDesign,
    t0: f64,
    s0: f64,
    h: f64,
    kernel: &Kernel,
    resid: &ResidualTable,
) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    if resid.h() != h {
        return Err(Error::InvalidArgument(format!(
            "residual table was computed at h = {}, not {h}",
            resid.h()
        )));
    }
    if resid.len() != design.n_obs() {
        return Err(Error::InvalidArgument(
            "residual table does not belong to this design".into(),
        ));
    }
    let fit = fit_point(design, t0, s0, h, kernel, Some(resid));
    match fit.status {
        FitStatus::Ok => Ok(fit.v_hat.expect("variance computed for ok fits")),
        FitStatus::EmptySupport => Err(Error::EmptySupport { t0, s0, n_eff: fit.n_eff }),
        FitStatus::Singular => Err(Error::Singular { t0, s0, n_eff: fit.n_eff }),
    }
}

/// Two-sided standard normal quantile `z_{α/2}`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Pointwise `1 − α` intervals `β̂_k ± z_{α/2} sqrt(V̂_kk / (n h²))`.
pub fn confidence_interval(fit: &FitPoint, n: usize, alpha: f64) -> Result<Vec<(f64, f64)>> {
    if !fit.is_ok() {
        return Err(Error::FitNotOk {
            t0: fit.t0,
            s0: fit.s0,
            status: fit.status.to_string(),
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let se = fit
        .standard_errors(n)
        .ok_or_else(|| Error::InvalidArgument("fit carries no variance estimate".into()))?;
    let z = normal_quantile(alpha);
    Ok(fit
        .beta_hat
        .iter()
        .zip(se)
        .map(|(&b, se)| (b - z * se, b + z * se))
        .collect())
}

/// One [`FitPoint`] per grid point. With `with_variance` the residual table
/// is computed once and reused for every sandwich.
pub fn fit_grid(
    design: &CaseDesign,
    grid: &[(f64, f64)],
    h: f64,
    kernel: &Kernel,
    with_variance: bool,
) -> Result<Vec<FitPoint>> {
    check_bandwidth(h)?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("evaluation grid is empty".into()));
    }
    let resid = if with_variance {
        Some(residuals(design, h, kernel)?)
    } else {
        None
    };
    Ok(fit_grid_with(design, grid, h, kernel, resid.as_ref()))
}

/// [`fit_grid`] with a precomputed residual table.
pub fn fit_grid_with(
    design: &CaseDesign,
    grid: &[(f64, f64)],
    h: f64,
    kernel: &Kernel,
    resid: Option<&ResidualTable>,
) -> Vec<FitPoint> {
    par::map(grid, |&(t0, s0)| fit_point(design, t0, s0, h, kernel, resid))
}

/// Anti-diagonal grid `{(t, T − t)}`.
pub fn slice_grid(t_fixed: f64, t_values: &[f64]) -> Result<Vec<(f64, f64)>> {
    t_values
        .iter()
        .map(|&t| {
            if t >= 0.0 && t < t_fixed {
                Ok((t, t_fixed - t))
            } else {
                Err(Error::InvalidArgument(format!(
                    "slice point t = {t} must satisfy 0 ≤ t < T = {t_fixed}"
                )))
            }
        })
        .collect()
}

/// `t` values `step, 2·step, …` strictly below `t_fixed`.
pub fn slice_times(t_fixed: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1u32;
    loop {
        let t = k as f64 * step;
        if t >= t_fixed - 1e-9 * step {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

/// Fits along `β̂(t, T − t)` for the given `t` values.
pub fn slice_fit(
    design: &CaseDesign,
    t_fixed: f64,
    t_values: &[f64],
    h: f64,
    kernel: &Kernel,
    with_variance: bool,
) -> Result<Vec<FitPoint>> {
    let grid = slice_grid(t_fixed, t_values)?;
    fit_grid(design, &grid, h, kernel, with_variance)
}
