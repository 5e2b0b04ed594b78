//! Reference data-generating process: three bivariate coefficient surfaces,
//! near-annual visit schedules, correlated Gaussian covariates, truncated
//! exponential event and censoring times, and a nonhomogeneous
//! Ornstein–Uhlenbeck error process plus white noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Subject, Visit};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, StreamRng};

/// Diagonal jitter ladder tried when a covariance fails to factorize.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Coefficient surfaces used to build responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    /// `β₁ = (x/4)e^{−(x²+y²)/100}`, `β₂ = ½[sin(2x/5) − sin(y/2)]`,
    /// `β₃ = cos((x²+y²)/100)`.
    #[default]
    Reference,
    /// Constant coefficients, for exact-recovery checks.
    Constant(Vec<f64>),
}

impl Surface {
    /// `β_k(x, y)` with `k` zero-based.
    pub fn eval(&self, k: usize, x: f64, y: f64) -> f64 {
        match self {
            Surface::Reference => true_beta(k + 1, x, y),
            Surface::Constant(values) => values[k],
        }
    }

    pub fn eval_all(&self, x: f64, y: f64, p: usize) -> Vec<f64> {
        (0..p).map(|k| self.eval(k, x, y)).collect()
    }
}

/// Reference surfaces, `k ∈ {1, 2, 3}`.
pub fn true_beta(k: usize, x: f64, y: f64) -> f64 {
    let r2 = (x * x + y * y) / 100.0;
    match k {
        1 => x / 4.0 * (-r2).exp(),
        2 => 0.5 * ((2.0 * x / 5.0).sin() - (y / 2.0).sin()),
        3 => r2.cos(),
        _ => panic!("reference surfaces are indexed 1..=3, got {k}"),
    }
}

fn default_m() -> usize {
    20
}
fn default_p() -> usize {
    3
}
fn default_nu() -> f64 {
    0.01
}
fn default_event_coefs() -> [f64; 3] {
    [3.0, 1.0, -5.0]
}
fn default_censor_coefs() -> [f64; 3] {
    [1.0, 3.0, -5.0]
}
fn default_truncation() -> f64 {
    15.0
}
fn default_shift() -> f64 {
    5.0
}
fn default_error_var_params() -> [f64; 2] {
    [1.0, -0.1]
}
fn default_error_corr_base() -> f64 {
    0.5
}
fn default_white_noise_var() -> f64 {
    1.0
}
fn default_cross_cov() -> f64 {
    0.8
}
fn default_true() -> bool {
    true
}

/// Parameters of the data-generating process.
///
/// Event and censoring intensities are `exp(c₀·X₂ + c₁·X₃(0) + c₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_event_coefs")]
    pub event_coefs: [f64; 3],
    #[serde(default = "default_censor_coefs")]
    pub censor_coefs: [f64; 3],
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    #[serde(default = "default_shift")]
    pub shift: f64,
    /// `(a, b)` in `Var U(t) = exp(a + b·t)`.
    #[serde(default = "default_error_var_params")]
    pub error_var_params: [f64; 2],
    #[serde(default = "default_error_corr_base")]
    pub error_corr_base: f64,
    #[serde(default = "default_white_noise_var")]
    pub white_noise_var: f64,
    /// `c` in `Cov(X₂, X₃(t)) = c·exp(−t²)`.
    #[serde(default = "default_cross_cov")]
    pub covariate_cross_cov: f64,
    /// When false the error process is identically zero.
    #[serde(default = "default_true")]
    pub noise: bool,
    #[serde(default)]
    pub surface: Surface,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        SimConfig {
            n,
            m: default_m(),
            p: default_p(),
            nu: default_nu(),
            event_coefs: default_event_coefs(),
            censor_coefs: default_censor_coefs(),
            truncation: default_truncation(),
            shift: default_shift(),
            error_var_params: default_error_var_params(),
            error_corr_base: default_error_corr_base(),
            white_noise_var: default_white_noise_var(),
            covariate_cross_cov: default_cross_cov(),
            noise: true,
            surface: Surface::Reference,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.m == 0 {
            return bad("m must be positive".into());
        }
        if self.p != 3 {
            return bad(format!("the generator has exactly 3 covariates, got p = {}", self.p));
        }
        if !(self.nu > 0.0 && self.nu <= 0.5) {
            return bad(format!("nu must lie in (0, 0.5], got {}", self.nu));
        }
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return bad("truncation must be positive".into());
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return bad("shift must be non-negative".into());
        }
        if !(self.error_corr_base > 0.0 && self.error_corr_base < 1.0) {
            return bad("error_corr_base must lie in (0, 1)".into());
        }
        if !(self.white_noise_var >= 0.0 && self.white_noise_var.is_finite()) {
            return bad("white_noise_var must be non-negative".into());
        }
        if self.error_var_params.iter().any(|v| !v.is_finite()) {
            return bad("error_var_params must be finite".into());
        }
        if self.covariate_cross_cov.abs() >= 1.0 {
            return bad("covariate_cross_cov must lie in (−1, 1)".into());
        }
        if let Surface::Constant(v) = &self.surface {
            if v.len() != self.p {
                return bad(format!("constant surface needs {} values, got {}", self.p, v.len()));
            }
        }
        Ok(())
    }

    /// Largest possible follow-up time, `shift + truncation`.
    pub fn max_followup(&self) -> f64 {
        self.shift + self.truncation
    }
}

/// Lower-triangular `L` with `LLᵀ = Σ + jitter·I`, escalating the jitter
/// until the factorization succeeds.
pub fn factorize_with_jitter(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = cov.nrows();
    for &jitter in &JITTER_LADDER {
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Some(chol) = c.cholesky() {
            return Ok((chol.l(), jitter));
        }
    }
    Err(Error::Factorization {
        dim: n,
        jitter: *JITTER_LADDER.last().unwrap(),
    })
}

fn sample_gaussian(rng: &mut StreamRng, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (l, _) = factorize_with_jitter(cov)?;
    let z = DVector::from_iterator(cov.nrows(), (0..cov.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok(l * z)
}

/// Visit schedule: `τ₁ ~ U[0, 1]`, `τ_j = (j − 1) + B_j` with
/// `B_j ~ Beta(τ₁/(4ν²), (1 − τ₁)/(4ν²))`.
pub fn gen_visit_times(rng: &mut StreamRng, m: usize, nu: f64) -> Vec<f64> {
    let first = loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            break u;
        }
    };
    let beta = Beta::new(first / (4.0 * nu * nu), (1.0 - first) / (4.0 * nu * nu))
        .expect("beta parameters are positive");
    let mut times = Vec::with_capacity(m);
    times.push(first);
    for j in 1..m {
        let prev = times[j - 1];
        let t = loop {
            let t = j as f64 + beta.sample(rng);
            if t > prev {
                break t;
            }
        };
        times.push(t);
    }
    times
}

/// Covariate draws for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub x2: f64,
    /// `X₃(0)`, which drives the event and censoring intensities.
    pub x3_0: f64,
    /// `X₃(τ_j)` at each visit.
    pub x3: Vec<f64>,
}

/// Joint covariance of `(X₂, X₃(0), X₃(τ₁), …, X₃(τ_m))`.
pub fn covariate_covariance(times: &[f64], cross_cov: f64) -> DMatrix<f64> {
    let mut pts = Vec::with_capacity(times.len() + 1);
    pts.push(0.0);
    pts.extend_from_slice(times);
    let d = pts.len() + 1;
    DMatrix::from_fn(d, d, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (0, j) => cross_cov * (-pts[j - 1] * pts[j - 1]).exp(),
        (i, 0) => cross_cov * (-pts[i - 1] * pts[i - 1]).exp(),
        (i, j) => {
            let d = pts[i - 1] - pts[j - 1];
            (-d * d).exp()
        }
    })
}

/// Draws `X₂` and the process `X₃(·)` jointly as one Gaussian vector.
pub fn gen_covariates(rng: &mut StreamRng, times: &[f64], cross_cov: f64) -> Result<Covariates> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("visit schedule is empty".into()));
    }
    let draw = sample_gaussian(rng, &covariate_covariance(times, cross_cov))?;
    Ok(Covariates {
        x2: draw[0],
        x3_0: draw[1],
        x3: draw.iter().skip(2).copied().collect(),
    })
}

/// Inverse-CDF draw of `Exponential(rate)` truncated to `[0, upper]`.
pub fn truncated_exponential(u: f64, rate: f64, upper: f64) -> f64 {
    // F(x) = (1 − e^{−λx}) / (1 − e^{−λU})
    -(u * (-rate * upper).exp_m1()).ln_1p() / rate
}

/// `exp(c₀·x2 + c₁·x3_0 + c₂)`.
pub fn intensity(coefs: &[f64; 3], x2: f64, x3_0: f64) -> f64 {
    (coefs[0] * x2 + coefs[1] * x3_0 + coefs[2]).exp()
}

/// `(T, C)`, conditionally independent given the covariates.
pub fn gen_event_times(rng: &mut StreamRng, x2: f64, x3_0: f64, config: &SimConfig) -> (f64, f64) {
    let rate_t = intensity(&config.event_coefs, x2, x3_0);
    let rate_c = intensity(&config.censor_coefs, x2, x3_0);
    let u_t: f64 = rng.random();
    let u_c: f64 = rng.random();
    (
        config.shift + truncated_exponential(u_t, rate_t, config.truncation),
        config.shift + truncated_exponential(u_c, rate_c, config.truncation),
    )
}

/// Covariance of the nonhomogeneous OU component at the given times.
pub fn nou_covariance(times: &[f64], var_params: [f64; 2], corr_base: f64) -> DMatrix<f64> {
    let sd: Vec<f64> = times
        .iter()
        .map(|&t| (0.5 * (var_params[0] + var_params[1] * t)).exp())
        .collect();
    let n = times.len();
    DMatrix::from_fn(n, n, |i, j| {
        sd[i] * sd[j] * corr_base.powf((times[i] - times[j]).abs())
    })
}

/// `ε(τ_j) = U(τ_j) + Z_j`.
pub fn gen_errors(rng: &mut StreamRng, times: &[f64], config: &SimConfig) -> Result<Vec<f64>> {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("times must be strictly increasing".into()));
    }
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let u = sample_gaussian(
        rng,
        &nou_covariance(times, config.error_var_params, config.error_corr_base),
    )?;
    let white_sd = config.white_noise_var.sqrt();
    Ok(u
        .iter()
        .map(|&u| u + white_sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Unobserved quantities retained for checking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub event_time: f64,
    pub censor_time: f64,
    pub x2: f64,
    pub x3_0: f64,
    /// Visits before truncation by `T ∧ C`.
    pub scheduled_visits: usize,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub truth: Vec<SubjectTruth>,
}

/// Generates one subject from its own random stream.
fn gen_subject(config: &SimConfig, index: usize) -> Result<(Subject, SubjectTruth)> {
    let mut rng = rng::substream(config.seed, index as u64);
    let times = gen_visit_times(&mut rng, config.m, config.nu);
    let cov = gen_covariates(&mut rng, &times, config.covariate_cross_cov)?;
    let (t, c) = gen_event_times(&mut rng, cov.x2, cov.x3_0, config);
    let errors = if config.noise {
        gen_errors(&mut rng, &times, config)?
    } else {
        vec![0.0; times.len()]
    };
    let end = t.min(c);
    let visits = times
        .iter()
        .enumerate()
        .take_while(|(_, &tau)| tau <= end)
        .map(|(j, &tau)| {
            let x = vec![1.0, cov.x2, cov.x3[j]];
            let s = t - tau;
            let mean: f64 = x
                .iter()
                .enumerate()
                .map(|(k, xk)| xk * config.surface.eval(k, tau, s))
                .sum();
            Visit {
                time: tau,
                covariates: x,
                response: mean + errors[j],
            }
        })
        .collect();
    Ok((
        Subject {
            id: (index + 1).to_string(),
            visits,
            followup_end: end,
            event_observed: t <= c,
        },
        SubjectTruth {
            event_time: t,
            censor_time: c,
            x2: cov.x2,
            x3_0: cov.x3_0,
            scheduled_visits: times.len(),
        },
    ))
}

/// Full dataset, deterministic given `config.seed`. Subjects are generated
/// from independent substreams, so the result is independent of worker count.
pub fn gen_dataset(config: &SimConfig) -> Result<SimulatedData> {
    config.validate()?;
    let generated = par::map_range(config.n, |i| gen_subject(config, i));
    let mut subjects = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    for g in generated {
        let (s, t) = g?;
        if s.visits.is_empty() {
            log::warn!("subject {} has no visit before T ∧ C; dropped", s.id);
            continue;
        }
        subjects.push(s);
        truth.push(t);
    }
    Ok(SimulatedData {
        dataset: Dataset::new(subjects, config.p)?,
        truth,
    })
}
