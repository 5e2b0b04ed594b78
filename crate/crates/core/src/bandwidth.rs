//! Subject-level K-fold cross-validation over a bandwidth grid, followed by
//! undersmoothing `h ↦ h·n^(−γ)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::CaseDesign;
use crate::error::{Error, Result};
use crate::fit;
use crate::kernel::Kernel;
use crate::par;
use crate::rng;

/// Held-out share above which a bandwidth is declared infeasible.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.1;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_GAMMA: f64 = 1.0 / 20.0;

/// Ten log-spaced bandwidths spanning `[0.5, 4]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(0.5, 4.0, 10)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi / lo).ln() / (count - 1) as f64;
            (0..count)
                .map(|i| if i == count - 1 { hi } else { lo * (step * i as f64).exp() })
                .collect()
        }
    }
}

/// Partition of the complete-case subjects into folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// Fold of each complete-case subject, indexed like the design.
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    /// Design-local subject indices in fold `fold`, ascending.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Uniform random subject-level partition, deterministic given `seed`.
pub fn make_folds(design: &CaseDesign, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = design.n_subjects();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count must lie in [2, {n}], got {k}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, 0));
    let mut assignment = vec![0; n];
    for (pos, &subject) in order.iter().enumerate() {
        assignment[subject] = pos % k;
    }
    Ok(FoldAssignment { k, seed, assignment })
}

/// CV score of one bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    /// Mean squared prediction error over valid held-out observations;
    /// `+∞` when more than 10% of them could not be predicted.
    pub score: f64,
    pub excluded_fraction: f64,
}

/// Leave-fold-out prediction error at bandwidth `h`.
pub fn cv_score(design: &CaseDesign, folds: &FoldAssignment, h: f64, kernel: &Kernel) -> Result<CvScore> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    if folds.assignment.len() != design.n_subjects() {
        return Err(Error::InvalidArgument(
            "fold assignment does not match the design".into(),
        ));
    }
    let per_fold = par::map_range(folds.k, |fold| {
        let training = design.subset(&folds.complement(fold));
        let mut sse = 0.0;
        let mut valid = 0usize;
        let mut total = 0usize;
        for i in folds.members(fold) {
            for o in design.subject_range(i) {
                total += 1;
                let (t, s) = (design.time(o), design.residual_life(o));
                let fit = fit::local_fit(&training, t, s, h, kernel).expect("bandwidth checked");
                if !fit.is_ok() {
                    continue;
                }
                let pred: f64 = design
                    .covariates(o)
                    .iter()
                    .zip(&fit.beta_hat)
                    .map(|(x, b)| x * b)
                    .sum();
                let e = design.response(o) - pred;
                sse += e * e;
                valid += 1;
            }
        }
        (sse, valid, total)
    });
    let (sse, valid, total) = per_fold
        .into_iter()
        .fold((0.0, 0, 0), |(a, b, c), (x, y, z)| (a + x, b + y, c + z));
    let excluded_fraction = if total == 0 {
        1.0
    } else {
        (total - valid) as f64 / total as f64
    };
    let score = if excluded_fraction > MAX_EXCLUDED_FRACTION || valid == 0 {
        f64::INFINITY
    } else {
        sse / valid as f64
    };
    Ok(CvScore {
        score,
        excluded_fraction,
    })
}

/// Outcome of bandwidth selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub h_grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub excluded_fraction: Vec<f64>,
    pub h_selected: f64,
    pub h_undersmoothed: f64,
    pub gamma: f64,
    /// Sample size entering `n^(−γ)`.
    pub n: usize,
    pub folds: usize,
    pub seed: u64,
}

impl CvResult {
    pub fn undersmoothing_factor(&self) -> f64 {
        undersmoothing_factor(self.n, self.gamma)
    }
}

/// `n^(−γ)`.
pub fn undersmoothing_factor(n: usize, gamma: f64) -> f64 {
    (n as f64).powf(-gamma)
}

/// Index of the smallest finite score; ties go to the smaller bandwidth.
pub fn argmin_score(h_grid: &[f64], scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if s < scores[b] || (s == scores[b] && h_grid[i] < h_grid[b]) => Some(i),
            keep => keep,
        };
    }
    best
}

/// Cross-validates every bandwidth on `h_grid` and undersmooths the winner.
///
/// The undersmoothing sample size is the number of subjects in the dataset
/// the design came from, censored subjects included.
pub fn select_bandwidth(
    design: &CaseDesign,
    h_grid: &[f64],
    k: usize,
    seed: u64,
    gamma: f64,
    kernel: &Kernel,
) -> Result<CvResult> {
    if h_grid.is_empty() || h_grid.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
        return Err(Error::InvalidArgument(
            "bandwidth grid must be nonempty and positive".into(),
        ));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be ≥ 0, got {gamma}")));
    }
    let folds = make_folds(design, k, seed)?;
    let results = par::map(h_grid, |&h| cv_score(design, &folds, h, kernel));
    let results: Vec<CvScore> = results.into_iter().collect::<Result<_>>()?;
    let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
    let best = argmin_score(h_grid, &scores).ok_or(Error::NoFeasibleBandwidth)?;
    let n = design.n_total_subjects();
    let h_selected = h_grid[best];
    Ok(CvResult {
        h_grid: h_grid.to_vec(),
        excluded_fraction: results.iter().map(|r| r.excluded_fraction).collect(),
        scores,
        h_selected,
        h_undersmoothed: h_selected * undersmoothing_factor(n, gamma),
        gamma,
        n,
        folds: k,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Subject, Visit};

    fn design(n: usize) -> CaseDesign {
        let subjects = (0..n)
            .map(|i| Subject {
                id: format!("s{i}"),
                visits: vec![Visit {
                    time: 0.5,
                    covariates: vec![1.0],
                    response: i as f64,
                }],
                followup_end: 3.0 + i as f64,
                event_observed: true,
            })
            .collect();
        Dataset::new(subjects, 1).unwrap().complete_cases().unwrap()
    }

    #[test]
    fn balanced_folds() {
        let d = design(10);
        let f = make_folds(&d, 5, 42).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
        assert_eq!(f, make_folds(&d, 5, 42).unwrap());
        let f = make_folds(&design(11), 3, 1).unwrap();
        let sizes = f.sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 11);
    }

    #[test]
    fn fold_count_out_of_range() {
        let d = design(4);
        assert!(make_folds(&d, 1, 0).is_err());
        assert!(make_folds(&d, 5, 0).is_err());
        assert!(make_folds(&d, 4, 0).is_ok());
    }

    #[test]
    fn argmin_picks_minimum_and_breaks_ties_low() {
        let grid = [0.5, 1.0, 2.0];
        assert_eq!(argmin_score(&grid, &[3.0, 1.0, 2.0]), Some(1));
        assert_eq!(argmin_score(&grid, &[f64::INFINITY, 2.0, 2.0]), Some(1));
        assert_eq!(argmin_score(&[2.0, 1.0], &[1.0, 1.0]), Some(1));
        assert_eq!(argmin_score(&grid, &[f64::INFINITY; 3]), None);
    }

    #[test]
    fn undersmoothing_constant() {
        assert!((undersmoothing_factor(4000, 1.0 / 20.0) - 0.6605).abs() < 1e-4);
        assert_eq!(undersmoothing_factor(123, 0.0), 1.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = default_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[9], 4.0);
        let ratios: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-12));
    }

    #[test]
    fn tiny_bandwidth_is_infeasible() {
        let d = design(6);
        let folds = make_folds(&d, 2, 3).unwrap();
        let s = cv_score(&d, &folds, 1e-3, &Kernel::default()).unwrap();
        assert!(s.score.is_infinite());
        assert_eq!(s.excluded_fraction, 1.0);
    }
}
