#![allow(clippy::needless_range_loop)]

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvcm::{Dataset, Subject, Visit};

/// χ²₂(0.95) = −2 ln 0.05.
pub const R2: f64 = 5.991464547107979;

/// Truncated, renormalized standard bivariate normal density.
pub fn k_oracle(u: f64, v: f64) -> f64 {
    let d2 = u * u + v * v;
    if d2 > R2 {
        0.0
    } else {
        (-0.5 * d2).exp() / (2.0 * std::f64::consts::PI * 0.95)
    }
}

/// Random dataset with at most 10 subjects; roughly one in four censored.
pub fn tiny_dataset(seed: u64, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=10);
    let subjects = (0..n)
        .map(|i| {
            let end = rng.random_range(4.0..9.0);
            let m = rng.random_range(2..=6);
            let mut times: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..end)).collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            let visits = times
                .into_iter()
                .map(|time| {
                    let mut x = vec![1.0];
                    x.extend((1..p).map(|_| rng.random_range(-2.0..2.0)));
                    Visit {
                        time,
                        covariates: x,
                        response: rng.random_range(-3.0..3.0),
                    }
                })
                .collect();
            Subject {
                id: format!("s{i}"),
                visits,
                followup_end: end,
                event_observed: i == 0 || rng.random_bool(0.75),
            }
        })
        .collect();
    Dataset::new(subjects, p).unwrap()
}

/// Solve `a x = b` (row-major `p × p`) by Gaussian elimination with partial
/// pivoting; `None` when a pivot vanishes relative to the matrix scale.
pub fn gauss_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let p = b.len();
    let mut m: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let mut row = a[i * p..(i + 1) * p].to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    let scale = a.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() <= 1e-13 * scale {
            return None;
        }
        m.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = m[r][c] / m[c][c];
                let pivot = m[c].clone();
                for (x, y) in m[r][c..].iter_mut().zip(&pivot[c..]) {
                    *x -= f * y;
                }
            }
        }
    }
    Some((0..p).map(|i| m[i][p] / m[i][i]).collect())
}

pub fn gauss_inverse(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; p * p];
    for c in 0..p {
        let mut e = vec![0.0; p];
        e[c] = 1.0;
        let col = gauss_solve(a, &e)?;
        for r in 0..p {
            inv[r * p + c] = col[r];
        }
    }
    Some(inv)
}

/// `(A, b)` summed over complete-case subjects.
pub fn normal_equations(ds: &Dataset, t0: f64, s0: f64, h: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let p = ds.p();
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    let mut n_eff = 0;
    for s in ds.subjects().iter().filter(|s| s.event_observed) {
        for v in &s.visits {
            let w = k_oracle((v.time - t0) / h, (s.followup_end - v.time - s0) / h) / (h * h);
            if w > 0.0 {
                n_eff += 1;
            }
            for r in 0..p {
                b[r] += w * v.covariates[r] * v.response;
                for c in 0..p {
                    a[r * p + c] += w * v.covariates[r] * v.covariates[c];
                }
            }
        }
    }
    (a, b, n_eff)
}

pub fn dense_fit(ds: &Dataset, t0: f64, s0: f64, h: f64) -> Option<Vec<f64>> {
    let (a, b, n_eff) = normal_equations(ds, t0, s0, h);
    if n_eff < ds.p() {
        return None;
    }
    gauss_solve(&a, &b)
}

/// Residual of every complete-case visit, each from its own-point fit.
pub fn dense_residuals(ds: &Dataset, h: f64) -> Vec<Vec<Option<f64>>> {
    ds.subjects()
        .iter()
        .filter(|s| s.event_observed)
        .map(|s| {
            s.visits
                .iter()
                .map(|v| {
                    let beta = dense_fit(ds, v.time, s.followup_end - v.time, h)?;
                    let fitted: f64 = beta.iter().zip(&v.covariates).map(|(b, x)| b * x).sum();
                    Some(v.response - fitted)
                })
                .collect()
        })
        .collect()
}

/// `n h² A⁻¹ M A⁻¹` with `M = Σᵢ XᵢᵀKᵢε̂ᵢε̂ᵢᵀKᵢXᵢ`, written as explicit loops.
pub fn dense_sandwich(ds: &Dataset, t0: f64, s0: f64, h: f64) -> Option<Vec<f64>> {
    let p = ds.p();
    let (a, _, _) = normal_equations(ds, t0, s0, h);
    let a_inv = gauss_inverse(&a, p)?;
    let resid = dense_residuals(ds, h);
    let mut m = vec![0.0; p * p];
    for (s, eps) in ds.subjects().iter().filter(|s| s.event_observed).zip(&resid) {
        // Xᵢᵀ Kᵢ ε̂ᵢ
        let mut g = vec![0.0; p];
        for (v, e) in s.visits.iter().zip(eps) {
            let w = k_oracle((v.time - t0) / h, (s.followup_end - v.time - s0) / h) / (h * h);
            if w == 0.0 {
                continue;
            }
            let e = (*e)?;
            for r in 0..p {
                g[r] += w * v.covariates[r] * e;
            }
        }
        for r in 0..p {
            for c in 0..p {
                m[r * p + c] += g[r] * g[c];
            }
        }
    }
    let n = ds.subjects().iter().filter(|s| s.event_observed).count() as f64;
    let mut v = vec![0.0; p * p];
    for r in 0..p {
        for c in 0..p {
            let mut acc = 0.0;
            for i in 0..p {
                for j in 0..p {
                    acc += a_inv[r * p + i] * m[i * p + j] * a_inv[j * p + c];
                }
            }
            v[r * p + c] = n * h * h * acc;
        }
    }
    Some(v)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix by Jacobi rotations.
pub fn min_eigenvalue(a: &[f64], p: usize) -> f64 {
    let mut m = a.to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    off += m[i * p + j] * m[i * p + j];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                let aij = m[i * p + j];
                if aij.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[j * p + j] - m[i * p + i]) / (2.0 * aij);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mki = m[k * p + i];
                    let mkj = m[k * p + j];
                    m[k * p + i] = c * mki - s * mkj;
                    m[k * p + j] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let mik = m[i * p + k];
                    let mjk = m[j * p + k];
                    m[i * p + k] = c * mik - s * mjk;
                    m[j * p + k] = s * mik + c * mjk;
                }
            }
        }
    }
    (0..p).map(|i| m[i * p + i]).fold(f64::INFINITY, f64::min)
}

/// Evaluation points at the complete-case visits of a dataset.
pub fn visit_points(ds: &Dataset) -> Vec<(f64, f64)> {
    ds.subjects()
        .iter()
        .filter(|s| s.event_observed)
        .flat_map(|s| s.visits.iter().map(move |v| (v.time, s.followup_end - v.time)))
        .collect()
}
