#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use proptest::prelude::*;
use tvcm::fit::{self, FitStatus};
use tvcm::kernel::Kernel;
use tvcm::{Dataset, Subject, Visit};

fn kernel() -> Kernel {
    Kernel::truncated_gaussian(0.95).unwrap()
}

#[test]
fn jacobi_helper_finds_smallest_eigenvalue() {
    // eigenvalues 1, 3 and 5
    let a = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
    assert!((min_eigenvalue(&a, 3) - 1.0).abs() < 1e-12);
}

#[test]
fn kernel_matches_closed_form() {
    let k = kernel();
    assert!((k.truncation_radius().powi(2) - R2).abs() < 1e-12);
    for &(u, v) in &[(0.0, 0.0), (1.0, 0.5), (-1.0, -0.5), (0.5, 1.0), (2.0, 1.2), (3.0, 3.0), (2.44, 0.1)] {
        assert!((k.eval(u, v) - k_oracle(u, v)).abs() < 1e-15, "({u}, {v})");
    }
    assert_eq!(k.eval(3.0, 3.0), 0.0);
    assert_eq!(k.eval(1.0, 0.5), k.eval(-1.0, -0.5));
    assert_eq!(k.eval(1.0, 0.5), k.eval(0.5, 1.0));
    assert!((k.eval(0.0, 0.0) - 0.16753151904410035).abs() < 1e-15);
}

#[test]
fn handcrafted_three_subjects() {
    let visit = |time: f64, x: f64, y: f64| Visit {
        time,
        covariates: vec![1.0, x],
        response: y,
    };
    let subjects = vec![
        Subject {
            id: "a".into(),
            visits: vec![visit(0.5, 0.2, 1.0), visit(1.5, -0.4, 0.3), visit(2.5, 1.1, 2.2)],
            followup_end: 3.0,
            event_observed: true,
        },
        Subject {
            id: "b".into(),
            visits: vec![visit(0.2, -1.0, -0.5), visit(1.2, 0.7, 1.4)],
            followup_end: 2.0,
            event_observed: true,
        },
        Subject {
            id: "c".into(),
            visits: vec![visit(0.8, 0.3, 0.1), visit(1.9, -0.2, 0.9), visit(3.1, 0.5, 1.7)],
            followup_end: 3.5,
            event_observed: true,
        },
    ];
    let ds = Dataset::new(subjects, 2).unwrap();
    let design = ds.complete_cases().unwrap();
    let k = kernel();
    let f = fit::local_fit(&design, 1.0, 1.5, 1.0, &k).unwrap();
    assert_eq!(f.status, FitStatus::Ok);
    let oracle = dense_fit(&ds, 1.0, 1.5, 1.0).unwrap();
    assert!(max_abs_diff(&f.beta_hat, &oracle) < 1e-10);

    let resid = fit::residuals(&design, 1.0, &k).unwrap();
    let dense = dense_residuals(&ds, 1.0);
    let flat: Vec<Option<f64>> = dense.into_iter().flatten().collect();
    assert_eq!(flat.len(), resid.len());
    for (obs, want) in flat.iter().enumerate() {
        match (resid.get(obs), want) {
            (Some(got), Some(want)) => assert!((got - want).abs() < 1e-10, "obs {obs}"),
            (None, None) => {}
            (got, want) => panic!("obs {obs}: {got:?} vs {want:?}"),
        }
    }
}

#[test]
fn random_datasets_match_dense_oracles() {
    let k = kernel();
    let mut compared = 0;
    for seed in 0..60u64 {
        let p = 1 + (seed % 3) as usize;
        let ds = tiny_dataset(seed, p);
        let design = ds.complete_cases().unwrap();
        let h = 2.5;
        let resid = fit::residuals(&design, h, &k).unwrap();
        for (t0, s0) in visit_points(&ds).into_iter().step_by(3) {
            let f = fit::local_fit(&design, t0, s0, h, &k).unwrap();
            let Some(oracle) = dense_fit(&ds, t0, s0, h) else { continue };
            if f.status != FitStatus::Ok {
                continue;
            }
            assert!(max_abs_diff(&f.beta_hat, &oracle) < 1e-10, "seed {seed} ({t0}, {s0})");
            if resid.n_invalid() == 0 {
                let v = fit::sandwich_variance(&design, t0, s0, h, &k, &resid).unwrap();
                let dv = dense_sandwich(&ds, t0, s0, h).unwrap();
                assert!(max_abs_diff(&v, &dv) < 1e-10, "seed {seed} ({t0}, {s0})");
                compared += 1;
            }
        }
    }
    assert!(compared > 50, "only {compared} comparisons");
}

#[test]
fn no_support_is_reported() {
    let ds = tiny_dataset(3, 2);
    let design = ds.complete_cases().unwrap();
    let f = fit::local_fit(&design, 100.0, 100.0, 0.5, &kernel()).unwrap();
    assert_eq!(f.status, FitStatus::EmptySupport);
    assert_eq!(f.n_eff, 0);
    let resid = fit::residuals(&design, 0.5, &kernel()).unwrap();
    assert!(fit::sandwich_variance(&design, 100.0, 100.0, 0.5, &kernel(), &resid).is_err());
}

#[test]
fn collinear_design_is_singular() {
    // x₂ duplicates the intercept
    let subjects = (0..4)
        .map(|i| Subject {
            id: i.to_string(),
            visits: (0..3)
                .map(|j| Visit {
                    time: j as f64,
                    covariates: vec![1.0, 1.0],
                    response: (i + j) as f64,
                })
                .collect(),
            followup_end: 4.0,
            event_observed: true,
        })
        .collect();
    let ds = Dataset::new(subjects, 2).unwrap();
    let f = fit::local_fit(&ds.complete_cases().unwrap(), 1.0, 3.0, 1.0, &kernel()).unwrap();
    assert_eq!(f.status, FitStatus::Singular);
}

#[test]
fn residual_table_is_reproducible() {
    let ds = tiny_dataset(11, 3);
    let design = ds.complete_cases().unwrap();
    let a = fit::residuals(&design, 2.0, &kernel()).unwrap();
    let b = fit::residuals(&design, 2.0, &kernel()).unwrap();
    let bits = |t: &fit::ResidualTable| t.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let cache = fit::ResidualCache::new();
    let c = cache.get_or_compute(&design, 2.0, &kernel()).unwrap();
    let d = cache.get_or_compute(&design, 2.0, &kernel()).unwrap();
    assert_eq!(cache.len(), 1);
    assert_eq!(bits(&c), bits(&a));
    assert_eq!(bits(&d), bits(&a));
}

#[test]
fn interval_uses_normal_quantile() {
    let ds = tiny_dataset(5, 2);
    let design = ds.complete_cases().unwrap();
    let (t0, s0) = visit_points(&ds)[0];
    let f = &fit::fit_grid(&design, &[(t0, s0)], 3.0, &kernel(), true).unwrap()[0];
    assert!(f.is_ok());
    let n = design.n_subjects();
    let ci = fit::confidence_interval(f, n, 0.05).unwrap();
    for k in 0..2 {
        let se = (f.v(k, k).unwrap() / (n as f64 * 9.0)).sqrt();
        assert!((ci[k].0 - (f.beta_hat[k] - 1.959963984540054 * se)).abs() < 1e-12);
        assert!((ci[k].1 - (f.beta_hat[k] + 1.959963984540054 * se)).abs() < 1e-12);
    }
    assert!(fit::confidence_interval(f, n, 0.0).is_err());
    assert!(fit::confidence_interval(f, n, 1.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_scale_cancels(seed in 0u64..10_000, c in 0.05f64..20.0) {
        let ds = tiny_dataset(seed, 2);
        let design = ds.complete_cases().unwrap();
        let k1 = kernel();
        let k2 = kernel().with_normalizer(k1.normalizer() * c);
        let pts = visit_points(&ds);
        let a = fit::fit_grid(&design, &pts, 2.5, &k1, true).unwrap();
        let b = fit::fit_grid(&design, &pts, 2.5, &k2, true).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.status, y.status);
            if x.is_ok() {
                prop_assert!(max_abs_diff(&x.beta_hat, &y.beta_hat) < 1e-9);
                let (vx, vy) = (x.v_hat.as_ref().unwrap(), y.v_hat.as_ref().unwrap());
                let scale = vx.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                prop_assert!(max_abs_diff(vx, vy) < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn intercept_only_fit_is_weighted_mean(seed in 0u64..10_000, h in 0.8f64..4.0) {
        let ds = tiny_dataset(seed, 1);
        let design = ds.complete_cases().unwrap();
        for (t0, s0) in visit_points(&ds) {
            let f = fit::local_fit(&design, t0, s0, h, &kernel()).unwrap();
            let (mut sw, mut swy) = (0.0, 0.0);
            for s in ds.subjects().iter().filter(|s| s.event_observed) {
                for v in &s.visits {
                    let w = k_oracle((v.time - t0) / h, (s.followup_end - v.time - s0) / h);
                    sw += w;
                    swy += w * v.response;
                }
            }
            prop_assert!(f.is_ok());
            prop_assert!((f.beta_hat[0] - swy / sw).abs() < 1e-12);
        }
    }

    #[test]
    fn censored_subjects_do_not_matter(seed in 0u64..10_000, shift in -5.0f64..5.0) {
        let ds = tiny_dataset(seed, 2);
        let mut perturbed = ds.clone().into_subjects();
        for s in perturbed.iter_mut().filter(|s| !s.event_observed) {
            for v in &mut s.visits {
                v.response += shift;
                v.covariates[1] *= -1.5;
            }
        }
        let other = Dataset::new(perturbed, 2).unwrap();
        let pts = visit_points(&ds);
        let a = fit::fit_grid(&ds.complete_cases().unwrap(), &pts, 2.0, &kernel(), true).unwrap();
        let b = fit::fit_grid(&other.complete_cases().unwrap(), &pts, 2.0, &kernel(), true).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn intervals_nest(seed in 0u64..10_000, a1 in 0.001f64..0.5, a2 in 0.001f64..0.5) {
        let ds = tiny_dataset(seed, 3);
        let design = ds.complete_cases().unwrap();
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        for f in fit::fit_grid(&design, &visit_points(&ds), 3.0, &kernel(), true).unwrap() {
            if !f.is_ok() {
                continue;
            }
            let wide = fit::confidence_interval(&f, design.n_subjects(), lo).unwrap();
            let narrow = fit::confidence_interval(&f, design.n_subjects(), hi).unwrap();
            for (w, n) in wide.iter().zip(&narrow) {
                prop_assert!(w.0 <= n.0 && n.1 <= w.1);
            }
        }
    }

    #[test]
    fn variance_is_symmetric_psd(seed in 0u64..10_000) {
        let ds = tiny_dataset(seed, 3);
        let design = ds.complete_cases().unwrap();
        for f in fit::fit_grid(&design, &visit_points(&ds), 3.0, &kernel(), true).unwrap() {
            let Some(v) = f.v_hat.as_ref() else { continue };
            let trace = v[0] + v[4] + v[8];
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((v[i * 3 + j] - v[j * 3 + i]).abs() <= 1e-12 * trace.max(1.0));
                }
            }
            prop_assert!(min_eigenvalue(v, 3) >= -1e-10 * trace);
        }
    }
}
