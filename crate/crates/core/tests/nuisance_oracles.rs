mod common;

use common::*;
use pce_core::dataset::{Arm, Dataset, Observation};
use pce_core::error::Error;
use pce_core::normal;
use pce_core::nuisance::{fit_outcome, fit_principal_score, fit_treatment, FittedNuisances};
use pce_core::prelude::CopulaSpec;
use pce_core::simulation::{gen_benchmark, BenchmarkSetting};

#[test]
fn treatment_matches_gradient_ascent_on_random_fixtures() {
    let mut checked = 0;
    for seed in 0..100 {
        let d = fixture(seed, 20, 2);
        let Ok(fit) = fit_treatment(&d) else { continue };
        let rows: Vec<_> = d.observations().iter().map(treatment_row).collect();
        let z: Vec<f64> = d.observations().iter().map(|o| o.z.indicator()).collect();
        let want = logistic_oracle(&rows, &z);
        let err = max_abs_diff(&fit.coefficients, &want);
        assert!(err < 1e-6, "seed {seed}: {:?} vs {want:?}", fit.coefficients);
        checked += 1;
        if checked == 10 {
            return;
        }
    }
    panic!("only {checked} non-separated fixtures");
}

#[test]
fn outcome_matches_normal_equations() {
    for seed in 0..10 {
        let d = fixture(100 + seed, 15, 2);
        let fit = fit_outcome(&d).unwrap();
        let rows: Vec<_> = d.observations().iter().map(outcome_row).collect();
        let y: Vec<f64> = d.observations().iter().map(|o| o.y).collect();
        let want = normal_equations(&rows, &y);
        assert!(max_abs_diff(&fit.coefficients, &want) < 1e-8, "seed {seed}");
    }
}

#[test]
fn principal_score_matches_normal_equations() {
    for seed in 0..10 {
        let d = fixture(200 + seed, 12, 2);
        let fit = fit_principal_score(&d).unwrap();
        let rows: Vec<_> = d.observations().iter().map(ps_row).collect();
        let m: Vec<f64> = d.observations().iter().map(|o| o.m).collect();
        let want = normal_equations(&rows, &m);
        assert!(max_abs_diff(&fit.coefficients, &want) < 1e-8, "seed {seed}");
        let rss: f64 = rows
            .iter()
            .zip(&m)
            .map(|(r, mi)| {
                let fitted: f64 = r.iter().zip(&want).map(|(a, b)| a * b).sum();
                (mi - fitted).powi(2)
            })
            .sum();
        let want_s2 = rss / (12.0 - 2.0 - 2.0);
        assert!((fit.sigma2 - want_s2).abs() < 1e-10 * want_s2.max(1.0));
    }
}

#[test]
fn noiseless_outcome_is_recovered_exactly() {
    let base = fixture(7, 40, 3);
    let obs: Vec<Observation> = base
        .observations()
        .iter()
        .map(|o| Observation {
            y: 1.0 + o.x[0] + 2.0 * o.m,
            ..o.clone()
        })
        .collect();
    let fit = fit_outcome(&Dataset::new(obs).unwrap()).unwrap();
    let want = [1.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0];
    assert!(max_abs_diff(&fit.coefficients, &want) < 1e-10, "{:?}", fit.coefficients);
}

#[test]
fn noiseless_principal_score_is_degenerate() {
    let base = fixture(8, 40, 3);
    let obs: Vec<Observation> = base
        .observations()
        .iter()
        .map(|o| Observation {
            m: 0.5 * (o.x[0] + o.x[1] + o.x[2]) + o.z.indicator(),
            ..o.clone()
        })
        .collect();
    match fit_principal_score(&Dataset::new(obs).unwrap()) {
        Err(Error::DegeneratePrincipalScore { ell, .. }) => {
            assert!(max_abs_diff(&ell, &[0.0, 0.5, 0.5, 0.5, 1.0]) < 1e-10);
        }
        other => panic!("expected a degenerate fit, got {other:?}"),
    }
}

#[test]
fn mirrored_rows_give_zero_intercept() {
    let base = fixture(9, 30, 2);
    let mut obs = Vec::new();
    for o in base.observations() {
        obs.push(Observation { z: Arm::Treated, ..o.clone() });
        obs.push(Observation {
            x: o.x.iter().map(|v| -v).collect(),
            z: Arm::Control,
            ..o.clone()
        });
    }
    let fit = fit_treatment(&Dataset::new(obs).unwrap()).unwrap();
    assert!(fit.coefficients[0].abs() < 1e-8, "{:?}", fit.coefficients);
}

#[test]
fn large_sample_recovers_benchmark_coefficients() {
    let d = gen_benchmark(&BenchmarkSetting { tp: 1, ps: 1, om: 1, n: 100_000, seed: 11 }).unwrap();
    let t = fit_treatment(&d).unwrap();
    assert!(max_abs_diff(&t.coefficients, &[0.0, 0.0, 1.0, 1.0]) < 0.05, "{:?}", t.coefficients);
    let o = fit_outcome(&d).unwrap();
    assert!((o.coefficients[5] - 0.5).abs() < 0.02, "{:?}", o.coefficients);
    let s = fit_principal_score(&d).unwrap();
    assert!(max_abs_diff(&s.coefficients, &[0.0, 0.5, 0.5, 0.5, 1.0]) < 0.02, "{:?}", s.coefficients);
    assert!((s.sigma2.sqrt() - 0.5).abs() < 0.02);
}

#[test]
fn shifting_m_moves_only_the_intercept() {
    let d = fixture(12, 60, 2);
    let c = 3.7;
    let shifted: Vec<Observation> = d
        .observations()
        .iter()
        .map(|o| Observation { m: o.m + c, ..o.clone() })
        .collect();
    let a = fit_principal_score(&d).unwrap();
    let b = fit_principal_score(&Dataset::new(shifted).unwrap()).unwrap();
    assert!((b.coefficients[0] - a.coefficients[0] - c).abs() < 1e-10);
    assert!(max_abs_diff(&a.coefficients[1..], &b.coefficients[1..]) < 1e-10);
    assert!((a.sigma2 - b.sigma2).abs() < 1e-10);
}

#[test]
fn scaling_y_scales_only_the_outcome_model() {
    let d = fixture(13, 60, 2);
    let a = -2.5;
    let scaled: Vec<Observation> = d
        .observations()
        .iter()
        .map(|o| Observation { y: a * o.y, ..o.clone() })
        .collect();
    let d2 = Dataset::new(scaled).unwrap();
    let f1 = FittedNuisances::fit(&d, CopulaSpec::INDEPENDENCE).unwrap();
    let f2 = FittedNuisances::fit(&d2, CopulaSpec::INDEPENDENCE).unwrap();
    let want: Vec<f64> = f1.outcome.coefficients.iter().map(|v| a * v).collect();
    assert!(max_abs_diff(&f2.outcome.coefficients, &want) < 1e-10);
    assert_eq!(f1.treatment, f2.treatment);
    assert_eq!(f1.principal_score, f2.principal_score);
}

#[test]
fn principal_score_density_integrates_to_one_and_cdf_is_monotone() {
    let d = fixture(14, 50, 2);
    let s = fit_principal_score(&d).unwrap();
    let x = [0.3, -1.2];
    for z in [Arm::Treated, Arm::Control] {
        let g = s.marginal(&x, z);
        // Composite Simpson over mean +- 12 sd.
        let (lo, hi, k) = (g.mean - 12.0 * g.sd, g.mean + 12.0 * g.sd, 4000);
        let step = (hi - lo) / k as f64;
        let mut total = s.ps_density(&x, z, lo) + s.ps_density(&x, z, hi);
        for i in 1..k {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * s.ps_density(&x, z, lo + i as f64 * step);
        }
        assert!((total * step / 3.0 - 1.0).abs() < 1e-8);
        let mut prev = 0.0;
        for i in 0..=400 {
            let v = s.ps_cdf(&x, z, lo + i as f64 * (hi - lo) / 400.0);
            assert!(v >= prev);
            prev = v;
        }
        let mid = s.ps_cdf(&x, z, g.mean + g.sd);
        assert!((mid - normal::cdf(1.0)).abs() < 1e-15);
    }
}

#[test]
fn outcome_prediction_matches_dot_product() {
    let d = fixture(15, 40, 2);
    let fit = fit_outcome(&d).unwrap();
    let o = Observation { x: vec![0.7, -0.4], z: Arm::Treated, m: 1.3, y: 0.0 };
    let want: f64 = outcome_row(&o).iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum();
    assert!((fit.predict_mu(&o.x, Arm::Treated, o.m) - want).abs() < 1e-12);
}

#[test]
fn nuisance_json_round_trip() {
    let d = fixture(16, 40, 2);
    let f = FittedNuisances::fit(&d, CopulaSpec::gaussian(0.3).unwrap()).unwrap();
    let s = f.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    for key in ["treatment", "outcome", "principal_score"] {
        assert!(v[key]["coefficients"].is_array(), "{key}");
    }
    assert_eq!(FittedNuisances::from_json(&s).unwrap(), f);
    let broken = s.replacen("\"sigma2\"", "\"sigma_two\"", 1);
    assert!(FittedNuisances::from_json(&broken).is_err());
}
