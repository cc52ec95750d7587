mod common;

use std::sync::Arc;

use pce_core::dataset::{Observation, StandardizeColumns};
use pce_core::error::Error;
use pce_core::estimator::NodeOutcome;
use pce_core::prelude::*;
use pce_core::simulation::{Design, SyntheticTruth};

fn pipeline(h: f64, quad: QuadratureConfig, standardize: StandardizeColumns) -> Pipeline {
    Pipeline {
        strategy: Arc::new(ParametricStrategy),
        copula: CopulaSpec::gaussian(0.4).unwrap(),
        bandwidth: Bandwidth::Fixed { h },
        quad,
        density_policy: DensityPolicy::Error,
        standardize,
    }
}

fn bench(n: usize, seed: u64) -> Dataset {
    gen_benchmark(&BenchmarkSetting { tp: 1, ps: 1, om: 1, n, seed }).unwrap()
}

fn map(d: &Dataset, f: impl Fn(&Observation) -> Observation) -> Dataset {
    Dataset::new(d.observations().iter().map(f).collect()).unwrap()
}

fn tau(p: &Pipeline, d: &Dataset, u: PrincipalPoint) -> f64 {
    p.fit(d).unwrap().estimate(u).unwrap().tau_hat
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn row_order_does_not_matter() {
    let d = bench(200, 1);
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.reverse();
    idx.rotate_left(37);
    let permuted = d.select(&idx).unwrap();
    let p = pipeline(0.3, QuadratureConfig::default(), StandardizeColumns::NONE);
    let u = PrincipalPoint::new(0.5, 0.2);
    let (a, b) = (tau(&p, &d, u), tau(&p, &permuted, u));
    assert!(rel(a, b) <= 1e-12, "{a} vs {b}");
}

#[test]
fn outcome_scale_equivariance() {
    let d = bench(200, 2);
    let s = 3.25;
    let scaled = map(&d, |o| Observation { y: s * o.y, ..o.clone() });
    let p = pipeline(0.3, QuadratureConfig::default(), StandardizeColumns::NONE);
    let u = PrincipalPoint::new(0.0, 0.0);
    let (a, b) = (tau(&p, &d, u), tau(&p, &scaled, u));
    assert!((b - s * a).abs() <= 1e-8 * a.abs().max(1.0), "{b} vs {}", s * a);
}

#[test]
fn joint_shift_of_m_and_u_is_invariant() {
    let d = bench(200, 3);
    let c = -1.75;
    let shifted = map(&d, |o| Observation { m: o.m + c, ..o.clone() });
    let p = pipeline(0.3, QuadratureConfig::default(), StandardizeColumns::NONE);
    let u = PrincipalPoint::new(0.4, -0.3);
    let a = tau(&p, &d, u);
    let b = tau(&p, &shifted, PrincipalPoint::new(u.m1 + c, u.m0 + c));
    assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
}

#[test]
fn standardized_pipeline_matches_raw_in_original_units() {
    // Stretch every continuous column so standardization is not a no-op.
    let d = map(&bench(200, 4), |o| Observation {
        x: o.x.iter().enumerate().map(|(k, v)| 2.0 * v + k as f64).collect(),
        m: 1.5 * o.m + 4.0,
        y: 0.5 * o.y - 2.0,
        ..o.clone()
    });
    let (_, rec) = standardize(&d).unwrap();
    let h_std = 0.3;
    let std_p = pipeline(h_std, QuadratureConfig::default(), StandardizeColumns::ALL);
    let raw_p = pipeline(h_std * rec.m_map().sd, QuadratureConfig::default(), StandardizeColumns::NONE);
    let u = PrincipalPoint::new(5.0, 3.5);
    let a = std_p.fit(&d).unwrap().estimate(u).unwrap();
    let b = raw_p.fit(&d).unwrap().estimate(u).unwrap();
    assert!((a.tau_hat - b.tau_hat).abs() <= 1e-6, "{} vs {}", a.tau_hat, b.tau_hat);
    assert!(rel(a.denom, b.denom) <= 1e-6);
    assert!((a.u_star.m1 - u.m1).abs() < 1e-12 && (a.u_star.m0 - u.m0).abs() < 1e-12);
    assert!(rel(a.h, b.h) < 1e-12);
}

#[test]
fn replicate_invariant_data_has_zero_bootstrap_spread() {
    // Y is an exact linear function of (x, z, m) with a constant contrast,
    // so every resample refits the same outcome model and tau_hat = 2.
    let d = map(&bench(150, 5), |o| Observation {
        y: 1.0 + o.x[0] + 2.0 * o.z.indicator(),
        ..o.clone()
    });
    let p = pipeline(0.4, QuadratureConfig::adaptive(1e-10), StandardizeColumns::NONE);
    let cfg = BootstrapConfig { replicates: 10, alpha: 0.1, seed: 9, method: CiMethod::Percentile };
    let b = bootstrap_point(&d, &p, PrincipalPoint::new(0.3, 0.3), &cfg).unwrap();
    assert_eq!(b.failed, 0);
    assert!(b.se < 1e-9, "se {}", b.se);
    assert!((b.ci.0 - 2.0).abs() < 1e-9 && (b.ci.1 - 2.0).abs() < 1e-9);
}

#[test]
fn bootstrap_is_independent_of_thread_count() {
    let d = bench(120, 6);
    let p = pipeline(0.4, QuadratureConfig::adaptive(1e-8), StandardizeColumns::ALL);
    let cfg = BootstrapConfig { replicates: 8, alpha: 0.1, seed: 77, method: CiMethod::Percentile };
    let pts = [PrincipalPoint::new(0.0, 0.0), PrincipalPoint::new(0.5, -0.5)];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap(&d, &p, &pts, &cfg).unwrap())
    };
    let (one, four) = (run(1), run(4));
    for (a, b) in one.iter().zip(&four) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.replicates), bits(&b.replicates));
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }
}

#[test]
fn surface_nodes_match_point_calls() {
    let d = bench(150, 7);
    let fitted = pipeline(0.3, QuadratureConfig::default(), StandardizeColumns::NONE).fit(&d).unwrap();
    let grid = GridSpec::new((-0.5, 0.5), (-0.5, 0.5), 2).unwrap();
    let s = estimate_surface(&fitted.data, fitted.nuisances.as_ref(), &fitted.config, &grid).unwrap();
    assert_eq!(s.nodes.len(), 4);
    for node in &s.nodes {
        let NodeOutcome::Ok { estimate } = &node.outcome else { panic!("missing node") };
        let single = estimate_point(&fitted.data, fitted.nuisances.as_ref(), &fitted.config, node.u_star).unwrap();
        assert_eq!(estimate, &single);
    }
}

#[test]
fn empty_strata_are_missing_not_fatal() {
    let d = bench(150, 8);
    let fitted = pipeline(0.3, QuadratureConfig::default(), StandardizeColumns::NONE).fit(&d).unwrap();
    let grid = GridSpec::new((0.0, 50.0), (-50.0, 0.0), 2).unwrap();
    let s = estimate_surface(&fitted.data, fitted.nuisances.as_ref(), &fitted.config, &grid).unwrap();
    let far = s.nodes.iter().find(|n| n.u_star == PrincipalPoint::new(50.0, -50.0)).unwrap();
    match &far.outcome {
        NodeOutcome::Missing { reason } => assert!(reason.contains("negligible estimated density"), "{reason}"),
        other => panic!("{other:?}"),
    }
    assert!(s.nodes.iter().any(|n| matches!(n.outcome, NodeOutcome::Ok { .. })));

    let hopeless = GridSpec::new((40.0, 50.0), (-50.0, -40.0), 2).unwrap();
    let r = estimate_surface(&fitted.data, fitted.nuisances.as_ref(), &fitted.config, &hopeless);
    assert!(matches!(r, Err(Error::AllNodesMissing(_))));
}

#[test]
fn bootstrap_failure_ceiling_reports_breakdown() {
    let d = bench(120, 9);
    let p = pipeline(0.3, QuadratureConfig::adaptive(1e-8), StandardizeColumns::NONE);
    let cfg = BootstrapConfig { replicates: 5, alpha: 0.1, seed: 1, method: CiMethod::Percentile };
    match bootstrap_point(&d, &p, PrincipalPoint::new(50.0, -50.0), &cfg) {
        Err(Error::BootstrapFailures { failed, total, breakdown }) => {
            assert_eq!((failed, total), (5, 5));
            assert_eq!(breakdown, "5 x negligible density");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn alpha_changes_only_the_interval() {
    let d = bench(120, 10);
    let p = pipeline(0.4, QuadratureConfig::adaptive(1e-8), StandardizeColumns::NONE);
    let u = PrincipalPoint::new(0.0, 0.0);
    let wide = BootstrapConfig { replicates: 30, alpha: 0.05, seed: 3, method: CiMethod::Percentile };
    let narrow = BootstrapConfig { alpha: 0.2, ..wide };
    let a = bootstrap_point(&d, &p, u, &wide).unwrap();
    let b = bootstrap_point(&d, &p, u, &narrow).unwrap();
    assert_eq!(a.replicates, b.replicates);
    assert!(b.ci.1 - b.ci.0 < a.ci.1 - a.ci.0);
    let (lo, hi) = a.normal_interval(0.0, 0.05);
    assert!((hi - 1.959_963_984_540_054 * a.se).abs() < 1e-12 && (lo + hi).abs() < 1e-12);
}

#[test]
fn oracle_nuisances_plug_into_the_pipeline() {
    let (d, _) = gen_synthetic(SyntheticVariant::P1, 300, 11).unwrap();
    let copula = Design::Synthetic(SyntheticVariant::P1).true_copula();
    let p = Pipeline {
        strategy: Arc::new(pce_core::nuisance::FixedStrategy(Arc::new(SyntheticTruth::new(SyntheticVariant::P1)))),
        copula,
        bandwidth: Bandwidth::Fixed { h: 0.3 },
        quad: QuadratureConfig::adaptive(1e-8),
        density_policy: DensityPolicy::Error,
        standardize: StandardizeColumns::NONE,
    };
    let e = p.fit(&d).unwrap().estimate(PrincipalPoint::new(1.0, 0.0)).unwrap();
    assert!(e.tau_hat.is_finite() && e.denom > 0.0);
}
