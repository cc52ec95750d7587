use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use pce_core::nuisance::FixedStrategy;
use pce_core::prelude::*;
use pce_core::simulation::{run_mc_study, StudyConfig};

use crate::options::*;
use crate::report::*;
use crate::CliError;

const DEFAULT_SEED: u64 = 1;

fn embedded_config<T: Serialize>(opts: &T) -> Value {
    let mut v = serde_json::to_value(opts).expect("options serialize");
    if let Value::Object(m) = &mut v {
        m.remove("out");
        m.retain(|_, val| !val.is_null());
    }
    v
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Input(format!("cannot write to stdout: {e}"))),
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("report serializes");
    s.push(b'\n');
    s
}

fn read_data(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    Dataset::from_csv_reader(std::io::BufReader::new(file))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn strategy(nuisances: Option<&Path>, copula: CopulaSpec, p: usize) -> Result<Arc<dyn NuisanceStrategy>, CliError> {
    let Some(path) = nuisances else {
        return Ok(Arc::new(ParametricStrategy));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let fitted = FittedNuisances::from_json(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if fitted.p() != p {
        return Err(CliError::Input(format!(
            "{}: nuisances were fitted with {} covariates but the data has {p}",
            path.display(),
            fitted.p()
        )));
    }
    Ok(Arc::new(FixedStrategy(Arc::new(fitted.with_copula(copula)))))
}

/// Estimates at every point, then bootstraps the ones that succeeded.
fn estimate_points(
    data: &Dataset,
    pipeline: &Pipeline,
    points: &[PrincipalPoint],
    boot: &BootstrapOpts,
    seed: u64,
) -> Result<Vec<PointReport>, CliError> {
    let fitted = pipeline.fit(data)?;
    let mut reports: Vec<PointReport> = points
        .iter()
        .map(|&u| match fitted.estimate(u) {
            Ok(e) => PointReport::estimated(&e),
            Err(e) => PointReport::missing(u, data.len(), e.to_string()),
        })
        .collect();

    if let Some(cfg) = boot.config(seed)? {
        let ok: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].status == Status::Ok).collect();
        let targets: Vec<PrincipalPoint> = ok.iter().map(|&i| points[i]).collect();
        let results = bootstrap(data, pipeline, &targets, &cfg)?;
        for (&i, res) in ok.iter().zip(results) {
            let r = &mut reports[i];
            match res {
                Ok(b) => {
                    let ci = match cfg.method {
                        CiMethod::Percentile => b.ci,
                        CiMethod::Normal => b.normal_interval(r.tau_hat.expect("estimated"), cfg.alpha),
                    };
                    r.se = Some(b.se);
                    r.ci = Some([ci.0, ci.1]);
                    r.bootstrap_failed = Some(b.failed);
                }
                Err(e) => {
                    r.status = Status::Partial;
                    r.reason = Some(e.to_string());
                }
            }
        }
    }
    Ok(reports)
}

fn estimation_defaults(standardize: bool, extra: Value) -> Value {
    merge_defaults(&[
        estimator_defaults(standardize),
        bootstrap_defaults(),
        json!({ "seed": DEFAULT_SEED }),
        extra,
    ])
}

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    let opts: FitOpts = resolve(estimation_defaults(true, json!({})), args.config.as_deref(), &args.opts)?;
    let points = parse_points(&need(&opts.points, "points")?)?;
    let data = read_data(&need(&opts.data, "data")?)?;
    let est = &opts.estimator;
    let pipeline = est.pipeline(strategy(opts.nuisances.as_deref(), est.copula()?, data.p())?)?;

    if let Some(path) = &opts.save_nuisances {
        let analysis = pipeline.fit(&data)?.data;
        let fitted = FittedNuisances::fit(&analysis, pipeline.copula)?;
        emit(Some(path), fitted.to_json()?.as_bytes())?;
    }

    let reports = estimate_points(&data, &pipeline, &points, &opts.bootstrap, need(&opts.seed, "seed")?)?;
    for r in reports.iter().filter(|r| r.status != Status::Ok) {
        eprintln!(
            "warning: stratum ({}, {}) is {}: {}",
            r.u_star[0],
            r.u_star[1],
            if r.status == Status::Missing { "missing" } else { "without interval" },
            r.reason.as_deref().unwrap_or("")
        );
    }
    let report = FitReport {
        config: embedded_config(&opts),
        points: reports,
    };
    emit(opts.out.as_deref(), &to_json(&report))
}

pub fn surface(args: SurfaceArgs) -> Result<(), CliError> {
    let opts: SurfaceOpts = resolve(
        estimation_defaults(true, json!({ "steps": 5 })),
        args.config.as_deref(),
        &args.opts,
    )?;
    let grid = GridSpec::new(
        parse_pair(&need(&opts.m1_range, "m1-range")?, "m1-range")?,
        parse_pair(&need(&opts.m0_range, "m0-range")?, "m0-range")?,
        need(&opts.steps, "steps")?,
    )?;
    let data = read_data(&need(&opts.data, "data")?)?;
    let pipeline = opts.estimator.pipeline(Arc::new(ParametricStrategy))?;
    let reports = estimate_points(&data, &pipeline, &grid.nodes(), &opts.bootstrap, need(&opts.seed, "seed")?)?;
    if reports.iter().all(|r| r.status == Status::Missing) {
        return Err(Error::AllNodesMissing(reports[0].reason.clone().unwrap_or_default()).into());
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &reports {
        w.serialize(SurfaceRow::from(r)).map_err(|e| CliError::Input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(out) = &opts.out {
        let mut sidecar = out.clone().into_os_string();
        sidecar.push(".config.json");
        emit(Some(Path::new(&sidecar)), &to_json(&embedded_config(&opts)))?;
    }
    emit(opts.out.as_deref(), &bytes)
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let opts: SimulateOpts = resolve(json!({ "seed": DEFAULT_SEED }), args.config.as_deref(), &args.opts)?;
    let design = parse_design(&need(&opts.setting, "setting")?)?;
    let data = design.generate(need(&opts.n, "n")?, need(&opts.seed, "seed")?)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    emit(opts.out.as_deref(), &buf)
}

pub fn study(args: StudyArgs) -> Result<(), CliError> {
    let defaults = estimation_defaults(
        false,
        json!({
            "points": "0,0",
            "rounds": 10,
            "nuisance": "parametric",
            "coverage": false,
            "oracle-n-mc": 1_000_000,
        }),
    );
    let mut defaults = defaults;
    defaults
        .as_object_mut().expect("object").retain(|k, _| k != "copula" && k != "rho");
    let mut opts: StudyOpts = resolve(defaults, args.config.as_deref(), &args.opts)?;
    let design = parse_design(&need(&opts.setting, "setting")?)?;
    // Without a copula choice the study analyses with the design's own.
    if opts.estimator.copula.is_none() && opts.estimator.rho.is_none() {
        let c = design.true_copula();
        opts.estimator.copula = Some(format!("{:?}", c.family).to_ascii_lowercase());
        opts.estimator.rho = Some(c.rho);
    }
    opts.estimator.copula.get_or_insert_with(|| "gaussian".into());
    opts.estimator.rho.get_or_insert(0.0);
    let est = &opts.estimator;
    let copula = est.copula()?;
    let mut cfg = StudyConfig::new(
        design,
        need(&opts.n, "n")?,
        need(&opts.rounds, "rounds")?,
        parse_points(&need(&opts.points, "points")?)?,
        need(&opts.seed, "seed")?,
    );
    cfg.copula = copula;
    cfg.bandwidth = est.bandwidth()?;
    cfg.quad = est.quadrature()?;
    cfg.density_policy = est.density_policy()?;
    cfg.standardize = est.standardize();
    cfg.nuisance = parse_nuisance_mode(&need(&opts.nuisance, "nuisance")?)?;
    cfg.oracle_n_mc = need(&opts.oracle_n_mc, "oracle-n-mc")?;
    if need(&opts.coverage, "coverage")? {
        cfg.coverage = Some(opts.bootstrap.coverage()?);
    }
    let result = run_mc_study(&cfg)?;

    if let Some(path) = &opts.records {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &result.records {
            w.serialize(r).map_err(|e| CliError::Input(e.to_string()))?;
        }
        emit(Some(path), &w.into_inner().map_err(|e| CliError::Input(e.to_string()))?)?;
    }
    let report = StudyReport {
        config: embedded_config(&opts),
        summaries: &result.summaries,
        records: &result.records,
    };
    emit(opts.out.as_deref(), &to_json(&report))
}

pub fn bench(args: BenchArgs) -> Result<(), CliError> {
    let defaults = merge_defaults(&[
        estimator_defaults(false),
        json!({ "setting": "111", "sizes": "250,500,1000", "point": "0,0", "seed": DEFAULT_SEED, "rho": 0.5 }),
    ]);
    let opts: BenchOpts = resolve(defaults, args.config.as_deref(), &args.opts)?;
    let design = parse_design(&need(&opts.setting, "setting")?)?;
    let (m1, m0) = parse_pair(&need(&opts.point, "point")?, "point")?;
    let u = PrincipalPoint::new(m1, m0);
    let pipeline = opts.estimator.pipeline(Arc::new(ParametricStrategy))?;
    let seed = need(&opts.seed, "seed")?;

    let mut runs = Vec::new();
    for n in parse_sizes(&need(&opts.sizes, "sizes")?)? {
        let data = design.generate(n, seed)?;
        let start = Instant::now();
        let e = pipeline.fit(&data)?.estimate(u)?;
        // Wall time varies between runs, so it stays out of the report.
        eprintln!("n = {n}: {:.3} s", start.elapsed().as_secs_f64());
        let h_analysis = pipeline.bandwidth.resolve(n)?.h();
        runs.push(BenchRow {
            n,
            h: e.h,
            nodes_2d: pipeline.quad.nodes_2d(n),
            nodes_1d: pipeline.quad.nodes_1d(n),
            window: pipeline.quad.window(h_analysis, n),
            evaluations: e.diagnostics.evaluations,
            quad_bound: e.diagnostics.quad_bound,
            tau_hat: e.tau_hat,
        });
    }
    let report = BenchReport {
        config: embedded_config(&opts),
        runs,
    };
    emit(opts.out.as_deref(), &to_json(&report))
}
