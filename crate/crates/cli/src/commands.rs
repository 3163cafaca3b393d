use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use stochloc::gaussian::{
    affine_tube_measure, circled_hyperplane_tube_measure, disc_measure, tilt_inequality_check, CircledNormSpec,
    DiscSpec,
};
use stochloc::linalg::{ComplexVec, HermitianMatrix};
use stochloc::localization::{run_ensemble, run_path, DiagnosticRow, InvariantSummary, InvariantTolerances, PathOptions};
use stochloc::montecarlo::{
    center_law_report, circled_waist_check, confidence_interval, density_martingale_report, estimate_tube_profile,
    mixture_report, waist_check, HitBudget, NormTag,
};
use stochloc::rng::{Stream, StreamId};
use stochloc::variety::{catalog, DEFAULT_DISTANCE_STARTS};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::CliError;

pub(crate) fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        map: catalog::parabola().to_json(),
        horizon: None,
        h: None,
        n_paths: None,
        r_grid: None,
        n_samples: None,
        seed: None,
        weights: None,
        rank_tol: None,
        distance: None,
        record_every: None,
        functionals: None,
        points: None,
        tilt_instances: None,
    }
}

/// Output directory plus the provenance stamped on every file.
pub(crate) struct Output {
    dir: PathBuf,
    hash: String,
    seed: u64,
}

impl Output {
    pub(crate) fn new(dir: &Path, experiment: &Experiment) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
        Ok(Self { dir: dir.to_path_buf(), hash: experiment.config.sha256(), seed: experiment.seed() })
    }

    fn comment(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.hash, self.seed)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io { path: parent.display().to_string(), source })?;
        }
        std::fs::write(&path, contents).map_err(|source| CliError::Io { path: path.display().to_string(), source })
    }

    /// Writes `{experiment, seed, config_sha256, ...body}` as pretty JSON.
    fn write_json(&self, name: &str, experiment: &str, body: impl Serialize) -> Result<Value, CliError> {
        let mut doc = json!({ "experiment": experiment, "seed": self.seed, "config_sha256": self.hash });
        if let Value::Object(fields) = serde_json::to_value(body).expect("results serialize") {
            for (k, v) in fields {
                doc[k] = v;
            }
        }
        self.write(name, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))?;
        Ok(doc)
    }

    /// Whitespace-separated columns for gnuplot.
    fn write_dat(&self, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let mut s = self.comment();
        let _ = writeln!(s, "# {}", columns.join(" "));
        for row in rows {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        self.write(name, &s)
    }
}

fn distance(experiment: &Experiment) -> Result<f64, CliError> {
    match experiment.config.distance {
        Some(d) => Ok(d),
        None => Ok(experiment
            .map
            .distance_to_origin(&experiment.map.default_starts(DEFAULT_DISTANCE_STARTS, experiment.seed()))?
            .distance),
    }
}

fn path_options(experiment: &Experiment) -> PathOptions {
    PathOptions { record_every: experiment.record_every(), ..Default::default() }
}

pub(crate) fn localize(experiment: &Experiment, out: &Output) -> Result<(), CliError> {
    let map = &experiment.map;
    let (horizon, h, seed) = (experiment.horizon(), experiment.step(), experiment.seed());
    let opts = path_options(experiment);
    let results: Vec<_> = (0..experiment.n_paths() as u64)
        .into_par_iter()
        .map(|i| (i, run_path(map, horizon, h, StreamId::path(seed, i), &opts)))
        .collect();
    let mut summary = InvariantSummary::default();
    let mut aborted = Vec::new();
    let mut numerical = None;
    for (i, result) in &results {
        let (rows, path_summary) = match result {
            Ok(r) => (&r.rows, &r.summary),
            Err(a) => {
                aborted.push(json!({ "path": i, "t": a.t, "error": a.source.to_string() }));
                numerical.get_or_insert_with(|| a.source.clone());
                (&a.rows, &a.summary)
            }
        };
        summary.merge(path_summary);
        let mut csv = out.comment();
        csv.push_str(DiagnosticRow::CSV_HEADER);
        csv.push('\n');
        for row in rows {
            csv.push_str(&row.to_csv());
            csv.push('\n');
        }
        out.write(&format!("localize/path_{i:05}.csv"), &csv)?;
    }
    let violations = summary.violations(&InvariantTolerances::default());
    out.write_json(
        "localize_summary.json",
        "localize",
        json!({
            "T": horizon,
            "h": h,
            "n_paths": experiment.n_paths(),
            "summary": summary,
            "violations": violations,
            "aborted": aborted,
        }),
    )?;
    if !violations.is_empty() {
        return Err(CliError::Verdict(format!("invariant violations: {}", violations.join("; "))));
    }
    match numerical {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub(crate) fn tube(experiment: &Experiment, out: &Output) -> Result<(), CliError> {
    let map = &experiment.map;
    let grid = experiment.r_grid();
    let budget = HitBudget::default();
    let passed = match &experiment.config.weights {
        None => {
            let report =
                waist_check(map, &grid, experiment.n_samples(), experiment.seed(), experiment.config.distance, &budget)?;
            out.write_json("tube.json", "tube", &report)?;
            let rows: Vec<Vec<f64>> = report.rows.iter().map(|r| vec![r.r, r.p_hat, r.stderr, r.baseline]).collect();
            out.write_dat("tube.dat", &["r", "p_hat", "stderr", "baseline"], &rows)?;
            report.passed()
        }
        Some(weights) => {
            let d = distance(experiment)?;
            let report = circled_waist_check(map, weights, d, &grid, experiment.n_samples(), experiment.seed(), &budget)?;
            out.write_json("tube.json", "tube_circled", &report)?;
            let rows: Vec<Vec<f64>> =
                report.rows.iter().map(|r| vec![r.r, r.p_hat, r.stderr, r.baseline, r.baseline_hat]).collect();
            out.write_dat("tube.dat", &["r", "p_hat", "stderr", "baseline", "baseline_hat"], &rows)?;
            report.passed()
        }
    };
    if passed {
        Ok(())
    } else {
        Err(CliError::Verdict("tube measure below the baseline by more than 3 standard errors".into()))
    }
}

pub(crate) fn baseline(experiment: &Experiment, out: &Output) -> Result<(), CliError> {
    let map = &experiment.map;
    let d = distance(experiment)?;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for r in experiment.r_grid() {
        let affine = affine_tube_measure(map.ambient_dim(), map.codim(), d, r)?;
        let circled = match &experiment.config.weights {
            Some(w) => Some(circled_hyperplane_tube_measure(&CircledNormSpec::new(w.clone())?, d, r)?),
            None => None,
        };
        rows.push(json!({ "r": r, "baseline": affine, "circled_baseline": circled }));
        table.push(vec![r, affine]);
    }
    out.write_json(
        "baseline.json",
        "baseline",
        json!({ "n": map.ambient_dim(), "k": map.codim(), "distance": d, "rows": rows }),
    )?;
    out.write_dat("baseline.dat", &["r", "baseline"], &table)
}

pub(crate) fn mixture(experiment: &Experiment, out: &Output) -> Result<(), CliError> {
    let map = &experiment.map;
    if map.base_point().iter().any(|z| z.norm() != 0.0) {
        return Err(CliError::Config { path: "map.base_point".into(), message: "the process must start at the origin".into() });
    }
    let ensemble =
        run_ensemble(map, experiment.horizon(), experiment.step(), experiment.n_paths(), experiment.seed(), &path_options(experiment));
    let report = mixture_report(&ensemble, &experiment.functionals(), experiment.rank_tol())?;
    let density = density_martingale_report(&ensemble, &experiment.points())?;
    let density_ok = density.iter().all(|r| r.z_score.abs() <= 3.0);
    out.write_json("mixture.json", "mixture", json!({ "report": report, "density": density }))?;
    if report.passed() && density_ok {
        Ok(())
    } else {
        Err(CliError::Verdict("mixture or martingale mean outside 3 standard errors (or too many aborted paths)".into()))
    }
}

pub(crate) fn centerlaw(experiment: &Experiment, out: &Output) -> Result<(), CliError> {
    let map = &experiment.map;
    if map.base_point().iter().any(|z| z.norm() != 0.0) {
        return Err(CliError::Config { path: "map.base_point".into(), message: "the process must start at the origin".into() });
    }
    let ensemble =
        run_ensemble(map, experiment.horizon(), experiment.step(), experiment.n_paths(), experiment.seed(), &path_options(experiment));
    let report = center_law_report(map, &ensemble)?;
    let n = map.ambient_dim();
    let mut csv = out.comment();
    let header: Vec<String> = (1..=n).flat_map(|j| [format!("re_a{j}"), format!("im_a{j}")]).collect();
    let _ = writeln!(csv, "path,{}", header.join(","));
    for ((i, _, _), a) in ensemble.paths.iter().zip(&report.samples) {
        let cols: Vec<String> = a.iter().flat_map(|z| [format!("{:.16e}", z.re), format!("{:.16e}", z.im)]).collect();
        let _ = writeln!(csv, "{i},{}", cols.join(","));
    }
    out.write("centerlaw.csv", &csv)?;
    out.write_json("centerlaw.json", "centerlaw", &report)?;
    let bound = 2.0 * n as f64 + 3.0 * report.norm_sqr.stderr;
    if report.max_residual > 1e-10 || report.norm_sqr.mean > bound {
        return Err(CliError::Verdict(format!(
            "center law check failed: residual {:.3e}, E|a|^2 = {:.4} (bound {bound:.4})",
            report.max_residual, report.norm_sqr.mean
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TiltRow {
    b: f64,
    v: [f64; 2],
    radius: f64,
    lhs: f64,
    rhs: f64,
    holds: bool,
    quad_error: f64,
}

pub(crate) fn tilt(experiment: &Experiment, out: &Output) -> Result<(), CliError> {
    let count = experiment.config.tilt_instances.unwrap_or(100);
    let mut stream = Stream::new(StreamId::new(experiment.seed(), stochloc::rng::domain::TILT, 0));
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let b = 1.0 + 3.0 * stream.uniform();
        let v = Complex64::from_polar(2.0 * stream.uniform(), std::f64::consts::TAU * stream.uniform());
        let radius = 0.2 + 1.8 * stream.uniform();
        let t = tilt_inequality_check(&HermitianMatrix::from_real_diagonal(&[b]), &ComplexVec::from_element(1, v), radius)?;
        rows.push(TiltRow { b, v: [v.re, v.im], radius, lhs: t.lhs, rhs: t.rhs, holds: t.holds, quad_error: t.quad_error });
    }
    let failures = rows.iter().filter(|r| !r.holds).count();
    out.write_json("tilt.json", "tilt", json!({ "rows": rows, "failures": failures }))?;
    if failures > 0 {
        return Err(CliError::Verdict(format!("tilt inequality failed on {failures} instances")));
    }
    Ok(())
}

#[derive(Serialize)]
struct Check {
    check: &'static str,
    passed: bool,
    detail: String,
}

pub(crate) fn selftest(experiment: &Experiment, out: &Output) -> Result<(), CliError> {
    let mut checks = Vec::new();

    let y: f64 = 0.5;
    let central = disc_measure(&DiscSpec::new(2, 0.0, 1.0)?);
    let closed = 1.0 - (-y).exp() * (1.0 + y);
    checks.push(Check {
        check: "central disc closed form",
        passed: (central - closed).abs() <= 1e-12,
        detail: format!("{central} vs {closed}"),
    });

    let t = tilt_inequality_check(&HermitianMatrix::identity(1), &ComplexVec::from_element(1, Complex64::new(0.8, -0.3)), 1.1)?;
    checks.push(Check {
        check: "tilt equality at B = Id",
        passed: (t.lhs - t.rhs).abs() <= 1e-8,
        detail: format!("lhs {} rhs {}", t.lhs, t.rhs),
    });

    let horizon = experiment.horizon().min(2.0);
    let e = run_ensemble(&experiment.map, horizon, experiment.step(), 8, experiment.seed(), &PathOptions::default());
    let violations = e.summary().violations(&InvariantTolerances::default());
    checks.push(Check {
        check: "localization invariants",
        passed: violations.is_empty() && e.aborted.is_empty(),
        detail: format!("T={horizon}, {} paths, {} aborted, violations {:?}", e.paths.len(), e.aborted.len(), violations),
    });

    let affine = catalog::coordinate(2, 0, Complex64::new(0.5, 0.0));
    let est = estimate_tube_profile(&affine, &[1.0], &NormTag::Euclidean, 4000, experiment.seed(), &HitBudget::default())?;
    let exact = disc_measure(&DiscSpec::new(1, 0.5, 1.0)?);
    let e0 = &est.estimates[0];
    checks.push(Check {
        check: "affine tube estimate",
        passed: (e0.p_hat - exact).abs() <= 3.0 * e0.stderr,
        detail: format!("p_hat {} vs {exact} (stderr {})", e0.p_hat, e0.stderr),
    });

    let ci = confidence_interval(50, 100)?;
    checks.push(Check {
        check: "confidence interval",
        passed: ci.p_hat == 0.5 && (ci.stderr - 0.05).abs() < 1e-15 && ci.wilson_low < 0.5 && ci.wilson_high > 0.5,
        detail: format!("{ci:?}"),
    });

    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.check).collect();
    out.write_json("selftest.json", "selftest", json!({ "checks": checks }))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verdict(format!("self-test failures: {}", failed.join(", "))))
    }
}
