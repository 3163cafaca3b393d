//! Monte Carlo estimates of tube measures, mixture and martingale checks over
//! localization ensembles, and center-law statistics.
//!
//! Tube hits use a one-sided distance estimate: for a sample `z`, `d̂(z)` is the
//! smallest distance reached by local descent from a fixed family of starts
//! (the projection of `z` plus perturbations at the scale of each radius).
//! Every candidate lies on the fiber, so `d̂(z) >= d(z, Z)` and a hit at `r`
//! (`d̂(z) <= r`) is a genuine hit. Optimizer failures only lose hits.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{
    affine_tube_measure, circled_hyperplane_tube_measure, circled_norm_geometry, gaussian_expectation,
    CircledNormSpec, TestFunctional,
};
use crate::linalg::{ComplexVec, SubspaceBasis};
use crate::localization::{run_ensemble, terminal_gaussian, Ensemble, PathOptions};
use crate::rng::{domain, Stream, StreamId};
use crate::variety::{catalog, DescentOptions, PolynomialMap, DEFAULT_DISTANCE_STARTS};

/// Verdict threshold in standard errors.
pub const SIGMA_THRESHOLD: f64 = 3.0;
/// Largest tolerated fraction of aborted paths in a mixture report.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "norm", content = "weights")]
pub enum NormTag {
    Euclidean,
    /// `|W z|` with `W = diag(weights)`.
    Circled(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeEstimate {
    pub r: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub n_hits: usize,
    pub norm_tag: NormTag,
}

/// Work per sample in the hit test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitBudget {
    /// Perturbed starts per grid radius, in addition to the projection of the sample.
    pub perturbations: usize,
    pub descent: DescentOptions,
}

impl Default for HitBudget {
    fn default() -> Self {
        Self { perturbations: 8, descent: DescentOptions::default() }
    }
}

/// Tube estimates on a common set of samples, one per grid radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeProfile {
    pub estimates: Vec<TubeEstimate>,
    /// Descents that failed to project or hit a singular point.
    pub optimizer_failures: usize,
    /// Samples where every start failed (counted as misses).
    pub failed_samples: usize,
}

/// `(p_hat, stderr, wilson_low, wilson_high)` with a 3-sigma Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub p_hat: f64,
    pub stderr: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

pub fn confidence_interval(hits: usize, n: usize) -> Result<ConfidenceInterval> {
    if n == 0 {
        return Err(Error::validation("N", "sample count must be at least 1"));
    }
    if hits > n {
        return Err(Error::validation("hits", format!("hits ({hits}) exceed samples ({n})")));
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = SIGMA_THRESHOLD * SIGMA_THRESHOLD;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = SIGMA_THRESHOLD * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Ok(ConfidenceInterval {
        p_hat: p,
        stderr: (p * (1.0 - p) / nf).sqrt(),
        wilson_low: (center - half).max(0.0),
        wilson_high: (center + half).min(1.0),
    })
}

fn validate_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.is_empty() {
        return Err(Error::validation("r_grid", "at least one radius is required"));
    }
    for (i, r) in r_grid.iter().enumerate() {
        if !(*r >= 0.0) || !r.is_finite() {
            return Err(Error::validation(format!("r_grid[{i}]"), format!("radius must be finite and >= 0, got {r}")));
        }
        if i > 0 && !(r_grid[i - 1] < *r) {
            return Err(Error::validation(format!("r_grid[{i}]"), "radii must be strictly increasing"));
        }
    }
    Ok(())
}

/// `d̂(target)` and the number of failed descents.
fn sample_distance(
    map: &PolynomialMap,
    target: &ComplexVec,
    r_grid: &[f64],
    budget: &HitBudget,
    starts: &mut Stream,
) -> (f64, usize) {
    let n = map.ambient_dim();
    let r_min = r_grid[0];
    let opts = DescentOptions { stop_below: r_min, ..budget.descent };
    let mut best = f64::INFINITY;
    let mut failed = 0;
    let mut descend = |start: &ComplexVec, best: &mut f64| match map.local_nearest_point(target, start, &opts) {
        Ok(np) => *best = best.min(np.distance),
        Err(_) => failed += 1,
    };
    descend(target, &mut best);
    'outer: for _ in 0..budget.perturbations {
        for &r in r_grid {
            // Draw before any exit so the start sequence never depends on outcomes.
            let xi = ComplexVec::from_fn(n, |_, _| starts.complex_normal(r * r / (2 * n) as f64));
            if best <= r_min {
                break 'outer;
            }
            if r > 0.0 {
                descend(&(target + xi), &mut best);
            }
        }
    }
    (best, failed)
}

/// Samples `z ~ γ_n` from stream family `(seed, sample_domain)` and tests
/// membership of the `r`-tube about the fiber for every `r` in `r_grid`.
fn tube_profile_in(
    map: &PolynomialMap,
    r_grid: &[f64],
    norm: &NormTag,
    n_samples: usize,
    seed: u64,
    sample_domain: u64,
    budget: &HitBudget,
) -> Result<TubeProfile> {
    if n_samples == 0 {
        return Err(Error::validation("N", "sample count must be at least 1"));
    }
    validate_grid(r_grid)?;
    let n = map.ambient_dim();
    // In the circled norm the tube of `f` at `z` is the Euclidean tube of `f(W^{-1}u)` at `u = Wz`.
    let (search_map, weights) = match norm {
        NormTag::Euclidean => (map.clone(), None),
        NormTag::Circled(w) => {
            let spec = CircledNormSpec::new(w.clone())?;
            if spec.dim() != n {
                return Err(Error::validation("weights", format!("expected {n} weights, got {}", spec.dim())));
            }
            (map.scaled_coordinates(w)?, Some(w.clone()))
        }
    };
    let starts_seed = seed ^ sample_domain.rotate_left(17);
    let results: Vec<(f64, usize)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut z = Stream::new(StreamId::new(seed, sample_domain, i)).standard_gaussian(n);
            if let Some(w) = &weights {
                for (x, wj) in z.iter_mut().zip(w) {
                    *x *= *wj;
                }
            }
            let mut starts = Stream::new(StreamId::new(starts_seed, domain::STARTS, i));
            sample_distance(&search_map, &z, r_grid, budget, &mut starts)
        })
        .collect();
    let mut hits = vec![0usize; r_grid.len()];
    let mut optimizer_failures = 0;
    let mut failed_samples = 0;
    let starts_per_sample = 1 + budget.perturbations * r_grid.iter().filter(|r| **r > 0.0).count();
    for (d, failed) in &results {
        optimizer_failures += failed;
        if *failed == starts_per_sample {
            failed_samples += 1;
        }
        for (h, r) in hits.iter_mut().zip(r_grid) {
            if d <= r {
                *h += 1;
            }
        }
    }
    let estimates = r_grid
        .iter()
        .zip(&hits)
        .map(|(&r, &h)| {
            let ci = confidence_interval(h, n_samples).expect("hits <= samples");
            TubeEstimate { r, p_hat: ci.p_hat, stderr: ci.stderr, n_samples, n_hits: h, norm_tag: norm.clone() }
        })
        .collect();
    Ok(TubeProfile { estimates, optimizer_failures, failed_samples })
}

/// Common-sample estimates of `γ_n(Z + rK)` for every radius in the grid.
pub fn estimate_tube_profile(
    map: &PolynomialMap,
    r_grid: &[f64],
    norm: &NormTag,
    n_samples: usize,
    seed: u64,
    budget: &HitBudget,
) -> Result<TubeProfile> {
    tube_profile_in(map, r_grid, norm, n_samples, seed, domain::TUBE_SAMPLES, budget)
}

pub fn estimate_tube_measure(
    map: &PolynomialMap,
    r: f64,
    norm: &NormTag,
    n_samples: usize,
    seed: u64,
) -> Result<TubeEstimate> {
    let profile = estimate_tube_profile(map, &[r], norm, n_samples, seed, &HitBudget::default())?;
    Ok(profile.estimates.into_iter().next().expect("one radius"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_margin(margin: f64, stderr: f64) -> Self {
        if margin >= -SIGMA_THRESHOLD * stderr {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaistRow {
    pub r: f64,
    pub p_hat: f64,
    /// Standard error of the margin.
    pub stderr: f64,
    pub baseline: f64,
    pub margin: f64,
    pub verdict: Verdict,
}

/// Results table for a waist experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaistReport {
    pub experiment: String,
    pub seed: u64,
    pub rows: Vec<WaistRow>,
    pub optimizer_failures: usize,
    /// Distance from the origin to the fiber used for the baseline.
    pub distance: f64,
}

impl WaistReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.verdict == Verdict::Pass)
    }
}

/// Compares `γ_n(Z + r)` with the affine baseline `γ_n(E + r)`, `E` at the
/// same distance `d` from the origin. `d` is estimated from the base point and
/// random starts when not given.
pub fn waist_check(
    map: &PolynomialMap,
    r_grid: &[f64],
    n_samples: usize,
    seed: u64,
    distance: Option<f64>,
    budget: &HitBudget,
) -> Result<WaistReport> {
    let d = match distance {
        Some(d) if d >= 0.0 && d.is_finite() => d,
        Some(d) => return Err(Error::validation("distance", format!("must be finite and >= 0, got {d}"))),
        None => map.distance_to_origin(&map.default_starts(DEFAULT_DISTANCE_STARTS, seed))?.distance,
    };
    let profile = estimate_tube_profile(map, r_grid, &NormTag::Euclidean, n_samples, seed, budget)?;
    let mut rows = Vec::with_capacity(r_grid.len());
    for est in &profile.estimates {
        let baseline = affine_tube_measure(map.ambient_dim(), map.codim(), d, est.r)?;
        let margin = est.p_hat - baseline;
        rows.push(WaistRow {
            r: est.r,
            p_hat: est.p_hat,
            stderr: est.stderr,
            baseline,
            margin,
            verdict: Verdict::from_margin(margin, est.stderr),
        });
    }
    Ok(WaistReport { experiment: "waist".into(), seed, rows, optimizer_failures: profile.optimizer_failures, distance: d })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircledWaistRow {
    pub r: f64,
    pub p_hat: f64,
    pub p_stderr: f64,
    /// Monte Carlo estimate of `γ_n(H_1 + rK)` on an independent sample.
    pub baseline_hat: f64,
    pub baseline_stderr: f64,
    /// Closed form of the same baseline.
    pub baseline: f64,
    pub margin: f64,
    /// `sqrt(p_stderr^2 + baseline_stderr^2)`.
    pub stderr: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircledWaistReport {
    pub experiment: String,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub inradius: f64,
    pub rows: Vec<CircledWaistRow>,
    pub optimizer_failures: usize,
    pub distance: f64,
}

impl CircledWaistReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.verdict == Verdict::Pass)
    }
}

/// Compares `γ_n(Z + rK)` for `K = { |Wz| <= 1 }` with `γ_n(H_1 + rK)`, where
/// `H_1` is the hyperplane through the touching direction of `K`, translated
/// to distance `d` from the origin. Both sides are estimated by Monte Carlo.
pub fn circled_waist_check(
    map: &PolynomialMap,
    weights: &[f64],
    d: f64,
    r_grid: &[f64],
    n_samples: usize,
    seed: u64,
    budget: &HitBudget,
) -> Result<CircledWaistReport> {
    let spec = CircledNormSpec::new(weights.to_vec())?;
    let n = map.ambient_dim();
    if spec.dim() != n {
        return Err(Error::validation("weights", format!("expected {n} weights, got {}", spec.dim())));
    }
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::validation("distance", format!("must be finite and >= 0, got {d}")));
    }
    let geometry = circled_norm_geometry(&spec);
    let norm = NormTag::Circled(weights.to_vec());
    let fiber = tube_profile_in(map, r_grid, &norm, n_samples, seed, domain::TUBE_SAMPLES, budget)?;
    let hyperplane = catalog::coordinate(n, geometry.axis, Complex64::new(d, 0.0));
    let base = tube_profile_in(&hyperplane, r_grid, &norm, n_samples, seed, domain::BASELINE_SAMPLES, budget)?;
    let mut rows = Vec::with_capacity(r_grid.len());
    for (f, b) in fiber.estimates.iter().zip(&base.estimates) {
        let stderr = f.stderr.hypot(b.stderr);
        let margin = f.p_hat - b.p_hat;
        rows.push(CircledWaistRow {
            r: f.r,
            p_hat: f.p_hat,
            p_stderr: f.stderr,
            baseline_hat: b.p_hat,
            baseline_stderr: b.stderr,
            baseline: circled_hyperplane_tube_measure(&spec, d, f.r)?,
            margin,
            stderr,
            verdict: Verdict::from_margin(margin, stderr),
        });
    }
    Ok(CircledWaistReport {
        experiment: "circled_waist".into(),
        seed,
        weights: weights.to_vec(),
        inradius: geometry.inradius,
        rows,
        optimizer_failures: fiber.optimizer_failures + base.optimizer_failures,
        distance: d,
    })
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / m;
        if xs.len() < 2 {
            return Self { mean, stderr: f64::NAN };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Self { mean, stderr: (var / m).sqrt() }
    }

    /// `(mean - reference) / stderr`, zero when both the difference and the error vanish.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.mean - reference;
        if diff == 0.0 {
            0.0
        } else {
            diff / self.stderr
        }
    }

    pub fn within(&self, reference: f64, sigmas: f64) -> bool {
        (self.mean - reference).abs() <= sigmas * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureRow {
    pub functional: TestFunctional,
    pub mixture_mean: f64,
    pub reference: f64,
    pub stderr: f64,
    pub z_score: f64,
}

/// `E ∫ φ dμ_T` over the paths of an ensemble against `∫ φ dγ_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureReport {
    pub rows: Vec<MixtureRow>,
    pub n_paths: usize,
    pub aborted: usize,
    pub horizon: f64,
    pub step: f64,
    pub rank_tol: f64,
    /// False when more than 1% of paths aborted.
    pub valid: bool,
}

impl MixtureReport {
    pub fn passed(&self) -> bool {
        self.valid && self.rows.iter().all(|r| r.z_score.abs() <= SIGMA_THRESHOLD)
    }
}

fn require_origin(map: &PolynomialMap) -> Result<()> {
    if map.base_point().iter().any(|z| z.norm() != 0.0) {
        return Err(Error::validation("map.base_point", "the process must start at the origin"));
    }
    Ok(())
}

pub fn mixture_report(ensemble: &Ensemble, functionals: &[TestFunctional], rank_tol: f64) -> Result<MixtureReport> {
    let n = match ensemble.paths.first() {
        Some((_, s, _)) => s.dim(),
        None => return Err(Error::State("no completed paths".into())),
    };
    if ensemble.paths.len() < 2 {
        return Err(Error::State("at least two completed paths are required".into()));
    }
    let terminals = ensemble
        .paths
        .iter()
        .map(|(_, s, _)| terminal_gaussian(s, rank_tol))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(functionals.len());
    for phi in functionals {
        let values = terminals.iter().map(|g| gaussian_expectation(g, phi)).collect::<Result<Vec<_>>>()?;
        let est = MeanEstimate::from_samples(&values);
        let reference = phi.standard_mean(n)?;
        rows.push(MixtureRow {
            functional: phi.clone(),
            mixture_mean: est.mean,
            reference,
            stderr: est.stderr,
            z_score: est.z_score(reference),
        });
    }
    Ok(MixtureReport {
        rows,
        n_paths: ensemble.n_paths(),
        aborted: ensemble.aborted.len(),
        horizon: ensemble.horizon,
        step: ensemble.step,
        rank_tol,
        valid: ensemble.abort_fraction() <= MAX_ABORT_FRACTION,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn mixture_check(
    map: &PolynomialMap,
    horizon: f64,
    h: f64,
    n_paths: usize,
    functionals: &[TestFunctional],
    seed: u64,
    rank_tol: f64,
    opts: &PathOptions,
) -> Result<MixtureReport> {
    require_origin(map)?;
    if n_paths < 2 {
        return Err(Error::validation("n_paths", "at least two paths are required"));
    }
    mixture_report(&run_ensemble(map, horizon, h, n_paths, seed, opts), functionals, rank_tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    #[serde(with = "crate::gaussian::complex_list")]
    pub z: ComplexVec,
    pub mean: f64,
    /// `e^{-|z|^2/2}`.
    pub reference: f64,
    pub stderr: f64,
    pub z_score: f64,
}

/// Sample means of `e^{-p_T(z)}` at fixed points; the process makes this a
/// martingale for every `z`, so the mean is `e^{-p_0(z)} = e^{-|z|^2/2}`.
pub fn density_martingale_report(ensemble: &Ensemble, points: &[ComplexVec]) -> Result<Vec<DensityRow>> {
    let potentials =
        ensemble.paths.iter().map(|(_, s, _)| s.potential()).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(points.len());
    for z in points {
        let values = potentials.iter().map(|p| p.weight(z)).collect::<Result<Vec<_>>>()?;
        let est = MeanEstimate::from_samples(&values);
        let reference = (-z.norm_squared() / 2.0).exp();
        rows.push(DensityRow { z: z.clone(), mean: est.mean, reference, stderr: est.stderr, z_score: est.z_score(reference) });
    }
    Ok(rows)
}

/// Moments of one coordinate `ζ = q* a_T` along a unit tangent vector `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangentMoments {
    pub mean_re: MeanEstimate,
    pub mean_im: MeanEstimate,
    /// `E|ζ|^2`; 2 for the standard complex Gaussian.
    pub second: MeanEstimate,
    /// `E ζ^2`; 0 for the standard complex Gaussian.
    pub pseudo_re: MeanEstimate,
    pub pseudo_im: MeanEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterLawReport {
    #[serde(skip)]
    pub samples: Vec<ComplexVec>,
    pub n_paths: usize,
    pub aborted: usize,
    pub max_residual: f64,
    /// `E |a_T|^2`, at most `2n`.
    pub norm_sqr: MeanEstimate,
    /// Per tangent direction when the fiber is affine (the tangent space is then constant).
    pub tangent: Option<Vec<TangentMoments>>,
}

pub fn center_law_report(map: &PolynomialMap, ensemble: &Ensemble) -> Result<CenterLawReport> {
    let samples: Vec<ComplexVec> = ensemble.paths.iter().map(|(_, s, _)| s.center.clone()).collect();
    let mut max_residual = 0.0f64;
    for a in &samples {
        max_residual = max_residual.max(map.residual(a)?);
    }
    let norms: Vec<f64> = samples.iter().map(|a| a.norm_squared()).collect();
    let tangent = if map.is_affine() {
        let normal = map.gradient_subspace(map.base_point())?;
        let basis: SubspaceBasis = normal.complement();
        let moments = basis
            .columns()
            .column_iter()
            .map(|q| {
                let zeta: Vec<Complex64> = samples.iter().map(|a| q.dotc(a)).collect();
                let part = |f: &dyn Fn(&Complex64) -> f64| MeanEstimate::from_samples(&zeta.iter().map(f).collect::<Vec<_>>());
                TangentMoments {
                    mean_re: part(&|z| z.re),
                    mean_im: part(&|z| z.im),
                    second: part(&|z| z.norm_sqr()),
                    pseudo_re: part(&|z| (z * z).re),
                    pseudo_im: part(&|z| (z * z).im),
                }
            })
            .collect();
        Some(moments)
    } else {
        None
    };
    Ok(CenterLawReport {
        n_paths: ensemble.n_paths(),
        aborted: ensemble.aborted.len(),
        max_residual,
        norm_sqr: MeanEstimate::from_samples(&norms),
        tangent,
        samples,
    })
}

pub fn center_law_sample(
    map: &PolynomialMap,
    horizon: f64,
    h: f64,
    n_paths: usize,
    seed: u64,
    opts: &PathOptions,
) -> Result<CenterLawReport> {
    require_origin(map)?;
    if n_paths < 2 {
        return Err(Error::validation("n_paths", "at least two paths are required"));
    }
    center_law_report(map, &run_ensemble(map, horizon, h, n_paths, seed, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{disc_measure, DiscSpec};
    use crate::linalg::cvec;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn confidence_interval_examples() {
        let ci = confidence_interval(0, 100).unwrap();
        assert_eq!((ci.p_hat, ci.wilson_low), (0.0, 0.0));
        let ci = confidence_interval(50, 100).unwrap();
        assert_eq!(ci.p_hat, 0.5);
        assert!((ci.stderr - 0.05).abs() < 1e-15);
        assert!(matches!(confidence_interval(101, 100), Err(Error::Validation { .. })));
        assert!(confidence_interval(0, 0).is_err());
    }

    #[test]
    fn wilson_contains_estimate() {
        let mut s = Stream::new(StreamId::new(1, 0, 0));
        for _ in 0..1000 {
            let n = 1 + (s.uniform() * 10_000.0) as usize;
            let hits = ((n + 1) as f64 * s.uniform()) as usize;
            let ci = confidence_interval(hits.min(n), n).unwrap();
            assert!(ci.wilson_low <= ci.p_hat && ci.p_hat <= ci.wilson_high);
        }
    }

    #[test]
    fn affine_tube_matches_closed_form() {
        let f = catalog::coordinate(2, 0, c(0.5));
        let profile =
            estimate_tube_profile(&f, &[0.5, 1.0], &NormTag::Euclidean, 20_000, 4, &HitBudget::default()).unwrap();
        for est in &profile.estimates {
            let exact = disc_measure(&DiscSpec::new(1, 0.5, est.r).unwrap());
            assert!((est.p_hat - exact).abs() <= 3.0 * est.stderr, "{est:?} vs {exact}");
        }
        assert_eq!(profile.optimizer_failures, 0);
    }

    #[test]
    fn zero_radius_has_no_hits() {
        let f = catalog::hyperbola();
        let est = estimate_tube_measure(&f, 0.0, &NormTag::Euclidean, 2000, 1).unwrap();
        assert_eq!(est.n_hits, 0);
        assert!(estimate_tube_measure(&f, 1.0, &NormTag::Euclidean, 0, 1).is_err());
    }

    #[test]
    fn hits_are_nested_in_radius() {
        let f = catalog::hyperbola();
        let grid = [0.25, 0.5, 1.0, 2.0];
        let p = estimate_tube_profile(&f, &grid, &NormTag::Euclidean, 5000, 2, &HitBudget::default()).unwrap();
        assert!(p.estimates.windows(2).all(|w| w[0].n_hits <= w[1].n_hits));
        assert!(estimate_tube_profile(&f, &[1.0, 0.5], &NormTag::Euclidean, 10, 2, &HitBudget::default()).is_err());
    }

    #[test]
    fn hits_do_not_decrease_with_budget() {
        let f = catalog::hyperbola();
        let grid = [0.5, 1.0];
        let mut last = vec![0; 2];
        for (perturbations, max_iter) in [(0, 5), (2, 20), (8, 60)] {
            let budget = HitBudget { perturbations, descent: DescentOptions { max_iter, ..Default::default() } };
            let p = estimate_tube_profile(&f, &grid, &NormTag::Euclidean, 3000, 6, &budget).unwrap();
            let hits: Vec<usize> = p.estimates.iter().map(|e| e.n_hits).collect();
            assert!(hits.iter().zip(&last).all(|(a, b)| a >= b), "{hits:?} < {last:?}");
            last = hits;
        }
    }

    #[test]
    fn tube_estimate_is_deterministic() {
        let f = catalog::parabola();
        let a = estimate_tube_profile(&f, &[0.5, 1.0], &NormTag::Euclidean, 500, 42, &HitBudget::default()).unwrap();
        let b = estimate_tube_profile(&f, &[0.5, 1.0], &NormTag::Euclidean, 500, 42, &HitBudget::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn circled_hyperplane_estimate_matches_closed_form() {
        let w = vec![1.0, 2.0];
        let f = catalog::coordinate(2, 1, c(2f64.sqrt()));
        let spec = CircledNormSpec::new(w.clone()).unwrap();
        let p = estimate_tube_profile(&f, &[0.5, 1.0], &NormTag::Circled(w), 20_000, 3, &HitBudget::default()).unwrap();
        for est in &p.estimates {
            let exact = circled_hyperplane_tube_measure(&spec, 2f64.sqrt(), est.r).unwrap();
            assert!((est.p_hat - exact).abs() <= 3.0 * est.stderr, "{est:?} vs {exact}");
        }
    }

    #[test]
    fn affine_waist_margin_brackets_zero() {
        let f = catalog::coordinate(2, 0, c(1.0));
        let report = waist_check(&f, &[0.5, 1.0, 2.0], 20_000, 8, None, &HitBudget::default()).unwrap();
        assert!((report.distance - 1.0).abs() < 1e-12);
        for row in &report.rows {
            assert!(row.margin.abs() <= 3.0 * row.stderr, "{row:?}");
        }
        assert!(report.passed());
    }

    #[test]
    fn mixture_requires_origin_start() {
        let f = catalog::hyperbola();
        let err = mixture_check(&f, 1.0, 1e-2, 4, &[TestFunctional::One], 0, 1e-2, &PathOptions::default());
        assert!(matches!(err, Err(Error::Validation { .. })));
    }

    #[test]
    fn mixture_constant_functional_is_exact() {
        let f = catalog::parabola();
        let report =
            mixture_check(&f, 1.0, 1e-2, 8, &[TestFunctional::One, TestFunctional::SquaredNorm], 3, 1e-2, &PathOptions::default())
                .unwrap();
        assert_eq!(report.rows[0].mixture_mean, 1.0);
        assert_eq!(report.rows[0].z_score, 0.0);
        assert!(report.valid);
        assert_eq!(report.rows[1].reference, 4.0);
    }

    #[test]
    fn affine_mixture_half_space() {
        let f = catalog::coordinate(2, 0, c(0.0));
        let phi = [TestFunctional::coordinate_half_space(2, 1), TestFunctional::SquaredNorm];
        let report = mixture_check(&f, 4.0, 1e-2, 200, &phi, 5, 1e-2, &PathOptions::default()).unwrap();
        for row in &report.rows {
            assert!(row.z_score.abs() <= 3.0, "{row:?}");
        }
    }

    #[test]
    fn density_martingale_on_affine_fiber() {
        let f = catalog::coordinate(2, 0, c(0.0));
        let e = run_ensemble(&f, 2.0, 1e-2, 400, 6, &PathOptions::default());
        let points = [cvec(&[(0.0, 0.0), (0.0, 0.0)]), cvec(&[(0.5, 0.0), (0.0, 0.5)])];
        for row in density_martingale_report(&e, &points).unwrap() {
            assert!(row.z_score.abs() <= 3.0, "{row:?}");
        }
    }

    #[test]
    fn center_law_on_linear_fiber() {
        let f = catalog::coordinate(2, 0, c(0.0));
        let report = center_law_sample(&f, 4.0, 1e-2, 300, 2, &PathOptions::default()).unwrap();
        assert!(report.samples.iter().all(|a| a[0] == c(0.0)));
        assert!(report.max_residual == 0.0);
        let t = report.tangent.as_ref().unwrap();
        assert_eq!(t.len(), 1);
        // After time 4 the second coordinate has variance 2(1 - e^{-2}).
        let expected = 2.0 * (1.0 - (-2.0f64).exp());
        assert!(t[0].second.within(expected, 3.0), "{:?}", t[0].second);
        assert!(report.norm_sqr.mean <= 4.0 + 3.0 * report.norm_sqr.stderr);
        let curved = center_law_sample(&catalog::parabola(), 1.0, 1e-2, 10, 2, &PathOptions::default()).unwrap();
        assert!(curved.tangent.is_none());
        assert!(curved.max_residual <= 1e-10);
    }
}
