//! The localization process confined to a fiber.
//!
//! A path carries a quadratic potential `p_t(z) = (z - a_t)* B_t (z - a_t)/2 - log det B_t`
//! driven by
//!
//! ```text
//! d a_t = Σ_t dW_t,        d B_t = B_t Σ_t Σ_t* B_t dt,
//! Σ_t   = B_t^{-1/2} π_t / sqrt(n),
//! ```
//!
//! where `π_t` is the orthogonal projection whose kernel is `B_t^{-1/2} H(a_t)`
//! and `H(a)` is spanned by the conjugated gradients of `f` at `a`. Because
//! `grad f_j(a) Σ = 0` and `f` is holomorphic, `f(a_t)` is conserved, so the
//! center never leaves the fiber. The Euler-Maruyama discretization leaks off
//! the fiber at second order per step and is re-projected with Gauss-Newton
//! after every step.
//!
//! With `B^{1/2} Σ = π / sqrt(n)` the drift `BΣΣ*B` simplifies to the PSD matrix
//! `B^{1/2} π B^{1/2} / n`, which keeps `B` monotone in floating point.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eig, hs_norm, log_det, pd_roots, proj_with_kernel, ComplexMatrix, ComplexVec,
    HermitianMatrix, PdRoots, SubspaceBasis,
};
use crate::rng::{Stream, StreamId};
use crate::variety::{PolynomialMap, DEFAULT_PROJECTION_ITERS, FIBER_TOL};

pub const DEFAULT_STEP: f64 = 1e-3;
/// Covariance eigenvalues below this are truncated when extracting `μ_T`.
pub const DEFAULT_RANK_TOL: f64 = 1e-2;

/// Horizon `10 n (k + 1)`: the unwanted covariance eigenvalues of `μ_T` are then at most `1/5`.
pub fn default_horizon(n: usize, k: usize) -> f64 {
    10.0 * (n * (k + 1)) as f64
}

/// `p(z) = (z - a)* B (z - a)/2 - log det B` with `B` positive definite.
///
/// With this normalization `∫ e^{-p} dλ = (2π)^n` for every `(a, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPotential {
    center: ComplexVec,
    precision: HermitianMatrix,
    log_det: f64,
}

impl QuadraticPotential {
    pub fn new(center: ComplexVec, precision: HermitianMatrix) -> Result<Self> {
        if center.len() != precision.dim() {
            return Err(Error::validation(
                "center",
                format!("center has dimension {} but B is {}x{}", center.len(), precision.dim(), precision.dim()),
            ));
        }
        let lo = hermitian_eig(&precision).min();
        if !(lo >= 1e-12) {
            return Err(Error::Domain(format!("B must be positive definite (smallest eigenvalue {lo:.3e})")));
        }
        let log_det = log_det(&precision)?;
        Ok(Self { center, precision, log_det })
    }

    pub fn center(&self) -> &ComplexVec {
        &self.center
    }

    pub fn precision(&self) -> &HermitianMatrix {
        &self.precision
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn eval(&self, z: &ComplexVec) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::validation("z", format!("expected dimension {}, got {}", self.dim(), z.len())));
        }
        let d = z - &self.center;
        Ok(0.5 * self.precision.quadratic_form(&d) - self.log_det)
    }

    /// `e^{-p(z)}`; divided by `(2π)^n` this is the density of `μ`.
    pub fn weight(&self, z: &ComplexVec) -> Result<f64> {
        Ok((-self.eval(z)?).exp())
    }
}

/// `p_0(z) = |z|^2 / 2`.
pub fn standard_potential(n: usize) -> Result<QuadraticPotential> {
    if n == 0 {
        return Err(Error::validation("n", "dimension must be at least 1"));
    }
    QuadraticPotential::new(ComplexVec::zeros(n), HermitianMatrix::identity(n))
}

pub fn potential_eval(p: &QuadraticPotential, z: &ComplexVec) -> Result<f64> {
    p.eval(z)
}

/// One path of the process at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationState {
    pub t: f64,
    pub steps: usize,
    /// `a_t`.
    pub center: ComplexVec,
    /// `B_t`.
    pub precision: HermitianMatrix,
    /// `∫_0^t Σ_s Σ_s* ds`, which equals `Id - B_t^{-1}` for the exact process.
    pub sigma_accum: HermitianMatrix,
    /// `|f(a_t)|` after re-projection.
    pub residual: f64,
    /// `|f(a + ΣΔW)|` before re-projection in the most recent step.
    pub last_pre_residual: f64,
    pub fiber_residual_max: f64,
    pub codim: usize,
    pub stream: StreamId,
}

impl LocalizationState {
    /// `a_0 = ` base point of `f`, `B_0 = Id`.
    pub fn initial(map: &PolynomialMap, stream: StreamId) -> Self {
        let n = map.ambient_dim();
        let residual = map.residual(map.base_point()).unwrap_or(f64::NAN);
        Self {
            t: 0.0,
            steps: 0,
            center: map.base_point().clone(),
            precision: HermitianMatrix::identity(n),
            sigma_accum: HermitianMatrix::symmetrized(DMatrix::zeros(n, n)),
            residual,
            last_pre_residual: residual,
            fiber_residual_max: residual,
            codim: map.codim(),
            stream,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn potential(&self) -> Result<QuadraticPotential> {
        QuadraticPotential::new(self.center.clone(), self.precision.clone())
    }
}

/// Everything one Euler step needs from the current state.
struct Diffusion {
    roots: PdRoots,
    /// Projection with kernel `B^{-1/2} H(a)`.
    pi: HermitianMatrix,
    sigma: ComplexMatrix,
}

fn diffusion(state: &LocalizationState, map: &PolynomialMap, fiber_tol: f64) -> Result<Diffusion> {
    let n = map.ambient_dim();
    if state.dim() != n || state.precision.dim() != n {
        return Err(Error::State(format!("state has dimension {}, map has {n}", state.dim())));
    }
    let residual = map.residual(&state.center)?;
    if !(residual <= fiber_tol) {
        return Err(Error::State(format!("center is off the fiber: |f(a)| = {residual:.3e}")));
    }
    let roots = pd_roots(&state.precision).map_err(|e| Error::State(e.to_string()))?;
    let h = map.gradient_subspace(&state.center)?;
    let rotated = SubspaceBasis::orthonormalize(&(roots.inv_sqrt.as_matrix() * h.columns()), 1e-14)?;
    let pi = proj_with_kernel(&rotated);
    let sigma = roots.inv_sqrt.as_matrix() * pi.as_matrix() * Complex64::new(1.0 / (n as f64).sqrt(), 0.0);
    Ok(Diffusion { roots, pi, sigma })
}

/// `Σ(p) = B^{-1/2} π / sqrt(n)` for the state's potential.
pub fn sigma_of_state(state: &LocalizationState, map: &PolynomialMap) -> Result<ComplexMatrix> {
    Ok(diffusion(state, map, FIBER_TOL)?.sigma)
}

/// A complex Brownian increment over time `h`: coordinates `g1 + i g2` with
/// `g1, g2 ~ N(0, h)` independent, so `E|ΔW_j|^2 = 2h`.
pub fn brownian_increment(stream: &mut Stream, h: f64, n: usize) -> Result<ComplexVec> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::validation("h", format!("time step must be finite and non-negative, got {h}")));
    }
    Ok(ComplexVec::from_fn(n, |_, _| stream.complex_normal(h)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub fiber_tol: f64,
    pub projection_max_iter: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { fiber_tol: FIBER_TOL, projection_max_iter: DEFAULT_PROJECTION_ITERS }
    }
}

/// One Euler-Maruyama step followed by re-projection onto the fiber.
pub fn step(
    state: &LocalizationState,
    map: &PolynomialMap,
    h: f64,
    dw: &ComplexVec,
    opts: &StepOptions,
) -> Result<LocalizationState> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::validation("h", format!("time step must be positive, got {h}")));
    }
    let n = map.ambient_dim();
    if dw.len() != n {
        return Err(Error::validation("dw", format!("increment has dimension {}, expected {n}", dw.len())));
    }
    let d = diffusion(state, map, opts.fiber_tol)?;
    let moved = &state.center + &d.sigma * dw;
    let pre = map.residual(&moved)?;
    let projected = map.project_to_fiber(&moved, opts.fiber_tol, opts.projection_max_iter)?;

    let rate = Complex64::new(h / n as f64, 0.0);
    let sqrt = d.roots.sqrt.as_matrix();
    let inv_sqrt = d.roots.inv_sqrt.as_matrix();
    let pi = d.pi.as_matrix();
    let precision = HermitianMatrix::symmetrized(state.precision.as_matrix() + sqrt * pi * sqrt * rate);
    let sigma_accum = HermitianMatrix::symmetrized(state.sigma_accum.as_matrix() + inv_sqrt * pi * inv_sqrt * rate);

    let steps = state.steps + 1;
    Ok(LocalizationState {
        t: steps as f64 * h,
        steps,
        center: projected.point,
        precision,
        sigma_accum,
        residual: projected.residual,
        last_pre_residual: pre,
        fiber_residual_max: state.fiber_residual_max.max(pre),
        codim: state.codim,
        stream: state.stream,
    })
}

/// One recorded sample of a path.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    /// `|f(a_t)|` before re-projection.
    pub fiber_residual: f64,
    /// `|f(a_t)|` after re-projection.
    pub post_residual: f64,
    pub lambda_min_b: f64,
    /// `λ_{k+1}(B_t)` in ascending order.
    pub lambda_k1_b: f64,
    pub trace_b: f64,
    /// `|∫ΣΣ* - (Id - B_t^{-1})|_HS`.
    pub accum_gap: f64,
}

impl DiagnosticRow {
    pub fn from_state(state: &LocalizationState) -> Result<Self> {
        let n = state.dim();
        let eig = hermitian_eig(&state.precision);
        let inverse = eig.map_spectrum(|l| 1.0 / l);
        let target = DMatrix::<Complex64>::identity(n, n) - inverse.as_matrix();
        let k1 = state.codim.min(n - 1);
        Ok(Self {
            t: state.t,
            fiber_residual: state.last_pre_residual,
            post_residual: state.residual,
            lambda_min_b: eig.min(),
            lambda_k1_b: eig.values[k1],
            trace_b: state.precision.trace(),
            accum_gap: hs_norm(&(state.sigma_accum.as_matrix() - target)),
        })
    }

    pub const CSV_HEADER: &'static str = "t,fiber_residual,lambda_min_B,lambda_k1_B,trace_B,accum_gap";

    /// One CSV line, 17 significant digits per field.
    pub fn to_csv(&self) -> String {
        [self.t, self.fiber_residual, self.lambda_min_b, self.lambda_k1_b, self.trace_b, self.accum_gap]
            .iter()
            .map(|x| format!("{x:.16e}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Extremes of the path invariants over all recorded times.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct InvariantSummary {
    pub rows: usize,
    pub max_post_residual: f64,
    pub max_pre_residual: f64,
    pub min_lambda_min: f64,
    /// `max_t Tr B_t / (n e^t)`.
    pub max_trace_ratio: f64,
    /// `min_{t>0} λ_{k+1}(B_t) / (t / (n (k+1)))`.
    pub min_growth_ratio: f64,
    pub max_accum_gap: f64,
}

impl Default for InvariantSummary {
    fn default() -> Self {
        Self {
            rows: 0,
            max_post_residual: 0.0,
            max_pre_residual: 0.0,
            min_lambda_min: f64::INFINITY,
            max_trace_ratio: 0.0,
            min_growth_ratio: f64::INFINITY,
            max_accum_gap: 0.0,
        }
    }
}

impl InvariantSummary {
    pub fn record(&mut self, row: &DiagnosticRow, n: usize, k: usize) {
        self.rows += 1;
        self.max_post_residual = self.max_post_residual.max(row.post_residual);
        self.max_pre_residual = self.max_pre_residual.max(row.fiber_residual);
        self.min_lambda_min = self.min_lambda_min.min(row.lambda_min_b);
        self.max_trace_ratio = self.max_trace_ratio.max(row.trace_b / (n as f64 * row.t.exp()));
        if row.t > 0.0 && k < n {
            let bound = row.t / (n * (k + 1)) as f64;
            self.min_growth_ratio = self.min_growth_ratio.min(row.lambda_k1_b / bound);
        }
        self.max_accum_gap = self.max_accum_gap.max(row.accum_gap);
    }

    pub fn merge(&mut self, other: &InvariantSummary) {
        self.rows += other.rows;
        self.max_post_residual = self.max_post_residual.max(other.max_post_residual);
        self.max_pre_residual = self.max_pre_residual.max(other.max_pre_residual);
        self.min_lambda_min = self.min_lambda_min.min(other.min_lambda_min);
        self.max_trace_ratio = self.max_trace_ratio.max(other.max_trace_ratio);
        self.min_growth_ratio = self.min_growth_ratio.min(other.min_growth_ratio);
        self.max_accum_gap = self.max_accum_gap.max(other.max_accum_gap);
    }

    /// Fiber confinement, `B ⪰ Id`, the trace bound and eigenvalue growth at
    /// the given tolerances. Returns the list of violated invariants.
    pub fn violations(&self, tol: &InvariantTolerances) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.max_post_residual <= tol.fiber_residual) {
            out.push(format!("fiber residual {:.3e} > {:.1e}", self.max_post_residual, tol.fiber_residual));
        }
        if !(self.min_lambda_min >= 1.0 - tol.lambda_min_slack) {
            out.push(format!("λ_min(B) = {:.12} < 1 - {:.1e}", self.min_lambda_min, tol.lambda_min_slack));
        }
        if !(self.max_trace_ratio <= 1.0 + tol.trace_slack) {
            out.push(format!("Tr B / (n e^t) = {:.9} > 1 + {:.1e}", self.max_trace_ratio, tol.trace_slack));
        }
        if !(self.min_growth_ratio >= tol.growth_factor) {
            out.push(format!("λ_(k+1)(B) growth ratio {:.4} < {}", self.min_growth_ratio, tol.growth_factor));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantTolerances {
    pub fiber_residual: f64,
    pub lambda_min_slack: f64,
    pub trace_slack: f64,
    pub growth_factor: f64,
}

impl Default for InvariantTolerances {
    fn default() -> Self {
        Self { fiber_residual: 1e-10, lambda_min_slack: 1e-8, trace_slack: 1e-6, growth_factor: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    pub step: StepOptions,
    /// Record a diagnostic row every this many steps (plus the first and last).
    pub record_every: usize,
    /// Keep the rows; otherwise only the [`InvariantSummary`] is maintained.
    pub keep_rows: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { step: StepOptions::default(), record_every: 1, keep_rows: true }
    }
}

#[derive(Debug, Clone)]
pub struct PathResult {
    pub state: LocalizationState,
    pub rows: Vec<DiagnosticRow>,
    pub summary: InvariantSummary,
}

/// A path that hit a singular point or failed to re-project.
#[derive(Debug, Clone, Error)]
#[error("path {} aborted at t = {t}: {source}", stream.index)]
pub struct PathAbort {
    pub t: f64,
    pub stream: StreamId,
    pub source: Error,
    pub rows: Vec<DiagnosticRow>,
    pub summary: InvariantSummary,
}

/// Simulates one path on `[0, T]` with Brownian increments from `stream`.
/// Deterministic in `(map, T, h, stream, opts)`.
pub fn run_path(
    map: &PolynomialMap,
    horizon: f64,
    h: f64,
    stream: StreamId,
    opts: &PathOptions,
) -> Result<PathResult, PathAbort> {
    let mut rng = Stream::new(stream);
    let n = map.ambient_dim();
    run_path_with(map, horizon, h, stream, opts, |_, h| {
        brownian_increment(&mut rng, h, n).expect("step size validated")
    })
}

/// As [`run_path`] but with caller-supplied increments `increment(step_index, h)`.
pub fn run_path_with(
    map: &PolynomialMap,
    horizon: f64,
    h: f64,
    stream: StreamId,
    opts: &PathOptions,
    mut increment: impl FnMut(usize, f64) -> ComplexVec,
) -> Result<PathResult, PathAbort> {
    let abort = |t: f64, source: Error, rows: Vec<DiagnosticRow>, summary: InvariantSummary| PathAbort {
        t,
        stream,
        source,
        rows,
        summary,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(abort(0.0, Error::validation("h", "step must be positive"), vec![], InvariantSummary::default()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(abort(0.0, Error::validation("T", "horizon must be positive"), vec![], InvariantSummary::default()));
    }
    let n = map.ambient_dim();
    let k = map.codim();
    let total = (horizon / h).round().max(1.0) as usize;
    let every = opts.record_every.max(1);
    let mut rows = Vec::new();
    let mut summary = InvariantSummary::default();
    let mut state = LocalizationState::initial(map, stream);

    let record = |state: &LocalizationState, rows: &mut Vec<DiagnosticRow>, summary: &mut InvariantSummary| {
        if let Ok(row) = DiagnosticRow::from_state(state) {
            summary.record(&row, n, k);
            if opts.keep_rows {
                rows.push(row);
            }
        }
    };
    record(&state, &mut rows, &mut summary);
    for i in 0..total {
        let dw = increment(i, h);
        state = match step(&state, map, h, &dw, &opts.step) {
            Ok(s) => s,
            Err(e) => return Err(abort(state.t, e, rows, summary)),
        };
        if state.steps % every == 0 || state.steps == total {
            record(&state, &mut rows, &mut summary);
        }
    }
    Ok(PathResult { state, rows, summary })
}

/// Center and complex covariance `A = E[(z-a)(z-a)*]` of a circular complex Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGaussian {
    pub center: ComplexVec,
    pub covariance: HermitianMatrix,
    pub support_dim: usize,
}

impl ComplexGaussian {
    /// Validates the covariance as PSD; `support_dim` counts eigenvalues above `rank_tol`.
    pub fn new(center: ComplexVec, covariance: HermitianMatrix, rank_tol: f64) -> Result<Self> {
        if center.len() != covariance.dim() {
            return Err(Error::validation("center", "center and covariance dimensions differ"));
        }
        let eig = hermitian_eig(&covariance);
        if eig.min() < -crate::linalg::PSD_TOL {
            return Err(Error::Domain(format!("covariance is not PSD (eigenvalue {:.3e})", eig.min())));
        }
        let support_dim = eig.values.iter().filter(|&&l| l > rank_tol).count();
        Ok(Self { center, covariance, support_dim })
    }

    /// `γ_n`: center 0, covariance `2 Id`.
    pub fn standard(n: usize) -> Self {
        Self { center: ComplexVec::zeros(n), covariance: HermitianMatrix::identity(n).scaled(2.0), support_dim: n }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

/// `μ_T`: center `a_T`, covariance `2 B_T^{-1}` with eigenvalues below
/// `rank_tol` set to zero. Checks `λ_{n-k}(2 B_T^{-1}) <= 2n(k+1)/T` and that
/// no covariance eigenvalue exceeds 2.
pub fn terminal_gaussian(state: &LocalizationState, rank_tol: f64) -> Result<ComplexGaussian> {
    let n = state.dim();
    let k = state.codim;
    let eig = hermitian_eig(&state.precision);
    if !(eig.min() > 0.0) {
        return Err(Error::State("B is not positive definite".into()));
    }
    // Covariance eigenvalues ascending are 2/λ_j(B) in reverse order.
    let cov_values: Vec<f64> = eig.values.iter().rev().map(|l| 2.0 / l).collect();
    if cov_values.last().copied().unwrap_or(0.0) > 2.0 + 1e-8 {
        return Err(Error::Invariant(format!(
            "covariance eigenvalue {:.12} exceeds 2 (B is not ⪰ Id)",
            cov_values.last().unwrap()
        )));
    }
    if state.t > 0.0 && k < n {
        let bound = 2.0 * (n * (k + 1)) as f64 / state.t;
        let lam = cov_values[n - k - 1];
        if lam > bound * (1.0 + 1e-9) {
            return Err(Error::Invariant(format!("λ_(n-k)(2B^-1) = {lam:.6e} exceeds 2n(k+1)/T = {bound:.6e}")));
        }
    }
    let covariance = eig.map_spectrum(|l| {
        let c = 2.0 / l;
        if c < rank_tol {
            0.0
        } else {
            c
        }
    });
    let support_dim = cov_values.iter().filter(|&&c| c >= rank_tol && c > 0.0).count();
    Ok(ComplexGaussian { center: state.center.clone(), covariance, support_dim })
}

/// Terminal states of many independent paths.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    /// `(path index, terminal state, invariant summary)` in index order.
    pub paths: Vec<(u64, LocalizationState, InvariantSummary)>,
    pub aborted: Vec<(u64, PathAbort)>,
}

impl Ensemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len() + self.aborted.len()
    }

    pub fn abort_fraction(&self) -> f64 {
        self.aborted.len() as f64 / self.n_paths().max(1) as f64
    }

    pub fn summary(&self) -> InvariantSummary {
        let mut s = InvariantSummary::default();
        for (_, _, p) in &self.paths {
            s.merge(p);
        }
        s
    }
}

/// Runs paths `0..n_paths` of stream family `seed` in parallel. Results are
/// collected in index order, so every aggregate is independent of scheduling.
pub fn run_ensemble(
    map: &PolynomialMap,
    horizon: f64,
    h: f64,
    n_paths: usize,
    seed: u64,
    opts: &PathOptions,
) -> Ensemble {
    let opts = PathOptions { keep_rows: false, ..*opts };
    let results: Vec<(u64, Result<PathResult, PathAbort>)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| (i, run_path(map, horizon, h, StreamId::path(seed, i), &opts)))
        .collect();
    let mut paths = Vec::new();
    let mut aborted = Vec::new();
    for (i, r) in results {
        match r {
            Ok(p) => paths.push((i, p.state, p.summary)),
            Err(e) => aborted.push((i, e)),
        }
    }
    Ensemble { horizon, step: h, seed, paths, aborted }
}
