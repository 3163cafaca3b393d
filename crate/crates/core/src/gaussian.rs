//! Closed-form Gaussian measures of discs and affine tubes, expectations
//! against complex Gaussians, the tilt inequality, and diagonal circled norms.
//!
//! Throughout, the standard Gaussian on `C^k` is the product of `2k` real unit
//! normals, so `|z|^2` is chi-square with `2k` degrees of freedom.

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, vec_norm, ComplexVec, HermitianMatrix, SubspaceBasis};
use crate::localization::ComplexGaussian;

/// Stop the Poisson mixture once the remaining mass is below this.
const SERIES_TAIL_TOL: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 100_000;
/// Slack in the tilt verdict.
pub const TILT_TOL: f64 = 1e-6;

/// The disc `{ z in C^k : |z - v| <= R }` with `|v| = center_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscSpec {
    pub k: usize,
    pub center_norm: f64,
    pub radius: f64,
}

impl DiscSpec {
    pub fn new(k: usize, center_norm: f64, radius: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::validation("k", "dimension must be at least 1"));
        }
        if !(center_norm >= 0.0) || !center_norm.is_finite() {
            return Err(Error::validation("center_norm", format!("must be finite and >= 0, got {center_norm}")));
        }
        if !(radius >= 0.0) || radius.is_nan() {
            return Err(Error::validation("radius", format!("must be >= 0, got {radius}")));
        }
        Ok(Self { k, center_norm, radius })
    }
}

/// `P(Poisson(y) >= m)`, i.e. the chi-square CDF with `2m` degrees of freedom at `2y`.
fn poisson_upper(m: usize, y: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if m == 1 {
        return -(-y).exp_m1();
    }
    // 1 - e^{-y} sum_{j<m} y^j/j!, summed in log space.
    let ly = y.ln();
    let below: f64 = (0..m).map(|j| (-y + j as f64 * ly - ln_gamma(j as f64 + 1.0)).exp()).sum();
    (1.0 - below).clamp(0.0, 1.0)
}

fn poisson_pmf(j: usize, mean: f64) -> f64 {
    if mean == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    (-mean + j as f64 * mean.ln() - ln_gamma(j as f64 + 1.0)).exp()
}

/// `γ_k` of the disc: the noncentral chi-square CDF with `2k` degrees of
/// freedom and noncentrality `ρ^2`, evaluated at `R^2`.
pub fn disc_measure(spec: &DiscSpec) -> f64 {
    let DiscSpec { k, center_norm: rho, radius } = *spec;
    if radius == 0.0 {
        return 0.0;
    }
    if radius.is_infinite() {
        return 1.0;
    }
    let y = radius * radius / 2.0;
    let mean = rho * rho / 2.0;
    let mut g = poisson_upper(k, y);
    if mean == 0.0 {
        return g;
    }
    let mut total = 0.0;
    for j in 0..SERIES_MAX_TERMS {
        let w = poisson_pmf(j, mean);
        total += w * g;
        g = (g - poisson_pmf(k + j, y)).max(0.0);
        // G is decreasing and the weights sum to one, so the remainder is at most the next G.
        if g < SERIES_TAIL_TOL {
            break;
        }
        let jf = j as f64;
        if jf + 2.0 > mean {
            let weight_tail = w * (mean / (jf + 1.0)) / (1.0 - mean / (jf + 2.0));
            if weight_tail < SERIES_TAIL_TOL {
                break;
            }
        }
    }
    total.clamp(0.0, 1.0)
}

/// `γ_n` of the `r`-tube about an `(n-k)`-dimensional affine subspace at distance `d` from 0.
pub fn affine_tube_measure(n: usize, k: usize, d: f64, r: f64) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::validation("k", format!("codimension must satisfy 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if !(d >= 0.0) || !(r >= 0.0) {
        return Err(Error::validation("d", "distance and radius must be >= 0"));
    }
    Ok(disc_measure(&DiscSpec::new(k, d, r)?))
}

/// Integrands for mixture checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctional {
    One,
    SquaredNorm,
    /// Indicator of `Re(u* z) > c`.
    HalfSpace {
        #[serde(with = "complex_list")]
        u: ComplexVec,
        c: f64,
    },
    /// `min(e^{Re(u* z)}, cap)`.
    BoundedExp {
        #[serde(with = "complex_list")]
        u: ComplexVec,
        cap: f64,
    },
}

impl TestFunctional {
    pub fn tag(&self) -> &'static str {
        match self {
            TestFunctional::One => "one",
            TestFunctional::SquaredNorm => "squared_norm",
            TestFunctional::HalfSpace { .. } => "half_space",
            TestFunctional::BoundedExp { .. } => "bounded_exp",
        }
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone()).map_err(|e| Error::validation("functional", e.to_string()))
    }

    /// `Re z_{axis} > 0` in `C^n`.
    pub fn coordinate_half_space(n: usize, axis: usize) -> Self {
        let mut u = ComplexVec::zeros(n);
        u[axis] = Complex64::new(1.0, 0.0);
        TestFunctional::HalfSpace { u, c: 0.0 }
    }

    /// Evaluates `φ(z)`.
    pub fn eval(&self, z: &ComplexVec) -> f64 {
        match self {
            TestFunctional::One => 1.0,
            TestFunctional::SquaredNorm => z.norm_squared(),
            TestFunctional::HalfSpace { u, c } => {
                if u.dotc(z).re > *c {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunctional::BoundedExp { u, cap } => u.dotc(z).re.exp().min(*cap),
        }
    }

    /// `∫ φ dγ_n`.
    pub fn standard_mean(&self, n: usize) -> Result<f64> {
        gaussian_expectation(&ComplexGaussian::standard(n), self)
    }
}

pub(crate) mod complex_list {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::ComplexVec;

    pub fn serialize<S: Serializer>(v: &ComplexVec, s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ComplexVec, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(ComplexVec::from_iterator(pairs.len(), pairs.iter().map(|p| Complex64::new(p[0], p[1]))))
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `∫ φ dμ` in closed form.
pub fn gaussian_expectation(mu: &ComplexGaussian, phi: &TestFunctional) -> Result<f64> {
    let n = mu.dim();
    // `Re(u* z)` is real Gaussian with mean `Re(u* a)` and variance `u* A u / 2`.
    let marginal = |u: &ComplexVec| -> Result<(f64, f64)> {
        if u.len() != n {
            return Err(Error::validation("functional.u", format!("expected dimension {n}, got {}", u.len())));
        }
        if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::validation("functional.u", "entries must be finite"));
        }
        let mean = u.dotc(&mu.center).re;
        let var = (mu.covariance.quadratic_form(u) / 2.0).max(0.0);
        Ok((mean, var.sqrt()))
    };
    match phi {
        TestFunctional::One => Ok(1.0),
        TestFunctional::SquaredNorm => Ok(mu.center.norm_squared() + mu.covariance.trace()),
        TestFunctional::HalfSpace { u, c } => {
            let (m, s) = marginal(u)?;
            if s == 0.0 {
                return Ok(if m > *c { 1.0 } else { 0.0 });
            }
            Ok(normal_cdf((m - c) / s))
        }
        TestFunctional::BoundedExp { u, cap } => {
            if !(*cap > 0.0) {
                return Err(Error::validation("functional.cap", "cap must be positive"));
            }
            let (m, s) = marginal(u)?;
            if s == 0.0 {
                return Ok(m.exp().min(*cap));
            }
            let lc = cap.ln();
            let below = (m + s * s / 2.0).exp() * normal_cdf((lc - m - s * s) / s);
            let above = cap * normal_cdf((m - lc) / s);
            Ok(below + above)
        }
    }
}

/// Both sides of the tilt inequality
/// `∫_{|z|<=R} e^{Re v*z} dμ >= γ_k(D(v, R)) ∫ e^{Re v*z} dμ`
/// for `μ` centered at 0 with precision `B ⪰ Id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Difference between the quadrature and a rule with half the nodes.
    pub quad_error: f64,
}

const TILT_RADIAL_NODES: usize = 48;
const TILT_ANGULAR_NODES: usize = 64;

fn trapezoid_circle(m: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let dt = std::f64::consts::TAU / m as f64;
    (0..m).map(|i| f(i as f64 * dt)).sum::<f64>() * dt
}

/// `∫_{|w| <= R} e^{Re(v̄ w)} dN(0, 2/b)` on `C` by polar quadrature; `v` is taken real.
fn tilted_disc_1d(b: f64, v: f64, radius: f64, radial: usize, angular: usize) -> f64 {
    let gl = GaussLegendre::new(radial).expect("node count >= 2");
    let norm = b / std::f64::consts::TAU;
    gl.integrate(0.0, radius, |rho| {
        let ring = trapezoid_circle(angular, |t| (v * rho * t.cos()).exp());
        norm * rho * (-b * rho * rho / 2.0).exp() * ring
    })
}

/// Same on `C^2` with `B = diag(d1, d2)` in the eigenbasis and tilt `(v1, v2)`.
/// The second coordinate is integrated in closed form over the slice disc.
fn tilted_disc_2d(d: [f64; 2], v: [f64; 2], radius: f64, radial: usize, angular: usize) -> f64 {
    let gl = GaussLegendre::new(radial).expect("node count >= 2");
    let norm = d[0] / std::f64::consts::TAU;
    let inner_total = (v[1] * v[1] / (2.0 * d[1])).exp();
    let inner_shift = v[1] / d[1].sqrt();
    // rho = R sin(phi) keeps the slice radius R cos(phi) smooth.
    gl.integrate(0.0, std::f64::consts::FRAC_PI_2, |phi| {
        let rho = radius * phi.sin();
        let jac = radius * phi.cos();
        let slice = radius * phi.cos();
        let ring = trapezoid_circle(angular, |t| (v[0] * rho * t.cos()).exp());
        let inner = inner_total * disc_measure(&DiscSpec { k: 1, center_norm: inner_shift, radius: slice * d[1].sqrt() });
        norm * rho * jac * (-d[0] * rho * rho / 2.0).exp() * ring * inner
    })
}

pub fn tilt_inequality_check(precision: &HermitianMatrix, v: &ComplexVec, radius: f64) -> Result<TiltCheck> {
    let k = precision.dim();
    if k == 0 {
        return Err(Error::validation("B", "dimension must be at least 1"));
    }
    if k > 2 {
        return Err(Error::Unsupported(format!("tilt quadrature is implemented for k <= 2, got k = {k}")));
    }
    if v.len() != k {
        return Err(Error::validation("v", format!("expected dimension {k}, got {}", v.len())));
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::validation("R", format!("radius must be finite and >= 0, got {radius}")));
    }
    let eig = hermitian_eig(precision);
    if eig.min() < 1.0 - 1e-12 {
        return Err(Error::Domain(format!("B must dominate the identity (smallest eigenvalue {:.6})", eig.min())));
    }
    // Rotate into the eigenbasis; only the moduli of the tilt coordinates matter.
    let rotated = eig.vectors.adjoint() * v;
    let total = eig.values.iter().zip(rotated.iter()).map(|(d, w)| w.norm_sqr() / (2.0 * d)).sum::<f64>().exp();
    let lhs_with = |radial: usize, angular: usize| match k {
        1 => tilted_disc_1d(eig.values[0], rotated[0].norm(), radius, radial, angular),
        _ => tilted_disc_2d(
            [eig.values[0], eig.values[1]],
            [rotated[0].norm(), rotated[1].norm()],
            radius,
            radial,
            angular,
        ),
    };
    let lhs = lhs_with(TILT_RADIAL_NODES, TILT_ANGULAR_NODES);
    let coarse = lhs_with(TILT_RADIAL_NODES / 2, TILT_ANGULAR_NODES / 2);
    let rhs = disc_measure(&DiscSpec::new(k, vec_norm(v), radius)?) * total;
    Ok(TiltCheck { lhs, rhs, holds: lhs >= rhs - TILT_TOL, quad_error: (lhs - coarse).abs() })
}

/// The norm `|W z|` with `W = diag(weights)`; its unit ball is circled and convex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircledNormSpec {
    pub weights: Vec<f64>,
}

impl CircledNormSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::validation("weights", "at least one weight is required"));
        }
        for (j, w) in weights.iter().enumerate() {
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::validation(format!("weights[{j}]"), format!("must be finite and positive, got {w}")));
            }
        }
        Ok(Self { weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn norm(&self, z: &ComplexVec) -> f64 {
        z.iter().zip(&self.weights).map(|(x, w)| (w * x.norm()).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircledGeometry {
    /// `r_K = inf { |z| : z in ∂K }`.
    pub inradius: f64,
    /// A boundary point of `K` realizing `r_K`.
    pub touch_point: ComplexVec,
    /// The coordinate of `touch_point`.
    pub axis: usize,
    /// `touch_point^⊥`; `K` lies within `r_K` of it.
    pub hyperplane: SubspaceBasis,
}

impl CircledGeometry {
    /// Euclidean distance from `z` to the hyperplane.
    pub fn dist_to_hyperplane(&self, z: &ComplexVec) -> f64 {
        z[self.axis].norm()
    }
}

pub fn circled_norm_geometry(spec: &CircledNormSpec) -> CircledGeometry {
    let n = spec.dim();
    let mut axis = 0;
    for (j, w) in spec.weights.iter().enumerate() {
        if *w > spec.weights[axis] {
            axis = j;
        }
    }
    let w = spec.weights[axis];
    let mut touch_point = ComplexVec::zeros(n);
    touch_point[axis] = Complex64::new(1.0 / w, 0.0);
    let mut columns = crate::linalg::ComplexMatrix::zeros(n, n - 1);
    for (c, j) in (0..n).filter(|&j| j != axis).enumerate() {
        columns[(j, c)] = Complex64::new(1.0, 0.0);
    }
    let hyperplane = if n == 1 {
        SubspaceBasis::empty(1)
    } else {
        SubspaceBasis::new(columns).expect("coordinate vectors are orthonormal")
    };
    CircledGeometry { inradius: 1.0 / w, touch_point, axis, hyperplane }
}

/// `γ_n(H_1 + rK)` for the translate `H_1 = { z_axis = d }` of the hyperplane:
/// the `K`-distance to `H_1` is `|z_axis - d| / r_K`.
pub fn circled_hyperplane_tube_measure(spec: &CircledNormSpec, d: f64, r: f64) -> Result<f64> {
    let geometry = circled_norm_geometry(spec);
    Ok(disc_measure(&DiscSpec::new(1, d, r * geometry.inradius)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cvec, psd_sqrt};
    use crate::rng::{Stream, StreamId};

    /// `P(|g - c| <= R)` for standard `g` on `C`, by polar quadrature about the disc center.
    fn disc_quadrature(rho: f64, radius: f64) -> f64 {
        let gl = GaussLegendre::new(80).unwrap();
        let m = 256;
        let dt = std::f64::consts::TAU / m as f64;
        gl.integrate(0.0, radius, |s| {
            let ring: f64 = (0..m)
                .map(|i| {
                    let t = i as f64 * dt;
                    let (x, y) = (rho + s * t.cos(), s * t.sin());
                    (-(x * x + y * y) / 2.0).exp()
                })
                .sum();
            s * ring * dt / std::f64::consts::TAU
        })
    }

    fn central_closed_form(k: usize, radius: f64) -> f64 {
        let y = radius * radius / 2.0;
        let mut term = 1.0;
        let mut sum = 0.0;
        for j in 0..k {
            if j > 0 {
                term *= y / j as f64;
            }
            sum += term;
        }
        1.0 - (-y).exp() * sum
    }

    fn disc(k: usize, rho: f64, r: f64) -> f64 {
        disc_measure(&DiscSpec::new(k, rho, r).unwrap())
    }

    #[test]
    fn disc_examples() {
        assert!((disc(1, 0.0, 1.0) - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert_eq!(disc(2, 0.0, f64::INFINITY), 1.0);
        assert!((disc(2, 0.0, 40.0) - 1.0).abs() < 1e-15);
        assert_eq!(disc(3, 1.0, 0.0), 0.0);
        assert!((disc(1, 1.0, 1.0) - disc_quadrature(1.0, 1.0)).abs() < 1e-8);
    }

    #[test]
    fn disc_matches_quadrature() {
        for rho in [0.0, 0.3, 1.0, 1.7, 2.5, 4.0] {
            for r in [0.1, 0.5, 1.0, 2.0, 3.5] {
                let q = disc_quadrature(rho, r);
                assert!((disc(1, rho, r) - q).abs() < 1e-10, "rho={rho} r={r}");
            }
        }
    }

    #[test]
    fn central_series_is_closed_form() {
        for k in 1..=6 {
            for r in [0.05, 0.5, 1.0, 2.0, 3.0, 5.0] {
                assert!((disc(k, 0.0, r) - central_closed_form(k, r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disc_for_k2_matches_product_of_slices() {
        // P(|g|^2 <= R^2) on C^2 with g offset by (ρ, 0): integrate the first
        // coordinate's slice and close the second.
        let gl = GaussLegendre::new(80).unwrap();
        for (rho, radius) in [(0.5, 1.0), (1.5, 2.0), (3.0, 2.5)] {
            let q = gl.integrate(0.0, std::f64::consts::FRAC_PI_2, |phi| {
                let s = radius * phi.sin();
                let jac = radius * phi.cos();
                let rest = 1.0 - (-(radius * phi.cos()).powi(2) / 2.0).exp();
                let m = 256;
                let dt = std::f64::consts::TAU / m as f64;
                let ring: f64 = (0..m)
                    .map(|i| {
                        let t = i as f64 * dt;
                        let (x, y) = (rho + s * t.cos(), s * t.sin());
                        (-(x * x + y * y) / 2.0).exp()
                    })
                    .sum::<f64>()
                    * dt;
                s * jac * ring * rest / std::f64::consts::TAU
            });
            assert!((disc(2, rho, radius) - q).abs() < 1e-9, "{rho} {radius}");
        }
    }

    #[test]
    fn disc_is_monotone() {
        let grid = [0.0, 0.5, 1.0, 2.0, 3.0];
        for k in 1..=3 {
            for &rho in &grid {
                for w in grid.windows(2) {
                    assert!(disc(k, rho, w[0]) <= disc(k, rho, w[1]));
                }
            }
            for &r in &grid {
                for w in grid.windows(2) {
                    assert!(disc(k, w[0], r) >= disc(k, w[1], r));
                }
            }
        }
    }

    #[test]
    fn far_disc_is_tiny_and_finite() {
        let p = disc(2, 40.0, 1.0);
        assert!((0.0..1e-300).contains(&p) || p == 0.0);
        assert!(disc(1, 10.0, 12.0) > 0.9);
    }

    #[test]
    fn affine_tube_examples() {
        assert!((affine_tube_measure(3, 1, 0.0, 1.0).unwrap() - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert_eq!(affine_tube_measure(2, 1, 0.7, 1.3).unwrap(), affine_tube_measure(9, 1, 0.7, 1.3).unwrap());
        assert!(matches!(affine_tube_measure(2, 3, 0.0, 1.0), Err(Error::Validation { .. })));
        let vals: Vec<f64> = [0.0, 0.5, 1.0, 2.0].iter().map(|&d| affine_tube_measure(2, 1, d, 1.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn tube_plus_complement_is_one() {
        let gl = GaussLegendre::new(100).unwrap();
        for r in [0.3, 1.0, 2.0] {
            let tail = gl.integrate(r, r + 14.0, |s| s * (-s * s / 2.0).exp());
            assert!((affine_tube_measure(2, 1, 0.0, r).unwrap() + tail - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn expectation_examples() {
        let g = ComplexGaussian::standard(3);
        let half = TestFunctional::coordinate_half_space(3, 0);
        assert_eq!(gaussian_expectation(&g, &half).unwrap(), 0.5);
        assert_eq!(gaussian_expectation(&g, &TestFunctional::SquaredNorm).unwrap(), 6.0);
        assert_eq!(gaussian_expectation(&g, &TestFunctional::One).unwrap(), 1.0);
    }

    #[test]
    fn expectation_degenerate_direction_is_indicator() {
        let mu = ComplexGaussian::new(cvec(&[(0.5, 0.0), (0.0, 0.0)]), HermitianMatrix::from_real_diagonal(&[0.0, 2.0]), 1e-2)
            .unwrap();
        let half = TestFunctional::coordinate_half_space(2, 0);
        assert_eq!(gaussian_expectation(&mu, &half).unwrap(), 1.0);
    }

    #[test]
    fn unknown_functional_tag_is_validation_error() {
        let v = serde_json::json!({"kind": "cubic"});
        assert!(matches!(TestFunctional::from_json(&v), Err(Error::Validation { .. })));
        let v = serde_json::json!({"kind": "half_space", "u": [[1.0, 0.0], [0.0, 0.0]], "c": 0.25});
        let phi = TestFunctional::from_json(&v).unwrap();
        assert_eq!(phi.tag(), "half_space");
        assert_eq!(serde_json::to_value(&phi).unwrap(), v);
    }

    #[test]
    fn expectation_matches_monte_carlo() {
        let a = cvec(&[(0.4, -0.2), (1.0, 0.3)]);
        let cov = HermitianMatrix::new(crate::linalg::ComplexMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(1.5, 0.0), Complex64::new(0.3, 0.4), Complex64::new(0.3, -0.4), Complex64::new(0.8, 0.0)],
        ))
        .unwrap();
        let mu = ComplexGaussian::new(a.clone(), cov.clone(), 0.0).unwrap();
        let root = psd_sqrt(&cov).unwrap();
        let functionals = [
            TestFunctional::HalfSpace { u: cvec(&[(1.0, 0.5), (-0.3, 0.2)]), c: 0.3 },
            TestFunctional::BoundedExp { u: cvec(&[(0.6, 0.0), (0.0, -0.4)]), cap: 3.0 },
            TestFunctional::SquaredNorm,
        ];
        let mut stream = Stream::new(StreamId::new(8, 0, 0));
        let m = 1_000_000;
        let mut sums = [[0.0f64; 2]; 3];
        for _ in 0..m {
            // A^{1/2} w / sqrt 2 has covariance A when E ww* = 2 Id.
            let w = stream.standard_gaussian(2);
            let z = &a + root.as_matrix() * w * Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            for (s, phi) in sums.iter_mut().zip(&functionals) {
                let x = phi.eval(&z);
                s[0] += x;
                s[1] += x * x;
            }
        }
        for (s, phi) in sums.iter().zip(&functionals) {
            let mean = s[0] / m as f64;
            let se = ((s[1] / m as f64 - mean * mean) / m as f64).sqrt();
            let exact = gaussian_expectation(&mu, phi).unwrap();
            assert!((mean - exact).abs() <= 3.0 * se, "{}: {mean} vs {exact} (se {se})", phi.tag());
        }
    }

    #[test]
    fn tilt_equality_at_identity() {
        for (v, r) in [(cvec(&[(0.0, 0.0)]), 1.0), (cvec(&[(1.2, -0.7)]), 0.8), (cvec(&[(0.0, 2.0)]), 2.0)] {
            let t = tilt_inequality_check(&HermitianMatrix::identity(1), &v, r).unwrap();
            assert!((t.lhs - t.rhs).abs() < 1e-10, "{t:?}");
            assert!(t.holds);
        }
        let v = cvec(&[(0.5, 0.5), (-1.0, 0.2)]);
        let t = tilt_inequality_check(&HermitianMatrix::identity(2), &v, 1.3).unwrap();
        assert!((t.lhs - t.rhs).abs() < 1e-10, "{t:?}");
    }

    #[test]
    fn tilt_lhs_matches_shifted_disc() {
        // The tilted measure is N(B^{-1}v, 2B^{-1}), so for k = 1 the lhs is
        // total * disc(1, |v|/sqrt(b), R sqrt(b)).
        for (b, v, r) in [(2.0, 1.5, 1.0), (3.7, 0.4, 0.3), (1.1, 2.0, 1.9)] {
            let t = tilt_inequality_check(&HermitianMatrix::from_real_diagonal(&[b]), &cvec(&[(v, 0.0)]), r).unwrap();
            let expected = (v * v / (2.0 * b)).exp() * disc(1, v / b.sqrt(), r * b.sqrt());
            assert!((t.lhs - expected).abs() < 1e-10);
            assert!(t.quad_error < 1e-8);
        }
    }

    #[test]
    fn tilt_holds_with_slack() {
        let mut stream = Stream::new(StreamId::new(3, 0, 0));
        for _ in 0..20 {
            let v = cvec(&[(stream.uniform() - 0.5, stream.uniform() - 0.5), (stream.uniform() - 0.5, 0.0)]);
            let v = &v * Complex64::new(2.0 * stream.uniform() / crate::linalg::vec_norm(&v), 0.0);
            let t = tilt_inequality_check(&HermitianMatrix::identity(2).scaled(2.0), &v, 1.0).unwrap();
            assert!(t.holds && t.lhs > t.rhs, "{t:?}");
        }
    }

    #[test]
    fn tilt_errors() {
        assert!(matches!(
            tilt_inequality_check(&HermitianMatrix::identity(3), &ComplexVec::zeros(3), 1.0),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            tilt_inequality_check(&HermitianMatrix::from_real_diagonal(&[0.5]), &ComplexVec::zeros(1), 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn circled_geometry_examples() {
        let g = circled_norm_geometry(&CircledNormSpec::new(vec![1.0, 1.0]).unwrap());
        assert_eq!(g.inradius, 1.0);
        assert_eq!(g.touch_point, cvec(&[(1.0, 0.0), (0.0, 0.0)]));
        let g = circled_norm_geometry(&CircledNormSpec::new(vec![1.0, 2.0]).unwrap());
        assert_eq!(g.inradius, 0.5);
        assert_eq!(g.touch_point, cvec(&[(0.0, 0.0), (0.5, 0.0)]));
        assert_eq!(g.hyperplane.dim(), 1);
        assert_eq!(g.hyperplane.columns()[(0, 0)], Complex64::new(1.0, 0.0));
        assert!(CircledNormSpec::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn circled_inclusions_on_random_samples() {
        let spec = CircledNormSpec::new(vec![1.0, 2.0]).unwrap();
        let g = circled_norm_geometry(&spec);
        let mut stream = Stream::new(StreamId::new(5, 0, 0));
        for _ in 0..10_000 {
            let u = stream.standard_gaussian(2);
            let u = &u / Complex64::new(crate::linalg::vec_norm(&u), 0.0);
            assert!(spec.norm(&(&u * Complex64::new(g.inradius, 0.0))) <= 1.0 + 1e-12);
            // A point of K: radius U^{1/4} inside the unit ball, mapped by W^{-1}.
            let z = ComplexVec::from_fn(2, |j, _| u[j] * stream.uniform().powf(0.25) / spec.weights[j]);
            assert!(spec.norm(&z) <= 1.0 + 1e-12);
            assert!(g.dist_to_hyperplane(&z) <= g.inradius + 1e-12);
        }
    }

    #[test]
    fn circled_hyperplane_tube() {
        let spec = CircledNormSpec::new(vec![1.0, 2.0]).unwrap();
        let p = circled_hyperplane_tube_measure(&spec, 2f64.sqrt(), 1.0).unwrap();
        assert_eq!(p, disc(1, 2f64.sqrt(), 0.5));
    }
}
