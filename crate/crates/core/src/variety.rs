//! Polynomial maps `f: C^n -> C^k`, their Jacobians, and the fiber `Z = f^{-1}(0)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_values, vec_norm, ComplexMatrix, ComplexVec, SubspaceBasis};
use crate::rng::{domain, Stream, StreamId};

/// Smallest admissible Jacobian singular value along a path.
pub const RANK_TOL: f64 = 1e-8;
/// Default residual tolerance `|f(z)|` for points considered on the fiber.
pub const FIBER_TOL: f64 = 1e-10;
/// Residual allowed at the designated base point of a map.
pub const BASE_POINT_TOL: f64 = 1e-12;
pub const DEFAULT_PROJECTION_ITERS: usize = 50;
pub const DEFAULT_DISTANCE_STARTS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: Complex64,
    pub exps: Vec<u32>,
}

impl Monomial {
    pub fn new(coeff: Complex64, exps: Vec<u32>) -> Self {
        Self { coeff, exps }
    }

    fn eval(&self, z: &ComplexVec) -> Complex64 {
        let mut acc = self.coeff;
        for (zi, &e) in z.iter().zip(&self.exps) {
            if e > 0 {
                acc *= zi.powu(e);
            }
        }
        acc
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }
}

/// Wire form of a [`PolynomialMap`]; complex numbers are `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialMapJson {
    pub n: usize,
    pub k: usize,
    pub components: Vec<Vec<MonomialJson>>,
    pub base_point: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialJson {
    pub coeff: [f64; 2],
    pub exps: Vec<u32>,
}

/// A holomorphic polynomial map with a designated regular point of its zero fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialMap {
    n: usize,
    k: usize,
    components: Vec<Vec<Monomial>>,
    base_point: ComplexVec,
}

/// A point of the fiber together with its residual `|f(point)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberPoint {
    pub point: ComplexVec,
    pub residual: f64,
    pub iterations: usize,
}

/// Result of a local constrained descent towards a target point.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestPoint {
    pub point: ComplexVec,
    pub distance: f64,
    /// Norm of the tangential component of `target - point` (first-order optimality residual).
    pub stationarity: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub fiber_tol: f64,
    pub max_iter: usize,
    pub projection_max_iter: usize,
    /// Stop as soon as a fiber point this close to the target is found.
    pub stop_below: f64,
    pub stationarity_tol: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            fiber_tol: FIBER_TOL,
            max_iter: 60,
            projection_max_iter: 30,
            stop_below: 0.0,
            stationarity_tol: 1e-9,
        }
    }
}

/// Upper bound on `d(0, Z)` from multi-start descent.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEstimate {
    pub distance: f64,
    pub point: ComplexVec,
    pub stationarity: f64,
    pub starts: usize,
    pub failed_starts: usize,
}

fn dim_check(expected: usize, z: &ComplexVec) -> Result<()> {
    if z.len() != expected {
        return Err(Error::validation(
            "z",
            format!("expected a point of dimension {expected}, got {}", z.len()),
        ));
    }
    Ok(())
}

fn c64(pair: [f64; 2]) -> Complex64 {
    Complex64::new(pair[0], pair[1])
}

impl PolynomialMap {
    /// Builds and validates a map: shapes, finiteness, `|f(base)| <= 1e-12` and
    /// full Jacobian rank at the base point.
    pub fn new(
        n: usize,
        components: Vec<Vec<Monomial>>,
        base_point: ComplexVec,
    ) -> Result<Self> {
        let k = components.len();
        if n == 0 {
            return Err(Error::validation("n", "ambient dimension must be at least 1"));
        }
        if k == 0 || k > n {
            return Err(Error::validation("k", format!("need 1 <= k <= n, got k = {k}, n = {n}")));
        }
        for (j, comp) in components.iter().enumerate() {
            for (m, mono) in comp.iter().enumerate() {
                if mono.exps.len() != n {
                    return Err(Error::validation(
                        format!("components[{j}][{m}].exps"),
                        format!("exponent vector has length {}, expected n = {n}", mono.exps.len()),
                    ));
                }
                if !mono.coeff.re.is_finite() || !mono.coeff.im.is_finite() {
                    return Err(Error::validation(format!("components[{j}][{m}].coeff"), "non-finite coefficient"));
                }
            }
        }
        if base_point.len() != n {
            return Err(Error::validation(
                "base_point",
                format!("base point has length {}, expected n = {n}", base_point.len()),
            ));
        }
        let map = Self { n, k, components, base_point };
        let residual = vec_norm(&map.eval_unchecked(&map.base_point));
        if !(residual <= BASE_POINT_TOL) {
            return Err(Error::validation(
                "base_point",
                format!("base point is not on the fiber: |f(base_point)| = {residual:.3e}"),
            ));
        }
        let sigma = map.sigma_min_unchecked(&map.base_point);
        if !(sigma >= RANK_TOL) {
            return Err(Error::validation(
                "base_point",
                format!("Jacobian at the base point is rank deficient (smallest singular value {sigma:.3e})"),
            ));
        }
        Ok(map)
    }

    pub fn from_json(spec: &PolynomialMapJson) -> Result<Self> {
        if spec.components.len() != spec.k {
            return Err(Error::validation(
                "components",
                format!("{} components listed but k = {}", spec.components.len(), spec.k),
            ));
        }
        let components = spec
            .components
            .iter()
            .map(|comp| comp.iter().map(|m| Monomial::new(c64(m.coeff), m.exps.clone())).collect())
            .collect();
        let base = DVector::from_iterator(spec.base_point.len(), spec.base_point.iter().map(|&p| c64(p)));
        Self::new(spec.n, components, base)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: PolynomialMapJson =
            serde_json::from_str(text).map_err(|e| Error::validation("map", e.to_string()))?;
        Self::from_json(&spec)
    }

    pub fn to_json(&self) -> PolynomialMapJson {
        PolynomialMapJson {
            n: self.n,
            k: self.k,
            components: self
                .components
                .iter()
                .map(|comp| {
                    comp.iter()
                        .map(|m| MonomialJson { coeff: [m.coeff.re, m.coeff.im], exps: m.exps.clone() })
                        .collect()
                })
                .collect(),
            base_point: self.base_point.iter().map(|z| [z.re, z.im]).collect(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn codim(&self) -> usize {
        self.k
    }

    pub fn components(&self) -> &[Vec<Monomial>] {
        &self.components
    }

    pub fn base_point(&self) -> &ComplexVec {
        &self.base_point
    }

    /// True when every monomial has total degree at most one.
    pub fn is_affine(&self) -> bool {
        self.components.iter().flatten().all(|m| m.degree() <= 1)
    }

    /// A copy with a different base point (which must lie on the fiber).
    pub fn with_base_point(&self, base_point: ComplexVec) -> Result<Self> {
        Self::new(self.n, self.components.clone(), base_point)
    }

    /// The map `z -> f(z + shift)`, expanded back into monomials. The base
    /// point becomes `base_point - shift`, so a shift onto a fiber point moves
    /// that point to the origin.
    pub fn translated(&self, shift: &ComplexVec) -> Result<Self> {
        dim_check(self.n, shift)?;
        let mut components = Vec::with_capacity(self.k);
        for comp in &self.components {
            let mut acc: BTreeMap<Vec<u32>, Complex64> = BTreeMap::new();
            for mono in comp {
                // Product over variables of sum_j C(e, j) s^(e - j) z^j.
                let mut terms: Vec<(Vec<u32>, Complex64)> = vec![(vec![0; self.n], mono.coeff)];
                for (i, &e) in mono.exps.iter().enumerate() {
                    if e == 0 {
                        continue;
                    }
                    let mut next = Vec::with_capacity(terms.len() * (e as usize + 1));
                    let mut binom = 1.0_f64;
                    for j in 0..=e {
                        if j > 0 {
                            binom = binom * f64::from(e - j + 1) / f64::from(j);
                        }
                        let factor = shift[i].powu(e - j) * binom;
                        for (exps, c) in &terms {
                            let mut ex = exps.clone();
                            ex[i] = j;
                            next.push((ex, c * factor));
                        }
                    }
                    terms = next;
                }
                for (exps, c) in terms {
                    *acc.entry(exps).or_insert(Complex64::new(0.0, 0.0)) += c;
                }
            }
            components.push(
                acc.into_iter()
                    .filter(|(_, c)| c.norm() != 0.0)
                    .map(|(exps, coeff)| Monomial { coeff, exps })
                    .collect(),
            );
        }
        Self::new(self.n, components, &self.base_point - shift)
    }

    /// The map `u -> f(W^{-1} u)` for `W = diag(weights)`. Euclidean distances
    /// to its fiber equal `W`-weighted distances to the fiber of `f`.
    pub fn scaled_coordinates(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.n {
            return Err(Error::validation("weights", format!("expected {} weights, got {}", self.n, weights.len())));
        }
        if let Some(j) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::validation(format!("weights[{j}]"), "weights must be positive and finite"));
        }
        let components = self
            .components
            .iter()
            .map(|comp| {
                comp.iter()
                    .map(|m| {
                        let scale: f64 = m.exps.iter().zip(weights).map(|(&e, w)| w.powi(-(e as i32))).product();
                        Monomial { coeff: m.coeff * scale, exps: m.exps.clone() }
                    })
                    .collect()
            })
            .collect();
        let base = DVector::from_iterator(self.n, self.base_point.iter().zip(weights).map(|(z, w)| z * *w));
        Self::new(self.n, components, base)
    }

    pub fn eval(&self, z: &ComplexVec) -> Result<ComplexVec> {
        dim_check(self.n, z)?;
        Ok(self.eval_unchecked(z))
    }

    pub(crate) fn eval_unchecked(&self, z: &ComplexVec) -> ComplexVec {
        DVector::from_iterator(self.k, self.components.iter().map(|comp| comp.iter().map(|m| m.eval(z)).sum()))
    }

    /// `|f(z)|`.
    pub fn residual(&self, z: &ComplexVec) -> Result<f64> {
        Ok(vec_norm(&self.eval(z)?))
    }

    /// The `k x n` holomorphic Jacobian `(df_j / dz_l)`.
    pub fn jacobian(&self, z: &ComplexVec) -> Result<ComplexMatrix> {
        dim_check(self.n, z)?;
        Ok(self.jacobian_unchecked(z))
    }

    pub(crate) fn jacobian_unchecked(&self, z: &ComplexVec) -> ComplexMatrix {
        let mut jac = DMatrix::<Complex64>::zeros(self.k, self.n);
        for (j, comp) in self.components.iter().enumerate() {
            for mono in comp {
                for l in 0..self.n {
                    let e = mono.exps[l];
                    if e == 0 {
                        continue;
                    }
                    let mut term = mono.coeff * f64::from(e);
                    for (i, &ei) in mono.exps.iter().enumerate() {
                        let p = if i == l { ei - 1 } else { ei };
                        if p > 0 {
                            term *= z[i].powu(p);
                        }
                    }
                    jac[(j, l)] += term;
                }
            }
        }
        jac
    }

    fn sigma_min_unchecked(&self, z: &ComplexVec) -> f64 {
        singular_values(&self.jacobian_unchecked(z))[0]
    }

    /// Smallest singular value of the Jacobian at `z`.
    pub fn jacobian_sigma_min(&self, z: &ComplexVec) -> Result<f64> {
        dim_check(self.n, z)?;
        Ok(self.sigma_min_unchecked(z))
    }

    /// Orthonormal basis of `H(z) = span{(grad f_j(z))*}`, the row space of the
    /// conjugated Jacobian.
    pub fn gradient_subspace(&self, z: &ComplexVec) -> Result<SubspaceBasis> {
        dim_check(self.n, z)?;
        gradient_basis(&self.jacobian_unchecked(z))
    }

    /// Gauss-Newton projection `z <- z - J*(JJ*)^{-1} f(z)` until `|f(z)| <= tol`.
    ///
    /// After reaching the tolerance one more correction is attempted and kept
    /// if it does not increase the residual, which makes affine fibers exact.
    /// The Jacobian must have full rank at every visited point, including the
    /// returned one.
    pub fn project_to_fiber(&self, z: &ComplexVec, tol: f64, max_iter: usize) -> Result<FiberPoint> {
        dim_check(self.n, z)?;
        let mut w = z.clone();
        let mut f = self.eval_unchecked(&w);
        let mut residual = vec_norm(&f);
        let mut iterations = 0;
        while residual > tol {
            if iterations == max_iter || !residual.is_finite() {
                return Err(Error::ProjectionFailed { iterations, residual });
            }
            let jac = self.jacobian_unchecked(&w);
            w -= gauss_newton_correction(&jac, &f)?;
            f = self.eval_unchecked(&w);
            residual = vec_norm(&f);
            iterations += 1;
        }
        // The returned point must itself be regular; this also yields the polishing step.
        let corr = gauss_newton_correction(&self.jacobian_unchecked(&w), &f)?;
        if residual > 0.0 {
            let cand = &w - corr;
            let r = vec_norm(&self.eval_unchecked(&cand));
            if r <= residual {
                w = cand;
                residual = r;
            }
        }
        Ok(FiberPoint { point: w, residual, iterations })
    }

    /// Local minimization of `|w - target|` over the fiber, starting from the
    /// projection of `start`. Each iteration steps along the tangential part of
    /// `target - w` and re-projects, halving the step until the distance drops.
    /// Every accepted iterate lies on the fiber, so the returned distance is
    /// always an upper bound on the true distance from `target` to the fiber.
    pub fn local_nearest_point(
        &self,
        target: &ComplexVec,
        start: &ComplexVec,
        opts: &DescentOptions,
    ) -> Result<NearestPoint> {
        dim_check(self.n, target)?;
        let mut w = self.project_to_fiber(start, opts.fiber_tol, opts.projection_max_iter)?.point;
        let mut dist = vec_norm(&(target - &w));
        let mut stationarity = f64::INFINITY;
        let mut iterations = 0;
        while iterations < opts.max_iter && dist > opts.stop_below {
            let basis = match gradient_basis(&self.jacobian_unchecked(&w)) {
                Ok(b) => b,
                Err(_) => break,
            };
            let diff = target - &w;
            let q = basis.columns();
            let tangent = &diff - q * (q.adjoint() * &diff);
            stationarity = vec_norm(&tangent);
            if stationarity <= opts.stationarity_tol * dist.max(1.0) {
                break;
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..24 {
                let trial = &w + &tangent * Complex64::new(step, 0.0);
                if let Ok(fp) = self.project_to_fiber(&trial, opts.fiber_tol, opts.projection_max_iter) {
                    let d = vec_norm(&(target - &fp.point));
                    if d < dist {
                        accepted = Some((fp.point, d));
                        break;
                    }
                }
                step *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some((p, d)) => {
                    let gain = dist - d;
                    w = p;
                    dist = d;
                    if gain <= 1e-13 * dist.max(1.0) {
                        break;
                    }
                }
                None => break,
            }
        }
        Ok(NearestPoint { point: w, distance: dist, stationarity, iterations })
    }

    /// Base point followed by `count - 1` Gaussian perturbations of it.
    pub fn default_starts(&self, count: usize, seed: u64) -> Vec<ComplexVec> {
        let mut stream = Stream::new(StreamId::new(seed, domain::STARTS, 0));
        let mut starts = vec![self.base_point.clone()];
        while starts.len() < count.max(1) {
            starts.push(&self.base_point + stream.standard_gaussian(self.n));
        }
        starts
    }

    /// Smallest `|z|` over fiber-constrained local minimizers reached from the
    /// given starts. An upper bound on `d(0, Z)`; adding starts can only lower it.
    pub fn distance_to_origin(&self, starts: &[ComplexVec]) -> Result<DistanceEstimate> {
        let origin = DVector::<Complex64>::zeros(self.n);
        let opts = DescentOptions { max_iter: 500, stationarity_tol: 1e-12, ..DescentOptions::default() };
        let mut best: Option<NearestPoint> = None;
        let mut failed = 0;
        let mut last_err = None;
        for start in starts {
            match self.local_nearest_point(&origin, start, &opts) {
                Ok(np) => {
                    if best.as_ref().map_or(true, |b| np.distance < b.distance) {
                        best = Some(np);
                    }
                }
                Err(e) => {
                    failed += 1;
                    last_err = Some(e);
                }
            }
        }
        match best {
            Some(np) => Ok(DistanceEstimate {
                distance: np.distance,
                point: np.point,
                stationarity: np.stationarity,
                starts: starts.len(),
                failed_starts: failed,
            }),
            None => Err(last_err.unwrap_or_else(|| Error::validation("starts", "no starting points given"))),
        }
    }
}

/// Orthonormal basis of the span of the conjugated rows of `jac`, after the
/// rank check `sigma_min >= RANK_TOL`.
fn gradient_basis(jac: &ComplexMatrix) -> Result<SubspaceBasis> {
    let sigma = singular_values(jac)[0];
    if !(sigma >= RANK_TOL) {
        return Err(Error::Singular { sigma_min: sigma, tol: RANK_TOL });
    }
    SubspaceBasis::orthonormalize(&jac.adjoint(), 1e-14)
}

/// `J*(JJ*)^{-1} f`, the minimum-norm solution of `J d = f`.
fn gauss_newton_correction(jac: &ComplexMatrix, f: &ComplexVec) -> Result<ComplexVec> {
    if jac.nrows() == 1 {
        let s2: f64 = jac.iter().map(|g| g.norm_sqr()).sum();
        let sigma = s2.sqrt();
        if !(sigma >= RANK_TOL) {
            return Err(Error::Singular { sigma_min: sigma, tol: RANK_TOL });
        }
        let y = f[0] / s2;
        return Ok(DVector::from_iterator(jac.ncols(), jac.row(0).iter().map(|g| g.conj() * y)));
    }
    let sigma = singular_values(jac)[0];
    if !(sigma >= RANK_TOL) {
        return Err(Error::Singular { sigma_min: sigma, tol: RANK_TOL });
    }
    let adj = jac.adjoint();
    let gram = jac * &adj;
    let y = gram
        .cholesky()
        .ok_or(Error::Singular { sigma_min: sigma, tol: RANK_TOL })?
        .solve(f);
    Ok(adj * y)
}

/// Maps used throughout the tests and experiments.
pub mod catalog {
    use super::*;

    fn mono(re: f64, exps: &[u32]) -> Monomial {
        Monomial::new(Complex64::new(re, 0.0), exps.to_vec())
    }

    fn point(re: &[f64]) -> ComplexVec {
        DVector::from_iterator(re.len(), re.iter().map(|&x| Complex64::new(x, 0.0)))
    }

    /// `z_j - c` in `C^n` (0-based `j`); its fiber is an affine hyperplane at distance `|c|`.
    pub fn coordinate(n: usize, j: usize, c: Complex64) -> PolynomialMap {
        let mut e = vec![0; n];
        e[j] = 1;
        let mut comp = vec![Monomial::new(Complex64::new(1.0, 0.0), e)];
        if c != Complex64::new(0.0, 0.0) {
            comp.push(Monomial::new(-c, vec![0; n]));
        }
        let mut base = DVector::<Complex64>::zeros(n);
        base[j] = c;
        PolynomialMap::new(n, vec![comp], base).expect("coordinate map is regular")
    }

    /// The first `k` coordinates of `C^n`; fiber is `C^{n-k}`.
    pub fn coordinate_subspace(n: usize, k: usize) -> PolynomialMap {
        let components = (0..k)
            .map(|j| {
                let mut e = vec![0; n];
                e[j] = 1;
                vec![mono(1.0, &e)]
            })
            .collect();
        PolynomialMap::new(n, components, DVector::zeros(n)).expect("coordinate map is regular")
    }

    /// `z1 z2 - 1`; `d(0, Z) = sqrt(2)`.
    pub fn hyperbola() -> PolynomialMap {
        PolynomialMap::new(2, vec![vec![mono(1.0, &[1, 1]), mono(-1.0, &[0, 0])]], point(&[1.0, 1.0]))
            .expect("hyperbola is regular")
    }

    /// `z2 - z1^2`; passes through the origin.
    pub fn parabola() -> PolynomialMap {
        PolynomialMap::new(2, vec![vec![mono(1.0, &[0, 1]), mono(-1.0, &[2, 0])]], point(&[0.0, 0.0]))
            .expect("parabola is regular")
    }

    /// `z3 - z1^2 - z2^2` in `C^3`; passes through the origin.
    pub fn paraboloid3() -> PolynomialMap {
        PolynomialMap::new(
            3,
            vec![vec![mono(1.0, &[0, 0, 1]), mono(-1.0, &[2, 0, 0]), mono(-1.0, &[0, 2, 0])]],
            point(&[0.0, 0.0, 0.0]),
        )
        .expect("paraboloid is regular")
    }
}

#[cfg(test)]
mod tests {
    use super::catalog::*;
    use super::*;
    use crate::linalg::{cvec, max_abs};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eval_examples() {
        let f = hyperbola();
        assert_eq!(f.eval(&cvec(&[(1.0, 0.0), (1.0, 0.0)])).unwrap()[0], c(0.0, 0.0));
        assert_eq!(f.eval(&cvec(&[(2.0, 0.0), (1.0, 0.0)])).unwrap()[0], c(1.0, 0.0));
        let g = parabola();
        assert_eq!(g.eval(&cvec(&[(1.0, 1.0), (0.0, 2.0)])).unwrap()[0], c(0.0, 0.0));
        assert!(matches!(f.eval(&cvec(&[(1.0, 0.0)])), Err(Error::Validation { .. })));
    }

    #[test]
    fn jacobian_examples() {
        let j = hyperbola().jacobian(&cvec(&[(1.0, 0.0), (2.0, 0.0)])).unwrap();
        assert_eq!((j[(0, 0)], j[(0, 1)]), (c(2.0, 0.0), c(1.0, 0.0)));
        let f = coordinate(4, 0, c(0.3, -1.0));
        let j = f.jacobian(&cvec(&[(5.0, 1.0), (2.0, 0.0), (0.0, 0.0), (1.0, 1.0)])).unwrap();
        assert_eq!(j.row(0).iter().copied().collect::<Vec<_>>(), vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    }

    fn cubic_map() -> impl Strategy<Value = (Vec<Vec<(f64, f64, [u32; 3])>>, [(f64, f64); 3])> {
        let mono = (-10.0..10.0f64, -10.0..10.0f64, [0u32..=3, 0u32..=3, 0u32..=3]);
        let comp = prop::collection::vec(mono, 1..5);
        let z = [(-2.8..2.8f64, -2.8..2.8f64), (-2.8..2.8f64, -2.8..2.8f64), (-2.8..2.8f64, -2.8..2.8f64)];
        (prop::collection::vec(comp, 2..=2), z)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        // Central complex-step differences along each coordinate; holomorphy makes
        // the real-direction difference quotient equal the complex derivative.
        #[test]
        fn jacobian_matches_finite_differences((comps, zs) in cubic_map()) {
            let components: Vec<Vec<Monomial>> = comps.iter().map(|comp| {
                comp.iter().map(|&(re, im, e)| Monomial::new(c(re, im), e.to_vec())).collect()
            }).collect();
            let f = PolynomialMap { n: 3, k: 2, components, base_point: DVector::zeros(3) };
            let z = cvec(&zs);
            let jac = f.jacobian(&z).unwrap();
            let h = 1e-5;
            for l in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[l] += c(h, 0.0);
                zm[l] -= c(h, 0.0);
                let mut zpi = z.clone();
                let mut zmi = z.clone();
                zpi[l] += c(0.0, h);
                zmi[l] -= c(0.0, h);
                let fd = (f.eval(&zp).unwrap() - f.eval(&zm).unwrap()) / c(2.0 * h, 0.0);
                let fdi = (f.eval(&zpi).unwrap() - f.eval(&zmi).unwrap()) / c(0.0, 2.0 * h);
                for j in 0..2 {
                    prop_assert!((fd[j] - jac[(j, l)]).norm() < 1e-6 * (1.0 + jac[(j, l)].norm()));
                    prop_assert!((fdi[j] - jac[(j, l)]).norm() < 1e-6 * (1.0 + jac[(j, l)].norm()));
                }
            }
        }

        #[test]
        fn projection_lands_on_fiber(re in -2.0..2.0f64, im in -2.0..2.0f64, w in -2.0..2.0f64) {
            let f = parabola();
            let fp = f.project_to_fiber(&cvec(&[(re, im), (w, 0.3)]), FIBER_TOL, DEFAULT_PROJECTION_ITERS).unwrap();
            prop_assert!(fp.residual <= FIBER_TOL);
            prop_assert_eq!(fp.residual, f.residual(&fp.point).unwrap());
        }

        #[test]
        fn gradient_subspace_spans_conjugated_rows(a in -3.0..3.0f64, b in -3.0..3.0f64, d in 0.1..3.0f64) {
            let f = paraboloid3();
            let z = cvec(&[(a, b), (d, -a), (b, d)]);
            let q = f.gradient_subspace(&z).unwrap();
            let jh = f.jacobian(&z).unwrap().adjoint();
            let qm = q.columns();
            let resid = &jh - qm * (qm.adjoint() * &jh);
            prop_assert!(max_abs(&resid) <= 1e-10);
            prop_assert!(max_abs(&(qm.adjoint() * qm - DMatrix::identity(1, 1))) <= 1e-12);
        }
    }

    #[test]
    fn jacobian_finite_difference_fixed_cubic() {
        // f = (z1^3 + 2i z1 z2 z3 - 1, z2^2 z3 + 3 z1) at a generic point.
        let f = PolynomialMap {
            n: 3,
            k: 2,
            components: vec![
                vec![Monomial::new(c(1.0, 0.0), vec![3, 0, 0]), Monomial::new(c(0.0, 2.0), vec![1, 1, 1]), Monomial::new(c(-1.0, 0.0), vec![0, 0, 0])],
                vec![Monomial::new(c(1.0, 0.0), vec![0, 2, 1]), Monomial::new(c(3.0, 0.0), vec![1, 0, 0])],
            ],
            base_point: DVector::zeros(3),
        };
        let z = cvec(&[(0.7, -0.2), (1.1, 0.4), (-0.5, 0.9)]);
        let jac = f.jacobian(&z).unwrap();
        let (z1, z2, z3) = (z[0], z[1], z[2]);
        let exact = [
            [z1 * z1 * 3.0 + c(0.0, 2.0) * z2 * z3, c(0.0, 2.0) * z1 * z3, c(0.0, 2.0) * z1 * z2],
            [c(3.0, 0.0), z2 * z3 * 2.0, z2 * z2],
        ];
        for j in 0..2 {
            for l in 0..3 {
                assert!((jac[(j, l)] - exact[j][l]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_subspace_examples() {
        let f = coordinate(2, 0, c(0.0, 0.0));
        let q = f.gradient_subspace(&cvec(&[(0.0, 0.0), (3.0, 1.0)])).unwrap();
        assert!((q.columns()[(0, 0)].norm() - 1.0).abs() < 1e-15 && q.columns()[(1, 0)].norm() < 1e-15);

        let q = hyperbola().gradient_subspace(&cvec(&[(1.0, 0.0), (1.0, 0.0)])).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((q.columns()[(0, 0)] - c(s, 0.0)).norm() < 1e-15);
        assert!((q.columns()[(1, 0)] - c(s, 0.0)).norm() < 1e-15);

        let f = coordinate_subspace(3, 2);
        let q = f.gradient_subspace(&cvec(&[(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)])).unwrap();
        let p = q.projector();
        assert_eq!(p, crate::linalg::HermitianMatrix::from_real_diagonal(&[1.0, 1.0, 0.0]));

        let singular = PolynomialMap {
            n: 2,
            k: 1,
            components: vec![vec![Monomial::new(c(1.0, 0.0), vec![1, 1])]],
            base_point: DVector::zeros(2),
        };
        assert!(matches!(singular.gradient_subspace(&DVector::zeros(2)), Err(Error::Singular { .. })));
    }

    #[test]
    fn projection_examples() {
        let f = parabola();
        let on = cvec(&[(1.0, 1.0), (0.0, 2.0)]);
        let fp = f.project_to_fiber(&on, FIBER_TOL, 10).unwrap();
        assert_eq!(fp.point, on);
        assert_eq!(fp.residual, 0.0);

        let fp = f.project_to_fiber(&cvec(&[(0.0, 0.0), (0.1, 0.0)]), 1e-12, 10).unwrap();
        assert!(fp.residual <= 1e-12);
        assert!(fp.iterations <= 10);
        assert!(f.residual(&fp.point).unwrap() <= 1e-12);

        let singular = PolynomialMap {
            n: 2,
            k: 1,
            components: vec![vec![Monomial::new(c(1.0, 0.0), vec![1, 1])]],
            base_point: DVector::zeros(2),
        };
        // The origin lies on {z1 z2 = 0} but the gradient (z2, z1) vanishes there.
        assert!(matches!(
            singular.project_to_fiber(&cvec(&[(0.0, 0.0), (0.0, 0.0)]), FIBER_TOL, 10),
            Err(Error::Singular { .. })
        ));
        let bad = PolynomialMap {
            n: 2,
            k: 1,
            components: vec![vec![Monomial::new(c(1.0, 0.0), vec![1, 1]), Monomial::new(c(-1.0, 0.0), vec![0, 0])]],
            base_point: DVector::zeros(2),
        };
        assert!(matches!(
            bad.project_to_fiber(&cvec(&[(0.0, 0.0), (0.0, 0.0)]), FIBER_TOL, 10),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn affine_projection_is_exact() {
        let f = coordinate(2, 0, c(0.0, 0.0));
        let fp = f.project_to_fiber(&cvec(&[(1e-17, -3e-18), (0.4, 0.1)]), FIBER_TOL, 10).unwrap();
        assert_eq!(fp.point[0], c(0.0, 0.0));
        assert_eq!(fp.point[1], c(0.4, 0.1));
    }

    #[test]
    fn projection_reports_non_convergence() {
        let f = hyperbola();
        let r = f.project_to_fiber(&cvec(&[(3.0, 0.0), (2.0, 0.0)]), 1e-14, 1);
        assert!(matches!(r, Err(Error::ProjectionFailed { iterations: 1, .. })));
    }

    #[test]
    fn distance_examples() {
        let f = coordinate(3, 1, c(0.6, -0.8));
        let starts = f.default_starts(DEFAULT_DISTANCE_STARTS, 1);
        let d = f.distance_to_origin(&starts).unwrap();
        assert!((d.distance - 1.0).abs() < 1e-12);

        let d = parabola().distance_to_origin(&parabola().default_starts(16, 2)).unwrap();
        assert!(d.distance < 1e-12);

        let h = hyperbola();
        let d = h.distance_to_origin(&h.default_starts(16, 3)).unwrap();
        assert!((d.distance - 2f64.sqrt()).abs() < 1e-9, "{}", d.distance);
    }

    #[test]
    fn hyperbola_distance_matches_grid_search() {
        // Grid over the parametrization (s, 1/s), s = r e^{i phi}: |z|^2 = r^2 + 1/r^2.
        let mut best = f64::INFINITY;
        for i in 1..4000 {
            let r = i as f64 * 1e-3;
            for j in 0..16 {
                let phi = j as f64 * std::f64::consts::TAU / 16.0;
                let s = Complex64::from_polar(r, phi);
                let z = cvec(&[(s.re, s.im), ((1.0 / s).re, (1.0 / s).im)]);
                best = best.min(vec_norm(&z));
            }
        }
        let h = hyperbola();
        let d = h.distance_to_origin(&h.default_starts(16, 9)).unwrap();
        assert!((best - 2f64.sqrt()).abs() < 1e-6);
        assert!((d.distance - best).abs() < 1e-6);
    }

    #[test]
    fn distance_monotone_in_starts() {
        let h = hyperbola();
        let starts: Vec<ComplexVec> = (0..6).map(|i| cvec(&[(2.0 + i as f64, 0.5), (0.3, -0.1 * i as f64)])).collect();
        let mut prev = f64::INFINITY;
        for m in 1..=starts.len() {
            let d = h.distance_to_origin(&starts[..m]).unwrap().distance;
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn validation_paths() {
        let bad = PolynomialMapJson {
            n: 2,
            k: 1,
            components: vec![vec![
                MonomialJson { coeff: [1.0, 0.0], exps: vec![1, 0] },
                MonomialJson { coeff: [-1.0, 0.0], exps: vec![0, 0, 0] },
            ]],
            base_point: vec![[0.0, 0.0], [0.0, 0.0]],
        };
        match PolynomialMap::from_json(&bad) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "components[0][1].exps"),
            other => panic!("unexpected {other:?}"),
        }
        let off = PolynomialMapJson {
            n: 2,
            k: 1,
            components: vec![vec![MonomialJson { coeff: [1.0, 0.0], exps: vec![1, 0] }]],
            base_point: vec![[1.0, 0.0], [0.0, 0.0]],
        };
        assert!(matches!(PolynomialMap::from_json(&off), Err(Error::Validation { path, .. }) if path == "base_point"));
    }

    #[test]
    fn json_round_trip() {
        let f = hyperbola();
        let text = serde_json::to_string(&f.to_json()).unwrap();
        assert_eq!(PolynomialMap::from_json_str(&text).unwrap(), f);
    }

    #[test]
    fn translation_moves_point_to_origin() {
        let h = hyperbola();
        let shift = cvec(&[(2.0, 1.0), (0.4, -0.2)]);
        let g = h.translated(&shift).unwrap();
        for z in [cvec(&[(0.3, 0.1), (-1.0, 2.0)]), cvec(&[(1.5, -0.5), (0.0, 0.7)])] {
            let lhs = g.eval(&z).unwrap()[0];
            let rhs = h.eval(&(&z + &shift)).unwrap()[0];
            assert!((lhs - rhs).norm() < 1e-13);
        }
        let p = parabola();
        let on = cvec(&[(1.0, 1.0), (0.0, 2.0)]);
        let g = p.with_base_point(on.clone()).unwrap().translated(&on).unwrap();
        assert!(g.base_point().iter().all(|z| z.norm() == 0.0));
        assert_eq!(g.eval(&DVector::zeros(2)).unwrap()[0], c(0.0, 0.0));
    }

    #[test]
    fn scaled_coordinates_compose() {
        let h = hyperbola();
        let g = h.scaled_coordinates(&[1.0, 2.0]).unwrap();
        let u = cvec(&[(0.3, 0.2), (1.4, -0.6)]);
        let w = cvec(&[(0.3, 0.2), (0.7, -0.3)]);
        assert!((g.eval(&u).unwrap()[0] - h.eval(&w).unwrap()[0]).norm() < 1e-15);
        assert!(h.scaled_coordinates(&[1.0, 0.0]).is_err());
    }
}
