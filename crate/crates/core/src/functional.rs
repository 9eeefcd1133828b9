//! Estimating-equation map `Psi`, its population mean `Lambda`, and the
//! derivative of `Lambda` at the functional: boundary-sphere quadrature,
//! a finite-difference oracle, non-singularity diagnostics, inversion, and
//! the plug-in sandwich covariance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::density::{Density, Kde};
use crate::error::{shape_error, McdError, Result};
use crate::estimator::{McdFit, SampleSet};
use crate::linalg::{tangent_dim, SymMatrix, TangentCoords, TangentVector, ThetaParams};
use crate::quadrature::{BallRule, SphereRule};

/// Condition number at or above which a derivative map counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative margin below which a non-singularity condition is reported as failing.
pub const CONDITION_TOL: f64 = 1e-8;

/// `(Psi_1, Psi_2, Psi_3)` at one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiValue {
    pub v1: DVector<f64>,
    pub v2: SymMatrix,
    pub v3: f64,
}

impl PsiValue {
    pub fn to_coords(&self) -> TangentCoords {
        TangentVector {
            h: self.v1.clone(),
            a: self.v2.clone(),
            s: self.v3,
        }
        .to_coords()
    }

    pub fn from_coords(k: usize, c: &TangentCoords) -> Result<Self> {
        let t = TangentVector::from_coords(k, c)?;
        Ok(PsiValue {
            v1: t.h,
            v2: t.a,
            v3: t.s,
        })
    }
}

/// Evaluates `Psi(., theta)` with `G^{-1}` computed once.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    k: usize,
    m: DVector<f64>,
    g_inv: DMatrix<f64>,
    r: f64,
    gamma: f64,
}

impl PsiEvaluator {
    pub fn new(theta: &ThetaParams, gamma: f64) -> Self {
        PsiEvaluator {
            k: theta.dim(),
            m: theta.m.clone(),
            g_inv: theta.g.inverse(),
            r: theta.r,
            gamma,
        }
    }

    /// Writes `Psi(y)` in tangent coordinates into `out`; `z` is scratch of length `k`.
    pub fn coords_into(&self, y: &[f64], z: &mut [f64], out: &mut [f64]) {
        let k = self.k;
        for (a, za) in z.iter_mut().enumerate() {
            *za = (0..k).map(|b| self.g_inv[(a, b)] * (y[b] - self.m[b])).sum();
        }
        let inside = z.iter().map(|v| v * v).sum::<f64>() <= self.r * self.r;
        out.fill(0.0);
        if inside {
            out[..k].copy_from_slice(z);
            let mut idx = k;
            for a in 0..k {
                for b in a..k {
                    out[idx] = z[a] * z[b] - if a == b { 1.0 } else { 0.0 };
                    idx += 1;
                }
            }
        }
        out[tangent_dim(k) - 1] = if inside { 1.0 } else { 0.0 } - self.gamma;
    }

    pub fn eval(&self, y: &[f64]) -> Result<PsiValue> {
        if y.len() != self.k {
            return Err(shape_error(self.k, y.len()));
        }
        let mut z = vec![0.0; self.k];
        let mut out = vec![0.0; tangent_dim(self.k)];
        self.coords_into(y, &mut z, &mut out);
        PsiValue::from_coords(self.k, &TangentCoords(DVector::from_vec(out)))
    }
}

/// `Psi(y, theta)` with an inclusive indicator.
pub fn psi(y: &[f64], theta: &ThetaParams, gamma: f64) -> Result<PsiValue> {
    PsiEvaluator::new(theta, gamma).eval(y)
}

/// Product rule for `Lambda`: Gauss-Legendre radial nodes times a sphere rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaQuadrature {
    pub n_radial: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub tol: f64,
}

impl LambdaQuadrature {
    pub fn for_dim(k: usize) -> Self {
        let (n_polar, n_azimuth) = match k {
            1 => (1, 1),
            2 => (1, 256),
            3 => (40, 80),
            4 => (24, 48),
            _ => (12, 24),
        };
        LambdaQuadrature {
            n_radial: 32,
            n_polar,
            n_azimuth,
            tol: 1e-8,
        }
    }

    fn coarse(&self) -> Self {
        LambdaQuadrature {
            n_radial: (self.n_radial * 5 / 8).max(2),
            n_polar: (self.n_polar * 3 / 4).max(1),
            n_azimuth: (self.n_azimuth * 5 / 8).max(1),
            tol: self.tol,
        }
    }

    fn ball(&self, k: usize) -> BallRule {
        BallRule::new(k, self.n_radial, &SphereRule::with_resolution(k, self.n_polar, self.n_azimuth))
    }
}

/// `Lambda(theta)` and the difference to a coarser rule.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaValue {
    pub value: PsiValue,
    pub error: f64,
}

fn lambda_coords(theta: &ThetaParams, density: &dyn Density, gamma: f64, ball: &BallRule) -> DVector<f64> {
    let k = theta.dim();
    let d = tangent_dim(k);
    let g = theta.g.as_matrix();
    let det = theta.g.determinant();
    let r = theta.r;
    let scale = det * r.powi(k as i32);
    let per_node: Vec<Vec<f64>> = (0..ball.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let z: Vec<f64> = ball.point(i).iter().map(|v| v * r).collect();
            let y: Vec<f64> = (0..k).map(|a| theta.m[a] + (0..k).map(|b| g[(a, b)] * z[b]).sum::<f64>()).collect();
            let w = ball.weight(i) * density.pdf(&y);
            let mut out = vec![0.0; d];
            for a in 0..k {
                out[a] = w * z[a];
            }
            let mut idx = k;
            for a in 0..k {
                for b in a..k {
                    out[idx] = w * (z[a] * z[b] - if a == b { 1.0 } else { 0.0 });
                    idx += 1;
                }
            }
            out[d - 1] = w;
            out
        })
        .collect();
    let mut acc = DVector::zeros(d);
    for node in &per_node {
        for (a, v) in acc.iter_mut().zip(node) {
            *a += v;
        }
    }
    acc *= scale;
    acc[d - 1] -= gamma;
    acc
}

/// `Lambda(theta) = E Psi(X, theta)` over the ellipsoid, in `G^{-1}(y - m)` coordinates.
pub fn lambda(theta: &ThetaParams, density: &dyn Density, gamma: f64, quad: &LambdaQuadrature) -> Result<LambdaValue> {
    let k = theta.dim();
    if density.dim() != k {
        return Err(shape_error(k, density.dim()));
    }
    let fine = lambda_coords(theta, density, gamma, &quad.ball(k));
    let coarse = lambda_coords(theta, density, gamma, &quad.coarse().ball(k));
    let error = (&fine - &coarse).amax();
    if error > quad.tol {
        return Err(McdError::QuadratureError {
            estimate: error,
            tolerance: quad.tol,
        });
    }
    Ok(LambdaValue {
        value: PsiValue::from_coords(k, &TangentCoords(fine))?,
        error,
    })
}

/// Linear map on the tangent space, as a matrix in tangent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPrimeMap {
    pub k: usize,
    pub matrix: DMatrix<f64>,
}

impl LambdaPrimeMap {
    pub fn new(k: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let d = tangent_dim(k);
        if matrix.shape() != (d, d) {
            return Err(shape_error(format!("{d}x{d}"), format!("{}x{}", matrix.nrows(), matrix.ncols())));
        }
        Ok(LambdaPrimeMap { k, matrix })
    }

    pub fn apply(&self, t: &TangentVector) -> TangentVector {
        let out = &self.matrix * t.to_coords().0;
        TangentVector::from_coords(self.k, &TangentCoords(out)).expect("map preserves dimension")
    }

    /// Ratio of extreme singular values.
    pub fn condition_number(&self) -> f64 {
        let sv = self.matrix.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }

    /// Directions with singular value below `rel_tol` times the largest one.
    pub fn null_directions(&self, rel_tol: f64) -> Vec<TangentVector> {
        let svd = self.matrix.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let max = svd.singular_values.max();
        svd.singular_values
            .iter()
            .enumerate()
            .filter(|(_, s)| **s <= rel_tol * max)
            .map(|(i, _)| {
                let row = v_t.row(i).transpose();
                TangentVector::from_coords(self.k, &TangentCoords(row)).expect("row has tangent dimension")
            })
            .collect()
    }

    fn from_fn(k: usize, f: impl Fn(&TangentVector) -> Result<DVector<f64>>) -> Result<Self> {
        let d = tangent_dim(k);
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let t = TangentVector::from_coords(k, &TangentCoords::basis(k, j))?;
            m.set_column(j, &f(&t)?);
        }
        LambdaPrimeMap::new(k, m)
    }
}

/// Boundary measure `nu(dw) = det(G) f(G w + m) sigma(dw)` on the sphere of radius `r`.
#[derive(Debug, Clone)]
pub struct BoundaryMeasure {
    pub k: usize,
    pub radius: f64,
    /// Nodes on the sphere of radius `radius`, row-major.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BoundaryMeasure {
    pub fn new(theta: &ThetaParams, density: &dyn Density, rule: &SphereRule) -> Result<Self> {
        let k = theta.dim();
        if rule.dim() != k || density.dim() != k {
            return Err(shape_error(k, rule.dim()));
        }
        let rule = rule.scaled(theta.r);
        let det = theta.g.determinant();
        let g = theta.g.as_matrix();
        let mut nodes = Vec::with_capacity(k * rule.len());
        let mut weights = Vec::with_capacity(rule.len());
        let pdfs: Vec<f64> = (0..rule.len())
            .into_par_iter()
            .map(|i| {
                let w = rule.point(i);
                let y: Vec<f64> = (0..k).map(|a| theta.m[a] + (0..k).map(|b| g[(a, b)] * w[b]).sum::<f64>()).collect();
                density.pdf(&y)
            })
            .collect();
        for (i, f) in pdfs.into_iter().enumerate() {
            nodes.extend(rule.point(i));
            weights.push(rule.weight(i) * det * f);
        }
        Ok(BoundaryMeasure {
            k,
            radius: theta.r,
            nodes,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.k..(i + 1) * self.k]
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.node(i))).sum()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn derivative_from_boundary(theta: &ThetaParams, nu: &BoundaryMeasure, gamma: f64) -> Result<LambdaPrimeMap> {
    let k = theta.dim();
    let g_inv = theta.g.inverse();
    let rho = theta.r;
    LambdaPrimeMap::from_fn(k, |t| {
        let gh = &g_inv * &t.h;
        let a = t.a.as_matrix();
        let sym = &g_inv * a + a * &g_inv;
        let mut l1 = &gh * (-gamma);
        let mut l2 = &sym * (-gamma);
        let mut l3 = 0.0;
        for i in 0..nu.len() {
            let w = DVector::from_column_slice(nu.node(i));
            let factor = w.dot(&gh) / rho + (w.transpose() * &sym * &w)[0] / (2.0 * rho) + t.s;
            let c = factor * nu.weights[i];
            l1 += &w * c;
            l2 += (&w * w.transpose() - DMatrix::identity(k, k)) * c;
            l3 += c;
        }
        Ok(TangentVector {
            h: l1,
            a: SymMatrix::new(l2)?,
            s: l3,
        }
        .to_coords()
        .0)
    })
}

/// Derivative of `Lambda` at `theta0` by quadrature of the boundary measure.
pub fn lambda_prime_analytic(
    theta0: &ThetaParams,
    density: &dyn Density,
    gamma: f64,
    rule: &SphereRule,
) -> Result<LambdaPrimeMap> {
    let nu = BoundaryMeasure::new(theta0, density, rule)?;
    derivative_from_boundary(theta0, &nu, gamma)
}

/// Central differences of `lambda` along every tangent coordinate.
pub fn lambda_prime_fd(
    theta0: &ThetaParams,
    density: &dyn Density,
    gamma: f64,
    step: f64,
    quad: &LambdaQuadrature,
) -> Result<LambdaPrimeMap> {
    if !(step > 0.0) {
        return Err(McdError::InvalidInput(format!("step must be positive, got {step}")));
    }
    let k = theta0.dim();
    LambdaPrimeMap::from_fn(k, |t| {
        let plus = lambda(&theta0.perturbed(t, step)?, density, gamma, quad)?;
        let minus = lambda(&theta0.perturbed(t, -step)?, density, gamma, quad)?;
        Ok((plus.value.to_coords().0 - minus.value.to_coords().0) / (2.0 * step))
    })
}

/// Inverse map, refused when ill-conditioned.
pub fn invert_map(map: &LambdaPrimeMap) -> Result<LambdaPrimeMap> {
    let condition = map.condition_number();
    if !(condition < MAX_CONDITION) {
        return Err(McdError::SingularDerivative { condition });
    }
    let inv = map
        .matrix
        .clone()
        .try_inverse()
        .ok_or(McdError::SingularDerivative { condition })?;
    let d = inv.nrows();
    let residual = (&map.matrix * &inv - DMatrix::identity(d, d)).amax();
    if residual >= 1e-9 {
        return Err(McdError::SingularDerivative { condition });
    }
    LambdaPrimeMap::new(map.k, inv)
}

/// Sphere moments of the boundary measure and the sufficient conditions
/// for a non-singular derivative.
#[derive(Debug, Clone)]
pub struct NonsingularityReport {
    pub nu0: f64,
    /// `int w_i^2 nu(dw)`.
    pub second_moments: Vec<f64>,
    /// `int w_i^2 w_j^2 nu(dw)`.
    pub fourth_moments: DMatrix<f64>,
    pub m_matrix: DMatrix<f64>,
    /// `gamma * rho0`, the value the moments must avoid.
    pub gamma_rho0: f64,
    /// `min_i |int w_i^2 nu - gamma rho0|`.
    pub second_moment_margin: f64,
    /// `min_{i != j} |int w_i^2 w_j^2 nu - gamma rho0|` (infinite for `k = 1`).
    pub fourth_moment_margin: f64,
    /// Smallest singular value of `M` restricted to the zero-sum hyperplane
    /// (infinite for `k = 1`, where the hyperplane is trivial).
    pub m_margin: f64,
    pub second_moment_ok: bool,
    pub fourth_moment_ok: bool,
    pub m_ok: bool,
    /// Least-squares fit `M ~ c1 I + c2 11'`.
    pub c1: f64,
    pub c2: f64,
    pub decomposition_residual: f64,
}

impl NonsingularityReport {
    pub fn all_pass(&self) -> bool {
        self.second_moment_ok && self.fourth_moment_ok && self.m_ok
    }
}

/// Orthonormal basis of `{x : sum x = 0}` as columns.
fn zero_sum_basis(k: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(k, k - 1);
    for j in 0..k - 1 {
        a[(j, j)] = 1.0;
        a[(k - 1, j)] = -1.0;
    }
    a.qr().q()
}

pub fn nonsingularity_report(
    theta0: &ThetaParams,
    density: &dyn Density,
    gamma: f64,
    rule: &SphereRule,
) -> Result<NonsingularityReport> {
    let k = theta0.dim();
    let nu = BoundaryMeasure::new(theta0, density, rule)?;
    let nu0 = nu.total();
    let second: Vec<f64> = (0..k).map(|i| nu.integrate(|w| w[i] * w[i])).collect();
    let fourth = DMatrix::from_fn(k, k, |i, j| nu.integrate(|w| w[i] * w[i] * w[j] * w[j]));
    let gamma_rho0 = gamma * theta0.r;
    let m = DMatrix::from_fn(k, k, |i, j| {
        fourth[(i, j)] - second[i] * second[j] / nu0 - if i == j { 2.0 * gamma_rho0 } else { 0.0 }
    });
    let second_margin = second.iter().map(|s| (s - gamma_rho0).abs()).fold(f64::INFINITY, f64::min);
    let mut fourth_margin = f64::INFINITY;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                fourth_margin = fourth_margin.min((fourth[(i, j)] - gamma_rho0).abs());
            }
        }
    }
    let m_margin = if k >= 2 {
        (&m * zero_sum_basis(k)).singular_values().min()
    } else {
        f64::INFINITY
    };
    let diag_mean = (0..k).map(|i| m[(i, i)]).sum::<f64>() / k as f64;
    let c2 = if k >= 2 {
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    s += m[(i, j)];
                }
            }
        }
        s / (k * (k - 1)) as f64
    } else {
        0.0
    };
    let c1 = diag_mean - c2;
    let fitted = DMatrix::identity(k, k) * c1 + DMatrix::from_element(k, k, c2);
    let scale = CONDITION_TOL * gamma_rho0;
    Ok(NonsingularityReport {
        nu0,
        second_moment_ok: second_margin > scale,
        fourth_moment_ok: fourth_margin > scale,
        m_ok: m_margin > scale,
        second_moments: second,
        fourth_moments: fourth,
        decomposition_residual: (&m - fitted).norm(),
        m_matrix: m,
        gamma_rho0,
        second_moment_margin: second_margin,
        fourth_moment_margin: fourth_margin,
        m_margin,
        c1,
        c2,
    })
}

/// Radius direction forced by a shape direction `A` when the derivative
/// vanishes at a point-symmetric law:
/// `s = -(1 / (2 rho0 nu0)) int w'(G^{-1}A + AG^{-1})w nu(dw)`.
pub fn radius_for_shape(theta0: &ThetaParams, density: &dyn Density, rule: &SphereRule, a: &SymMatrix) -> Result<f64> {
    let nu = BoundaryMeasure::new(theta0, density, rule)?;
    let g_inv = theta0.g.inverse();
    let sym = &g_inv * a.as_matrix() + a.as_matrix() * &g_inv;
    let q = nu.integrate(|w| {
        let w = DVector::from_column_slice(w);
        (w.transpose() * &sym * &w)[0]
    });
    Ok(-q / (2.0 * theta0.r * nu.total()))
}

/// Kernel bandwidth for the plug-in density estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Per coordinate `n^{-1/(k+4)}` times the sample standard deviation.
    Auto,
    /// The same bandwidth in every coordinate.
    Fixed(f64),
}

/// Density used on the estimated boundary ellipsoid.
#[derive(Clone, Copy)]
pub enum PlugInDensity<'a> {
    Kde(Bandwidth),
    Oracle(&'a dyn Density),
}

/// Estimated derivative at the fitted parameters.
pub fn plug_in_lambda_prime(
    samples: &SampleSet,
    fit: &McdFit,
    density: PlugInDensity<'_>,
    rule: &SphereRule,
) -> Result<LambdaPrimeMap> {
    let theta = fit.theta();
    match density {
        PlugInDensity::Oracle(f) => lambda_prime_analytic(&theta, f, fit.gamma, rule),
        PlugInDensity::Kde(bw) => {
            let k = samples.dim();
            let bandwidths = match bw {
                Bandwidth::Auto => Kde::default_bandwidths(k, samples.as_flat()),
                Bandwidth::Fixed(b) => {
                    if !(b > 0.0 && b.is_finite()) {
                        return Err(McdError::BadBandwidth(b));
                    }
                    vec![b; k]
                }
            };
            let kde = Kde::new(k, samples.as_flat().to_vec(), bandwidths)?;
            lambda_prime_analytic(&theta, &kde, fit.gamma, rule)
        }
    }
}

/// Sample covariance (divisor `n - 1`) of `map^{-1} Psi(X_i, theta_hat)`.
pub fn sandwich_covariance(samples: &SampleSet, fit: &McdFit, map: &LambdaPrimeMap) -> Result<DMatrix<f64>> {
    let inv = invert_map(map)?;
    let k = samples.dim();
    let d = tangent_dim(k);
    let n = samples.n();
    if n < 2 {
        return Err(McdError::InvalidInput("need at least two observations".into()));
    }
    let eval = PsiEvaluator::new(&fit.theta(), fit.gamma);
    let mut z = vec![0.0; k];
    let mut psi = vec![0.0; d];
    let mut scores = DMatrix::zeros(d, n);
    for (i, x) in samples.rows().enumerate() {
        eval.coords_into(x, &mut z, &mut psi);
        scores.set_column(i, &(&inv.matrix * DVector::from_column_slice(&psi)));
    }
    let mean = scores.column_mean();
    for mut col in scores.column_iter_mut() {
        col -= &mean;
    }
    Ok(&scores * scores.transpose() / (n as f64 - 1.0))
}
