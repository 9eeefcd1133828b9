//! Gauss-Legendre rules, adaptive one-dimensional integration, and product
//! rules on spheres and balls in `R^k`.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use crate::error::{McdError, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

struct Panel {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Panel {
    fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Panel { nodes, weights }
    }

    fn apply<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

/// Adaptive Gauss-Legendre integration of `f` over `[a, b]`.
///
/// Each panel is accepted when the 20-point value agrees with the sum over
/// its two halves to within the local share of `tol` (absolute or relative
/// to the running magnitude). Returns `(value, error_estimate)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let panel = Panel::new(20);
    let whole = panel.apply(&f, a, b);
    let mut stack = vec![(a, b, whole, 0usize)];
    let mut total = 0.0;
    let mut err_total = 0.0;
    let scale = whole.abs().max(f64::MIN_POSITIVE);
    let width = b - a;
    while let Some((lo, hi, coarse, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = panel.apply(&f, lo, mid);
        let right = panel.apply(&f, mid, hi);
        let fine = left + right;
        let err = (fine - coarse).abs();
        let local_tol = (tol * (hi - lo) / width).max(4.0 * f64::EPSILON * scale * (hi - lo) / width);
        if err <= local_tol || depth >= 48 {
            if depth >= 48 && err > tol {
                return Err(McdError::QuadratureError {
                    estimate: err,
                    tolerance: tol,
                });
            }
            total += fine;
            err_total += err;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    Ok((total, err_total))
}

/// Surface area of the unit sphere in `R^k`: `2 pi^{k/2} / Gamma(k/2)`.
pub fn unit_sphere_area(k: usize) -> f64 {
    let kf = k as f64;
    (2.0f64.ln() + 0.5 * kf * PI.ln() - ln_gamma(0.5 * kf)).exp()
}

/// Volume of the unit ball in `R^k`.
pub fn unit_ball_volume(k: usize) -> f64 {
    unit_sphere_area(k) / k as f64
}

/// Product rule on the sphere `{|w| = radius}` in `R^k`.
///
/// `k = 2` uses the trapezoid rule in the angle; `k >= 3` recurses with
/// Gauss-Legendre nodes in each polar angle (the `sin^j` Jacobian folded into
/// the weights) and the trapezoid rule in the final azimuth.
#[derive(Debug, Clone)]
pub struct SphereRule {
    k: usize,
    radius: f64,
    // unit-sphere nodes, row-major (len = n * k)
    unit_points: Vec<f64>,
    unit_weights: Vec<f64>,
}

impl SphereRule {
    /// Default resolution for dimension `k` on the unit sphere.
    pub fn new(k: usize) -> Self {
        let (polar, azimuth) = default_resolution(k);
        Self::with_resolution(k, polar, azimuth)
    }

    pub fn with_resolution(k: usize, n_polar: usize, n_azimuth: usize) -> Self {
        assert!(k >= 1, "sphere dimension must be positive");
        let (unit_points, unit_weights) = unit_sphere_nodes(k, n_polar, n_azimuth);
        SphereRule {
            k,
            radius: 1.0,
            unit_points,
            unit_weights,
        }
    }

    /// Same nodes moved to the sphere of the given radius.
    pub fn scaled(&self, radius: f64) -> Self {
        SphereRule {
            radius,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.unit_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_weights.is_empty()
    }

    /// Unit-sphere direction of node `i`.
    pub fn direction(&self, i: usize) -> &[f64] {
        &self.unit_points[i * self.k..(i + 1) * self.k]
    }

    /// Node `i` on the sphere of radius `self.radius()`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.direction(i).iter().map(|u| u * self.radius).collect()
    }

    /// Surface-measure weight of node `i` on the scaled sphere.
    pub fn weight(&self, i: usize) -> f64 {
        self.unit_weights[i] * self.radius.powi(self.k as i32 - 1)
    }

    pub fn total_weight(&self) -> f64 {
        (0..self.len()).map(|i| self.weight(i)).sum()
    }

    /// Integral of `f` against surface measure.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        (0..self.len()).map(|i| self.weight(i) * f(&self.point(i))).sum()
    }
}

fn default_resolution(k: usize) -> (usize, usize) {
    match k {
        1 => (1, 1),
        2 => (1, 256),
        3 => (48, 96),
        4 => (32, 64),
        _ => (16, 32),
    }
}

fn unit_sphere_nodes(k: usize, n_polar: usize, n_azimuth: usize) -> (Vec<f64>, Vec<f64>) {
    match k {
        1 => (vec![-1.0, 1.0], vec![1.0, 1.0]),
        2 => {
            let step = 2.0 * PI / n_azimuth as f64;
            let mut pts = Vec::with_capacity(2 * n_azimuth);
            for j in 0..n_azimuth {
                let phi = step * j as f64;
                pts.push(phi.cos());
                pts.push(phi.sin());
            }
            (pts, vec![step; n_azimuth])
        }
        _ => {
            let (inner_pts, inner_w) = unit_sphere_nodes(k - 1, n_polar, n_azimuth);
            let (theta, wt) = gauss_legendre_on(n_polar, 0.0, PI);
            let m = inner_w.len();
            let mut pts = Vec::with_capacity(k * m * n_polar);
            let mut w = Vec::with_capacity(m * n_polar);
            for (t, wt) in theta.iter().zip(&wt) {
                let (s, c) = t.sin_cos();
                let jac = s.powi(k as i32 - 2);
                for j in 0..m {
                    pts.push(c);
                    pts.extend(inner_pts[j * (k - 1)..(j + 1) * (k - 1)].iter().map(|u| u * s));
                    w.push(wt * jac * inner_w[j]);
                }
            }
            (pts, w)
        }
    }
}

/// Product rule on the ball `{|z| <= 1}`: Gauss-Legendre in the radius
/// (with the `s^{k-1}` Jacobian) times a sphere rule.
#[derive(Debug, Clone)]
pub struct BallRule {
    k: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl BallRule {
    pub fn new(k: usize, n_radial: usize, sphere: &SphereRule) -> Self {
        assert_eq!(sphere.dim(), k);
        let (rad, wr) = gauss_legendre_on(n_radial, 0.0, 1.0);
        let mut points = Vec::with_capacity(k * n_radial * sphere.len());
        let mut weights = Vec::with_capacity(n_radial * sphere.len());
        for (s, w) in rad.iter().zip(&wr) {
            let jac = w * s.powi(k as i32 - 1);
            for i in 0..sphere.len() {
                points.extend(sphere.direction(i).iter().map(|u| u * s));
                weights.push(jac * sphere.unit_weights[i]);
            }
        }
        BallRule { k, points, weights }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Node `i` in the unit ball.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.k..(i + 1) * self.k]
    }

    /// Lebesgue weight of node `i` in the unit ball.
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Integral of `f` over the ball of radius `radius`.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, radius: f64, f: F) -> f64 {
        let scale = radius.powi(self.k as i32);
        let mut z = vec![0.0; self.k];
        let mut acc = 0.0;
        for i in 0..self.len() {
            for (zj, pj) in z.iter_mut().zip(self.point(i)) {
                *zj = pj * radius;
            }
            acc += self.weights[i] * f(&z);
        }
        acc * scale
    }
}
