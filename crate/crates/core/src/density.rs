//! Density models: radial generators of elliptically contoured laws,
//! products of symmetric marginals, the name registry, and a product-kernel
//! density estimate.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{McdError, Result};
use crate::linalg::{pds_sqrt, PdsMatrix};
use crate::quadrature::{integrate, unit_ball_volume, unit_sphere_area};

/// A probability density on `R^k`.
pub trait Density: Sync {
    fn dim(&self) -> usize;
    fn pdf(&self, x: &[f64]) -> f64;
}

/// Radial generator families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialFamily {
    Gaussian,
    StudentT { nu: f64 },
    UniformBall { radius: f64 },
}

/// Radial generator `h` of a spherically symmetric density `f(x) = h(|x|^2)`
/// in dimension `k`, normalized so that `f` integrates to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialDensity {
    family: RadialFamily,
    k: usize,
    log_norm: f64,
}

impl RadialDensity {
    pub fn gaussian(k: usize) -> Self {
        Self::new(RadialFamily::Gaussian, k).expect("gaussian generator is valid")
    }

    pub fn student_t(k: usize, nu: f64) -> Result<Self> {
        Self::new(RadialFamily::StudentT { nu }, k)
    }

    pub fn uniform_ball(k: usize, radius: f64) -> Result<Self> {
        Self::new(RadialFamily::UniformBall { radius }, k)
    }

    pub fn new(family: RadialFamily, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(McdError::InvalidInput("dimension must be positive".into()));
        }
        let kf = k as f64;
        let log_norm = match family {
            RadialFamily::Gaussian => -0.5 * kf * (2.0 * PI).ln(),
            RadialFamily::StudentT { nu } => {
                if !(nu > 0.0 && nu.is_finite()) {
                    return Err(McdError::InvalidInput(format!("degrees of freedom must be positive, got {nu}")));
                }
                ln_gamma(0.5 * (nu + kf)) - ln_gamma(0.5 * nu) - 0.5 * kf * (nu * PI).ln()
            }
            RadialFamily::UniformBall { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(McdError::InvalidInput(format!("ball radius must be positive, got {radius}")));
                }
                -(unit_ball_volume(k) * radius.powi(k as i32)).ln()
            }
        };
        Ok(RadialDensity { family, k, log_norm })
    }

    pub fn family(&self) -> RadialFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `h(s)` for squared radius `s`.
    pub fn h(&self, s: f64) -> f64 {
        match self.family {
            RadialFamily::Gaussian => (self.log_norm - 0.5 * s).exp(),
            RadialFamily::StudentT { nu } => {
                (self.log_norm - 0.5 * (nu + self.k as f64) * (s / nu).ln_1p()).exp()
            }
            RadialFamily::UniformBall { radius } => {
                if s <= radius * radius {
                    self.log_norm.exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Radius beyond which `h` vanishes, if any.
    pub fn support_radius(&self) -> Option<f64> {
        match self.family {
            RadialFamily::UniformBall { radius } => Some(radius),
            _ => None,
        }
    }

    /// `(2 pi^{k/2}/Gamma(k/2)) int_0^upper h(s^2) s^{k-1+p} ds`, which is
    /// `E[1{|X| <= upper} |X|^p]`.
    pub fn radial_integral(&self, upper: f64, p: i32) -> Result<f64> {
        let upper = match self.support_radius() {
            Some(r) => upper.min(r),
            None => upper,
        };
        if upper <= 0.0 {
            return Ok(0.0);
        }
        let e = self.k as i32 - 1 + p;
        let (v, _) = integrate(|s| self.h(s * s) * s.powi(e), 0.0, upper, 1e-15)?;
        Ok(unit_sphere_area(self.k) * v)
    }

    /// `E[g(|X|)]` over the whole space.
    pub fn radial_expectation<F: Fn(f64) -> f64>(&self, g: F) -> Result<f64> {
        let area = unit_sphere_area(self.k);
        let e = self.k as i32 - 1;
        if let Some(r) = self.support_radius() {
            let (v, _) = integrate(|s| g(s) * self.h(s * s) * s.powi(e), 0.0, r, 1e-14)?;
            return Ok(area * v);
        }
        // s = t / (1 - t) maps [0, 1) onto [0, inf)
        let (v, _) = integrate(
            |t| {
                if t >= 1.0 {
                    return 0.0;
                }
                let s = t / (1.0 - t);
                let jac = 1.0 / ((1.0 - t) * (1.0 - t));
                let val = g(s) * self.h(s * s) * s.powi(e) * jac;
                if val.is_finite() {
                    val
                } else {
                    0.0
                }
            },
            0.0,
            1.0,
            1e-13,
        )?;
        Ok(area * v)
    }

    /// Checks normalization (`int f = 1` to 1e-8) and monotonicity on a grid.
    pub fn validate(&self) -> Result<()> {
        let mass = self.radial_expectation(|_| 1.0)?;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(McdError::InvalidInput(format!("radial density integrates to {mass}")));
        }
        let mut prev = f64::INFINITY;
        for i in 0..2000 {
            let s = i as f64 * 0.01;
            let v = self.h(s);
            if v > prev * (1.0 + 1e-12) {
                return Err(McdError::InvalidInput(format!("radial generator increases at s = {s}")));
            }
            prev = v;
        }
        Ok(())
    }

    /// Draws a spherically symmetric vector (Gaussian and Student-t only).
    pub fn sample_standard<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let z: Vec<f64> = (0..self.k).map(|_| rng.sample(StandardNormal)).collect();
        match self.family {
            RadialFamily::Gaussian => Ok(z),
            RadialFamily::StudentT { nu } => {
                let chi = ChiSquared::new(nu).map_err(|e| McdError::InvalidInput(e.to_string()))?;
                let w: f64 = chi.sample(rng);
                let scale = (nu / w).sqrt();
                Ok(z.into_iter().map(|v| v * scale).collect())
            }
            RadialFamily::UniformBall { .. } => Err(McdError::UnknownModel(
                "uniform_ball has no sampler".to_string(),
            )),
        }
    }
}

impl Density for RadialDensity {
    fn dim(&self) -> usize {
        self.k
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        self.h(x.iter().map(|v| v * v).sum())
    }
}

/// Elliptically contoured density `det(S)^{-1/2} h((x-mu)' S^{-1} (x-mu))`.
#[derive(Debug, Clone)]
pub struct EllipticalDensity {
    pub radial: RadialDensity,
    pub mu: DVector<f64>,
    pub sigma: PdsMatrix,
    sigma_inv: DMatrix<f64>,
    sigma_root: PdsMatrix,
    inv_sqrt_det: f64,
}

impl EllipticalDensity {
    pub fn new(radial: RadialDensity, mu: DVector<f64>, sigma: PdsMatrix) -> Result<Self> {
        if mu.len() != radial.dim() || sigma.dim() != radial.dim() {
            return Err(crate::error::shape_error(radial.dim(), mu.len()));
        }
        let sigma_inv = sigma.inverse();
        let sigma_root = pds_sqrt(&sigma);
        let inv_sqrt_det = 1.0 / sigma.determinant().sqrt();
        Ok(EllipticalDensity {
            radial,
            mu,
            sigma,
            sigma_inv,
            sigma_root,
            inv_sqrt_det,
        })
    }

    pub fn spherical(radial: RadialDensity) -> Self {
        let k = radial.dim();
        Self::new(radial, DVector::zeros(k), PdsMatrix::identity(k)).expect("identity scatter is valid")
    }

    /// `mu + S^{1/2} z` with `z` spherically symmetric.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let z = DVector::from_vec(self.radial.sample_standard(rng)?);
        Ok((self.sigma_root.as_matrix() * z + &self.mu).iter().copied().collect())
    }
}

impl Density for EllipticalDensity {
    fn dim(&self) -> usize {
        self.radial.dim()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let k = self.dim();
        let mut q = 0.0;
        for i in 0..k {
            let di = x[i] - self.mu[i];
            for j in 0..k {
                q += di * self.sigma_inv[(i, j)] * (x[j] - self.mu[j]);
            }
        }
        self.inv_sqrt_det * self.radial.h(q)
    }
}

/// One-dimensional densities symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Normal,
    Logistic,
    Laplace,
}

impl Marginal {
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Marginal::Normal => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            Marginal::Logistic => {
                let e = (-x.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            Marginal::Laplace => 0.5 * (-x.abs()).exp(),
        }
    }

    fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "normal" | "gaussian" => Ok(Marginal::Normal),
            "logistic" => Ok(Marginal::Logistic),
            "laplace" => Ok(Marginal::Laplace),
            other => Err(McdError::UnknownModel(other.to_string())),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Marginal::Normal => "normal",
            Marginal::Logistic => "logistic",
            Marginal::Laplace => "laplace",
        }
    }
}

/// Product of symmetric one-dimensional marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSymmetric {
    pub marginals: Vec<Marginal>,
}

impl Density for ProductSymmetric {
    fn dim(&self) -> usize {
        self.marginals.len()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        self.marginals.iter().zip(x).map(|(m, v)| m.pdf(*v)).product()
    }
}

/// Named density models: `gaussian`, `student_t(nu)`, `uniform_ball`,
/// `product_symmetric(normal,logistic,...)`.
#[derive(Debug, Clone)]
pub enum DensityModel {
    Elliptical(EllipticalDensity),
    Product(ProductSymmetric),
}

/// Parsed model name, independent of dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Gaussian,
    StudentT(f64),
    UniformBall,
    ProductSymmetric(Vec<Marginal>),
}

impl ModelSpec {
    /// Parses a registry name. `nu` supplies the degrees of freedom when
    /// `student_t` is given without a parenthesized argument.
    pub fn parse(name: &str, nu: Option<f64>) -> Result<Self> {
        let name = name.trim();
        let (head, arg) = match name.find('(') {
            Some(i) if name.ends_with(')') => (&name[..i], Some(&name[i + 1..name.len() - 1])),
            Some(_) => return Err(McdError::UnknownModel(name.to_string())),
            None => (name, None),
        };
        match head {
            "gaussian" | "normal" if arg.is_none() => Ok(ModelSpec::Gaussian),
            "student_t" | "t" => {
                let v = match arg {
                    Some(a) => a
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| McdError::UnknownModel(name.to_string()))?,
                    None => nu.ok_or_else(|| McdError::UnknownModel(format!("{name} needs degrees of freedom")))?,
                };
                if !(v > 0.0 && v.is_finite()) {
                    return Err(McdError::UnknownModel(name.to_string()));
                }
                Ok(ModelSpec::StudentT(v))
            }
            "uniform_ball" if arg.is_none() => Ok(ModelSpec::UniformBall),
            "product_symmetric" => {
                let list = arg.ok_or_else(|| McdError::UnknownModel(name.to_string()))?;
                let marginals = list.split(',').map(Marginal::parse).collect::<Result<Vec<_>>>()?;
                if marginals.is_empty() {
                    return Err(McdError::UnknownModel(name.to_string()));
                }
                Ok(ModelSpec::ProductSymmetric(marginals))
            }
            _ => Err(McdError::UnknownModel(name.to_string())),
        }
    }

    /// Radial generator in dimension `k`, for the elliptical members.
    pub fn radial(&self, k: usize) -> Result<RadialDensity> {
        match self {
            ModelSpec::Gaussian => Ok(RadialDensity::gaussian(k)),
            ModelSpec::StudentT(nu) => RadialDensity::student_t(k, *nu),
            ModelSpec::UniformBall => RadialDensity::uniform_ball(k, 1.0),
            ModelSpec::ProductSymmetric(_) => Err(McdError::UnknownModel(format!(
                "{self} is not elliptically contoured"
            ))),
        }
    }

    /// Standard (spherical or unit-scale product) model in dimension `k`.
    pub fn build(&self, k: usize) -> Result<DensityModel> {
        match self {
            ModelSpec::ProductSymmetric(m) => {
                let marginals = if m.len() == 1 { vec![m[0]; k] } else { m.clone() };
                if marginals.len() != k {
                    return Err(crate::error::shape_error(k, marginals.len()));
                }
                Ok(DensityModel::Product(ProductSymmetric { marginals }))
            }
            _ => Ok(DensityModel::Elliptical(EllipticalDensity::spherical(self.radial(k)?))),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Gaussian => write!(f, "gaussian"),
            ModelSpec::StudentT(nu) => write!(f, "student_t({nu})"),
            ModelSpec::UniformBall => write!(f, "uniform_ball"),
            ModelSpec::ProductSymmetric(m) => {
                let names: Vec<&str> = m.iter().map(|x| x.name()).collect();
                write!(f, "product_symmetric({})", names.join(","))
            }
        }
    }
}

impl Density for DensityModel {
    fn dim(&self) -> usize {
        match self {
            DensityModel::Elliptical(e) => e.dim(),
            DensityModel::Product(p) => p.dim(),
        }
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        match self {
            DensityModel::Elliptical(e) => e.pdf(x),
            DensityModel::Product(p) => p.pdf(x),
        }
    }
}

/// Gaussian product-kernel density estimate.
#[derive(Debug, Clone)]
pub struct Kde {
    k: usize,
    data: Vec<f64>,
    bandwidths: Vec<f64>,
    log_norm: f64,
}

impl Kde {
    /// `data` is row-major with `k` columns.
    pub fn new(k: usize, data: Vec<f64>, bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.len() != k || !data.len().is_multiple_of(k) || data.is_empty() {
            return Err(crate::error::shape_error(k, bandwidths.len()));
        }
        if let Some(&b) = bandwidths.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(McdError::BadBandwidth(b));
        }
        let n = data.len() / k;
        let log_norm = -(n as f64).ln()
            - 0.5 * k as f64 * (2.0 * PI).ln()
            - bandwidths.iter().map(|b| b.ln()).sum::<f64>();
        Ok(Kde {
            k,
            data,
            bandwidths,
            log_norm,
        })
    }

    /// Per-coordinate `n^{-1/(k+4)}` times the sample standard deviation.
    pub fn default_bandwidths(k: usize, data: &[f64]) -> Vec<f64> {
        let n = data.len() / k;
        let factor = (n as f64).powf(-1.0 / (k as f64 + 4.0));
        (0..k)
            .map(|j| {
                let mean = (0..n).map(|i| data[i * k + j]).sum::<f64>() / n as f64;
                let var = (0..n).map(|i| (data[i * k + j] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
                factor * var.sqrt()
            })
            .collect()
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }
}

impl Density for Kde {
    fn dim(&self) -> usize {
        self.k
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let k = self.k;
        let mut acc = 0.0;
        for row in self.data.chunks_exact(k) {
            let mut q = 0.0;
            for j in 0..k {
                let u = (x[j] - row[j]) / self.bandwidths[j];
                q += u * u;
            }
            acc += (-0.5 * q).exp();
        }
        acc * self.log_norm.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{BallRule, SphereRule};

    #[test]
    fn registry_parses_names() {
        assert_eq!(ModelSpec::parse("gaussian", None).unwrap(), ModelSpec::Gaussian);
        assert_eq!(ModelSpec::parse("student_t(5)", None).unwrap(), ModelSpec::StudentT(5.0));
        assert_eq!(ModelSpec::parse("student_t", Some(3.0)).unwrap(), ModelSpec::StudentT(3.0));
        assert!(ModelSpec::parse("student_t", None).is_err());
        assert_eq!(ModelSpec::parse("uniform_ball", None).unwrap(), ModelSpec::UniformBall);
        assert_eq!(
            ModelSpec::parse("product_symmetric(normal,laplace)", None).unwrap(),
            ModelSpec::ProductSymmetric(vec![Marginal::Normal, Marginal::Laplace])
        );
        assert!(matches!(ModelSpec::parse("cauchy", None), Err(McdError::UnknownModel(_))));
        let spec = ModelSpec::parse("product_symmetric(logistic)", None).unwrap();
        assert_eq!(spec.build(3).unwrap().dim(), 3);
    }

    #[test]
    fn radial_generators_are_normalized() {
        for k in 1..=4 {
            RadialDensity::gaussian(k).validate().unwrap();
            RadialDensity::student_t(k, 5.0).unwrap().validate().unwrap();
            RadialDensity::uniform_ball(k, 1.3).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn elliptical_density_integrates_to_one() {
        let sigma = PdsMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let d = EllipticalDensity::new(RadialDensity::gaussian(2), DVector::from_vec(vec![1.0, -1.0]), sigma).unwrap();
        let root = pds_sqrt(&d.sigma);
        let det = d.sigma.determinant().sqrt();
        // integrate over a large ball in whitened coordinates
        let ball = BallRule::new(2, 64, &SphereRule::new(2));
        let mass = ball.integrate(12.0, |z| {
            let y = root.as_matrix() * DVector::from_column_slice(z) + &d.mu;
            d.pdf(y.as_slice()) * det
        });
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kde_rejects_bad_bandwidth() {
        assert!(matches!(Kde::new(1, vec![0.0, 1.0], vec![0.0]), Err(McdError::BadBandwidth(_))));
        assert!(matches!(Kde::new(1, vec![0.0, 1.0], vec![-1.0]), Err(McdError::BadBandwidth(_))));
        let kde = Kde::new(1, vec![0.0], vec![1.0]).unwrap();
        assert!((kde.pdf(&[0.0]) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
    }
}
