//! Closed-form constants of the MCD functional at elliptically contoured
//! laws: the radial quantile and scale, the derivative map and its inverse,
//! the coefficients of the linear expansion, limiting variances, and
//! influence functions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::density::RadialDensity;
use crate::error::{shape_error, McdError, Result};
use crate::linalg::{
    commutation_matrix, kron, pds_sqrt, tangent_dim, vec, PdsMatrix, SymMatrix, TangentCoords, TangentVector,
    ThetaParams,
};
use crate::quadrature::{integrate, unit_sphere_area, SphereRule};

fn check_open_fraction(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(McdError::BadFraction(gamma))
    }
}

/// `E[1{|X| <= r} |X|^p]` for `p` in `{0, 2, 4}`.
pub fn truncated_radial_moment(model: &RadialDensity, r: f64, p: u32) -> Result<f64> {
    if !matches!(p, 0 | 2 | 4) {
        return Err(McdError::InvalidInput(format!("moment order must be 0, 2 or 4, got {p}")));
    }
    model.radial_integral(r, p as i32)
}

/// `E[1{|X| <= r} g(|X|)]` by adaptive radial quadrature.
pub fn truncated_expectation<F: Fn(f64) -> f64>(model: &RadialDensity, r: f64, g: F) -> Result<f64> {
    let upper = model.support_radius().map_or(r, |s| r.min(s));
    let e = model.dim() as i32 - 1;
    let (v, _) = integrate(|s| g(s) * model.h(s * s) * s.powi(e), 0.0, upper, 1e-14)?;
    Ok(unit_sphere_area(model.dim()) * v)
}

/// Radius `r` with `P(|X| <= r) = gamma`.
pub fn r_gamma(model: &RadialDensity, gamma: f64) -> Result<f64> {
    check_open_fraction(gamma)?;
    let mass = |r: f64| model.radial_integral(r, 0);
    const MAX_UPPER: f64 = 1e8;
    let mut lo = 0.0;
    let mut hi = model.support_radius().unwrap_or(1.0);
    while mass(hi)? < gamma {
        lo = hi;
        hi *= 2.0;
        if hi > MAX_UPPER {
            return Err(McdError::BracketError { gamma, upper: MAX_UPPER });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid)? < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-8 * hi {
            break;
        }
    }
    // Newton polish; the derivative of the mass is the radial density.
    let area = unit_sphere_area(model.dim());
    let k = model.dim() as i32;
    let mut r = 0.5 * (lo + hi);
    for _ in 0..20 {
        let f = mass(r)? - gamma;
        if f.abs() < 1e-14 {
            break;
        }
        let df = area * model.h(r * r) * r.powi(k - 1);
        if df <= 0.0 {
            break;
        }
        let next = (r - f / df).clamp(lo, hi);
        if (next - r).abs() <= 1e-16 * r {
            r = next;
            break;
        }
        r = next;
    }
    Ok(r)
}

/// Scale `alpha` with `alpha^2 = E[1{|X| <= r}|X|^2] / (k gamma)`.
pub fn alpha_gamma(model: &RadialDensity, gamma: f64, r: f64) -> Result<f64> {
    check_open_fraction(gamma)?;
    let m2 = model.radial_integral(r, 2)?;
    Ok((m2 / (model.dim() as f64 * gamma)).sqrt())
}

/// MCD functional at the elliptical law with location `mu` and scatter
/// `sigma`: `(mu, alpha sigma^{1/2}, r / alpha)`.
pub fn theta0_elliptical(
    mu: &DVector<f64>,
    sigma: &PdsMatrix,
    model: &RadialDensity,
    gamma: f64,
) -> Result<ThetaParams> {
    if mu.len() != model.dim() || sigma.dim() != model.dim() {
        return Err(shape_error(model.dim(), mu.len()));
    }
    let r = r_gamma(model, gamma)?;
    let alpha = alpha_gamma(model, gamma, r)?;
    let g = pds_sqrt(sigma).scale(alpha)?;
    ThetaParams::new(mu.clone(), g, r / alpha)
}

/// Boundary mass `nu_0 = (2 pi^{k/2}/Gamma(k/2)) h(r^2) r^{k-1} alpha`.
pub fn nu_zero(model: &RadialDensity, r: f64, alpha: f64) -> f64 {
    unit_sphere_area(model.dim()) * model.h(r * r) * r.powi(model.dim() as i32 - 1) * alpha
}

/// The six coefficients of the derivative map at a spherical law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Betas {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub beta6: f64,
}

pub fn betas(k: usize, gamma: f64, alpha: f64, rho0: f64, nu0: f64) -> Betas {
    let kf = k as f64;
    let kk2 = kf * (kf + 2.0);
    Betas {
        beta1: (rho0 * nu0 / kf - gamma) / alpha,
        beta2: 2.0 * rho0.powi(3) * nu0 / (alpha * kk2) - 2.0 * gamma / alpha,
        beta3: rho0.powi(3) * nu0 / (alpha * kk2) - rho0 * nu0 / (kf * alpha),
        beta4: rho0 * rho0 * nu0 / kf - nu0,
        beta5: rho0 * nu0 / (kf * alpha),
        beta6: nu0,
    }
}

/// Coefficients of the iid expansion of the location, scatter and radius
/// estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionCoefficients {
    pub pi: f64,
    pub kappa: [f64; 4],
    pub lambda: [f64; 3],
}

/// Direct closed forms in terms of `r`, `alpha` and a few betas.
pub fn expansion_coefficients(k: usize, gamma: f64, r: f64, alpha: f64, b: &Betas) -> ExpansionCoefficients {
    let kf = k as f64;
    let a3 = alpha.powi(3);
    ExpansionCoefficients {
        pi: -1.0 / (alpha * b.beta1),
        kappa: [
            -r * r / (kf * gamma),
            (alpha * b.beta2 + 2.0 * gamma) / (kf * gamma * alpha * b.beta2),
            -2.0 / (alpha * b.beta2),
            (r * r - kf * alpha * alpha) / kf,
        ],
        lambda: [
            -r / (2.0 * kf * gamma * a3),
            r.powi(3) / (2.0 * kf * gamma * a3) - 1.0 / b.beta6,
            gamma / b.beta6 + r / (2.0 * kf * a3) * (kf * alpha * alpha - r * r),
        ],
    }
}

/// The same coefficients read off the inverse derivative map.
pub fn expansion_coefficients_from_inverse(k: usize, gamma: f64, alpha: f64, b: &Betas) -> ExpansionCoefficients {
    let kf = k as f64;
    let a2 = alpha * alpha;
    let cross = b.beta3 * b.beta6 - b.beta4 * b.beta5;
    ExpansionCoefficients {
        pi: -1.0 / (alpha * b.beta1),
        kappa: [
            2.0 * alpha / b.beta2 + kf * a2 * cross / (gamma * b.beta2 * b.beta6) - a2 * b.beta4 / (gamma * b.beta6),
            -cross / (gamma * b.beta2 * b.beta6),
            -2.0 / (alpha * b.beta2),
            a2 * b.beta4 / b.beta6,
        ],
        lambda: [
            -b.beta5 / (2.0 * alpha * gamma * b.beta6),
            alpha * (b.beta2 + kf * b.beta3 + kf * b.beta5) / (2.0 * gamma * b.beta6),
            -alpha * (b.beta2 + kf * b.beta3) / (2.0 * b.beta6),
        ],
    }
}

/// All constants of the MCD functional at a spherically symmetric law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticalConstants {
    pub gamma: f64,
    pub k: usize,
    pub r: f64,
    pub alpha: f64,
    pub rho0: f64,
    pub nu0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub beta6: f64,
    pub pi: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_rho_sq: f64,
    pub m2: f64,
    pub m4: f64,
}

/// Limiting variances of the location, scatter and radius estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticVariances {
    pub tau: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_rho_sq: f64,
}

/// Limiting variances from the closed forms. `nu0` enters `tau` directly.
#[allow(clippy::too_many_arguments)]
pub fn asymptotic_variances(
    k: usize,
    gamma: f64,
    r: f64,
    alpha: f64,
    nu0: f64,
    coef: &ExpansionCoefficients,
    m2: f64,
    m4: f64,
) -> Result<AsymptoticVariances> {
    let kf = k as f64;
    let denom = kf * gamma * alpha - r * nu0;
    if denom.abs() <= 1e-10 * kf * gamma * alpha {
        return Err(McdError::SingularDerivative {
            condition: f64::INFINITY,
        });
    }
    let tau = kf * kf * gamma * alpha.powi(4) / (denom * denom);
    let kappa3 = coef.kappa[2];
    let sigma1 = kappa3 * kappa3 * m4 / (kf * (kf + 2.0));
    let (r2, a2) = (r * r, alpha * alpha);
    let sigma2 = -2.0 / kf * sigma1 + m4 / (kf * kf * gamma * gamma)
        - (gamma * r2 * r2 - 2.0 * kf * gamma * r2 * a2 + kf * kf * gamma * a2 * a2 + 2.0 * kf * r2 * a2 - r2 * r2)
            / (gamma * kf * kf);
    let [l1, l2, l3] = coef.lambda;
    let sigma_rho_sq = l1 * l1 * m4 + 2.0 * l1 * l2 * m2 + l2 * l2 * gamma - l3 * l3;
    Ok(AsymptoticVariances {
        tau,
        sigma1,
        sigma2,
        sigma_rho_sq,
    })
}

/// Limiting variances recomputed as variances of the expansion summands,
/// by radial quadrature times sphere-rule angular moments.
pub fn summand_variances(model: &RadialDensity, consts: &EllipticalConstants) -> Result<AsymptoticVariances> {
    let k = consts.k;
    let (r, gamma) = (consts.r, consts.gamma);
    let rule = SphereRule::new(k);
    let area = rule.total_weight();
    let a1 = rule.integrate(|w| w[0] * w[0]) / area;
    let a12 = if k >= 2 {
        rule.integrate(|w| w[0] * w[0] * w[1] * w[1]) / area
    } else {
        0.0
    };
    let a11 = rule.integrate(|w| w[0].powi(4)) / area;
    let (k1, k2, k3, k4) = (consts.kappa1, consts.kappa2, consts.kappa3, consts.kappa4);

    let tau = consts.pi * consts.pi * truncated_expectation(model, r, |s| a1 * s * s)?;

    // diagonal entries: u(s) + kappa3 s^2 w_i^2 inside the ball, kappa4 outside
    let u = |s: f64| k1 + k2 * s * s + k4;
    let mean_diag = truncated_expectation(model, r, |s| u(s) + k3 * s * s * a1)? + (1.0 - gamma) * k4;
    let cross_diag = truncated_expectation(model, r, |s| {
        let s2 = s * s;
        u(s) * u(s) + 2.0 * k3 * u(s) * s2 * a1 + k3 * k3 * s2 * s2 * a12
    })? + (1.0 - gamma) * k4 * k4;
    let var_diag = truncated_expectation(model, r, |s| {
        let s2 = s * s;
        u(s) * u(s) + 2.0 * k3 * u(s) * s2 * a1 + k3 * k3 * s2 * s2 * a11
    })? + (1.0 - gamma) * k4 * k4
        - mean_diag * mean_diag;
    let (sigma1, sigma2) = if k >= 2 {
        let s1 = truncated_expectation(model, r, |s| k3 * k3 * s.powi(4) * a12)?;
        (s1, cross_diag - mean_diag * mean_diag)
    } else {
        (consts.sigma1, var_diag - 2.0 * consts.sigma1)
    };

    let (l1, l2, l3) = (consts.lambda1, consts.lambda2, consts.lambda3);
    let rho_mean = truncated_expectation(model, r, |s| l1 * s * s + l2 + l3)? + (1.0 - gamma) * l3;
    let rho_sq = truncated_expectation(model, r, |s| (l1 * s * s + l2 + l3).powi(2))? + (1.0 - gamma) * l3 * l3;
    Ok(AsymptoticVariances {
        tau,
        sigma1,
        sigma2,
        sigma_rho_sq: rho_sq - rho_mean * rho_mean,
    })
}

/// Covariance of the diagonal scatter summand with the radius summand.
/// Unlike the other cross terms it does not vanish.
pub fn diagonal_radius_covariance(model: &RadialDensity, consts: &EllipticalConstants) -> Result<f64> {
    let k = consts.k as f64;
    let (r, gamma) = (consts.r, consts.gamma);
    let (k1, k2, k3, k4) = (consts.kappa1, consts.kappa2, consts.kappa3, consts.kappa4);
    let (l1, l2, l3) = (consts.lambda1, consts.lambda2, consts.lambda3);
    // E[w_1^2] = 1/k on the unit sphere
    let diag = |s: f64| k1 + k2 * s * s + k4 + k3 * s * s / k;
    let rho = |s: f64| l1 * s * s + l2 + l3;
    let mean_diag = truncated_expectation(model, r, diag)? + (1.0 - gamma) * k4;
    let mean_rho = truncated_expectation(model, r, rho)? + (1.0 - gamma) * l3;
    let cross = truncated_expectation(model, r, |s| diag(s) * rho(s))? + (1.0 - gamma) * k4 * l3;
    Ok(cross - mean_diag * mean_rho)
}

impl EllipticalConstants {
    /// Computes every constant for the spherical law with generator `model`.
    ///
    /// Fails with `SingularDerivative` when the derivative map degenerates
    /// (constant generators such as the uniform ball).
    pub fn new(model: &RadialDensity, gamma: f64) -> Result<Self> {
        let k = model.dim();
        let r = r_gamma(model, gamma)?;
        let alpha = alpha_gamma(model, gamma, r)?;
        let rho0 = r / alpha;
        let nu0 = nu_zero(model, r, alpha);
        let b = betas(k, gamma, alpha, rho0, nu0);
        let scale = gamma / alpha;
        if b.beta1.abs() <= 1e-10 * scale || b.beta2.abs() <= 1e-10 * scale || nu0 <= 0.0 {
            return Err(McdError::SingularDerivative {
                condition: f64::INFINITY,
            });
        }
        let coef = expansion_coefficients(k, gamma, r, alpha, &b);
        let m2 = truncated_radial_moment(model, r, 2)?;
        let m4 = truncated_radial_moment(model, r, 4)?;
        let var = asymptotic_variances(k, gamma, r, alpha, nu0, &coef, m2, m4)?;
        Ok(EllipticalConstants {
            gamma,
            k,
            r,
            alpha,
            rho0,
            nu0,
            beta1: b.beta1,
            beta2: b.beta2,
            beta3: b.beta3,
            beta4: b.beta4,
            beta5: b.beta5,
            beta6: b.beta6,
            pi: coef.pi,
            kappa1: coef.kappa[0],
            kappa2: coef.kappa[1],
            kappa3: coef.kappa[2],
            kappa4: coef.kappa[3],
            lambda1: coef.lambda[0],
            lambda2: coef.lambda[1],
            lambda3: coef.lambda[2],
            tau: var.tau,
            sigma1: var.sigma1,
            sigma2: var.sigma2,
            sigma_rho_sq: var.sigma_rho_sq,
            m2,
            m4,
        })
    }

    pub fn betas(&self) -> Betas {
        Betas {
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
            beta4: self.beta4,
            beta5: self.beta5,
            beta6: self.beta6,
        }
    }

    pub fn expansion(&self) -> ExpansionCoefficients {
        ExpansionCoefficients {
            pi: self.pi,
            kappa: [self.kappa1, self.kappa2, self.kappa3, self.kappa4],
            lambda: [self.lambda1, self.lambda2, self.lambda3],
        }
    }

    /// `beta2 beta6 + k beta3 beta6 - k beta4 beta5`.
    pub fn c_identity(&self) -> f64 {
        let kf = self.k as f64;
        self.beta2 * self.beta6 + kf * self.beta3 * self.beta6 - kf * self.beta4 * self.beta5
    }

    /// Spherical MCD functional `(0, alpha I, r / alpha)`.
    pub fn theta0(&self) -> ThetaParams {
        let g = PdsMatrix::scaled_identity(self.k, self.alpha).expect("alpha is positive");
        ThetaParams::new(DVector::zeros(self.k), g, self.rho0).expect("spherical functional is valid")
    }

    /// Derivative map at the spherical functional.
    pub fn d_map(&self, t: &TangentVector) -> TangentVector {
        let k = self.k;
        let tr = t.a.trace();
        let mut a = t.a.as_matrix() * self.beta2;
        for i in 0..k {
            a[(i, i)] += self.beta3 * tr + self.beta4 * t.s;
        }
        TangentVector {
            h: &t.h * self.beta1,
            a: SymMatrix::new(a).expect("square"),
            s: self.beta5 * tr + self.beta6 * t.s,
        }
    }

    /// Inverse of [`Self::d_map`] in closed form.
    pub fn d_inv_map(&self, t: &TangentVector) -> TangentVector {
        let k = self.k;
        let kf = k as f64;
        let (b2, b3, b4, b5, b6) = (self.beta2, self.beta3, self.beta4, self.beta5, self.beta6);
        let (alpha, gamma) = (self.alpha, self.gamma);
        let tr = t.a.trace();
        let mut a = t.a.as_matrix() / b2;
        let diag = alpha * (b3 * b6 - b4 * b5) / (2.0 * gamma * b2 * b6) * tr + alpha * b4 / (2.0 * gamma * b6) * t.s;
        for i in 0..k {
            a[(i, i)] += diag;
        }
        TangentVector {
            h: &t.h / self.beta1,
            a: SymMatrix::new(a).expect("square"),
            s: alpha * b5 / (2.0 * gamma * b6) * tr - alpha * (b2 + kf * b3) / (2.0 * gamma * b6) * t.s,
        }
    }

    fn matrix_of(&self, f: impl Fn(&TangentVector) -> TangentVector) -> DMatrix<f64> {
        let d = tangent_dim(self.k);
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let t = TangentVector::from_coords(self.k, &TangentCoords::basis(self.k, j)).expect("basis has dimension d");
            m.set_column(j, &f(&t).to_coords().0);
        }
        m
    }

    /// Matrix of the derivative map in tangent coordinates.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        self.matrix_of(|t| self.d_map(t))
    }

    pub fn d_inv_matrix(&self) -> DMatrix<f64> {
        self.matrix_of(|t| self.d_inv_map(t))
    }

    /// Influence functions at a spherical law.
    pub fn influence(&self, x: &[f64]) -> Result<Influence> {
        if x.len() != self.k {
            return Err(shape_error(self.k, x.len()));
        }
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        if (norm_sq.sqrt() - self.r).abs() < 1e-12 {
            return Err(McdError::BoundaryUndefined);
        }
        let ind = if norm_sq <= self.r * self.r { 1.0 } else { 0.0 };
        let xv = DVector::from_column_slice(x);
        let mut sigma = &xv * xv.transpose() * (ind * self.kappa3);
        for i in 0..self.k {
            sigma[(i, i)] += ind * (self.kappa1 + self.kappa2 * norm_sq) + self.kappa4;
        }
        Ok(Influence {
            mu: xv * (self.pi * ind),
            sigma: SymMatrix::new(sigma).expect("square"),
            rho: self.lambda1 * ind * norm_sq + self.lambda2 * ind + self.lambda3,
        })
    }

    /// Influence functions at the elliptical law with location `mu` and
    /// scatter `sigma`, by affine transfer of the spherical ones.
    pub fn influence_general(&self, x: &[f64], mu: &DVector<f64>, sigma: &PdsMatrix) -> Result<Influence> {
        if x.len() != self.k || mu.len() != self.k || sigma.dim() != self.k {
            return Err(shape_error(self.k, x.len()));
        }
        let root = pds_sqrt(sigma);
        let root_inv = root.inverse();
        let z = &root_inv * (DVector::from_column_slice(x) - mu);
        let sph = self.influence(z.as_slice())?;
        let g = root.as_matrix();
        Ok(Influence {
            mu: g * sph.mu,
            sigma: SymMatrix::new(g * sph.sigma.as_matrix() * g)?,
            rho: sph.rho,
        })
    }
}

/// Influence functions of the location, scatter and radius functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct Influence {
    pub mu: DVector<f64>,
    pub sigma: SymMatrix,
    pub rho: f64,
}

/// Limiting covariances at a general scatter: `tau Sigma` for the location
/// and `sigma1 (I + C)(Sigma x Sigma) + sigma2 vec(Sigma) vec(Sigma)'` for
/// `vec` of the scatter.
pub fn general_covariance(sigma: &PdsMatrix, consts: &EllipticalConstants) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = sigma.dim();
    let s = sigma.as_matrix();
    let location = s * consts.tau;
    let perm = DMatrix::identity(k * k, k * k) + commutation_matrix(k);
    let vs = vec(s);
    let scatter = perm * kron(s, s) * consts.sigma1 + &vs * vs.transpose() * consts.sigma2;
    (location, scatter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn gauss(k: usize) -> RadialDensity {
        RadialDensity::gaussian(k)
    }

    #[test]
    fn gaussian_radius_is_chi_square_quantile() {
        for k in 1..=4 {
            for gamma in [0.25, 0.5, 0.75, 0.9] {
                let r = r_gamma(&gauss(k), gamma).unwrap();
                let p = ChiSquared::new(k as f64).unwrap().cdf(r * r);
                assert!((p - gamma).abs() < 1e-12, "k={k} gamma={gamma}");
            }
        }
        let r = r_gamma(&gauss(2), 0.5).unwrap();
        assert!((r - (2.0 * 2f64.ln()).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn radius_residual_and_monotonicity() {
        let t = RadialDensity::student_t(3, 5.0).unwrap();
        let r = r_gamma(&t, 0.6).unwrap();
        assert!((t.radial_integral(r, 0).unwrap() - 0.6).abs() < 1e-12);
        assert!(r_gamma(&t, 0.9).unwrap() > r);
        assert!(matches!(r_gamma(&t, 1.0), Err(McdError::BadFraction(_))));
        assert!(matches!(r_gamma(&t, 0.0), Err(McdError::BadFraction(_))));
    }

    #[test]
    fn gaussian_alpha_identity() {
        // E[chi2_k 1{chi2_k <= q}] = k P(chi2_{k+2} <= q)
        for k in 1..=4 {
            let gamma = 0.5;
            let r = r_gamma(&gauss(k), gamma).unwrap();
            let a = alpha_gamma(&gauss(k), gamma, r).unwrap();
            let oracle = ChiSquared::new(k as f64 + 2.0).unwrap().cdf(r * r) / gamma;
            assert!((a * a - oracle).abs() < 1e-10);
        }
        let r = r_gamma(&gauss(2), 0.999999).unwrap();
        let a = alpha_gamma(&gauss(2), 0.999999, r).unwrap();
        assert!((a * a - 1.0).abs() < 1e-3);
    }

    #[test]
    fn fourth_moment_identity() {
        for k in 1..=3 {
            let r = 1.3;
            let m4 = truncated_radial_moment(&gauss(k), r, 4).unwrap();
            let kf = k as f64;
            let oracle = kf * (kf + 2.0) * ChiSquared::new(kf + 4.0).unwrap().cdf(r * r);
            assert!((m4 - oracle).abs() < 1e-12);
        }
        assert!(truncated_radial_moment(&gauss(2), 1.0, 3).is_err());
    }

    #[test]
    fn theta0_scaling() {
        let m = gauss(2);
        let mu = DVector::from_vec(vec![1.0, -2.0]);
        let s = PdsMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let t1 = theta0_elliptical(&mu, &s, &m, 0.5).unwrap();
        let t2 = theta0_elliptical(&mu, &s.scale(9.0).unwrap(), &m, 0.5).unwrap();
        assert!((t1.r - t2.r).abs() < 1e-14);
        assert!((t2.g.as_matrix() - t1.g.as_matrix() * 3.0).abs().max() < 1e-12);
        let sph = theta0_elliptical(&DVector::zeros(2), &PdsMatrix::identity(2), &m, 0.5).unwrap();
        assert!((sph.g.as_matrix()[(0, 0)] - 0.5539429749).abs() < 1e-9);
        assert!((sph.r - 2.1255076350).abs() < 1e-9);
    }

    #[test]
    fn sign_invariants() {
        for model in [gauss(2), gauss(3), RadialDensity::student_t(2, 5.0).unwrap(), RadialDensity::student_t(4, 2.5).unwrap()] {
            for gamma in [0.3, 0.5, 0.75] {
                let c = EllipticalConstants::new(&model, gamma).unwrap();
                assert!(c.beta1 < 0.0 && c.beta2 < 0.0 && c.beta6 > 0.0);
                assert_eq!(c.beta6, c.nu0);
                assert!((c.c_identity() + 2.0 * gamma * c.beta6 / c.alpha).abs() < 1e-10);
                assert!((c.m2 - c.k as f64 * gamma * c.alpha * c.alpha).abs() < 1e-10 * c.m2);
            }
        }
    }

    #[test]
    fn uniform_ball_is_singular() {
        let u = RadialDensity::uniform_ball(2, 1.5).unwrap();
        assert!(matches!(EllipticalConstants::new(&u, 0.5), Err(McdError::SingularDerivative { .. })));
    }

    #[test]
    fn expansion_routes_agree() {
        for model in [gauss(2), gauss(3), RadialDensity::student_t(2, 5.0).unwrap()] {
            let c = EllipticalConstants::new(&model, 0.6).unwrap();
            let direct = c.expansion();
            let inv = expansion_coefficients_from_inverse(c.k, c.gamma, c.alpha, &c.betas());
            for (a, b) in direct.kappa.iter().zip(&inv.kappa).chain(direct.lambda.iter().zip(&inv.lambda)) {
                assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn d_inverse_pair() {
        let c = EllipticalConstants::new(&gauss(3), 0.5).unwrap();
        let prod = c.d_matrix() * c.d_inv_matrix();
        assert!((prod - DMatrix::identity(10, 10)).abs().max() < 1e-12);
        let t = TangentVector {
            h: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            a: SymMatrix::zeros(3),
            s: 0.0,
        };
        let d = c.d_map(&t);
        assert_eq!(d.h, &t.h * c.beta1);
        assert_eq!(d.a, SymMatrix::zeros(3));
        assert_eq!(d.s, 0.0);
    }

    #[test]
    fn summand_route_matches_closed_forms() {
        for model in [gauss(2), gauss(3), RadialDensity::student_t(2, 5.0).unwrap()] {
            for gamma in [0.5, 0.75] {
                let c = EllipticalConstants::new(&model, gamma).unwrap();
                let s = summand_variances(&model, &c).unwrap();
                assert!((s.tau - c.tau).abs() < 1e-6 * c.tau);
                assert!((s.sigma1 - c.sigma1).abs() < 1e-6 * c.sigma1.abs());
                assert!((s.sigma2 - c.sigma2).abs() < 1e-6 * c.sigma2.abs());
                assert!((s.sigma_rho_sq - c.sigma_rho_sq).abs() < 1e-6 * c.sigma_rho_sq);
            }
        }
    }

    #[test]
    fn diagonal_and_radius_are_correlated() {
        // Monte-Carlo value of the covariance at k = 2, gamma = 0.75 is about -0.222
        let model = gauss(2);
        let c = EllipticalConstants::new(&model, 0.75).unwrap();
        let cov = diagonal_radius_covariance(&model, &c).unwrap();
        assert!((cov + 0.222).abs() < 0.005, "{cov}");
    }

    #[test]
    fn influence_special_points() {
        let c = EllipticalConstants::new(&gauss(2), 0.5).unwrap();
        let at0 = c.influence(&[0.0, 0.0]).unwrap();
        assert_eq!(at0.mu, DVector::zeros(2));
        assert_eq!(at0.sigma.as_matrix(), &(DMatrix::identity(2, 2) * (c.kappa1 + c.kappa4)));
        assert_eq!(at0.rho, c.lambda2 + c.lambda3);
        let far = c.influence(&[3.0, 1.0]).unwrap();
        assert_eq!(far.mu, DVector::zeros(2));
        assert_eq!(far.sigma.as_matrix(), &(DMatrix::identity(2, 2) * c.kappa4));
        assert_eq!(far.rho, c.lambda3);
        assert_eq!(c.influence(&[c.r, 0.0]), Err(McdError::BoundaryUndefined));
    }

    #[test]
    fn general_covariance_identity_and_diagonal() {
        let c = EllipticalConstants::new(&gauss(2), 0.75).unwrap();
        let (loc, cov) = general_covariance(&PdsMatrix::identity(2), &c);
        assert_eq!(loc, DMatrix::identity(2, 2) * c.tau);
        // vec index of (0,0) is 0, of (1,0) is 1
        assert!((cov[(0, 0)] - (2.0 * c.sigma1 + c.sigma2)).abs() < 1e-14);
        assert!((cov[(1, 1)] - c.sigma1).abs() < 1e-14);
        assert!((cov[(0, 3)] - c.sigma2).abs() < 1e-14);
        let d = PdsMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]))).unwrap();
        let (_, cov) = general_covariance(&d, &c);
        assert!((cov[(0, 0)] - (2.0 * c.sigma1 + c.sigma2) * 4.0).abs() < 1e-12);
        assert!((cov[(3, 3)] - (2.0 * c.sigma1 + c.sigma2) * 25.0).abs() < 1e-12);
    }

    #[test]
    fn general_influence_reduces_to_spherical() {
        let c = EllipticalConstants::new(&gauss(2), 0.5).unwrap();
        let a = c.influence(&[0.3, -0.4]).unwrap();
        let b = c
            .influence_general(&[0.3, -0.4], &DVector::zeros(2), &PdsMatrix::identity(2))
            .unwrap();
        assert!((a.mu - b.mu).abs().max() < 1e-15);
        assert!((a.sigma.as_matrix() - b.sigma.as_matrix()).abs().max() < 1e-14);
    }
}
