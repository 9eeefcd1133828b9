//! Simulation harness: repeated MCD fits on spherical samples, compared
//! against the iid expansion, the limiting covariances, and the plug-in
//! sandwich estimate.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{Density, EllipticalDensity, ModelSpec, RadialDensity};
use crate::elliptical::{diagonal_radius_covariance, EllipticalConstants};
use crate::error::{McdError, Result};
use crate::estimator::{mcd_cstep, mcd_exact, McdFit, SampleSet};
use crate::functional::{plug_in_lambda_prime, sandwich_covariance, Bandwidth, PlugInDensity};
use crate::linalg::{PdsMatrix, SymMatrix};
use crate::quadrature::SphereRule;

/// Which search produces the estimate in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Exact,
    Cstep { restarts: usize },
}

impl EstimatorChoice {
    pub fn fit(&self, samples: &SampleSet, gamma: f64, seed: u64) -> Result<McdFit> {
        match *self {
            EstimatorChoice::Exact => mcd_exact(samples, gamma),
            EstimatorChoice::Cstep { restarts } => mcd_cstep(samples, gamma, restarts, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub k: usize,
    pub n: usize,
    pub reps: usize,
    pub gamma: f64,
    pub seed: u64,
    pub estimator: EstimatorChoice,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(McdError::InvalidInput("dimension must be positive".into()));
        }
        if self.n < 4 * self.k {
            return Err(McdError::InvalidInput(format!(
                "sample size {} is below 4k = {}",
                self.n,
                4 * self.k
            )));
        }
        if self.reps < 2 {
            return Err(McdError::InvalidInput("at least two replications are required".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(McdError::BadFraction(self.gamma));
        }
        if let EstimatorChoice::Cstep { restarts: 0 } = self.estimator {
            return Err(McdError::InvalidInput("restarts must be at least 1".into()));
        }
        match self.model {
            ModelSpec::Gaussian | ModelSpec::StudentT(_) => Ok(()),
            _ => Err(McdError::UnknownModel(format!("{} has no sampler", self.model))),
        }
    }

    fn radial(&self) -> Result<RadialDensity> {
        self.model.radial(self.k)
    }

    fn with_n(&self, n: usize) -> Self {
        SimConfig { n, ..self.clone() }
    }
}

/// `n` draws of `mu + Sigma^{1/2} Z` with `Z` from the named spherical model.
pub fn sample_elliptical(
    model: &ModelSpec,
    mu: &DVector<f64>,
    sigma: &PdsMatrix,
    n: usize,
    seed: u64,
) -> Result<SampleSet> {
    let radial = model.radial(mu.len())?;
    let density = EllipticalDensity::new(radial, mu.clone(), sigma.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(&density, n, &mut rng)
}

fn sample_with(density: &EllipticalDensity, n: usize, rng: &mut ChaCha8Rng) -> Result<SampleSet> {
    let k = density.dim();
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        data.extend(density.sample(rng)?);
    }
    SampleSet::from_flat(k, data)
}

/// SplitMix64 finalizer, used to derive independent per-replication seeds.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rep_seed(seed: u64, rep: usize) -> u64 {
    mix(seed.wrapping_add((rep as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// One replication's estimate, scatter stored as its upper triangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepEstimate {
    pub rep: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: f64,
}

struct RepOutcome {
    estimate: RepEstimate,
    /// `sqrt(n) (theta_hat - theta0)` in `(mu, upper(Sigma), rho)` coordinates.
    scaled_error: Vec<f64>,
    /// Normalized sums of the expansion summands, same coordinates.
    expansion: Vec<f64>,
}

fn run_rep(config: &SimConfig, consts: &EllipticalConstants, density: &EllipticalDensity, rep: usize) -> Result<(SampleSet, McdFit, RepOutcome)> {
    let k = config.k;
    let n = config.n;
    let mut rng = crate::estimator::restart_rng(config.seed, rep as u64);
    let samples = sample_with(density, n, &mut rng)?;
    let fit = config.estimator.fit(&samples, config.gamma, rep_seed(config.seed, rep))?;
    let sqrt_n = (n as f64).sqrt();
    let a2 = consts.alpha * consts.alpha;
    let sigma_upper = SymMatrix::new(fit.scatter.as_matrix().clone())?.upper();

    let mut scaled_error: Vec<f64> = fit.location.iter().map(|v| sqrt_n * v).collect();
    let mut idx = 0;
    for a in 0..k {
        for b in a..k {
            let target = if a == b { a2 } else { 0.0 };
            scaled_error.push(sqrt_n * (sigma_upper[idx] - target));
            idx += 1;
        }
    }
    scaled_error.push(sqrt_n * (fit.radius - consts.rho0));

    let mut expansion = vec![0.0; scaled_error.len()];
    for x in samples.rows() {
        let inf = consts.influence(x)?;
        let coords = inf.mu.iter().copied().chain(inf.sigma.upper()).chain(std::iter::once(inf.rho));
        for (e, v) in expansion.iter_mut().zip(coords) {
            *e += v;
        }
    }
    for e in &mut expansion {
        *e /= sqrt_n;
    }
    let estimate = RepEstimate {
        rep,
        mu: fit.location.iter().copied().collect(),
        sigma: sigma_upper,
        rho: fit.radius,
    };
    Ok((
        samples,
        fit,
        RepOutcome {
            estimate,
            scaled_error,
            expansion,
        },
    ))
}

fn run_all(config: &SimConfig, consts: &EllipticalConstants) -> Result<(Vec<RepOutcome>, usize)> {
    let density = EllipticalDensity::spherical(config.radial()?);
    let results: Vec<Result<RepOutcome>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_rep(config, consts, &density, rep).map(|(_, _, o)| o))
        .collect();
    let failures = results.iter().filter(|r| r.is_err()).count();
    let ok: Vec<RepOutcome> = results.into_iter().filter_map(|r| r.ok()).collect();
    if ok.len() < 2 {
        return Err(McdError::DegenerateSample { subset: None });
    }
    Ok((ok, failures))
}

/// Labels of the `(mu, upper(Sigma), rho)` coordinates.
pub fn estimate_labels(k: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..=k).map(|i| format!("mu{i}")).collect();
    for i in 1..=k {
        for j in i..=k {
            out.push(format!("sigma{i}{j}"));
        }
    }
    out.push("rho".into());
    out
}

fn covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov / (n - 1.0)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub a: String,
    pub b: String,
    pub value: f64,
}

/// Outcome of the limiting-covariance comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltSummary {
    pub n: usize,
    pub labels: Vec<String>,
    /// Empirical covariance of `sqrt(n) (theta_hat - theta0)`.
    pub covariance: Vec<Vec<f64>>,
    pub var_ratio_mu: f64,
    pub var_ratio_sigma_offdiag: Option<f64>,
    pub var_ratio_sigma_diag: f64,
    pub var_ratio_rho: f64,
    /// Pairs whose limiting correlation vanishes by symmetry.
    pub null_correlations: Vec<Correlation>,
    pub max_abs_null_correlation: f64,
    pub diag_rho_correlation: f64,
    pub diag_rho_correlation_theory: f64,
    pub pass_mu: bool,
    pub pass_sigma_offdiag: bool,
    pub pass_sigma_diag: bool,
    pub pass_rho: bool,
    pub pass_correlations: bool,
}

/// One rung of the remainder ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderRung {
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub rms: f64,
    pub median_norm: f64,
    pub median_error_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderSummary {
    pub rungs: Vec<RemainderRung>,
    pub rms_decreasing: bool,
    /// `1 - median(last) / median(first)`.
    pub median_drop: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PluginSummary {
    pub n: usize,
    pub density: String,
    /// Mean of the location diagonal of each sandwich estimate.
    pub location_variances: Vec<f64>,
    pub median_location_variance: f64,
    pub ratio_to_tau: f64,
    pub singular: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Serialized simulation output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub check: String,
    pub model: String,
    pub k: usize,
    pub n: usize,
    pub reps: usize,
    pub gamma: f64,
    pub seed: u64,
    pub estimator: EstimatorChoice,
    pub constants: EllipticalConstants,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expansion: Option<RemainderSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plugin: Option<PluginSummary>,
    pub replications: Vec<RepEstimate>,
    pub passed: bool,
}

impl SimReport {
    fn new(check: &str, config: &SimConfig, constants: EllipticalConstants) -> Self {
        SimReport {
            check: check.into(),
            model: config.model.to_string(),
            k: config.k,
            n: config.n,
            reps: config.reps,
            gamma: config.gamma,
            seed: config.seed,
            estimator: config.estimator,
            constants,
            failures: 0,
            clt: None,
            expansion: None,
            plugin: None,
            replications: Vec::new(),
            passed: false,
        }
    }

    /// Per-replication estimates as CSV: `rep, muhat_*, sigmahat_ij (i <= j), rhohat`.
    pub fn write_reps_csv<W: Write>(&self, writer: W) -> Result<()> {
        let k = self.k;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["rep".to_string()];
        header.extend((1..=k).map(|i| format!("muhat_{i}")));
        for i in 1..=k {
            for j in i..=k {
                header.push(format!("sigmahat_{i}{j}"));
            }
        }
        header.push("rhohat".into());
        w.write_record(&header).map_err(|e| McdError::Io(e.to_string()))?;
        for r in &self.replications {
            let mut row = vec![r.rep.to_string()];
            row.extend(r.mu.iter().chain(&r.sigma).map(|v| format!("{v:.16e}")));
            row.push(format!("{:.16e}", r.rho));
            w.write_record(&row).map_err(|e| McdError::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn correlation(cov: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt()
}

/// Compares the empirical covariance of the scaled estimation error with
/// the limiting covariances.
pub fn clt_check(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let radial = config.radial()?;
    let consts = EllipticalConstants::new(&radial, config.gamma)?;
    let (outcomes, failures) = run_all(config, &consts)?;
    let k = config.k;
    let labels = estimate_labels(k);
    let d = labels.len();
    let rows: Vec<Vec<f64>> = outcomes.iter().map(|o| o.scaled_error.clone()).collect();
    let cov = covariance(&rows);
    let sig = |i: usize, j: usize| sym_index(k, i, j);

    let var_ratio_mu = (0..k).map(|i| cov[(i, i)]).sum::<f64>() / k as f64 / consts.tau;
    let diag_var = (0..k).map(|i| cov[(sig(i, i), sig(i, i))]).sum::<f64>() / k as f64;
    let var_ratio_sigma_diag = diag_var / (2.0 * consts.sigma1 + consts.sigma2);
    let var_ratio_sigma_offdiag = if k >= 2 {
        let mut s = 0.0;
        let mut c = 0;
        for i in 0..k {
            for j in i + 1..k {
                s += cov[(sig(i, j), sig(i, j))];
                c += 1;
            }
        }
        Some(s / c as f64 / consts.sigma1)
    } else {
        None
    };
    let var_ratio_rho = cov[(d - 1, d - 1)] / consts.sigma_rho_sq;

    let mut nulls = Vec::new();
    let mut push = |a: usize, b: usize| {
        nulls.push(Correlation {
            a: labels[a].clone(),
            b: labels[b].clone(),
            value: correlation(&cov, a, b),
        })
    };
    for i in 0..k {
        for j in k..d {
            push(i, j);
        }
    }
    let off: Vec<usize> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| sig(i, j)).collect();
    for i in 0..k {
        for &o in &off {
            push(sig(i, i), o);
        }
    }
    for &o in &off {
        push(o, d - 1);
    }
    for (x, &a) in off.iter().enumerate() {
        for &b in &off[x + 1..] {
            push(a, b);
        }
    }
    let max_abs = nulls.iter().map(|c| c.value.abs()).fold(0.0, f64::max);
    let diag_rho = (0..k).map(|i| correlation(&cov, sig(i, i), d - 1)).sum::<f64>() / k as f64;
    let diag_rho_theory = diagonal_radius_covariance(&radial, &consts)?
        / ((2.0 * consts.sigma1 + consts.sigma2) * consts.sigma_rho_sq).sqrt();

    let within = |x: f64, tol: f64| (x - 1.0).abs() <= tol;
    let summary = CltSummary {
        n: config.n,
        labels: labels.clone(),
        covariance: (0..d).map(|i| cov.row(i).iter().copied().collect()).collect(),
        pass_mu: within(var_ratio_mu, 0.15),
        pass_sigma_offdiag: var_ratio_sigma_offdiag.is_none_or(|v| within(v, 0.2)),
        pass_sigma_diag: within(var_ratio_sigma_diag, 0.2),
        pass_rho: within(var_ratio_rho, 0.2),
        pass_correlations: max_abs < 0.1,
        var_ratio_mu,
        var_ratio_sigma_offdiag,
        var_ratio_sigma_diag,
        var_ratio_rho,
        null_correlations: nulls,
        max_abs_null_correlation: max_abs,
        diag_rho_correlation: diag_rho,
        diag_rho_correlation_theory: diag_rho_theory,
    };
    let mut report = SimReport::new("clt", config, consts);
    report.passed = summary.pass_mu
        && summary.pass_sigma_offdiag
        && summary.pass_sigma_diag
        && summary.pass_rho
        && summary.pass_correlations;
    report.failures = failures;
    report.replications = outcomes.into_iter().map(|o| o.estimate).collect();
    report.clt = Some(summary);
    Ok(report)
}

/// Index of `Sigma_ij` in the `(mu, upper(Sigma), rho)` coordinates.
fn sym_index(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    k + i * k - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Remainder of the iid expansion along a ladder of sample sizes.
pub fn expansion_remainder(config: &SimConfig, ladder: &[usize]) -> Result<SimReport> {
    if ladder.len() < 2 {
        return Err(McdError::InvalidInput("ladder needs at least two sample sizes".into()));
    }
    for &n in ladder {
        config.with_n(n).validate()?;
    }
    let radial = config.radial()?;
    let consts = EllipticalConstants::new(&radial, config.gamma)?;
    let mut rungs = Vec::new();
    let mut failures = 0;
    let mut replications = Vec::new();
    for &n in ladder {
        let cfg = config.with_n(n);
        let (outcomes, fail) = run_all(&cfg, &consts)?;
        failures += fail;
        let norms: Vec<f64> = outcomes
            .iter()
            .map(|o| {
                o.scaled_error
                    .iter()
                    .zip(&o.expansion)
                    .map(|(e, x)| (e - x).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let errors: Vec<f64> = outcomes
            .iter()
            .map(|o| o.scaled_error.iter().map(|e| e * e).sum::<f64>().sqrt() / (n as f64).sqrt())
            .collect();
        let rms = (norms.iter().map(|v| v * v).sum::<f64>() / norms.len() as f64).sqrt();
        rungs.push(RemainderRung {
            n,
            reps: outcomes.len(),
            failures: fail,
            rms,
            median_norm: median(norms),
            median_error_norm: median(errors),
        });
        if n == *ladder.last().expect("ladder is non-empty") {
            replications = outcomes.into_iter().map(|o| o.estimate).collect();
        }
    }
    // monotone, allowing one inversion of at most 10%
    let mut inversions = 0;
    let mut small = true;
    for w in rungs.windows(2) {
        if w[1].rms >= w[0].rms {
            inversions += 1;
            small &= w[1].rms <= 1.1 * w[0].rms;
        }
    }
    let rms_decreasing = inversions == 0 || (inversions == 1 && small && rungs.last().unwrap().rms < rungs[0].rms);
    let median_drop = 1.0 - rungs.last().unwrap().median_norm / rungs[0].median_norm;
    let summary = RemainderSummary {
        pass: rms_decreasing && median_drop >= 0.3,
        rungs,
        rms_decreasing,
        median_drop,
    };
    let mut report = SimReport::new("expansion", config, consts);
    report.n = *ladder.last().unwrap();
    report.passed = summary.pass;
    report.failures = failures;
    report.replications = replications;
    report.expansion = Some(summary);
    Ok(report)
}

/// How the density is supplied to the plug-in derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PluginMode {
    Kde(Bandwidth),
    Oracle,
}

/// Median sandwich estimate of the location variance against `tau`.
pub fn plugin_check(config: &SimConfig, mode: PluginMode) -> Result<SimReport> {
    config.validate()?;
    let radial = config.radial()?;
    let consts = EllipticalConstants::new(&radial, config.gamma)?;
    let density = EllipticalDensity::spherical(radial);
    let rule = SphereRule::new(config.k);
    let k = config.k;
    let results: Vec<Result<(RepEstimate, Option<f64>)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let (samples, fit, outcome) = run_rep(config, &consts, &density, rep)?;
            let plug = match mode {
                PluginMode::Kde(bw) => PlugInDensity::Kde(bw),
                PluginMode::Oracle => PlugInDensity::Oracle(&density),
            };
            let var = plug_in_lambda_prime(&samples, &fit, plug, &rule)
                .and_then(|map| sandwich_covariance(&samples, &fit, &map))
                .map(|cov| (0..k).map(|i| cov[(i, i)]).sum::<f64>() / k as f64);
            match var {
                Ok(v) => Ok((outcome.estimate, Some(v))),
                Err(McdError::SingularDerivative { .. }) => Ok((outcome.estimate, None)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_err()).count();
    let mut replications = Vec::new();
    let mut variances = Vec::new();
    let mut singular = 0;
    for (est, v) in results.into_iter().flatten() {
        replications.push(est);
        match v {
            Some(v) => variances.push(v),
            None => singular += 1,
        }
    }
    if variances.is_empty() {
        return Err(McdError::SingularDerivative {
            condition: f64::INFINITY,
        });
    }
    let med = median(variances.clone());
    let (name, tolerance) = match mode {
        PluginMode::Kde(_) => ("kde", 0.3),
        PluginMode::Oracle => ("oracle", 0.15),
    };
    let ratio = med / consts.tau;
    let summary = PluginSummary {
        n: config.n,
        density: name.into(),
        location_variances: variances,
        median_location_variance: med,
        ratio_to_tau: ratio,
        singular,
        tolerance,
        pass: (ratio - 1.0).abs() <= tolerance,
    };
    let mut report = SimReport::new("plugin", config, consts);
    report.passed = summary.pass;
    report.failures = failures;
    report.replications = replications;
    report.plugin = Some(summary);
    Ok(report)
}
