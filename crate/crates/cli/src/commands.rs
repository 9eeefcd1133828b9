use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use mcd_core::density::{EllipticalDensity, ModelSpec};
use mcd_core::elliptical::{alpha_gamma, r_gamma, EllipticalConstants};
use mcd_core::estimator::{binomial, mcd_cstep, mcd_exact, subset_size, McdFit, SampleSet, EXACT_LIMIT};
use mcd_core::functional::{
    plug_in_lambda_prime, sandwich_covariance, Bandwidth, LambdaPrimeMap, PlugInDensity,
};
use mcd_core::linalg::tangent_labels;
use mcd_core::montecarlo::{
    clt_check, expansion_remainder, plugin_check, EstimatorChoice, PluginMode, SimConfig,
};
use mcd_core::density::Kde;
use mcd_core::quadrature::SphereRule;
use mcd_core::{McdError, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::{Check, EstimatorKind, FitArgs, InfluenceArgs, ModelArgs, PluginDensity, SimulateArgs, VarianceArgs};

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut w = output(path)?;
    mcd_core::json::to_writer(&mut w, value).map_err(|e| McdError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth> {
    if s == "auto" {
        return Ok(Bandwidth::Auto);
    }
    let b: f64 = s
        .parse()
        .map_err(|_| McdError::InvalidInput(format!("bandwidth must be `auto` or a number, got `{s}`")))?;
    if b > 0.0 && b.is_finite() {
        Ok(Bandwidth::Fixed(b))
    } else {
        Err(McdError::BadBandwidth(b))
    }
}

fn load(args: &FitArgs) -> Result<SampleSet> {
    let samples = SampleSet::from_csv(File::open(&args.input)?, args.header)?;
    if samples.n() < 4 * samples.dim() {
        return Err(McdError::InvalidInput(format!(
            "{} observations in dimension {} (need at least {})",
            samples.n(),
            samples.dim(),
            4 * samples.dim()
        )));
    }
    Ok(samples)
}

/// Exhaustive search when forced or affordable, concentration steps otherwise.
fn fit(samples: &SampleSet, args: &FitArgs) -> Result<(McdFit, &'static str)> {
    if !(args.gamma > 0.0 && args.gamma < 1.0) {
        return Err(McdError::BadFraction(args.gamma));
    }
    let h = subset_size(samples.n(), args.gamma);
    if args.exact || binomial(samples.n(), h) <= EXACT_LIMIT {
        Ok((mcd_exact(samples, args.gamma)?, "exact"))
    } else {
        Ok((mcd_cstep(samples, args.gamma, args.restarts, args.seed)?, "cstep"))
    }
}

#[derive(Serialize)]
struct FitOutput {
    method: &'static str,
    n: usize,
    k: usize,
    gamma: f64,
    h: usize,
    location: Vec<f64>,
    scatter: Vec<Vec<f64>>,
    shape: Vec<Vec<f64>>,
    radius: f64,
    det: f64,
    subset: Vec<usize>,
    degenerate_candidates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl FitOutput {
    fn new(samples: &SampleSet, fit: &McdFit, method: &'static str, args: &FitArgs) -> Self {
        let cstep = method == "cstep";
        FitOutput {
            method,
            n: samples.n(),
            k: samples.dim(),
            gamma: fit.gamma,
            h: fit.h(),
            location: fit.location.iter().copied().collect(),
            scatter: rows(fit.scatter.as_matrix()),
            shape: rows(fit.shape.as_matrix()),
            radius: fit.radius,
            det: fit.det,
            subset: fit.subset.clone(),
            degenerate_candidates: fit.degenerate_candidates,
            restarts: cstep.then_some(args.restarts),
            seed: cstep.then_some(args.seed),
        }
    }
}

pub fn estimate(args: &FitArgs) -> Result<()> {
    let samples = load(args)?;
    let (fit, method) = fit(&samples, args)?;
    write_json(&FitOutput::new(&samples, &fit, method, args), args.out.as_deref())
}

fn constants(args: &ModelArgs) -> Result<(ModelSpec, EllipticalConstants)> {
    if args.k == 0 {
        return Err(McdError::InvalidInput("dimension must be positive".into()));
    }
    let spec = ModelSpec::parse(&args.model, args.nu)?;
    let radial = spec.radial(args.k)?;
    let consts = EllipticalConstants::new(&radial, args.gamma)?;
    Ok((spec, consts))
}

pub fn theory(args: &ModelArgs) -> Result<()> {
    let (_, consts) = constants(args)?;
    write_json(&consts, args.out.as_deref())
}

#[derive(Serialize)]
struct VarianceOutput {
    fit: FitOutput,
    density: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidths: Option<Vec<f64>>,
    /// Tangent coordinate names: location, shape upper triangle, radius.
    labels: Vec<String>,
    derivative: Vec<Vec<f64>>,
    condition_number: f64,
    covariance: Vec<Vec<f64>>,
}

pub fn variance(args: &VarianceArgs) -> Result<()> {
    let samples = load(&args.fit)?;
    let bandwidth = parse_bandwidth(&args.bandwidth)?;
    let (fit, method) = fit(&samples, &args.fit)?;
    let k = samples.dim();
    let rule = SphereRule::new(k);
    let (map, density, bandwidths): (LambdaPrimeMap, String, Option<Vec<f64>>) = if args.density == "kde" {
        let bw = match bandwidth {
            Bandwidth::Auto => Kde::default_bandwidths(k, samples.as_flat()),
            Bandwidth::Fixed(b) => vec![b; k],
        };
        let map = plug_in_lambda_prime(&samples, &fit, PlugInDensity::Kde(bandwidth), &rule)?;
        (map, "kde".into(), Some(bw))
    } else {
        // model density with scatter C / alpha^2, so that its MCD functional is the fit
        let spec = ModelSpec::parse(&args.density, args.nu)?;
        let radial = spec.radial(k)?;
        let r = r_gamma(&radial, fit.gamma)?;
        let alpha = alpha_gamma(&radial, fit.gamma, r)?;
        let scatter = fit.scatter.scale(1.0 / (alpha * alpha))?;
        let model = EllipticalDensity::new(radial, fit.location.clone(), scatter)?;
        let map = plug_in_lambda_prime(&samples, &fit, PlugInDensity::Oracle(&model), &rule)?;
        (map, spec.to_string(), None)
    };
    let covariance = sandwich_covariance(&samples, &fit, &map)?;
    let out = VarianceOutput {
        fit: FitOutput::new(&samples, &fit, method, &args.fit),
        density,
        bandwidths,
        labels: tangent_labels(k),
        condition_number: map.condition_number(),
        derivative: rows(&map.matrix),
        covariance: rows(&covariance),
    };
    write_json(&out, args.fit.out.as_deref())
}

fn csv_error(e: csv::Error) -> McdError {
    McdError::Io(e.to_string())
}

pub fn influence(args: &InfluenceArgs) -> Result<()> {
    let (_, c) = constants(&args.model)?;
    if args.points < 2 {
        return Err(McdError::InvalidInput("need at least two grid points".into()));
    }
    let max = args.max_radius.unwrap_or(3.0 * c.r);
    if !(max > 0.0 && max.is_finite()) {
        return Err(McdError::InvalidInput(format!("max radius must be positive, got {max}")));
    }
    let k = c.k;
    let unit = 1.0 / (k as f64).sqrt();
    let mut w = csv::Writer::from_writer(output(args.model.out.as_deref())?);
    let mut header = vec!["norm".to_string(), "if_mu_norm".to_string()];
    for i in 1..=k {
        for j in i..=k {
            header.push(format!("if_sigma_{i}{j}"));
        }
    }
    header.push("if_rho".into());
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..args.points {
        let t = max * i as f64 / (args.points - 1) as f64;
        if (t - c.r).abs() < 1e-12 {
            eprintln!("warning: skipping grid point {t} on the boundary sphere");
            continue;
        }
        let x = vec![t * unit; k];
        let v = c.influence(&x)?;
        let mut row = vec![format!("{t:.16e}"), format!("{:.16e}", v.mu.norm())];
        row.extend(v.sigma.upper().iter().map(|s| format!("{s:.16e}")));
        row.push(format!("{:.16e}", v.rho));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let config = SimConfig {
        model: ModelSpec::parse(&args.model, args.nu)?,
        k: args.k,
        n: args.n,
        reps: args.reps,
        gamma: args.gamma,
        seed: args.seed,
        estimator: match args.estimator {
            EstimatorKind::Exact => EstimatorChoice::Exact,
            EstimatorKind::Cstep => EstimatorChoice::Cstep { restarts: args.restarts },
        },
    };
    let report = match args.check {
        Check::Clt => clt_check(&config)?,
        Check::Expansion => expansion_remainder(&config, &args.ladder)?,
        Check::Plugin => {
            let mode = match args.density {
                PluginDensity::Kde => PluginMode::Kde(parse_bandwidth(&args.bandwidth)?),
                PluginDensity::Oracle => PluginMode::Oracle,
            };
            plugin_check(&config, mode)?
        }
    };
    if let Some(path) = &args.dump_reps {
        report.write_reps_csv(io::BufWriter::new(File::create(path)?))?;
    }
    write_json(&report, args.out.as_deref())
}
