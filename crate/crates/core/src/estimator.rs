//! Empirical minimum covariance determinant: trimmed moments of subsets,
//! the coverage radius, exhaustive search, and concentration steps.

use std::cmp::Ordering;
use std::io::Read;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{shape_error, McdError, Result};
use crate::linalg::{pds_sqrt, PdsMatrix, SymMatrix};

/// Largest number of subsets `mcd_exact` will enumerate.
pub const EXACT_LIMIT: f64 = 1e6;

/// Maximum number of concentration steps per chain.
pub const MAX_CSTEPS: usize = 100;

/// Relative determinant change below which a chain is considered converged.
pub const CSTEP_REL_TOL: f64 = 1e-12;

/// `n` observations in `R^k`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    k: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map(|r| r.len()).unwrap_or(0);
        if k == 0 {
            return Err(McdError::InvalidInput("sample is empty".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(shape_error(format!("{k} coordinates"), format!("{} in row {i}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(McdError::InvalidInput(format!("row {i} has a non-finite value")));
            }
            data.extend_from_slice(row);
        }
        Ok(SampleSet { k, data })
    }

    pub fn from_flat(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || data.is_empty() || !data.len().is_multiple_of(k) {
            return Err(shape_error(format!("multiple of {k}"), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(McdError::InvalidInput("non-finite value in sample".into()));
        }
        Ok(SampleSet { k, data })
    }

    /// Reads comma-separated observations, one per line.
    pub fn from_csv<R: Read>(reader: R, header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(header)
            .trim(csv::Trim::All)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| McdError::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| McdError::Parse {
                        line,
                        message: format!("`{f}` is not a finite number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first().map(|r: &Vec<f64>| r.len()) {
                if row.len() != first {
                    return Err(McdError::Parse {
                        line,
                        message: format!("expected {first} fields, found {}", row.len()),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(McdError::Parse {
                line: 0,
                message: "no observations".into(),
            });
        }
        Self::new(rows)
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Applies `x -> Bx + b` to every observation.
    pub fn affine(&self, b: &DMatrix<f64>, shift: &DVector<f64>) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.rows() {
            let y = b * DVector::from_column_slice(row) + shift;
            data.extend(y.iter());
        }
        SampleSet { k: self.k, data }
    }
}

/// Subset size `ceil(n * gamma)`, guarding against round-off in the product.
pub fn subset_size(n: usize, gamma: f64) -> usize {
    let x = n as f64 * gamma;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * n.max(1) as f64 {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

fn check_fraction(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(McdError::BadFraction(gamma))
    }
}

/// Result of an MCD search.
#[derive(Debug, Clone)]
pub struct McdFit {
    /// Sorted indices of the selected observations.
    pub subset: Vec<usize>,
    pub location: DVector<f64>,
    pub scatter: PdsMatrix,
    /// Symmetric square root of `scatter`.
    pub shape: PdsMatrix,
    pub radius: f64,
    pub det: f64,
    pub exact: bool,
    pub gamma: f64,
    /// Candidates discarded because their covariance was singular.
    pub degenerate_candidates: usize,
}

impl McdFit {
    pub fn h(&self) -> usize {
        self.subset.len()
    }

    pub fn theta(&self) -> crate::linalg::ThetaParams {
        crate::linalg::ThetaParams::new(self.location.clone(), self.shape.clone(), self.radius)
            .expect("fit parameters are valid")
    }
}

/// Mean and covariance (divisor `h`) of the observations in `subset`.
pub fn trimmed_moments(samples: &SampleSet, subset: &[usize]) -> Result<(DVector<f64>, SymMatrix)> {
    if subset.is_empty() {
        return Err(McdError::InvalidInput("subset is empty".into()));
    }
    let k = samples.dim();
    let h = subset.len() as f64;
    let mut mean = DVector::zeros(k);
    for &i in subset {
        for (m, x) in mean.iter_mut().zip(samples.row(i)) {
            *m += x;
        }
    }
    mean /= h;
    let mut cov = DMatrix::zeros(k, k);
    let mut d = vec![0.0; k];
    for &i in subset {
        for (dj, (x, m)) in d.iter_mut().zip(samples.row(i).iter().zip(mean.iter())) {
            *dj = x - m;
        }
        for a in 0..k {
            for b in a..k {
                cov[(a, b)] += d[a] * d[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            let v = cov[(a, b)] / h;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((mean, SymMatrix::new(cov)?))
}

/// Trimmed moments with the covariance required to be positive definite.
pub fn trimmed_moments_pds(samples: &SampleSet, subset: &[usize]) -> Result<(DVector<f64>, PdsMatrix)> {
    let (t, c) = trimmed_moments(samples, subset)?;
    let c = PdsMatrix::new(c).map_err(|_| McdError::DegenerateSubset {
        subset: subset.to_vec(),
    })?;
    Ok((t, c))
}

/// Mahalanobis distances `sqrt((x-T)' C^{-1} (x-T))` of every observation.
pub fn mahalanobis_distances(location: &DVector<f64>, scatter: &PdsMatrix, samples: &SampleSet) -> Vec<f64> {
    let k = samples.dim();
    let inv = scatter.inverse();
    let mut d = vec![0.0; k];
    samples
        .rows()
        .map(|x| {
            for j in 0..k {
                d[j] = x[j] - location[j];
            }
            let mut q = 0.0;
            for a in 0..k {
                let mut s = 0.0;
                for b in 0..k {
                    s += inv[(a, b)] * d[b];
                }
                q += d[a] * s;
            }
            q.max(0.0).sqrt()
        })
        .collect()
}

/// Smallest radius whose ellipsoid `E(T, C, r)` holds `ceil(n gamma)` points.
pub fn coverage_radius(location: &DVector<f64>, scatter: &PdsMatrix, samples: &SampleSet, gamma: f64) -> Result<f64> {
    check_fraction(gamma)?;
    if location.len() != samples.dim() || scatter.dim() != samples.dim() {
        return Err(shape_error(samples.dim(), location.len()));
    }
    let h = subset_size(samples.n(), gamma);
    let mut d = mahalanobis_distances(location, scatter, samples);
    let (_, kth, _) = d.select_nth_unstable_by(h - 1, f64::total_cmp);
    Ok(*kth)
}

/// Number of size-`h` subsets of `n` items, as a float.
pub fn binomial(n: usize, h: usize) -> f64 {
    let h = h.min(n - h.min(n));
    (0..h).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn covariance_det(c: &SymMatrix) -> Option<f64> {
    PdsMatrix::new(c.clone()).ok().map(|p| p.determinant())
}

fn check_subset_size(samples: &SampleSet, gamma: f64) -> Result<usize> {
    check_fraction(gamma)?;
    let h = subset_size(samples.n(), gamma);
    if h < samples.dim() + 1 {
        return Err(McdError::InvalidInput(format!(
            "subset size {h} must be at least k + 1 = {}",
            samples.dim() + 1
        )));
    }
    Ok(h)
}

fn finish_fit(
    samples: &SampleSet,
    subset: Vec<usize>,
    gamma: f64,
    exact: bool,
    degenerate_candidates: usize,
) -> Result<McdFit> {
    let (location, scatter) = trimmed_moments_pds(samples, &subset)?;
    let radius = coverage_radius(&location, &scatter, samples, gamma)?;
    let shape = pds_sqrt(&scatter);
    let det = scatter.determinant();
    Ok(McdFit {
        subset,
        location,
        scatter,
        shape,
        radius,
        det,
        exact,
        gamma,
        degenerate_candidates,
    })
}

/// Global minimizer of `det(C(S))` over all subsets of size `ceil(n gamma)`.
///
/// Subsets with a singular covariance are skipped and counted; ties are
/// resolved in favour of the lexicographically smallest index set.
pub fn mcd_exact(samples: &SampleSet, gamma: f64) -> Result<McdFit> {
    let h = check_subset_size(samples, gamma)?;
    let n = samples.n();
    let count = binomial(n, h);
    if count > EXACT_LIMIT {
        return Err(McdError::TooLarge {
            count,
            limit: EXACT_LIMIT,
        });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut degenerate = 0usize;
    let mut last_degenerate = None;
    for subset in (0..n).combinations(h) {
        let (_, c) = trimmed_moments(samples, &subset)?;
        match covariance_det(&c) {
            Some(det) => {
                if best.as_ref().is_none_or(|(b, _)| det < *b) {
                    best = Some((det, subset));
                }
            }
            None => {
                degenerate += 1;
                last_degenerate = Some(subset);
            }
        }
    }
    match best {
        Some((_, subset)) => finish_fit(samples, subset, gamma, true, degenerate),
        None => Err(McdError::DegenerateSample {
            subset: last_degenerate,
        }),
    }
}

/// Indices of the `h` smallest values, ties broken by index; returned sorted.
fn smallest_h(dist: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    let cmp = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
    if h < idx.len() {
        idx.select_nth_unstable_by(h - 1, cmp);
        idx.truncate(h);
    }
    idx.sort_unstable();
    idx
}

/// Outcome of one concentration chain.
#[derive(Debug, Clone)]
pub struct CstepChain {
    pub subset: Vec<usize>,
    /// Determinants of the successive size-`h` subsets.
    pub dets: Vec<f64>,
}

/// Runs concentration steps from `start` (any size with a non-singular
/// covariance) until the determinant stops decreasing.
pub fn cstep_chain(samples: &SampleSet, h: usize, start: &[usize]) -> Result<CstepChain> {
    let (mut t, mut c) = trimmed_moments_pds(samples, start)?;
    let mut subset: Vec<usize> = start.to_vec();
    let mut dets = Vec::new();
    for _ in 0..MAX_CSTEPS {
        let dist = mahalanobis_distances(&t, &c, samples);
        let next = smallest_h(&dist, h);
        if next == subset {
            break;
        }
        let (t_new, c_new) = trimmed_moments_pds(samples, &next)?;
        let det = c_new.determinant();
        let prev = dets.last().copied();
        if let Some(p) = prev {
            if det > p {
                // no improvement; keep the previous subset
                break;
            }
        }
        dets.push(det);
        subset = next;
        t = t_new;
        c = c_new;
        if let Some(p) = prev {
            if (p - det) <= CSTEP_REL_TOL * p {
                break;
            }
        }
    }
    if dets.is_empty() {
        // start was already a fixed point of size h
        dets.push(c.determinant());
    }
    Ok(CstepChain { subset, dets })
}

fn random_start(samples: &SampleSet, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let k = samples.dim();
    let n = samples.n();
    for _ in 0..50 {
        let mut start = index::sample(rng, n, k + 1).into_vec();
        start.sort_unstable();
        if trimmed_moments_pds(samples, &start).is_ok() {
            return Some(start);
        }
    }
    None
}

/// Per-restart generator: stream `restart` of the ChaCha stream family for `seed`.
pub fn restart_rng(seed: u64, restart: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart);
    rng
}

fn better(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
}

/// `(det, subset)` of a finished chain, or the degenerate subset that stopped it.
type RestartOutcome = std::result::Result<(f64, Vec<usize>), Option<Vec<usize>>>;

/// Concentration-step heuristic from `restarts` random `(k+1)`-point starts.
pub fn mcd_cstep(samples: &SampleSet, gamma: f64, restarts: usize, seed: u64) -> Result<McdFit> {
    let h = check_subset_size(samples, gamma)?;
    if restarts == 0 {
        return Err(McdError::InvalidInput("restarts must be at least 1".into()));
    }
    let outcomes: Vec<RestartOutcome> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = restart_rng(seed, i as u64);
            let start = random_start(samples, &mut rng).ok_or(None)?;
            match cstep_chain(samples, h, &start) {
                Ok(chain) => Ok((*chain.dets.last().expect("chain has a determinant"), chain.subset)),
                Err(McdError::DegenerateSubset { subset }) => Err(Some(subset)),
                Err(_) => Err(None),
            }
        })
        .collect();
    let degenerate = outcomes.iter().filter(|o| o.is_err()).count();
    let best = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok())
        .min_by(|a, b| better(a, b))
        .cloned();
    match best {
        Some((_, subset)) => finish_fit(samples, subset, gamma, false, degenerate),
        None => Err(McdError::DegenerateSample {
            subset: outcomes.into_iter().rev().find_map(|o| o.err().flatten()),
        }),
    }
}

/// True iff the selected points lie inside `E(T, C, r_hat)` and occupy the
/// `h` smallest Mahalanobis distances (ties at the boundary allowed).
pub fn separation_check(fit: &McdFit, samples: &SampleSet) -> bool {
    let d = mahalanobis_distances(&fit.location, &fit.scatter, samples);
    let tol = 1e-9 * fit.radius.max(1.0);
    let mut inside = vec![false; samples.n()];
    for &i in &fit.subset {
        if i >= samples.n() {
            return false;
        }
        inside[i] = true;
    }
    let max_in = fit.subset.iter().map(|&i| d[i]).fold(0.0, f64::max);
    let min_out = (0..samples.n())
        .filter(|&i| !inside[i])
        .map(|i| d[i])
        .fold(f64::INFINITY, f64::min);
    max_in <= fit.radius + tol && max_in <= min_out + tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn line(xs: &[f64]) -> SampleSet {
        SampleSet::new(xs.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    fn gaussian_cloud(n: usize, k: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
        SampleSet::from_flat(k, data).unwrap()
    }

    #[test]
    fn two_point_subset_is_degenerate() {
        let s = SampleSet::new(vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let (t, c) = trimmed_moments(&s, &[0, 1]).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 0.0]);
        assert_eq!(c.as_matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(trimmed_moments_pds(&s, &[0, 1]), Err(McdError::DegenerateSubset { .. })));
    }

    #[test]
    fn moments_match_two_pass_oracle() {
        let s = gaussian_cloud(30, 3, 1);
        let subset: Vec<usize> = (0..30).step_by(2).collect();
        let (t, c) = trimmed_moments(&s, &subset).unwrap();
        let h = subset.len() as f64;
        let mut mean = [0.0; 3];
        for &i in &subset {
            for j in 0..3 {
                mean[j] += s.row(i)[j] / h;
            }
        }
        for a in 0..3 {
            assert!((t[a] - mean[a]).abs() < 1e-14);
            for b in 0..3 {
                let v: f64 = subset.iter().map(|&i| (s.row(i)[a] - mean[a]) * (s.row(i)[b] - mean[b])).sum::<f64>() / h;
                assert!((c.as_matrix()[(a, b)] - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coverage_radius_order_statistic() {
        let s = line(&[-1.0, 0.0, 2.0, 5.0]);
        let t = DVector::from_vec(vec![0.0]);
        let c = PdsMatrix::identity(1);
        assert_eq!(coverage_radius(&t, &c, &s, 0.5).unwrap(), 1.0);
        assert_eq!(coverage_radius(&t, &c, &s, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn coverage_radius_matches_sort() {
        let s = gaussian_cloud(57, 2, 4);
        let (t, c) = trimmed_moments_pds(&s, &(0..57).collect::<Vec<_>>()).unwrap();
        let mut d = mahalanobis_distances(&t, &c, &s);
        d.sort_by(f64::total_cmp);
        for gamma in [0.3, 0.5, 0.75, 1.0] {
            let h = subset_size(57, gamma);
            assert_eq!(coverage_radius(&t, &c, &s, gamma).unwrap(), d[h - 1]);
        }
    }

    #[test]
    fn subset_size_is_ceiling() {
        assert_eq!(subset_size(4, 0.75), 3);
        assert_eq!(subset_size(5, 0.5), 3);
        assert_eq!(subset_size(30, 0.1), 3);
        assert_eq!(subset_size(20, 0.75), 15);
        assert_eq!(subset_size(7, 1.0), 7);
    }

    #[test]
    fn exact_one_dimensional() {
        let s = line(&[0.0, 1.0, 2.0, 10.0]);
        let fit = mcd_exact(&s, 0.75).unwrap();
        assert_eq!(fit.subset, vec![0, 1, 2]);
        assert!((fit.location[0] - 1.0).abs() < 1e-15);
        assert!((fit.scatter.as_matrix()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!(separation_check(&fit, &s));
    }

    #[test]
    fn exact_with_full_subset() {
        let s = gaussian_cloud(9, 2, 2);
        let fit = mcd_exact(&s, 1.0).unwrap();
        let (t, c) = trimmed_moments(&s, &(0..9).collect::<Vec<_>>()).unwrap();
        assert_eq!(fit.subset, (0..9).collect::<Vec<_>>());
        assert!((fit.location - t).abs().max() < 1e-15);
        assert!((fit.scatter.as_matrix() - c.as_matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn exact_drops_far_outlier() {
        let mut s = gaussian_cloud(8, 2, 3).as_flat().to_vec();
        s[14] = 40.0;
        s[15] = -35.0;
        let s = SampleSet::from_flat(2, s).unwrap();
        let fit = mcd_exact(&s, 7.0 / 8.0).unwrap();
        assert_eq!(fit.subset, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn exact_guards() {
        let s = gaussian_cloud(40, 2, 5);
        assert!(matches!(mcd_exact(&s, 0.5), Err(McdError::TooLarge { .. })));
        assert!(matches!(mcd_exact(&s, 1.5), Err(McdError::BadFraction(_))));
        let dup = SampleSet::new(vec![vec![1.0, 1.0]; 6]).unwrap();
        assert!(matches!(mcd_exact(&dup, 0.75), Err(McdError::DegenerateSample { .. })));
    }

    #[test]
    fn separation_rejects_swapped_pair() {
        let s = line(&[0.0, 1.0, 2.0, 10.0]);
        let mut fit = mcd_exact(&s, 0.75).unwrap();
        fit.subset = vec![0, 1, 3];
        assert!(!separation_check(&fit, &s));
    }

    #[test]
    fn separation_allows_boundary_tie() {
        // symmetric points: the two points at +-1 tie at the boundary
        let s = line(&[-1.0, 0.0, 1.0, 5.0]);
        let fit = mcd_exact(&s, 0.75).unwrap();
        assert!(separation_check(&fit, &s));
        let s = line(&[-1.0, 0.0, 1.0]);
        let fit = McdFit {
            subset: vec![0, 1],
            location: DVector::from_vec(vec![0.0]),
            scatter: PdsMatrix::identity(1),
            shape: PdsMatrix::identity(1),
            radius: 1.0,
            det: 1.0,
            exact: false,
            gamma: 0.5,
            degenerate_candidates: 0,
        };
        assert!(separation_check(&fit, &s));
    }

    #[test]
    fn cstep_is_deterministic() {
        let s = gaussian_cloud(60, 2, 9);
        let a = mcd_cstep(&s, 0.75, 8, 42).unwrap();
        let b = mcd_cstep(&s, 0.75, 8, 42).unwrap();
        assert_eq!(a.subset, b.subset);
        assert_eq!(a.det.to_bits(), b.det.to_bits());
        assert!(separation_check(&a, &s));
    }

    #[test]
    fn cstep_chain_is_monotone() {
        let s = gaussian_cloud(200, 3, 10);
        let h = subset_size(200, 0.6);
        let mut rng = restart_rng(1, 0);
        for _ in 0..20 {
            let start = random_start(&s, &mut rng).unwrap();
            let chain = cstep_chain(&s, h, &start).unwrap();
            for w in chain.dets.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn cstep_on_duplicated_point() {
        // fifteen copies of one point followed by five scattered points
        let mut rows = vec![vec![1.0, 1.0]; 15];
        rows.extend([vec![3.0, 0.0], vec![-2.0, 4.0], vec![0.5, -3.0], vec![5.0, 5.0], vec![-4.0, -1.0]]);
        let s = SampleSet::new(rows).unwrap();
        assert!(matches!(mcd_cstep(&s, 0.75, 10, 1), Err(McdError::DegenerateSample { subset: Some(_) })));
    }

    #[test]
    fn cstep_never_beats_exact() {
        for seed in 0..5 {
            let s = gaussian_cloud(12, 2, 100 + seed);
            let ex = mcd_exact(&s, 0.75).unwrap();
            let cs = mcd_cstep(&s, 0.75, 20, seed).unwrap();
            assert!(cs.det >= ex.det - 1e-12);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn exact_fit_is_affine_equivariant(seed in proptest::prelude::any::<u64>()) {
            let s = gaussian_cloud(10, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let b = loop {
                let b = DMatrix::<f64>::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
                if b.determinant().abs() > 0.2 {
                    break b;
                }
            };
            let shift = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let fit = mcd_exact(&s, 0.75).unwrap();
            let moved = mcd_exact(&s.affine(&b, &shift), 0.75).unwrap();
            proptest::prop_assert_eq!(&fit.subset, &moved.subset);
            let t = &b * &fit.location + &shift;
            let c = &b * fit.scatter.as_matrix() * b.transpose();
            proptest::prop_assert!((t - &moved.location).amax() < 1e-9);
            proptest::prop_assert!((c - moved.scatter.as_matrix()).amax() < 1e-9);
        }

        #[test]
        fn cstep_chain_never_increases_det(seed in proptest::prelude::any::<u64>()) {
            let s = gaussian_cloud(40, 3, seed);
            let mut rng = restart_rng(seed, 0);
            let start = rand::seq::index::sample(&mut rng, 40, 4).into_vec();
            if let Ok(chain) = cstep_chain(&s, 30, &start) {
                for w in chain.dets.windows(2) {
                    proptest::prop_assert!(w[1] <= w[0]);
                }
            }
        }

        #[test]
        fn cstep_never_beats_exact_on_random_clouds(seed in proptest::prelude::any::<u64>()) {
            let s = gaussian_cloud(12, 2, seed);
            let exact = mcd_exact(&s, 0.75).unwrap();
            let heuristic = mcd_cstep(&s, 0.75, 5, seed).unwrap();
            proptest::prop_assert!(heuristic.det >= exact.det - 1e-12);
        }
    }
}
