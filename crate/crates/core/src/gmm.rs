//! Multivariate Gaussian mixtures fitted by EM from a k-means++ start.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hmm::draw;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const KMEANS_MAX_ITERS: usize = 300;
const MAX_RIDGE: f64 = 1e-2;

/// One full-covariance Gaussian with its Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    /// `-½ (d ln 2π + ln |Σ|)`
    log_norm: f64,
}

impl Gaussian {
    /// Fails when `covariance` is not symmetric positive-definite.
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::invalid(format!(
                "mean of dimension {d} does not match a {}x{} covariance",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive-definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::Numerical("covariance determinant is not finite".into()));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance,
            chol_lower: l,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn log_density(&self, point: &[f64]) -> f64 {
        let diff = DVector::from_iterator(
            point.len(),
            point.iter().zip(self.mean.iter()).map(|(x, m)| x - m),
        );
        // Solve L z = diff; the Mahalanobis term is |z|².
        let z = self
            .chol_lower
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Weighted sum of Gaussians, `p(y) = Σ c_i N(y | μ_i, Σ_i)`.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::invalid("mixture weights must lie in [0, 1]"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {sum}")));
        }
        let d = components[0].dimension();
        if components.iter().any(|c| c.dimension() != d) {
            return Err(Error::invalid("mixture components differ in dimension"));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dimension(&self) -> usize {
        self.components[0].dimension()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn log_density(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dimension() {
            return Err(Error::invalid(format!(
                "point of dimension {} for a mixture of dimension {}",
                point.len(),
                self.dimension()
            )));
        }
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("point has a non-finite coordinate"));
        }
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(point))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    pub fn density(&self, point: &[f64]) -> Result<f64> {
        self.log_density(point).map(f64::exp)
    }

    /// Draws `count` points.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let d = self.dimension();
        (0..count)
            .map(|_| {
                let c = &self.components[draw(&self.weights, rng)];
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                (&c.mean + &c.chol_lower * z).as_slice().to_vec()
            })
            .collect()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn check_data<P: AsRef<[f64]>>(data: &[P]) -> Result<usize> {
    let d = data
        .first()
        .map(|p| p.as_ref().len())
        .ok_or_else(|| Error::invalid("no data points"))?;
    if d == 0 {
        return Err(Error::invalid("data points have dimension 0"));
    }
    for (i, p) in data.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != d {
            return Err(Error::invalid(format!("point {i} has dimension {}, expected {d}", p.len())));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
    }
    Ok(d)
}

fn count_distinct<P: AsRef<[f64]>>(data: &[P]) -> usize {
    let mut keys: Vec<Vec<u64>> = data
        .iter()
        .map(|p| p.as_ref().iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Lloyd's algorithm from a k-means++ seeding.
pub fn kmeans<P: AsRef<[f64]>>(data: &[P], k: usize, seed: u64) -> Result<KMeans> {
    let d = check_data(data)?;
    if k == 0 {
        return Err(Error::invalid("k-means needs at least one cluster"));
    }
    let distinct = count_distinct(data);
    if distinct < k {
        return Err(Error::invalid(format!(
            "k-means with {k} clusters needs at least {k} distinct points, found {distinct}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(data[rng.random_range(0..n)].as_ref().to_vec());
    let mut d2: Vec<f64> = data
        .iter()
        .map(|p| sq_dist(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let weights: Vec<f64> = d2.iter().map(|x| x / total).collect();
        let pick = draw(&weights, &mut rng);
        let c = data[pick].as_ref().to_vec();
        for (dist, p) in d2.iter_mut().zip(data) {
            *dist = dist.min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }

    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(data) {
            let (c, _) = nearest(p.as_ref(), &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(data) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed at the point farthest from its own centroid.
                let mut far = (0, -1.0);
                for (i, p) in data.iter().enumerate() {
                    let dist = sq_dist(p.as_ref(), &centroids[assignments[i]]);
                    if dist > far.1 {
                        far = (i, dist);
                    }
                }
                centroids[c] = data[far.0].as_ref().to_vec();
                assignments[far.0] = c;
            }
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Added to every covariance diagonal after each M-step.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: 1e-6,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: MixtureModel,
    /// Total log-likelihood of each accepted parameter set, starting from the
    /// k-means initialization.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Ridge actually used; larger than requested if a covariance was singular.
    pub ridge: f64,
    pub warnings: Vec<String>,
}

fn weighted_moments<P: AsRef<[f64]>>(
    data: &[P],
    weights: &[f64],
    d: usize,
) -> (f64, Vec<f64>, DMatrix<f64>) {
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (p, &w) in data.iter().zip(weights) {
        for (m, x) in mean.iter_mut().zip(p.as_ref()) {
            *m += w * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = DMatrix::zeros(d, d);
    for (p, &w) in data.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let p = p.as_ref();
        for r in 0..d {
            let dr = p[r] - mean[r];
            for c in 0..=r {
                cov[(r, c)] += w * dr * (p[c] - mean[c]);
            }
        }
    }
    for r in 0..d {
        for c in 0..=r {
            let v = cov[(r, c)] / total;
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    (total, mean, cov)
}

/// Builds a component, raising the ridge by ×10 (up to 1e-2) while the
/// covariance stays singular.
fn regularized(mean: Vec<f64>, cov: &DMatrix<f64>, ridge: &mut f64) -> Result<Gaussian> {
    let d = mean.len();
    loop {
        let c = cov + DMatrix::identity(d, d) * *ridge;
        match Gaussian::new(mean.clone(), c) {
            Ok(g) => return Ok(g),
            Err(Error::Numerical(_)) if *ridge * 10.0 <= MAX_RIDGE * (1.0 + 1e-12) => {
                *ridge *= 10.0;
            }
            Err(e) => {
                return Err(Error::Numerical(format!(
                    "covariance singular even with ridge {:e}: {e}; diagonal = {:?}",
                    *ridge,
                    cov.diagonal().as_slice()
                )))
            }
        }
    }
}

struct EStep {
    resp: Vec<f64>,
    log_likelihood: f64,
}

fn e_step<P: AsRef<[f64]>>(model: &MixtureModel, data: &[P]) -> EStep {
    let k = model.num_components();
    let mut resp = vec![0.0; data.len() * k];
    let mut ll = 0.0;
    let log_w: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
    for (i, p) in data.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for (c, comp) in model.components.iter().enumerate() {
            row[c] = log_w[c] + comp.log_density(p.as_ref());
        }
        let lse = log_sum_exp(row);
        ll += lse;
        row.iter_mut().for_each(|r| *r = (*r - lse).exp());
    }
    EStep {
        resp,
        log_likelihood: ll,
    }
}

/// Fits a `k`-component full-covariance mixture by EM.
pub fn fit<P: AsRef<[f64]>>(data: &[P], k: usize, config: &GmmConfig) -> Result<GmmFit> {
    let d = check_data(data)?;
    let mut warnings = Vec::new();
    if data.len() < k * (d + 1) {
        warnings.push(format!(
            "only {} points for {k} components in dimension {d}; at least {} recommended",
            data.len(),
            k * (d + 1)
        ));
    }
    let mut ridge = config.ridge;
    let km = kmeans(data, k, config.seed)?;
    let n = data.len() as f64;

    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let member: Vec<f64> = km
            .assignments
            .iter()
            .map(|&a| if a == c { 1.0 } else { 0.0 })
            .collect();
        let (count, mean, cov) = weighted_moments(data, &member, d);
        weights.push(count / n);
        components.push(regularized(mean, &cov, &mut ridge)?);
    }
    let mut model = MixtureModel::new(weights, components)?;
    let mut e = e_step(&model, data);
    let mut trace = vec![e.log_likelihood];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iters {
        let mut weights = Vec::with_capacity(k);
        let mut components = Vec::with_capacity(k);
        for c in 0..k {
            let r: Vec<f64> = e.resp.iter().skip(c).step_by(k).copied().collect();
            let nk: f64 = r.iter().sum();
            if nk > 0.0 {
                let (_, mean, cov) = weighted_moments(data, &r, d);
                components.push(regularized(mean, &cov, &mut ridge)?);
            } else {
                components.push(model.components[c].clone());
            }
            weights.push(nk / n);
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        let candidate = MixtureModel::new(weights, components)?;
        let next = e_step(&candidate, data);
        iterations += 1;
        let prev = e.log_likelihood;
        let cur = next.log_likelihood;
        if cur < prev {
            // The ridge makes the M-step an approximate maximizer; refuse a
            // step that lowers the likelihood and stop at the previous fit.
            warnings.push(format!(
                "EM step {iterations} lowered the log-likelihood by {:e}; stopped",
                prev - cur
            ));
            converged = true;
            break;
        }
        model = candidate;
        e = next;
        trace.push(cur);
        if cur - prev <= config.rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }

    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
        iterations,
        converged,
        ridge,
        warnings,
    })
}

/// E-step posteriors for each point, `len × K` row-major.
pub fn responsibilities<P: AsRef<[f64]>>(model: &MixtureModel, data: &[P]) -> Result<Vec<f64>> {
    let d = check_data(data)?;
    if d != model.dimension() {
        return Err(Error::invalid("data dimension does not match the mixture"));
    }
    Ok(e_step(model, data).resp)
}
