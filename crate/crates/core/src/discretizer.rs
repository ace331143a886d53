//! Linear binning of observation triples and the 3-D ↔ 1-D symbol mapping.
//!
//! Bin coordinates `(x, y, z)` index fracChange, fracHigh and fracLow
//! respectively and are 1-based, as is the flattened symbol
//! `n = (z-1)·x_max·y_max + (y-1)·x_max + x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gmm::MixtureModel;
use crate::market::ObservationTriple;

/// Bins per feature: fracChange, fracHigh, fracLow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinCounts {
    pub frac_change: usize,
    pub frac_high: usize,
    pub frac_low: usize,
}

impl std::fmt::Display for BinCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.frac_change, self.frac_high, self.frac_low)
    }
}

impl Default for BinCounts {
    fn default() -> Self {
        Self::new(50, 10, 10)
    }
}

impl BinCounts {
    pub const fn new(frac_change: usize, frac_high: usize, frac_low: usize) -> Self {
        Self {
            frac_change,
            frac_high,
            frac_low,
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.frac_change, self.frac_high, self.frac_low]
    }

    pub fn total(&self) -> usize {
        self.frac_change * self.frac_high * self.frac_low
    }

    /// Parses `50,10,10`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("bin counts `{s}` must have three entries")));
        }
        let mut v = [0usize; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .ok_or_else(|| Error::invalid(format!("bin count `{p}` is not a positive integer")))?;
        }
        Ok(Self::new(v[0], v[1], v[2]))
    }
}

/// Result of placing one observation on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binned {
    pub coords: [usize; 3],
    /// At least one feature fell outside the fitted range and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationGrid {
    counts: BinCounts,
    edges: [Vec<f64>; 3],
}

fn linspace(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = hi - lo;
    let mut e: Vec<f64> = (0..bins)
        .map(|i| lo + width * (i as f64 / bins as f64))
        .collect();
    e.push(hi);
    e
}

impl DiscretizationGrid {
    /// Edges spanning the per-feature minimum and maximum of `observations`.
    pub fn fit(observations: &[ObservationTriple], counts: BinCounts) -> Result<Self> {
        if observations.len() < 2 {
            return Err(Error::invalid("at least two observations are needed to fit a grid"));
        }
        let mut edges: [Vec<f64>; 3] = Default::default();
        for (k, e) in edges.iter_mut().enumerate() {
            let name = ObservationTriple::FEATURE_NAMES[k];
            let values = observations.iter().map(|o| o.to_array()[k]);
            if values.clone().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} has a non-finite value")));
            }
            let lo = values.clone().fold(f64::INFINITY, f64::min);
            let hi = values.fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                return Err(Error::invalid(format!(
                    "{name} is constant ({lo}) over the fitting data"
                )));
            }
            *e = linspace(lo, hi, counts.as_array()[k]);
        }
        Self::from_edges(counts, edges)
    }

    /// Rebuilds a grid from stored edges, checking their shape.
    pub fn from_edges(counts: BinCounts, edges: [Vec<f64>; 3]) -> Result<Self> {
        for (k, e) in edges.iter().enumerate() {
            let name = ObservationTriple::FEATURE_NAMES[k];
            let n = counts.as_array()[k];
            if n == 0 {
                return Err(Error::invalid(format!("{name} needs at least one bin")));
            }
            if e.len() != n + 1 {
                return Err(Error::invalid(format!(
                    "{name} has {} edges for {n} bins",
                    e.len()
                )));
            }
            if e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid(format!("{name} edges are not strictly increasing")));
            }
        }
        Ok(Self { counts, edges })
    }

    pub fn counts(&self) -> BinCounts {
        self.counts
    }

    pub fn edges(&self) -> &[Vec<f64>; 3] {
        &self.edges
    }

    pub fn num_symbols(&self) -> usize {
        self.counts.total()
    }

    /// 1-based bin of each feature; the last bin is closed above and values
    /// outside the fitted range clamp to the boundary bins.
    pub fn discretize(&self, obs: &ObservationTriple) -> Result<Binned> {
        let mut coords = [0; 3];
        let mut clamped = false;
        for (k, v) in obs.to_array().into_iter().enumerate() {
            if v.is_nan() {
                return Err(Error::invalid(format!(
                    "{} is NaN",
                    ObservationTriple::FEATURE_NAMES[k]
                )));
            }
            let e = &self.edges[k];
            let n = e.len() - 1;
            coords[k] = if v < e[0] {
                clamped = true;
                1
            } else if v >= e[n] {
                clamped |= v > e[n];
                n
            } else {
                e.partition_point(|&x| x <= v)
            };
        }
        Ok(Binned { coords, clamped })
    }

    pub fn flatten(&self, x: usize, y: usize, z: usize) -> Result<usize> {
        let [xm, ym, zm] = self.counts.as_array();
        if !(1..=xm).contains(&x) || !(1..=ym).contains(&y) || !(1..=zm).contains(&z) {
            return Err(Error::invalid(format!(
                "bin ({x}, {y}, {z}) outside grid ({xm}, {ym}, {zm})"
            )));
        }
        Ok((z - 1) * xm * ym + (y - 1) * xm + x)
    }

    pub fn unflatten(&self, n: usize) -> Result<(usize, usize, usize)> {
        let [xm, ym, _] = self.counts.as_array();
        if !(1..=self.num_symbols()).contains(&n) {
            return Err(Error::invalid(format!(
                "symbol {n} outside [1, {}]",
                self.num_symbols()
            )));
        }
        let z = (n - 1) / (xm * ym) + 1;
        let y = (n - 1 - (z - 1) * xm * ym) / xm + 1;
        let x = (n - 1) % xm + 1;
        Ok((x, y, z))
    }

    /// Discretizes and flattens in one step; returns the 1-based symbol and
    /// whether clamping occurred.
    pub fn symbol(&self, obs: &ObservationTriple) -> Result<(usize, bool)> {
        let b = self.discretize(obs)?;
        let [x, y, z] = b.coords;
        Ok((self.flatten(x, y, z)?, b.clamped))
    }

    /// Midpoint of the bin cell of symbol `n`.
    pub fn bin_center(&self, n: usize) -> Result<ObservationTriple> {
        let (x, y, z) = self.unflatten(n)?;
        let mid = |k: usize, i: usize| 0.5 * (self.edges[k][i - 1] + self.edges[k][i]);
        Ok(ObservationTriple::new(mid(0, x), mid(1, y), mid(2, z)))
    }
}

/// Relative amplitude of the per-entry jitter applied to emission rows.
pub const DEFAULT_EMISSION_JITTER: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct EmissionInit {
    /// `num_states × M` row-major.
    pub matrix: Vec<f64>,
    pub warnings: Vec<String>,
}

/// How the mixture fit seeds the per-state emission rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmissionSeeding {
    /// Every state starts from the full mixture density; only the jitter
    /// tells the states apart.
    Shared,
    /// State `i` starts from the components `j` with `j mod N == i`
    /// (component `i mod K` when there are more states than components).
    #[default]
    PerComponent,
}

impl EmissionSeeding {
    pub fn as_str(self) -> &'static str {
        match self {
            EmissionSeeding::Shared => "shared",
            EmissionSeeding::PerComponent => "per-component",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "shared" => Ok(EmissionSeeding::Shared),
            "per-component" => Ok(EmissionSeeding::PerComponent),
            other => Err(Error::invalid(format!(
                "unknown emission seeding `{other}` (expected shared or per-component)"
            ))),
        }
    }
}

/// Initial emission matrix: the mixture density at every bin center,
/// normalized, then perturbed per state by `(1 + jitter·u)`, `u ~ U[-1, 1]`,
/// and renormalized.
pub fn init_emission(
    mix: &MixtureModel,
    grid: &DiscretizationGrid,
    num_states: usize,
    jitter_seed: u64,
    jitter: f64,
) -> Result<EmissionInit> {
    check_emission_args(mix, num_states, jitter)?;
    let mut warnings = Vec::new();
    let base = density_row(mix, grid, &mut warnings)?;
    let bases = vec![base; num_states];
    Ok(EmissionInit {
        matrix: jitter_rows(&bases, jitter_seed, jitter),
        warnings,
    })
}

/// Like [`init_emission`], but each state's row comes from its own subset
/// of mixture components (see [`EmissionSeeding::PerComponent`]), with
/// weights renormalized inside the subset.
pub fn init_emission_per_component(
    mix: &MixtureModel,
    grid: &DiscretizationGrid,
    num_states: usize,
    jitter_seed: u64,
    jitter: f64,
) -> Result<EmissionInit> {
    check_emission_args(mix, num_states, jitter)?;
    let k = mix.num_components();
    let mut warnings = Vec::new();
    let mut bases = Vec::with_capacity(num_states);
    for i in 0..num_states {
        let mut members: Vec<usize> = (i..k).step_by(num_states).collect();
        if members.is_empty() {
            members.push(i % k);
        }
        let total: f64 = members.iter().map(|&j| mix.weights()[j]).sum();
        let sub = MixtureModel::new(
            members.iter().map(|&j| mix.weights()[j] / total).collect(),
            members.iter().map(|&j| mix.components()[j].clone()).collect(),
        )?;
        bases.push(density_row(&sub, grid, &mut warnings)?);
    }
    Ok(EmissionInit {
        matrix: jitter_rows(&bases, jitter_seed, jitter),
        warnings,
    })
}

fn check_emission_args(mix: &MixtureModel, num_states: usize, jitter: f64) -> Result<()> {
    if mix.dimension() != 3 {
        return Err(Error::invalid(format!(
            "emission initialization needs a 3-dimensional mixture, got {}",
            mix.dimension()
        )));
    }
    if num_states == 0 {
        return Err(Error::invalid("at least one state is required"));
    }
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::invalid(format!("jitter {jitter} must lie in [0, 1)")));
    }
    Ok(())
}

/// Density at every bin center, normalized; uniform (with a warning) when it
/// vanishes everywhere.
fn density_row(mix: &MixtureModel, grid: &DiscretizationGrid, warnings: &mut Vec<String>) -> Result<Vec<f64>> {
    let m = grid.num_symbols();
    let mut base = Vec::with_capacity(m);
    for n in 1..=m {
        base.push(mix.density(&grid.bin_center(n)?.to_array())?);
    }
    let total: f64 = base.iter().sum();
    if total > 0.0 && total.is_finite() {
        base.iter_mut().for_each(|p| *p /= total);
    } else {
        warnings.push("mixture density vanished on every bin center; using a uniform emission row".into());
        base.fill(1.0 / m as f64);
    }
    Ok(base)
}

fn jitter_rows(bases: &[Vec<f64>], jitter_seed: u64, jitter: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
    let mut matrix = Vec::with_capacity(bases.iter().map(Vec::len).sum());
    for base in bases {
        let start = matrix.len();
        for &p in base {
            let u: f64 = rng.random_range(-1.0..=1.0);
            matrix.push(p * (1.0 + jitter * u));
        }
        let row = &mut matrix[start..];
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
    matrix
}
