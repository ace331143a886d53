//! Discrete-observation hidden Markov models.
//!
//! Matrices are stored row-major in flat `Vec<f64>`s. Observation symbols are
//! 0-based indices into the emission alphabet.
//!
//! Forward and backward recursions are normalized at every step so sequences
//! of any practical length can be evaluated without underflow. A sequence
//! whose exact probability is zero is still detected: the forward pass flags
//! it as `degenerate` the moment an unnormalized row sums to exactly `0.0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-sum tolerance for every probability vector in a model.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Initial distribution, transition matrix and emission matrix of an HMM.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParameters {
    num_states: usize,
    num_symbols: usize,
    initial: Vec<f64>,
    /// `num_states × num_states`, `transition[i * N + j] = P(j | i)`.
    transition: Vec<f64>,
    /// `num_states × num_symbols`, `emission[i * M + o] = P(o | i)`.
    emission: Vec<f64>,
}

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("{what}: entry {p} outside [0, 1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(format!("{what}: sums to {sum}, expected 1")));
    }
    Ok(())
}

impl HmmParameters {
    pub fn new(
        num_states: usize,
        num_symbols: usize,
        initial: Vec<f64>,
        transition: Vec<f64>,
        emission: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_symbols == 0 {
            return Err(Error::invalid(
                "an HMM needs at least one state and one symbol",
            ));
        }
        if initial.len() != num_states {
            return Err(Error::invalid(format!(
                "initial distribution has length {}, expected {num_states}",
                initial.len()
            )));
        }
        if transition.len() != num_states * num_states {
            return Err(Error::invalid(format!(
                "transition matrix has {} entries, expected {}",
                transition.len(),
                num_states * num_states
            )));
        }
        if emission.len() != num_states * num_symbols {
            return Err(Error::invalid(format!(
                "emission matrix has {} entries, expected {}",
                emission.len(),
                num_states * num_symbols
            )));
        }
        check_distribution("initial distribution", &initial)?;
        for (i, row) in transition.chunks(num_states).enumerate() {
            check_distribution(&format!("transition row {i}"), row)?;
        }
        for (i, row) in emission.chunks(num_symbols).enumerate() {
            check_distribution(&format!("emission row {i}"), row)?;
        }
        Ok(Self {
            num_states,
            num_symbols,
            initial,
            transition,
            emission,
        })
    }

    /// Builds a model from nested rows; convenient for small hand-written models.
    pub fn from_rows(initial: &[f64], transition: &[&[f64]], emission: &[&[f64]]) -> Result<Self> {
        let num_symbols = emission.first().map_or(0, |r| r.len());
        if emission.iter().any(|r| r.len() != num_symbols) {
            return Err(Error::invalid("emission rows have unequal lengths"));
        }
        if transition.iter().any(|r| r.len() != initial.len()) {
            return Err(Error::invalid("transition rows must have one entry per state"));
        }
        Self::new(
            initial.len(),
            num_symbols,
            initial.to_vec(),
            transition.concat(),
            emission.concat(),
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_symbols(&self) -> usize {
        self.num_symbols
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Row-major transition matrix.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// Row-major emission matrix.
    pub fn emission(&self) -> &[f64] {
        &self.emission
    }

    #[inline]
    pub fn transition_prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.num_states + to]
    }

    #[inline]
    pub fn emission_prob(&self, state: usize, symbol: usize) -> f64 {
        self.emission[state * self.num_symbols + symbol]
    }

    pub fn transition_row(&self, state: usize) -> &[f64] {
        &self.transition[state * self.num_states..(state + 1) * self.num_states]
    }

    pub fn emission_row(&self, state: usize) -> &[f64] {
        &self.emission[state * self.num_symbols..(state + 1) * self.num_symbols]
    }

    fn check_observations(&self, obs: &[usize]) -> Result<()> {
        if obs.is_empty() {
            return Err(Error::invalid("observation sequence is empty"));
        }
        if let Some((t, &o)) = obs.iter().enumerate().find(|(_, &o)| o >= self.num_symbols) {
            return Err(Error::invalid(format!(
                "symbol {o} at position {t} is outside the alphabet of {} symbols",
                self.num_symbols
            )));
        }
        Ok(())
    }

    /// One step of the hidden chain: `dist · A`.
    pub fn propagate(&self, dist: &[f64]) -> Vec<f64> {
        let n = self.num_states;
        let mut out = vec![0.0; n];
        for (i, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.transition_row(i)) {
                *o += p * a;
            }
        }
        out
    }
}

/// Evolves a state distribution `steps` times through a row-stochastic
/// transition matrix given row-major.
pub fn chain_evolve(x: &[f64], transition: &[f64], steps: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 || transition.len() != n * n {
        return Err(Error::invalid(format!(
            "distribution of length {n} does not match a transition matrix with {} entries",
            transition.len()
        )));
    }
    check_distribution("state distribution", x)?;
    for (i, row) in transition.chunks(n).enumerate() {
        check_distribution(&format!("transition row {i}"), row)?;
    }
    let mut cur = x.to_vec();
    for _ in 0..steps {
        let mut next = vec![0.0; n];
        for (i, &p) in cur.iter().enumerate() {
            for (j, nx) in next.iter_mut().enumerate() {
                *nx += p * transition[i * n + j];
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Output of the normalized forward recursion.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub num_states: usize,
    /// `T × N`, each row normalized to sum to one.
    pub scaled_alpha: Vec<f64>,
    /// Per-step normalizers; their log-sum is the sequence log-likelihood.
    pub scale_factors: Vec<f64>,
    pub log_likelihood: f64,
    /// The exact sequence probability is zero. Rows from the first zero step
    /// onwards are left at zero and `log_likelihood` is `-inf`.
    pub degenerate: bool,
}

impl ForwardResult {
    pub fn len(&self) -> usize {
        self.scale_factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale_factors.is_empty()
    }

    pub fn alpha(&self, t: usize) -> &[f64] {
        &self.scaled_alpha[t * self.num_states..(t + 1) * self.num_states]
    }

    /// Normalized forward variables at the final step.
    pub fn last_alpha(&self) -> &[f64] {
        self.alpha(self.len() - 1)
    }
}

pub fn forward(model: &HmmParameters, obs: &[usize]) -> Result<ForwardResult> {
    model.check_observations(obs)?;
    let n = model.num_states;
    let t_len = obs.len();
    let mut alpha = vec![0.0; t_len * n];
    let mut scale = vec![0.0; t_len];
    let mut degenerate = false;

    for (t, &o) in obs.iter().enumerate() {
        let (done, rest) = alpha.split_at_mut(t * n);
        let row = &mut rest[..n];
        if t == 0 {
            for (i, a) in row.iter_mut().enumerate() {
                *a = model.initial[i] * model.emission_prob(i, o);
            }
        } else {
            let prev = &done[(t - 1) * n..];
            for (j, a) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, &p) in prev.iter().enumerate() {
                    acc += p * model.transition_prob(i, j);
                }
                *a = acc * model.emission_prob(j, o);
            }
        }
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            degenerate = true;
            break;
        }
        row.iter_mut().for_each(|a| *a /= sum);
        scale[t] = sum;
    }

    let log_likelihood = if degenerate {
        f64::NEG_INFINITY
    } else {
        scale.iter().map(|c| c.ln()).sum()
    };
    Ok(ForwardResult {
        num_states: n,
        scaled_alpha: alpha,
        scale_factors: scale,
        log_likelihood,
        degenerate,
    })
}

/// Normalized backward variables, `T × N` row-major.
///
/// `β̂_T(i) = 1` and `β̂_k(i) = Σ_j a_ij b_j(O_{k+1}) β̂_{k+1}(j) / c_{k+1}`,
/// so the unnormalized variable is `β_k(i) = β̂_k(i) · Π_{s>k} c_s`.
pub fn backward(model: &HmmParameters, obs: &[usize], fwd: &ForwardResult) -> Result<Vec<f64>> {
    model.check_observations(obs)?;
    if fwd.degenerate {
        return Err(Error::Precondition(
            "backward pass requires a sequence with non-zero probability".into(),
        ));
    }
    if fwd.len() != obs.len() || fwd.num_states != model.num_states {
        return Err(Error::Precondition(
            "forward result does not belong to this model and sequence".into(),
        ));
    }
    let n = model.num_states;
    let t_len = obs.len();
    let mut beta = vec![0.0; t_len * n];
    beta[(t_len - 1) * n..].fill(1.0);
    for t in (0..t_len - 1).rev() {
        let (head, tail) = beta.split_at_mut((t + 1) * n);
        let next = &tail[..n];
        let row = &mut head[t * n..];
        let o = obs[t + 1];
        let c = fwd.scale_factors[t + 1];
        for (i, b) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &bn) in next.iter().enumerate() {
                acc += model.transition_prob(i, j) * model.emission_prob(j, o) * bn;
            }
            *b = acc / c;
        }
    }
    Ok(beta)
}

/// State and state-pair posteriors of one sequence.
#[derive(Debug, Clone)]
pub struct PosteriorSet {
    pub num_states: usize,
    /// `T × N`.
    pub gamma: Vec<f64>,
    /// `(T-1) × N × N`.
    pub xi: Vec<f64>,
}

impl PosteriorSet {
    pub fn gamma_row(&self, t: usize) -> &[f64] {
        &self.gamma[t * self.num_states..(t + 1) * self.num_states]
    }

    pub fn xi(&self, t: usize, i: usize, j: usize) -> f64 {
        let n = self.num_states;
        self.xi[(t * n + i) * n + j]
    }
}

pub fn posteriors(
    model: &HmmParameters,
    obs: &[usize],
    fwd: &ForwardResult,
    beta: &[f64],
) -> Result<PosteriorSet> {
    if fwd.degenerate {
        return Err(Error::Precondition(
            "posteriors require a sequence with non-zero probability".into(),
        ));
    }
    let n = model.num_states;
    let t_len = obs.len();
    if fwd.len() != t_len || beta.len() != t_len * n {
        return Err(Error::Precondition(
            "forward/backward results do not match the sequence".into(),
        ));
    }
    let mut gamma = vec![0.0; t_len * n];
    let mut xi = vec![0.0; t_len.saturating_sub(1) * n * n];
    for t in 0..t_len {
        let alpha = fwd.alpha(t);
        let row = &mut gamma[t * n..(t + 1) * n];
        for i in 0..n {
            row[i] = alpha[i] * beta[t * n + i];
        }
        normalize(row);
    }
    for t in 0..t_len.saturating_sub(1) {
        let alpha = fwd.alpha(t);
        let o = obs[t + 1];
        let block = &mut xi[t * n * n..(t + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                block[i * n + j] = alpha[i]
                    * model.transition_prob(i, j)
                    * model.emission_prob(j, o)
                    * beta[(t + 1) * n + j];
            }
        }
        normalize(block);
    }
    Ok(PosteriorSet {
        num_states: n,
        gamma,
        xi,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
    sum
}

/// Most probable state path.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    /// Empty when `degenerate`.
    pub states: Vec<usize>,
    /// `ln P(X, O)` of the returned path.
    pub log_probability: f64,
    /// Every path has probability zero.
    pub degenerate: bool,
}

pub fn viterbi(model: &HmmParameters, obs: &[usize]) -> Result<ViterbiPath> {
    model.check_observations(obs)?;
    let n = model.num_states;
    let t_len = obs.len();
    let ln = |p: f64| p.ln();
    let mut delta: Vec<f64> = (0..n)
        .map(|i| ln(model.initial[i]) + ln(model.emission_prob(i, obs[0])))
        .collect();
    let mut back = vec![0usize; t_len * n];
    let mut next = vec![0.0; n];
    for (t, &o) in obs.iter().enumerate().skip(1) {
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, &d) in delta.iter().enumerate() {
                let v = d + ln(model.transition_prob(i, j));
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + ln(model.emission_prob(j, o));
            back[t * n + j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let (mut state, best) = argmax_first(&delta);
    if best == f64::NEG_INFINITY {
        return Ok(ViterbiPath {
            states: Vec::new(),
            log_probability: f64::NEG_INFINITY,
            degenerate: true,
        });
    }
    let mut states = vec![0; t_len];
    states[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t * n + state];
        states[t - 1] = state;
    }
    Ok(ViterbiPath {
        states,
        log_probability: best,
        degenerate: false,
    })
}

/// Index of the maximum, preferring the lowest index among ties.
pub(crate) fn argmax_first(v: &[f64]) -> (usize, f64) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > best {
            best = x;
            arg = i;
        }
    }
    (arg, best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumWelchConfig {
    pub max_iters: usize,
    /// Stop once the relative improvement of the total log-likelihood falls
    /// below this value.
    pub log_likelihood_rel_tol: f64,
    /// Re-estimate the initial distribution from `γ_1`; otherwise it is held
    /// at its starting value.
    pub estimate_initial: bool,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            log_likelihood_rel_tol: 1e-6,
            estimate_initial: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaumWelchOutcome {
    pub model: HmmParameters,
    /// Total log-likelihood of every evaluated parameter set, starting with
    /// the initial one. The last entry belongs to `model`.
    pub log_likelihood_trace: Vec<f64>,
    /// Number of re-estimation steps applied.
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

struct Accumulators {
    initial: Vec<f64>,
    trans_num: Vec<f64>,
    trans_den: Vec<f64>,
    emit_num: Vec<f64>,
    emit_den: Vec<f64>,
    log_likelihood: f64,
    used: usize,
}

fn expectation<S: AsRef<[usize]>>(
    model: &HmmParameters,
    sequences: &[S],
    degenerate: &mut Vec<usize>,
) -> Result<Accumulators> {
    let n = model.num_states;
    let m = model.num_symbols;
    let mut acc = Accumulators {
        initial: vec![0.0; n],
        trans_num: vec![0.0; n * n],
        trans_den: vec![0.0; n],
        emit_num: vec![0.0; n * m],
        emit_den: vec![0.0; n],
        log_likelihood: 0.0,
        used: 0,
    };
    degenerate.clear();
    let mut gamma = vec![0.0; n];
    let mut xi = vec![0.0; n * n];
    for (s, seq) in sequences.iter().enumerate() {
        let obs = seq.as_ref();
        let fwd = forward(model, obs)?;
        if fwd.degenerate {
            degenerate.push(s);
            continue;
        }
        let beta = backward(model, obs, &fwd)?;
        acc.log_likelihood += fwd.log_likelihood;
        acc.used += 1;
        let t_len = obs.len();
        for (t, &o) in obs.iter().enumerate() {
            let alpha = fwd.alpha(t);
            for i in 0..n {
                gamma[i] = alpha[i] * beta[t * n + i];
            }
            normalize(&mut gamma);
            if t == 0 {
                for (a, g) in acc.initial.iter_mut().zip(&gamma) {
                    *a += g;
                }
            }
            for (j, &g) in gamma.iter().enumerate() {
                acc.emit_num[j * m + o] += g;
                acc.emit_den[j] += g;
            }
            if t + 1 < t_len {
                for (d, g) in acc.trans_den.iter_mut().zip(&gamma) {
                    *d += g;
                }
                let o_next = obs[t + 1];
                for i in 0..n {
                    for j in 0..n {
                        xi[i * n + j] = alpha[i]
                            * model.transition_prob(i, j)
                            * model.emission_prob(j, o_next)
                            * beta[(t + 1) * n + j];
                    }
                }
                normalize(&mut xi);
                for (a, x) in acc.trans_num.iter_mut().zip(&xi) {
                    *a += x;
                }
            }
        }
    }
    Ok(acc)
}

fn maximization(
    model: &HmmParameters,
    acc: &Accumulators,
    config: &BaumWelchConfig,
    warnings: &mut Vec<String>,
) -> HmmParameters {
    let n = model.num_states;
    let m = model.num_symbols;
    let mut next = model.clone();

    if config.estimate_initial && acc.used > 0 {
        next.initial = acc.initial.iter().map(|g| g / acc.used as f64).collect();
        normalize(&mut next.initial);
    }

    for i in 0..n {
        let den = acc.trans_den[i];
        // A state never left carries no transition evidence; keep its row.
        if den > 0.0 {
            let row = &mut next.transition[i * n..(i + 1) * n];
            for (r, num) in row.iter_mut().zip(&acc.trans_num[i * n..(i + 1) * n]) {
                *r = num / den;
            }
            normalize(row);
        }
    }

    for j in 0..n {
        let den = acc.emit_den[j];
        let row = &mut next.emission[j * m..(j + 1) * m];
        if den > 0.0 {
            for (r, num) in row.iter_mut().zip(&acc.emit_num[j * m..(j + 1) * m]) {
                *r = num / den;
            }
            normalize(row);
        } else {
            warnings.push(format!(
                "state {j} received no posterior mass; emission row reset to uniform"
            ));
            row.fill(1.0 / m as f64);
        }
    }
    next
}

/// Multi-sequence Baum-Welch. Expected counts are pooled across sequences
/// before each re-estimation.
pub fn baum_welch<S: AsRef<[usize]>>(
    init: &HmmParameters,
    sequences: &[S],
    config: &BaumWelchConfig,
) -> Result<BaumWelchOutcome> {
    if sequences.is_empty() {
        return Err(Error::invalid("Baum-Welch needs at least one sequence"));
    }
    let mut degenerate = Vec::new();
    let mut acc = expectation(init, sequences, &mut degenerate)?;
    if let Some(&s) = degenerate.first() {
        return Err(Error::Precondition(format!(
            "sequence {s} has zero probability under the initial model ({} degenerate in total)",
            degenerate.len()
        )));
    }

    let mut model = init.clone();
    let mut trace = vec![acc.log_likelihood];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        let candidate = maximization(&model, &acc, config, &mut warnings);
        let next_acc = expectation(&candidate, sequences, &mut degenerate)?;
        iterations += 1;
        if !degenerate.is_empty() {
            warnings.push(format!(
                "iteration {iterations}: {} sequence(s) became impossible and were skipped",
                degenerate.len()
            ));
        }
        let prev = acc.log_likelihood;
        let cur = next_acc.log_likelihood;
        model = candidate;
        acc = next_acc;
        trace.push(cur);
        if cur - prev <= config.log_likelihood_rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }

    Ok(BaumWelchOutcome {
        model,
        log_likelihood_trace: trace,
        iterations,
        converged,
        warnings,
    })
}

/// Draws a state path and observation sequence of length `len`.
pub fn sample(model: &HmmParameters, len: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(model, len, &mut rng)
}

pub fn sample_with_rng<R: Rng + ?Sized>(
    model: &HmmParameters,
    len: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if len == 0 {
        return Err(Error::invalid("sample length must be at least 1"));
    }
    let mut states = Vec::with_capacity(len);
    let mut symbols = Vec::with_capacity(len);
    let mut state = draw(&model.initial, rng);
    for t in 0..len {
        if t > 0 {
            state = draw(model.transition_row(state), rng);
        }
        states.push(state);
        symbols.push(draw(model.emission_row(state), rng));
    }
    Ok((states, symbols))
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}
