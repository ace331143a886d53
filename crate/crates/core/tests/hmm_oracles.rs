//! Forward, backward, posteriors and Viterbi against exhaustive path
//! enumeration on small models.

use proptest::prelude::*;
use stockhmm::hmm::{self, BaumWelchConfig, HmmParameters};

/// Every state path with its joint probability `P(X, O)`.
fn enumerate_paths(m: &HmmParameters, obs: &[usize]) -> Vec<(Vec<usize>, f64)> {
    let n = m.num_states();
    let t_len = obs.len();
    let total = n.pow(t_len as u32);
    (0..total)
        .map(|mut code| {
            let mut path = vec![0; t_len];
            for s in path.iter_mut().rev() {
                *s = code % n;
                code /= n;
            }
            let mut p = m.initial()[path[0]] * m.emission_prob(path[0], obs[0]);
            for t in 1..t_len {
                p *= m.transition_prob(path[t - 1], path[t]) * m.emission_prob(path[t], obs[t]);
            }
            (path, p)
        })
        .collect()
}

fn brute_likelihood(m: &HmmParameters, obs: &[usize]) -> f64 {
    enumerate_paths(m, obs).iter().map(|(_, p)| p).sum()
}

/// Unnormalized backward recursion.
fn raw_backward(m: &HmmParameters, obs: &[usize]) -> Vec<Vec<f64>> {
    let n = m.num_states();
    let t_len = obs.len();
    let mut beta = vec![vec![1.0; n]; t_len];
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            beta[t][i] = (0..n)
                .map(|j| beta[t + 1][j] * m.transition_prob(i, j) * m.emission_prob(j, obs[t + 1]))
                .sum();
        }
    }
    beta
}

/// Unnormalized forward recursion.
fn raw_forward(m: &HmmParameters, obs: &[usize]) -> f64 {
    let n = m.num_states();
    let mut alpha: Vec<f64> = (0..n).map(|i| m.initial()[i] * m.emission_prob(i, obs[0])).collect();
    for &o in &obs[1..] {
        alpha = (0..n)
            .map(|j| (0..n).map(|i| alpha[i] * m.transition_prob(i, j)).sum::<f64>() * m.emission_prob(j, o))
            .collect();
    }
    alpha.iter().sum()
}

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 6 => 0.01f64..1.0], len).prop_map(|mut v| {
        if v.iter().all(|&x| x == 0.0) {
            v[0] = 1.0;
        }
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    })
}

fn model_and_obs(max_t: usize) -> impl Strategy<Value = (HmmParameters, Vec<usize>)> {
    (1usize..=3, 1usize..=4).prop_flat_map(move |(n, m)| {
        (
            distribution(n),
            prop::collection::vec(distribution(n), n),
            prop::collection::vec(distribution(m), n),
            prop::collection::vec(0..m, 1..=max_t),
        )
            .prop_map(move |(pi, a, b, obs)| {
                let model = HmmParameters::new(n, m, pi, a.concat(), b.concat()).unwrap();
                (model, obs)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn forward_matches_enumeration((model, obs) in model_and_obs(6)) {
        let f = hmm::forward(&model, &obs).unwrap();
        let brute = brute_likelihood(&model, &obs);
        if brute == 0.0 {
            prop_assert!(f.degenerate);
        } else {
            prop_assert!(!f.degenerate);
            let p = f.log_likelihood.exp();
            prop_assert!((p - brute).abs() <= 1e-12 * brute, "{p} vs {brute}");
            for t in 0..obs.len() {
                prop_assert!((f.alpha(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scaled_and_unscaled_forward_agree((model, obs) in model_and_obs(20)) {
        let f = hmm::forward(&model, &obs).unwrap();
        let raw = raw_forward(&model, &obs);
        if raw > 0.0 {
            prop_assert!((f.log_likelihood.exp() - raw).abs() <= 1e-12 * raw);
        }
    }

    #[test]
    fn backward_matches_unscaled((model, obs) in model_and_obs(6)) {
        let f = hmm::forward(&model, &obs).unwrap();
        prop_assume!(!f.degenerate);
        let beta = hmm::backward(&model, &obs, &f).unwrap();
        let raw = raw_backward(&model, &obs);
        let n = model.num_states();
        for t in 0..obs.len() {
            let factor: f64 = f.scale_factors[t + 1..].iter().product();
            for i in 0..n {
                let unscaled = beta[t * n + i] * factor;
                prop_assert!((unscaled - raw[t][i]).abs() <= 1e-12 * raw[t][i].max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn posteriors_match_enumeration((model, obs) in model_and_obs(6)) {
        let f = hmm::forward(&model, &obs).unwrap();
        prop_assume!(!f.degenerate);
        let beta = hmm::backward(&model, &obs, &f).unwrap();
        let post = hmm::posteriors(&model, &obs, &f, &beta).unwrap();
        let n = model.num_states();
        let paths = enumerate_paths(&model, &obs);
        let total: f64 = paths.iter().map(|(_, p)| p).sum();
        for t in 0..obs.len() {
            let g = post.gamma_row(t);
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for i in 0..n {
                let brute: f64 = paths.iter().filter(|(x, _)| x[t] == i).map(|(_, p)| p).sum::<f64>() / total;
                prop_assert!((g[i] - brute).abs() < 1e-9);
                if t + 1 < obs.len() {
                    let row: f64 = (0..n).map(|j| post.xi(t, i, j)).sum();
                    prop_assert!((g[i] - row).abs() < 1e-9);
                    for j in 0..n {
                        let joint: f64 = paths
                            .iter()
                            .filter(|(x, _)| x[t] == i && x[t + 1] == j)
                            .map(|(_, p)| p)
                            .sum::<f64>() / total;
                        prop_assert!((post.xi(t, i, j) - joint).abs() < 1e-9);
                    }
                }
            }
        }
        prop_assert!(post.gamma.iter().chain(&post.xi).all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
    }

    #[test]
    fn viterbi_is_optimal((model, obs) in model_and_obs(6)) {
        let v = hmm::viterbi(&model, &obs).unwrap();
        let paths = enumerate_paths(&model, &obs);
        let best = paths.iter().map(|(_, p)| *p).fold(0.0, f64::max);
        if best == 0.0 {
            prop_assert!(v.degenerate);
        } else {
            let path_p = paths.iter().find(|(x, _)| *x == v.states).unwrap().1;
            prop_assert!((path_p - best).abs() <= 1e-12 * best);
            prop_assert!((v.log_probability.exp() - best).abs() <= 1e-12 * best);
        }
    }

    #[test]
    fn baum_welch_is_monotone_and_stochastic((model, _) in model_and_obs(1), seed in 0u64..1000) {
        let seqs: Vec<Vec<usize>> = (0..8).map(|s| hmm::sample(&model, 7, seed + s).unwrap().1).collect();
        let cfg = BaumWelchConfig { max_iters: 30, estimate_initial: seed % 2 == 0, ..Default::default() };
        let out = hmm::baum_welch(&model, &seqs, &cfg).unwrap();
        for w in out.log_likelihood_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        let m = &out.model;
        // Re-validation enforces the row-sum and range invariants.
        prop_assert!(HmmParameters::new(
            m.num_states(), m.num_symbols(),
            m.initial().to_vec(), m.transition().to_vec(), m.emission().to_vec()
        ).is_ok());
        for i in 0..m.num_states() {
            prop_assert!((m.transition_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((m.emission_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        if !cfg.estimate_initial {
            prop_assert_eq!(m.initial(), model.initial());
        }
    }

    #[test]
    fn chain_evolve_stays_stochastic((model, _) in model_and_obs(1), steps in 0usize..30) {
        let n = model.num_states();
        let mut x = vec![0.0; n];
        x[0] = 1.0;
        let out = hmm::chain_evolve(&x, model.transition(), steps).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn planted() -> HmmParameters {
    HmmParameters::from_rows(
        &[0.5, 0.5],
        &[&[0.85, 0.15], &[0.25, 0.75]],
        &[&[0.9, 0.1], &[0.2, 0.8]],
    )
    .unwrap()
}

#[test]
fn planted_model_training_improves_likelihood() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let seqs: Vec<Vec<usize>> = (0..50)
        .map(|_| hmm::sample_with_rng(&planted(), 10, &mut rng).unwrap().1)
        .collect();
    let init = HmmParameters::from_rows(
        &[0.5, 0.5],
        &[&[0.5, 0.5], &[0.5, 0.5]],
        &[&[0.6, 0.4], &[0.4, 0.6]],
    )
    .unwrap();
    let out = hmm::baum_welch(&init, &seqs, &BaumWelchConfig::default()).unwrap();
    let trace = &out.log_likelihood_trace;
    assert!(trace.last().unwrap() > &trace[0]);
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    // Emission structure is recovered up to state relabeling.
    let b = &out.model;
    let (hi, lo) = if b.emission_prob(0, 0) > b.emission_prob(1, 0) { (0, 1) } else { (1, 0) };
    assert!(b.emission_prob(hi, 0) > 0.7, "{:?}", b.emission());
    assert!(b.emission_prob(lo, 1) > 0.6, "{:?}", b.emission());
}

#[test]
fn long_sequences_do_not_underflow() {
    let m = planted();
    let (_, obs) = hmm::sample(&m, 10_000, 3).unwrap();
    let f = hmm::forward(&m, &obs).unwrap();
    assert!(!f.degenerate);
    assert!(f.log_likelihood.is_finite() && f.log_likelihood < -1000.0);
    let beta = hmm::backward(&m, &obs, &f).unwrap();
    assert!(beta.iter().all(|b| b.is_finite()));
}

#[test]
fn independent_forward_calls_agree_across_threads() {
    let m = planted();
    let seqs: Vec<Vec<usize>> = (0..8).map(|s| hmm::sample(&m, 200, s).unwrap().1).collect();
    let serial: Vec<f64> = seqs.iter().map(|s| hmm::forward(&m, s).unwrap().log_likelihood).collect();
    let parallel: Vec<f64> = std::thread::scope(|scope| {
        let handles: Vec<_> = seqs
            .iter()
            .rev()
            .map(|s| scope.spawn(|| hmm::forward(&m, s).unwrap().log_likelihood))
            .collect();
        let mut v: Vec<f64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        v.reverse();
        v
    });
    assert_eq!(serial, parallel);
}
