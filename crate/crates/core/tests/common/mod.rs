// Independent oracles for the integration tests. Everything here recomputes
// results straight from the raw model tables and never calls into the
// crate's belief or bootstrap code paths, so agreement is meaningful.
#![allow(dead_code)]

use ep_lab::belief::{FiniteEP, Pomdp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Random distribution with every entry bounded away from zero, so every
/// observation sequence has positive probability.
pub fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn random_belief(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    random_dist(rng, n)
}

pub fn random_finite_ep(
    rng: &mut ChaCha8Rng,
    max_states: usize,
    max_sets: usize,
    max_obs: usize,
) -> FiniteEP {
    let n_s = rng.random_range(2..=max_states);
    let n_a = rng.random_range(1..=max_sets);
    let n_y = rng.random_range(2..=max_obs);
    let state_labels = (0..n_s).map(|s| format!("s{s}")).collect();
    let sets = (0..n_a).map(|a| vec![format!("a{a}")]).collect();
    let obs_elems = (0..n_y).map(|y| vec![format!("e{y}")]).collect();
    let f = (0..n_s)
        .map(|_| (0..n_a).map(|_| random_dist(rng, n_s)).collect())
        .collect();
    let o = (0..n_s).map(|_| random_dist(rng, n_y)).collect();
    let u = (0..n_s)
        .map(|_| (0..n_a).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let gamma = rng.random_range(0.5..1.0);
    FiniteEP::new(state_labels, sets, obs_elems, f, o, u, gamma)
        .expect("generated model must validate")
}

pub fn random_pomdp(rng: &mut ChaCha8Rng) -> Pomdp {
    let n_s = rng.random_range(2..=4);
    let n_a = rng.random_range(2..=3);
    let n_y = rng.random_range(2..=3);
    Pomdp {
        state_labels: (0..n_s).map(|s| format!("s{s}")).collect(),
        action_labels: (0..n_a).map(|a| format!("a{a}")).collect(),
        obs_labels: (0..n_y).map(|y| format!("y{y}")).collect(),
        t: (0..n_s)
            .map(|_| (0..n_a).map(|_| random_dist(rng, n_s)).collect())
            .collect(),
        z: (0..n_s).map(|_| random_dist(rng, n_y)).collect(),
        r: (0..n_s)
            .map(|_| (0..n_a).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect(),
        gamma: rng.random_range(0.5..1.0),
    }
}

/// Exhaustive joint-enumeration Bayes. Sums the joint probability of every
/// complete state sequence consistent with the action/observation path and
/// marginalizes onto the final state. No intermediate beliefs are formed.
/// Returns None when the observation path has probability zero.
pub fn bayes_path_oracle(
    ep: &FiniteEP,
    b0: &[f64],
    steps: &[(usize, usize)],
) -> Option<Vec<f64>> {
    let n = ep.n_states();
    let t = steps.len();
    let mut posterior = vec![0.0; n];
    let mut total = 0.0;
    let n_paths = n.pow(t as u32 + 1);
    for code in 0..n_paths {
        let mut digits = code;
        let mut path = Vec::with_capacity(t + 1);
        for _ in 0..=t {
            path.push(digits % n);
            digits /= n;
        }
        let mut w = b0[path[0]];
        for (i, &(a, y)) in steps.iter().enumerate() {
            w *= ep.f[path[i]][a][path[i + 1]] * ep.o[path[i + 1]][y];
        }
        posterior[path[t]] += w;
        total += w;
    }
    if total <= 0.0 {
        return None;
    }
    Some(posterior.into_iter().map(|w| w / total).collect())
}

/// Independent finite-horizon expectimax over the raw tables. Assumes the
/// fully admissible models produced by the generators above. Ties break
/// toward the lowest intervention-set index.
pub fn expectimax_oracle(ep: &FiniteEP, b: &[f64], horizon: u32) -> (f64, usize) {
    let n = ep.n_states();
    if horizon == 0 {
        return (0.0, 0);
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_a = 0;
    for a in 0..ep.n_sets() {
        let mut value: f64 = (0..n).map(|s| b[s] * ep.u[s][a]).sum();
        if horizon > 1 {
            let mut b_bar = vec![0.0; n];
            for s in 0..n {
                for sp in 0..n {
                    b_bar[sp] += b[s] * ep.f[s][a][sp];
                }
            }
            for y in 0..ep.n_obs() {
                let py: f64 = (0..n).map(|sp| b_bar[sp] * ep.o[sp][y]).sum();
                if py <= 0.0 {
                    continue;
                }
                let post: Vec<f64> =
                    (0..n).map(|sp| b_bar[sp] * ep.o[sp][y] / py).collect();
                value += ep.gamma * py * expectimax_oracle(ep, &post, horizon - 1).0;
            }
        }
        if value > best {
            best = value;
            best_a = a;
        }
    }
    (best, best_a)
}

/// Textbook partially observed filter: b'(s') ∝ Z(s',y) Σ_s T(s,a,s') b(s).
pub fn pomdp_update_oracle(p: &Pomdp, b: &[f64], a: usize, y: usize) -> Option<Vec<f64>> {
    let n = p.state_labels.len();
    let mut post = vec![0.0; n];
    let mut total = 0.0;
    for sp in 0..n {
        let reach: f64 = (0..n).map(|s| b[s] * p.t[s][a][sp]).sum();
        post[sp] = p.z[sp][y] * reach;
        total += post[sp];
    }
    if total <= 0.0 {
        return None;
    }
    Some(post.into_iter().map(|w| w / total).collect())
}
