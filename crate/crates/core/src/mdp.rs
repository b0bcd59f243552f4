//! Small tabular MDPs with exact policy evaluation.
//!
//! For a policy `pi`, state values solve `(I - gamma P_pi) V = r_pi` where
//! `P_pi[s, s'] = sum_a pi(a|s) P[s, a, s']` and `r_pi[s] = sum_a pi(a|s) r[s, a]`.
//! The performance of `pi` is `J = d0 . V`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, EpisodeResult};
use crate::error::{shape_err, Error, Result};
use crate::policy::MlpPolicy;
use crate::rng::rng_from_seed;

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// `transitions[(s * A + a) * S + s2] = P(s2 | s, a)`.
    transitions: Vec<f64>,
    /// `rewards[s * A + a] = r(s, a)`.
    rewards: Vec<f64>,
    gamma: f64,
    initial: Vec<f64>,
}

fn on_simplex(v: &[f64]) -> bool {
    v.iter().all(|&p| p >= 0.0 && p.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidArgument("an MDP needs at least one state and action".into()));
        }
        if transitions.len() != num_states * num_actions * num_states
            || rewards.len() != num_states * num_actions
            || initial.len() != num_states
        {
            return Err(shape_err(format!(
                "MDP tables for S={num_states}, A={num_actions}: P has {}, r has {}, d0 has {}",
                transitions.len(),
                rewards.len(),
                initial.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
        }
        if let Some(bad) = transitions.chunks(num_states).position(|row| !on_simplex(row)) {
            return Err(Error::InvalidArgument(format!(
                "transition row (s={}, a={}) is not a distribution",
                bad / num_actions,
                bad % num_actions
            )));
        }
        if !on_simplex(&initial) {
            return Err(Error::InvalidArgument("initial distribution is not on the simplex".into()));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("rewards".into()));
        }
        Ok(Self { num_states, num_actions, transitions, rewards, gamma, initial })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// `P(. | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.num_states || !on_simplex(&initial) {
            return Err(Error::InvalidArgument("initial distribution is not on the simplex".into()));
        }
        self.initial = initial;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_rewards(mut self, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != self.rewards.len() {
            return Err(shape_err("reward table size"));
        }
        self.rewards = rewards;
        Ok(self)
    }
}

/// The two-state, two-action MDP of the value-polytope experiments, with
/// `r(s_i, a_j) = r[i * 2 + j]` and `P(s_k | s_i, a_j) = P[i * 2 + j][k]`,
/// `gamma = 0.8` and a uniform initial distribution.
pub fn two_state_mdp() -> TabularMdp {
    TabularMdp::new(
        2,
        2,
        vec![0.6, 0.4, 0.99, 0.01, 0.2, 0.8, 0.99, 0.01],
        vec![-0.45, -0.1, 0.5, 0.5],
        0.8,
        vec![0.5, 0.5],
    )
    .expect("constant MDP is valid")
}

/// A stochastic `S x A` policy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions || num_actions == 0 {
            return Err(shape_err(format!(
                "policy table of {} entries for S={num_states}, A={num_actions}",
                probs.len()
            )));
        }
        if let Some(s) = probs.chunks(num_actions).position(|row| !on_simplex(row)) {
            return Err(Error::InvalidArgument(format!("policy row {s} is not a distribution")));
        }
        Ok(Self { num_actions, probs })
    }

    /// Two-action policy from `[P(a1|s1), P(a1|s2), ...]`.
    pub fn from_first_action_probs(p: &[f64]) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("probabilities {p:?} outside [0, 1]")));
        }
        let probs = p.iter().flat_map(|&q| [q, 1.0 - q]).collect();
        Self::new(p.len(), 2, probs)
    }

    /// Builds a policy from its free coordinates: the first `A - 1`
    /// probabilities of every state, the last action taking the remainder.
    pub fn from_free(num_states: usize, num_actions: usize, free: &[f64]) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::InvalidArgument("policy needs at least one action".into()));
        }
        let k = num_actions - 1;
        if free.len() != num_states * k {
            return Err(shape_err(format!("{} free coordinates for S={num_states}, A={num_actions}", free.len())));
        }
        if k == 0 {
            return Self::new(num_states, 1, vec![1.0; num_states]);
        }
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for row in free.chunks(k) {
            probs.extend_from_slice(row);
            probs.push(1.0 - row.iter().sum::<f64>());
        }
        Self::new(num_states, num_actions, probs)
    }

    /// Action probabilities of an MLP policy on one-hot state encodings.
    pub fn from_mlp(policy: &MlpPolicy, num_states: usize) -> Result<Self> {
        let mut probs = Vec::with_capacity(num_states * policy.action_count());
        for s in 0..num_states {
            probs.extend(policy.action_probs(&one_hot(s, num_states))?);
        }
        let n = policy.action_count();
        for row in probs.chunks_mut(n) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        Self::new(num_states, n, probs)
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn free_coords(&self) -> Vec<f64> {
        self.probs
            .chunks(self.num_actions)
            .flat_map(|row| row[..self.num_actions - 1].to_vec())
            .collect()
    }
}

pub fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn check_compat(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<()> {
    if pi.num_states() != mdp.num_states || pi.num_actions != mdp.num_actions {
        return Err(shape_err(format!(
            "policy for S={}, A={} on MDP with S={}, A={}",
            pi.num_states(),
            pi.num_actions,
            mdp.num_states,
            mdp.num_actions
        )));
    }
    Ok(())
}

/// Solves `V = (I - gamma P_pi)^-1 r_pi`.
pub fn exact_values(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    check_compat(mdp, pi)?;
    let n = mdp.num_states;
    let mut system = DMatrix::<f64>::identity(n, n);
    let mut r_pi = DVector::<f64>::zeros(n);
    for s in 0..n {
        for a in 0..mdp.num_actions {
            let p = pi.prob(s, a);
            if p == 0.0 {
                continue;
            }
            r_pi[s] += p * mdp.reward(s, a);
            for (s2, &t) in mdp.transition_row(s, a).iter().enumerate() {
                system[(s, s2)] -= mdp.gamma * p * t;
            }
        }
    }
    let v = system.lu().solve(&r_pi).ok_or(Error::Singular)?;
    Ok(v.iter().copied().collect())
}

/// `J = d0 . V`.
pub fn performance(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let v = exact_values(mdp, pi)?;
    Ok(v.iter().zip(&mdp.initial).map(|(v, d)| v * d).sum())
}

/// Iterates the Bellman expectation operator of `pi` from `V = 0` until the
/// largest update falls below `tolerance`. An independent check on
/// [`exact_values`].
pub fn value_iteration(mdp: &TabularMdp, pi: &TabularPolicy, tolerance: f64) -> Result<Vec<f64>> {
    check_compat(mdp, pi)?;
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance {tolerance} must be positive")));
    }
    let n = mdp.num_states;
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..mdp.num_actions)
                    .map(|a| {
                        let future: f64 = mdp.transition_row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                        pi.prob(s, a) * (mdp.reward(s, a) + mdp.gamma * future)
                    })
                    .sum()
            })
            .collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if !residual.is_finite() {
            return Err(Error::NonFinite("value iteration".into()));
        }
        v = next;
        if residual < tolerance {
            return Ok(v);
        }
    }
}

fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// A random MDP with `1..=max_states` states, `1..=max_actions` actions,
/// rewards in `[-1, 1)`, `gamma` in `[0, 0.95)`, and a random stochastic
/// policy for it.
pub fn random_instance(max_states: usize, max_actions: usize, seed: u64) -> Result<(TabularMdp, TabularPolicy)> {
    if max_states == 0 || max_actions == 0 {
        return Err(Error::InvalidArgument("random MDPs need at least one state and action".into()));
    }
    let mut rng = rng_from_seed(seed);
    let s = rng.random_range(1..=max_states);
    let a = rng.random_range(1..=max_actions);
    let transitions = (0..s * a).flat_map(|_| random_simplex(&mut rng, s)).collect();
    let rewards = (0..s * a).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gamma = rng.random_range(0.0..0.95);
    let initial = random_simplex(&mut rng, s);
    let mdp = TabularMdp::new(s, a, transitions, rewards, gamma, initial)?;
    let pi = TabularPolicy::new(s, a, (0..s).flat_map(|_| random_simplex(&mut rng, a)).collect())?;
    Ok((mdp, pi))
}

pub const EXACT_GRAD_STEP: f64 = 1e-6;

/// Gradient of `J` with respect to the free coordinates of `pi` (see
/// [`TabularPolicy::free_coords`]), by central differences of step 1e-6.
/// At the edge of the feasible set the difference is one-sided.
pub fn exact_grad(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    check_compat(mdp, pi)?;
    let (s_n, a_n) = (mdp.num_states, mdp.num_actions);
    let free = pi.free_coords();
    let h = EXACT_GRAD_STEP;
    let eval = |x: &[f64]| -> Result<f64> { performance(mdp, &TabularPolicy::from_free(s_n, a_n, x)?) };
    let mut grad = Vec::with_capacity(free.len());
    for i in 0..free.len() {
        let state = i / (a_n - 1);
        let slack = pi.prob(state, a_n - 1);
        let can_up = slack >= h;
        let can_down = free[i] >= h;
        let mut up = free.clone();
        let mut down = free.clone();
        let g = match (can_down, can_up) {
            (true, true) => {
                up[i] += h;
                down[i] -= h;
                (eval(&up)? - eval(&down)?) / (2.0 * h)
            }
            (false, true) => {
                up[i] += h;
                (eval(&up)? - eval(&free)?) / h
            }
            (true, false) => {
                down[i] -= h;
                (eval(&free)? - eval(&down)?) / h
            }
            (false, false) => 0.0,
        };
        grad.push(g);
    }
    Ok(grad)
}

/// Every deterministic policy of a two-action MDP, as first-action
/// probability vectors in binary counting order.
pub fn deterministic_corners(num_states: usize) -> Vec<Vec<f64>> {
    (0..1usize << num_states)
        .map(|mask| (0..num_states).map(|s| if mask >> s & 1 == 1 { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// The deterministic corner with the highest `J`.
pub fn best_corner(mdp: &TabularMdp) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for c in deterministic_corners(mdp.num_states) {
        let j = performance(mdp, &TabularPolicy::from_first_action_probs(&c)?)?;
        if best.as_ref().is_none_or(|(_, bj)| j > *bj) {
            best = Some((c, j));
        }
    }
    best.ok_or(Error::InvalidArgument("no states".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopePoint {
    /// `[P(a1|s1), P(a1|s2), ...]`.
    pub policy: Vec<f64>,
    pub values: Vec<f64>,
    pub j: f64,
    pub split: Split,
}

/// Samples `count` two-action policies uniformly from the policy cube and
/// evaluates them exactly. The first half (rounded up) is the training split.
pub fn sample_polytope_dataset(mdp: &TabularMdp, count: usize, seed: u64) -> Result<Vec<PolytopePoint>> {
    if count == 0 {
        return Err(Error::InvalidArgument("polytope dataset needs count >= 1".into()));
    }
    if mdp.num_actions != 2 {
        return Err(Error::InvalidArgument("polytope sampling needs two actions".into()));
    }
    let mut rng = rng_from_seed(seed);
    let train = count.div_ceil(2);
    (0..count)
        .map(|i| {
            let policy: Vec<f64> = (0..mdp.num_states).map(|_| rng.random::<f64>()).collect();
            let pi = TabularPolicy::from_first_action_probs(&policy)?;
            let values = exact_values(mdp, &pi)?;
            let j = values.iter().zip(&mdp.initial).map(|(v, d)| v * d).sum();
            let split = if i < train { Split::Train } else { Split::Test };
            Ok(PolytopePoint { policy, values, j, split })
        })
        .collect()
}

pub const POLYTOPE_CSV_HEADER: &str = "p_a1_s1,p_a1_s2,v_s1,v_s2,j,split";

/// CSV with header `p_a1_s1,p_a1_s2,v_s1,v_s2,j,split` (two-state MDPs).
pub fn polytope_csv(points: &[PolytopePoint]) -> String {
    let mut out = String::from(POLYTOPE_CSV_HEADER);
    out.push('\n');
    for p in points {
        let cols: Vec<String> = p.policy.iter().chain(&p.values).chain([&p.j]).map(|v| v.to_string()).collect();
        out.push_str(&cols.join(","));
        out.push(',');
        out.push_str(&p.split.to_string());
        out.push('\n');
    }
    out
}

/// Rollouts on a tabular MDP. Observations are one-hot state encodings and
/// the episode return is discounted by the MDP's `gamma`. Episodes are
/// truncated once `gamma^t` drops below `1e-15`, where the remaining tail
/// is negligible.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    pub mdp: TabularMdp,
    horizon: usize,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp) -> Self {
        let horizon = if mdp.gamma == 0.0 {
            1
        } else {
            ((1e-15f64).ln() / mdp.gamma.ln()).ceil() as usize + 1
        };
        Self { mdp, horizon }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl Environment for TabularEnv {
    fn name(&self) -> String {
        format!("tabular(S={}, A={}, gamma={})", self.mdp.num_states, self.mdp.num_actions, self.mdp.gamma)
    }

    fn observation_dim(&self) -> usize {
        self.mdp.num_states
    }

    fn action_count(&self) -> usize {
        self.mdp.num_actions
    }

    fn rollout(&self, policy: &MlpPolicy, seed: u64) -> Result<EpisodeResult> {
        let pi = TabularPolicy::from_mlp(policy, self.mdp.num_states)?;
        check_compat(&self.mdp, &pi)?;
        let mut rng = rng_from_seed(seed);
        let mut s = sample_index(&self.mdp.initial, rng.random());
        let mut ret = 0.0;
        let mut discount = 1.0;
        for _ in 0..self.horizon {
            let a = sample_index(pi.row(s), rng.random());
            ret += discount * self.mdp.reward(s, a);
            discount *= self.mdp.gamma;
            s = sample_index(self.mdp.transition_row(s, a), rng.random());
        }
        Ok(EpisodeResult { episode_return: ret, steps: self.horizon, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Iterative policy evaluation, independent of the linear solve.
    fn iterate_values(mdp: &TabularMdp, pi: &TabularPolicy) -> Vec<f64> {
        let n = mdp.num_states();
        let mut v = vec![0.0; n];
        loop {
            let next: Vec<f64> = (0..n)
                .map(|s| {
                    (0..mdp.num_actions())
                        .map(|a| {
                            let future: f64 = mdp.transition_row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                            pi.prob(s, a) * (mdp.reward(s, a) + mdp.gamma() * future)
                        })
                        .sum()
                })
                .collect();
            let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if residual < 1e-13 {
                return v;
            }
        }
    }

    fn det(p: &[f64]) -> TabularPolicy {
        TabularPolicy::from_first_action_probs(p).unwrap()
    }

    #[test]
    fn two_state_mdp_tables() {
        let m = two_state_mdp();
        assert_eq!(m.reward(0, 0), -0.45);
        assert_eq!(m.reward(0, 1), -0.1);
        assert_eq!(m.reward(1, 0), 0.5);
        assert_eq!(m.transition_row(0, 0), &[0.6, 0.4]);
        assert_eq!(m.transition_row(1, 1), &[0.99, 0.01]);
        for s in 0..2 {
            for a in 0..2 {
                assert!((m.transition_row(s, a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(m.gamma(), 0.8);
    }

    #[test]
    fn always_first_action_values() {
        // 2x2 inversion by hand: V = (I - 0.8 P)^-1 r with P = [[.6,.4],[.2,.8]],
        // r = [-.45, .5]; det = 0.52 * 0.36 - 0.32 * 0.16 = 0.136.
        let v = exact_values(&two_state_mdp(), &det(&[1.0, 1.0])).unwrap();
        let v0 = (0.36 * -0.45 + 0.32 * 0.5) / 0.136;
        let v1 = (0.16 * -0.45 + 0.52 * 0.5) / 0.136;
        assert!((v[0] - v0).abs() < 1e-12 && (v[1] - v1).abs() < 1e-12, "{v:?}");
        assert!((v[0] + 0.014706).abs() < 1e-6 && (v[1] - 1.382353).abs() < 1e-6);
        let it = iterate_values(&two_state_mdp(), &det(&[1.0, 1.0]));
        assert!((it[0] - v[0]).abs() < 1e-10 && (it[1] - v[1]).abs() < 1e-10);
    }

    #[test]
    fn always_second_action_values() {
        let v = exact_values(&two_state_mdp(), &det(&[0.0, 0.0])).unwrap();
        assert!((v[0] + 0.476).abs() < 1e-3 && (v[1] - 0.124).abs() < 1e-3, "{v:?}");
        let it = iterate_values(&two_state_mdp(), &det(&[0.0, 0.0]));
        assert!((it[0] - v[0]).abs() < 1e-10 && (it[1] - v[1]).abs() < 1e-10);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let m = two_state_mdp().with_rewards(vec![0.0; 4]).unwrap();
        assert_eq!(exact_values(&m, &det(&[0.3, 0.9])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn constant_reward_gradient_vanishes() {
        let m = two_state_mdp().with_rewards(vec![0.7; 4]).unwrap();
        for p in [[0.5, 0.5], [0.0, 1.0], [0.2, 0.9]] {
            let g = exact_grad(&m, &det(&p)).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
        }
    }

    #[test]
    fn gradient_matches_dense_sweep_slope() {
        // Least-squares slope of J sampled densely on [x - 0.01, x + 0.01].
        let m = two_state_mdp();
        let g = exact_grad(&m, &det(&[0.5, 0.5])).unwrap();
        for axis in 0..2 {
            let xs: Vec<f64> = (0..=200).map(|i| 0.49 + 0.0001 * i as f64).collect();
            let js: Vec<f64> = xs
                .iter()
                .map(|&x| {
                    let mut p = [0.5, 0.5];
                    p[axis] = x;
                    performance(&m, &det(&p)).unwrap()
                })
                .collect();
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let mj = js.iter().sum::<f64>() / js.len() as f64;
            let slope = xs.iter().zip(&js).map(|(x, j)| (x - mx) * (j - mj)).sum::<f64>()
                / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
            assert!((slope - g[axis]).abs() < 1e-4, "axis {axis}: {slope} vs {}", g[axis]);
        }
    }

    #[test]
    fn optimal_corner_gradient_points_outward() {
        let m = two_state_mdp();
        let (corner, j_best) = best_corner(&m).unwrap();
        // Brute-force check on a local grid that no feasible point beats the corner.
        for i in 0..=10 {
            for k in 0..=10 {
                let p = [(corner[0] - 0.01 * i as f64).abs(), (corner[1] - 0.01 * k as f64).abs()];
                assert!(performance(&m, &det(&p)).unwrap() <= j_best + 1e-12);
            }
        }
        let g = exact_grad(&m, &det(&corner)).unwrap();
        for (c, gi) in corner.iter().zip(&g) {
            let outward = if *c == 1.0 { *gi >= 0.0 } else { *gi <= 0.0 };
            assert!(outward, "corner {corner:?} gradient {g:?}");
        }
    }

    #[test]
    fn polytope_sampling() {
        let m = two_state_mdp();
        let pts = sample_polytope_dataset(&m, 40, 3).unwrap();
        assert_eq!(pts.iter().filter(|p| p.split == Split::Train).count(), 20);
        assert_eq!(pts, sample_polytope_dataset(&m, 40, 3).unwrap());
        assert_eq!(sample_polytope_dataset(&m, 1, 9).unwrap(), sample_polytope_dataset(&m, 1, 9).unwrap());
        assert!(sample_polytope_dataset(&m, 0, 9).is_err());
        let csv = polytope_csv(&pts);
        assert!(csv.starts_with("p_a1_s1,p_a1_s2,v_s1,v_s2,j,split\n"));
        assert_eq!(csv.lines().count(), 41);
    }

    #[test]
    fn sampled_values_lie_in_corner_hull() {
        let m = two_state_mdp();
        let corners: Vec<[f64; 2]> = deterministic_corners(2)
            .iter()
            .map(|c| {
                let v = exact_values(&m, &det(c)).unwrap();
                [v[0], v[1]]
            })
            .collect();
        let hull = convex_hull(&corners);
        for p in sample_polytope_dataset(&m, 200, 11).unwrap() {
            let v = [p.values[0], p.values[1]];
            let n = hull.len();
            for i in 0..n {
                let (a, b) = (hull[i], hull[(i + 1) % n]);
                let cross = (b[0] - a[0]) * (v[1] - a[1]) - (b[1] - a[1]) * (v[0] - a[0]);
                assert!(cross >= -1e-12, "value {v:?} outside hull {hull:?}");
            }
        }
    }

    /// Counter-clockwise hull by gift wrapping (at most a handful of points).
    fn convex_hull(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let start = (0..pts.len()).min_by(|&a, &b| pts[a].partial_cmp(&pts[b]).unwrap()).unwrap();
        let mut hull = vec![];
        let mut cur = start;
        loop {
            hull.push(pts[cur]);
            let mut next = (cur + 1) % pts.len();
            for (i, p) in pts.iter().enumerate() {
                let (a, b) = (pts[cur], pts[next]);
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                if cross < 0.0 {
                    next = i;
                }
            }
            cur = next;
            if cur == start {
                return hull;
            }
        }
    }

    #[test]
    fn value_iteration_matches_solve() {
        let mdp = two_state_mdp();
        let pi = TabularPolicy::from_first_action_probs(&[0.3, 0.9]).unwrap();
        let exact = exact_values(&mdp, &pi).unwrap();
        let iterated = value_iteration(&mdp, &pi, 1e-12).unwrap();
        assert!(exact.iter().zip(&iterated).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(value_iteration(&mdp, &pi, 0.0).is_err());
    }

    #[test]
    fn random_instances_are_seeded_and_bounded() {
        let (m1, p1) = random_instance(5, 4, 9).unwrap();
        let (m2, p2) = random_instance(5, 4, 9).unwrap();
        assert_eq!((&m1, &p1), (&m2, &p2));
        assert!(m1.num_states() <= 5 && m1.num_actions() <= 4);
        assert!(random_instance(0, 2, 1).is_err());
    }

    #[test]
    fn invalid_mdps_are_rejected() {
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![0.0], 0.5, vec![1.0]).is_err());
        assert!(TabularMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2], 0.5, vec![0.6, 0.6]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 0.5, vec![1.0]).is_ok());
    }

    #[test]
    fn free_coordinates_round_trip() {
        let pi = TabularPolicy::new(2, 3, vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8]).unwrap();
        let free = pi.free_coords();
        assert_eq!(free, vec![0.2, 0.3, 0.1, 0.1]);
        let back = TabularPolicy::from_free(2, 3, &free).unwrap();
        for (a, b) in back.probs.iter().zip(&pi.probs) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
