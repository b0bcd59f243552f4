//! Classic cart-pole balancing with Euler integration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, EpisodeResult};
use crate::error::{shape_err, Result};
use crate::policy::MlpPolicy;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Push {
    Left,
    Right,
}

impl Push {
    /// Action index 0 pushes left, 1 pushes right.
    pub fn from_index(a: usize) -> Self {
        if a == 0 { Push::Left } else { Push::Right }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_threshold: 12.0_f64.to_radians(),
            x_threshold: 2.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartPole {
    pub params: CartPoleParams,
    pub max_steps: usize,
}

impl Default for CartPole {
    fn default() -> Self {
        Self { params: CartPoleParams::default(), max_steps: 100 }
    }
}

impl CartPole {
    pub fn new(max_steps: usize) -> Self {
        Self { max_steps, ..Self::default() }
    }

    /// One Euler step. Returns the next state, the reward (always 1) and
    /// whether the next state is terminal.
    pub fn step(&self, s: CartPoleState, push: Push) -> (CartPoleState, f64, bool) {
        let p = &self.params;
        let force = match push {
            Push::Left => -p.force_mag,
            Push::Right => p.force_mag,
        };
        let total_mass = p.cart_mass + p.pole_mass;
        let pole_mass_length = p.pole_mass * p.half_length;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pole_mass_length * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        let next = CartPoleState {
            x: s.x + p.tau * s.x_dot,
            x_dot: s.x_dot + p.tau * x_acc,
            theta: s.theta + p.tau * s.theta_dot,
            theta_dot: s.theta_dot + p.tau * theta_acc,
        };
        let done = next.x.abs() > p.x_threshold || next.theta.abs() > p.theta_threshold;
        (next, 1.0, done)
    }

    /// Initial state with every component uniform in `[-0.05, 0.05]`.
    pub fn reset(&self, rng: &mut impl Rng) -> CartPoleState {
        let mut u = || rng.random_range(-0.05..=0.05);
        CartPoleState { x: u(), x_dot: u(), theta: u(), theta_dot: u() }
    }

    /// Runs one episode and also returns the visited states.
    pub fn trajectory(&self, policy: &MlpPolicy, seed: u64) -> Result<(EpisodeResult, Vec<CartPoleState>)> {
        if policy.arch().input != 4 || policy.action_count() != 2 {
            return Err(shape_err(format!(
                "cart-pole needs a 4-input, 2-action policy, got {} -> {}",
                policy.arch().input,
                policy.action_count()
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut state = self.reset(&mut rng);
        let mut states = vec![state];
        let mut total = 0.0;
        let mut steps = 0;
        while steps < self.max_steps {
            let a = policy.sample_action(&state.to_array(), &mut rng)?;
            let (next, reward, done) = self.step(state, Push::from_index(a));
            total += reward;
            steps += 1;
            state = next;
            states.push(state);
            if done {
                break;
            }
        }
        Ok((EpisodeResult { episode_return: total, steps, seed }, states))
    }
}

impl Environment for CartPole {
    fn name(&self) -> String {
        format!("cartpole(max_steps={})", self.max_steps)
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn action_count(&self) -> usize {
        2
    }

    fn rollout(&self, policy: &MlpPolicy, seed: u64) -> Result<EpisodeResult> {
        self.trajectory(policy, seed).map(|(r, _)| r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{MlpArch, OutputHead};
    use crate::policy::DEFAULT_TEMPERATURE;

    fn uniform_policy() -> MlpPolicy {
        MlpPolicy::new(MlpPolicy::softmax_arch(4, &[], 2, DEFAULT_TEMPERATURE), vec![0.0; 10]).unwrap()
    }

    #[test]
    fn balanced_state_survives_first_step() {
        let env = CartPole::default();
        let (s1, r, done) = env.step(CartPoleState::default(), Push::Right);
        assert_eq!(r, 1.0);
        assert!(!done);
        let (_, _, done) = env.step(s1, Push::Left);
        assert!(!done);
    }

    #[test]
    fn tilted_past_threshold_terminates_with_reward() {
        let env = CartPole::default();
        let s = CartPoleState { theta: 13.0_f64.to_radians(), ..Default::default() };
        let (_, r, done) = env.step(s, Push::Left);
        assert!(done);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn one_step_matches_hand_integration() {
        // From rest, force +10: theta_acc = -(10/1.1) / (0.5 * (4/3 - 0.1/1.1)),
        // x_acc = 10/1.1 - 0.05 * theta_acc / 1.1. Positions move by tau * velocity = 0.
        let theta_acc = -(10.0 / 1.1) / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = 10.0 / 1.1 - 0.05 * theta_acc / 1.1;
        let (s, _, _) = CartPole::default().step(CartPoleState::default(), Push::Right);
        assert_eq!(s.x, 0.0);
        assert_eq!(s.theta, 0.0);
        assert!((s.x_dot - 0.02 * x_acc).abs() < 1e-15);
        assert!((s.theta_dot - 0.02 * theta_acc).abs() < 1e-15);
        assert!((s.x_dot - 0.195_121_951_219_512_2).abs() < 1e-12);
        assert!((s.theta_dot + 0.292_682_926_829_268_3).abs() < 1e-12);
    }

    #[test]
    fn free_motion_keeps_velocities() {
        let mut env = CartPole::default();
        env.params.gravity = 0.0;
        env.params.force_mag = 0.0;
        let mut s = CartPoleState { x: 0.0, x_dot: 0.3, theta: 0.05, theta_dot: 0.0 };
        for _ in 0..50 {
            s = env.step(s, Push::Right).0;
            assert_eq!(s.x_dot, 0.3);
            assert_eq!(s.theta_dot, 0.0);
        }
    }

    #[test]
    fn rollout_is_capped_and_deterministic() {
        let env = CartPole::new(100);
        let p = MlpPolicy::glorot(MlpPolicy::softmax_arch(4, &[30], 2, DEFAULT_TEMPERATURE), 3).unwrap();
        for seed in 0..50 {
            let a = env.rollout(&p, seed).unwrap();
            assert!(a.episode_return <= 100.0 && a.episode_return >= 1.0);
            assert_eq!(a, env.rollout(&p, seed).unwrap());
        }
        let (r, states) = env.trajectory(&p, 7).unwrap();
        assert_eq!(states.len(), r.steps + 1);
        assert!(states[0].to_array().iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn uniform_random_policy_mean_return() {
        // Monte-Carlo golden value of this module's dynamics: the uniform
        // policy survives about 22 steps on average.
        let env = CartPole::new(100);
        let p = uniform_policy();
        let mean = (0..1000u64).map(|s| env.rollout(&p, s).unwrap().episode_return).sum::<f64>() / 1000.0;
        assert!((15.0..=35.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn rejects_wrong_policy_shape() {
        let arch = MlpArch::new(2, &[], 3, OutputHead::Softmax { temperature: 1.0 });
        let p = MlpPolicy::new(arch, vec![0.0; 9]).unwrap();
        assert!(CartPole::default().rollout(&p, 0).is_err());
    }
}
