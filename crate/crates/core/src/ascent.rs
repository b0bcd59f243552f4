//! Policy improvement by gradient ascent on a frozen evaluation network.
//!
//! Each restart starts from a Glorot-initialized policy and follows the
//! gradient of the network's scalar estimate. After every step the current
//! policy is evaluated with fresh Monte-Carlo rollouts; the restart keeps the
//! policy with the best sampled return, and the overall winner is the best of
//! all restarts. Restart `i` is seeded from `derive_path(seed, [ASCENT_START, i])`
//! and its step-`t` evaluation from `derive_path(seed, [ASCENT_EVAL, i, t])`,
//! so restarts are independent of each other and of scheduling.

use serde::{Deserialize, Serialize};

use crate::dataset::rollout_returns;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mdp::{exact_grad, performance, TabularMdp, TabularPolicy};
use crate::mlp::MlpArch;
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::policy::MlpPolicy;
use crate::pvn::Pvn;
use crate::rng::{derive_path, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    pub restarts: usize,
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    /// Monte-Carlo episodes averaged to score each visited policy.
    pub eval_rollouts: usize,
    /// Stop a restart once its best score has not improved for this many steps.
    pub patience: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentStep {
    pub step: usize,
    pub theta: Vec<f64>,
    pub j_hat: f64,
    pub g_mc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentTrace {
    pub restart: usize,
    /// Step 0 is the starting policy.
    pub steps: Vec<AscentStep>,
    /// Index into `steps` of the highest `g_mc` (earliest on ties).
    pub best: usize,
    /// Why the restart ended early, if it did.
    pub aborted: Option<String>,
}

impl AscentTrace {
    pub fn best_step(&self) -> &AscentStep {
        &self.steps[self.best]
    }
}

#[derive(Debug, Clone)]
pub struct AscentOutcome {
    pub best: MlpPolicy,
    pub best_g_mc: f64,
    pub best_restart: usize,
    pub traces: Vec<AscentTrace>,
}

/// The starting policy of restart `restart`, shared by every method that
/// uses the same seed and architecture.
pub fn start_policy(arch: &MlpArch, seed: u64, restart: usize) -> Result<MlpPolicy> {
    MlpPolicy::glorot(arch.clone(), derive_path(seed, &[streams::ASCENT_START, restart as u64]))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs a single restart. Non-finite gradients end it early with a diagnostic.
pub fn ascend_restart<E: Environment + ?Sized>(
    pvn: &Pvn,
    env: &E,
    arch: &MlpArch,
    config: &AscentConfig,
    restart: usize,
) -> Result<AscentTrace> {
    if config.eval_rollouts == 0 {
        return Err(Error::InvalidArgument("eval_rollouts must be >= 1".into()));
    }
    let start = start_policy(arch, config.seed, restart)?;
    let mut theta = start.params().to_vec();
    let mut opt = OptimizerState::new(config.optimizer, theta.len());
    let evaluate = |theta: &[f64], step: usize| -> Result<f64> {
        let policy = MlpPolicy::new(arch.clone(), theta.to_vec())?;
        let base = derive_path(config.seed, &[streams::ASCENT_EVAL, restart as u64, step as u64]);
        Ok(mean(&rollout_returns(env, &policy, base, config.eval_rollouts)?))
    };

    let mut trace = AscentTrace { restart, steps: Vec::with_capacity(config.steps + 1), best: 0, aborted: None };
    let (mut j, mut grad) = pvn.j_hat_with_grad(&theta)?;
    trace.steps.push(AscentStep { step: 0, theta: theta.clone(), j_hat: j, g_mc: evaluate(&theta, 0)? });
    let mut since_best = 0;
    for step in 1..=config.steps {
        let ascent: Vec<f64> = grad.iter().map(|g| -g).collect();
        opt.step(&mut theta, &ascent)?;
        if theta.iter().any(|v| !v.is_finite()) {
            trace.aborted = Some(format!("non-finite parameters at step {step}"));
            break;
        }
        match pvn.j_hat_with_grad(&theta) {
            Ok((v, g)) => {
                j = v;
                grad = g;
            }
            Err(e @ Error::NonFinite(_)) => {
                trace.aborted = Some(format!("step {step}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        }
        let g_mc = evaluate(&theta, step)?;
        trace.steps.push(AscentStep { step, theta: theta.clone(), j_hat: j, g_mc });
        if g_mc > trace.steps[trace.best].g_mc {
            trace.best = trace.steps.len() - 1;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    Ok(trace)
}

/// Runs every restart (in parallel when enabled) and returns the policy
/// with the best sampled return across all of them.
pub fn ascend<E: Environment + ?Sized>(pvn: &Pvn, env: &E, arch: &MlpArch, config: &AscentConfig) -> Result<AscentOutcome> {
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("ascent needs at least one restart".into()));
    }
    let run = |i: usize| ascend_restart(pvn, env, arch, config, i);
    #[cfg(feature = "parallel")]
    let traces: Vec<AscentTrace> = {
        use rayon::prelude::*;
        (0..config.restarts).into_par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let traces: Vec<AscentTrace> = (0..config.restarts).map(run).collect::<Result<_>>()?;

    let mut winner = 0;
    for (i, t) in traces.iter().enumerate() {
        if t.best_step().g_mc > traces[winner].best_step().g_mc {
            winner = i;
        }
    }
    let best_step = traces[winner].best_step();
    Ok(AscentOutcome {
        best: MlpPolicy::new(arch.clone(), best_step.theta.clone())?,
        best_g_mc: best_step.g_mc,
        best_restart: winner,
        traces,
    })
}

/// `restart,step,j_hat,g_mc`.
pub fn traces_csv(traces: &[AscentTrace]) -> String {
    let mut out = String::from("restart,step,j_hat,g_mc\n");
    for t in traces {
        for s in &t.steps {
            out.push_str(&format!("{},{},{},{}\n", t.restart, s.step, s.j_hat, s.g_mc));
        }
    }
    out
}

/// A path through the two-action tabular policy cube.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularTrace {
    /// First-action probabilities per state, one entry per step (step 0 first).
    pub points: Vec<Vec<f64>>,
    /// Exact performance at each point.
    pub j: Vec<f64>,
    /// The quantity being ascended at each point (exact or estimated).
    pub objective: Vec<f64>,
}

impl TabularTrace {
    pub fn last(&self) -> &[f64] {
        self.points.last().expect("trace has a start point")
    }

    /// `step,p_a1_s1,p_a1_s2,...,j,objective`.
    pub fn to_csv(&self) -> String {
        let dims = self.points.first().map_or(0, Vec::len);
        let mut out = String::from("step");
        for s in 0..dims {
            out.push_str(&format!(",p_a1_s{}", s + 1));
        }
        out.push_str(",j,objective\n");
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in p {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{}\n", self.j[i], self.objective[i]));
        }
        out
    }
}

/// What provides values and gradients over the tabular policy cube.
#[derive(Debug, Clone, Copy)]
pub enum FieldEvaluator<'a> {
    Exact(&'a TabularMdp),
    Learned(&'a Pvn),
}

impl FieldEvaluator<'_> {
    pub fn value_and_grad(&self, point: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            FieldEvaluator::Exact(mdp) => {
                let pi = TabularPolicy::from_first_action_probs(point)?;
                Ok((performance(mdp, &pi)?, exact_grad(mdp, &pi)?))
            }
            FieldEvaluator::Learned(pvn) => pvn.j_hat_with_grad(point),
        }
    }
}

fn check_start(start: &[f64]) -> Result<()> {
    if start.is_empty() || start.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument(format!("start policy {start:?} outside the unit cube")));
    }
    Ok(())
}

/// Plain gradient ascent with step `lr`, clamping every coordinate to
/// `[0, 1]` after each step. `mdp` supplies the exact `J` that is recorded
/// alongside the ascended objective.
pub fn ascend_tabular(evaluator: FieldEvaluator<'_>, mdp: &TabularMdp, start: &[f64], steps: usize, lr: f64) -> Result<TabularTrace> {
    check_start(start)?;
    let mut point = start.to_vec();
    let mut trace = TabularTrace { points: Vec::new(), j: Vec::new(), objective: Vec::new() };
    for step in 0..=steps {
        let (objective, grad) = evaluator.value_and_grad(&point)?;
        trace.points.push(point.clone());
        trace.j.push(performance(mdp, &TabularPolicy::from_first_action_probs(&point)?)?);
        trace.objective.push(objective);
        if step == steps {
            break;
        }
        for (p, g) in point.iter_mut().zip(&grad) {
            *p = (*p + lr * g).clamp(0.0, 1.0);
        }
    }
    Ok(trace)
}

/// Ascent with the exact performance gradient.
pub fn ascend_exact(mdp: &TabularMdp, start: &[f64], steps: usize, lr: f64) -> Result<TabularTrace> {
    ascend_tabular(FieldEvaluator::Exact(mdp), mdp, start, steps, lr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub x: f64,
    pub y: f64,
    pub gx: f64,
    pub gy: f64,
}

/// `resolution x resolution` points of the unit square, row by row in `y`.
/// With `interior` the points are cell centres `(i + 0.5) / resolution`;
/// otherwise they span the closed square including its edges.
pub fn grid(resolution: usize, interior: bool) -> Vec<[f64; 2]> {
    let coord = |i: usize| {
        if interior {
            (i as f64 + 0.5) / resolution as f64
        } else if resolution == 1 {
            0.5
        } else {
            i as f64 / (resolution - 1) as f64
        }
    };
    (0..resolution)
        .flat_map(|j| (0..resolution).map(move |i| [coord(i), coord(j)]))
        .collect()
}

/// Gradients at each point of a two-state policy grid. On the boundary of
/// the square, components pointing out of it are zeroed.
pub fn gradient_field(evaluator: FieldEvaluator<'_>, points: &[[f64; 2]]) -> Result<Vec<FieldPoint>> {
    points
        .iter()
        .map(|&[x, y]| {
            let (_, g) = evaluator.value_and_grad(&[x, y])?;
            let project = |p: f64, g: f64| if (p <= 0.0 && g < 0.0) || (p >= 1.0 && g > 0.0) { 0.0 } else { g };
            Ok(FieldPoint { x, y, gx: project(x, g[0]), gy: project(y, g[1]) })
        })
        .collect()
}

/// `p_a1_s1,p_a1_s2,grad_s1,grad_s2`.
pub fn field_csv(field: &[FieldPoint]) -> String {
    let mut out = String::from("p_a1_s1,p_a1_s2,grad_s1,grad_s2\n");
    for p in field {
        out.push_str(&format!("{},{},{},{}\n", p.x, p.y, p.gx, p.gy));
    }
    out
}

/// Mean cosine similarity of paired gradient vectors. Pairs where either
/// vector is zero contribute zero.
pub fn mean_cosine(a: &[FieldPoint], b: &[FieldPoint]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("fields of {} and {} points", a.len(), b.len())));
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let na = p.gx.hypot(p.gy);
            let nb = q.gx.hypot(q.gy);
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                (p.gx * q.gx + p.gy * q.gy) / (na * nb)
            }
        })
        .sum();
    Ok(total / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartpole::CartPole;
    use crate::dataset::BinSpec;
    use crate::mdp::{two_state_mdp, best_corner};
    use crate::optim::OptimizerKind;
    use crate::policy::{init_probes, ProbeInit, DEFAULT_TEMPERATURE};
    use crate::pvn::{InputMode, PvnHead};

    fn linear_arch() -> MlpArch {
        MlpPolicy::softmax_arch(4, &[], 2, DEFAULT_TEMPERATURE)
    }

    fn small_pvn() -> Pvn {
        let probes = init_probes(4, 4, 1, &ProbeInit::StandardNormal).unwrap();
        let spec = BinSpec::new(11, 0.0, 100.0).unwrap();
        Pvn::new(InputMode::Fingerprint { probes, policy_arch: linear_arch() }, &[8], PvnHead::Categorical(spec), 1).unwrap()
    }

    fn config(steps: usize) -> AscentConfig {
        AscentConfig {
            restarts: 3,
            steps,
            optimizer: OptimizerConfig::new(OptimizerKind::Adam, 0.01),
            eval_rollouts: 2,
            patience: None,
            seed: 5,
        }
    }

    #[test]
    fn zero_steps_returns_a_start_policy() {
        let pvn = small_pvn();
        let out = ascend(&pvn, &CartPole::new(100), &linear_arch(), &config(0)).unwrap();
        let starts: Vec<MlpPolicy> = (0..3).map(|i| start_policy(&linear_arch(), 5, i).unwrap()).collect();
        assert!(starts.contains(&out.best));
        assert!(out.traces.iter().all(|t| t.steps.len() == 1));
    }

    #[test]
    fn network_is_untouched_and_restarts_are_independent() {
        let pvn = small_pvn();
        let before = pvn.clone();
        let env = CartPole::new(100);
        let cfg = config(15);
        let out = ascend(&pvn, &env, &linear_arch(), &cfg).unwrap();
        assert_eq!(pvn, before);
        let alone = ascend_restart(&pvn, &env, &linear_arch(), &cfg, 2).unwrap();
        assert_eq!(alone, out.traces[2]);
        for t in &out.traces {
            let max = t.steps.iter().map(|s| s.g_mc).fold(f64::MIN, f64::max);
            assert_eq!(t.best_step().g_mc, max);
            assert_eq!(t.steps.len(), 16);
        }
        assert!(out.traces.iter().all(|t| t.best_step().g_mc <= out.best_g_mc));
        assert_eq!(traces_csv(&out.traces).lines().count(), 1 + 3 * 16);
    }

    #[test]
    fn estimate_rises_along_the_path() {
        let pvn = small_pvn();
        let out = ascend(&pvn, &CartPole::new(100), &linear_arch(), &config(30)).unwrap();
        for t in &out.traces {
            assert!(t.steps.last().unwrap().j_hat >= t.steps[0].j_hat);
        }
    }

    #[test]
    fn patience_stops_early() {
        let pvn = small_pvn();
        let cfg = AscentConfig { patience: Some(3), ..config(200) };
        let t = ascend_restart(&pvn, &CartPole::new(100), &linear_arch(), &cfg, 0).unwrap();
        assert!(t.steps.len() < 201);
    }

    #[test]
    fn exact_ascent_reaches_the_best_corner() {
        let mdp = two_state_mdp();
        let (corner, _) = best_corner(&mdp).unwrap();
        let trace = ascend_exact(&mdp, &[0.5, 0.0], 100, 0.1).unwrap();
        let end = trace.last();
        assert!(end.iter().zip(&corner).all(|(a, b)| (a - b).abs() < 0.1), "{end:?} vs {corner:?}");
        assert_eq!(trace.points.len(), 101);
    }

    #[test]
    fn exact_ascent_is_monotone_with_small_steps() {
        let mdp = two_state_mdp();
        let trace = ascend_exact(&mdp, &[0.5, 0.0], 200, 0.01).unwrap();
        for w in trace.j.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{w:?}");
        }
    }

    #[test]
    fn optimal_corner_does_not_move() {
        let mdp = two_state_mdp();
        let (corner, _) = best_corner(&mdp).unwrap();
        let trace = ascend_exact(&mdp, &corner, 10, 0.1).unwrap();
        assert!(trace.points.iter().all(|p| p == &corner));
    }

    #[test]
    fn exact_field_respects_the_boundary() {
        let mdp = two_state_mdp();
        let field = gradient_field(FieldEvaluator::Exact(&mdp), &grid(5, false)).unwrap();
        for p in &field {
            assert!(!(p.x == 0.0 && p.gx < 0.0) && !(p.x == 1.0 && p.gx > 0.0));
            assert!(!(p.y == 0.0 && p.gy < 0.0) && !(p.y == 1.0 && p.gy > 0.0));
        }
        let (corner, _) = best_corner(&mdp).unwrap();
        let at_corner = gradient_field(FieldEvaluator::Exact(&mdp), &[[corner[0], corner[1]]]).unwrap();
        assert_eq!((at_corner[0].gx, at_corner[0].gy), (0.0, 0.0));
    }

    #[test]
    fn constant_reward_field_is_zero() {
        let mdp = two_state_mdp().with_rewards(vec![1.0; 4]).unwrap();
        let field = gradient_field(FieldEvaluator::Exact(&mdp), &grid(11, true)).unwrap();
        assert!(field.iter().all(|p| p.gx.abs() < 1e-8 && p.gy.abs() < 1e-8));
    }

    #[test]
    fn grids_and_cosines() {
        let g = grid(11, true);
        assert_eq!(g.len(), 121);
        assert!(g.iter().all(|p| p[0] > 0.0 && p[0] < 1.0));
        assert_eq!(grid(3, false)[8], [1.0, 1.0]);
        let a = [FieldPoint { x: 0.0, y: 0.0, gx: 1.0, gy: 0.0 }, FieldPoint { x: 0.0, y: 0.0, gx: 0.0, gy: 2.0 }];
        let b = [FieldPoint { x: 0.0, y: 0.0, gx: 3.0, gy: 0.0 }, FieldPoint { x: 0.0, y: 0.0, gx: 0.0, gy: -1.0 }];
        assert_eq!(mean_cosine(&a, &b).unwrap(), 0.0);
        assert_eq!(mean_cosine(&a, &a).unwrap(), 1.0);
    }
}
