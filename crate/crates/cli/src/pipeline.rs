//! The experiment pipelines behind each command. Every function here is a
//! pure function of the configuration and its inputs; the binary only adds
//! file I/O around them.

use serde::Serialize;

use pvn_core::ascent::{
    ascend, ascend_exact, ascend_tabular, gradient_field, grid, mean_cosine, AscentConfig, AscentOutcome,
    FieldEvaluator, FieldPoint, TabularTrace,
};
use pvn_core::cartpole::CartPole;
use pvn_core::config::{ExperimentConfig, InputKind};
use pvn_core::dataset::{
    collect, filter_by_return, return_range, rollout_returns, split_indices, BinSpec, DatasetHeader, PolicyRecord,
};
use pvn_core::env::Environment;
use pvn_core::mdp::{best_corner, sample_polytope_dataset, two_state_mdp, PolytopePoint, Split, TabularMdp};
use pvn_core::mlp::MlpArch;
use pvn_core::optim::OptimizerConfig;
use pvn_core::policy::{init_probes, MlpPolicy, ProbeInit};
use pvn_core::pvn::{samples_from_records, train, InputMode, Pvn, PvnHead, Sample, TrainConfig, TrainReport};
use pvn_core::rng::{derive_seed, streams};
use pvn_core::{Error, Result};

/// Written into artifacts in place of a timestamp.
pub const TOOL_TAG: &str = concat!("pvnlab ", env!("CARGO_PKG_VERSION"));

const CARTPOLE_OBS: usize = 4;
const CARTPOLE_ACTIONS: usize = 2;
/// Policies whose visited states seed the probes when they are not random.
const PROBE_POOL_POLICIES: usize = 10;

pub fn policy_arch(cfg: &ExperimentConfig) -> MlpArch {
    MlpPolicy::softmax_arch(CARTPOLE_OBS, &cfg.policy_hidden, CARTPOLE_ACTIONS, cfg.temperature)
}

pub fn cartpole(cfg: &ExperimentConfig) -> CartPole {
    CartPole::new(cfg.max_steps)
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        batch_size: cfg.batch_size,
        steps: cfg.train_steps,
        optimizer: OptimizerConfig::new(cfg.pvn_optimizer, cfg.pvn_lr),
        train_probes: cfg.train_probes,
        eval_every: cfg.eval_every,
        seed: cfg.seed,
    }
}

// ---------------------------------------------------------------- polytope

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolytopeSummary {
    pub train_policies: usize,
    pub test_policies: usize,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    /// Mean absolute value error on the test policies, per state.
    pub test_mae: Vec<f64>,
    pub field_cosine: f64,
    pub best_corner: Vec<f64>,
    pub best_corner_j: f64,
    pub exact_end: Vec<f64>,
    pub learned_end: Vec<f64>,
    /// L-infinity distance of each ascent's end point from the best corner.
    pub exact_distance: f64,
    pub learned_distance: f64,
}

#[derive(Debug, Clone)]
pub struct PolytopeRun {
    pub points: Vec<PolytopePoint>,
    pub pvn: Pvn,
    pub train_config: TrainConfig,
    pub report: TrainReport,
    pub exact_field: Vec<FieldPoint>,
    pub learned_field: Vec<FieldPoint>,
    pub exact_trace: TabularTrace,
    pub learned_trace: TabularTrace,
    pub summary: PolytopeSummary,
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn polytope_mdp(cfg: &ExperimentConfig) -> Result<TabularMdp> {
    two_state_mdp().with_gamma(cfg.gamma)
}

/// Samples train and test policies, regresses their state values, then
/// compares exact and learned gradient fields and ascents.
pub fn run_polytope(cfg: &ExperimentConfig) -> Result<PolytopeRun> {
    let mdp = polytope_mdp(cfg)?;
    let points = sample_polytope_dataset(&mdp, 2 * cfg.policies, derive_seed(cfg.seed, streams::POLYTOPE))?;
    let sample = |p: &PolytopePoint| Sample { theta: p.policy.clone(), target: p.values.clone() };
    let train_set: Vec<Sample> = points.iter().filter(|p| p.split == Split::Train).map(sample).collect();
    let test_set: Vec<Sample> = points.iter().filter(|p| p.split == Split::Test).map(sample).collect();

    let head = PvnHead::Regression { value_weights: mdp.initial().to_vec() };
    let mut pvn = Pvn::new(InputMode::TabularDirect { width: mdp.num_states() }, &cfg.pvn_hidden, head, cfg.seed)?;
    let tc = TrainConfig { train_probes: false, ..train_config(cfg) };
    let report = train(&mut pvn, &train_set, &test_set, &tc)?;

    let mut abs_err = vec![0.0; mdp.num_states()];
    for s in &test_set {
        for (e, (p, t)) in abs_err.iter_mut().zip(pvn.predict(&s.theta)?.iter().zip(&s.target)) {
            *e += (p - t).abs();
        }
    }
    let test_mae: Vec<f64> = abs_err.iter().map(|e| e / test_set.len().max(1) as f64).collect();

    let points_grid = grid(cfg.field_resolution, true);
    let exact_field = gradient_field(FieldEvaluator::Exact(&mdp), &points_grid)?;
    let learned_field = gradient_field(FieldEvaluator::Learned(&pvn), &points_grid)?;
    let field_cosine = mean_cosine(&exact_field, &learned_field)?;

    let exact_trace = ascend_exact(&mdp, &cfg.polytope_start, cfg.ascent_steps, cfg.ascent_lr)?;
    let learned_trace =
        ascend_tabular(FieldEvaluator::Learned(&pvn), &mdp, &cfg.polytope_start, cfg.ascent_steps, cfg.ascent_lr)?;
    let (corner, corner_j) = best_corner(&mdp)?;

    let summary = PolytopeSummary {
        train_policies: train_set.len(),
        test_policies: test_set.len(),
        final_train_loss: report.final_train_loss,
        final_test_loss: report.test_loss.last().map_or(f64::NAN, |(_, l)| *l),
        test_mae,
        field_cosine,
        exact_distance: linf(exact_trace.last(), &corner),
        learned_distance: linf(learned_trace.last(), &corner),
        exact_end: exact_trace.last().to_vec(),
        learned_end: learned_trace.last().to_vec(),
        best_corner: corner,
        best_corner_j: corner_j,
    };
    Ok(PolytopeRun { points, pvn, train_config: tc, report, exact_field, learned_field, exact_trace, learned_trace, summary })
}

// ---------------------------------------------------------------- cartpole

/// Random policies with their sampled returns, unfiltered.
pub fn run_collect(cfg: &ExperimentConfig) -> Result<(DatasetHeader, Vec<PolicyRecord>)> {
    let env = cartpole(cfg);
    let records = collect(&env, &policy_arch(cfg), cfg.policies, cfg.returns_per_policy, cfg.seed)?;
    let header = DatasetHeader {
        env: env.name(),
        k: cfg.policies,
        b: cfg.returns_per_policy,
        master_seed: cfg.seed,
        created: TOOL_TAG.into(),
    };
    Ok((header, records))
}

/// A dataset split for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Bins span every sampled return, including those of discarded policies.
    pub spec: BinSpec,
    pub kept: Vec<PolicyRecord>,
    pub discarded: Vec<PolicyRecord>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn prepare(cfg: &ExperimentConfig, records: Vec<PolicyRecord>) -> Result<Prepared> {
    let arch = policy_arch(cfg);
    if let Some(r) = records.iter().find(|r| r.policy.arch() != &arch) {
        return Err(Error::Schema(format!(
            "dataset policies have hidden layers {:?}, the configuration expects {:?}",
            r.policy.arch().hidden,
            arch.hidden
        )));
    }
    let (g_min, g_max) = return_range(&records)?;
    // A dataset with a single distinct return still needs a non-empty range.
    let g_max = if g_max > g_min { g_max } else { g_min + 1.0 };
    let spec = BinSpec::new(cfg.bins, g_min, g_max)?;
    let (kept, discarded) = filter_by_return(records, cfg.return_limit.unwrap_or(f64::INFINITY));
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_idx, test_idx) = split_indices(kept.len(), cfg.test_fraction, derive_seed(cfg.seed, streams::SPLIT));
    let pick = |idx: &[usize]| -> Vec<PolicyRecord> { idx.iter().map(|&i| kept[i].clone()).collect() };
    let train = samples_from_records(&pick(&train_idx), spec)?;
    let test = samples_from_records(&pick(&test_idx), spec)?;
    Ok(Prepared { spec, kept, discarded, train, test })
}

/// An untrained network for `cfg`. Probes are standard normal unless
/// `random_probes` is off, in which case they are drawn from states visited
/// by the first few kept policies.
pub fn build_pvn(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<Pvn> {
    let arch = policy_arch(cfg);
    let head = PvnHead::Categorical(prepared.spec);
    let mode = match cfg.input {
        InputKind::Flatten => InputMode::Flatten { width: arch.param_count() },
        InputKind::Fingerprint => {
            let init = if cfg.random_probes {
                ProbeInit::StandardNormal
            } else {
                let env = cartpole(cfg);
                let mut pool = Vec::new();
                for (i, r) in prepared.kept.iter().take(PROBE_POOL_POLICIES).enumerate() {
                    let (_, states) = env.trajectory(&r.policy, derive_seed(cfg.seed, i as u64))?;
                    pool.extend(states.into_iter().map(|s| s.to_array().to_vec()));
                }
                ProbeInit::FromStates(pool)
            };
            let probes = init_probes(cfg.probes, CARTPOLE_OBS, derive_seed(cfg.seed, streams::PROBES), &init)?;
            InputMode::Fingerprint { probes, policy_arch: arch }
        }
    };
    Pvn::new(mode, &cfg.pvn_hidden, head, cfg.seed)
}

pub fn run_train(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<(Pvn, TrainConfig, TrainReport)> {
    let mut pvn = build_pvn(cfg, prepared)?;
    let tc = train_config(cfg);
    let report = train(&mut pvn, &prepared.train, &prepared.test, &tc)?;
    Ok((pvn, tc, report))
}

#[derive(Debug, Clone)]
pub struct AscentRun {
    pub outcome: AscentOutcome,
    /// Fresh returns of each restart's best policy, in restart order.
    pub restart_returns: Vec<Vec<f64>>,
    /// The restart whose best policy has the highest fresh mean return.
    pub selected: usize,
    pub best: MlpPolicy,
    pub final_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscentSummary {
    pub selected_restart: usize,
    pub selected_step: usize,
    pub final_mean_return: f64,
    pub final_rollouts: usize,
    /// Fresh mean return of every restart's best policy.
    pub restart_means: Vec<f64>,
    /// The restart with the best single per-step sample, as the ascent itself ranks them.
    pub sampled_best_restart: usize,
    pub sampled_best_return: f64,
    pub aborted_restarts: Vec<usize>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl AscentRun {
    pub fn summary(&self) -> AscentSummary {
        AscentSummary {
            selected_restart: self.selected,
            selected_step: self.outcome.traces[self.selected].best_step().step,
            final_mean_return: self.final_mean,
            final_rollouts: self.restart_returns[self.selected].len(),
            restart_means: self.restart_returns.iter().map(|r| mean(r)).collect(),
            sampled_best_restart: self.outcome.best_restart,
            sampled_best_return: self.outcome.best_g_mc,
            aborted_restarts: self.outcome.traces.iter().filter(|t| t.aborted.is_some()).map(|t| t.restart).collect(),
        }
    }
}

pub fn ascent_config(cfg: &ExperimentConfig) -> AscentConfig {
    AscentConfig {
        restarts: cfg.ascent_restarts,
        steps: cfg.ascent_steps,
        optimizer: OptimizerConfig::new(cfg.ascent_optimizer, cfg.ascent_lr),
        eval_rollouts: cfg.ascent_eval_rollouts,
        patience: cfg.ascent_patience,
        seed: cfg.seed,
    }
}

/// Ascends the frozen network from fresh policies, then re-evaluates each
/// restart's best policy with `final_eval_rollouts` new episodes and keeps
/// the one with the highest mean.
pub fn run_ascend(cfg: &ExperimentConfig, pvn: &Pvn) -> Result<AscentRun> {
    let arch = policy_arch(cfg);
    if pvn.mode().theta_len() != arch.param_count() {
        return Err(Error::Schema(format!(
            "checkpoint expects policies with {} parameters, the configuration has {}",
            pvn.mode().theta_len(),
            arch.param_count()
        )));
    }
    let env = cartpole(cfg);
    let outcome = ascend(pvn, &env, &arch, &ascent_config(cfg))?;
    let base = derive_seed(cfg.seed, streams::FINAL_EVAL);
    let restart_returns = outcome
        .traces
        .iter()
        .map(|t| {
            let policy = MlpPolicy::new(arch.clone(), t.best_step().theta.clone())?;
            rollout_returns(&env, &policy, base, cfg.final_eval_rollouts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut selected = 0;
    for (i, r) in restart_returns.iter().enumerate() {
        if mean(r) > mean(&restart_returns[selected]) {
            selected = i;
        }
    }
    let best = MlpPolicy::new(arch, outcome.traces[selected].best_step().theta.clone())?;
    let final_mean = mean(&restart_returns[selected]);
    Ok(AscentRun { outcome, restart_returns, selected, best, final_mean })
}
