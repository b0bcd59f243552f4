//! The policy evaluation network.
//!
//! A [`Pvn`] maps a policy representation to either a categorical
//! distribution over return bins or, for the tabular experiments, a direct
//! regression of per-state values. The representation is chosen by
//! [`InputMode`]:
//!
//! - `Fingerprint`: the policy's outputs on learned probing states,
//! - `Flatten`: the raw parameter vector,
//! - `TabularDirect`: a tabular policy's free probabilities.
//!
//! Everything is differentiable with respect to the network weights, the
//! probes and the policy parameters, which is what both training and
//! gradient ascent rely on.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{discretize_with, BinSpec, PolicyRecord};
use crate::error::{shape_err, Error, Result};
use crate::graph::{kl_term, Graph, NodeId};
use crate::init::init_mlp_params;
use crate::mlp::{forward_mlp_graph, forward_rows, MlpArch, OutputHead};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::policy::{fingerprint, fingerprint_graph, MlpPolicy, ProbingStates};
use crate::rng::{derive_seed, rng_from_seed, streams};
use crate::tensor::Tensor;

/// Floor applied to predicted probabilities inside the KL logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum InputMode {
    Fingerprint { probes: ProbingStates, policy_arch: MlpArch },
    Flatten { width: usize },
    TabularDirect { width: usize },
}

impl InputMode {
    pub fn name(&self) -> &'static str {
        match self {
            InputMode::Fingerprint { .. } => "fingerprint",
            InputMode::Flatten { .. } => "flatten",
            InputMode::TabularDirect { .. } => "tabular-direct",
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            InputMode::Fingerprint { probes, policy_arch } => probes.count() * policy_arch.output,
            InputMode::Flatten { width } | InputMode::TabularDirect { width } => *width,
        }
    }

    /// Length of the policy parameter vector this mode consumes.
    pub fn theta_len(&self) -> usize {
        match self {
            InputMode::Fingerprint { policy_arch, .. } => policy_arch.param_count(),
            InputMode::Flatten { width } | InputMode::TabularDirect { width } => *width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PvnHead {
    /// Softmax over return bins, trained with a KL loss.
    Categorical(BinSpec),
    /// Linear outputs trained with squared error; the scalar estimate is
    /// `value_weights . output` (an initial-state distribution for per-state
    /// value regression).
    Regression { value_weights: Vec<f64> },
}

impl PvnHead {
    pub fn outputs(&self) -> usize {
        match self {
            PvnHead::Categorical(spec) => spec.bins,
            PvnHead::Regression { value_weights } => value_weights.len(),
        }
    }

    /// The weights that turn a network output into the scalar estimate.
    pub fn readout(&self) -> Vec<f64> {
        match self {
            PvnHead::Categorical(spec) => spec.midpoints(),
            PvnHead::Regression { value_weights } => value_weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pvn {
    mode: InputMode,
    net: MlpArch,
    params: Vec<f64>,
    head: PvnHead,
}

impl Pvn {
    /// A freshly initialized network (Glorot weights, zero biases).
    pub fn new(mode: InputMode, hidden: &[usize], head: PvnHead, seed: u64) -> Result<Self> {
        let out_head = match head {
            PvnHead::Categorical(_) => OutputHead::Softmax { temperature: 1.0 },
            PvnHead::Regression { .. } => OutputHead::Linear,
        };
        let net = MlpArch::new(mode.input_width(), hidden, head.outputs(), out_head);
        net.validate()?;
        let params = init_mlp_params(&net, derive_seed(seed, streams::PVN_INIT));
        Ok(Self { mode, net, params, head })
    }

    pub fn from_parts(mode: InputMode, net: MlpArch, params: Vec<f64>, head: PvnHead) -> Result<Self> {
        net.validate()?;
        if net.input != mode.input_width() || net.output != head.outputs() {
            return Err(shape_err(format!(
                "network {} -> {} does not fit mode width {} and {} outputs",
                net.input,
                net.output,
                mode.input_width(),
                head.outputs()
            )));
        }
        if params.len() != net.param_count() {
            return Err(shape_err(format!("{} network parameters, expected {}", params.len(), net.param_count())));
        }
        Ok(Self { mode, net, params, head })
    }

    pub fn mode(&self) -> &InputMode {
        &self.mode
    }

    pub fn net(&self) -> &MlpArch {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn head(&self) -> &PvnHead {
        &self.head
    }

    pub fn probes(&self) -> Option<&ProbingStates> {
        match &self.mode {
            InputMode::Fingerprint { probes, .. } => Some(probes),
            _ => None,
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.mode.theta_len() {
            return Err(shape_err(format!(
                "{} mode expects {} policy parameters, got {}",
                self.mode.name(),
                self.mode.theta_len(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// The network input for one policy.
    pub fn encode(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        match &self.mode {
            InputMode::Fingerprint { probes, policy_arch } => {
                let policy = MlpPolicy::new(policy_arch.clone(), theta.to_vec())?;
                Ok(fingerprint(&policy, probes)?.0)
            }
            InputMode::Flatten { .. } | InputMode::TabularDirect { .. } => Ok(theta.to_vec()),
        }
    }

    /// Raw network output for one policy: bin probabilities or regressed values.
    pub fn predict(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let x = self.encode(theta)?;
        let out = forward_rows(&self.params, &self.net, &x, 1);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(out)
    }

    pub fn predict_batch(&self, thetas: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        thetas.iter().map(|t| self.predict(t)).collect()
    }

    /// Predicted mass over return bins (categorical head only).
    pub fn predict_distribution(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self.head {
            PvnHead::Categorical(_) => self.predict(theta),
            PvnHead::Regression { .. } => {
                Err(Error::InvalidArgument("regression network has no return distribution".into()))
            }
        }
    }

    /// The scalar return estimate.
    pub fn j_hat(&self, theta: &[f64]) -> Result<f64> {
        let out = self.predict(theta)?;
        Ok(out.iter().zip(self.head.readout()).map(|(p, r)| p * r).sum())
    }

    /// The scalar estimate and its gradient with respect to `theta`, with
    /// the network weights and probes held fixed.
    pub fn j_hat_with_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_theta(theta)?;
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(self.params.clone())?);
        let probes = self.probes().map(|p| g.leaf(p.tensor().clone()));
        let th = g.leaf(Tensor::vector(theta.to_vec())?);
        let x = self.encode_node(&mut g, th, probes)?;
        let out = forward_mlp_graph(&mut g, w, &self.net, x)?;
        let readout = g.leaf(Tensor::matrix(self.net.output, 1, self.head.readout())?);
        let j = g.matmul(out, readout)?;
        let j = g.sum(j)?;
        let grads = g.backward(j)?;
        let value = g.value(j).data()[0];
        let grad = grads.wrt(th).into_data();
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ascent gradient".into()));
        }
        Ok((value, grad))
    }

    /// Records the network input `[1, width]` for the policy node `theta`.
    pub fn encode_node(&self, g: &mut Graph, theta: NodeId, probes: Option<NodeId>) -> Result<NodeId> {
        match &self.mode {
            InputMode::Fingerprint { policy_arch, .. } => {
                let probes = probes.ok_or_else(|| Error::InvalidArgument("fingerprint mode needs a probe node".into()))?;
                fingerprint_graph(g, theta, policy_arch, probes)
            }
            InputMode::Flatten { width } | InputMode::TabularDirect { width } => g.reshape(theta, &[1, *width]),
        }
    }

    /// Records the batched loss of `batch` and returns `(loss, w, probes)` nodes.
    fn loss_graph(&self, g: &mut Graph, batch: &[&Sample]) -> Result<(NodeId, NodeId, Option<NodeId>)> {
        let w = g.leaf(Tensor::vector(self.params.clone())?);
        let probes = self.probes().map(|p| g.leaf(p.tensor().clone()));
        let width = self.net.input;
        let x = match &self.mode {
            InputMode::Fingerprint { .. } => {
                let mut rows = Vec::with_capacity(batch.len());
                for s in batch {
                    self.check_theta(&s.theta)?;
                    let th = g.leaf(Tensor::vector(s.theta.clone())?);
                    rows.push(self.encode_node(g, th, probes)?);
                }
                g.concat_rows(&rows)?
            }
            InputMode::Flatten { .. } | InputMode::TabularDirect { .. } => {
                let mut data = Vec::with_capacity(batch.len() * width);
                for s in batch {
                    self.check_theta(&s.theta)?;
                    data.extend_from_slice(&s.theta);
                }
                g.leaf(Tensor::matrix(batch.len(), width, data)?)
            }
        };
        let out = forward_mlp_graph(g, w, &self.net, x)?;
        let outputs = self.net.output;
        let mut target = Vec::with_capacity(batch.len() * outputs);
        for s in batch {
            if s.target.len() != outputs {
                return Err(shape_err(format!("target of length {}, network has {outputs} outputs", s.target.len())));
            }
            target.extend_from_slice(&s.target);
        }
        let target = Tensor::matrix(batch.len(), outputs, target)?;
        let loss = match self.head {
            PvnHead::Categorical(_) => g.kl_rows(out, target, PROB_FLOOR)?,
            PvnHead::Regression { .. } => {
                let t = g.leaf(target);
                let diff = g.sub(out, t)?;
                let sq = g.square(diff)?;
                g.mean(sq)?
            }
        };
        Ok((loss, w, probes))
    }

    /// Mean loss over `samples` without updating anything.
    pub fn evaluate_loss(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for s in samples {
            let out = self.predict(&s.theta)?;
            total += match self.head {
                PvnHead::Categorical(_) => kl_loss(&out, &s.target)?,
                PvnHead::Regression { .. } => {
                    out.iter().zip(&s.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / out.len() as f64
                }
            };
        }
        Ok(total / samples.len() as f64)
    }

    /// Loss of a batch with gradients for the weights and, in fingerprint
    /// mode, the probes.
    pub fn loss_and_grads(&self, batch: &[&Sample]) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
        let mut g = Graph::new();
        let (loss, w, probes) = self.loss_graph(&mut g, batch)?;
        let grads = g.backward(loss)?;
        Ok((
            g.value(loss).data()[0],
            grads.wrt(w).into_data(),
            probes.map(|p| grads.wrt(p).into_data()),
        ))
    }
}

/// `sum_i mass_i * (g_min + h/2 + i h)`.
pub fn j_hat(mass: &[f64], spec: &BinSpec) -> Result<f64> {
    if mass.len() != spec.bins {
        return Err(shape_err(format!("{} masses for {} bins", mass.len(), spec.bins)));
    }
    Ok(mass.iter().zip(spec.midpoints()).map(|(p, m)| p * m).sum())
}

/// `KL(target || predicted) = sum_i t_i log(t_i / p_i)` with `0 log 0 = 0`.
/// A zero prediction where the target has mass is an error.
pub fn kl_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(shape_err(format!("{} predictions for {} targets", predicted.len(), target.len())));
    }
    if let Some(i) = predicted.iter().zip(target).position(|(&p, &t)| t > 0.0 && p <= 0.0) {
        return Err(Error::InvalidArgument(format!("predicted mass of bin {i} is zero but the target is not")));
    }
    Ok(predicted.iter().zip(target).map(|(&p, &t)| kl_term(t, p, 0.0)).sum())
}

/// One training example: policy parameters and the network target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub theta: Vec<f64>,
    pub target: Vec<f64>,
}

/// Histogram targets computed from raw returns with `spec`.
pub fn samples_from_records(records: &[PolicyRecord], spec: BinSpec) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            Ok(Sample {
                theta: r.policy.params().to_vec(),
                target: discretize_with(&r.returns, spec)?.mass,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    /// Update the probing states jointly with the weights.
    pub train_probes: bool,
    /// Evaluate the test loss every this many steps (0 disables it).
    pub eval_every: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Batch loss before each update.
    pub train_loss: Vec<f64>,
    /// `(step, full test-set loss)`; step `s` means after `s` updates.
    pub test_loss: Vec<(usize, f64)>,
    /// Full training-set loss after the last update.
    pub final_train_loss: f64,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// `step,train_kl,test_kl`, one row per update; `test_kl` is empty on
    /// steps without an evaluation. A final row reports losses after the
    /// last update.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_kl,test_kl\n");
        let test_at = |s: usize| self.test_loss.iter().find(|(t, _)| *t == s).map(|(_, v)| v.to_string());
        for (step, loss) in self.train_loss.iter().enumerate() {
            out.push_str(&format!("{step},{loss},{}\n", test_at(step).unwrap_or_default()));
        }
        let last = self.train_loss.len();
        out.push_str(&format!("{last},{},{}\n", self.final_train_loss, test_at(last).unwrap_or_default()));
        out
    }
}

/// Minimizes the mean batch loss with minibatches drawn uniformly with
/// replacement. Weights and probes have separate optimizer states.
pub fn train(pvn: &mut Pvn, train_set: &[Sample], test_set: &[Sample], config: &TrainConfig) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let start = Instant::now();
    let mut rng = rng_from_seed(derive_seed(config.seed, streams::BATCHES));
    let mut w_opt = OptimizerState::new(config.optimizer, pvn.params.len());
    let probe_len = pvn.probes().map_or(0, |p| p.tensor().len());
    let mut p_opt = OptimizerState::new(config.optimizer, probe_len);
    let mut report = TrainReport { train_loss: Vec::with_capacity(config.steps), test_loss: Vec::new(), final_train_loss: 0.0, wall_clock_secs: 0.0 };
    let eval = |pvn: &Pvn, step: usize, report: &mut TrainReport| -> Result<()> {
        if config.eval_every > 0 && !test_set.is_empty() && step.is_multiple_of(config.eval_every) {
            report.test_loss.push((step, pvn.evaluate_loss(test_set)?));
        }
        Ok(())
    };
    for step in 0..config.steps {
        eval(pvn, step, &mut report)?;
        let batch: Vec<&Sample> = (0..config.batch_size).map(|_| &train_set[rng.random_range(0..train_set.len())]).collect();
        let (loss, w_grad, p_grad) = pvn.loss_and_grads(&batch)?;
        report.train_loss.push(loss);
        w_opt.step(&mut pvn.params, &w_grad)?;
        if config.train_probes {
            if let (InputMode::Fingerprint { probes, .. }, Some(grad)) = (&mut pvn.mode, p_grad) {
                let mut data = probes.tensor().data().to_vec();
                p_opt.step(&mut data, &grad)?;
                let shape = probes.tensor().shape().to_vec();
                *probes = ProbingStates::new(Tensor::new(shape, data)?)?;
            }
        }
    }
    let steps = config.steps;
    if config.eval_every > 0 && !test_set.is_empty() && report.test_loss.last().map(|(s, _)| *s) != Some(steps) {
        report.test_loss.push((steps, pvn.evaluate_loss(test_set)?));
    }
    report.final_train_loss = pvn.evaluate_loss(train_set)?;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModeJson {
    mode: String,
    input_width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy_arch: Option<MlpArch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probes: Option<Vec<Vec<f64>>>,
}

/// A trained network with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    mode: ModeJson,
    arch: MlpArch,
    head: PvnHead,
    params: Vec<f64>,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(pvn: &Pvn, training: Option<TrainConfig>, seed: u64) -> Self {
        let (policy_arch, probes) = match &pvn.mode {
            InputMode::Fingerprint { probes, policy_arch } => (
                Some(policy_arch.clone()),
                Some((0..probes.count()).map(|i| probes.row(i).to_vec()).collect()),
            ),
            _ => (None, None),
        };
        Self {
            mode: ModeJson { mode: pvn.mode.name().into(), input_width: pvn.mode.input_width(), policy_arch, probes },
            arch: pvn.net.clone(),
            head: pvn.head.clone(),
            params: pvn.params.clone(),
            training,
            seed,
        }
    }

    pub fn to_pvn(&self) -> Result<Pvn> {
        let schema = |msg: String| Error::Schema(format!("checkpoint: {msg}"));
        let mode = match self.mode.mode.as_str() {
            "fingerprint" => {
                let policy_arch = self.mode.policy_arch.clone().ok_or_else(|| schema("fingerprint mode without policy_arch".into()))?;
                let rows = self.mode.probes.as_ref().ok_or_else(|| schema("fingerprint mode without probes".into()))?;
                let probes = ProbingStates::from_rows(rows).map_err(|e| schema(e.to_string()))?;
                InputMode::Fingerprint { probes, policy_arch }
            }
            "flatten" => InputMode::Flatten { width: self.mode.input_width },
            "tabular-direct" => InputMode::TabularDirect { width: self.mode.input_width },
            other => return Err(schema(format!("unknown mode {other:?}"))),
        };
        Pvn::from_parts(mode, self.arch.clone(), self.params.clone(), self.head.clone()).map_err(|e| schema(e.to_string()))
    }
}
