//! Policy networks, their flat parameter view, and network fingerprints.
//!
//! A fingerprint is the concatenation of a policy's outputs on a fixed set
//! of probing states. It has the same size for every architecture that
//! shares input and action dimensions, and it is differentiable with respect
//! to both the policy parameters and the probes.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::init::{init_mlp_params, standard_normal};
use crate::mlp::{forward_mlp_graph, forward_rows, Activation, MlpArch, OutputHead};
use crate::rng::{rng_from_seed, ChaCha8Rng};
use crate::tensor::Tensor;

/// Softmax temperature applied to policy logits unless configured otherwise.
pub const DEFAULT_TEMPERATURE: f64 = 3.0;

/// A feed-forward policy `pi_theta`. With a softmax head the outputs are
/// action probabilities; with a linear head they are a deterministic
/// continuous action.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    arch: MlpArch,
    params: Vec<f64>,
}

impl MlpPolicy {
    pub fn new(arch: MlpArch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(shape_err(format!(
                "policy architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(Self { arch, params })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(arch: MlpArch, seed: u64) -> Result<Self> {
        let params = init_mlp_params(&arch, seed);
        Self::new(arch, params)
    }

    /// A softmax policy with `input` features, `actions` discrete actions
    /// and the given hidden layer widths.
    pub fn softmax_arch(input: usize, hidden: &[usize], actions: usize, temperature: f64) -> MlpArch {
        MlpArch::new(input, hidden, actions, OutputHead::Softmax { temperature })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn action_count(&self) -> usize {
        self.arch.output
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self.arch.head, OutputHead::Softmax { .. })
    }

    /// Outputs for a single state.
    pub fn action_probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.arch.input {
            return Err(shape_err(format!(
                "state of width {}, policy expects {}",
                state.len(),
                self.arch.input
            )));
        }
        let out = forward_rows(&self.params, &self.arch, state, 1);
        if out.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("policy output".into()));
        }
        Ok(out)
    }

    /// Samples a discrete action from the softmax output.
    pub fn sample_action(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<usize> {
        let probs = self.action_probs(state)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(a);
            }
        }
        Ok(probs.len() - 1)
    }
}

/// The policy parameters in their documented layer-major order.
pub fn flatten(policy: &MlpPolicy) -> Vec<f64> {
    policy.params.clone()
}

pub fn unflatten(arch: &MlpArch, params: &[f64]) -> Result<MlpPolicy> {
    MlpPolicy::new(arch.clone(), params.to_vec())
}

#[derive(Serialize, Deserialize)]
struct PolicyArchJson {
    input: usize,
    hidden: Vec<usize>,
    actions: usize,
    activation: Activation,
    stochastic: bool,
}

/// `{arch, temperature, params}` on disk.
#[derive(Serialize, Deserialize)]
pub struct PolicyJson {
    arch: PolicyArchJson,
    temperature: f64,
    params: Vec<f64>,
}

impl From<&MlpPolicy> for PolicyJson {
    fn from(p: &MlpPolicy) -> Self {
        let (stochastic, temperature) = match p.arch.head {
            OutputHead::Softmax { temperature } => (true, temperature),
            OutputHead::Linear => (false, 1.0),
        };
        Self {
            arch: PolicyArchJson {
                input: p.arch.input,
                hidden: p.arch.hidden.clone(),
                actions: p.arch.output,
                activation: p.arch.activation,
                stochastic,
            },
            temperature,
            params: p.params.clone(),
        }
    }
}

impl TryFrom<PolicyJson> for MlpPolicy {
    type Error = Error;

    fn try_from(j: PolicyJson) -> Result<Self> {
        let head = if j.arch.stochastic {
            OutputHead::Softmax { temperature: j.temperature }
        } else {
            OutputHead::Linear
        };
        let arch = MlpArch {
            input: j.arch.input,
            hidden: j.arch.hidden,
            output: j.arch.actions,
            activation: j.arch.activation,
            head,
        };
        MlpPolicy::new(arch, j.params).map_err(|e| Error::Schema(format!("policy: {e}")))
    }
}

impl Serialize for MlpPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolicyJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = PolicyJson::deserialize(d)?;
        MlpPolicy::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// The `n x k` matrix of probing states.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingStates {
    states: Tensor,
}

#[derive(Debug, Clone, Default)]
pub enum ProbeInit {
    /// i.i.d. standard normal entries.
    #[default]
    StandardNormal,
    /// Rows drawn uniformly with replacement from observed states.
    FromStates(Vec<Vec<f64>>),
}

impl ProbingStates {
    pub fn new(states: Tensor) -> Result<Self> {
        let (n, k) = states.as_matrix_dims()?;
        if n == 0 || k == 0 || states.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "probing states need shape [n>=1, k>=1], got {:?}",
                states.shape()
            )));
        }
        if !states.all_finite() {
            return Err(Error::NonFinite("probing states".into()));
        }
        Ok(Self { states })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(shape_err("probing state rows of unequal width"));
        }
        Self::new(Tensor::matrix(rows.len(), k, rows.concat())?)
    }

    pub fn count(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.states.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.states
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.width();
        &self.states.data()[i * k..(i + 1) * k]
    }
}

pub fn init_probes(n: usize, k: usize, seed: u64, init: &ProbeInit) -> Result<ProbingStates> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!("probe count {n} and width {k} must be >= 1")));
    }
    match init {
        ProbeInit::StandardNormal => ProbingStates::new(standard_normal(&[n, k], seed)),
        ProbeInit::FromStates(pool) => {
            if pool.is_empty() {
                return Err(Error::InvalidArgument("empty state pool for probes".into()));
            }
            let mut rng = rng_from_seed(seed);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| pool.choose(&mut rng).expect("non-empty").clone())
                .collect();
            let p = ProbingStates::from_rows(&rows)?;
            if p.width() != k {
                return Err(shape_err(format!("state pool width {}, expected {k}", p.width())));
            }
            Ok(p)
        }
    }
}

/// Policy outputs on every probing state, concatenated in probe order.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint(pub Vec<f64>);

impl Fingerprint {
    /// The output block belonging to probe `i`.
    pub fn block(&self, i: usize, width: usize) -> &[f64] {
        &self.0[i * width..(i + 1) * width]
    }
}

pub fn fingerprint(policy: &MlpPolicy, probes: &ProbingStates) -> Result<Fingerprint> {
    if probes.width() != policy.arch.input {
        return Err(shape_err(format!(
            "probes of width {}, policy expects {}",
            probes.width(),
            policy.arch.input
        )));
    }
    let out = forward_rows(&policy.params, &policy.arch, probes.tensor().data(), probes.count());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fingerprint".into()));
    }
    Ok(Fingerprint(out))
}

/// Records a fingerprint on the graph as a `[1, n * outputs]` row, so that
/// gradients flow into both `theta` and `probes`.
pub fn fingerprint_graph(g: &mut Graph, theta: NodeId, arch: &MlpArch, probes: NodeId) -> Result<NodeId> {
    let (n, k) = g.value(probes).as_matrix_dims()?;
    if k != arch.input {
        return Err(shape_err(format!("probes of width {k}, policy expects {}", arch.input)));
    }
    let out = forward_mlp_graph(g, theta, arch, probes)?;
    g.reshape(out, &[1, n * arch.output])
}
