//! Finite-difference verification of the reverse-mode gradients.
//!
//! [`check`] compares the tape gradient of a scalar function with central
//! differences; [`run_suite`] applies it to randomized instances of every
//! graph operation and of the compositions the training and ascent loops
//! differentiate through.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::mlp::{forward_mlp_graph, Activation, MlpArch, OutputHead};
use crate::policy::fingerprint_graph;
use crate::pvn::PROB_FLOOR;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`]. Central differences carry a
/// rounding error of roughly `1e-16 * |f| / FD_STEP`, which swamps the
/// relative error of components that are themselves near zero.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<(Graph, Vec<NodeId>, NodeId)>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = f(&mut g, &ids)?;
    Ok((g, ids, root))
}

/// Largest relative error between the tape gradient of the scalar `f` and
/// central differences, over every coordinate of every input.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let (g, ids, root) = evaluate(inputs, &f)?;
    let grads = g.backward(root)?;
    let mut worst = 0.0f64;
    for (which, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        for i in 0..inputs[which].len() {
            let at = |delta: f64| -> Result<f64> {
                let mut shifted = inputs.to_vec();
                shifted[which].data_mut()[i] += delta;
                let (g, _, root) = evaluate(&shifted, &f)?;
                Ok(g.value(root).data()[0])
            };
            let numeric = (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite samples")
}

fn simplex_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        // Some entries exactly zero, to exercise the 0 log 0 convention.
        let raw: Vec<f64> = (0..cols).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() + 0.05 }).collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            data.extend(std::iter::repeat_n(1.0 / cols as f64, cols));
        } else {
            data.extend(raw.iter().map(|v| v / total));
        }
    }
    Tensor::new(vec![rows, cols], data).expect("finite")
}

/// Contracts any node with fixed random weights into a scalar, so every
/// output component reaches the gradient.
fn contract(g: &mut Graph, node: NodeId, weights: &Tensor) -> Result<NodeId> {
    let w = g.leaf(weights.clone());
    let prod = g.mul(node, w)?;
    g.sum(prod)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=4))
}

fn random_arch(rng: &mut ChaCha8Rng, input: usize, output: usize, softmax: bool) -> MlpArch {
    let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=5)).collect();
    let activation = if rng.random::<bool>() { Activation::Relu } else { Activation::Tanh };
    let head = if softmax { OutputHead::Softmax { temperature: rng.random_range(0.5..4.0) } } else { OutputHead::Linear };
    MlpArch { input, hidden, output, activation, head }
}

type Trial = fn(&mut ChaCha8Rng) -> Result<f64>;

fn unary(rng: &mut ChaCha8Rng, op: fn(&mut Graph, NodeId) -> Result<NodeId>) -> Result<f64> {
    let (r, c, _) = dims(rng);
    let x = normal(rng, &[r, c]);
    let w = normal(rng, &[r, c]);
    check(&[x], |g, ids| {
        let y = op(g, ids[0])?;
        contract(g, y, &w)
    })
}

fn binary(rng: &mut ChaCha8Rng, op: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>) -> Result<f64> {
    let (r, c, _) = dims(rng);
    let a = normal(rng, &[r, c]);
    let b = normal(rng, &[r, c]);
    let w = normal(rng, &[r, c]);
    check(&[a, b], |g, ids| {
        let y = op(g, ids[0], ids[1])?;
        contract(g, y, &w)
    })
}

const TRIALS: &[(&str, Trial)] = &[
    ("matmul", |rng| {
        let (n, k, m) = dims(rng);
        let (a, b, w) = (normal(rng, &[n, k]), normal(rng, &[k, m]), normal(rng, &[n, m]));
        check(&[a, b], |g, ids| {
            let y = g.matmul(ids[0], ids[1])?;
            contract(g, y, &w)
        })
    }),
    ("add_bias", |rng| {
        let (r, c, _) = dims(rng);
        let (a, b, w) = (normal(rng, &[r, c]), normal(rng, &[c]), normal(rng, &[r, c]));
        check(&[a, b], |g, ids| {
            let y = g.add_bias(ids[0], ids[1])?;
            contract(g, y, &w)
        })
    }),
    ("add", |rng| binary(rng, Graph::add)),
    ("sub", |rng| binary(rng, Graph::sub)),
    ("mul", |rng| binary(rng, Graph::mul)),
    ("scale", |rng| {
        let factor = StandardNormal.sample(rng);
        let (r, c, _) = dims(rng);
        let (x, w) = (normal(rng, &[r, c]), normal(rng, &[r, c]));
        check(&[x], |g, ids| {
            let y = g.scale(ids[0], factor)?;
            contract(g, y, &w)
        })
    }),
    ("relu", |rng| unary(rng, Graph::relu)),
    ("tanh", |rng| unary(rng, Graph::tanh)),
    ("square", |rng| unary(rng, Graph::square)),
    ("transpose", |rng| {
        let (r, c, _) = dims(rng);
        let (x, w) = (normal(rng, &[r, c]), normal(rng, &[c, r]));
        check(&[x], |g, ids| {
            let y = g.transpose(ids[0])?;
            contract(g, y, &w)
        })
    }),
    ("reshape", |rng| {
        let (r, c, _) = dims(rng);
        let (x, w) = (normal(rng, &[r, c]), normal(rng, &[r * c]));
        check(&[x], |g, ids| {
            let y = g.reshape(ids[0], &[r * c])?;
            contract(g, y, &w)
        })
    }),
    ("slice", |rng| {
        let (r, c, _) = dims(rng);
        let len = rng.random_range(1..=r * c);
        let offset = rng.random_range(0..=r * c - len);
        let (x, w) = (normal(rng, &[r, c]), normal(rng, &[len]));
        check(&[x], |g, ids| {
            let y = g.slice(ids[0], offset, &[len])?;
            contract(g, y, &w)
        })
    }),
    ("concat_rows", |rng| {
        let (r1, c, r2) = dims(rng);
        let (a, b, w) = (normal(rng, &[r1, c]), normal(rng, &[r2, c]), normal(rng, &[r1 + r2, c]));
        check(&[a, b], |g, ids| {
            let y = g.concat_rows(&[ids[0], ids[1]])?;
            contract(g, y, &w)
        })
    }),
    ("softmax_rows", |rng| {
        let t = rng.random_range(0.5..4.0);
        let (r, c, _) = dims(rng);
        let (x, w) = (normal(rng, &[r, c]), normal(rng, &[r, c]));
        check(&[x], |g, ids| {
            let y = g.softmax_rows(ids[0], t)?;
            contract(g, y, &w)
        })
    }),
    ("sum", |rng| {
        let (r, c, _) = dims(rng);
        check(&[normal(rng, &[r, c])], |g, ids| g.sum(ids[0]))
    }),
    ("mean", |rng| {
        let (r, c, _) = dims(rng);
        check(&[normal(rng, &[r, c])], |g, ids| g.mean(ids[0]))
    }),
    ("kl_rows", |rng| {
        let (r, c, _) = dims(rng);
        let target = simplex_rows(rng, r, c);
        check(&[normal(rng, &[r, c])], |g, ids| {
            let p = g.softmax_rows(ids[0], 1.0)?;
            g.kl_rows(p, target.clone(), PROB_FLOOR)
        })
    }),
    ("mlp_forward", |rng| {
        let (n, k, m) = dims(rng);
        let softmax = rng.random::<bool>();
        let arch = random_arch(rng, k, m, softmax);
        let (params, x, w) = (normal(rng, &[arch.param_count()]), normal(rng, &[n, k]), normal(rng, &[n, m]));
        check(&[params, x], |g, ids| {
            let y = forward_mlp_graph(g, ids[0], &arch, ids[1])?;
            contract(g, y, &w)
        })
    }),
    ("fingerprint", |rng| {
        let (n, k, a) = dims(rng);
        let arch = random_arch(rng, k, a + 1, true);
        let (theta, probes, w) = (normal(rng, &[arch.param_count()]), normal(rng, &[n, k]), normal(rng, &[1, n * (a + 1)]));
        check(&[theta, probes], |g, ids| {
            let y = fingerprint_graph(g, ids[0], &arch, ids[1])?;
            contract(g, y, &w)
        })
    }),
    ("kl_of_prediction", |rng| {
        // A batch of policies through the fingerprint into a softmax network
        // and the KL loss; gradients for network weights, policies and probes.
        let (n, k, batch) = dims(rng);
        let policy = random_arch(rng, k, 2, true);
        let bins = rng.random_range(2..=6);
        let net = MlpArch {
            input: 2 * n,
            hidden: vec![rng.random_range(2..=5)],
            output: bins,
            activation: Activation::Relu,
            head: OutputHead::Softmax { temperature: 1.0 },
        };
        let target = simplex_rows(rng, batch, bins);
        let mut inputs = vec![normal(rng, &[net.param_count()]), normal(rng, &[n, k])];
        inputs.extend((0..batch).map(|_| normal(rng, &[policy.param_count()])));
        check(&inputs, |g, ids| {
            let rows = ids[2..].iter().map(|&t| fingerprint_graph(g, t, &policy, ids[1])).collect::<Result<Vec<_>>>()?;
            let x = g.concat_rows(&rows)?;
            let out = forward_mlp_graph(g, ids[0], &net, x)?;
            g.kl_rows(out, target.clone(), PROB_FLOOR)
        })
    }),
];

/// Runs `trials` randomized instances of every check and reports the worst
/// relative error of each.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial".into()));
    }
    TRIALS
        .iter()
        .enumerate()
        .map(|(i, &(name, trial))| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let mut worst = 0.0f64;
            for _ in 0..trials {
                worst = worst.max(trial(&mut rng)?);
            }
            Ok(CheckResult { name, trials, max_rel_error: worst })
        })
        .collect()
}
