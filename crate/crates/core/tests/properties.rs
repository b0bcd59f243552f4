//! Structural properties of the tabular solver, fingerprints and rollouts,
//! checked against independent constructions.

use pvn_core::cartpole::CartPole;
use pvn_core::dataset::{collect, rollout_returns};
use pvn_core::mdp::{exact_values, performance, random_instance, value_iteration, TabularEnv, TabularMdp, TabularPolicy};
use pvn_core::mlp::{forward_mlp, MlpArch, OutputHead};
use pvn_core::policy::{fingerprint, flatten, init_probes, MlpPolicy, ProbeInit, ProbingStates};
use pvn_core::rng::{rng_from_seed, ChaCha8Rng};
use pvn_core::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

#[test]
fn exact_values_agree_with_value_iteration() {
    for trial in 0..50 {
        let (mdp, pi) = random_instance(5, 5, trial).unwrap();
        let exact = exact_values(&mdp, &pi).unwrap();
        let iterated = value_iteration(&mdp, &pi, 1e-10).unwrap();
        for (a, b) in exact.iter().zip(&iterated) {
            assert!((a - b).abs() < 1e-8, "{exact:?} vs {iterated:?}");
        }
    }
}

#[test]
fn performance_is_invariant_under_state_relabeling() {
    let mut rng = rng_from_seed(5);
    for trial in 0..50 {
        let (mdp, pi) = random_instance(5, 5, 1000 + trial).unwrap();
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let mut sigma: Vec<usize> = (0..s).collect();
        sigma.shuffle(&mut rng);
        let mut transitions = vec![0.0; s * a * s];
        let mut rewards = vec![0.0; s * a];
        let mut initial = vec![0.0; s];
        let mut probs = vec![0.0; s * a];
        for x in 0..s {
            initial[sigma[x]] = mdp.initial()[x];
            for u in 0..a {
                rewards[sigma[x] * a + u] = mdp.reward(x, u);
                probs[sigma[x] * a + u] = pi.prob(x, u);
                for (y, p) in mdp.transition_row(x, u).iter().enumerate() {
                    transitions[(sigma[x] * a + u) * s + sigma[y]] = *p;
                }
            }
        }
        let relabeled = TabularMdp::new(s, a, transitions, rewards, mdp.gamma(), initial).unwrap();
        let relabeled_pi = TabularPolicy::new(s, a, probs).unwrap();
        let j = performance(&mdp, &pi).unwrap();
        let j_relabeled = performance(&relabeled, &relabeled_pi).unwrap();
        assert!((j - j_relabeled).abs() < 1e-12, "{j} vs {j_relabeled}");
    }
}

#[test]
fn monte_carlo_returns_converge_to_exact_performance() {
    let mut rng = rng_from_seed(11);
    let s = 3;
    let a = 2;
    let transitions = (0..s * a).flat_map(|_| simplex(&mut rng, s)).collect();
    let rewards = (0..s * a).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mdp = TabularMdp::new(s, a, transitions, rewards, 0.8, simplex(&mut rng, s)).unwrap();
    let policy = MlpPolicy::glorot(MlpPolicy::softmax_arch(s, &[], a, 1.0), 3).unwrap();
    let exact = performance(&mdp, &TabularPolicy::from_mlp(&policy, s).unwrap()).unwrap();

    let env = TabularEnv::new(mdp);
    let returns = rollout_returns(&env, &policy, 99, 100_000).unwrap();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "MC {mean} vs exact {exact}, SE {se}");
}

#[test]
fn fingerprint_is_equivariant_to_probe_order() {
    let policy = MlpPolicy::glorot(MlpPolicy::softmax_arch(4, &[8], 2, 3.0), 21).unwrap();
    let probes = init_probes(12, 4, 8, &ProbeInit::StandardNormal).unwrap();
    let mut order: Vec<usize> = (0..12).collect();
    order.shuffle(&mut rng_from_seed(2));
    let permuted = ProbingStates::from_rows(&order.iter().map(|&i| probes.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let fp = fingerprint(&policy, &probes).unwrap();
    let fp_permuted = fingerprint(&policy, &permuted).unwrap();
    for (j, &i) in order.iter().enumerate() {
        assert_eq!(fp_permuted.block(j, 2), fp.block(i, 2));
    }
}

#[test]
fn linear_fingerprint_equals_first_layer_of_weight_input_network() {
    let k = 4;
    let n = 6;
    let policy = MlpPolicy::glorot(MlpArch::new(k, &[], 1, OutputHead::Linear), 31).unwrap();
    let probes = init_probes(n, k, 32, &ProbeInit::StandardNormal).unwrap();

    // Flattened policy is [w_1..w_k, b]; column i of W is [phi_i, 1].
    let mut layer = vec![0.0; (k + 1) * n + n];
    for i in 0..n {
        for (r, &x) in probes.row(i).iter().enumerate() {
            layer[r * n + i] = x;
        }
        layer[k * n + i] = 1.0;
    }
    let net = MlpArch::new(k + 1, &[], n, OutputHead::Linear);
    let input = Tensor::matrix(1, k + 1, flatten(&policy)).unwrap();
    let pre = forward_mlp(&layer, &net, &input).unwrap();
    let fp = fingerprint(&policy, &probes).unwrap();
    for (a, b) in pre.data().iter().zip(&fp.0) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn collected_returns_do_not_depend_on_thread_count() {
    let env = CartPole::default();
    let arch = MlpPolicy::softmax_arch(4, &[], 2, 3.0);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| collect(&env, &arch, 24, 8, 123).unwrap())
    };
    let single = run(1);
    let many = run(4);
    assert_eq!(single.len(), many.len());
    for (a, b) in single.iter().zip(&many) {
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.policy.params(), b.policy.params());
    }
}
