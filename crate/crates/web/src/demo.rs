//! Target-independent logic behind the exports.

use pvn_core::ascent::{ascend_exact, grid, gradient_field as field, FieldEvaluator};
use pvn_core::cartpole::CartPole;
use pvn_core::mdp::{exact_values, sample_polytope_dataset, two_state_mdp, TabularPolicy};
use pvn_core::policy::MlpPolicy;
use pvn_core::rng::derive_seed;
use pvn_core::{Error, Result};

pub const MAX_POLICIES: usize = 20_000;
pub const MAX_STEPS: usize = 10_000;
pub const MAX_RESOLUTION: usize = 64;

pub fn sample_polytope(count: usize, seed: u64) -> Result<Vec<f64>> {
    if count > MAX_POLICIES {
        return Err(Error::InvalidArgument(format!("at most {MAX_POLICIES} policies")));
    }
    let points = sample_polytope_dataset(&two_state_mdp(), count, seed)?;
    Ok(points.iter().flat_map(|p| [p.values[0], p.values[1], p.j]).collect())
}

pub fn gradient_field(resolution: usize) -> Result<Vec<f64>> {
    if resolution == 0 || resolution > MAX_RESOLUTION {
        return Err(Error::InvalidArgument(format!("resolution must be in 1..={MAX_RESOLUTION}")));
    }
    let mdp = two_state_mdp();
    let points = field(FieldEvaluator::Exact(&mdp), &grid(resolution, true))?;
    Ok(points.iter().flat_map(|p| [p.x, p.y, p.gx, p.gy]).collect())
}

pub fn ascend(p1: f64, p2: f64, steps: usize, lr: f64) -> Result<Vec<f64>> {
    if steps > MAX_STEPS || !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("need steps <= {MAX_STEPS} and a positive step size")));
    }
    let mdp = two_state_mdp();
    let trace = ascend_exact(&mdp, &[p1, p2], steps, lr)?;
    let mut out = Vec::with_capacity(trace.points.len() * 5);
    for (p, j) in trace.points.iter().zip(&trace.j) {
        let v = exact_values(&mdp, &TabularPolicy::from_first_action_probs(p)?)?;
        out.extend([p[0], p[1], v[0], v[1], *j]);
    }
    Ok(out)
}

pub fn cartpole_episode(seed: u64, temperature: f64) -> Result<Vec<f64>> {
    let arch = MlpPolicy::softmax_arch(4, &[], 2, temperature);
    let policy = MlpPolicy::glorot(arch, derive_seed(seed, 0))?;
    let (_, states) = CartPole::default().trajectory(&policy, derive_seed(seed, 1))?;
    Ok(states.iter().flat_map(|s| [s.x, s.theta]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_have_fixed_record_widths() {
        assert_eq!(sample_polytope(7, 1).unwrap().len(), 21);
        assert_eq!(gradient_field(5).unwrap().len(), 100);
        assert_eq!(ascend(0.5, 0.0, 10, 0.1).unwrap().len(), 55);
        assert_eq!(cartpole_episode(3, 3.0).unwrap().len() % 2, 0);
    }

    #[test]
    fn out_of_range_requests_are_rejected() {
        assert!(sample_polytope(MAX_POLICIES + 1, 0).is_err());
        assert!(gradient_field(0).is_err());
        assert!(ascend(0.5, 0.0, 10, 0.0).is_err());
        assert!(ascend(1.5, 0.0, 10, 0.1).is_err());
        assert!(cartpole_episode(0, -1.0).is_err());
    }
}
