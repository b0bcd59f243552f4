//! Datasets of `(policy, sampled returns)` pairs and return histograms.
//!
//! Seeds: policy `i` is initialized from `derive_path(master, [POLICY_INIT, i])`
//! and its rollout `b` runs with `derive_path(master, [ROLLOUT, i, b])`.
//! Changing `K` or `B` therefore never changes the records that both runs share.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mlp::MlpArch;
use crate::policy::MlpPolicy;
use crate::rng::{derive_path, rng_from_seed, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub policy: MlpPolicy,
    pub returns: Vec<f64>,
    pub mean_return: f64,
}

impl PolicyRecord {
    pub fn new(policy: MlpPolicy, returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::InvalidArgument("a policy record needs at least one return".into()));
        }
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        Ok(Self { policy, returns, mean_return })
    }
}

/// Equal-width bins over `[g_min, g_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub bins: usize,
    pub g_min: f64,
    pub g_max: f64,
}

impl BinSpec {
    pub fn new(bins: usize, g_min: f64, g_max: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("bin count must be >= 1".into()));
        }
        if !g_min.is_finite() || !g_max.is_finite() || g_max <= g_min {
            return Err(Error::InvalidArgument(format!("bin range [{g_min}, {g_max}] is empty")));
        }
        Ok(Self { bins, g_min, g_max })
    }

    pub fn width(&self) -> f64 {
        (self.g_max - self.g_min) / self.bins as f64
    }

    /// Bin `i` covers `[g_min + i h, g_min + (i + 1) h)`; the last bin is
    /// closed above and out-of-range values clamp to the edge bins.
    pub fn index(&self, g: f64) -> usize {
        let raw = ((g - self.g_min) / self.width()).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.bins - 1)
        }
    }

    pub fn midpoints(&self) -> Vec<f64> {
        let h = self.width();
        (0..self.bins).map(|i| self.g_min + h / 2.0 + i as f64 * h).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnHistogram {
    pub spec: BinSpec,
    pub mass: Vec<f64>,
}

/// Normalized histogram of `returns` over `m` equal bins on `[g_min, g_max]`.
pub fn discretize(returns: &[f64], m: usize, g_min: f64, g_max: f64) -> Result<ReturnHistogram> {
    discretize_with(returns, BinSpec::new(m, g_min, g_max)?)
}

pub fn discretize_with(returns: &[f64], spec: BinSpec) -> Result<ReturnHistogram> {
    if returns.is_empty() {
        return Err(Error::InvalidArgument("cannot discretize an empty list of returns".into()));
    }
    let mut counts = vec![0usize; spec.bins];
    for &g in returns {
        if !g.is_finite() {
            return Err(Error::NonFinite("return".into()));
        }
        counts[spec.index(g)] += 1;
    }
    let total = returns.len() as f64;
    Ok(ReturnHistogram { spec, mass: counts.into_iter().map(|c| c as f64 / total).collect() })
}

/// Generates `k` Glorot-initialized policies of `arch` and `b` returns each.
pub fn collect<E: Environment + ?Sized>(env: &E, arch: &MlpArch, k: usize, b: usize, seed: u64) -> Result<Vec<PolicyRecord>> {
    if k == 0 || b == 0 {
        return Err(Error::InvalidArgument(format!("collect needs K >= 1 and B >= 1, got K={k}, B={b}")));
    }
    if arch.input != env.observation_dim() || arch.output != env.action_count() {
        return Err(Error::Shape(format!(
            "policy {} -> {} on environment with {} observations and {} actions",
            arch.input,
            arch.output,
            env.observation_dim(),
            env.action_count()
        )));
    }
    let one = |i: usize| -> Result<PolicyRecord> {
        let policy = MlpPolicy::glorot(arch.clone(), derive_path(seed, &[streams::POLICY_INIT, i as u64]))?;
        let returns = rollout_returns(env, &policy, derive_path(seed, &[streams::ROLLOUT, i as u64]), b)?;
        PolicyRecord::new(policy, returns)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..k).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..k).map(one).collect()
    }
}

/// `count` episode returns of `policy`, rollout `i` seeded by `derive_seed(base, i)`.
pub fn rollout_returns<E: Environment + ?Sized>(env: &E, policy: &MlpPolicy, base: u64, count: usize) -> Result<Vec<f64>> {
    (0..count)
        .map(|i| env.rollout(policy, crate::rng::derive_seed(base, i as u64)).map(|r| r.episode_return))
        .collect()
}

/// Splits records into those with `mean_return <= limit` (kept for training)
/// and the rest (discarded, kept for reporting).
pub fn filter_by_return(records: Vec<PolicyRecord>, limit: f64) -> (Vec<PolicyRecord>, Vec<PolicyRecord>) {
    records.into_iter().partition(|r| r.mean_return <= limit)
}

/// Smallest and largest sampled return over all records.
pub fn return_range(records: &[PolicyRecord]) -> Result<(f64, f64)> {
    let mut it = records.iter().flat_map(|r| r.returns.iter().copied());
    let first = it.next().ok_or(Error::EmptyDataset)?;
    Ok(it.fold((first, first), |(lo, hi), g| (lo.min(g), hi.max(g))))
}

/// Deterministically shuffles indices and holds out `round(n * test_fraction)`
/// of them. Returns `(train, test)` indices, each sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_test = ((n as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub master_seed: u64,
    /// Producer of the file. A tool tag instead of a timestamp, so that
    /// reruns are byte-identical.
    pub created: String,
}

/// Writes a header line followed by one record per line.
pub fn write_dataset<W: Write>(mut w: W, header: &DatasetHeader, records: &[PolicyRecord]) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<(DatasetHeader, Vec<PolicyRecord>)> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, first) = lines.next().ok_or(Error::EmptyDataset)?;
    let header: DatasetHeader =
        serde_json::from_str(&first?).map_err(|e| Error::Schema(format!("dataset header: {e}")))?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let rec: PolicyRecord =
            serde_json::from_str(&line?).map_err(|e| Error::Schema(format!("dataset line {}: {e}", i + 1)))?;
        let mean = rec.returns.iter().sum::<f64>() / rec.returns.len().max(1) as f64;
        if rec.returns.is_empty() || (mean - rec.mean_return).abs() > 1e-9 {
            return Err(Error::Schema(format!("dataset line {}: mean_return disagrees with returns", i + 1)));
        }
        records.push(rec);
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartpole::CartPole;
    use crate::policy::DEFAULT_TEMPERATURE;
    use proptest::prelude::*;

    #[test]
    fn direct_count() {
        let h = discretize(&[2.0, 2.0, 8.0], 2, 0.0, 10.0).unwrap();
        assert_eq!(h.mass, vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn upper_edge_lands_in_last_bin() {
        let h = discretize(&[10.0, 10.0], 41, 0.0, 10.0).unwrap();
        assert_eq!(h.mass[40], 1.0);
        assert_eq!(h.mass.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn out_of_range_clamps() {
        let h = discretize(&[-5.0, 50.0], 4, 0.0, 10.0).unwrap();
        assert_eq!(h.mass, vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn discretize_errors() {
        assert!(discretize(&[], 3, 0.0, 1.0).is_err());
        assert!(discretize(&[1.0], 0, 0.0, 1.0).is_err());
        assert!(discretize(&[1.0], 3, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn mass_is_conserved(returns in prop::collection::vec(-50.0f64..150.0, 1..200), m in 1usize..60) {
            let h = discretize(&returns, m, 0.0, 100.0).unwrap();
            prop_assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(h.mass.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn affine_maps_leave_mass_unchanged(
            returns in prop::collection::vec(0i32..=100, 1..100),
            m in 1usize..50,
            scale_pow in -3i32..4,
            shift in -64i32..64,
        ) {
            // Power-of-two scales and integer shifts keep the arithmetic exact.
            let scale = 2f64.powi(scale_pow);
            let map = |g: f64| g * scale + shift as f64;
            let g: Vec<f64> = returns.iter().map(|&r| r as f64).collect();
            let mapped: Vec<f64> = g.iter().map(|&r| map(r)).collect();
            let a = discretize(&g, m, 0.0, 100.0).unwrap();
            let b = discretize(&mapped, m, map(0.0), map(100.0)).unwrap();
            prop_assert_eq!(a.mass, b.mass);
        }
    }

    fn small_records() -> Vec<PolicyRecord> {
        let arch = MlpPolicy::softmax_arch(4, &[], 2, DEFAULT_TEMPERATURE);
        collect(&CartPole::new(100), &arch, 12, 5, 99).unwrap()
    }

    #[test]
    fn collect_is_deterministic_and_prefix_stable() {
        let a = small_records();
        assert_eq!(a, small_records());
        assert_eq!(a.len(), 12);
        let arch = MlpPolicy::softmax_arch(4, &[], 2, DEFAULT_TEMPERATURE);
        let fewer = collect(&CartPole::new(100), &arch, 4, 3, 99).unwrap();
        for (x, y) in fewer.iter().zip(&a) {
            assert_eq!(x.policy, y.policy);
            assert_eq!(x.returns[..], y.returns[..3]);
        }
        for r in &a {
            let mean = r.returns.iter().sum::<f64>() / r.returns.len() as f64;
            assert!((mean - r.mean_return).abs() < 1e-9);
        }
        let one = collect(&CartPole::new(100), &arch, 1, 1, 5).unwrap();
        assert_eq!(one, collect(&CartPole::new(100), &arch, 1, 1, 5).unwrap());
    }

    #[test]
    fn collect_rejects_bad_arguments() {
        let arch = MlpPolicy::softmax_arch(4, &[], 2, DEFAULT_TEMPERATURE);
        assert!(collect(&CartPole::new(100), &arch, 0, 5, 1).is_err());
        let wrong = MlpPolicy::softmax_arch(3, &[], 2, DEFAULT_TEMPERATURE);
        assert!(collect(&CartPole::new(100), &wrong, 2, 5, 1).is_err());
    }

    #[test]
    fn filter_partitions() {
        let recs = small_records();
        let (kept, dropped) = filter_by_return(recs.clone(), 20.0);
        assert_eq!(kept.len() + dropped.len(), recs.len());
        assert!(kept.iter().all(|r| r.mean_return <= 20.0));
        assert!(dropped.iter().all(|r| r.mean_return > 20.0));
        let (all, none) = filter_by_return(recs.clone(), f64::INFINITY);
        assert_eq!((all.len(), none.len()), (recs.len(), 0));
        let (empty, _) = filter_by_return(recs, -1.0);
        assert!(empty.is_empty());
    }

    #[test]
    fn jsonl_round_trip_and_schema_errors() {
        let recs = small_records();
        let header = DatasetHeader { env: "cartpole".into(), k: 12, b: 5, master_seed: 99, created: "test".into() };
        let mut buf = Vec::new();
        write_dataset(&mut buf, &header, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with(r#"{"env":"cartpole","K":12,"B":5,"master_seed":99,"created":"test"}"#));
        let (h, back) = read_dataset(&buf[..]).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, recs);

        let tampered = text.replacen("\"mean_return\":", "\"mean_return\":1", 1);
        assert!(matches!(read_dataset(tampered.as_bytes()), Err(Error::Schema(_))));
        assert!(matches!(read_dataset(&b""[..]), Err(Error::EmptyDataset)));
        assert!(matches!(read_dataset(&b"{\"nope\":1}\n"[..]), Err(Error::Schema(_))));
    }

    #[test]
    fn split_is_a_partition() {
        let (train, test) = split_indices(50, 0.1, 3);
        assert_eq!((train.len(), test.len()), (45, 5));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(50, 0.1, 3), (train, test));
    }
}
