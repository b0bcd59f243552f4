//! Experiment configuration: named profiles plus `key = value` overrides.
//!
//! The text format is one `key = value` per line; blank lines and lines
//! starting with `#` are ignored. A `profile` key, if present, must come
//! first and resets every other key to that profile's defaults. Lists are
//! written `[30, 20]` (or `[]`), booleans `true`/`false`, and an absent
//! return limit or patience is written `none`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::policy::DEFAULT_TEMPERATURE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Polytope,
    CartpoleLinear,
    CartpoleMlp,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Polytope => "polytope",
            Profile::CartpoleLinear => "cartpole-linear",
            Profile::CartpoleMlp => "cartpole-mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "polytope" => Ok(Profile::Polytope),
            "cartpole-linear" => Ok(Profile::CartpoleLinear),
            "cartpole-mlp" => Ok(Profile::CartpoleMlp),
            other => Err(Error::InvalidArgument(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Fingerprint,
    Flatten,
}

impl InputKind {
    pub fn name(self) -> &'static str {
        match self {
            InputKind::Fingerprint => "fingerprint",
            InputKind::Flatten => "flatten",
        }
    }
}

/// Every hyperparameter of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    // policies
    pub policy_hidden: Vec<usize>,
    pub temperature: f64,
    pub max_steps: usize,
    // dataset
    pub policies: usize,
    pub returns_per_policy: usize,
    pub return_limit: Option<f64>,
    pub bins: usize,
    pub gamma: f64,
    // network
    pub input: InputKind,
    pub pvn_hidden: Vec<usize>,
    pub probes: usize,
    pub train_probes: bool,
    pub random_probes: bool,
    pub batch_size: usize,
    pub pvn_lr: f64,
    pub pvn_optimizer: OptimizerKind,
    pub train_steps: usize,
    pub test_fraction: f64,
    pub eval_every: usize,
    // ascent
    pub ascent_lr: f64,
    pub ascent_optimizer: OptimizerKind,
    pub ascent_steps: usize,
    pub ascent_restarts: usize,
    pub ascent_eval_rollouts: usize,
    pub ascent_patience: Option<usize>,
    pub final_eval_rollouts: usize,
    pub polytope_start: Vec<f64>,
    pub field_resolution: usize,
    // reporting
    pub svg: bool,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let cartpole = Self {
            profile,
            seed: 0,
            policy_hidden: vec![],
            temperature: DEFAULT_TEMPERATURE,
            max_steps: 100,
            policies: 1000,
            returns_per_policy: 100,
            return_limit: Some(30.0),
            bins: 41,
            gamma: 1.0,
            input: InputKind::Fingerprint,
            pvn_hidden: vec![80],
            probes: 20,
            train_probes: true,
            random_probes: true,
            batch_size: 32,
            pvn_lr: 0.003,
            pvn_optimizer: OptimizerKind::Adam,
            train_steps: 3000,
            test_fraction: 0.1,
            eval_every: 100,
            ascent_lr: 0.001,
            ascent_optimizer: OptimizerKind::Adam,
            ascent_steps: 100,
            ascent_restarts: 5,
            ascent_eval_rollouts: 1,
            ascent_patience: None,
            final_eval_rollouts: 200,
            polytope_start: vec![0.5, 0.0],
            field_resolution: 11,
            svg: false,
        };
        match profile {
            Profile::CartpoleLinear => cartpole,
            Profile::CartpoleMlp => Self { policy_hidden: vec![30], ascent_steps: 400, ..cartpole },
            Profile::Polytope => Self {
                policies: 20,
                returns_per_policy: 1,
                return_limit: None,
                gamma: 0.8,
                pvn_hidden: vec![50],
                pvn_lr: 0.01,
                pvn_optimizer: OptimizerKind::Rmsprop,
                train_steps: 20000,
                test_fraction: 0.5,
                eval_every: 500,
                ascent_lr: 0.1,
                ascent_optimizer: OptimizerKind::Sgd,
                ascent_steps: 100,
                ascent_restarts: 1,
                ..cartpole
            },
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::InvalidArgument(format!("{key}: expected {what}, got {value:?}"));
        let uint = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let pos = || uint().and_then(|v| if v >= 1 { Ok(v) } else { Err(bad("an integer >= 1")) });
        let real = || value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("a finite number"));
        let positive = || real().and_then(|v| if v > 0.0 { Ok(v) } else { Err(bad("a positive number")) });
        let boolean = || value.parse::<bool>().map_err(|_| bad("true or false"));
        let optimizer = || value.parse::<OptimizerKind>().map_err(|_| bad("sgd, adam or rmsprop"));
        let list = || -> Result<Vec<usize>> {
            let inner = value.strip_prefix('[').and_then(|v| v.strip_suffix(']')).ok_or_else(|| bad("a list like [30]"))?;
            inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| bad("positive integers")))
                .collect()
        };
        match key {
            "profile" => *self = Self { seed: self.seed, ..Self::profile(Profile::parse(value)?) },
            "seed" => self.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
            "policy_hidden" => self.policy_hidden = list()?,
            "temperature" => self.temperature = positive()?,
            "max_steps" => self.max_steps = pos()?,
            "policies" => self.policies = pos()?,
            "returns_per_policy" => self.returns_per_policy = pos()?,
            "return_limit" => {
                self.return_limit = if value == "none" { None } else { Some(real()?) };
            }
            "bins" => self.bins = pos()?,
            "gamma" => {
                let g = real()?;
                if !(0.0..=1.0).contains(&g) {
                    return Err(bad("a discount in [0, 1]"));
                }
                self.gamma = g;
            }
            "input" => {
                self.input = match value {
                    "fingerprint" => InputKind::Fingerprint,
                    "flatten" => InputKind::Flatten,
                    _ => return Err(bad("fingerprint or flatten")),
                }
            }
            "pvn_hidden" => self.pvn_hidden = list()?,
            "probes" => self.probes = pos()?,
            "train_probes" => self.train_probes = boolean()?,
            "random_probes" => self.random_probes = boolean()?,
            "batch_size" => self.batch_size = pos()?,
            "pvn_lr" => self.pvn_lr = positive()?,
            "pvn_optimizer" => self.pvn_optimizer = optimizer()?,
            "train_steps" => self.train_steps = uint()?,
            "test_fraction" => {
                let f = real()?;
                if !(0.0..1.0).contains(&f) {
                    return Err(bad("a fraction in [0, 1)"));
                }
                self.test_fraction = f;
            }
            "eval_every" => self.eval_every = uint()?,
            "ascent_lr" => self.ascent_lr = positive()?,
            "ascent_optimizer" => self.ascent_optimizer = optimizer()?,
            "ascent_steps" => self.ascent_steps = uint()?,
            "ascent_restarts" => self.ascent_restarts = pos()?,
            "ascent_eval_rollouts" => self.ascent_eval_rollouts = pos()?,
            "ascent_patience" => {
                self.ascent_patience = if value == "none" { None } else { Some(pos()?) };
            }
            "final_eval_rollouts" => self.final_eval_rollouts = pos()?,
            "polytope_start" => {
                let inner = value.strip_prefix('[').and_then(|v| v.strip_suffix(']')).ok_or_else(|| bad("a list like [0.5, 0]"))?;
                let start: Vec<f64> = inner
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v)))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("two probabilities"))?;
                if start.len() != 2 {
                    return Err(bad("two probabilities"));
                }
                self.polytope_start = start;
            }
            "field_resolution" => self.field_resolution = pos()?,
            "svg" => self.svg = boolean()?,
            _ => return Err(Error::InvalidArgument(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Parses a whole file, starting from `default` unless it sets `profile`.
    pub fn parse(text: &str, default: Profile) -> Result<Self> {
        let mut c = Self::profile(default);
        c.apply_text(text)?;
        Ok(c)
    }

    /// The effective configuration as text; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| format!("[{}]", v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "));
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("profile", self.profile.name().into());
        kv("seed", self.seed.to_string());
        kv("policy_hidden", list(&self.policy_hidden));
        kv("temperature", self.temperature.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("policies", self.policies.to_string());
        kv("returns_per_policy", self.returns_per_policy.to_string());
        kv("return_limit", opt(self.return_limit.map(|v| v.to_string())));
        kv("bins", self.bins.to_string());
        kv("gamma", self.gamma.to_string());
        kv("input", self.input.name().into());
        kv("pvn_hidden", list(&self.pvn_hidden));
        kv("probes", self.probes.to_string());
        kv("train_probes", self.train_probes.to_string());
        kv("random_probes", self.random_probes.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("pvn_lr", self.pvn_lr.to_string());
        kv("pvn_optimizer", self.pvn_optimizer.to_string());
        kv("train_steps", self.train_steps.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("ascent_lr", self.ascent_lr.to_string());
        kv("ascent_optimizer", self.ascent_optimizer.to_string());
        kv("ascent_steps", self.ascent_steps.to_string());
        kv("ascent_restarts", self.ascent_restarts.to_string());
        kv("ascent_eval_rollouts", self.ascent_eval_rollouts.to_string());
        kv("ascent_patience", opt(self.ascent_patience.map(|v| v.to_string())));
        kv("final_eval_rollouts", self.final_eval_rollouts.to_string());
        kv(
            "polytope_start",
            format!("[{}]", self.polytope_start.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")),
        );
        kv("field_resolution", self.field_resolution.to_string());
        kv("svg", self.svg.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults() {
        let p = ExperimentConfig::profile(Profile::Polytope);
        assert_eq!((p.pvn_hidden.clone(), p.pvn_lr, p.pvn_optimizer, p.train_steps), (vec![50], 0.01, OptimizerKind::Rmsprop, 20000));
        assert_eq!((p.gamma, p.policies, p.ascent_lr, p.ascent_optimizer, p.ascent_steps), (0.8, 20, 0.1, OptimizerKind::Sgd, 100));
        let l = ExperimentConfig::profile(Profile::CartpoleLinear);
        assert_eq!((l.policies, l.returns_per_policy, l.bins, l.return_limit), (1000, 100, 41, Some(30.0)));
        assert_eq!((l.pvn_hidden.clone(), l.pvn_lr, l.train_steps, l.batch_size, l.temperature), (vec![80], 0.003, 3000, 32, 3.0));
        assert_eq!((l.ascent_lr, l.ascent_steps, l.ascent_restarts), (0.001, 100, 5));
        let m = ExperimentConfig::profile(Profile::CartpoleMlp);
        assert_eq!((m.policy_hidden.clone(), m.probes, m.ascent_steps, m.train_probes), (vec![30], 20, 400, true));
    }

    #[test]
    fn text_round_trip_is_idempotent() {
        for profile in [Profile::Polytope, Profile::CartpoleLinear, Profile::CartpoleMlp] {
            let mut c = ExperimentConfig::profile(profile);
            c.set("seed", "17").unwrap();
            c.set("return_limit", "none").unwrap();
            c.set("policy_hidden", "[30, 20]").unwrap();
            let text = c.to_text();
            let back = ExperimentConfig::parse(&text, Profile::Polytope).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn profile_line_resets_defaults_but_keeps_seed() {
        let c = ExperimentConfig::parse("seed = 4\nprofile = cartpole-mlp\n# comment\nbins = 21\n", Profile::Polytope).unwrap();
        assert_eq!((c.profile, c.seed, c.bins, c.policy_hidden.clone()), (Profile::CartpoleMlp, 4, 21, vec![30]));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = ExperimentConfig::profile(Profile::CartpoleLinear);
        for (k, v) in [
            ("bins", "0"),
            ("bins", "many"),
            ("gamma", "1.5"),
            ("pvn_optimizer", "lbfgs"),
            ("policy_hidden", "30"),
            ("pvn_hidden", "[0]"),
            ("pvn_lr", "-1"),
            ("polytope_start", "[0.5]"),
            ("nonsense", "1"),
        ] {
            assert!(c.set(k, v).is_err(), "{k} = {v}");
        }
        assert!(ExperimentConfig::parse("bins 41", Profile::Polytope).is_err());
    }
}
