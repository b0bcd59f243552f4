//! Policy evaluation networks.
//!
//! A policy evaluation network (PVN) predicts the distribution of returns of
//! a policy from a representation of the policy itself: its flattened
//! parameters, or a fingerprint made of its outputs on learned probing
//! states. Once trained on a dataset of random policies it is a
//! differentiable surrogate of the performance measure, and gradient ascent
//! through it improves policies without further environment interaction.
//!
//! Module map:
//! - [`tensor`], [`graph`], [`mlp`], [`optim`], [`init`]: dense math and
//!   reverse-mode differentiation.
//! - [`mdp`]: exact evaluation of small tabular MDPs.
//! - [`cartpole`]: cart-pole dynamics and rollouts.
//! - [`policy`]: policy networks, flattening and fingerprints.
//! - [`dataset`]: policy datasets and return histograms.
//! - [`pvn`]: the evaluation network and its training loop.
//! - [`ascent`]: gradient ascent through a trained network.
//! - [`config`]: experiment configuration profiles.

pub mod ascent;
pub mod cartpole;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod mdp;
pub mod mlp;
pub mod optim;
pub mod policy;
pub mod pvn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
