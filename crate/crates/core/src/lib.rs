//! Trace-driven adaptive-bitrate streaming lab for progressively played
//! neural-video chunks.
//!
//! - [`trace`]: bandwidth traces, preprocessing and corpus splits
//! - [`quality`]: PSNR curves, equivalent bitrate, sparsity and per-chunk QoE
//! - [`env`]: chunk-level session simulator
//! - [`baselines`]: buffer-based, throughput-based and MPC policies
//! - [`nn`], [`sac`]: dense networks and a discrete soft actor-critic agent
//! - [`policy`]: the named policy registry used by evaluation and the CLI
//! - [`eval`]: evaluation reports, threshold sweeps and paired comparisons
//! - [`checks`]: MPC-vs-enumeration and finite-difference gradient suites

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checks;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod quality;
pub mod sac;
pub mod trace;

pub use error::{Error, Result};
