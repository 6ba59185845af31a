//! Discrete-time simulator for cooperative multi-user video uplinks.
//!
//! The crate is organized bottom-up:
//!
//! * [`phy`]: fading draws, BEP-constrained rates, per-packet energy.
//! * [`cooperation`]: two-phase decode-and-forward rates and the
//!   RTS/CRS/HTS/CTS relay recruitment protocol.
//! * [`traffic`]: schedulable frame sets, feasible scheduling actions and
//!   buffer dynamics for GOP-structured video.
//! * [`mdp`]: per-user scheduling MDPs solved by value iteration under a
//!   resource price, plus a brute-force oracle with explicit cooperation.
//! * [`pricing`]: subgradient updates of the uniform resource price.
//! * [`sim`]: topology generation, closed-loop episodes, sweeps and output.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cooperation;
pub mod error;
pub mod mdp;
pub mod phy;
pub mod pricing;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};
