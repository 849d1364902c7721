//! Adversarial convolutional filter attacks against toy deepfake detectors.
//!
//! The pipeline: generate a synthetic face corpus ([`data`]), train small
//! convolutional detectors ([`detector`]), optimize per-attack LTI filters
//! that push spoof scores toward the bona fide class ([`attack`]), measure
//! the damage as EER degradation ([`eval`]), and visualize where the
//! detectors look ([`explain`]). [`numcore`] is the shared numeric
//! substrate. Everything is deterministic given seeds.

pub mod attack;
pub mod data;
pub mod detector;
pub mod eval;
pub mod explain;
pub mod numcore;
