//! Vision-based lane keeping and lane changing with a cognitive-map
//! representation and a recurrent steering controller.
//!
//! Pipeline per tick: three-camera perception ([`percept`]) over flat-ground
//! geometry ([`camgeom`]), intention and map assembly ([`cogmap`]), the
//! lane-change state machine ([`planner`]), then a steering controller, either
//! the analytic [`teacher`] or the learned network in [`neuro`]. [`simworld`]
//! closes the loop and [`evalkit`] scores the results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camgeom;
pub mod cogmap;
pub mod evalkit;
pub mod neuro;
pub mod percept;
pub mod planner;
pub mod simworld;
pub mod teacher;
