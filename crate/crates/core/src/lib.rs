//! Flash-crowd detection on Web access traces and cloud resource planning
//! for the detected events.
//!
//! The crate is organised bottom-up:
//!
//! - [`trace`]: access-log parsing and the binned trace model.
//! - [`generator`]: synthetic flash-crowd traces from time-varying beta draws.
//! - [`detector`]: total-correlation detector and event flagging.
//! - [`fchp`]: the resource-planning integer model, its checker, LP export and
//!   an exhaustive oracle for tiny instances.
//! - [`ils`]: iterated local search heuristic for the planning model.
//! - [`baseline`]: threshold autoscaling with a load balancer.
//! - [`sim`]: replay harness comparing the two policies on a trace.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline;
pub mod detector;
pub mod fchp;
pub mod generator;
pub mod ils;
pub mod sim;
pub mod trace;
