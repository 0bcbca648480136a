//! Small-signal and time-domain analysis of power systems with DFIG wind
//! farms providing droop-based frequency support.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod devices;
pub mod error;
pub mod kundur;
pub mod modal;
pub mod model;
pub mod network;
pub mod powerflow;
pub mod scenario;
pub mod smib;
pub mod system;
pub mod timedomain;

pub use error::{Error, Result};
