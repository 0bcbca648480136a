//! Dynamic device models sharing a single network interface.
//!
//! Every device is seen by the network as a Norton equivalent: a current
//! source that depends only on the device states plus a constant shunt
//! admittance. With constant-impedance loads this keeps the network
//! equations linear in the bus voltages.

pub mod dfig;
pub mod droop;
pub mod mppt;
pub mod source;
pub mod syncgen;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dfig::{ControlMode, Dfig, DfigParams, FrequencySource};
pub use droop::{frequency_support_reference, rocof_estimate, DroopParams, WashoutFilter};
pub use mppt::{MpptCurve, MpptPoint};
pub use source::InfiniteSource;
pub use syncgen::{SyncGen, SyncGenParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    Synchronous,
    ConverterBased,
    /// Stiff grid equivalents used in test harnesses.
    Source,
}

/// Interface of a dynamic device connected to one network bus.
///
/// All quantities are per-unit on the device base; currents are phasors in
/// the synchronously rotating network frame.
pub trait DeviceModel: Send + Sync {
    fn class(&self) -> DeviceClass;

    fn base_mva(&self) -> f64;

    fn state_names(&self) -> Vec<&'static str>;

    fn n_states(&self) -> usize {
        self.state_names().len()
    }

    /// Constant Norton admittance the device adds at its bus.
    fn shunt_admittance(&self) -> Complex64;

    /// Norton source current as a function of the device states.
    fn source_current(&self, x: &[f64]) -> Complex64;

    /// Time derivatives of the device states for terminal voltage `v`.
    fn derivatives(&self, x: &[f64], v: Complex64, dx: &mut [f64]) -> Result<()>;

    /// Current injected into the network.
    fn injected_current(&self, x: &[f64], v: Complex64) -> Complex64 {
        self.source_current(x) - self.shunt_admittance() * v
    }

    fn active_power(&self, x: &[f64], v: Complex64) -> f64 {
        (v * self.injected_current(x, v).conj()).re
    }

    /// Rotor speed in per-unit, when the device has one.
    fn rotor_speed(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Frequency deviation seen by the device's own measurement, if any.
    fn measured_frequency(&self, _x: &[f64], _v: Complex64) -> Option<f64> {
        None
    }

    /// Non-fatal operating-limit violations at state `x`.
    fn limit_warnings(&self, _x: &[f64]) -> Vec<String> {
        Vec::new()
    }
}

pub(crate) fn check_finite(what: &str, values: &[f64], v: Complex64) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) && v.re.is_finite() && v.im.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// First-order lead-lag `(1 + s t_lead) / (1 + s t_lag)` output for state `z`.
pub(crate) fn lead_lag(input: f64, z: f64, t_lead: f64, t_lag: f64) -> (f64, f64) {
    let out = z + t_lead / t_lag * (input - z);
    let dz = (input - z) / t_lag;
    (out, dz)
}

/// Wraps an angle to (-pi, pi].
pub(crate) fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}
