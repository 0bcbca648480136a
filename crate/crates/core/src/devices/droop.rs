//! Inertial and primary frequency-support droop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Droop gains acting on frequency deviation (`kp`) and rate of change of
/// frequency (`kin`), both per-unit power per per-unit signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopParams {
    #[serde(default)]
    pub kp: f64,
    #[serde(default)]
    pub kin: f64,
    #[serde(default = "default_rocof_filter")]
    pub rocof_filter_time: f64,
    #[serde(default)]
    pub enabled: bool,
}

fn default_rocof_filter() -> f64 {
    0.05
}

impl Default for DroopParams {
    fn default() -> Self {
        Self {
            kp: 0.0,
            kin: 0.0,
            rocof_filter_time: default_rocof_filter(),
            enabled: false,
        }
    }
}

impl DroopParams {
    pub fn new(kp: f64, kin: f64) -> Self {
        Self {
            kp,
            kin,
            enabled: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.kin >= 0.0) {
            return Err(Error::Validation("droop gains must be non-negative".into()));
        }
        if !(self.rocof_filter_time > 0.0) {
            return Err(Error::Validation("ROCOF filter time must be positive".into()));
        }
        Ok(())
    }
}

/// Active-power reference: MPPT set point plus primary and inertial droop.
pub fn frequency_support_reference(p_opt: f64, delta_f: f64, rocof: f64, droop: &DroopParams) -> f64 {
    if !droop.enabled {
        return p_opt;
    }
    p_opt - droop.kp * delta_f - droop.kin * rocof
}

/// Washout `s / (1 + sT)` in bilinear discrete form.
#[derive(Debug, Clone)]
pub struct WashoutFilter {
    time_constant: f64,
    last_input: Option<f64>,
    output: f64,
}

impl WashoutFilter {
    pub fn new(time_constant: f64) -> Result<Self> {
        if !(time_constant > 0.0) {
            return Err(Error::Validation("washout time constant must be positive".into()));
        }
        Ok(Self {
            time_constant,
            last_input: None,
            output: 0.0,
        })
    }

    pub fn step(&mut self, input: f64, dt: f64) -> f64 {
        if let Some(prev) = self.last_input {
            let t = self.time_constant;
            let a = (2.0 * t - dt) / (2.0 * t + dt);
            let b = 2.0 / (2.0 * t + dt);
            self.output = a * self.output + b * (input - prev);
        }
        self.last_input = Some(input);
        self.output
    }

    pub fn output(&self) -> f64 {
        self.output
    }
}

/// Filtered rate of change of a sampled frequency signal `(time, frequency)`.
///
/// Returns one estimate per sample; the first is zero.
pub fn rocof_estimate(history: &[(f64, f64)], filter_time: f64) -> Result<Vec<f64>> {
    let mut filter = WashoutFilter::new(filter_time)?;
    let mut out = Vec::with_capacity(history.len());
    let mut last_t: Option<f64> = None;
    for &(t, f) in history {
        let dt = match last_t {
            Some(prev) if t > prev => t - prev,
            Some(_) => {
                return Err(Error::Validation(
                    "frequency history must be strictly increasing in time".into(),
                ))
            }
            None => 0.0,
        };
        out.push(filter.step(f, dt));
        last_t = Some(t);
    }
    Ok(out)
}
