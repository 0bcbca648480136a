//! Aggregated DFIG wind farm for stability studies.
//!
//! Stator transients are neglected and the rotor-side converter is a
//! current source whose active and reactive channels follow their commands
//! through first-order lags, oriented by a PLL. The active command comes
//! from the MPPT characteristic plus the frequency-support droop; the
//! reactive command from a PI loop on terminal voltage or on reactive power.
//!
//! States: rotor speed, active current, reactive current, outer-loop PI
//! integrator, PLL angle, PLL integrator, frequency-measurement state,
//! ROCOF washout state, power order.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::droop::{frequency_support_reference, DroopParams};
use super::mppt::MpptCurve;
use super::{check_finite, wrap_angle, DeviceClass, DeviceModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Voltage,
    ReactivePower,
}

impl ControlMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlMode::Voltage => "voltage",
            ControlMode::ReactivePower => "reactive_power",
        }
    }
}

/// Signal used as the frequency deviation input of the droop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FrequencySource {
    /// Frequency estimated by the converter PLL, through a first-order filter.
    Pll { filter_time: f64 },
    /// Washout `s / (1 + sT)` applied to the terminal voltage angle.
    AngleWashout { time_constant: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InductionMachineParams {
    pub rs: f64,
    pub xls: f64,
    pub rr: f64,
    pub xlr: f64,
    pub xm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterParams {
    /// Lag on the active power order ahead of the current command (s).
    pub t_power: f64,
    /// Active current loop time constant (s).
    pub t_active: f64,
    /// Reactive current loop time constant (s).
    pub t_reactive: f64,
    pub i_max: f64,
    /// Voltage floor used when converting the power reference to a current command.
    pub v_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfigParams {
    pub base_mva: f64,
    pub h_turbine: f64,
    pub machine: InductionMachineParams,
    pub converter: ConverterParams,
    pub pll: PiGains,
    pub control_mode: ControlMode,
    pub voltage_control: PiGains,
    pub reactive_control: PiGains,
    pub droop: DroopParams,
    pub frequency_source: FrequencySource,
    pub mppt: MpptCurve,
    /// Operating point as a fraction of rated power; fixes the wind speed.
    pub dispatch: f64,
    pub pitch_angle_deg: f64,
    pub speed_min: f64,
    pub speed_max: f64,
}

impl DfigParams {
    pub fn with_base(base_mva: f64) -> Self {
        Self {
            base_mva,
            h_turbine: 4.0,
            machine: InductionMachineParams {
                rs: 0.01,
                xls: 0.1,
                rr: 0.01,
                xlr: 0.08,
                xm: 3.0,
            },
            converter: ConverterParams {
                t_power: 0.1,
                t_active: 0.02,
                t_reactive: 0.02,
                i_max: 1.2,
                v_min: 0.2,
            },
            pll: PiGains { kp: 0.01, ki: 0.7 },
            control_mode: ControlMode::Voltage,
            voltage_control: PiGains { kp: 2.0, ki: 20.0 },
            reactive_control: PiGains { kp: 0.5, ki: 10.0 },
            droop: DroopParams::default(),
            frequency_source: FrequencySource::Pll { filter_time: 0.1 },
            mppt: MpptCurve::default(),
            dispatch: 0.8,
            pitch_angle_deg: 0.0,
            speed_min: 0.7,
            speed_max: 1.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_mva", self.base_mva),
            ("h_turbine", self.h_turbine),
            ("converter.t_power", self.converter.t_power),
            ("converter.t_active", self.converter.t_active),
            ("converter.t_reactive", self.converter.t_reactive),
            ("converter.i_max", self.converter.i_max),
            ("converter.v_min", self.converter.v_min),
            ("machine.xm", self.machine.xm),
            ("dispatch", self.dispatch),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Validation(format!("DFIG `{name}` must be positive")));
            }
        }
        if self.dispatch > self.mppt.rated_power {
            return Err(Error::Validation("DFIG dispatch exceeds rated power".into()));
        }
        if !(self.pitch_angle_deg >= 0.0) {
            return Err(Error::Validation("pitch angle must be non-negative".into()));
        }
        let t = match self.frequency_source {
            FrequencySource::Pll { filter_time } => filter_time,
            FrequencySource::AngleWashout { time_constant } => time_constant,
        };
        if !(t > 0.0) {
            return Err(Error::Validation(
                "frequency measurement time constant must be positive".into(),
            ));
        }
        self.mppt.validate()?;
        self.droop.validate()
    }
}

/// Power coefficient of the rotor blades.
pub fn power_coefficient(tip_speed_ratio: f64, pitch_deg: f64) -> f64 {
    let inv = 1.0 / (tip_speed_ratio + 0.08 * pitch_deg) - 0.035 / (pitch_deg.powi(3) + 1.0);
    0.22 * (116.0 * inv - 0.4 * pitch_deg - 5.0) * (-12.5 * inv).exp()
}

/// Normalized rotor aerodynamics: rated wind at rated speed yields rated power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aerodynamics {
    pub lambda_opt: f64,
    pub cp_max: f64,
    pub pitch_deg: f64,
}

impl Aerodynamics {
    pub fn new(pitch_deg: f64) -> Self {
        // golden-section search for the peak of the power coefficient
        let (mut a, mut b) = (2.0_f64, 16.0_f64);
        let g = 0.5 * (5.0_f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if power_coefficient(c, pitch_deg) > power_coefficient(d, pitch_deg) {
                b = d;
            } else {
                a = c;
            }
        }
        let lambda_opt = 0.5 * (a + b);
        Self {
            lambda_opt,
            cp_max: power_coefficient(lambda_opt, pitch_deg),
            pitch_deg,
        }
    }

    /// Mechanical power for rotor speed and wind speed, both per-unit of rated.
    pub fn power(&self, speed: f64, wind: f64) -> f64 {
        let lambda = self.lambda_opt * speed / wind;
        wind.powi(3) * power_coefficient(lambda, self.pitch_deg) / self.cp_max
    }

    /// Wind speed giving `power` at rotor speed `speed`.
    pub fn wind_for(&self, speed: f64, power: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.5 * speed, 2.0 * speed);
        let f = |w: f64| self.power(speed, w) - power;
        if f(lo) > 0.0 || f(hi) < 0.0 {
            return Err(Error::Validation(format!(
                "no wind speed delivers {power:.3} pu at speed {speed:.3}"
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone)]
pub struct Dfig {
    pub params: DfigParams,
    pub omega0: f64,
    pub aero: Aerodynamics,
    pub wind_speed: f64,
    pub v_ref: f64,
    pub q_ref: f64,
}

pub mod state {
    pub const SPEED: usize = 0;
    pub const I_ACTIVE: usize = 1;
    pub const I_REACTIVE: usize = 2;
    pub const CTRL: usize = 3;
    pub const PLL_ANGLE: usize = 4;
    pub const PLL_INT: usize = 5;
    /// Filtered PLL frequency, or the lagged angle of the washout.
    pub const FREQ_MEAS: usize = 6;
    pub const ROCOF: usize = 7;
    pub const P_ORDER: usize = 8;
}

/// Internal signals of the converter controls at one operating point.
#[derive(Debug, Clone, Copy)]
pub struct DfigSignals {
    pub pll_error: f64,
    pub pll_frequency: f64,
    pub delta_f: f64,
    pub rocof: f64,
    pub p_opt: f64,
    pub p_ref: f64,
    pub p: f64,
    pub q: f64,
}

impl Dfig {
    pub fn initialize(params: DfigParams, omega0: f64, v: Complex64, s: Complex64) -> Result<(Self, Vec<f64>)> {
        params.validate()?;
        check_finite("DFIG initialization", &[s.re, s.im], v)?;
        let vm = v.norm();
        let theta = v.arg();
        let i_active = s.re / vm;
        let i_reactive = s.im / vm;
        let speed = params.mppt.inverse(s.re)?;
        let aero = Aerodynamics::new(params.pitch_angle_deg);
        let losses = Self::losses_of(&params, i_active, i_reactive, vm);
        let wind_speed = aero.wind_for(speed, s.re + losses)?;
        let dfig = Dfig {
            params,
            omega0,
            aero,
            wind_speed,
            v_ref: vm,
            q_ref: s.im,
        };
        let mut x = vec![0.0; dfig.n_states()];
        x[state::SPEED] = speed;
        x[state::I_ACTIVE] = i_active;
        x[state::I_REACTIVE] = i_reactive;
        x[state::CTRL] = i_reactive;
        x[state::PLL_ANGLE] = theta;
        x[state::P_ORDER] = s.re;
        if let FrequencySource::AngleWashout { .. } = params.frequency_source {
            x[state::FREQ_MEAS] = theta;
        }
        Ok((dfig, x))
    }

    fn losses_of(p: &DfigParams, i_active: f64, i_reactive: f64, vm: f64) -> f64 {
        let m = &p.machine;
        let ratio = (m.xm + m.xlr) / m.xm;
        let ir_p = ratio * i_active;
        let ir_q = ratio * i_reactive + vm / m.xm;
        m.rs * (i_active * i_active + i_reactive * i_reactive) + m.rr * (ir_p * ir_p + ir_q * ir_q)
    }

    pub fn signals(&self, x: &[f64], v: Complex64) -> DfigSignals {
        let p = &self.params;
        let vm = v.norm();
        let err = wrap_angle(v.arg() - x[state::PLL_ANGLE]);
        let pll_error = vm * err.sin();
        let pll_frequency = p.pll.kp * pll_error + x[state::PLL_INT];
        let delta_f = match p.frequency_source {
            FrequencySource::AngleWashout { time_constant } => {
                wrap_angle(v.arg() - x[state::FREQ_MEAS]) / (time_constant * self.omega0)
            }
            FrequencySource::Pll { .. } => x[state::FREQ_MEAS],
        };
        let rocof = (delta_f - x[state::ROCOF]) / p.droop.rocof_filter_time;
        let p_opt = p.mppt.reference(x[state::SPEED]).power;
        let p_ref = frequency_support_reference(p_opt, delta_f, rocof, &p.droop);
        let s = v * self.source_current(x).conj();
        DfigSignals {
            pll_error,
            pll_frequency,
            delta_f,
            rocof,
            p_opt,
            p_ref,
            p: s.re,
            q: s.im,
        }
    }
}

const NAMES_PLL: [&str; 9] = [
    "speed",
    "i_active",
    "i_reactive",
    "ctrl_int",
    "pll_angle",
    "pll_int",
    "freq_filter",
    "rocof_w",
    "p_order",
];
const NAMES_WASHOUT: [&str; 9] = [
    "speed",
    "i_active",
    "i_reactive",
    "ctrl_int",
    "pll_angle",
    "pll_int",
    "angle_w",
    "rocof_w",
    "p_order",
];

impl DeviceModel for Dfig {
    fn class(&self) -> DeviceClass {
        DeviceClass::ConverterBased
    }

    fn base_mva(&self) -> f64 {
        self.params.base_mva
    }

    fn state_names(&self) -> Vec<&'static str> {
        match self.params.frequency_source {
            FrequencySource::Pll { .. } => NAMES_PLL.to_vec(),
            FrequencySource::AngleWashout { .. } => NAMES_WASHOUT.to_vec(),
        }
    }

    fn shunt_admittance(&self) -> Complex64 {
        Complex64::new(0.0, 0.0)
    }

    fn source_current(&self, x: &[f64]) -> Complex64 {
        Complex64::new(x[state::I_ACTIVE], -x[state::I_REACTIVE]) * Complex64::from_polar(1.0, x[state::PLL_ANGLE])
    }

    fn derivatives(&self, x: &[f64], v: Complex64, dx: &mut [f64]) -> Result<()> {
        check_finite("DFIG state", x, v)?;
        let p = &self.params;
        let c = &p.converter;
        let vm = v.norm();
        let sig = self.signals(x, v);

        let i_active_cmd = (x[state::P_ORDER] / vm.max(c.v_min)).clamp(-c.i_max, c.i_max);
        let (err, gains) = match p.control_mode {
            ControlMode::Voltage => (self.v_ref - vm, p.voltage_control),
            ControlMode::ReactivePower => (self.q_ref - sig.q, p.reactive_control),
        };
        let i_reactive_cmd = (gains.kp * err + x[state::CTRL]).clamp(-c.i_max, c.i_max);

        let speed = x[state::SPEED];
        let losses = Self::losses_of(p, x[state::I_ACTIVE], x[state::I_REACTIVE], vm);
        let t_mech = self.aero.power(speed, self.wind_speed) / speed;
        let t_elec = (sig.p + losses) / speed;

        dx[state::SPEED] = (t_mech - t_elec) / (2.0 * p.h_turbine);
        dx[state::I_ACTIVE] = (i_active_cmd - x[state::I_ACTIVE]) / c.t_active;
        dx[state::I_REACTIVE] = (i_reactive_cmd - x[state::I_REACTIVE]) / c.t_reactive;
        dx[state::CTRL] = gains.ki * err;
        dx[state::PLL_ANGLE] = self.omega0 * sig.pll_frequency;
        dx[state::PLL_INT] = p.pll.ki * sig.pll_error;
        dx[state::FREQ_MEAS] = match p.frequency_source {
            FrequencySource::AngleWashout { time_constant } => {
                wrap_angle(v.arg() - x[state::FREQ_MEAS]) / time_constant
            }
            FrequencySource::Pll { filter_time } => (sig.pll_frequency - x[state::FREQ_MEAS]) / filter_time,
        };
        dx[state::ROCOF] = sig.rocof;
        dx[state::P_ORDER] = (sig.p_ref - x[state::P_ORDER]) / c.t_power;
        Ok(())
    }

    fn rotor_speed(&self, x: &[f64]) -> Option<f64> {
        Some(x[state::SPEED])
    }

    fn measured_frequency(&self, x: &[f64], v: Complex64) -> Option<f64> {
        Some(self.signals(x, v).delta_f)
    }

    fn limit_warnings(&self, x: &[f64]) -> Vec<String> {
        let w = x[state::SPEED];
        if w < self.params.speed_min || w > self.params.speed_max {
            vec![format!("rotor speed {w:.3} pu outside protection band")]
        } else {
            Vec::new()
        }
    }
}
