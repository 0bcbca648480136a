//! Sixth-order synchronous machine with static exciter, PSS and governor.
//!
//! States, in order: rotor angle (rad), speed deviation (pu), e'q, e'd,
//! e''q, e''d, measured terminal voltage, PSS washout, PSS lead-lag 1,
//! PSS lead-lag 2, mechanical power. The subtransient reactances must be
//! equal so the machine is a linear Norton source behind `ra + j x''`.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{check_finite, lead_lag, DeviceClass, DeviceModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExciterParams {
    pub ka: f64,
    pub tr: f64,
    pub efd_min: f64,
    pub efd_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PssParams {
    pub k_pss: f64,
    pub tw: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorParams {
    /// Permanent droop, pu speed per pu power.
    pub r: f64,
    pub tg: f64,
    pub p_max: f64,
    pub p_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncGenParams {
    pub base_mva: f64,
    pub h: f64,
    pub d: f64,
    pub ra: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd1: f64,
    pub xq1: f64,
    pub xd2: f64,
    pub xq2: f64,
    pub td01: f64,
    pub tq01: f64,
    pub td02: f64,
    pub tq02: f64,
    pub exciter: ExciterParams,
    pub pss: PssParams,
    pub governor: GovernorParams,
}

impl SyncGenParams {
    /// Machine, exciter and PSS constants of the classic two-area benchmark
    /// (900 MVA units), with a first-order governor.
    pub fn two_area(h: f64) -> Self {
        Self {
            base_mva: 900.0,
            h,
            d: 0.0,
            ra: 0.0025,
            xd: 1.8,
            xq: 1.7,
            xd1: 0.3,
            xq1: 0.55,
            xd2: 0.25,
            xq2: 0.25,
            td01: 8.0,
            tq01: 0.4,
            td02: 0.03,
            tq02: 0.05,
            exciter: ExciterParams {
                ka: 200.0,
                tr: 0.01,
                efd_min: -6.4,
                efd_max: 7.0,
            },
            pss: PssParams {
                k_pss: 20.0,
                tw: 10.0,
                t1: 0.05,
                t2: 0.02,
                t3: 3.0,
                t4: 5.4,
                v_max: 0.2,
            },
            governor: GovernorParams {
                r: 0.05,
                tg: 0.5,
                p_max: 1.0,
                p_min: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_mva", self.base_mva),
            ("h", self.h),
            ("td01", self.td01),
            ("tq01", self.tq01),
            ("td02", self.td02),
            ("tq02", self.tq02),
            ("exciter.tr", self.exciter.tr),
            ("pss.tw", self.pss.tw),
            ("pss.t2", self.pss.t2),
            ("pss.t4", self.pss.t4),
            ("governor.tg", self.governor.tg),
            ("governor.r", self.governor.r),
            ("xd2", self.xd2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Validation(format!(
                    "synchronous machine `{name}` must be positive"
                )));
            }
        }
        if !(self.pss.k_pss >= 0.0) || !(self.pss.t1 >= 0.0) || !(self.pss.t3 >= 0.0) {
            return Err(Error::Validation(
                "PSS gain and lead time constants must be non-negative".into(),
            ));
        }
        if (self.xd2 - self.xq2).abs() > 1e-12 {
            return Err(Error::Validation(
                "subtransient saliency (xd'' != xq'') is not supported".into(),
            ));
        }
        Ok(())
    }
}

/// An initialized machine: parameters plus the references that hold the
/// power-flow operating point.
#[derive(Debug, Clone)]
pub struct SyncGen {
    pub params: SyncGenParams,
    pub omega0: f64,
    pub v_ref: f64,
    pub p_ref: f64,
}

pub mod state {
    pub const DELTA: usize = 0;
    pub const OMEGA: usize = 1;
    pub const EQ1: usize = 2;
    pub const ED1: usize = 3;
    pub const EQ2: usize = 4;
    pub const ED2: usize = 5;
    pub const VM: usize = 6;
    pub const PSS_W: usize = 7;
    pub const PSS_1: usize = 8;
    pub const PSS_2: usize = 9;
    pub const PM: usize = 10;
}

const NAMES: [&str; 11] = [
    "delta", "omega", "eq1", "ed1", "eq2", "ed2", "vm", "pss_w", "pss_ll1", "pss_ll2", "pm",
];

fn to_dq(z: Complex64, delta: f64) -> Complex64 {
    z * Complex64::from_polar(1.0, FRAC_PI_2 - delta)
}

fn from_dq(z: Complex64, delta: f64) -> Complex64 {
    z * Complex64::from_polar(1.0, delta - FRAC_PI_2)
}

impl SyncGen {
    /// Builds the machine and its equilibrium state for terminal voltage `v`
    /// and output power `s` (both per-unit on the machine base).
    pub fn initialize(params: SyncGenParams, omega0: f64, v: Complex64, s: Complex64) -> Result<(Self, Vec<f64>)> {
        params.validate()?;
        check_finite("synchronous machine initialization", &[s.re, s.im], v)?;
        let p = &params;
        let i = (s / v).conj();
        let e_q = v + Complex64::new(p.ra, p.xq) * i;
        let delta = e_q.arg();
        let vdq = to_dq(v, delta);
        let idq = to_dq(i, delta);
        let (vd, vq, id, iq) = (vdq.re, vdq.im, idq.re, idq.im);
        let eq2 = vq + p.ra * iq + p.xd2 * id;
        let ed2 = vd + p.ra * id - p.xq2 * iq;
        let ed1 = (p.xq - p.xq1) * iq;
        let eq1 = eq2 + (p.xd1 - p.xd2) * id;
        let efd = eq1 + (p.xd - p.xd1) * id;
        let pe = ed2 * id + eq2 * iq;
        let vt = v.norm();
        if efd > p.exciter.efd_max || efd < p.exciter.efd_min {
            return Err(Error::Validation(format!(
                "field voltage {efd:.3} outside exciter limits"
            )));
        }
        if pe > p.governor.p_max || pe < p.governor.p_min {
            return Err(Error::Validation(format!(
                "mechanical power {pe:.3} outside governor limits"
            )));
        }
        let gen = SyncGen {
            params,
            omega0,
            v_ref: vt + efd / p.exciter.ka,
            p_ref: pe,
        };
        let mut x = vec![0.0; NAMES.len()];
        x[state::DELTA] = delta;
        x[state::EQ1] = eq1;
        x[state::ED1] = ed1;
        x[state::EQ2] = eq2;
        x[state::ED2] = ed2;
        x[state::VM] = vt;
        x[state::PM] = pe;
        Ok((gen, x))
    }

    /// Mechanical power command for a speed deviation, before the governor lag.
    pub fn governor_command(&self, speed_deviation: f64) -> f64 {
        let g = &self.params.governor;
        (self.p_ref - speed_deviation / g.r).clamp(g.p_min, g.p_max)
    }

    fn pss_output(&self, x: &[f64]) -> (f64, [f64; 3]) {
        let p = &self.params.pss;
        let u = p.k_pss * x[state::OMEGA];
        let y1 = u - x[state::PSS_W];
        let dw = y1 / p.tw;
        let (y2, dz1) = lead_lag(y1, x[state::PSS_1], p.t1, p.t2);
        let (y3, dz2) = lead_lag(y2, x[state::PSS_2], p.t3, p.t4);
        (y3.clamp(-p.v_max, p.v_max), [dw, dz1, dz2])
    }

    pub fn field_voltage(&self, x: &[f64]) -> f64 {
        let e = &self.params.exciter;
        let (vpss, _) = self.pss_output(x);
        (e.ka * (self.v_ref - x[state::VM] + vpss)).clamp(e.efd_min, e.efd_max)
    }

    fn subtransient_emf(&self, x: &[f64]) -> Complex64 {
        from_dq(Complex64::new(x[state::ED2], x[state::EQ2]), x[state::DELTA])
    }

    /// Air-gap power for terminal voltage `v`.
    pub fn electrical_power(&self, x: &[f64], v: Complex64) -> f64 {
        let e = self.subtransient_emf(x);
        let i = (e - v) / Complex64::new(self.params.ra, self.params.xd2);
        (e * i.conj()).re
    }
}

impl DeviceModel for SyncGen {
    fn class(&self) -> DeviceClass {
        DeviceClass::Synchronous
    }

    fn base_mva(&self) -> f64 {
        self.params.base_mva
    }

    fn state_names(&self) -> Vec<&'static str> {
        NAMES.to_vec()
    }

    fn shunt_admittance(&self) -> Complex64 {
        Complex64::new(self.params.ra, self.params.xd2).inv()
    }

    fn source_current(&self, x: &[f64]) -> Complex64 {
        self.subtransient_emf(x) * self.shunt_admittance()
    }

    fn derivatives(&self, x: &[f64], v: Complex64, dx: &mut [f64]) -> Result<()> {
        check_finite("synchronous machine state", x, v)?;
        let p = &self.params;
        let delta = x[state::DELTA];
        let omega = x[state::OMEGA];
        let e2 = self.subtransient_emf(x);
        let i = (e2 - v) / Complex64::new(p.ra, p.xd2);
        let idq = to_dq(i, delta);
        let (id, iq) = (idq.re, idq.im);
        let pe = (e2 * i.conj()).re;

        let (vpss, pss_d) = self.pss_output(x);
        let efd = (p.exciter.ka * (self.v_ref - x[state::VM] + vpss)).clamp(p.exciter.efd_min, p.exciter.efd_max);

        dx[state::DELTA] = self.omega0 * omega;
        dx[state::OMEGA] = ((x[state::PM] - pe) / (1.0 + omega) - p.d * omega) / (2.0 * p.h);
        dx[state::EQ1] = (-x[state::EQ1] - (p.xd - p.xd1) * id + efd) / p.td01;
        dx[state::ED1] = (-x[state::ED1] + (p.xq - p.xq1) * iq) / p.tq01;
        dx[state::EQ2] = (-x[state::EQ2] + x[state::EQ1] - (p.xd1 - p.xd2) * id) / p.td02;
        dx[state::ED2] = (-x[state::ED2] + x[state::ED1] + (p.xq1 - p.xq2) * iq) / p.tq02;
        dx[state::VM] = (v.norm() - x[state::VM]) / p.exciter.tr;
        dx[state::PSS_W] = pss_d[0];
        dx[state::PSS_1] = pss_d[1];
        dx[state::PSS_2] = pss_d[2];
        dx[state::PM] = (self.governor_command(omega) - x[state::PM]) / p.governor.tg;
        Ok(())
    }

    fn rotor_speed(&self, x: &[f64]) -> Option<f64> {
        Some(1.0 + x[state::OMEGA])
    }

    fn limit_warnings(&self, x: &[f64]) -> Vec<String> {
        let e = &self.params.exciter;
        let efd = self.field_voltage(x);
        if efd <= e.efd_min || efd >= e.efd_max {
            vec![format!("field voltage at limit ({efd:.2} pu)")]
        } else {
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine() -> (SyncGen, Vec<f64>, Complex64) {
        let v = Complex64::from_polar(1.03, 0.35);
        let s = Complex64::new(0.75, 0.2);
        let (g, x) = SyncGen::initialize(SyncGenParams::two_area(6.5), 376.99, v, s).unwrap();
        (g, x, v)
    }

    #[test]
    fn equilibrium_derivatives_vanish() {
        let (g, x, v) = machine();
        let mut dx = vec![1.0; x.len()];
        g.derivatives(&x, v, &mut dx).unwrap();
        for (k, d) in dx.iter().enumerate() {
            assert!(d.abs() <= 1e-8, "state {} derivative {d}", NAMES[k]);
        }
    }

    #[test]
    fn initialized_current_reproduces_power() {
        let (g, x, v) = machine();
        let s = v * g.injected_current(&x, v).conj();
        assert!((s - Complex64::new(0.75, 0.2)).norm() < 1e-12);
    }

    #[test]
    fn governor_droop_arithmetic() {
        let (mut g, _, _) = machine();
        g.p_ref = 0.5;
        assert!((g.governor_command(0.01) - g.p_ref + 0.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_nan_input() {
        let (g, mut x, v) = machine();
        x[state::EQ1] = f64::NAN;
        let mut dx = vec![0.0; x.len()];
        assert!(matches!(g.derivatives(&x, v, &mut dx), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rejects_invalid_parameters() {
        let mut p = SyncGenParams::two_area(6.5);
        p.h = 0.0;
        assert!(p.validate().is_err());
        let mut p = SyncGenParams::two_area(6.5);
        p.pss.k_pss = -1.0;
        assert!(p.validate().is_err());
        let mut p = SyncGenParams::two_area(6.5);
        p.xq2 = 0.3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn speed_deviation_drives_angle() {
        let (g, mut x, v) = machine();
        x[state::OMEGA] = 1e-3;
        let mut dx = vec![0.0; x.len()];
        g.derivatives(&x, v, &mut dx).unwrap();
        assert!((dx[state::DELTA] - g.omega0 * 1e-3).abs() < 1e-12);
        assert!(dx[state::PM] < 0.0);
    }
}
