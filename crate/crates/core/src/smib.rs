//! Single-machine infinite-bus model with frequency-support droop, and the
//! single-bus aggregate frequency model.
//!
//! The SMIB state is `[Δf, Δδ]`; its linearized dynamics are
//!
//! ```text
//! (2H + K_in) dΔf/dt = −(K_p + K_D) Δf − K_S Δδ
//!             dΔδ/dt = ω0 Δf
//! ```

use std::io::Write;
use std::path::Path;

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::devices::{DeviceClass, DroopParams};
use crate::error::{Error, Result};
use crate::model::{Dynamics, OdeDae, StateLabel};
use crate::timedomain::{simulate, SimulationOptions, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmibParams {
    pub h: f64,
    pub kd: f64,
    pub ks: f64,
    pub omega0: f64,
    pub droop: DroopParams,
}

impl Default for SmibParams {
    fn default() -> Self {
        Self {
            h: 3.5,
            kd: 10.0,
            ks: 0.75,
            omega0: 2.0 * std::f64::consts::PI * 60.0,
            droop: DroopParams::default(),
        }
    }
}

impl SmibParams {
    pub fn with_droop(self, kp: f64, kin: f64) -> Self {
        Self {
            droop: DroopParams::new(kp, kin),
            ..self
        }
    }

    /// Effective `(K_p, K_in)`; zero when the droop is disabled.
    pub fn gains(&self) -> (f64, f64) {
        if self.droop.enabled {
            (self.droop.kp, self.droop.kin)
        } else {
            (0.0, 0.0)
        }
    }

    /// `2H + K_in`, the effective inertia.
    pub fn effective_inertia(&self) -> f64 {
        2.0 * self.h + self.gains().1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::Validation("SMIB inertia H must be positive".into()));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::Validation("SMIB omega0 must be positive".into()));
        }
        if ![self.kd, self.ks, self.droop.kp, self.droop.kin]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Validation("SMIB coefficients must be finite".into()));
        }
        if !(self.effective_inertia() > 0.0) {
            return Err(Error::Validation("2H + K_in must be positive".into()));
        }
        Ok(())
    }
}

/// State pair of the SMIB model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmibState {
    pub delta_f: f64,
    pub delta_delta: f64,
}

pub fn smib_system_matrix(params: &SmibParams) -> Result<[[f64; 2]; 2]> {
    params.validate()?;
    let (kp, _) = params.gains();
    let m = params.effective_inertia();
    Ok([[-(kp + params.kd) / m, -params.ks / m], [params.omega0, 0.0]])
}

/// Closed-form eigenvalues of the SMIB matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmibEigen {
    /// Upper-half-plane root when oscillatory, otherwise the slower real root.
    pub eigenvalue: Complex64,
    /// The other root (conjugate, or the faster real root).
    pub other: Complex64,
    pub oscillatory: bool,
    /// Damping ratio; 1.0 in the real-root regime.
    pub damping: f64,
    pub frequency_hz: f64,
}

pub fn smib_eigenvalues(params: &SmibParams) -> Result<SmibEigen> {
    params.validate()?;
    let (kp, _) = params.gains();
    let m = params.effective_inertia();
    let half_trace = -(kp + params.kd) / (2.0 * m);
    let det = params.ks * params.omega0 / m;
    let disc = half_trace * half_trace - det;
    if disc < 0.0 {
        let beta = (-disc).sqrt();
        let eigenvalue = Complex64::new(half_trace, beta);
        Ok(SmibEigen {
            eigenvalue,
            other: eigenvalue.conj(),
            oscillatory: true,
            damping: -half_trace / eigenvalue.norm(),
            frequency_hz: beta / (2.0 * std::f64::consts::PI),
        })
    } else {
        let r = disc.sqrt();
        Ok(SmibEigen {
            eigenvalue: Complex64::new(half_trace + r, 0.0),
            other: Complex64::new(half_trace - r, 0.0),
            oscillatory: false,
            damping: 1.0,
            frequency_hz: 0.0,
        })
    }
}

/// One cell of a droop-gain sensitivity grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmibGridPoint {
    pub kp: f64,
    pub kin: f64,
    pub re: f64,
    pub im: f64,
    pub damping: f64,
    pub freq_hz: f64,
    pub oscillatory_flag: bool,
}

/// Eigenvalues over the Cartesian grid `kp_values × kin_values`, `kin` varying fastest.
pub fn smib_sensitivity_grid(params: &SmibParams, kp_values: &[f64], kin_values: &[f64]) -> Result<Vec<SmibGridPoint>> {
    if kp_values.is_empty() || kin_values.is_empty() {
        return Err(Error::Validation("sensitivity grid axes must be nonempty".into()));
    }
    let mut out = Vec::with_capacity(kp_values.len() * kin_values.len());
    for &kp in kp_values {
        for &kin in kin_values {
            let e = smib_eigenvalues(&params.with_droop(kp, kin))?;
            out.push(SmibGridPoint {
                kp,
                kin,
                re: e.eigenvalue.re,
                im: e.eigenvalue.im,
                damping: e.damping,
                freq_hz: e.frequency_hz,
                oscillatory_flag: e.oscillatory,
            });
        }
    }
    Ok(out)
}

pub fn write_grid_csv<W: Write>(grid: &[SmibGridPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for p in grid {
        wr.serialize(p)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_grid_csv(grid: &[SmibGridPoint], path: &Path) -> Result<()> {
    write_grid_csv(grid, std::fs::File::create(path)?)
}

/// Nonlinear SMIB swing model whose linearization at its equilibrium is the
/// SMIB system matrix. `delta0` fixes the operating angle; the electrical
/// power is `K_S / cos δ0 · sin δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmibModel {
    pub params: SmibParams,
    pub delta0: f64,
}

impl SmibModel {
    pub fn new(params: SmibParams, delta0: f64) -> Result<Self> {
        params.validate()?;
        if !(delta0.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Validation("SMIB operating angle must lie in (-π/2, π/2)".into()));
        }
        Ok(Self { params, delta0 })
    }

    fn p_max(&self) -> f64 {
        self.params.ks / self.delta0.cos()
    }

    /// `[Δf, δ]` at the operating point.
    pub fn equilibrium(&self) -> [f64; 2] {
        [0.0, self.delta0]
    }
}

impl Dynamics for SmibModel {
    fn n_states(&self) -> usize {
        2
    }

    fn state_labels(&self) -> Vec<StateLabel> {
        vec![
            StateLabel::new("smib", "delta_f", DeviceClass::Synchronous),
            StateLabel::new("smib", "delta", DeviceClass::Synchronous),
        ]
    }

    fn derivatives(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let p = &self.params;
        let (kp, _) = p.gains();
        let p_m = self.p_max() * self.delta0.sin();
        let p_e = self.p_max() * x[1].sin();
        dx[0] = (p_m - p_e - (kp + p.kd) * x[0]) / p.effective_inertia();
        dx[1] = p.omega0 * x[0];
        Ok(())
    }
}

/// Static regulating power as a function of the frequency deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regulation {
    None,
    /// `P_reg = −gain · Δf`.
    Droop {
        gain: f64,
    },
}

impl Regulation {
    pub fn power(&self, delta_f: f64) -> f64 {
        match *self {
            Regulation::None => 0.0,
            Regulation::Droop { gain } => -gain * delta_f,
        }
    }
}

/// Single-bus system frequency model `2H df/dt = P_g + P_reg(f) − P_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateModel {
    pub h_sys: f64,
    pub p_g: f64,
    pub p_l: f64,
    pub regulation: Regulation,
    /// Initial frequency deviation of the centre of inertia, per-unit.
    pub f_c: f64,
}

struct AggregateDynamics {
    model: AggregateModel,
    step: f64,
}

impl Dynamics for AggregateDynamics {
    fn n_states(&self) -> usize {
        1
    }

    fn state_labels(&self) -> Vec<StateLabel> {
        vec![StateLabel::new("system", "delta_f", DeviceClass::Synchronous)]
    }

    fn derivatives(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let m = &self.model;
        dx[0] = (m.p_g + m.regulation.power(x[0]) - m.p_l - self.step) / (2.0 * m.h_sys);
        Ok(())
    }
}

/// Frequency deviation after a load increase of `power_step` at t = 0.
pub fn aggregate_frequency_response(model: &AggregateModel, power_step: f64, t_end: f64) -> Result<Trace> {
    if !(model.h_sys > 0.0) {
        return Err(Error::Validation("aggregate inertia must be positive".into()));
    }
    let dynamics = AggregateDynamics {
        model: *model,
        step: power_step,
    };
    let opts = SimulationOptions {
        t_end,
        dt_max: (t_end / 2000.0).max(1e-4),
        ..SimulationOptions::default()
    };
    simulate(&OdeDae(&dynamics), &[model.f_c], &[], &opts).map_err(Error::from)
}

/// The 2×2 matrix as a faer matrix.
pub fn to_mat(a: &[[f64; 2]; 2]) -> Mat<f64> {
    Mat::from_fn(2, 2, |i, j| a[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn baseline_matrix_entries() {
        let a = smib_system_matrix(&SmibParams::default()).unwrap();
        assert!(close(a[0][0], -10.0 / 7.0, 1e-12));
        assert!(close(a[0][1], -0.75 / 7.0, 1e-12));
        assert!(close(a[1][0], 120.0 * std::f64::consts::PI, 1e-12));
        assert_eq!(a[1][1], 0.0);
    }

    #[test]
    fn kp_40_top_left() {
        let p = SmibParams::default().with_droop(40.0, 0.0);
        let a = smib_system_matrix(&p).unwrap();
        assert!(close(a[0][0], -50.0 / 7.0, 1e-12));
        // half the trace is the eigenvalue real part
        assert!(close(smib_eigenvalues(&p).unwrap().eigenvalue.re, -50.0 / 14.0, 1e-12));
    }

    #[test]
    fn singular_inertia_rejected() {
        let p = SmibParams::default().with_droop(0.0, -7.0);
        assert!(smib_system_matrix(&p).is_err());
        assert!(smib_eigenvalues(&p).is_err());
    }

    #[test]
    fn disabled_droop_ignores_gains() {
        let mut p = SmibParams::default().with_droop(40.0, 10.0);
        p.droop.enabled = false;
        assert_eq!(
            smib_eigenvalues(&p).unwrap(),
            smib_eigenvalues(&SmibParams::default()).unwrap()
        );
    }

    #[test]
    fn real_root_regime_flagged() {
        let p = SmibParams {
            kd: 200.0,
            ..SmibParams::default()
        };
        let e = smib_eigenvalues(&p).unwrap();
        assert!(!e.oscillatory);
        assert_eq!(e.damping, 1.0);
        assert_eq!(e.eigenvalue.im, 0.0);
        // product of roots equals the determinant
        let det = p.ks * p.omega0 / p.effective_inertia();
        assert!(close(e.eigenvalue.re * e.other.re, det, 1e-9 * det));
    }

    #[test]
    fn grid_order_and_size() {
        let g = smib_sensitivity_grid(&SmibParams::default(), &[0.0, 10.0], &[0.0, 5.0, 10.0]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!((g[1].kp, g[1].kin), (0.0, 5.0));
        assert_eq!((g[3].kp, g[3].kin), (10.0, 0.0));
        assert!(smib_sensitivity_grid(&SmibParams::default(), &[], &[0.0]).is_err());
    }

    #[test]
    fn grid_csv_columns() {
        let g = smib_sensitivity_grid(&SmibParams::default(), &[0.0], &[0.0]).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "kp,kin,re,im,damping,freq_hz,oscillatory_flag"
        );
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn nonlinear_model_rests_at_equilibrium() {
        let m = SmibModel::new(SmibParams::default(), 0.4).unwrap();
        let mut dx = [1.0; 2];
        m.derivatives(&m.equilibrium(), &mut dx).unwrap();
        assert!(dx.iter().all(|v| v.abs() < 1e-15));
        assert!(SmibModel::new(SmibParams::default(), 2.0).is_err());
    }

    #[test]
    fn aggregate_initial_rocof() {
        let m = AggregateModel {
            h_sys: 5.0,
            p_g: 1.0,
            p_l: 1.0,
            regulation: Regulation::None,
            f_c: 0.0,
        };
        let tr = aggregate_frequency_response(&m, 0.1, 1.0).unwrap();
        let f = tr.column("system.delta_f").unwrap();
        let slope = (f[1] - f[0]) / (tr.time[1] - tr.time[0]);
        assert!(close(slope, -0.01, 1e-9));
        assert!(close(*f.last().unwrap(), -0.01, 1e-9));
    }

    #[test]
    fn aggregate_balanced_is_constant() {
        let m = AggregateModel {
            h_sys: 5.0,
            p_g: 0.7,
            p_l: 0.7,
            regulation: Regulation::Droop { gain: 20.0 },
            f_c: 0.0,
        };
        let tr = aggregate_frequency_response(&m, 0.0, 5.0).unwrap();
        assert!(tr.column("system.delta_f").unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn aggregate_droop_settles() {
        let m = AggregateModel {
            h_sys: 5.0,
            p_g: 1.0,
            p_l: 1.0,
            regulation: Regulation::Droop { gain: 20.0 },
            f_c: 0.0,
        };
        let tr = aggregate_frequency_response(&m, 0.1, 20.0).unwrap();
        // time constant 2H/K = 0.5 s
        assert!(close(
            *tr.column("system.delta_f").unwrap().last().unwrap(),
            -0.005,
            1e-9
        ));
    }
}
