//! Newton-Raphson AC power flow in polar coordinates.

use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_ybus, BusKind, Network, YBus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<u32>,
    pub voltages: Vec<Complex64>,
    /// Generation at each bus (calculated injection plus load), system per-unit.
    pub generation: Vec<Complex64>,
    pub mismatch_norm: f64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    pub fn total_generation(&self) -> Complex64 {
        self.generation.iter().sum()
    }

    pub fn voltage(&self, bus: u32) -> Result<Complex64> {
        self.bus_ids
            .iter()
            .position(|&b| b == bus)
            .map(|k| self.voltages[k])
            .ok_or(Error::UnknownBus(bus))
    }

    pub fn generation_at(&self, bus: u32) -> Result<Complex64> {
        self.bus_ids
            .iter()
            .position(|&b| b == bus)
            .map(|k| self.generation[k])
            .ok_or(Error::UnknownBus(bus))
    }
}

/// Solves the power flow from a flat start.
pub fn solve_power_flow(network: &Network, opts: PowerFlowOptions) -> Result<PowerFlowSolution> {
    let v0: Vec<Complex64> = network
        .buses
        .iter()
        .map(|b| match b.kind {
            BusKind::PQ => Complex64::new(1.0, 0.0),
            _ => Complex64::from_polar(b.voltage_mag, 0.0),
        })
        .collect();
    newton(network, v0, opts)
}

/// Solves the power flow starting from a previous solution of the same network.
pub fn solve_power_flow_from(
    network: &Network,
    start: &PowerFlowSolution,
    opts: PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    if start.voltages.len() != network.buses.len() {
        return Err(Error::Validation("warm start has wrong dimension".into()));
    }
    newton(network, start.voltages.clone(), opts)
}

fn injections(y: &YBus, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let current: Complex64 = (0..n).map(|j| y.get(i, j) * v[j]).sum();
            v[i] * current.conj()
        })
        .collect()
}

fn newton(network: &Network, mut v: Vec<Complex64>, opts: PowerFlowOptions) -> Result<PowerFlowSolution> {
    let y = build_ybus(network)?;
    let n = network.buses.len();
    let kinds: Vec<BusKind> = network.buses.iter().map(|b| b.kind).collect();
    let spec: Vec<Complex64> = network
        .buses
        .iter()
        .map(|b| Complex64::new(b.p_gen - b.p_load, b.q_gen - b.q_load))
        .collect();
    // unknown layout: angles of non-slack buses, then magnitudes of PQ buses
    let ang: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::PQ).collect();
    let dim = ang.len() + mag.len();

    let mismatch = |v: &[Complex64]| -> Vec<f64> {
        let s = injections(&y, v);
        ang.iter()
            .map(|&i| s[i].re - spec[i].re)
            .chain(mag.iter().map(|&i| s[i].im - spec[i].im))
            .collect()
    };
    let norm = |f: &[f64]| f.iter().fold(0.0_f64, |m, x| m.max(x.abs()));

    let mut f = mismatch(&v);
    let mut iterations = 0;
    while norm(&f) > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: norm(&f),
            });
        }
        iterations += 1;

        let (ds_dva, ds_dvm) = power_derivatives(&y, &v);
        let mut jac = Mat::<f64>::zeros(dim, dim);
        for (r, &i) in ang.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                jac[(r, c)] = ds_dva[i][j].re;
            }
            for (c, &j) in mag.iter().enumerate() {
                jac[(r, ang.len() + c)] = ds_dvm[i][j].re;
            }
        }
        for (r, &i) in mag.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                jac[(ang.len() + r, c)] = ds_dva[i][j].im;
            }
            for (c, &j) in mag.iter().enumerate() {
                jac[(ang.len() + r, ang.len() + c)] = ds_dvm[i][j].im;
            }
        }
        let rhs = Mat::<f64>::from_fn(dim, 1, |r, _| -f[r]);
        let dx = jac.partial_piv_lu().solve(&rhs);
        if (0..dim).any(|r| !dx[(r, 0)].is_finite()) {
            return Err(Error::Singular("power-flow Jacobian"));
        }
        let mut va: Vec<f64> = v.iter().map(|z| z.arg()).collect();
        let mut vm: Vec<f64> = v.iter().map(|z| z.norm()).collect();
        for (r, &i) in ang.iter().enumerate() {
            va[i] += dx[(r, 0)];
        }
        for (r, &i) in mag.iter().enumerate() {
            vm[i] += dx[(ang.len() + r, 0)];
        }
        v = vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        f = mismatch(&v);
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("power-flow mismatch".into()));
        }
    }

    if v.iter().any(|z| !(z.norm() > 0.0)) {
        return Err(Error::Validation("power flow returned a zero voltage".into()));
    }
    let s = injections(&y, &v);
    let generation = network
        .buses
        .iter()
        .zip(&s)
        .map(|(b, s)| s + Complex64::new(b.p_load, b.q_load))
        .collect();
    Ok(PowerFlowSolution {
        bus_ids: y.bus_ids.clone(),
        voltages: v,
        generation,
        mismatch_norm: norm(&f),
        iterations,
    })
}

/// Partial derivatives of complex bus injections with respect to angles and magnitudes.
fn power_derivatives(y: &YBus, v: &[Complex64]) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
    let n = v.len();
    let j = Complex64::i();
    let current: Vec<Complex64> = (0..n).map(|i| (0..n).map(|k| y.get(i, k) * v[k]).sum()).collect();
    let unit: Vec<Complex64> = v.iter().map(|z| z / z.norm()).collect();
    let mut dva = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    let mut dvm = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for r in 0..n {
        for c in 0..n {
            let yv = y.get(r, c) * v[c];
            let yu = y.get(r, c) * unit[c];
            let mut a = -j * v[r] * yv.conj();
            let mut m = v[r] * yu.conj();
            if r == c {
                a += j * v[r] * current[r].conj();
                m += current[r].conj() * unit[r];
            }
            dva[r][c] = a;
            dvm[r][c] = m;
        }
    }
    (dva, dvm)
}
