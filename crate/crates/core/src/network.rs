//! Transmission network in per-unit and its bus admittance matrix.

use std::collections::{BTreeMap, VecDeque};

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    #[serde(rename = "pv")]
    PV,
    #[serde(rename = "pq")]
    PQ,
}

/// A network bus. Powers are per-unit on the system base; positive load consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub base_kv: f64,
    /// Set point for slack/PV buses, initial guess otherwise.
    #[serde(default = "one")]
    pub voltage_mag: f64,
    #[serde(default)]
    pub voltage_angle: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    /// Scheduled generation (ignored on the slack bus; `q_gen` only used on PQ buses).
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default)]
    pub q_gen: f64,
    /// Fixed shunt admittance, e.g. capacitor banks (positive `b_shunt` is capacitive).
    #[serde(default)]
    pub g_shunt: f64,
    #[serde(default)]
    pub b_shunt: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// A pi-model line or transformer. `tap` sits on the `from` side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default = "one")]
    pub tap: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

impl Branch {
    pub fn line(from: u32, to: u32, r: f64, x: f64, b_shunt: f64) -> Self {
        Self {
            from,
            to,
            r,
            x,
            b_shunt,
            tap: 1.0,
            in_service: true,
        }
    }

    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }

    /// Two-port admittance stamp `[[yff, yft], [ytf, ytt]]`.
    pub fn stamp(&self) -> [[Complex64; 2]; 2] {
        let y = self.series_admittance();
        let half = Complex64::new(0.0, 0.5 * self.b_shunt);
        let t = self.tap;
        [[(y + half) / (t * t), -y / t], [-y / t, y + half]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub system_base_mva: f64,
    #[serde(default = "sixty")]
    pub nominal_frequency_hz: f64,
}

fn sixty() -> f64 {
    60.0
}

/// Dense complex matrix together with the bus-id ordering of its rows.
#[derive(Debug, Clone)]
pub struct YBus {
    pub bus_ids: Vec<u32>,
    pub matrix: Mat<Complex64>,
}

impl YBus {
    pub fn dim(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[(i, j)]
    }
}

impl Network {
    pub fn bus_index(&self) -> BTreeMap<u32, usize> {
        self.buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect()
    }

    pub fn position(&self, id: u32) -> Result<usize> {
        self.buses.iter().position(|b| b.id == id).ok_or(Error::UnknownBus(id))
    }

    pub fn bus(&self, id: u32) -> Result<&Bus> {
        self.buses.iter().find(|b| b.id == id).ok_or(Error::UnknownBus(id))
    }

    pub fn bus_mut(&mut self, id: u32) -> Result<&mut Bus> {
        self.buses.iter_mut().find(|b| b.id == id).ok_or(Error::UnknownBus(id))
    }

    pub fn omega0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.nominal_frequency_hz
    }

    /// Checks structural invariants: unique ids, one slack bus, sane branches, connectivity.
    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::Validation("network has no buses".into()));
        }
        if !(self.system_base_mva > 0.0) {
            return Err(Error::Validation("system base must be positive".into()));
        }
        let index = self.bus_index();
        if index.len() != self.buses.len() {
            return Err(Error::Validation("duplicate bus id".into()));
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one slack bus, found {slack}"
            )));
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from == br.to {
                return Err(Error::Validation(format!(
                    "branch {k} connects bus {} to itself",
                    br.from
                )));
            }
            if br.x == 0.0 {
                return Err(Error::Validation(format!("branch {k} has zero reactance")));
            }
            if !(br.tap > 0.0) {
                return Err(Error::Validation(format!("branch {k} has non-positive tap")));
            }
            for id in [br.from, br.to] {
                if !index.contains_key(&id) {
                    return Err(Error::UnknownBus(id));
                }
            }
        }
        self.check_connected(&index)
    }

    fn check_connected(&self, index: &BTreeMap<u32, usize>) -> Result<()> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (i, j) = (index[&br.from], index[&br.to]);
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(k) => Err(Error::Disconnected(self.buses[k].id, self.buses[0].id)),
            None => Ok(()),
        }
    }

    /// Constant-impedance equivalent of each bus load at the given voltages.
    pub fn load_admittances(&self, voltages: &[Complex64]) -> Vec<Complex64> {
        self.buses
            .iter()
            .zip(voltages)
            .map(|(b, v)| Complex64::new(b.p_load, -b.q_load) / v.norm_sqr())
            .collect()
    }
}

/// Bus admittance matrix from branches and fixed bus shunts.
pub fn build_ybus(network: &Network) -> Result<YBus> {
    network.validate()?;
    Ok(assemble(network, None))
}

/// Same as [`build_ybus`] with bus loads folded in as constant admittances at `voltages`.
pub fn build_ybus_with_loads(network: &Network, voltages: &[Complex64]) -> Result<YBus> {
    network.validate()?;
    if voltages.len() != network.buses.len() {
        return Err(Error::Validation("voltage vector length mismatch".into()));
    }
    let loads = network.load_admittances(voltages);
    Ok(assemble(network, Some(&loads)))
}

fn assemble(network: &Network, loads: Option<&[Complex64]>) -> YBus {
    let n = network.buses.len();
    let index = network.bus_index();
    let mut m = Mat::<Complex64>::zeros(n, n);
    for br in network.branches.iter().filter(|b| b.in_service) {
        let (i, j) = (index[&br.from], index[&br.to]);
        let s = br.stamp();
        m[(i, i)] += s[0][0];
        m[(i, j)] += s[0][1];
        m[(j, i)] += s[1][0];
        m[(j, j)] += s[1][1];
    }
    for (k, b) in network.buses.iter().enumerate() {
        m[(k, k)] += Complex64::new(b.g_shunt, b.b_shunt);
        if let Some(loads) = loads {
            m[(k, k)] += loads[k];
        }
    }
    YBus {
        bus_ids: network.buses.iter().map(|b| b.id).collect(),
        matrix: m,
    }
}
