//! Multi-machine power system: network plus dynamic devices.

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::devices::{DeviceClass, DeviceModel, Dfig, DfigParams, InfiniteSource, SyncGen, SyncGenParams};
use crate::error::{Error, Result};
use crate::model::{DaeModel, Dynamics, StateLabel};
use crate::network::{build_ybus_with_loads, Network};
use crate::powerflow::PowerFlowSolution;
use crate::timedomain::{EventAction, FaultLocation};

/// What sits at a bus and with which parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DeviceSpec {
    Synchronous(SyncGenParams),
    Dfig(DfigParams),
    Source { base_mva: f64, reactance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePlacement {
    pub id: String,
    pub bus: u32,
    pub spec: DeviceSpec,
}

pub struct PlacedDevice {
    pub id: String,
    pub bus: u32,
    pub bus_pos: usize,
    pub offset: usize,
    pub model: Box<dyn DeviceModel>,
}

impl PlacedDevice {
    fn states<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.offset..self.offset + self.model.n_states()]
    }

    /// Per-unit scale from the device base to the system base.
    fn scale(&self, system_base: f64) -> f64 {
        self.model.base_mva() / system_base
    }
}

/// Active network configuration: tripped branches, applied faults, load steps.
#[derive(Clone)]
pub struct NetworkCondition {
    pub faults: Vec<(FaultLocation, Complex64)>,
    pub tripped: Vec<usize>,
    pub extra_shunts: Vec<(u32, Complex64)>,
    ybus: Mat<Complex64>,
    lu: PartialPivLu<Complex64>,
}

impl NetworkCondition {
    pub fn ybus(&self) -> &Mat<Complex64> {
        &self.ybus
    }
}

pub struct PowerSystem {
    pub network: Network,
    pub power_flow: PowerFlowSolution,
    pub devices: Vec<PlacedDevice>,
    pub load_admittances: Vec<Complex64>,
    n_states: usize,
    base: NetworkCondition,
    equilibrium: Vec<f64>,
}

impl PowerSystem {
    /// Initializes every device at the power-flow operating point; loads become
    /// constant admittances at the solved voltages.
    pub fn from_power_flow(
        network: Network,
        power_flow: PowerFlowSolution,
        placements: &[DevicePlacement],
    ) -> Result<Self> {
        network.validate()?;
        let omega0 = network.omega0();
        let sbase = network.system_base_mva;
        let mut devices = Vec::with_capacity(placements.len());
        let mut x0 = Vec::new();
        let mut occupied = vec![false; network.buses.len()];
        for pl in placements {
            let pos = network.position(pl.bus)?;
            if std::mem::replace(&mut occupied[pos], true) {
                return Err(Error::Validation(format!("more than one device at bus {}", pl.bus)));
            }
            let v = power_flow.voltages[pos];
            let s_sys = power_flow.generation[pos];
            let (model, x): (Box<dyn DeviceModel>, Vec<f64>) = match &pl.spec {
                DeviceSpec::Synchronous(p) => {
                    let (g, x) = SyncGen::initialize(*p, omega0, v, s_sys * sbase / p.base_mva)
                        .map_err(|e| e.at_stage("machine initialization"))?;
                    (Box::new(g), x)
                }
                DeviceSpec::Dfig(p) => {
                    let (d, x) = Dfig::initialize(*p, omega0, v, s_sys * sbase / p.base_mva)
                        .map_err(|e| e.at_stage("wind farm initialization"))?;
                    (Box::new(d), x)
                }
                DeviceSpec::Source { base_mva, reactance } => {
                    let (s, x) = InfiniteSource::initialize(*base_mva, *reactance, omega0, v, s_sys * sbase / base_mva);
                    (Box::new(s), x)
                }
            };
            devices.push(PlacedDevice {
                id: pl.id.clone(),
                bus: pl.bus,
                bus_pos: pos,
                offset: x0.len(),
                model,
            });
            x0.extend(x);
        }
        for (k, bus) in network.buses.iter().enumerate() {
            if !occupied[k] && power_flow.generation[k].norm() > 1e-6 {
                return Err(Error::Validation(format!(
                    "bus {} injects power but has no device",
                    bus.id
                )));
            }
        }
        let load_admittances = network.load_admittances(&power_flow.voltages);
        let mut sys = PowerSystem {
            network,
            power_flow,
            devices,
            load_admittances,
            n_states: x0.len(),
            base: NetworkCondition {
                faults: Vec::new(),
                tripped: Vec::new(),
                extra_shunts: Vec::new(),
                ybus: Mat::zeros(0, 0),
                lu: Mat::<Complex64>::identity(1, 1).partial_piv_lu(),
            },
            equilibrium: x0,
        };
        let mut base = sys.base.clone();
        sys.refresh(&mut base)?;
        sys.base = base;
        Ok(sys)
    }

    pub fn equilibrium(&self) -> &[f64] {
        &self.equilibrium
    }

    pub fn omega0(&self) -> f64 {
        self.network.omega0()
    }

    pub fn device(&self, id: &str) -> Option<&PlacedDevice> {
        self.devices.iter().find(|d| d.id == id)
    }

    /// Offset of a named state of a named device in the state vector.
    pub fn state_index(&self, device: &str, state: &str) -> Option<usize> {
        let d = self.device(device)?;
        d.model
            .state_names()
            .iter()
            .position(|n| *n == state)
            .map(|k| d.offset + k)
    }

    pub fn device_states<'a>(&self, id: &str, x: &'a [f64]) -> Option<&'a [f64]> {
        self.device(id).map(|d| d.states(x))
    }

    pub fn has_converter(&self) -> bool {
        self.devices
            .iter()
            .any(|d| d.model.class() == DeviceClass::ConverterBased)
    }

    fn refresh(&self, cond: &mut NetworkCondition) -> Result<()> {
        let mut net = self.network.clone();
        for &k in &cond.tripped {
            net.branches.get_mut(k).ok_or(Error::UnknownBranch(k))?.in_service = false;
        }
        // fault branches are replaced by their reduced equivalent below
        let mut midpoints = Vec::new();
        for (loc, y) in &cond.faults {
            if let FaultLocation::BranchMidpoint(k) = loc {
                let br = net.branches.get_mut(*k).ok_or(Error::UnknownBranch(*k))?;
                if br.tap != 1.0 {
                    return Err(Error::Validation("midpoint faults are only supported on lines".into()));
                }
                if br.in_service {
                    br.in_service = false;
                    midpoints.push((br.clone(), *y));
                }
            }
        }
        let ybus = build_ybus_with_loads(&net, &self.power_flow.voltages)?;
        let mut y = ybus.matrix;
        let sbase = self.network.system_base_mva;
        for d in &self.devices {
            y[(d.bus_pos, d.bus_pos)] += d.model.shunt_admittance() * d.scale(sbase);
        }
        for (br, yf) in midpoints {
            let (i, j) = (self.network.position(br.from)?, self.network.position(br.to)?);
            let half_series = Complex64::new(br.r, br.x) * 0.5;
            let a = half_series.inv() + Complex64::new(0.0, 0.25 * br.b_shunt);
            let c = -half_series.inv();
            let ymm = 2.0 * a + yf;
            y[(i, i)] += a - c * c / ymm;
            y[(j, j)] += a - c * c / ymm;
            y[(i, j)] -= c * c / ymm;
            y[(j, i)] -= c * c / ymm;
        }
        for (loc, yf) in &cond.faults {
            if let FaultLocation::Bus(b) = loc {
                let k = self.network.position(*b)?;
                y[(k, k)] += yf;
            }
        }
        for (b, ys) in &cond.extra_shunts {
            let k = self.network.position(*b)?;
            y[(k, k)] += ys;
        }
        cond.lu = y.partial_piv_lu();
        cond.ybus = y;
        Ok(())
    }

    fn source_currents(&self, x: &[f64]) -> Vec<Complex64> {
        let sbase = self.network.system_base_mva;
        let mut inj = vec![Complex64::new(0.0, 0.0); self.network.buses.len()];
        for d in &self.devices {
            inj[d.bus_pos] += d.model.source_current(d.states(x)) * d.scale(sbase);
        }
        inj
    }

    /// Bus voltages consistent with the device states under `cond`.
    pub fn bus_voltages(&self, cond: &NetworkCondition, x: &[f64]) -> Result<Vec<Complex64>> {
        let inj = self.source_currents(x);
        let rhs = Mat::<Complex64>::from_fn(inj.len(), 1, |i, _| inj[i]);
        let v = cond.lu.solve(&rhs);
        let out: Vec<Complex64> = (0..inj.len()).map(|i| v[(i, 0)]).collect();
        if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Singular("network admittance matrix"));
        }
        Ok(out)
    }

    /// Voltage at the midpoint of a branch, for midpoint faults.
    pub fn midpoint_voltage(&self, cond: &NetworkCondition, branch: usize, v: &[Complex64]) -> Result<Complex64> {
        let br = self.network.branches.get(branch).ok_or(Error::UnknownBranch(branch))?;
        let (i, j) = (self.network.position(br.from)?, self.network.position(br.to)?);
        let yh = (Complex64::new(br.r, br.x) * 0.5).inv();
        let yf: Complex64 = cond
            .faults
            .iter()
            .filter(|(l, _)| *l == FaultLocation::BranchMidpoint(branch))
            .map(|(_, y)| y)
            .sum();
        let ymm = 2.0 * yh + Complex64::new(0.0, 0.5 * br.b_shunt) + yf;
        Ok(yh * (v[i] + v[j]) / ymm)
    }

    pub fn base_condition(&self) -> NetworkCondition {
        self.base.clone()
    }

    fn device_derivatives(&self, x: &[f64], v: &[Complex64], dx: &mut [f64]) -> Result<()> {
        for d in &self.devices {
            let n = d.model.n_states();
            d.model
                .derivatives(d.states(x), v[d.bus_pos], &mut dx[d.offset..d.offset + n])?;
        }
        Ok(())
    }

    /// Reduced right-hand side under an arbitrary network condition.
    pub fn derivatives_under(&self, cond: &NetworkCondition, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let v = self.bus_voltages(cond, x)?;
        self.device_derivatives(x, &v, dx)
    }

    /// Active power of each device on the system base.
    pub fn device_powers(&self, x: &[f64], v: &[Complex64]) -> Vec<f64> {
        let sbase = self.network.system_base_mva;
        self.devices
            .iter()
            .map(|d| d.model.active_power(d.states(x), v[d.bus_pos]) * d.scale(sbase))
            .collect()
    }

    /// Power absorbed by the network (branches, loads, shunts, faults) on the system base.
    pub fn network_absorption(&self, cond: &NetworkCondition, v: &[Complex64]) -> f64 {
        // device Norton shunts belong to the devices, not the network
        let sbase = self.network.system_base_mva;
        let n = v.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut current: Complex64 = (0..n).map(|j| cond.ybus[(i, j)] * v[j]).sum();
            for d in self.devices.iter().filter(|d| d.bus_pos == i) {
                current -= d.model.shunt_admittance() * d.scale(sbase) * v[i];
            }
            total += (v[i] * current.conj()).re;
        }
        total
    }
}

impl Dynamics for PowerSystem {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn state_labels(&self) -> Vec<StateLabel> {
        self.devices
            .iter()
            .flat_map(|d| {
                let class = d.model.class();
                d.model
                    .state_names()
                    .into_iter()
                    .map(move |n| StateLabel::new(d.id.clone(), n, class))
            })
            .collect()
    }

    fn derivatives(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        self.derivatives_under(&self.base, x, dx)
    }
}

fn split(v: &[Complex64]) -> Vec<f64> {
    v.iter().flat_map(|z| [z.re, z.im]).collect()
}

fn join(y: &[f64]) -> Vec<Complex64> {
    y.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

impl DaeModel for PowerSystem {
    type Condition = NetworkCondition;

    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_algebraic(&self) -> usize {
        2 * self.network.buses.len()
    }

    fn initial_condition(&self) -> NetworkCondition {
        self.base.clone()
    }

    fn residual(&self, cond: &NetworkCondition, x: &[f64], y: &[f64], f: &mut [f64], g: &mut [f64]) -> Result<()> {
        let v = join(y);
        self.device_derivatives(x, &v, f)?;
        let inj = self.source_currents(x);
        let n = v.len();
        for i in 0..n {
            let mut r: Complex64 = (0..n).map(|j| cond.ybus[(i, j)] * v[j]).sum();
            r -= inj[i];
            g[2 * i] = r.re;
            g[2 * i + 1] = r.im;
        }
        Ok(())
    }

    fn solve_algebraic(&self, cond: &NetworkCondition, x: &[f64], _guess: &[f64]) -> Result<Vec<f64>> {
        Ok(split(&self.bus_voltages(cond, x)?))
    }

    fn apply_event(&self, cond: &mut NetworkCondition, action: &EventAction) -> Result<()> {
        match action {
            EventAction::ApplyFault { location, admittance } => {
                self.check_location(location)?;
                cond.faults.push((*location, *admittance));
            }
            EventAction::ClearFault { location } => {
                let before = cond.faults.len();
                cond.faults.retain(|(l, _)| l != location);
                if cond.faults.len() == before {
                    return Err(Error::Validation(format!("no active fault at {location:?}")));
                }
            }
            EventAction::AddShunt { bus, admittance } => {
                self.network.position(*bus)?;
                cond.extra_shunts.push((*bus, *admittance));
            }
            EventAction::TripBranch(k) => {
                if *k >= self.network.branches.len() {
                    return Err(Error::UnknownBranch(*k));
                }
                if !cond.tripped.contains(k) {
                    cond.tripped.push(*k);
                }
            }
        }
        self.refresh(cond)
    }

    fn state_names(&self) -> Vec<String> {
        self.state_labels().iter().map(StateLabel::qualified).collect()
    }

    fn output_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for d in &self.devices {
            names.push(format!("{}.speed", d.id));
            names.push(format!("{}.p", d.id));
            names.push(format!("{}.df", d.id));
        }
        for b in &self.network.buses {
            names.push(format!("bus{}.vm", b.id));
        }
        names
    }

    fn outputs(&self, _cond: &NetworkCondition, x: &[f64], y: &[f64]) -> Vec<f64> {
        let v = join(y);
        let mut out = Vec::new();
        for d in &self.devices {
            let xs = d.states(x);
            let vb = v[d.bus_pos];
            out.push(d.model.rotor_speed(xs).unwrap_or(f64::NAN));
            out.push(d.model.active_power(xs, vb));
            out.push(d.model.measured_frequency(xs, vb).unwrap_or(f64::NAN));
        }
        out.extend(v.iter().map(|z| z.norm()));
        out
    }

    fn warnings(&self, x: &[f64]) -> Vec<String> {
        self.devices
            .iter()
            .flat_map(|d| {
                d.model
                    .limit_warnings(d.states(x))
                    .into_iter()
                    .map(move |w| format!("{}: {w}", d.id))
            })
            .collect()
    }
}

impl PowerSystem {
    fn check_location(&self, loc: &FaultLocation) -> Result<()> {
        match loc {
            FaultLocation::Bus(b) => self.network.position(*b).map(|_| ()),
            FaultLocation::BranchMidpoint(k) if *k < self.network.branches.len() => Ok(()),
            FaultLocation::BranchMidpoint(k) => Err(Error::UnknownBranch(*k)),
        }
    }
}
