//! The two-area, four-machine benchmark system and its wind-farm variants.
//!
//! Bus numbering follows the classic benchmark (generators on buses 1-4,
//! 230 kV buses 5-11, loads on 7 and 9, tie-line 7-8-9). The wind farm
//! connects at bus [`WIND_BUS`], a low-voltage bus stepped up to bus 10 on
//! G4's side of the system; it plays the role of "bus 5" in the modified
//! one-line diagram.

use serde::{Deserialize, Serialize};

use crate::devices::{ControlMode, DfigParams, SyncGenParams};
use crate::network::{Branch, Bus, BusKind, Network};
use crate::system::{DevicePlacement, DeviceSpec};

pub const WIND_BUS: u32 = 12;
/// Bus at the middle of the 220 km tie-line.
pub const TIE_MIDPOINT_BUS: u32 = 8;
pub const SYSTEM_BASE_MVA: f64 = 100.0;

/// Wind farm rating when added next to G4.
pub const WIND_ADDED_MVA: f64 = 300.0;
/// Wind farm rating when it displaces G4.
pub const WIND_DISPLACING_MVA: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseCase {
    /// Original four-machine system.
    A,
    /// Wind farm added alongside G4.
    B,
    /// Wind farm replacing G4.
    C,
}

/// Network, device table and the bus of the wind farm (if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoAreaCase {
    pub case: BaseCase,
    pub network: Network,
    pub devices: Vec<DevicePlacement>,
    pub wind_bus: Option<u32>,
}

impl TwoAreaCase {
    pub fn dfig_params_mut(&mut self) -> Option<&mut DfigParams> {
        self.devices.iter_mut().find_map(|d| match &mut d.spec {
            DeviceSpec::Dfig(p) => Some(p),
            _ => None,
        })
    }

    pub fn sync_params_mut(&mut self) -> impl Iterator<Item = &mut SyncGenParams> {
        self.devices.iter_mut().filter_map(|d| match &mut d.spec {
            DeviceSpec::Synchronous(p) => Some(p),
            _ => None,
        })
    }

    /// Re-derives the wind bus type and schedule from the farm's control mode and dispatch.
    pub fn sync_wind_schedule(&mut self) {
        let Some(bus_id) = self.wind_bus else { return };
        let Some(params) = self.devices.iter().find_map(|d| match &d.spec {
            DeviceSpec::Dfig(p) => Some(*p),
            _ => None,
        }) else {
            return;
        };
        let sbase = self.network.system_base_mva;
        if let Some(bus) = self.network.buses.iter_mut().find(|b| b.id == bus_id) {
            bus.p_gen = params.dispatch * params.base_mva / sbase;
            match params.control_mode {
                ControlMode::Voltage => {
                    bus.kind = BusKind::PV;
                    bus.voltage_mag = 1.0;
                }
                ControlMode::ReactivePower => {
                    bus.kind = BusKind::PQ;
                    bus.q_gen = 0.0;
                }
            }
        }
    }
}

fn bus(id: u32, kind: BusKind, base_kv: f64, voltage_mag: f64, p_gen: f64) -> Bus {
    Bus {
        id,
        kind,
        base_kv,
        voltage_mag,
        voltage_angle: 0.0,
        p_load: 0.0,
        q_load: 0.0,
        p_gen,
        q_gen: 0.0,
        g_shunt: 0.0,
        b_shunt: 0.0,
    }
}

fn line(from: u32, to: u32, km: f64) -> Branch {
    // 230 kV line constants per km on the 100 MVA base
    Branch::line(from, to, 1e-4 * km, 1e-3 * km, 1.75e-3 * km)
}

fn transformer(from: u32, to: u32, rating_mva: f64) -> Branch {
    Branch::line(from, to, 0.0, 0.15 * SYSTEM_BASE_MVA / rating_mva, 0.0)
}

/// Builds the two-area system for the requested base case.
pub fn build_kundur_two_area(case: BaseCase) -> TwoAreaCase {
    let dispatch = 6.0;
    let mut buses = vec![
        bus(1, BusKind::Slack, 20.0, 1.03, 0.0),
        bus(2, BusKind::PV, 20.0, 1.01, dispatch),
        bus(3, BusKind::PV, 20.0, 1.03, dispatch),
        bus(4, BusKind::PV, 20.0, 1.01, dispatch),
    ];
    for id in 5..=11 {
        buses.push(bus(id, BusKind::PQ, 230.0, 1.0, 0.0));
    }
    {
        let b7 = &mut buses[6];
        b7.p_load = 9.67;
        b7.q_load = 1.0;
        b7.b_shunt = 2.0;
    }
    {
        let b9 = &mut buses[8];
        b9.p_load = 13.33;
        b9.q_load = 1.0;
        b9.b_shunt = 3.5;
    }
    let mut branches = vec![
        transformer(1, 5, 900.0),
        transformer(2, 6, 900.0),
        transformer(3, 11, 900.0),
        transformer(4, 10, 900.0),
        line(5, 6, 25.0),
        line(6, 7, 10.0),
        line(7, 8, 110.0),
        line(7, 8, 110.0),
        line(8, 9, 110.0),
        line(8, 9, 110.0),
        line(9, 10, 10.0),
        line(10, 11, 25.0),
    ];

    let mut devices: Vec<DevicePlacement> = [(1u32, 6.5), (2, 6.5), (3, 6.175), (4, 6.175)]
        .into_iter()
        .map(|(b, h)| {
            let mut p = SyncGenParams::two_area(h);
            // loosely damped starting point
            p.pss.k_pss = 10.0;
            p.pss.t3 = 0.05;
            p.pss.t4 = 2.0;
            p.governor.tg = 5.0;
            DevicePlacement {
                id: format!("G{b}"),
                bus: b,
                spec: DeviceSpec::Synchronous(p),
            }
        })
        .collect();

    let wind_mva = match case {
        BaseCase::A => None,
        BaseCase::B => Some(WIND_ADDED_MVA),
        BaseCase::C => Some(WIND_DISPLACING_MVA),
    };
    if case == BaseCase::C {
        devices.retain(|d| d.id != "G4");
        let b4 = &mut buses[3];
        b4.kind = BusKind::PQ;
        b4.p_gen = 0.0;
        b4.voltage_mag = 1.0;
    }
    let mut wind_bus = None;
    if let Some(mva) = wind_mva {
        buses.push(bus(WIND_BUS, BusKind::PV, 20.0, 1.0, 0.0));
        branches.push(transformer(WIND_BUS, 10, mva));
        devices.push(DevicePlacement {
            id: "WF".into(),
            bus: WIND_BUS,
            spec: DeviceSpec::Dfig(DfigParams::with_base(mva)),
        });
        wind_bus = Some(WIND_BUS);
    }

    let mut out = TwoAreaCase {
        case,
        network: Network {
            buses,
            branches,
            system_base_mva: SYSTEM_BASE_MVA,
            nominal_frequency_hz: 60.0,
        },
        devices,
        wind_bus,
    };
    out.sync_wind_schedule();
    out
}

/// Index of the first tie-line circuit (7-8).
pub fn tie_line_branch(case: &TwoAreaCase) -> usize {
    case.network
        .branches
        .iter()
        .position(|b| b.from == 7 && b.to == 8)
        .expect("tie-line present in the benchmark data")
}
