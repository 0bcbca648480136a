//! Declarative study scenarios, the analysis pipeline behind them, droop-gain
//! sweeps and report export.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::devices::{ControlMode, DroopParams};
use crate::error::{Error, Result};
use crate::kundur::{build_kundur_two_area, BaseCase, TwoAreaCase};
use crate::modal::{analyze, ClassifierConfig, ModalAnalysis, Mode, ModeClass};
use crate::powerflow::{solve_power_flow, PowerFlowOptions, PowerFlowSolution};
use crate::system::{DeviceSpec, PowerSystem};
use crate::timedomain::{simulate, Event, SimulationOptions, Trace};

pub const DEFAULT_SUPPORT_KP: f64 = 20.0;
pub const DEFAULT_SUPPORT_KIN: f64 = 0.0;
/// Ratio change of a dominant damping ratio between control modes that is flagged.
pub const CONTROL_MODE_FLAG: f64 = 0.05;
const TOP_PARTICIPANTS: usize = 5;

/// Sets one parameter. `target` is `<device>.<field path>` (for example
/// `G1.pss.k_pss` or `WF.pll.kp`), `sync.<field path>` for every
/// synchronous machine, `bus<id>.<field>` or `branch<index>.<field>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub target: String,
    pub value: Value,
}

/// A fully resolved scenario. Serializes to the same file format it is read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ScenarioFile", try_from = "RawScenario")]
pub struct Scenario {
    pub name: String,
    /// Free text, e.g. where the wind farm sits in the benchmark numbering.
    pub description: Option<String>,
    pub base_case: BaseCase,
    /// `None` for the case without a wind farm.
    pub control_mode: Option<ControlMode>,
    pub frequency_support: bool,
    pub droop: DroopParams,
    pub overrides: Vec<Override>,
    pub events: Vec<Event>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDroop {
    kp: Option<f64>,
    kin: Option<f64>,
    rocof_filter_time: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    description: Option<String>,
    base_case: BaseCase,
    control_mode: Option<ControlMode>,
    frequency_support: Option<bool>,
    droop: Option<RawDroop>,
    #[serde(default)]
    overrides: Vec<Override>,
    #[serde(default)]
    events: Vec<Event>,
}

#[derive(Serialize)]
struct ScenarioFile {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    base_case: BaseCase,
    #[serde(skip_serializing_if = "Option::is_none")]
    control_mode: Option<ControlMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frequency_support: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    droop: Option<RawDroop>,
    overrides: Vec<Override>,
    events: Vec<Event>,
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        let wind = s.has_wind();
        Self {
            name: s.name,
            description: s.description,
            base_case: s.base_case,
            control_mode: s.control_mode,
            frequency_support: wind.then_some(s.frequency_support),
            droop: wind.then_some(RawDroop {
                kp: Some(s.droop.kp),
                kin: Some(s.droop.kin),
                rocof_filter_time: Some(s.droop.rocof_filter_time),
            }),
            overrides: s.overrides,
            events: s.events,
        }
    }
}

impl TryFrom<RawScenario> for Scenario {
    type Error = Error;

    fn try_from(raw: RawScenario) -> Result<Self> {
        let name = format!("{:?}", raw.base_case);
        let s = Self::resolve(raw, &name)?;
        s.validate()?;
        Ok(s)
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

impl Scenario {
    /// Scenario with every default applied.
    pub fn new(base_case: BaseCase) -> Self {
        Self {
            name: format!("{base_case:?}"),
            description: None,
            base_case,
            control_mode: (base_case != BaseCase::A).then_some(ControlMode::Voltage),
            frequency_support: false,
            droop: DroopParams {
                kp: DEFAULT_SUPPORT_KP,
                kin: DEFAULT_SUPPORT_KIN,
                ..DroopParams::default()
            },
            overrides: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn with_support(mut self, kp: f64, kin: f64) -> Self {
        self.frequency_support = true;
        self.droop.kp = kp;
        self.droop.kin = kin;
        self.droop.enabled = true;
        self
    }

    pub fn with_control_mode(mut self, mode: ControlMode) -> Self {
        self.control_mode = Some(mode);
        self
    }

    pub fn has_wind(&self) -> bool {
        self.base_case != BaseCase::A
    }

    pub fn from_json_str(text: &str, default_name: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(path, e.into_inner().to_string())
        })?;
        let s = Self::resolve(raw, default_name)?;
        s.validate()?;
        Ok(s)
    }

    fn resolve(raw: RawScenario, default_name: &str) -> Result<Self> {
        let base = Self::new(raw.base_case);
        if raw.base_case == BaseCase::A {
            for (field, present) in [
                ("control_mode", raw.control_mode.is_some()),
                ("frequency_support", raw.frequency_support.is_some()),
                ("droop", raw.droop.is_some()),
            ] {
                if present {
                    return Err(schema(field, "base case A has no wind farm"));
                }
            }
        }
        let frequency_support = raw.frequency_support.unwrap_or(false);
        let mut droop = base.droop;
        if let Some(d) = raw.droop {
            droop.kp = d.kp.unwrap_or(DEFAULT_SUPPORT_KP);
            droop.kin = d.kin.unwrap_or(DEFAULT_SUPPORT_KIN);
            if let Some(t) = d.rocof_filter_time {
                droop.rocof_filter_time = t;
            }
        }
        droop.enabled = frequency_support;
        Ok(Self {
            name: raw.name.unwrap_or_else(|| default_name.to_string()),
            description: raw.description,
            base_case: raw.base_case,
            control_mode: raw.control_mode.or(base.control_mode),
            frequency_support,
            droop,
            overrides: raw.overrides,
            events: raw.events,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.droop.kp < 0.0 || !self.droop.kp.is_finite() {
            return Err(schema("droop.kp", "must be a non-negative number"));
        }
        if self.droop.kin < 0.0 || !self.droop.kin.is_finite() {
            return Err(schema("droop.kin", "must be a non-negative number"));
        }
        if !(self.droop.rocof_filter_time > 0.0) {
            return Err(schema("droop.rocof_filter_time", "must be positive"));
        }
        if self.has_wind() != self.control_mode.is_some() {
            return Err(schema("control_mode", "required exactly when a wind farm is present"));
        }
        for (k, e) in self.events.iter().enumerate() {
            e.validate()
                .map_err(|err| schema(format!("events[{k}]"), err.to_string()))?;
        }
        if self.events.windows(2).any(|w| w[1].t_start < w[0].t_start) {
            return Err(schema("events", "events must be sorted by start time"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex(&Sha256::digest(bytes))
    }

    /// The two-area case with scenario settings and overrides applied.
    pub fn build_case(&self) -> Result<TwoAreaCase> {
        let mut case = build_kundur_two_area(self.base_case);
        if let Some(p) = case.dfig_params_mut() {
            p.control_mode = self.control_mode.unwrap_or(ControlMode::Voltage);
            p.droop = self.droop;
        }
        for (k, o) in self.overrides.iter().enumerate() {
            apply_override(&mut case, o).map_err(|e| match e {
                Error::Schema { message, .. } => schema(format!("overrides[{k}].target"), message),
                other => schema(format!("overrides[{k}]"), other.to_string()),
            })?;
        }
        case.sync_wind_schedule();
        Ok(case)
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    Scenario::from_json_str(&text, stem)
}

const CANNED_CASES: [(&str, &str); 9] = [
    ("a_no_wind", include_str!("../../../scenarios/a_no_wind.json")),
    ("b_v_no_support", include_str!("../../../scenarios/b_v_no_support.json")),
    ("b_q_no_support", include_str!("../../../scenarios/b_q_no_support.json")),
    ("b_v_support", include_str!("../../../scenarios/b_v_support.json")),
    ("b_q_support", include_str!("../../../scenarios/b_q_support.json")),
    ("c_v_no_support", include_str!("../../../scenarios/c_v_no_support.json")),
    ("c_q_no_support", include_str!("../../../scenarios/c_q_no_support.json")),
    ("c_v_support", include_str!("../../../scenarios/c_v_support.json")),
    ("c_q_support", include_str!("../../../scenarios/c_q_support.json")),
];

/// The nine canned study cases (no wind; added wind; displaced G4 × control
/// mode × support), as shipped in the `scenarios/` directory.
pub fn canned_cases() -> Result<Vec<Scenario>> {
    CANNED_CASES
        .iter()
        .map(|(name, text)| Scenario::from_json_str(text, name))
        .collect()
}

/// Looks a canned case up by name.
pub fn canned_case(name: &str) -> Result<Scenario> {
    let (n, text) = CANNED_CASES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Validation(format!("no canned scenario `{name}`")))?;
    Scenario::from_json_str(text, n)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn patch<T: Serialize + for<'de> Deserialize<'de>>(item: &mut T, field: &str, value: &Value) -> Result<()> {
    let mut doc = serde_json::to_value(&*item)?;
    let pointer = format!("/{}", field.replace('.', "/"));
    let slot = doc
        .pointer_mut(&pointer)
        .ok_or_else(|| schema("", format!("no parameter `{field}`")))?;
    *slot = value.clone();
    *item = serde_json::from_value(doc).map_err(|e| schema("", format!("invalid value for `{field}`: {e}")))?;
    Ok(())
}

fn patch_spec(spec: &mut DeviceSpec, field: &str, value: &Value) -> Result<()> {
    match spec {
        DeviceSpec::Synchronous(p) => patch(p, field, value),
        DeviceSpec::Dfig(p) => patch(p, field, value),
        DeviceSpec::Source { .. } => patch(spec, field, value),
    }
}

fn apply_override(case: &mut TwoAreaCase, o: &Override) -> Result<()> {
    let (head, field) = o
        .target
        .split_once('.')
        .ok_or_else(|| schema("", format!("target `{}` lacks a field", o.target)))?;
    if head == "sync" {
        for p in case.sync_params_mut() {
            patch(p, field, &o.value)?;
        }
        return Ok(());
    }
    if let Some(id) = head.strip_prefix("bus").and_then(|s| s.parse::<u32>().ok()) {
        let bus = case.network.bus_mut(id).map_err(|e| schema("", e.to_string()))?;
        return patch(bus, field, &o.value);
    }
    if let Some(k) = head.strip_prefix("branch").and_then(|s| s.parse::<usize>().ok()) {
        let branch = case
            .network
            .branches
            .get_mut(k)
            .ok_or_else(|| schema("", format!("unknown branch index {k}")))?;
        return patch(branch, field, &o.value);
    }
    let device = case
        .devices
        .iter_mut()
        .find(|d| d.id == head)
        .ok_or_else(|| schema("", format!("unknown device `{head}`")))?;
    patch_spec(&mut device.spec, field, &o.value)
}

/// Everything the pipeline builds before the modal analysis.
pub struct BuiltSystem {
    pub case: TwoAreaCase,
    pub power_flow: PowerFlowSolution,
    pub system: PowerSystem,
}

pub fn build_system(scenario: &Scenario) -> Result<BuiltSystem> {
    scenario.validate()?;
    let case = scenario.build_case().map_err(|e| e.at_stage("scenario"))?;
    case.network.validate().map_err(|e| e.at_stage("network"))?;
    let power_flow =
        solve_power_flow(&case.network, PowerFlowOptions::default()).map_err(|e| e.at_stage("powerflow"))?;
    let system = PowerSystem::from_power_flow(case.network.clone(), power_flow.clone(), &case.devices)
        .map_err(|e| e.at_stage("initialization"))?;
    Ok(BuiltSystem {
        case,
        power_flow,
        system,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSummary {
    pub iterations: usize,
    pub mismatch: f64,
    pub total_generation_mw: f64,
    pub total_load_mw: f64,
    pub losses_mw: f64,
    /// Active power flowing from bus 7 towards bus 8 over both circuits.
    pub tie_flow_mw: f64,
    pub wind_generation_mw: f64,
}

impl PowerFlowSummary {
    pub fn new(case: &TwoAreaCase, pf: &PowerFlowSolution) -> Result<Self> {
        let base = case.network.system_base_mva;
        let gen = pf.total_generation().re * base;
        let load: f64 = case.network.buses.iter().map(|b| b.p_load).sum::<f64>() * base;
        let mut tie = 0.0;
        for br in case
            .network
            .branches
            .iter()
            .filter(|b| b.in_service && b.from == 7 && b.to == 8)
        {
            let vf = pf.voltage(br.from)?;
            let vt = pf.voltage(br.to)?;
            let st = br.stamp();
            tie += (vf * (st[0][0] * vf + st[0][1] * vt).conj()).re * base;
        }
        let wind = match case.wind_bus {
            Some(b) => pf.generation_at(b)?.re * base,
            None => 0.0,
        };
        Ok(Self {
            iterations: pf.iterations,
            mismatch: pf.mismatch_norm,
            total_generation_mw: gen,
            total_load_mw: load,
            losses_mw: gen - load,
            tie_flow_mw: tie,
            wind_generation_mw: wind,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub state: String,
    pub factor: f64,
}

/// Summary of one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub class: ModeClass,
    pub re: f64,
    pub im: f64,
    pub damping: f64,
    pub frequency_hz: f64,
    pub ccbg_pi: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub participants: Vec<Participant>,
}

impl ModeRecord {
    fn new(m: &Mode, labels: &[String], top: usize) -> Self {
        Self {
            class: m.classification,
            re: m.eigenvalue.re,
            im: m.eigenvalue.im,
            damping: m.damping.unwrap_or(1.0),
            frequency_hz: m.frequency_hz,
            ccbg_pi: m.ccbg_pi,
            participants: m
                .top_participants(top)
                .into_iter()
                .map(|(k, f)| Participant {
                    state: labels[k].clone(),
                    factor: f,
                })
                .collect(),
        }
    }
}

const REPORTED_CLASSES: [ModeClass; 3] = [ModeClass::InterArea, ModeClass::Local, ModeClass::ConverterControl];

fn dominant_records(ma: &ModalAnalysis, top: usize) -> BTreeMap<ModeClass, ModeRecord> {
    let labels: Vec<String> = ma.state_matrix.labels.iter().map(|l| l.qualified()).collect();
    ma.dominant()
        .into_iter()
        .filter(|(c, _)| REPORTED_CLASSES.contains(c))
        .map(|(c, m)| (c, ModeRecord::new(&m, &labels, top)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario_hash: String,
    pub tool: String,
    pub tool_version: String,
}

/// Result of running one scenario through the small-signal pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub base_case: BaseCase,
    pub control_mode: Option<ControlMode>,
    pub frequency_support: bool,
    pub kp: f64,
    pub kin: f64,
    pub power_flow: PowerFlowSummary,
    pub n_states: usize,
    pub stable: bool,
    pub dominant: BTreeMap<ModeClass, ModeRecord>,
    /// Every oscillatory mode in the upper half-plane, by increasing frequency.
    pub oscillatory_modes: Vec<ModeRecord>,
    pub provenance: Provenance,
}

impl Report {
    pub fn dominant_mode(&self, class: ModeClass) -> Option<&ModeRecord> {
        self.dominant.get(&class)
    }
}

fn provenance(scenario: &Scenario) -> Provenance {
    Provenance {
        scenario_hash: scenario.hash(),
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn run_modal(built: &BuiltSystem) -> Result<ModalAnalysis> {
    analyze(&built.system, built.system.equilibrium(), &ClassifierConfig::default()).map_err(|e| e.at_stage("modal"))
}

pub fn run_scenario(scenario: &Scenario) -> Result<Report> {
    let built = build_system(scenario)?;
    let ma = run_modal(&built)?;
    let labels: Vec<String> = ma.state_matrix.labels.iter().map(|l| l.qualified()).collect();
    let mut oscillatory: Vec<ModeRecord> = ma
        .modes
        .iter()
        .filter(|m| m.eigenvalue.im > 0.0)
        .map(|m| ModeRecord::new(m, &labels, 0))
        .collect();
    oscillatory.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz).then(a.re.total_cmp(&b.re)));
    Ok(Report {
        scenario: scenario.name.clone(),
        base_case: scenario.base_case,
        control_mode: scenario.control_mode,
        frequency_support: scenario.frequency_support,
        kp: scenario.droop.kp,
        kin: scenario.droop.kin,
        power_flow: PowerFlowSummary::new(&built.case, &built.power_flow).map_err(|e| e.at_stage("report"))?,
        n_states: ma.state_matrix.dim(),
        stable: ma.is_stable(),
        dominant: dominant_records(&ma, TOP_PARTICIPANTS),
        oscillatory_modes: oscillatory,
        provenance: provenance(scenario),
    })
}

/// Time-domain response to the scenario's events.
pub fn simulate_scenario(scenario: &Scenario, opts: &SimulationOptions) -> Result<Trace> {
    let built = build_system(scenario)?;
    let opts = SimulationOptions {
        nominal_hz: built.case.network.nominal_frequency_hz,
        ..*opts
    };
    simulate(&built.system, built.system.equilibrium(), &scenario.events, &opts)
        .map_err(|p| Error::from(p).at_stage("simulation"))
}

/// Dominant-damping differences above [`CONTROL_MODE_FLAG`] between the
/// voltage- and reactive-power-control variants of two otherwise equal reports.
pub fn control_mode_flags(voltage: &Report, reactive: &Report) -> Vec<ModeClass> {
    voltage
        .dominant
        .iter()
        .filter_map(|(c, v)| {
            let q = reactive.dominant.get(c)?;
            ((v.damping - q.damping).abs() > CONTROL_MODE_FLAG).then_some(*c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub kp: f64,
    pub kin: f64,
    pub dominant: BTreeMap<ModeClass, ModeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scenario: String,
    pub kp_values: Vec<f64>,
    pub kin_values: Vec<f64>,
    /// Row-major over `kp_values`, `kin` varying fastest.
    pub cells: Vec<SweepCell>,
    pub provenance: Provenance,
}

impl SweepResult {
    pub fn cell(&self, kp: f64, kin: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.kp == kp && c.kin == kin)
    }
}

/// Default gain axis `0, 10, …, 50`.
pub fn default_gain_axis() -> Vec<f64> {
    (0..=5).map(|k| 10.0 * k as f64).collect()
}

/// One modal analysis per `(kp, kin)` cell with support enabled; cells run in
/// parallel on the current rayon pool and failures are recorded per cell.
pub fn run_sensitivity_sweep(scenario: &Scenario, kp_values: &[f64], kin_values: &[f64]) -> Result<SweepResult> {
    if !scenario.has_wind() {
        return Err(Error::Validation("a sensitivity sweep needs a wind farm".into()));
    }
    if kp_values.is_empty() || kin_values.is_empty() {
        return Err(Error::Validation("sweep axes must be nonempty".into()));
    }
    let grid: Vec<(f64, f64)> = kp_values
        .iter()
        .flat_map(|&kp| kin_values.iter().map(move |&kin| (kp, kin)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(kp, kin)| {
            let s = scenario.clone().with_support(kp, kin);
            match build_system(&s).and_then(|b| run_modal(&b)) {
                Ok(ma) => SweepCell {
                    kp,
                    kin,
                    dominant: dominant_records(&ma, 3),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell kp={kp} kin={kin} failed: {e}");
                    SweepCell {
                        kp,
                        kin,
                        dominant: BTreeMap::new(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(SweepResult {
        scenario: scenario.name.clone(),
        kp_values: kp_values.to_vec(),
        kin_values: kin_values.to_vec(),
        cells,
        provenance: provenance(scenario),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    /// Pretty-printed JSON.
    Json,
}

impl ExportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
        }
    }
}

/// Anything that [`export_report`] can write.
#[derive(Debug, Clone, Copy)]
pub enum Exportable<'a> {
    Report(&'a Report),
    Reports(&'a [Report]),
    Sweep(&'a SweepResult),
}

const MODE_COLUMNS: [&str; 5] = ["re", "im", "damping", "frequency_hz", "ccbg_pi"];

fn mode_fields(m: Option<&ModeRecord>) -> Vec<String> {
    match m {
        Some(m) => [m.re, m.im, m.damping, m.frequency_hz, m.ccbg_pi]
            .iter()
            .map(|v| v.to_string())
            .collect(),
        None => vec![String::new(); MODE_COLUMNS.len()],
    }
}

fn mode_header(prefix: &str) -> Vec<String> {
    REPORTED_CLASSES
        .iter()
        .flat_map(|c| {
            MODE_COLUMNS
                .iter()
                .map(move |col| format!("{}{}_{col}", prefix, c.as_str()))
        })
        .collect()
}

fn write_reports_csv<W: Write>(reports: &[Report], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "scenario",
        "base_case",
        "control_mode",
        "frequency_support",
        "kp",
        "kin",
        "stable",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(mode_header(""));
    wr.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.scenario.clone(),
            format!("{:?}", r.base_case),
            r.control_mode.map(|m| m.as_str().to_string()).unwrap_or_default(),
            r.frequency_support.to_string(),
            r.kp.to_string(),
            r.kin.to_string(),
            r.stable.to_string(),
        ];
        for c in REPORTED_CLASSES {
            row.extend(mode_fields(r.dominant.get(&c)));
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

fn write_sweep_csv<W: Write>(sweep: &SweepResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["kp".to_string(), "kin".to_string()];
    header.extend(mode_header(""));
    header.push("error".into());
    wr.write_record(&header)?;
    for cell in &sweep.cells {
        let mut row = vec![cell.kp.to_string(), cell.kin.to_string()];
        for c in REPORTED_CLASSES {
            row.extend(mode_fields(cell.dominant.get(&c)));
        }
        row.push(cell.error.clone().unwrap_or_default());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `item` to `w` in the requested format. Output depends only on the input.
pub fn write_export<W: Write>(item: Exportable<'_>, format: ExportFormat, mut w: W) -> Result<()> {
    match (format, item) {
        (ExportFormat::Csv, Exportable::Report(r)) => write_reports_csv(std::slice::from_ref(r), w),
        (ExportFormat::Csv, Exportable::Reports(rs)) => write_reports_csv(rs, w),
        (ExportFormat::Csv, Exportable::Sweep(s)) => write_sweep_csv(s, w),
        (ExportFormat::Json, item) => {
            match item {
                Exportable::Report(r) => serde_json::to_writer_pretty(&mut w, r)?,
                Exportable::Reports(rs) => serde_json::to_writer_pretty(&mut w, rs)?,
                Exportable::Sweep(s) => serde_json::to_writer_pretty(&mut w, s)?,
            }
            w.write_all(b"\n")?;
            Ok(())
        }
    }
}

pub fn export_report(item: Exportable<'_>, format: ExportFormat, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_export(item, format, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn parse_report(text: &str) -> Result<Report> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_reports(text: &str) -> Result<Vec<Report>> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_sweep(text: &str) -> Result<SweepResult> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_json_str(r#"{"base_case": "A"}"#, "a").unwrap();
        assert_eq!(
            s,
            Scenario {
                name: "a".into(),
                ..Scenario::new(BaseCase::A)
            }
        );
        assert!(!s.frequency_support);
        assert!(s.control_mode.is_none());
    }

    #[test]
    fn droop_patch_keeps_kin_default() {
        let s = Scenario::from_json_str(
            r#"{"base_case": "B", "control_mode": "reactive_power", "frequency_support": true, "droop": {"kp": 20}}"#,
            "b",
        )
        .unwrap();
        assert_eq!(s.control_mode, Some(ControlMode::ReactivePower));
        assert_eq!((s.droop.kp, s.droop.kin, s.droop.enabled), (20.0, 0.0, true));
    }

    #[test]
    fn support_without_gains_uses_default_kp() {
        let s = Scenario::from_json_str(r#"{"base_case": "C", "frequency_support": true}"#, "c").unwrap();
        assert_eq!((s.droop.kp, s.droop.kin), (DEFAULT_SUPPORT_KP, 0.0));
        assert_eq!(s.control_mode, Some(ControlMode::Voltage));
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = Scenario::from_json_str(r#"{"base_case": "B", "droop": {"kp_typo": 1}}"#, "x").unwrap_err();
        match err {
            Error::Schema { path, .. } => assert_eq!(path, "droop.kp_typo"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn case_a_rejects_wind_fields() {
        let err = Scenario::from_json_str(r#"{"base_case": "A", "control_mode": "voltage"}"#, "x").unwrap_err();
        assert!(matches!(err, Error::Schema { ref path, .. } if path == "control_mode"));
        let s = Scenario {
            overrides: vec![Override {
                target: "WF.pll.kp".into(),
                value: 1.0.into(),
            }],
            ..Scenario::new(BaseCase::A)
        };
        assert!(matches!(s.build_case(), Err(Error::Schema { ref path, .. }) if path == "overrides[0].target"));
    }

    #[test]
    fn overrides_patch_parameters() {
        let s = Scenario {
            overrides: vec![
                Override {
                    target: "sync.governor.tg".into(),
                    value: 2.0.into(),
                },
                Override {
                    target: "G2.h".into(),
                    value: 7.0.into(),
                },
                Override {
                    target: "bus7.p_load".into(),
                    value: 9.0.into(),
                },
                Override {
                    target: "WF.pll.kp".into(),
                    value: 0.02.into(),
                },
            ],
            ..Scenario::new(BaseCase::B)
        };
        let mut case = s.build_case().unwrap();
        assert!(case.sync_params_mut().all(|p| p.governor.tg == 2.0));
        let h2 = case.devices.iter().find_map(|d| match &d.spec {
            DeviceSpec::Synchronous(p) if d.id == "G2" => Some(p.h),
            _ => None,
        });
        assert_eq!(h2, Some(7.0));
        assert_eq!(case.network.bus(7).unwrap().p_load, 9.0);
        assert_eq!(case.dfig_params_mut().unwrap().pll.kp, 0.02);
    }

    #[test]
    fn bad_override_is_rejected() {
        for target in ["G1.no_such", "G9.h", "nofield", "branch99.x"] {
            let s = Scenario {
                overrides: vec![Override {
                    target: target.into(),
                    value: 1.0.into(),
                }],
                ..Scenario::new(BaseCase::A)
            };
            assert!(s.build_case().is_err(), "{target}");
        }
        let s = Scenario {
            overrides: vec![Override {
                target: "G1.h".into(),
                value: "fast".into(),
            }],
            ..Scenario::new(BaseCase::A)
        };
        assert!(s.build_case().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Scenario::new(BaseCase::B);
        assert_eq!(a.hash(), Scenario::new(BaseCase::B).hash());
        assert_ne!(a.hash(), a.clone().with_support(20.0, 0.0).hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sweep_requires_wind() {
        assert!(run_sensitivity_sweep(&Scenario::new(BaseCase::A), &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn canned_cases_load() {
        let cases = canned_cases().unwrap();
        assert_eq!(cases.len(), 9);
        assert_eq!(cases.iter().filter(|s| s.frequency_support).count(), 4);
        assert_eq!(
            canned_case("c_q_support").unwrap().control_mode,
            Some(ControlMode::ReactivePower)
        );
        assert!(canned_case("d").is_err());
    }

    #[test]
    fn gain_axis() {
        assert_eq!(default_gain_axis(), vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
    }
}
