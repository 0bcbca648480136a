//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;

use windstab::devices::DeviceClass;
use windstab::kundur::{build_kundur_two_area, BaseCase};
use windstab::modal::{decompose, linearize, participation_factors, ModalAnalysis, ModeClass};
use windstab::model::{Dynamics, StateLabel};
use windstab::network::{BusKind, Network};
use windstab::powerflow::{solve_power_flow, PowerFlowOptions, PowerFlowSolution};
use windstab::scenario::{build_system, canned_case, run_modal, run_scenario, simulate_scenario, Report};
use windstab::smib::{smib_eigenvalues, smib_sensitivity_grid, smib_system_matrix, to_mat, SmibModel, SmibParams};
use windstab::timedomain::{ringdown_fit, SimulationOptions};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const GAINS: [f64; 6] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0];
const OMEGA0: f64 = 2.0 * std::f64::consts::PI * 60.0;

/// Roots of `s^2 - tr s + det` for the swing equation with droop, from raw parameters.
fn smib_oracle(h: f64, kd: f64, ks: f64, kp: f64, kin: f64) -> (Complex64, Complex64) {
    let m = 2.0 * h + kin;
    let tr = -(kp + kd) / m;
    let det = ks * OMEGA0 / m;
    let disc = Complex64::new(tr * tr / 4.0 - det, 0.0).sqrt();
    (tr / 2.0 + disc, tr / 2.0 - disc)
}

fn oracle_damping(l: Complex64) -> f64 {
    -l.re / l.norm()
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Largest relative distance between two eigenvalue sets, matched greedily.
fn set_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut free: Vec<Complex64> = b.to_vec();
    let mut worst: f64 = 0.0;
    for x in a {
        let (k, d) = free
            .iter()
            .enumerate()
            .map(|(k, y)| (k, rel(*x, *y)))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal sizes");
        worst = worst.max(d);
        free.remove(k);
    }
    worst
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn smib_numeric_match() -> Outcome {
    let start = Instant::now();
    let base = SmibParams::default();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for kp in GAINS {
        for kin in GAINS {
            let p = base.with_droop(kp, kin);
            let closed = smib_eigenvalues(&p).map_err(err)?;
            let numeric = decompose(&to_mat(&smib_system_matrix(&p).map_err(err)?)).map_err(err)?;
            worst = worst.max(set_distance(&[closed.eigenvalue, closed.other], &numeric.eigenvalues));
            n += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        n == 36 && worst <= 1e-9 && secs < 1.0,
        format!("{n} points, max relative error {worst:.2e}, {secs:.3} s"),
    )
}

fn smib_baseline() -> Outcome {
    let (l, _) = smib_oracle(3.5, 10.0, 0.75, 0.0, 0.0);
    let e = smib_eigenvalues(&SmibParams::default()).map_err(err)?;
    let lam = if e.eigenvalue.im > 0.0 {
        e.eigenvalue
    } else {
        e.eigenvalue.conj()
    };
    let zeta = oracle_damping(l);
    let four = |x: f64| (x * 1e4).round() / 1e4;
    let printed = four(l.re) == -0.7143 && four(l.im) == 6.3152 && four(zeta) == 0.1124;
    let d_lam = rel(lam, l);
    let d_zeta = (e.damping - zeta).abs() / zeta;
    check(
        printed && d_lam <= 1e-6 && d_zeta <= 1e-6,
        format!(
            "lambda {:.6} {:+.6}i, zeta {:.6} (oracle errors {d_lam:.1e}, {d_zeta:.1e})",
            lam.re, lam.im, e.damping
        ),
    )
}

fn smib_directionality() -> Outcome {
    let base = SmibParams::default();
    let grid = smib_sensitivity_grid(&base, &GAINS, &GAINS).map_err(err)?;
    let zeta: BTreeMap<(u64, u64), f64> = grid.iter().map(|g| ((g.kp as u64, g.kin as u64), g.damping)).collect();
    let mut violations = 0;
    for kp in GAINS {
        for kin in GAINS {
            let here = smib_eigenvalues(&base.with_droop(kp, kin)).map_err(err)?.damping;
            let up = smib_eigenvalues(&base.with_droop(kp + 1e-3, kin)).map_err(err)?.damping;
            if !(up > here) {
                violations += 1;
            }
        }
    }
    let z0 = zeta[&(0, 0)];
    let z50 = zeta[&(0, 50)];
    let o0 = oracle_damping(smib_oracle(3.5, 10.0, 0.75, 0.0, 0.0).0);
    let o50 = oracle_damping(smib_oracle(3.5, 10.0, 0.75, 0.0, 50.0).0);
    let matches =
        (z0 - o0).abs() < 1e-9 && (z50 - o50).abs() < 1e-9 && (z0 - 0.112).abs() < 5e-4 && (z50 - 0.039).abs() < 5e-4;
    check(
        violations == 0 && z50 < z0 && matches,
        format!(
            "dzeta/dKp > 0 at all points ({violations} violations); Kp=0: zeta {z0:.3} -> {z50:.3} over Kin 0 -> 50"
        ),
    )
}

fn smib_pipeline() -> Outcome {
    let (l, _) = smib_oracle(3.5, 10.0, 0.75, 0.0, 0.0);
    let model = SmibModel::new(SmibParams::default(), 0.5).map_err(err)?;
    let a = linearize(&model, &model.equilibrium(), windstab::modal::DEFAULT_FD_STEP).map_err(err)?;
    let d = decompose(&a.a).map_err(err)?;
    let worst = set_distance(&d.eigenvalues, &[l, l.conj()]);
    check(
        worst <= 1e-6,
        format!("linearized eigenvalues within {worst:.2e} relative"),
    )
}

fn scenario_a_bands() -> Outcome {
    let start = Instant::now();
    let r = run_scenario(&canned_case("a_no_wind").map_err(err)?).map_err(err)?;
    let ia = r.dominant_mode(ModeClass::InterArea).ok_or("no inter-area mode")?;
    let lo = r.dominant_mode(ModeClass::Local).ok_or("no local mode")?;
    let secs = start.elapsed().as_secs_f64();
    check(
        (0.35..=0.70).contains(&ia.frequency_hz)
            && ia.damping <= 0.05
            && (0.9..=1.6).contains(&lo.frequency_hz)
            && secs < 30.0,
        format!(
            "inter-area {:.3} Hz zeta {:.4}; local {:.3} Hz; {secs:.2} s",
            ia.frequency_hz, ia.damping, lo.frequency_hz
        ),
    )
}

fn reports(names: &[&str]) -> Result<BTreeMap<String, Report>, String> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), run_scenario(&canned_case(n).map_err(err)?).map_err(err)?)))
        .collect()
}

fn mode(r: &Report, class: ModeClass) -> Result<(f64, f64), String> {
    r.dominant_mode(class)
        .map(|m| (m.damping, m.ccbg_pi))
        .ok_or_else(|| format!("{}: no {} mode", r.scenario, class.as_str()))
}

fn trend_suite() -> Outcome {
    let wind = [
        "b_v_no_support",
        "b_v_support",
        "b_q_no_support",
        "b_q_support",
        "c_v_no_support",
        "c_v_support",
        "c_q_no_support",
        "c_q_support",
    ];
    let rs = reports(&wind)?;
    let mut failures = Vec::new();
    for m in ["v", "q"] {
        let off = &rs[&format!("b_{m}_no_support")];
        let on = &rs[&format!("b_{m}_support")];
        let (ia_off, _) = mode(off, ModeClass::InterArea)?;
        let (ia_on, _) = mode(on, ModeClass::InterArea)?;
        let (cc_off, pi_off) = mode(off, ModeClass::ConverterControl)?;
        let (cc_on, pi_on) = mode(on, ModeClass::ConverterControl)?;
        if !(ia_on > ia_off) {
            failures.push(format!("(a) B-{m} inter-area zeta {ia_off:.4} -> {ia_on:.4}"));
        }
        if !(cc_on < cc_off) {
            failures.push(format!("(b) B-{m} converter zeta {cc_off:.4} -> {cc_on:.4}"));
        }
        if !(pi_on < pi_off) {
            failures.push(format!("(c) B-{m} CCBG-PI {pi_off:.4} -> {pi_on:.4}"));
        }
    }
    let ia: BTreeMap<&str, f64> = wind
        .iter()
        .map(|n| Ok((*n, mode(&rs[*n], ModeClass::InterArea)?.0)))
        .collect::<Result<_, String>>()?;
    let (best, best_zeta) = ia
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(n, z)| (*n, *z))
        .unwrap();
    if !best.starts_with("c_") || !best.ends_with("_support") || best.ends_with("no_support") {
        failures.push(format!("(d) highest inter-area zeta is {best}"));
    }
    let mut min_pi: f64 = 1.0;
    for n in wind.iter().filter(|n| n.ends_with("no_support")) {
        let (_, pi) = mode(&rs[*n], ModeClass::ConverterControl)?;
        min_pi = min_pi.min(pi);
    }
    if !(min_pi > 0.9) {
        failures.push(format!("(e) converter CCBG-PI without support {min_pi:.4}"));
    }
    if failures.is_empty() {
        Ok(format!(
            "(a)-(e) hold; best inter-area {best} zeta {best_zeta:.4}; min unsupported CCBG-PI {min_pi:.3}"
        ))
    } else {
        Err(failures.join("; "))
    }
}

fn ringdown_consistency() -> Outcome {
    let start = Instant::now();
    let s = canned_case("a_no_wind").map_err(err)?;
    let r = run_scenario(&s).map_err(err)?;
    let ia = r.dominant_mode(ModeClass::InterArea).ok_or("no inter-area mode")?;
    let opts = SimulationOptions {
        t_end: 25.0,
        dt_max: 1e-3,
        ..SimulationOptions::default()
    };
    let tr = simulate_scenario(&s, &opts).map_err(err)?;
    let w1 = tr.column("G1.speed").ok_or("missing G1.speed")?;
    let w3 = tr.column("G3.speed").ok_or("missing G3.speed")?;
    let diff: Vec<f64> = w1.iter().zip(&w3).map(|(a, b)| a - b).collect();
    let fit = ringdown_fit(&tr.time, &diff, (4.0, 25.0)).map_err(err)?;
    let e_sigma = (fit.sigma - ia.re).abs() / ia.re.abs();
    let e_omega = (fit.omega - ia.im.abs()).abs() / ia.im.abs();
    let secs = start.elapsed().as_secs_f64();
    check(
        e_sigma <= 0.2 && e_omega <= 0.1 && secs < 120.0,
        format!(
            "fit {:.4} {:+.4}i vs modal {:.4} {:+.4}i (sigma {:.1}%, omega {:.1}%), {secs:.1} s",
            fit.sigma,
            fit.omega,
            ia.re,
            ia.im.abs(),
            100.0 * e_sigma,
            100.0 * e_omega
        ),
    )
}

/// Mean active-power deviation of the wind farm over the first second after clearing.
fn post_fault_deviation(name: &str) -> Result<f64, String> {
    let s = canned_case(name).map_err(err)?;
    let ev = s.events.first().ok_or("scenario has no event")?;
    let t_clear = ev.t_start + ev.duration.ok_or("fault without duration")?.seconds(60.0);
    let opts = SimulationOptions {
        t_end: t_clear + 1.5,
        ..SimulationOptions::default()
    };
    let tr = simulate_scenario(&s, &opts).map_err(err)?;
    let p = tr.column("WF.p").ok_or("missing WF.p")?;
    let window: Vec<f64> = tr
        .time
        .iter()
        .zip(&p)
        .filter(|(t, _)| **t > t_clear && **t <= t_clear + 1.0)
        .map(|(_, v)| v - p[0])
        .collect();
    if window.is_empty() {
        return Err("empty post-fault window".into());
    }
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}

fn droop_response() -> Outcome {
    let off = post_fault_deviation("b_v_no_support")?;
    let on = post_fault_deviation("b_v_support")?;
    let ratio = on.abs() / off.abs().max(1e-300);
    check(
        ratio > 10.0,
        format!("mean deviation {on:+.4} pu with support vs {off:+.4} pu without (ratio {ratio:.1})"),
    )
}

struct Skewed {
    x0: [f64; 2],
}

impl Skewed {
    fn raw(x: &[f64]) -> [f64; 2] {
        [x[0].sin() * x[1] + x[1].powi(3), (x[0] * x[1]).exp()]
    }

    fn jacobian(&self) -> [[f64; 2]; 2] {
        let [a, b] = self.x0;
        let e = (a * b).exp();
        [[a.cos() * b, a.sin() + 3.0 * b * b], [b * e, a * e]]
    }
}

impl Dynamics for Skewed {
    fn n_states(&self) -> usize {
        2
    }

    fn state_labels(&self) -> Vec<StateLabel> {
        vec![
            StateLabel::new("T", "a", DeviceClass::Synchronous),
            StateLabel::new("T", "b", DeviceClass::Synchronous),
        ]
    }

    fn derivatives(&self, x: &[f64], dx: &mut [f64]) -> windstab::Result<()> {
        let f = Self::raw(x);
        let f0 = Self::raw(&self.x0);
        dx[0] = f[0] - f0[0];
        dx[1] = f[1] - f0[1];
        Ok(())
    }
}

/// Complex injections `V (Y V)*` from a Y matrix assembled here from branch data.
fn reinsertion_mismatch(net: &Network, pf: &PowerFlowSolution) -> f64 {
    let n = pf.bus_ids.len();
    let pos = |id: u32| pf.bus_ids.iter().position(|b| *b == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in net.branches.iter().filter(|b| b.in_service) {
        let (i, j) = (pos(br.from), pos(br.to));
        let ys = Complex64::new(br.r, br.x).inv();
        let yc = Complex64::new(0.0, br.b_shunt / 2.0);
        y[i][i] += (ys + yc) / (br.tap * br.tap);
        y[j][j] += ys + yc;
        y[i][j] -= ys / br.tap;
        y[j][i] -= ys / br.tap;
    }
    for b in &net.buses {
        let i = pos(b.id);
        y[i][i] += Complex64::new(b.g_shunt, b.b_shunt);
    }
    let v = &pf.voltages;
    let mut worst: f64 = 0.0;
    for b in &net.buses {
        let i = pos(b.id);
        let current: Complex64 = (0..n).map(|k| y[i][k] * v[k]).sum();
        let s = v[i] * current.conj();
        let load = Complex64::new(b.p_load, b.q_load);
        worst = worst.max((s - (pf.generation[i] - load)).norm());
        match b.kind {
            BusKind::PQ => worst = worst.max((s - Complex64::new(b.p_gen - b.p_load, b.q_gen - b.q_load)).norm()),
            BusKind::PV => {
                worst = worst.max((s.re - (b.p_gen - b.p_load)).abs());
                worst = worst.max((v[i].norm() - b.voltage_mag).abs());
            }
            BusKind::Slack => {
                worst = worst.max((v[i].norm() - b.voltage_mag).abs());
                worst = worst.max((v[i].arg() - b.voltage_angle).abs());
            }
        }
    }
    worst
}

fn modal_properties(ma: &ModalAnalysis, all_sync: bool, failures: &mut Vec<String>, name: &str) {
    let mut worst_sum: f64 = 0.0;
    for m in &ma.modes {
        worst_sum = worst_sum.max((m.participation.iter().sum::<f64>() - 1.0).abs());
        if !(0.0..=1.0).contains(&m.ccbg_pi) || (all_sync && m.ccbg_pi != 0.0) {
            failures.push(format!("{name}: CCBG-PI {} out of range", m.ccbg_pi));
        }
    }
    if worst_sum > 1e-10 {
        failures.push(format!("{name}: participation sum off by {worst_sum:.1e}"));
    }
    let scale = ma.modes.iter().map(|m| m.eigenvalue.norm()).fold(1.0, f64::max);
    for m in ma.modes.iter().filter(|m| m.eigenvalue.im.abs() > 1e-9 * scale) {
        let partner = ma.modes.iter().filter(|o| o.index != m.index).min_by(|a, b| {
            (a.eigenvalue - m.eigenvalue.conj())
                .norm()
                .total_cmp(&(b.eigenvalue - m.eigenvalue.conj()).norm())
        });
        let ok = partner.is_some_and(|p| {
            (p.eigenvalue - m.eigenvalue.conj()).norm() <= 1e-9 * scale
                && p.participation
                    .iter()
                    .zip(&m.participation)
                    .all(|(a, b)| (a - b).abs() <= 1e-8)
        });
        if !ok {
            failures.push(format!("{name}: no conjugate partner for {}", m.eigenvalue));
            break;
        }
    }
}

fn property_suites() -> Outcome {
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    for name in ["a_no_wind", "b_v_support", "c_q_no_support"] {
        let built = build_system(&canned_case(name).map_err(err)?).map_err(err)?;
        let ma = run_modal(&built).map_err(err)?;
        participation_factors(&ma.decomposition).map_err(err)?;
        modal_properties(&ma, name == "a_no_wind", &mut failures, name);
    }

    let mut pf_worst: f64 = 0.0;
    for case in [BaseCase::A, BaseCase::B, BaseCase::C] {
        let c = build_kundur_two_area(case);
        let pf = solve_power_flow(&c.network, PowerFlowOptions::default()).map_err(err)?;
        pf_worst = pf_worst.max(reinsertion_mismatch(&c.network, &pf));
    }
    if pf_worst > 1e-8 {
        failures.push(format!("power-flow reinsertion mismatch {pf_worst:.1e}"));
    }
    notes.push(format!("reinsertion {pf_worst:.1e} pu"));

    let model = Skewed { x0: [0.3, -0.7] };
    let exact = model.jacobian();
    let error = |step: f64| -> Result<f64, String> {
        let a = linearize(&model, &model.x0, step).map_err(err)?.a;
        let mut e: f64 = 0.0;
        for (i, row) in exact.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                e = e.max((a[(i, j)] - v).abs());
            }
        }
        Ok(e)
    };
    let errs = [error(2e-2)?, error(1e-2)?, error(5e-3)?];
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    if ratios.iter().any(|r| !(*r >= 3.5)) {
        failures.push(format!("linearization ratios {ratios:.2?}"));
    }
    notes.push(format!("linearization ratios {:.2}/{:.2}", ratios[0], ratios[1]));

    let s = canned_case("a_no_wind").map_err(err)?;
    let run = |dt: f64| -> Result<Vec<f64>, String> {
        let opts = SimulationOptions {
            t_end: 5.0,
            dt_max: dt,
            dt_min: dt.min(1e-5),
            ..SimulationOptions::default()
        };
        let tr = simulate_scenario(&s, &opts).map_err(err)?;
        tr.final_state()
            .map(<[f64]>::to_vec)
            .ok_or_else(|| "empty trace".into())
    };
    let coarse = run(1e-3)?;
    let fine = run(5e-4)?;
    let diff = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = fine.iter().map(|b| b * b).sum::<f64>().sqrt();
    let change = diff / norm;
    if change > 1e-3 {
        failures.push(format!("dt-halving change {:.2e}", change));
    }
    notes.push(format!("dt-halving change {change:.1e}"));

    if failures.is_empty() {
        Ok(format!("participation, conjugates, CCBG-PI hold; {}", notes.join(", ")))
    } else {
        Err(failures.join("; "))
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("SMIB closed form vs numeric eigenvalues", smib_numeric_match),
        ("SMIB baseline point", smib_baseline),
        ("SMIB damping directionality", smib_directionality),
        ("SMIB through linearize + eigensolve", smib_pipeline),
        ("scenario A mode bands", scenario_a_bands),
        ("frequency-support trend suite", trend_suite),
        ("ringdown vs inter-area eigenvalue", ringdown_consistency),
        ("droop active-power response", droop_response),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.2} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.2} s]", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
