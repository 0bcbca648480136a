//! Disturbance simulation with an implicit trapezoidal DAE integrator, plus
//! damped-sinusoid ringdown fitting.

use std::io::Write;
use std::path::Path;

use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DaeModel;

/// Shunt admittance representing a bolted three-phase fault, per-unit.
pub const DEFAULT_FAULT_ADMITTANCE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultLocation {
    Bus(u32),
    /// Midpoint of the branch with this index.
    BranchMidpoint(usize),
}

/// A change to the network applied at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    ApplyFault {
        location: FaultLocation,
        admittance: Complex64,
    },
    ClearFault {
        location: FaultLocation,
    },
    AddShunt {
        bus: u32,
        admittance: Complex64,
    },
    TripBranch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ThreePhaseFault,
    ClearFault,
    LoadStep,
    LineTrip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTarget {
    Bus(u32),
    /// Branch index; faults are placed at its midpoint.
    Branch(usize),
}

/// Fault or load-step duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Duration {
    Seconds(f64),
    Cycles(f64),
}

impl Duration {
    pub fn seconds(&self, nominal_hz: f64) -> f64 {
        match *self {
            Duration::Seconds(s) => s,
            Duration::Cycles(c) => c / nominal_hz,
        }
    }
}

/// A scripted disturbance.
///
/// `severity` is the fault admittance (pu, default [`DEFAULT_FAULT_ADMITTANCE`])
/// or the load step in per-unit active power at nominal voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub kind: EventKind,
    pub target: EventTarget,
    pub t_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<Duration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<f64>,
}

impl Event {
    pub fn tie_line_fault(branch: usize, t_start: f64, cycles: f64) -> Self {
        Event {
            kind: EventKind::ThreePhaseFault,
            target: EventTarget::Branch(branch),
            t_start,
            duration: Some(Duration::Cycles(cycles)),
            severity: None,
        }
    }

    pub fn load_step(bus: u32, t_start: f64, step: f64) -> Self {
        Event {
            kind: EventKind::LoadStep,
            target: EventTarget::Bus(bus),
            t_start,
            duration: None,
            severity: Some(step),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start >= 0.0) || !self.t_start.is_finite() {
            return Err(Error::Validation("event start time must be non-negative".into()));
        }
        if let Some(d) = self.duration {
            let s = d.seconds(60.0);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Validation("event duration must be positive".into()));
            }
        }
        match (self.kind, self.target) {
            (EventKind::LoadStep, EventTarget::Branch(_)) => Err(Error::Validation("load steps target a bus".into())),
            (EventKind::LineTrip, EventTarget::Bus(_)) => Err(Error::Validation("line trips target a branch".into())),
            (EventKind::ThreePhaseFault, _) if self.duration.is_none() => {
                Err(Error::Validation("a three-phase fault needs a duration".into()))
            }
            _ => Ok(()),
        }
    }

    fn location(&self) -> FaultLocation {
        match self.target {
            EventTarget::Bus(b) => FaultLocation::Bus(b),
            EventTarget::Branch(k) => FaultLocation::BranchMidpoint(k),
        }
    }

    /// Timed network actions implementing this event.
    pub fn actions(&self, nominal_hz: f64) -> Result<Vec<(f64, EventAction)>> {
        self.validate()?;
        let y = Complex64::new(self.severity.unwrap_or(DEFAULT_FAULT_ADMITTANCE), 0.0);
        let out = match self.kind {
            EventKind::ThreePhaseFault => {
                let end = self.t_start + self.duration.map_or(0.0, |d| d.seconds(nominal_hz));
                let location = self.location();
                vec![
                    (
                        self.t_start,
                        EventAction::ApplyFault {
                            location,
                            admittance: y,
                        },
                    ),
                    (end, EventAction::ClearFault { location }),
                ]
            }
            EventKind::ClearFault => vec![(
                self.t_start,
                EventAction::ClearFault {
                    location: self.location(),
                },
            )],
            EventKind::LoadStep => {
                let EventTarget::Bus(bus) = self.target else {
                    unreachable!()
                };
                let step = Complex64::new(self.severity.unwrap_or(0.0), 0.0);
                let mut v = vec![(self.t_start, EventAction::AddShunt { bus, admittance: step })];
                if let Some(d) = self.duration {
                    v.push((
                        self.t_start + d.seconds(nominal_hz),
                        EventAction::AddShunt { bus, admittance: -step },
                    ));
                }
                v
            }
            EventKind::LineTrip => {
                let EventTarget::Branch(k) = self.target else {
                    unreachable!()
                };
                vec![(self.t_start, EventAction::TripBranch(k))]
            }
        };
        Ok(out)
    }
}

/// Applies a fault to a copy of `cond`. Clearing it rebuilds the network
/// matrices from the base data, so the original admittance matrix is restored exactly.
pub fn apply_three_phase_fault<M: DaeModel>(
    model: &M,
    cond: &M::Condition,
    location: FaultLocation,
    admittance: Complex64,
) -> Result<M::Condition> {
    let mut out = cond.clone();
    model.apply_event(&mut out, &EventAction::ApplyFault { location, admittance })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub t_end: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Keep every n-th accepted step in the trace (event boundaries are always kept).
    pub record_every: usize,
    pub nominal_hz: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            dt_max: 1e-3,
            dt_min: 1e-5,
            newton_tol: 1e-8,
            max_newton: 12,
            record_every: 1,
            nominal_hz: 60.0,
        }
    }
}

/// Recorded simulation output, one row per kept time point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub time: Vec<f64>,
    pub state_names: Vec<String>,
    pub states: Vec<Vec<f64>>,
    pub output_names: Vec<String>,
    pub outputs: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Output or state column by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(k) = self.output_names.iter().position(|n| n == name) {
            return Some(self.outputs.iter().map(|r| r[k]).collect());
        }
        let k = self.state_names.iter().position(|n| n == name)?;
        Some(self.states.iter().map(|r| r[k]).collect())
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// CSV with a `time` column, the outputs and then the states.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string()];
        header.extend(self.output_names.iter().cloned());
        header.extend(self.state_names.iter().cloned());
        wr.write_record(&header)?;
        for (i, t) in self.time.iter().enumerate() {
            let row = std::iter::once(*t)
                .chain(self.outputs[i].iter().copied())
                .chain(self.states[i].iter().copied())
                .map(|v| format!("{v:.10e}"));
            wr.write_record(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    fn push<M: DaeModel>(&mut self, model: &M, cond: &M::Condition, t: f64, x: &[f64], y: &[f64]) {
        self.time.push(t);
        self.states.push(x.to_vec());
        self.outputs.push(model.outputs(cond, x, y));
        for w in model.warnings(x) {
            if !self.warnings.contains(&w) {
                log::warn!("t = {t:.4}: {w}");
                self.warnings.push(w);
            }
        }
    }
}

/// An integration failure together with everything simulated up to it.
#[derive(Debug)]
pub struct PartialTrace {
    pub trace: Trace,
    pub error: Error,
}

impl From<PartialTrace> for Error {
    fn from(p: PartialTrace) -> Self {
        p.error
    }
}

struct Stepper<'a, M: DaeModel> {
    model: &'a M,
    n: usize,
    m: usize,
    tol: f64,
    max_newton: usize,
    /// Jacobian of `[f; g]` with respect to `[x; y]`.
    jac: Option<Mat<f64>>,
    lu_h: f64,
    lu: Option<faer::linalg::solvers::PartialPivLu<f64>>,
}

impl<M: DaeModel> Stepper<'_, M> {
    fn eval(&self, cond: &M::Condition, z: &[f64], out: &mut [f64]) -> Result<()> {
        let (x, y) = z.split_at(self.n);
        let (f, g) = out.split_at_mut(self.n);
        self.model.residual(cond, x, y, f, g)
    }

    fn refresh_jacobian(&mut self, cond: &M::Condition, z: &[f64]) -> Result<()> {
        let size = self.n + self.m;
        let mut base = vec![0.0; size];
        self.eval(cond, z, &mut base)?;
        let mut jac = Mat::<f64>::zeros(size, size);
        let mut zp = z.to_vec();
        let mut fp = vec![0.0; size];
        for j in 0..size {
            let h = 1e-7 * z[j].abs().max(1.0);
            zp[j] = z[j] + h;
            self.eval(cond, &zp, &mut fp)?;
            zp[j] = z[j];
            for i in 0..size {
                jac[(i, j)] = (fp[i] - base[i]) / h;
            }
        }
        self.jac = Some(jac);
        self.lu = None;
        Ok(())
    }

    fn factor(&mut self, h: f64) {
        let jac = self.jac.as_ref().expect("jacobian computed before factorization");
        let size = self.n + self.m;
        let n = self.n;
        let iteration = Mat::<f64>::from_fn(size, size, |i, j| {
            if i < n {
                let id = if i == j { 1.0 } else { 0.0 };
                id - 0.5 * h * jac[(i, j)]
            } else {
                jac[(i, j)]
            }
        });
        self.lu = Some(iteration.partial_piv_lu());
        self.lu_h = h;
    }

    /// One trapezoidal step from `z0` (with derivative `f0`). Returns the new
    /// point and the Newton iteration count, or `None` if Newton failed.
    fn step(&mut self, cond: &M::Condition, z0: &[f64], f0: &[f64], h: f64) -> Result<Option<(Vec<f64>, usize)>> {
        if self.lu.is_none() || self.lu_h != h {
            self.factor(h);
        }
        let size = self.n + self.m;
        let mut z = z0.to_vec();
        // explicit predictor for the states
        for i in 0..self.n {
            z[i] += h * f0[i];
        }
        let mut fz = vec![0.0; size];
        for it in 1..=self.max_newton {
            if self.eval(cond, &z, &mut fz).is_err() {
                return Ok(None);
            }
            let mut r = Mat::<f64>::zeros(size, 1);
            for i in 0..self.n {
                r[(i, 0)] = -(z[i] - z0[i] - 0.5 * h * (f0[i] + fz[i]));
            }
            for i in self.n..size {
                r[(i, 0)] = -fz[i];
            }
            let dz = self.lu.as_ref().unwrap().solve(&r);
            let mut worst = 0.0_f64;
            for i in 0..size {
                let d = dz[(i, 0)];
                if !d.is_finite() {
                    return Ok(None);
                }
                z[i] += d;
                worst = worst.max(d.abs() / z[i].abs().max(1.0));
            }
            if worst <= self.tol {
                return Ok(Some((z, it)));
            }
        }
        Ok(None)
    }
}

/// Integrates `model` from `x0` through `events`, restarting exactly at every event time.
#[allow(clippy::result_large_err)]
pub fn simulate<M: DaeModel>(
    model: &M,
    x0: &[f64],
    events: &[Event],
    opts: &SimulationOptions,
) -> Result<Trace, PartialTrace> {
    let mut trace = Trace {
        state_names: model.state_names(),
        output_names: model.output_names(),
        ..Trace::default()
    };
    match run(model, x0, events, opts, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => Err(PartialTrace { trace, error }),
    }
}

fn run<M: DaeModel>(
    model: &M,
    x0: &[f64],
    events: &[Event],
    opts: &SimulationOptions,
    trace: &mut Trace,
) -> Result<()> {
    let n = model.n_states();
    let m = model.n_algebraic();
    if x0.len() != n {
        return Err(Error::Validation("initial state has the wrong dimension".into()));
    }
    if !(opts.t_end > 0.0) || !(opts.dt_max > 0.0) || !(opts.dt_min > 0.0) || opts.dt_min > opts.dt_max {
        return Err(Error::Validation("invalid simulation time settings".into()));
    }
    if events.windows(2).any(|w| w[1].t_start < w[0].t_start) {
        return Err(Error::Validation("events must be sorted by start time".into()));
    }
    let mut actions = Vec::new();
    for e in events {
        actions.extend(e.actions(opts.nominal_hz)?);
    }
    actions.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut cond = model.initial_condition();
    let y0 = model.solve_algebraic(&cond, x0, &[])?;
    let mut z: Vec<f64> = x0.iter().copied().chain(y0).collect();
    let mut st = Stepper {
        model,
        n,
        m,
        tol: opts.newton_tol,
        max_newton: opts.max_newton,
        jac: None,
        lu_h: 0.0,
        lu: None,
    };
    let mut t = 0.0;
    let mut next_action = 0;
    let record_every = opts.record_every.max(1);
    trace.push(model, &cond, t, &z[..n], &z[n..]);

    let time_eps = 1e-12 * opts.t_end.max(1.0);
    let mut dt = opts.dt_max;
    let mut since_record = 0;
    let mut f0 = vec![0.0; n + m];
    let mut fresh = true;
    loop {
        while next_action < actions.len() && actions[next_action].0 <= t + time_eps {
            let action = actions[next_action].1;
            model.apply_event(&mut cond, &action).map_err(|e| Error::Integration {
                t,
                reason: format!("event {action:?}: {e}"),
            })?;
            let y = model.solve_algebraic(&cond, &z[..n], &z[n..])?;
            z[n..].copy_from_slice(&y);
            next_action += 1;
            fresh = true;
        }
        if t >= opts.t_end - time_eps {
            break;
        }
        if fresh {
            st.refresh_jacobian(&cond, &z)?;
            st.eval(&cond, &z, &mut f0)?;
            dt = opts.dt_max;
            fresh = false;
        }
        let mut limit = opts.t_end;
        if next_action < actions.len() {
            limit = limit.min(actions[next_action].0);
        }
        let h = dt.min(limit - t);
        let boundary = (t + h - limit).abs() <= time_eps;
        let (znew, its) = match st.step(&cond, &z, &f0, h)? {
            Some(r) => r,
            None => {
                st.refresh_jacobian(&cond, &z)?;
                match st.step(&cond, &z, &f0, h)? {
                    Some(r) => r,
                    None => {
                        dt = h / 2.0;
                        if dt < opts.dt_min {
                            return Err(Error::Integration {
                                t,
                                reason: "Newton iteration failed at the minimum step".into(),
                            });
                        }
                        continue;
                    }
                }
            }
        };
        if znew.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t,
                reason: "non-finite state".into(),
            });
        }
        t = if boundary { limit } else { t + h };
        z = znew;
        st.eval(&cond, &z, &mut f0)?;
        if its > st.max_newton / 2 {
            st.refresh_jacobian(&cond, &z)?;
        }
        if dt < opts.dt_max {
            dt = (dt * 2.0).min(opts.dt_max);
        }
        since_record += 1;
        if since_record >= record_every || boundary {
            trace.push(model, &cond, t, &z[..n], &z[n..]);
            since_record = 0;
        }
    }
    Ok(())
}

/// Single damped sinusoid `offset + amplitude * exp(sigma t) cos(omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingdownFit {
    pub sigma: f64,
    pub omega: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    /// Root-mean-square residual of the fit.
    pub rms_residual: f64,
}

impl RingdownFit {
    pub fn eigenvalue(&self) -> Complex64 {
        Complex64::new(self.sigma, self.omega)
    }

    pub fn frequency_hz(&self) -> f64 {
        self.omega / (2.0 * std::f64::consts::PI)
    }

    fn eval(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.sigma * t).exp() * (self.omega * t + self.phase).cos()
    }
}

fn peaks(t: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    (1..y.len().saturating_sub(1))
        .filter(|&k| y[k] > y[k - 1] && y[k] >= y[k + 1] && y[k] > 0.0)
        .map(|k| {
            // parabolic refinement of the peak location
            let (a, b, c) = (y[k - 1], y[k], y[k + 1]);
            let den = a - 2.0 * b + c;
            let shift = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            let dt = 0.5 * (t[k + 1] - t[k - 1]);
            (t[k] + shift * dt, b - 0.25 * (a - c) * shift)
        })
        .collect()
}

/// Linear least squares for offset and the two quadrature amplitudes at fixed `(sigma, omega)`.
fn quadrature_fit(t: &[f64], y: &[f64], sigma: f64, omega: f64) -> (f64, f64, f64) {
    let basis = |ti: f64| {
        let e = (sigma * ti).exp();
        [1.0, e * (omega * ti).cos(), e * (omega * ti).sin()]
    };
    let mut ata = Mat::<f64>::zeros(3, 3);
    let mut atb = Mat::<f64>::zeros(3, 1);
    for (&ti, &yi) in t.iter().zip(y) {
        let b = basis(ti);
        for r in 0..3 {
            atb[(r, 0)] += b[r] * yi;
            for c in 0..3 {
                ata[(r, c)] += b[r] * b[c];
            }
        }
    }
    let s = ata.partial_piv_lu().solve(&atb);
    (s[(0, 0)], s[(1, 0)], s[(2, 0)])
}

/// Fits the dominant damped sinusoid to `signal` sampled at `time` within `window`.
///
/// The initial guess comes from peak spacing and logarithmic decrement; it is
/// refined by Levenberg-Marquardt on all five parameters. Time is measured
/// from the window start for conditioning, but `sigma` and `omega` do not depend on it.
pub fn ringdown_fit(time: &[f64], signal: &[f64], window: (f64, f64)) -> Result<RingdownFit> {
    if time.len() != signal.len() {
        return Err(Error::Ringdown("time and signal lengths differ".into()));
    }
    let (t0, t1) = window;
    let (t, y): (Vec<f64>, Vec<f64>) = time
        .iter()
        .zip(signal)
        .filter(|(ti, _)| **ti >= t0 && **ti <= t1)
        .map(|(ti, yi)| (ti - t0, *yi))
        .unzip();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Ringdown("signal contains non-finite samples".into()));
    }
    if t.len() < 8 {
        return Err(Error::Ringdown("too few samples in the window".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let centred: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let pk = peaks(&t, &centred);
    if pk.len() < 3 {
        return Err(Error::Ringdown(format!("found {} peaks, need at least 3", pk.len())));
    }
    let period = (pk[pk.len() - 1].0 - pk[0].0) / (pk.len() - 1) as f64;
    let omega0 = 2.0 * std::f64::consts::PI / period;
    // regression of log peak height on time
    let np = pk.len() as f64;
    let (st, sl) = pk.iter().fold((0.0, 0.0), |(a, b), (ti, yi)| (a + ti, b + yi.ln()));
    let (mt, ml) = (st / np, sl / np);
    let (num, den) = pk.iter().fold((0.0, 0.0), |(a, b), (ti, yi)| {
        (a + (ti - mt) * (yi.ln() - ml), b + (ti - mt).powi(2))
    });
    let sigma0 = if den > 0.0 { num / den } else { 0.0 };

    let (c, a, b) = quadrature_fit(&t, &y, sigma0, omega0);
    let mut p = [c, a.hypot(b), sigma0, omega0, (-b).atan2(a)];
    let cost = |p: &[f64; 5]| -> f64 {
        t.iter()
            .zip(&y)
            .map(|(&ti, &yi)| {
                let r = p[0] + p[1] * (p[2] * ti).exp() * (p[3] * ti + p[4]).cos() - yi;
                r * r
            })
            .sum()
    };
    let mut current = cost(&p);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let mut jtj = Mat::<f64>::zeros(5, 5);
        let mut jtr = Mat::<f64>::zeros(5, 1);
        for (&ti, &yi) in t.iter().zip(&y) {
            let e = (p[2] * ti).exp();
            let (s, co) = (p[3] * ti + p[4]).sin_cos();
            let r = p[0] + p[1] * e * co - yi;
            let g = [1.0, e * co, p[1] * ti * e * co, -p[1] * e * ti * s, -p[1] * e * s];
            for i in 0..5 {
                jtr[(i, 0)] -= g[i] * r;
                for j in 0..5 {
                    jtj[(i, j)] += g[i] * g[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj.clone();
            for i in 0..5 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let d = damped.partial_piv_lu().solve(&jtr);
            let mut trial = p;
            for i in 0..5 {
                trial[i] += d[(i, 0)];
            }
            let c = cost(&trial);
            if c.is_finite() && c < current {
                let rel = (current - c) / current.max(1e-300);
                p = trial;
                current = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let (mut amplitude, mut phase) = (p[1], p[4]);
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += std::f64::consts::PI;
    }
    let fit = RingdownFit {
        sigma: p[2],
        omega: p[3].abs(),
        amplitude,
        phase: if p[3] < 0.0 { -phase } else { phase },
        offset: p[0],
        rms_residual: (current / t.len() as f64).sqrt(),
    };
    if !fit.sigma.is_finite() || !fit.omega.is_finite() {
        return Err(Error::Ringdown("fit diverged".into()));
    }
    debug_assert!(fit.eval(0.0).is_finite());
    Ok(fit)
}
