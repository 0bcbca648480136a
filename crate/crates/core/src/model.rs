//! Model interfaces shared by linearization and time-domain integration.

use serde::{Deserialize, Serialize};

use crate::devices::DeviceClass;
use crate::error::{Error, Result};
use crate::timedomain::EventAction;

/// Identifies one state of an assembled model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateLabel {
    pub device: String,
    pub name: String,
    pub class: DeviceClass,
}

impl StateLabel {
    pub fn new(device: impl Into<String>, name: impl Into<String>, class: DeviceClass) -> Self {
        Self {
            device: device.into(),
            name: name.into(),
            class,
        }
    }

    pub fn qualified(&self) -> String {
        format!("{}.{}", self.device, self.name)
    }
}

/// An explicit ODE `dx/dt = f(x)`.
pub trait Dynamics {
    fn n_states(&self) -> usize;

    fn state_labels(&self) -> Vec<StateLabel>;

    fn derivatives(&self, x: &[f64], dx: &mut [f64]) -> Result<()>;
}

/// A semi-explicit DAE `dx/dt = f(x, y)`, `0 = g(x, y)` whose algebraic
/// equations may change at discrete events.
pub trait DaeModel {
    type Condition: Clone;

    fn n_states(&self) -> usize;

    fn n_algebraic(&self) -> usize;

    fn initial_condition(&self) -> Self::Condition;

    fn residual(&self, cond: &Self::Condition, x: &[f64], y: &[f64], f: &mut [f64], g: &mut [f64]) -> Result<()>;

    /// Algebraic variables consistent with `x` under `cond`.
    fn solve_algebraic(&self, cond: &Self::Condition, x: &[f64], guess: &[f64]) -> Result<Vec<f64>>;

    fn apply_event(&self, cond: &mut Self::Condition, action: &EventAction) -> Result<()>;

    fn state_names(&self) -> Vec<String> {
        (0..self.n_states()).map(|k| format!("x{k}")).collect()
    }

    fn output_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn outputs(&self, _cond: &Self::Condition, _x: &[f64], _y: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn warnings(&self, _x: &[f64]) -> Vec<String> {
        Vec::new()
    }
}

/// Presents an ODE as a DAE without algebraic variables.
pub struct OdeDae<'a, D: Dynamics + ?Sized>(pub &'a D);

impl<D: Dynamics + ?Sized> DaeModel for OdeDae<'_, D> {
    type Condition = ();

    fn n_states(&self) -> usize {
        self.0.n_states()
    }

    fn n_algebraic(&self) -> usize {
        0
    }

    fn initial_condition(&self) {}

    fn residual(&self, _: &(), x: &[f64], _: &[f64], f: &mut [f64], _: &mut [f64]) -> Result<()> {
        self.0.derivatives(x, f)
    }

    fn solve_algebraic(&self, _: &(), _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn apply_event(&self, _: &mut (), action: &EventAction) -> Result<()> {
        Err(Error::Validation(format!(
            "event {action:?} not supported by a plain ODE model"
        )))
    }

    fn state_names(&self) -> Vec<String> {
        self.0.state_labels().iter().map(StateLabel::qualified).collect()
    }
}
