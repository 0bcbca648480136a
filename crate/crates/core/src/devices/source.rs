use num_complex::Complex64;

use super::{check_finite, DeviceClass, DeviceModel};
use crate::error::Result;

/// Stiff voltage source behind a reactance, rotating at a fixed frequency offset.
#[derive(Debug, Clone)]
pub struct InfiniteSource {
    pub base_mva: f64,
    pub emf: f64,
    pub reactance: f64,
    pub omega0: f64,
    /// Frequency deviation of the source, per-unit.
    pub frequency_offset: f64,
}

impl InfiniteSource {
    /// Source that holds terminal voltage `v` while delivering `s` (device base).
    pub fn initialize(base_mva: f64, reactance: f64, omega0: f64, v: Complex64, s: Complex64) -> (Self, Vec<f64>) {
        let i = (s / v).conj();
        let e = v + Complex64::new(0.0, reactance) * i;
        let src = Self {
            base_mva,
            emf: e.norm(),
            reactance,
            omega0,
            frequency_offset: 0.0,
        };
        (src, vec![e.arg()])
    }
}

impl DeviceModel for InfiniteSource {
    fn class(&self) -> DeviceClass {
        DeviceClass::Source
    }

    fn base_mva(&self) -> f64 {
        self.base_mva
    }

    fn state_names(&self) -> Vec<&'static str> {
        vec!["angle"]
    }

    fn shunt_admittance(&self) -> Complex64 {
        Complex64::new(0.0, self.reactance).inv()
    }

    fn source_current(&self, x: &[f64]) -> Complex64 {
        Complex64::from_polar(self.emf, x[0]) * self.shunt_admittance()
    }

    fn derivatives(&self, x: &[f64], v: Complex64, dx: &mut [f64]) -> Result<()> {
        check_finite("source state", x, v)?;
        dx[0] = self.omega0 * self.frequency_offset;
        Ok(())
    }

    fn rotor_speed(&self, _x: &[f64]) -> Option<f64> {
        Some(1.0 + self.frequency_offset)
    }
}
