//! Maximum power point tracking characteristic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimal power versus rotor speed: zero at cut-in, linear up to
/// `min_speed`, then `rated_power * (w / rated_speed)^3` up to rated speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpptCurve {
    pub cut_in_speed: f64,
    pub min_speed: f64,
    pub rated_speed: f64,
    pub rated_power: f64,
}

impl Default for MpptCurve {
    fn default() -> Self {
        Self {
            cut_in_speed: 0.7,
            min_speed: 0.75,
            rated_speed: 1.0,
            rated_power: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpptPoint {
    pub power: f64,
    /// Speed was outside `[cut_in_speed, rated_speed]` and got clamped.
    pub clamped: bool,
}

impl MpptCurve {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.cut_in_speed && self.cut_in_speed < self.min_speed && self.min_speed < self.rated_speed) {
            return Err(Error::Validation(
                "MPPT speeds must satisfy 0 < cut-in < min < rated".into(),
            ));
        }
        if !(self.rated_power > 0.0 && self.rated_power <= 1.0) {
            return Err(Error::Validation("MPPT rated power must be in (0, 1]".into()));
        }
        Ok(())
    }

    fn gain(&self) -> f64 {
        self.rated_power / self.rated_speed.powi(3)
    }

    pub fn reference(&self, speed: f64) -> MpptPoint {
        let clamped = !(self.cut_in_speed..=self.rated_speed).contains(&speed);
        let w = speed.clamp(self.cut_in_speed, self.rated_speed);
        let power = if w >= self.min_speed {
            self.gain() * w.powi(3)
        } else {
            let knee = self.gain() * self.min_speed.powi(3);
            knee * (w - self.cut_in_speed) / (self.min_speed - self.cut_in_speed)
        };
        MpptPoint {
            power: power.clamp(0.0, 1.0),
            clamped,
        }
    }

    /// Slope of the characteristic, zero outside the curve domain.
    pub fn slope(&self, speed: f64) -> f64 {
        if speed < self.cut_in_speed || speed > self.rated_speed {
            0.0
        } else if speed >= self.min_speed {
            3.0 * self.gain() * speed * speed
        } else {
            self.gain() * self.min_speed.powi(3) / (self.min_speed - self.cut_in_speed)
        }
    }

    /// Rotor speed at which the curve delivers `power`.
    pub fn inverse(&self, power: f64) -> Result<f64> {
        if !(0.0..=self.rated_power).contains(&power) {
            return Err(Error::Validation(format!(
                "power {power} outside the MPPT characteristic range"
            )));
        }
        let knee = self.gain() * self.min_speed.powi(3);
        Ok(if power >= knee {
            (power / self.gain()).cbrt()
        } else {
            self.cut_in_speed + power / knee * (self.min_speed - self.cut_in_speed)
        })
    }
}

/// Convenience wrapper over the default characteristic.
pub fn mppt_reference(rotor_speed: f64) -> f64 {
    let point = MpptCurve::default().reference(rotor_speed);
    if point.clamped {
        log::warn!("rotor speed {rotor_speed:.4} pu outside MPPT curve domain; clamped");
    }
    point.power
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_cubic_segment() {
        let c = MpptCurve::default();
        assert_eq!(c.reference(1.0).power, 1.0);
        assert_eq!(c.reference(0.7).power, 0.0);
        assert!((c.reference(0.8).power - 0.512).abs() < 1e-12);
        assert!(!c.reference(0.8).clamped);
    }

    #[test]
    fn out_of_domain_is_clamped() {
        let c = MpptCurve::default();
        let hi = c.reference(1.2);
        assert!(hi.clamped);
        assert_eq!(hi.power, 1.0);
        let lo = c.reference(0.5);
        assert!(lo.clamped);
        assert_eq!(lo.power, 0.0);
        assert_eq!(mppt_reference(1.3), 1.0);
    }

    #[test]
    fn inverse_rejects_out_of_range_power() {
        assert!(MpptCurve::default().inverse(1.5).is_err());
        assert!(MpptCurve::default().inverse(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn monotone_nondecreasing(a in 0.5f64..1.2, b in 0.5f64..1.2) {
            let c = MpptCurve::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(c.reference(lo).power <= c.reference(hi).power);
        }

        #[test]
        fn inverse_round_trips(p in 0.0f64..1.0) {
            let c = MpptCurve::default();
            let w = c.inverse(p).unwrap();
            prop_assert!((c.reference(w).power - p).abs() < 1e-12);
        }
    }
}
