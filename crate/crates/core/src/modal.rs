//! Linearization, eigenstructure, participation factors and mode classification.

use std::collections::BTreeMap;

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::devices::DeviceClass;
use crate::error::{Error, Result};
use crate::model::{Dynamics, StateLabel};

/// Damping ratio at or below which a mode is critical.
pub const CRITICAL_DAMPING: f64 = 0.05;

/// Default relative finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Largest derivative norm accepted as an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct StateMatrix {
    pub a: Mat<f64>,
    pub labels: Vec<StateLabel>,
}

impl StateMatrix {
    pub fn new(a: Mat<f64>, labels: Vec<StateLabel>) -> Result<Self> {
        if a.nrows() != a.ncols() || labels.len() != a.nrows() {
            return Err(Error::Validation(format!(
                "state matrix is {}x{} with {} labels",
                a.nrows(),
                a.ncols(),
                labels.len()
            )));
        }
        Ok(Self { a, labels })
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }
}

fn worst_residual(model: &dyn Dynamics, x: &[f64]) -> Result<(usize, f64)> {
    let mut f = vec![0.0; x.len()];
    model.derivatives(x, &mut f)?;
    Ok(f.iter().enumerate().fold(
        (0, 0.0),
        |(k, m), (i, v)| if v.abs() > m { (i, v.abs()) } else { (k, m) },
    ))
}

/// Central-difference Jacobian of `model` at an equilibrium.
///
/// Column `j` uses the step `step * max(1, |x_j|)`.
pub fn linearize(model: &dyn Dynamics, equilibrium: &[f64], step: f64) -> Result<StateMatrix> {
    let n = model.n_states();
    if equilibrium.len() != n {
        return Err(Error::Validation("equilibrium has the wrong dimension".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Validation("finite-difference step must be positive".into()));
    }
    let labels = model.state_labels();
    let (k, residual) = worst_residual(model, equilibrium)?;
    if residual > EQUILIBRIUM_TOL {
        return Err(Error::NotEquilibrium {
            state: labels[k].qualified(),
            residual,
        });
    }
    let mut a = Mat::<f64>::zeros(n, n);
    let mut x = equilibrium.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = step * equilibrium[j].abs().max(1.0);
        x[j] = equilibrium[j] + h;
        model.derivatives(&x, &mut fp)?;
        x[j] = equilibrium[j] - h;
        model.derivatives(&x, &mut fm)?;
        x[j] = equilibrium[j];
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    StateMatrix::new(a, labels)
}

/// `-alpha / |lambda|`.
pub fn damping_ratio(lambda: Complex64) -> Result<f64> {
    let mag = lambda.norm();
    if mag == 0.0 {
        return Err(Error::ZeroEigenvalue);
    }
    Ok(-lambda.re / mag)
}

pub fn frequency_hz(lambda: Complex64) -> f64 {
    lambda.im.abs() / (2.0 * std::f64::consts::PI)
}

/// Eigenvalues with right eigenvectors (columns of `right`, unit 2-norm) and
/// left eigenvectors (columns of `left`) scaled so that `left_i^H right_i = 1`.
#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub eigenvalues: Vec<Complex64>,
    pub right: Mat<Complex64>,
    pub left: Mat<Complex64>,
    /// Eigenvalue condition numbers `1 / |w_i^H u_i|` for unit-norm vectors.
    pub eigenvalue_condition: Vec<f64>,
    /// Frobenius-norm condition estimate of the right eigenvector matrix.
    pub condition: f64,
}

/// Eigenvector matrices whose condition exceeds this are treated as defective.
/// Magnitude below which an eigenvalue is treated as the rotational-invariance zero.
pub const REFERENCE_EIGENVALUE_TOL: f64 = 1e-6;
pub const DEFECTIVE_CONDITION: f64 = 1e12;

fn frobenius(m: &Mat<Complex64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

pub fn decompose(a: &Mat<f64>) -> Result<ModalDecomposition> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Validation(
            "eigendecomposition needs a non-empty square matrix".into(),
        ));
    }
    if (0..n).any(|i| (0..n).any(|j| !a[(i, j)].is_finite())) {
        return Err(Error::NonFinite("state matrix".into()));
    }
    let evd = a.eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S();
    let u_raw = evd.U();
    let eigenvalues: Vec<Complex64> = (0..n).map(|i| s[i]).collect();
    let mut right = Mat::<Complex64>::zeros(n, n);
    for j in 0..n {
        let norm = (0..n).map(|i| u_raw[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Defective {
                condition: f64::INFINITY,
            });
        }
        for i in 0..n {
            right[(i, j)] = u_raw[(i, j)] / norm;
        }
    }
    let inv = right.partial_piv_lu().inverse();
    let condition = frobenius(&right) * frobenius(&inv);
    if !condition.is_finite() || condition > DEFECTIVE_CONDITION {
        return Err(Error::Defective { condition });
    }
    // rows of the inverse are the scaled left eigenvectors (conjugated)
    let left = Mat::<Complex64>::from_fn(n, n, |i, j| inv[(j, i)].conj());
    let eigenvalue_condition = (0..n)
        .map(|j| (0..n).map(|i| left[(i, j)].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    Ok(ModalDecomposition {
        eigenvalues,
        right,
        left,
        eigenvalue_condition,
        condition,
    })
}

impl ModalDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `max |left_i^H right_j - delta_ij|`.
    pub fn biorthogonality_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let dot: Complex64 = (0..n).map(|k| self.left[(k, i)].conj() * self.right[(k, j)]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).norm());
            }
        }
        worst
    }
}

/// Per-mode participation factors, indexed `[mode][state]`.
#[derive(Debug, Clone)]
pub struct Participation {
    pub complex: Vec<Vec<Complex64>>,
    /// Magnitudes normalized to sum to one for each mode.
    pub magnitudes: Vec<Vec<f64>>,
}

/// `p_ki = u_ki * conj(v_ki)` for biorthogonally normalized eigenvectors.
pub fn participation_factors(decomposition: &ModalDecomposition) -> Result<Participation> {
    let n = decomposition.dim();
    if decomposition.condition > DEFECTIVE_CONDITION {
        return Err(Error::Defective {
            condition: decomposition.condition,
        });
    }
    let mut complex = Vec::with_capacity(n);
    let mut magnitudes = Vec::with_capacity(n);
    for i in 0..n {
        let p: Vec<Complex64> = (0..n)
            .map(|k| decomposition.right[(k, i)] * decomposition.left[(k, i)].conj())
            .collect();
        let total: f64 = p.iter().map(|z| z.norm()).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroParticipation);
        }
        magnitudes.push(p.iter().map(|z| z.norm() / total).collect());
        complex.push(p);
    }
    Ok(Participation { complex, magnitudes })
}

/// Share of a mode's participation carried by converter-based device states.
pub fn ccbg_pi(participation: &[f64], labels: &[StateLabel]) -> Result<f64> {
    if participation.len() != labels.len() {
        return Err(Error::Validation("participation and label lengths differ".into()));
    }
    if participation.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("participation".into()));
    }
    let total: f64 = participation.iter().map(|p| p.abs()).sum();
    if total == 0.0 {
        return Err(Error::ZeroParticipation);
    }
    let converter: f64 = participation
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.class == DeviceClass::ConverterBased)
        .fold(0.0, |acc, (p, _)| acc + p.abs());
    Ok((converter / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    InterArea,
    Local,
    ConverterControl,
    NonOscillatory,
    Other,
}

impl ModeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeClass::InterArea => "inter_area",
            ModeClass::Local => "local",
            ModeClass::ConverterControl => "converter_control",
            ModeClass::NonOscillatory => "non_oscillatory",
            ModeClass::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub converter_threshold: f64,
    pub inter_area_hz: (f64, f64),
    pub local_hz: (f64, f64),
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            converter_threshold: 0.5,
            inter_area_hz: (0.1, 1.0),
            local_hz: (1.0, 3.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Position of the eigenvalue in the decomposition.
    pub index: usize,
    pub eigenvalue: Complex64,
    /// `None` only for an exactly zero eigenvalue.
    pub damping: Option<f64>,
    pub frequency_hz: f64,
    pub classification: ModeClass,
    pub participation: Vec<f64>,
    pub ccbg_pi: f64,
    pub is_critical: bool,
}

impl Mode {
    pub fn is_oscillatory(&self) -> bool {
        self.eigenvalue.im != 0.0
    }

    /// The `n` largest participations as `(state index, magnitude)`.
    pub fn top_participants(&self, n: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<(usize, f64)> = self.participation.iter().copied().enumerate().collect();
        idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        idx.truncate(n);
        idx
    }
}

pub fn classify_mode(mode: &Mode, cfg: &ClassifierConfig) -> ModeClass {
    if !mode.is_oscillatory() {
        return ModeClass::NonOscillatory;
    }
    if mode.ccbg_pi >= cfg.converter_threshold {
        return ModeClass::ConverterControl;
    }
    let f = mode.frequency_hz;
    if f >= cfg.inter_area_hz.0 && f < cfg.inter_area_hz.1 {
        ModeClass::InterArea
    } else if f >= cfg.local_hz.0 && f <= cfg.local_hz.1 {
        ModeClass::Local
    } else {
        ModeClass::Other
    }
}

/// One [`Mode`] per eigenvalue, classified.
pub fn build_modes(
    decomposition: &ModalDecomposition,
    labels: &[StateLabel],
    cfg: &ClassifierConfig,
) -> Result<Vec<Mode>> {
    let part = participation_factors(decomposition)?;
    decomposition
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let damping = damping_ratio(lambda).ok();
            let mut mode = Mode {
                index: i,
                eigenvalue: lambda,
                damping,
                frequency_hz: frequency_hz(lambda),
                classification: ModeClass::Other,
                ccbg_pi: ccbg_pi(&part.magnitudes[i], labels)?,
                participation: part.magnitudes[i].clone(),
                is_critical: damping.is_some_and(|z| z <= CRITICAL_DAMPING),
            };
            mode.classification = classify_mode(&mode, cfg);
            Ok(mode)
        })
        .collect()
}

fn better(a: &Mode, b: &Mode) -> bool {
    let (za, zb) = (a.damping.unwrap_or(f64::INFINITY), b.damping.unwrap_or(f64::INFINITY));
    if (za - zb).abs() > 1e-12 {
        return za < zb;
    }
    if a.eigenvalue.re != b.eigenvalue.re {
        return a.eigenvalue.re > b.eigenvalue.re;
    }
    a.frequency_hz < b.frequency_hz
}

/// Least-damped oscillatory mode of every class present (upper half plane only).
pub fn dominant_modes(modes: &[Mode]) -> BTreeMap<ModeClass, Mode> {
    let mut out: BTreeMap<ModeClass, Mode> = BTreeMap::new();
    for m in modes.iter().filter(|m| m.eigenvalue.im > 0.0) {
        match out.get(&m.classification) {
            Some(cur) if !better(m, cur) => {}
            _ => {
                out.insert(m.classification, m.clone());
            }
        }
    }
    out
}

/// Complete small-signal analysis of a model at an equilibrium.
#[derive(Debug, Clone)]
pub struct ModalAnalysis {
    pub state_matrix: StateMatrix,
    pub decomposition: ModalDecomposition,
    pub modes: Vec<Mode>,
}

impl ModalAnalysis {
    pub fn dominant(&self) -> BTreeMap<ModeClass, Mode> {
        dominant_modes(&self.modes)
    }

    /// All eigenvalues in the open left half-plane, ignoring the angle-reference
    /// eigenvalue at the origin (|λ| ≤ [`REFERENCE_EIGENVALUE_TOL`]).
    pub fn is_stable(&self) -> bool {
        self.decomposition
            .eigenvalues
            .iter()
            .all(|l| l.re < 0.0 || l.norm() <= REFERENCE_EIGENVALUE_TOL)
    }
}

pub fn analyze(model: &dyn Dynamics, equilibrium: &[f64], cfg: &ClassifierConfig) -> Result<ModalAnalysis> {
    let state_matrix = linearize(model, equilibrium, DEFAULT_FD_STEP)?;
    let decomposition = decompose(&state_matrix.a)?;
    let modes = build_modes(&decomposition, &state_matrix.labels, cfg)?;
    Ok(ModalAnalysis {
        state_matrix,
        decomposition,
        modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear(Mat<f64>);

    impl Dynamics for Linear {
        fn n_states(&self) -> usize {
            self.0.nrows()
        }
        fn state_labels(&self) -> Vec<StateLabel> {
            (0..self.0.nrows())
                .map(|k| StateLabel::new("lin", format!("x{k}"), DeviceClass::Synchronous))
                .collect()
        }
        fn derivatives(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
            for (i, d) in dx.iter_mut().enumerate() {
                *d = (0..x.len()).map(|j| self.0[(i, j)] * x[j]).sum();
            }
            Ok(())
        }
    }

    struct Cubic;

    impl Dynamics for Cubic {
        fn n_states(&self) -> usize {
            1
        }
        fn state_labels(&self) -> Vec<StateLabel> {
            vec![StateLabel::new("c", "x", DeviceClass::Synchronous)]
        }
        fn derivatives(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
            dx[0] = -x[0] + x[0].powi(3);
            Ok(())
        }
    }

    fn mat(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn linear_map_recovered_exactly() {
        let m = mat(&[&[-1.0, 2.0, 0.5], &[0.3, -4.0, 1.0], &[0.0, 7.0, -0.2]]);
        let sm = linearize(&Linear(m.clone()), &[0.0; 3], DEFAULT_FD_STEP).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((sm.a[(i, j)] - m[(i, j)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn cubic_scalar_at_origin() {
        let sm = linearize(&Cubic, &[0.0], DEFAULT_FD_STEP).unwrap();
        assert!((sm.a[(0, 0)] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn refuses_non_equilibrium() {
        match linearize(&Cubic, &[0.5], DEFAULT_FD_STEP) {
            Err(Error::NotEquilibrium { state, .. }) => assert_eq!(state, "c.x"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn damping_ratio_values() {
        let z = damping_ratio(Complex64::new(-0.046, 2.877)).unwrap();
        assert!((z - 0.016).abs() < 5e-4);
        assert_eq!(damping_ratio(Complex64::new(-1.0, 0.0)).unwrap(), 1.0);
        let z = damping_ratio(Complex64::new(0.026, 2.342)).unwrap();
        assert!((z + 0.011).abs() < 5e-4);
        assert!(matches!(
            damping_ratio(Complex64::new(0.0, 0.0)),
            Err(Error::ZeroEigenvalue)
        ));
    }

    #[test]
    fn diagonal_matrix_has_identity_participation() {
        let m = mat(&[&[-1.0, 0.0, 0.0], &[0.0, -2.0, 0.0], &[0.0, 0.0, -3.5]]);
        let d = decompose(&m).unwrap();
        let p = participation_factors(&d).unwrap();
        for (i, lam) in d.eigenvalues.iter().enumerate() {
            let k = (0..3).find(|&k| (m[(k, k)] - lam.re).abs() < 1e-12).unwrap();
            for s in 0..3 {
                let expected = if s == k { 1.0 } else { 0.0 };
                assert!((p.magnitudes[i][s] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complex_participations_sum_to_one() {
        let m = mat(&[&[-1.428_571, -0.107_143], &[376.99, 0.0]]);
        let d = decompose(&m).unwrap();
        let p = participation_factors(&d).unwrap();
        for row in &p.complex {
            let s: Complex64 = row.iter().sum();
            assert!((s - 1.0).norm() < 1e-10);
        }
        assert!(d.biorthogonality_error() < 1e-10);
    }

    #[test]
    fn defective_matrix_is_rejected() {
        let jordan = mat(&[&[-1.0, 1.0], &[0.0, -1.0]]);
        assert!(matches!(decompose(&jordan), Err(Error::Defective { .. })));
    }

    #[test]
    fn ccbg_pi_extremes() {
        let sync = vec![StateLabel::new("G", "a", DeviceClass::Synchronous); 3];
        assert_eq!(ccbg_pi(&[0.2, 0.3, 0.5], &sync).unwrap(), 0.0);
        let conv = vec![StateLabel::new("W", "a", DeviceClass::ConverterBased); 3];
        assert_eq!(ccbg_pi(&[0.2, 0.3, 0.5], &conv).unwrap(), 1.0);
        assert!(matches!(ccbg_pi(&[0.0; 3], &conv), Err(Error::ZeroParticipation)));
    }

    fn mode(re: f64, im: f64, ccbg: f64) -> Mode {
        let lambda = Complex64::new(re, im);
        Mode {
            index: 0,
            eigenvalue: lambda,
            damping: damping_ratio(lambda).ok(),
            frequency_hz: frequency_hz(lambda),
            classification: ModeClass::Other,
            participation: vec![1.0],
            ccbg_pi: ccbg,
            is_critical: false,
        }
    }

    #[test]
    fn classification_bands() {
        let cfg = ClassifierConfig::default();
        let w = |hz: f64| 2.0 * std::f64::consts::PI * hz;
        assert_eq!(classify_mode(&mode(-0.05, w(0.458), 0.01), &cfg), ModeClass::InterArea);
        assert_eq!(classify_mode(&mode(-1.0, w(1.363), 0.01), &cfg), ModeClass::Local);
        assert_eq!(
            classify_mode(&mode(-2.0, w(2.56), 0.985), &cfg),
            ModeClass::ConverterControl
        );
        assert_eq!(classify_mode(&mode(-2.0, 0.0, 0.985), &cfg), ModeClass::NonOscillatory);
        assert_eq!(classify_mode(&mode(-2.0, w(3.008), 0.0), &cfg), ModeClass::Local);
        assert_eq!(classify_mode(&mode(-2.0, w(5.0), 0.0), &cfg), ModeClass::Other);
    }

    #[test]
    fn dominant_tie_break_prefers_lower_frequency() {
        let cfg = ClassifierConfig::default();
        let zeta = 0.1_f64;
        let at = |w: f64| {
            let mut m = mode(-zeta * w / (1.0 - zeta * zeta).sqrt(), w, 0.0);
            m.classification = classify_mode(&m, &cfg);
            m
        };
        let modes = vec![at(9.0), at(7.0)];
        let d = dominant_modes(&modes);
        assert!((d[&ModeClass::Local].eigenvalue.im - 7.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_dominant() {
        let mut m = mode(-0.1, 3.0, 0.0);
        m.classification = classify_mode(&m, &ClassifierConfig::default());
        let d = dominant_modes(&[m.clone()]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[&ModeClass::InterArea], m);
    }
}
