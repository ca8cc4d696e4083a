//! Measurement configurations and their POVMs.
//!
//! Factorized (class F) measurements are set by a half- and a quarter-wave
//! plate in front of a polarizer in each arm. Jones convention:
//!
//! ```text
//! HWP(t) = [[cos 2t, sin 2t], [sin 2t, -cos 2t]]
//! QWP(t) = e^{-i pi/4} [[cos^2 t + i sin^2 t, (1 - i) sin t cos t],
//!                       [(1 - i) sin t cos t, sin^2 t + i cos^2 t]]
//! ```
//!
//! and the arm projects onto `|psi> = HWP(t_h)^dag QWP(t_q)^dag |H>`.
//!
//! General (class G) measurements are arbitrary two-qubit orthonormal bases.
//! Angles are radians in memory and degrees in serialized configs.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomographyError};
use crate::quantum::{unitarity_residual, CMatrix, MatrixRepr, Povm, PureState, C64, CVector, TOL};

/// Reduces an angle to `[-pi/2, pi/2)`, the projector period of a wave plate.
pub fn canonical_angle(theta: f64) -> f64 {
    (theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorizedDegrees", into = "FactorizedDegrees")]
pub struct FactorizedConfig {
    pub theta_h1: f64,
    pub theta_q1: f64,
    pub theta_h2: f64,
    pub theta_q2: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorizedDegrees {
    theta_h1_deg: f64,
    theta_q1_deg: f64,
    theta_h2_deg: f64,
    theta_q2_deg: f64,
}

impl From<FactorizedConfig> for FactorizedDegrees {
    fn from(c: FactorizedConfig) -> Self {
        Self {
            theta_h1_deg: c.theta_h1.to_degrees(),
            theta_q1_deg: c.theta_q1.to_degrees(),
            theta_h2_deg: c.theta_h2.to_degrees(),
            theta_q2_deg: c.theta_q2.to_degrees(),
        }
    }
}

impl TryFrom<FactorizedDegrees> for FactorizedConfig {
    type Error = TomographyError;

    fn try_from(d: FactorizedDegrees) -> Result<Self> {
        FactorizedConfig::new(
            d.theta_h1_deg.to_radians(),
            d.theta_q1_deg.to_radians(),
            d.theta_h2_deg.to_radians(),
            d.theta_q2_deg.to_radians(),
        )
    }
}

impl FactorizedConfig {
    /// Angles in radians; canonicalized to `[-pi/2, pi/2)`.
    pub fn new(theta_h1: f64, theta_q1: f64, theta_h2: f64, theta_q2: f64) -> Result<Self> {
        let a = [theta_h1, theta_q1, theta_h2, theta_q2];
        if a.iter().any(|t| !t.is_finite()) {
            return Err(TomographyError::InvalidConfig("wave plate angles must be finite".into()));
        }
        Ok(Self::from_array(a))
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            theta_h1: canonical_angle(a[0]),
            theta_q1: canonical_angle(a[1]),
            theta_h2: canonical_angle(a[2]),
            theta_q2: canonical_angle(a[3]),
        }
    }

    pub fn angles(&self) -> [f64; 4] {
        [self.theta_h1, self.theta_q1, self.theta_h2, self.theta_q2]
    }

    /// Angles that make the two arms project onto `first` and `second`.
    pub fn for_states(first: &PureState, second: &PureState) -> Result<Self> {
        let (h1, q1) = angles_for_state(first)?;
        let (h2, q2) = angles_for_state(second)?;
        Self::new(h1, q1, h2, q2)
    }

    /// Uniformly random angles.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_array(std::array::from_fn(|_| rng.random_range(-FRAC_PI_2..FRAC_PI_2)))
    }
}

/// An orthonormal two-qubit measurement basis (columns of a unitary).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralConfig {
    basis: CMatrix,
}

impl GeneralConfig {
    pub fn new(basis: CMatrix) -> Result<Self> {
        if basis.nrows() != 4 || basis.ncols() != 4 {
            return Err(TomographyError::InvalidConfig("a general configuration is a 4x4 unitary".into()));
        }
        let r = unitarity_residual(&basis);
        if !(r <= TOL) {
            return Err(TomographyError::InvalidConfig(format!("basis is not unitary (residual {r:e})")));
        }
        Ok(Self { basis })
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }
}

impl Serialize for GeneralConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            basis: MatrixRepr,
        }
        Repr { basis: MatrixRepr::from_matrix(&self.basis) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GeneralConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            basis: MatrixRepr,
        }
        let r = Repr::deserialize(d)?;
        let m = r.basis.to_matrix().map_err(serde::de::Error::custom)?;
        GeneralConfig::new(m).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum MeasurementConfig {
    Factorized(FactorizedConfig),
    General(GeneralConfig),
}

impl MeasurementConfig {
    pub fn compile(&self) -> Povm {
        match self {
            MeasurementConfig::Factorized(c) => compile_factorized(c),
            MeasurementConfig::General(c) => compile_general(c),
        }
    }
}

/// Uniform angle noise `delta ~ U[-delta_theta_max, delta_theta_max]` (radians).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "NoiseDegrees", into = "NoiseDegrees")]
pub struct NoiseModel {
    pub delta_theta_max: f64,
    pub enabled: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDegrees {
    delta_theta_max_deg: f64,
    enabled: bool,
}

impl From<NoiseModel> for NoiseDegrees {
    fn from(n: NoiseModel) -> Self {
        Self { delta_theta_max_deg: n.delta_theta_max.to_degrees(), enabled: n.enabled }
    }
}

impl TryFrom<NoiseDegrees> for NoiseModel {
    type Error = TomographyError;

    fn try_from(d: NoiseDegrees) -> Result<Self> {
        let n = NoiseModel { delta_theta_max: d.delta_theta_max_deg.to_radians(), enabled: d.enabled };
        n.validate()?;
        Ok(n)
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_degrees(delta_deg: f64) -> Result<Self> {
        let n = Self { delta_theta_max: delta_deg.to_radians(), enabled: delta_deg > 0.0 };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_theta_max >= 0.0) || !self.delta_theta_max.is_finite() {
            return Err(TomographyError::InvalidConfig("delta_theta_max must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.enabled && self.delta_theta_max > 0.0
    }
}

fn hwp(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = (2.0 * theta).sin_cos();
    [[C64::new(c, 0.0), C64::new(s, 0.0)], [C64::new(s, 0.0), C64::new(-c, 0.0)]]
}

fn qwp(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let phase = C64::from_polar(1.0, -FRAC_PI_4);
    let off = C64::new(1.0, -1.0) * (s * c);
    [
        [phase * C64::new(c * c, s * s), phase * off],
        [phase * off, phase * C64::new(s * s, c * c)],
    ]
}

fn adjoint_apply(m: &[[C64; 2]; 2], v: [C64; 2]) -> [C64; 2] {
    [
        m[0][0].conj() * v[0] + m[1][0].conj() * v[1],
        m[0][1].conj() * v[0] + m[1][1].conj() * v[1],
    ]
}

fn waveplate_amps(theta_h: f64, theta_q: f64) -> [C64; 2] {
    let h = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    adjoint_apply(&hwp(theta_h), adjoint_apply(&qwp(theta_q), h))
}

/// The polarization state selected by an arm with plates at `(theta_h, theta_q)`.
pub fn waveplate_state(theta_h: f64, theta_q: f64) -> PureState {
    let a = waveplate_amps(theta_h, theta_q);
    PureState::normalized(CVector::from_vec(a.to_vec())).expect("wave plates are unitary")
}

/// `(a, b) -> (-b*, a*)`.
fn orthogonal(a: [C64; 2]) -> [C64; 2] {
    [-a[1].conj(), a[0].conj()]
}

/// Projectors `{P1 P2, P1 P2c, P1c P2, P1c P2c}` with `Pc = I - P`.
pub fn compile_factorized(config: &FactorizedConfig) -> Povm {
    let a = waveplate_amps(config.theta_h1, config.theta_q1);
    let b = waveplate_amps(config.theta_h2, config.theta_q2);
    let arms1 = [a, orthogonal(a)];
    let arms2 = [b, orthogonal(b)];
    let u = CMatrix::from_fn(4, 4, |row, col| {
        let (x, y) = (col / 2, col % 2);
        arms1[x][row / 2] * arms2[y][row % 2]
    });
    Povm::from_basis_unchecked(&u)
}

/// Projectors onto the columns of the configured unitary.
pub fn compile_general(config: &GeneralConfig) -> Povm {
    Povm::from_basis_unchecked(&config.basis)
}

/// Bloch vector `(x, y, z)` of a qubit state, `|H>` at `+z`.
fn bloch(a: [C64; 2]) -> [f64; 3] {
    let n = a[0].norm_sqr() + a[1].norm_sqr();
    let c = a[0].conj() * a[1];
    [2.0 * c.re / n, 2.0 * c.im / n, (a[0].norm_sqr() - a[1].norm_sqr()) / n]
}

/// Canonical plate angles `(theta_h, theta_q)` selecting `target` up to phase,
/// with `theta_q` in `[-pi/4, pi/4]` and `theta_h` in `[-pi/4, pi/4)`.
///
/// The quarter-wave plate fixes the Bloch `y` component (the half-wave plate
/// flips its sign); the half-wave plate, a pi rotation about an axis in the
/// x-z plane, then reflects the remaining x-z projection into place.
pub fn angles_for_state(target: &PureState) -> Result<(f64, f64)> {
    if target.dim() != 2 {
        return Err(TomographyError::DimensionMismatch { expected: 2, found: target.dim() });
    }
    let amps = target.amplitudes();
    let t = bloch([amps[0], amps[1]]);
    let theta_q = -0.5 * t[1].clamp(-1.0, 1.0).asin();
    let u = bloch(adjoint_apply(&qwp(theta_q), [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]));
    let r_t = (t[0] * t[0] + t[2] * t[2]).sqrt();
    let theta_h = if r_t < 1e-12 {
        0.0
    } else {
        let gamma = t[0].atan2(t[2]);
        let beta = u[0].atan2(u[2]);
        let h = 0.25 * (gamma + beta);
        (h + FRAC_PI_4).rem_euclid(FRAC_PI_2) - FRAC_PI_4
    };
    Ok((theta_h, theta_q))
}

/// Independently shifts every angle by a uniform draw on `[-dtheta, dtheta]`.
pub fn apply_noise<R: Rng + ?Sized>(config: &FactorizedConfig, noise: &NoiseModel, rng: &mut R) -> FactorizedConfig {
    if !noise.is_active() {
        return *config;
    }
    let d = noise.delta_theta_max;
    let a = config.angles();
    FactorizedConfig::from_array(std::array::from_fn(|i| a[i] + rng.random_range(-d..=d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{fidelity_pure, haar_random_unitary, kron, DensityMatrix};
    use crate::stats;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn qubit(a: C64, b: C64) -> PureState {
        PureState::normalized(CVector::from_vec(vec![a, b])).unwrap()
    }

    fn projector_diff(a: &PureState, b: &PureState) -> f64 {
        (a.projector() - b.projector()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn waveplate_examples() {
        let h = PureState::basis(2, 0);
        assert_abs_diff_eq!(fidelity_pure(&waveplate_state(0.0, 0.0), &h).unwrap(), 1.0, epsilon = 1e-15);
        let plus = qubit(C64::new(1.0, 0.0), C64::new(1.0, 0.0));
        assert_abs_diff_eq!(fidelity_pure(&waveplate_state(PI / 8.0, 0.0), &plus).unwrap(), 1.0, epsilon = 1e-15);
        let mut r = rng(1);
        for _ in 0..1000 {
            let s = waveplate_state(r.random_range(-PI..PI), r.random_range(-PI..PI));
            assert_abs_diff_eq!(s.amplitudes().norm(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn waveplate_projector_has_period_pi() {
        let mut r = rng(2);
        for _ in 0..200 {
            let (h, q) = (r.random_range(-PI..PI), r.random_range(-PI..PI));
            let s = waveplate_state(h, q);
            assert!(projector_diff(&s, &waveplate_state(h + PI, q)) < 1e-12);
            assert!(projector_diff(&s, &waveplate_state(h, q + PI)) < 1e-12);
        }
    }

    #[test]
    fn factorized_examples() {
        let zero = FactorizedConfig::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let povm = compile_factorized(&zero);
        for (g, m) in povm.elements().iter().enumerate() {
            let e = PureState::basis(4, g).projector();
            assert!((m - e).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-15);
        }
        let hh = DensityMatrix::from_pure(&PureState::basis(4, 0));
        let p = povm.born_probabilities(&hh).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0, 0.0]);

        let mut r = rng(3);
        for _ in 0..1000 {
            let c = FactorizedConfig::random(&mut r);
            let povm = compile_factorized(&c);
            assert!(povm.completeness_residual() <= 1e-10);
            // Each element is the tensor product of its arm projectors.
            let p1 = waveplate_state(c.theta_h1, c.theta_q1).projector();
            let p2 = waveplate_state(c.theta_h2, c.theta_q2).projector();
            let id = CMatrix::identity(2, 2);
            let expected = [
                kron(&p1, &p2),
                kron(&p1, &(&id - &p2)),
                kron(&(&id - &p1), &p2),
                kron(&(&id - &p1), &(&id - &p2)),
            ];
            for (m, e) in povm.elements().iter().zip(&expected) {
                assert!((m - e).iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-12);
                assert_abs_diff_eq!(m.trace().re, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn general_examples() {
        let povm = compile_general(&GeneralConfig::new(CMatrix::identity(4, 4)).unwrap());
        for (g, m) in povm.elements().iter().enumerate() {
            assert!((m - PureState::basis(4, g).projector()).iter().all(|z| z.norm() < 1e-15));
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = CMatrix::from_row_slice(
            4,
            4,
            &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, -1.0, 1.0, -1.0, 0.0, 0.0]
                .map(|x| C64::new(x * s, 0.0)),
        );
        let povm = compile_general(&GeneralConfig::new(bell.clone()).unwrap());
        let phi_plus = DensityMatrix::from_pure(&PureState::new(bell.column(0).into_owned()).unwrap());
        let p = povm.born_probabilities(&phi_plus).unwrap();
        for (a, b) in p.iter().zip([1.0, 0.0, 0.0, 0.0]) {
            assert_abs_diff_eq!(a, &b, epsilon = 1e-14);
        }
        let mut r = rng(4);
        for _ in 0..200 {
            let povm = compile_general(&GeneralConfig::new(haar_random_unitary(4, &mut r)).unwrap());
            let e = povm.elements();
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        assert!((&e[i] * &e[j]).iter().all(|z| z.norm() <= 1e-10));
                    }
                }
            }
        }
        assert!(GeneralConfig::new(CMatrix::identity(4, 4) * C64::new(1.1, 0.0)).is_err());
    }

    #[test]
    fn angles_for_state_examples() {
        assert_eq!(angles_for_state(&PureState::basis(2, 0)).unwrap(), (0.0, 0.0));
        let circ = qubit(C64::new(1.0, 0.0), C64::new(0.0, 1.0));
        let (h, q) = angles_for_state(&circ).unwrap();
        assert_abs_diff_eq!(fidelity_pure(&waveplate_state(h, q), &circ).unwrap(), 1.0, epsilon = 1e-12);
        let v = PureState::basis(2, 1);
        let (h, q) = angles_for_state(&v).unwrap();
        assert_abs_diff_eq!(fidelity_pure(&waveplate_state(h, q), &v).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn angles_roundtrip() {
        let mut r = rng(5);
        for _ in 0..1000 {
            let target = PureState::haar(2, &mut r);
            let (h, q) = angles_for_state(&target).unwrap();
            assert!((-FRAC_PI_4..FRAC_PI_4).contains(&h) && q.abs() <= FRAC_PI_4);
            assert!(fidelity_pure(&waveplate_state(h, q), &target).unwrap() >= 1.0 - 1e-9);
        }
        for _ in 0..1000 {
            let (h, q) = (r.random_range(-FRAC_PI_4..FRAC_PI_4), r.random_range(-FRAC_PI_4..FRAC_PI_4));
            let (h2, q2) = angles_for_state(&waveplate_state(h, q)).unwrap();
            assert_abs_diff_eq!(q, q2, epsilon = 1e-7);
            assert_abs_diff_eq!(h, h2, epsilon = 1e-7);
        }
    }

    #[test]
    fn noise_support_and_uniformity() {
        let mut r = rng(6);
        let c = FactorizedConfig::new(0.1, -0.2, 0.3, 0.4).unwrap();
        assert_eq!(apply_noise(&c, &NoiseModel::none(), &mut r), c);
        assert_eq!(apply_noise(&c, &NoiseModel { delta_theta_max: 0.0, enabled: true }, &mut r), c);
        let noise = NoiseModel::from_degrees(3.0).unwrap();
        assert_abs_diff_eq!(noise.delta_theta_max, 0.05236, epsilon = 1e-5);
        let mut shifts = Vec::with_capacity(400_000);
        for _ in 0..100_000 {
            let n = apply_noise(&c, &noise, &mut r);
            for (a, b) in n.angles().iter().zip(c.angles()) {
                let s = a - b;
                assert!(s.abs() <= noise.delta_theta_max + 1e-15);
                shifts.push(s);
            }
        }
        let d = noise.delta_theta_max;
        let h = stats::histogram(&shifts, -d, d, 20);
        assert!(stats::chi_square_uniform_pvalue(&h) > 0.01);
    }

    #[test]
    fn configs_serialize_in_degrees() {
        let c = FactorizedConfig::new(PI / 8.0, 0.0, -PI / 4.0, 0.1).unwrap();
        let v = serde_json::to_value(MeasurementConfig::Factorized(c)).unwrap();
        assert_eq!(v["class"], "factorized");
        assert_abs_diff_eq!(v["theta_h1_deg"].as_f64().unwrap(), 22.5, epsilon = 1e-12);
        let back: MeasurementConfig = serde_json::from_value(v).unwrap();
        match back {
            MeasurementConfig::Factorized(b) => {
                for (x, y) in b.angles().iter().zip(c.angles()) {
                    assert_abs_diff_eq!(x, &y, epsilon = 1e-12);
                }
            }
            _ => panic!("wrong class"),
        }
        let n: NoiseModel = serde_json::from_str(r#"{"delta_theta_max_deg": 5.0, "enabled": true}"#).unwrap();
        assert_abs_diff_eq!(n.delta_theta_max, 5f64.to_radians(), epsilon = 1e-15);
        assert!(serde_json::from_str::<NoiseModel>(r#"{"delta_theta_max_deg": -1.0, "enabled": true}"#).is_err());
        let g = GeneralConfig::new(CMatrix::identity(4, 4)).unwrap();
        let s = serde_json::to_string(&MeasurementConfig::General(g.clone())).unwrap();
        assert_eq!(serde_json::from_str::<MeasurementConfig>(&s).unwrap(), MeasurementConfig::General(g));
    }
}
