//! Two-qubit polarization states, measurement settings and the analytic
//! figures of merit derived from them (CHSH, QBER, fidelity, concurrence).
//!
//! States are 4×4 density matrices in the basis |HH⟩, |HV⟩, |VH⟩, |VV⟩ with
//! Alice's qubit first. A setting at angle θ measures the projectors onto
//! |θ,+⟩ = cos θ|H⟩ + sin θ|V⟩ and |θ,−⟩ = −sin θ|H⟩ + cos θ|V⟩.

use std::f64::consts::SQRT_2;

use nalgebra::{Complex, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex<f64>;

/// Tolerance on Hermiticity and unit trace.
pub const MATRIX_TOL: f64 = 1e-12;
/// Most negative eigenvalue accepted as eigensolver noise.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("fidelity {0} outside [0.25, 1]")]
    FidelityOutOfRange(f64),
    #[error("density matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("density matrix has trace {0}, expected 1")]
    BadTrace(f64),
    #[error("density matrix has negative eigenvalue {0:e}")]
    NotPositive(f64),
    #[error("parameter {name} = {value} outside [0, 1]")]
    NotProbability { name: &'static str, value: f64 },
    #[error("malformed density matrix: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    #[serde(rename = "A")]
    Alice,
    #[serde(rename = "B")]
    Bob,
}

impl Party {
    /// Number of detectors: three settings × two outcomes for Alice, two × two for Bob.
    pub fn n_channels(self) -> u8 {
        match self {
            Party::Alice => 6,
            Party::Bob => 4,
        }
    }

    pub fn settings(self) -> &'static [SettingLabel] {
        match self {
            Party::Alice => &[SettingLabel::Ak, SettingLabel::A0, SettingLabel::A1],
            Party::Bob => &[SettingLabel::B0, SettingLabel::B1],
        }
    }
}

/// Measurement setting labels; each fixes an analyzer angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingLabel {
    #[serde(rename = "A_k")]
    Ak,
    #[serde(rename = "A_0")]
    A0,
    #[serde(rename = "A_1")]
    A1,
    #[serde(rename = "B_0")]
    B0,
    #[serde(rename = "B_1")]
    B1,
}

impl SettingLabel {
    /// Analyzer angle in degrees relative to H; the "−" outcome is at angle + 90°.
    pub fn angle_deg(self) -> f64 {
        match self {
            SettingLabel::Ak => 0.0,
            SettingLabel::A0 => -22.5,
            SettingLabel::A1 => -67.5,
            SettingLabel::B0 => 0.0,
            SettingLabel::B1 => -45.0,
        }
    }

    pub fn party(self) -> Party {
        match self {
            SettingLabel::Ak | SettingLabel::A0 | SettingLabel::A1 => Party::Alice,
            SettingLabel::B0 | SettingLabel::B1 => Party::Bob,
        }
    }

    /// Position of the setting within its party's list.
    pub fn index(self) -> u8 {
        match self {
            SettingLabel::Ak | SettingLabel::B0 => 0,
            SettingLabel::A0 | SettingLabel::B1 => 1,
            SettingLabel::A1 => 2,
        }
    }

    pub fn from_index(party: Party, index: u8) -> Option<Self> {
        party.settings().get(index as usize).copied()
    }

    /// Detector channel for this setting and outcome.
    pub fn channel(self, outcome: Outcome) -> u8 {
        self.index() * 2 + outcome.bit() as u8
    }

    /// Inverse of [`SettingLabel::channel`].
    pub fn from_channel(party: Party, channel: u8) -> Option<(Self, Outcome)> {
        let setting = Self::from_index(party, channel / 2)?;
        Some((setting, Outcome::from_bit(channel % 2 == 1)))
    }

    pub fn name(self) -> &'static str {
        match self {
            SettingLabel::Ak => "A_k",
            SettingLabel::A0 => "A_0",
            SettingLabel::A1 => "A_1",
            SettingLabel::B0 => "B_0",
            SettingLabel::B1 => "B_1",
        }
    }
}

/// Measurement outcome. "+" maps to key bit 0 and "−" to key bit 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn bit(self) -> bool {
        matches!(self, Outcome::Minus)
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Outcome::Minus
        } else {
            Outcome::Plus
        }
    }
}

/// A party's setting with its fixed analyzer angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub party: Party,
    pub label: SettingLabel,
    pub angle_deg: f64,
}

impl From<SettingLabel> for MeasurementSetting {
    fn from(label: SettingLabel) -> Self {
        Self { party: label.party(), label, angle_deg: label.angle_deg() }
    }
}

/// A validated two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4<C64>,
}

fn analyzer(theta_deg: f64, outcome: Outcome) -> [f64; 2] {
    let t = theta_deg.to_radians();
    match outcome {
        Outcome::Plus => [t.cos(), t.sin()],
        Outcome::Minus => [-t.sin(), t.cos()],
    }
}

fn phi_plus_vector() -> Vector4<C64> {
    let a = C64::new(1.0 / SQRT_2, 0.0);
    Vector4::new(a, C64::new(0.0, 0.0), C64::new(0.0, 0.0), a)
}

impl TwoQubitState {
    /// Validate and wrap a density matrix.
    pub fn new(rho: Matrix4<C64>) -> Result<Self, QuantumError> {
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QuantumError::Malformed("non-finite entry".into()));
        }
        let dev = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > MATRIX_TOL {
            return Err(QuantumError::NotHermitian(dev));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > MATRIX_TOL || tr.im.abs() > MATRIX_TOL {
            return Err(QuantumError::BadTrace(tr.re));
        }
        let min_eig = hermitian_eigenvalues(&rho).into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_TOL {
            return Err(QuantumError::NotPositive(min_eig));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> &Matrix4<C64> {
        &self.rho
    }

    /// The Bell state |φ⁺⟩ = (|HH⟩ + |VV⟩)/√2.
    pub fn phi_plus() -> Self {
        let v = phi_plus_vector();
        Self { rho: v * v.adjoint() }
    }

    /// The maximally mixed state I/4.
    pub fn maximally_mixed() -> Self {
        Self { rho: Matrix4::identity() * C64::new(0.25, 0.0) }
    }

    /// A pure product state of two linear polarizations.
    pub fn product(theta_a_deg: f64, theta_b_deg: f64) -> Self {
        let a = analyzer(theta_a_deg, Outcome::Plus);
        let b = analyzer(theta_b_deg, Outcome::Plus);
        let v = kron_real(a, b);
        Self { rho: v * v.adjoint() }
    }

    /// Werner state p·|φ⁺⟩⟨φ⁺| + (1−p)·I/4 with p = (4F−1)/3.
    pub fn werner_from_fidelity(fidelity: f64) -> Result<Self, QuantumError> {
        if !(0.25..=1.0).contains(&fidelity) || fidelity.is_nan() {
            return Err(QuantumError::FidelityOutOfRange(fidelity));
        }
        let p = (4.0 * fidelity - 1.0) / 3.0;
        let rho = Self::phi_plus().rho * C64::new(p, 0.0)
            + Matrix4::identity() * C64::new((1.0 - p) / 4.0, 0.0);
        Ok(Self { rho })
    }

    /// Apply a depolarizing map with parameter `lambda` to Bob's qubit:
    /// ρ ↦ (1−λ)ρ + λ·ρ_A ⊗ I/2.
    pub fn depolarize_bob(&self, lambda: f64) -> Result<Self, QuantumError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(QuantumError::NotProbability { name: "depolarization", value: lambda });
        }
        let mut out = self.rho * C64::new(1.0 - lambda, 0.0);
        for a in 0..2 {
            for a2 in 0..2 {
                let rho_a = self.rho[(2 * a, 2 * a2)] + self.rho[(2 * a + 1, 2 * a2 + 1)];
                for b in 0..2 {
                    out[(2 * a + b, 2 * a2 + b)] += rho_a * C64::new(lambda / 2.0, 0.0);
                }
            }
        }
        Ok(Self { rho: out })
    }

    /// Born-rule probabilities (++, +−, −+, −−) for analyzer angles θA, θB.
    pub fn joint_outcome_probs(&self, theta_a_deg: f64, theta_b_deg: f64) -> [f64; 4] {
        let mut p = [0.0; 4];
        let outcomes = [
            (Outcome::Plus, Outcome::Plus),
            (Outcome::Plus, Outcome::Minus),
            (Outcome::Minus, Outcome::Plus),
            (Outcome::Minus, Outcome::Minus),
        ];
        for (k, (oa, ob)) in outcomes.into_iter().enumerate() {
            let v = kron_real(analyzer(theta_a_deg, oa), analyzer(theta_b_deg, ob));
            let val = (v.adjoint() * self.rho * v)[(0, 0)].re;
            p[k] = val.max(0.0);
        }
        p
    }

    /// Marginal outcome probabilities (+, −) for one party at angle θ.
    pub fn marginal_probs(&self, party: Party, theta_deg: f64) -> [f64; 2] {
        let other = 0.0;
        let p = match party {
            Party::Alice => self.joint_outcome_probs(theta_deg, other),
            Party::Bob => self.joint_outcome_probs(other, theta_deg),
        };
        match party {
            Party::Alice => [p[0] + p[1], p[2] + p[3]],
            Party::Bob => [p[0] + p[2], p[1] + p[3]],
        }
    }

    /// Correlation E = p++ + p−− − p+− − p−+ for a pair of settings.
    pub fn correlation(&self, a: SettingLabel, b: SettingLabel) -> f64 {
        let p = self.joint_outcome_probs(a.angle_deg(), b.angle_deg());
        p[0] + p[3] - p[1] - p[2]
    }

    /// S = E(A0,B0) + E(A0,B1) − E(A1,B0) + E(A1,B1).
    pub fn chsh_expected(&self) -> f64 {
        use SettingLabel::*;
        self.correlation(A0, B0) + self.correlation(A0, B1) - self.correlation(A1, B0)
            + self.correlation(A1, B1)
    }

    /// Q = (1 − E(A_k, B_0))/2.
    pub fn qber_expected(&self) -> f64 {
        (1.0 - self.correlation(SettingLabel::Ak, SettingLabel::B0)) / 2.0
    }

    /// ⟨φ⁺|ρ|φ⁺⟩.
    pub fn fidelity_to_bell(&self) -> f64 {
        let v = phi_plus_vector();
        (v.adjoint() * self.rho * v)[(0, 0)].re
    }

    /// Wootters concurrence max(0, λ1 − λ2 − λ3 − λ4), where λi are the
    /// decreasing square roots of the spectrum of √ρ ρ̃ √ρ and
    /// ρ̃ = (σy⊗σy) ρ* (σy⊗σy).
    pub fn concurrence(&self) -> f64 {
        let mut yy = Matrix4::<C64>::zeros();
        yy[(0, 3)] = C64::new(-1.0, 0.0);
        yy[(1, 2)] = C64::new(1.0, 0.0);
        yy[(2, 1)] = C64::new(1.0, 0.0);
        yy[(3, 0)] = C64::new(-1.0, 0.0);
        let rho_tilde = yy * self.rho.conjugate() * yy;
        let sqrt_rho = hermitian_sqrt(&self.rho);
        let m = sqrt_rho * rho_tilde * sqrt_rho;
        let m = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let mut lambdas: Vec<f64> =
            hermitian_eigenvalues(&m).into_iter().map(|mu| mu.max(0.0).sqrt()).collect();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0)
    }
}

fn kron_real(a: [f64; 2], b: [f64; 2]) -> Vector4<C64> {
    Vector4::new(
        C64::new(a[0] * b[0], 0.0),
        C64::new(a[0] * b[1], 0.0),
        C64::new(a[1] * b[0], 0.0),
        C64::new(a[1] * b[1], 0.0),
    )
}

fn hermitian_eigenvalues(m: &Matrix4<C64>) -> Vec<f64> {
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    sym.symmetric_eigenvalues().iter().copied().collect()
}

fn hermitian_sqrt(m: &Matrix4<C64>) -> Matrix4<C64> {
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut d = Matrix4::<C64>::zeros();
    for i in 0..4 {
        d[(i, i)] = C64::new(eig.eigenvalues[i].max(0.0).sqrt(), 0.0);
    }
    eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// JSON form of a density matrix: row-major rows of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DensityMatrixJson(pub Vec<Vec<[f64; 2]>>);

impl From<&TwoQubitState> for DensityMatrixJson {
    fn from(s: &TwoQubitState) -> Self {
        Self(
            (0..4)
                .map(|r| (0..4).map(|c| [s.rho[(r, c)].re, s.rho[(r, c)].im]).collect())
                .collect(),
        )
    }
}

impl TryFrom<&DensityMatrixJson> for TwoQubitState {
    type Error = QuantumError;

    fn try_from(j: &DensityMatrixJson) -> Result<Self, QuantumError> {
        if j.0.len() != 4 || j.0.iter().any(|row| row.len() != 4) {
            return Err(QuantumError::Malformed("expected 4 rows of 4 [re, im] pairs".into()));
        }
        let rho = Matrix4::from_fn(|r, c| C64::new(j.0[r][c][0], j.0[r][c][1]));
        TwoQubitState::new(rho)
    }
}

impl Serialize for TwoQubitState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DensityMatrixJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TwoQubitState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = DensityMatrixJson::deserialize(d)?;
        TwoQubitState::try_from(&j).map_err(serde::de::Error::custom)
    }
}
