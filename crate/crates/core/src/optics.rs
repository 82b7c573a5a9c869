//! Passive linear-optical elements, loss, detector POVMs and the partial
//! distinguishability embedding used to model imperfect HOM visibility.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Result};
use crate::fock::{DensityOperator, FockState, ModeIndex, PassiveTransform};

/// Phase convention of a variable beamsplitter. Both route amplitude `√η` from each
/// input mode back into itself; they differ only in the phases of the cross terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PhaseConvention {
    /// `a† -> √η a† + √(1-η) b†`, `b† -> √(1-η) a† - √η b†`.
    #[default]
    RealOrthogonal,
    /// `a† -> √η a† + i√(1-η) b†`, `b† -> i√(1-η) a† + √η b†`.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamsplitterSpec {
    pub reflectivity: f64,
    pub modes: (ModeIndex, ModeIndex),
    #[serde(default)]
    pub convention: PhaseConvention,
}

impl BeamsplitterSpec {
    pub fn new(reflectivity: f64, a: usize, b: usize) -> Result<Self> {
        Self::with_convention(reflectivity, a, b, PhaseConvention::default())
    }

    pub fn with_convention(
        reflectivity: f64,
        a: usize,
        b: usize,
        convention: PhaseConvention,
    ) -> Result<Self> {
        check_range("reflectivity", reflectivity, 0.0, 1.0, "[0, 1]")?;
        Ok(BeamsplitterSpec {
            reflectivity,
            modes: (ModeIndex(a), ModeIndex(b)),
            convention,
        })
    }

    /// Single-particle matrix `u[out][in]`.
    pub fn unitary(&self) -> [[Complex64; 2]; 2] {
        beamsplitter_unitary(self.reflectivity, self.convention)
    }
}

pub fn beamsplitter_unitary(eta: f64, convention: PhaseConvention) -> [[Complex64; 2]; 2] {
    let r = eta.sqrt();
    let t = (1.0 - eta).sqrt();
    match convention {
        PhaseConvention::RealOrthogonal => [
            [Complex64::new(r, 0.0), Complex64::new(t, 0.0)],
            [Complex64::new(t, 0.0), Complex64::new(-r, 0.0)],
        ],
        PhaseConvention::Symmetric => [
            [Complex64::new(r, 0.0), Complex64::new(0.0, t)],
            [Complex64::new(0.0, t), Complex64::new(r, 0.0)],
        ],
    }
}

pub fn apply_beamsplitter<S: PassiveTransform>(state: &S, spec: &BeamsplitterSpec) -> Result<S> {
    check_range("reflectivity", spec.reflectivity, 0.0, 1.0, "[0, 1]")?;
    state.apply_two_mode(spec.modes.0 .0, spec.modes.1 .0, &spec.unitary())
}

/// Transmission `t` through a beamsplitter into a fresh environment mode, which is
/// then traced out.
pub fn loss_channel(rho: &DensityOperator, mode: ModeIndex, t: f64) -> Result<DensityOperator> {
    check_range("transmission", t, 0.0, 1.0, "[0, 1]")?;
    let m = rho.num_modes();
    let extended = rho.tensor(&DensityOperator::vacuum(1, 0));
    let coupled = apply_beamsplitter(&extended, &BeamsplitterSpec::new(t, mode.0, m)?)?;
    coupled.partial_trace(&(0..m).collect::<Vec<_>>())
}

/// How a detector's efficiency enters its click statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorResponse {
    /// Each photon is lost independently before detection: `P(no click | n) = (1-δ)^n`.
    #[default]
    PhotonLoss,
    /// The detector fires with probability `δ` whenever at least one photon arrives.
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    #[serde(default)]
    pub number_resolving: bool,
    #[serde(default)]
    pub response: DetectorResponse,
}

impl DetectorModel {
    pub fn new(
        efficiency: f64,
        number_resolving: bool,
        response: DetectorResponse,
    ) -> Result<Self> {
        check_range("detector efficiency", efficiency, 0.0, 1.0, "[0, 1]")?;
        Ok(DetectorModel {
            efficiency,
            number_resolving,
            response,
        })
    }

    /// Threshold detector with per-photon loss.
    pub fn threshold(efficiency: f64) -> Result<Self> {
        Self::new(efficiency, false, DetectorResponse::PhotonLoss)
    }

    /// Diagonal of the no-click element on `|n⟩`.
    pub fn no_click(&self, n: usize) -> f64 {
        let d = self.efficiency;
        match (self.response, n) {
            (_, 0) => 1.0,
            (DetectorResponse::PhotonLoss, n) => (1.0 - d).powi(n as i32),
            (DetectorResponse::Gated, _) => 1.0 - d,
        }
    }

    pub fn click(&self, n: usize) -> f64 {
        1.0 - self.no_click(n)
    }

    /// Diagonal of the "registered exactly one photon" element of a number-resolving detector.
    pub fn exactly_one(&self, n: usize) -> f64 {
        let d = self.efficiency;
        match (self.response, n) {
            (_, 0) => 0.0,
            (DetectorResponse::PhotonLoss, n) => d * n as f64 * (1.0 - d).powi(n as i32 - 1),
            (DetectorResponse::Gated, 1) => d,
            (DetectorResponse::Gated, _) => 0.0,
        }
    }

    /// Probability that `n` incident photons produce a heralding signal: a click for
    /// threshold detectors, a single-photon reading for number-resolving ones.
    pub fn herald(&self, n: usize) -> f64 {
        if self.number_resolving {
            self.exactly_one(n)
        } else {
            self.click(n)
        }
    }

    /// Probability that the detector reports nothing (a zero reading).
    pub fn silent(&self, n: usize) -> f64 {
        self.no_click(n)
    }
}

/// Diagonal POVM elements of one detector mode on `|0⟩ .. |max_photons⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorPovm {
    pub no_click: Vec<f64>,
    pub click: Vec<f64>,
    /// Only meaningful for number-resolving detectors.
    pub exactly_one: Vec<f64>,
}

pub fn detector_povm(model: &DetectorModel, max_photons: usize) -> DetectorPovm {
    let range = 0..=max_photons;
    DetectorPovm {
        no_click: range.clone().map(|n| model.no_click(n)).collect(),
        click: range.clone().map(|n| model.click(n)).collect(),
        exactly_one: range.map(|n| model.exactly_one(n)).collect(),
    }
}

/// Mode overlap of an ancilla photon with the signal, expressed as HOM visibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistinguishabilitySpec {
    pub visibility: f64,
}

impl DistinguishabilitySpec {
    pub fn new(visibility: f64) -> Result<Self> {
        check_range("visibility", visibility, 0.0, 1.0, "[0, 1]")?;
        Ok(DistinguishabilitySpec { visibility })
    }
}

/// One photon split as `√V |1,0⟩ + √(1-V) |0,1⟩` over (matched, orthogonal) modes.
pub fn embed_distinguishability(spec: &DistinguishabilitySpec) -> Result<FockState> {
    check_range("visibility", spec.visibility, 0.0, 1.0, "[0, 1]")?;
    let matched = FockState::basis_state(2, 1, &[1, 0])?;
    let orthogonal = FockState::basis_state(2, 1, &[0, 1])?;
    crate::fock::superpose(&[
        (Complex64::new(spec.visibility.sqrt(), 0.0), &matched),
        (
            Complex64::new((1.0 - spec.visibility).sqrt(), 0.0),
            &orthogonal,
        ),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomMeasurement {
    pub coincidence: f64,
    pub distinguishable_coincidence: f64,
    pub visibility: f64,
}

/// Simulates a 50/50 HOM measurement between a signal photon and an ancilla photon
/// embedded with the given overlap, against the fully distinguishable reference.
pub fn simulate_hom(spec: &DistinguishabilitySpec) -> Result<HomMeasurement> {
    let coincidence = hom_coincidence(spec)?;
    let reference = hom_coincidence(&DistinguishabilitySpec::new(0.0)?)?;
    Ok(HomMeasurement {
        coincidence,
        distinguishable_coincidence: reference,
        visibility: 1.0 - coincidence / reference,
    })
}

fn hom_coincidence(spec: &DistinguishabilitySpec) -> Result<f64> {
    // modes: 0 signal, 1 ancilla (matched), 2 ancilla (orthogonal), 3 signal-side orthogonal
    let signal = FockState::basis_state(1, 1, &[1])?;
    let state = signal
        .tensor(&embed_distinguishability(spec)?)
        .tensor(&FockState::vacuum(1, 0));
    let state = apply_beamsplitter(&state, &BeamsplitterSpec::new(0.5, 0, 1)?)?;
    let state = apply_beamsplitter(&state, &BeamsplitterSpec::new(0.5, 3, 2)?)?;
    let basis = state.basis().clone();
    Ok(basis
        .iter()
        .zip(state.amplitudes().iter())
        .filter(|(occ, _)| occ[0] + occ[3] > 0 && occ[1] + occ[2] > 0)
        .map(|(_, a)| a.norm_sqr())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockState;

    fn amp(s: &FockState, occ: &[u8]) -> Complex64 {
        s.amplitude(occ)
    }

    #[test]
    fn balanced_beamsplitter_hom_dip() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let out = apply_beamsplitter(
            &FockState::basis_state(2, 2, &[1, 1]).unwrap(),
            &BeamsplitterSpec::new(0.5, 0, 1).unwrap(),
        )
        .unwrap();
        assert!(amp(&out, &[1, 1]).norm() < 1e-15);
        assert!((amp(&out, &[2, 0]).re - s).abs() < 1e-15);
        assert!((amp(&out, &[0, 2]).re + s).abs() < 1e-15);
    }

    #[test]
    fn full_reflection_is_identity_on_first_mode() {
        let out = apply_beamsplitter(
            &FockState::basis_state(2, 1, &[1, 0]).unwrap(),
            &BeamsplitterSpec::new(1.0, 0, 1).unwrap(),
        )
        .unwrap();
        assert!((amp(&out, &[1, 0]).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn second_input_follows_convention() {
        // η from g² = 3.48 via η = g²/(1+g²); expected amplitudes √(1-η), -√η
        let eta: f64 = 0.7768;
        let out = apply_beamsplitter(
            &FockState::basis_state(2, 1, &[0, 1]).unwrap(),
            &BeamsplitterSpec::new(eta, 0, 1).unwrap(),
        )
        .unwrap();
        assert!((amp(&out, &[1, 0]).re - 0.472_440_472_440_708_6).abs() < 1e-12);
        assert!((amp(&out, &[0, 1]).re + 0.881_362_581_461_228_1).abs() < 1e-12);
    }

    #[test]
    fn same_mode_is_rejected() {
        let s = FockState::basis_state(2, 1, &[1, 0]).unwrap();
        let spec = BeamsplitterSpec::new(0.5, 1, 1).unwrap();
        assert!(matches!(
            apply_beamsplitter(&s, &spec),
            Err(crate::Error::SameMode(1))
        ));
        assert!(BeamsplitterSpec::new(1.5, 0, 1).is_err());
    }

    #[test]
    fn loss_on_single_photon() {
        let one = DensityOperator::from_pure(&FockState::basis_state(1, 1, &[1]).unwrap());
        for t in [0.0, 0.3, 0.5, 1.0] {
            let out = loss_channel(&one, ModeIndex(0), t).unwrap();
            assert!((out.element(&[1], &[1]).re - t).abs() < 1e-12);
            assert!((out.element(&[0], &[0]).re - (1.0 - t)).abs() < 1e-12);
            assert!(out.element(&[0], &[1]).norm() < 1e-12);
        }
    }

    #[test]
    fn detector_click_probabilities() {
        let ideal = DetectorModel::threshold(1.0).unwrap();
        assert_eq!(ideal.click(1), 1.0);
        let half = DetectorModel::threshold(0.5).unwrap();
        assert!((half.click(2) - 0.75).abs() < 1e-15);
        let dead = DetectorModel::threshold(0.0).unwrap();
        assert!((0..4).all(|n| dead.click(n) == 0.0));

        let pnr = DetectorModel::new(0.5, true, DetectorResponse::PhotonLoss).unwrap();
        assert!((pnr.exactly_one(2) - 0.5).abs() < 1e-15);
        assert!((pnr.exactly_one(3) - 3.0 * 0.5 * 0.25).abs() < 1e-15);

        let gated = DetectorModel::new(0.5, false, DetectorResponse::Gated).unwrap();
        assert_eq!(gated.click(2), 0.5);
    }

    #[test]
    fn povm_is_complete() {
        for response in [DetectorResponse::PhotonLoss, DetectorResponse::Gated] {
            for d in [0.0, 0.2, 0.5, 1.0] {
                let model = DetectorModel::new(d, false, response).unwrap();
                let povm = detector_povm(&model, 5);
                for n in 0..=5 {
                    assert_eq!(povm.no_click[n] + povm.click[n], 1.0);
                }
            }
        }
    }

    #[test]
    fn embedding_limits() {
        let full = embed_distinguishability(&DistinguishabilitySpec::new(1.0).unwrap()).unwrap();
        assert!((amp(&full, &[1, 0]).re - 1.0).abs() < 1e-15);
        let none = embed_distinguishability(&DistinguishabilitySpec::new(0.0).unwrap()).unwrap();
        assert!((amp(&none, &[0, 1]).re - 1.0).abs() < 1e-15);
        assert!(DistinguishabilitySpec::new(-0.1).is_err());

        let hom = simulate_hom(&DistinguishabilitySpec::new(0.0).unwrap()).unwrap();
        assert!((hom.coincidence - hom.distinguishable_coincidence).abs() < 1e-15);
        assert!((hom.coincidence - 0.5).abs() < 1e-12);
    }
}
