//! Fock-space simulation of heralded noiseless linear amplification of dual-rail
//! (polarization) photonic qubits with generalized quantum scissors.
//!
//! Modules build on each other bottom-up: [`fock`] holds states and operators,
//! [`optics`] the linear-optical elements and detectors, [`amplifier`] the circuit and
//! its closed form, [`tomography`] the estimators, and [`harness`] the experiment runs.

pub mod amplifier;
pub mod error;
pub mod fock;
pub mod harness;
pub mod optics;
pub mod qubit;
pub mod tomography;

pub use amplifier::{
    analytic_model, analytic_model_with, build_input, gain_nominal, gain_saturated, nla_stage,
    qubit_amplifier, qubit_amplifier_with, AmplifierResult, AnalyticOutput, CircuitConfig,
    HeraldModel, HeraldPattern, HeraldedOutcome, SimulationOptions,
};
pub use error::{Error, Result};
pub use fock::{
    fidelity, purity, superpose, DensityOperator, FockBasis, FockState, ModeIndex, PassiveTransform,
};
pub use harness::{run_experiment, ExperimentPlan, Profile, RunMode, RunReport};
pub use optics::{
    apply_beamsplitter, detector_povm, embed_distinguishability, loss_channel, BeamsplitterSpec,
    DetectorModel, DetectorResponse, DistinguishabilitySpec, PhaseConvention,
};
pub use qubit::{Polarization, QubitAmplitudes};
pub use tomography::{
    apply_unitary_correction, estimate_gamma1, measured_gain, measurement_probs, reconstruct_qubit,
    success_probability_estimate, CountsRecord, PolarizationBasis, QubitState,
};
