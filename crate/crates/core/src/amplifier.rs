//! Generalized quantum-scissors stages, the two-stage polarization-qubit amplifier,
//! and its closed-form imperfection model.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::fock::{DensityOperator, FockState, ModeIndex, PassiveTransform};
use crate::optics::{
    beamsplitter_unitary, embed_distinguishability, loss_channel, DetectorModel, DetectorResponse,
    DistinguishabilitySpec, PhaseConvention,
};
use crate::qubit::QubitAmplitudes;

/// Photon-number cutoff the two-stage circuit needs: signal plus two ancillas.
pub const REQUIRED_CUTOFF: usize = 3;

fn default_eps_det() -> f64 {
    0.5
}

fn default_eps_path() -> f64 {
    0.64
}

fn default_cutoff() -> usize {
    REQUIRED_CUTOFF
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitConfig {
    pub gamma1: f64,
    pub qubit: QubitAmplitudes,
    #[serde(rename = "eta_H")]
    pub eta_h: f64,
    #[serde(rename = "eta_V")]
    pub eta_v: f64,
    pub tau: f64,
    pub delta: f64,
    #[serde(rename = "V1")]
    pub v1: f64,
    #[serde(rename = "V2")]
    pub v2: f64,
    #[serde(default = "default_eps_det")]
    pub eps_det: f64,
    #[serde(default = "default_eps_path")]
    pub eps_path: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
}

/// `η = g²/(1+g²)`.
pub fn reflectivity_for_gain(g2: f64) -> f64 {
    g2 / (1.0 + g2)
}

/// `g² = η/(1-η)`.
pub fn gain_for_reflectivity(eta: f64) -> f64 {
    eta / (1.0 - eta)
}

impl CircuitConfig {
    /// Ideal source, detectors and mode matching at the given gain.
    pub fn ideal(gamma1: f64, g2: f64, qubit: QubitAmplitudes) -> Self {
        let eta = reflectivity_for_gain(g2);
        CircuitConfig {
            gamma1,
            qubit,
            eta_h: eta,
            eta_v: eta,
            tau: 1.0,
            delta: 1.0,
            v1: 1.0,
            v2: 1.0,
            eps_det: default_eps_det(),
            eps_path: default_eps_path(),
            cutoff: REQUIRED_CUTOFF,
        }
    }

    pub fn with_g2(mut self, g2: f64) -> Self {
        let eta = reflectivity_for_gain(g2);
        self.eta_h = eta;
        self.eta_v = eta;
        self
    }

    /// `g²` of the H stage; equals the V stage's when the reflectivities agree.
    pub fn g2(&self) -> f64 {
        gain_for_reflectivity(self.eta_h)
    }

    pub fn gamma0(&self) -> f64 {
        1.0 - self.gamma1
    }

    pub fn validate(&self) -> Result<()> {
        check_range("gamma1", self.gamma1, 0.0, 1.0, "[0, 1]")?;
        self.qubit.validate()?;
        for (name, eta) in [("eta_H", self.eta_h), ("eta_V", self.eta_v)] {
            if !(eta > 0.0 && eta < 1.0) {
                return Err(Error::OutOfRange {
                    name,
                    value: eta,
                    range: "(0, 1)",
                });
            }
        }
        for (name, v) in [
            ("tau", self.tau),
            ("delta", self.delta),
            ("eps_det", self.eps_det),
            ("eps_path", self.eps_path),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::OutOfRange {
                    name,
                    value: v,
                    range: "(0, 1]",
                });
            }
        }
        check_range("V1", self.v1, 0.0, 1.0, "[0, 1]")?;
        check_range("V2", self.v2, 0.0, 1.0, "[0, 1]")?;
        if self.cutoff < REQUIRED_CUTOFF {
            return Err(Error::Invalid(format!(
                "cutoff {} is below the {REQUIRED_CUTOFF} photons the circuit can hold",
                self.cutoff
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: CircuitConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// How herald detectors respond. The default (threshold detectors that fire with
/// probability `δ` whenever light arrives) is the model behind the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeraldModel {
    #[serde(default)]
    pub number_resolving: bool,
    #[serde(default = "gated")]
    pub response: DetectorResponse,
}

fn gated() -> DetectorResponse {
    DetectorResponse::Gated
}

impl Default for HeraldModel {
    fn default() -> Self {
        HeraldModel {
            number_resolving: false,
            response: DetectorResponse::Gated,
        }
    }
}

impl HeraldModel {
    /// Heralds that accept exactly one photon; with `δ = τ = 1` this is the textbook
    /// scissors, whose output is the ideal amplified state.
    pub fn number_resolving() -> Self {
        HeraldModel {
            number_resolving: true,
            response: DetectorResponse::Gated,
        }
    }

    pub fn detector(&self, efficiency: f64) -> DetectorModel {
        DetectorModel {
            efficiency,
            number_resolving: self.number_resolving,
            response: self.response,
        }
    }

    /// Effective vacuum-inflation factor of the closed form for this herald model.
    ///
    /// Every model shares `(1-τ)g²/τ` from a missing ancilla; the bunched two-photon
    /// events add `f₂/δ` where `f₂` is the probability that two photons on one
    /// detector produce a herald.
    pub fn saturation_factor(&self, g2: f64, tau: f64, delta: f64) -> f64 {
        let f2 = self.detector(delta).herald(2);
        (1.0 + (1.0 - tau) * g2) / tau + f2 / delta - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeraldDetector {
    D1,
    D2,
    D3,
    D4,
}

impl fmt::Display for HeraldDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Which detector fired in each stage; `success = false` is the fail projector.
///
/// Serialized as its label: `D1D3`, `D2`, `fail`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HeraldPattern {
    pub stage1: Option<HeraldDetector>,
    pub stage2: Option<HeraldDetector>,
    pub success: bool,
}

impl HeraldPattern {
    pub const FAIL: HeraldPattern = HeraldPattern {
        stage1: None,
        stage2: None,
        success: false,
    };

    /// The four two-stage success patterns in canonical order.
    pub const SUCCESSES: [HeraldPattern; 4] = [
        HeraldPattern::pair(HeraldDetector::D1, HeraldDetector::D3),
        HeraldPattern::pair(HeraldDetector::D1, HeraldDetector::D4),
        HeraldPattern::pair(HeraldDetector::D2, HeraldDetector::D3),
        HeraldPattern::pair(HeraldDetector::D2, HeraldDetector::D4),
    ];

    pub const fn pair(stage1: HeraldDetector, stage2: HeraldDetector) -> Self {
        HeraldPattern {
            stage1: Some(stage1),
            stage2: Some(stage2),
            success: true,
        }
    }

    pub const fn single(detector: HeraldDetector) -> Self {
        HeraldPattern {
            stage1: Some(detector),
            stage2: None,
            success: true,
        }
    }
}

impl fmt::Display for HeraldPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.success, self.stage1, self.stage2) {
            (false, _, _) => write!(f, "fail"),
            (true, Some(a), Some(b)) => write!(f, "{a}{b}"),
            (true, Some(a), None) => write!(f, "{a}"),
            _ => write!(f, "?"),
        }
    }
}

impl Serialize for HeraldPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HeraldPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for HeraldPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("fail") {
            return Ok(HeraldPattern::FAIL);
        }
        let parse = |t: &str| match t.to_ascii_uppercase().as_str() {
            "D1" => Ok(HeraldDetector::D1),
            "D2" => Ok(HeraldDetector::D2),
            "D3" => Ok(HeraldDetector::D3),
            "D4" => Ok(HeraldDetector::D4),
            _ => Err(Error::Invalid(format!("unknown herald pattern {s:?}"))),
        };
        match s.len() {
            2 => Ok(HeraldPattern::single(parse(s)?)),
            4 => Ok(HeraldPattern::pair(parse(&s[..2])?, parse(&s[2..])?)),
            _ => Err(Error::Invalid(format!("unknown herald pattern {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeraldedOutcome {
    pub pattern: HeraldPattern,
    pub probability: f64,
    /// Normalized conditional state; the vacuum when the outcome never occurs.
    pub output: DensityOperator,
}

impl HeraldedOutcome {
    fn from_unnormalized(pattern: HeraldPattern, rho: DensityOperator) -> Result<Self> {
        let probability = rho.trace();
        let output = if probability > 0.0 {
            rho.normalized()?
        } else {
            DensityOperator::vacuum(rho.num_modes(), rho.cutoff())
        };
        Ok(HeraldedOutcome {
            pattern,
            probability,
            output,
        })
    }
}

/// Extra knobs of the full simulation that the closed form does not see.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationOptions {
    #[serde(default)]
    pub herald: HeraldModel,
    #[serde(default)]
    pub convention: PhaseConvention,
    /// Per-detector efficiencies of D1..D4 overriding `delta`.
    #[serde(default)]
    pub herald_efficiencies: Option<[f64; 4]>,
}

impl SimulationOptions {
    pub fn with_herald(herald: HeraldModel) -> Self {
        SimulationOptions {
            herald,
            ..Default::default()
        }
    }
}

/// Parameters of one scissors stage.
#[derive(Debug, Clone, Copy)]
struct StageParams {
    eta: f64,
    tau: f64,
    visibility: f64,
    efficiencies: [f64; 2],
}

/// Un-normalized branches of one stage. Output modes are the input modes with the
/// signal replaced by the stage output `o`, followed by `o⊥`, the ancilla's
/// internal orthogonal mode.
struct StageBranches {
    success: [DensityOperator; 2],
    fail: DensityOperator,
}

fn ancilla_state(tau: f64, visibility: f64) -> Result<DensityOperator> {
    let photon = embed_distinguishability(&DistinguishabilitySpec::new(visibility)?)?;
    DensityOperator::mix(&[
        (tau, &DensityOperator::from_pure(&photon)),
        (1.0 - tau, &DensityOperator::vacuum(2, 1)),
    ])
}

/// Phase on the stage output that makes herald `d` yield `α₀|0⟩ + g α₁|1⟩` with a
/// positive `g`, for any beamsplitter convention.
fn herald_phase(u_eta: &[[Complex64; 2]; 2], u_half: &[[Complex64; 2]; 2], d: usize) -> f64 {
    let vacuum_path = u_eta[1][0] * u_half[d][1];
    let photon_path = u_half[d][0] * u_eta[0][0];
    vacuum_path.arg() - photon_path.arg()
}

fn run_stage(
    rho: &DensityOperator,
    signal: usize,
    p: &StageParams,
    options: &SimulationOptions,
) -> Result<StageBranches> {
    let m = rho.num_modes();
    let (a, a_perp, c, c_perp, s_perp) = (m, m + 1, m + 2, m + 3, m + 4);
    let state = rho
        .compact()
        .tensor(&ancilla_state(p.tau, p.visibility)?)
        .tensor(&DensityOperator::vacuum(3, 0));

    let u_eta = beamsplitter_unitary(p.eta, options.convention);
    let u_half = beamsplitter_unitary(0.5, options.convention);
    let state = state
        .apply_two_mode(a, c, &u_eta)?
        .apply_two_mode(a_perp, c_perp, &u_eta)?
        .apply_two_mode(signal, c, &u_half)?
        .apply_two_mode(s_perp, c_perp, &u_half)?;

    let keep: Vec<usize> = (0..m)
        .map(|i| if i == signal { a } else { i })
        .chain([a_perp])
        .collect();
    let det = [
        options.herald.detector(p.efficiencies[0]),
        options.herald.detector(p.efficiencies[1]),
    ];
    let counts = |occ: &[u8]| {
        [
            (occ[signal] + occ[s_perp]) as usize,
            (occ[c] + occ[c_perp]) as usize,
        ]
    };
    let herald_weight = |d: usize, occ: &[u8]| {
        let n = counts(occ);
        det[d].herald(n[d]) * det[1 - d].silent(n[1 - d])
    };

    let mut success = Vec::with_capacity(2);
    for d in 0..2 {
        let branch = state.trace_out_weighted(&keep, |occ| herald_weight(d, occ))?;
        let phi = herald_phase(&u_eta, &u_half, d);
        success.push(branch.apply_phase(signal, phi)?.apply_phase(m, phi)?);
    }
    let fail = state.trace_out_weighted(&keep, |occ| {
        (1.0 - herald_weight(0, occ) - herald_weight(1, occ)).max(0.0)
    })?;
    let [s0, s1]: [DensityOperator; 2] = success.try_into().expect("two heralds");
    Ok(StageBranches {
        success: [s0, s1],
        fail,
    })
}

fn check_stage_reflectivity(eta: f64) -> Result<()> {
    if eta > 0.0 && eta < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "eta",
            value: eta,
            range: "(0, 1)",
        })
    }
}

/// A single scissors stage on a one-mode input with support on `{|0⟩, |1⟩}`.
///
/// Returns the D1 and D2 outcomes followed by the fail outcome; outputs are single-mode.
pub fn nla_stage(
    rho: &DensityOperator,
    eta: f64,
    tau: f64,
    delta: f64,
    visibility: f64,
    herald: &HeraldModel,
) -> Result<Vec<HeraldedOutcome>> {
    if rho.num_modes() != 1 {
        return Err(Error::ModeCount {
            expected: 1,
            got: rho.num_modes(),
        });
    }
    if rho
        .sector_populations()
        .iter()
        .skip(2)
        .any(|p| p.abs() > 1e-14)
    {
        return Err(Error::Invalid(
            "scissors input must lie in the {|0>, |1>} subspace".into(),
        ));
    }
    check_stage_reflectivity(eta)?;
    check_range("tau", tau, 0.0, 1.0, "[0, 1]")?;
    check_range("delta", delta, 0.0, 1.0, "[0, 1]")?;
    let params = StageParams {
        eta,
        tau,
        visibility,
        efficiencies: [delta, delta],
    };
    let options = SimulationOptions::with_herald(*herald);
    let branches = run_stage(rho, 0, &params, &options)?;
    let merge = |r: &DensityOperator| r.merge_modes(&[vec![0, 1]]);
    let [s0, s1] = &branches.success;
    Ok(vec![
        HeraldedOutcome::from_unnormalized(HeraldPattern::single(HeraldDetector::D1), merge(s0)?)?,
        HeraldedOutcome::from_unnormalized(HeraldPattern::single(HeraldDetector::D2), merge(s1)?)?,
        HeraldedOutcome::from_unnormalized(HeraldPattern::FAIL, merge(&branches.fail)?)?,
    ])
}

/// `ρ_in = γ₀|00⟩⟨00| + γ₁|ψ⟩⟨ψ|` on modes (H, V), from loss `γ₁` on the pure qubit.
pub fn build_input(config: &CircuitConfig) -> Result<DensityOperator> {
    check_range("gamma1", config.gamma1, 0.0, 1.0, "[0, 1]")?;
    config.qubit.validate()?;
    let pure = DensityOperator::from_pure(&config.qubit.dual_rail(1)?);
    let rho = loss_channel(&pure, ModeIndex(0), config.gamma1)?;
    let rho = loss_channel(&rho, ModeIndex(1), config.gamma1)?;
    rho.with_cutoff(config.cutoff)
}

#[derive(Debug, Clone)]
pub struct AmplifierResult {
    /// The four success outcomes in `HeraldPattern::SUCCESSES` order, then the fail outcome.
    pub outcomes: Vec<HeraldedOutcome>,
    /// Probability-weighted mixture of the success outputs, on modes (H, V).
    pub rho_out: DensityOperator,
    /// Total success probability over the four patterns.
    pub success_probability: f64,
}

impl AmplifierResult {
    pub fn successes(&self) -> &[HeraldedOutcome] {
        &self.outcomes[..4]
    }

    pub fn fail(&self) -> &HeraldedOutcome {
        &self.outcomes[4]
    }

    pub fn outcome(&self, pattern: HeraldPattern) -> Option<&HeraldedOutcome> {
        self.outcomes.iter().find(|o| o.pattern == pattern)
    }
}

pub fn qubit_amplifier(config: &CircuitConfig) -> Result<AmplifierResult> {
    qubit_amplifier_with(config, &SimulationOptions::default())
}

/// Stage V (heralds D1/D2) on the V mode, then stage H (heralds D3/D4) on the H mode.
pub fn qubit_amplifier_with(
    config: &CircuitConfig,
    options: &SimulationOptions,
) -> Result<AmplifierResult> {
    config.validate()?;
    let eff = match options.herald_efficiencies {
        Some(e) => {
            for v in e {
                check_range("herald efficiency", v, 0.0, 1.0, "[0, 1]")?;
            }
            e
        }
        None => [config.delta; 4],
    };
    let stage_v = StageParams {
        eta: config.eta_v,
        tau: config.tau,
        visibility: config.v1,
        efficiencies: [eff[0], eff[1]],
    };
    let stage_h = StageParams {
        eta: config.eta_h,
        tau: config.tau,
        visibility: config.v2,
        efficiencies: [eff[2], eff[3]],
    };

    let rho_in = build_input(config)?;
    // modes after stage V: [H, oV, oV⊥]
    let first = run_stage(&rho_in, 1, &stage_v, options)?;
    // modes after stage H: [oH, oV, oV⊥, oH⊥]
    let to_polarization = |r: &DensityOperator| -> Result<DensityOperator> {
        r.merge_modes(&[vec![0, 3], vec![1, 2]])?
            .with_cutoff(config.cutoff)
    };

    let mut outcomes = Vec::with_capacity(5);
    let mut fail = None::<DensityOperator>;
    let mut accumulate_fail = |r: DensityOperator| -> Result<()> {
        let r = to_polarization(&r)?;
        fail = Some(match fail.take() {
            None => r,
            Some(f) => DensityOperator::mix(&[(1.0, &f), (1.0, &r)])?,
        });
        Ok(())
    };
    for (k, branch) in first.success.iter().enumerate() {
        let second = run_stage(branch, 0, &stage_h, options)?;
        for (j, rho) in second.success.iter().enumerate() {
            let pattern = HeraldPattern::SUCCESSES[2 * k + j];
            outcomes.push(HeraldedOutcome::from_unnormalized(
                pattern,
                to_polarization(rho)?,
            )?);
        }
        accumulate_fail(second.fail)?;
    }
    let after_fail = run_stage(&first.fail, 0, &stage_h, options)?;
    let [x, y] = after_fail.success;
    accumulate_fail(x)?;
    accumulate_fail(y)?;
    accumulate_fail(after_fail.fail)?;
    let fail = fail.expect("fail branch accumulated");

    let weighted: Vec<(f64, &DensityOperator)> = outcomes
        .iter()
        .map(|o| (o.probability, &o.output))
        .collect();
    let success_probability: f64 = outcomes.iter().map(|o| o.probability).sum();
    let rho_out = if success_probability > 0.0 {
        DensityOperator::mix(&weighted)?.normalized()?
    } else {
        DensityOperator::vacuum(2, config.cutoff)
    };
    outcomes.push(HeraldedOutcome::from_unnormalized(
        HeraldPattern::FAIL,
        fail,
    )?);
    Ok(AmplifierResult {
        outcomes,
        rho_out,
        success_probability,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticOutput {
    pub g2: f64,
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub vacuum_weight: f64,
    pub qubit_weight: f64,
    #[serde(rename = "G_nom")]
    pub g_nom: f64,
    #[serde(rename = "P")]
    pub p: f64,
}

impl AnalyticOutput {
    /// Un-normalized trace of each of the four herald patterns.
    pub fn pattern_probability(&self) -> f64 {
        self.p / 4.0
    }
}

/// Closed form with threshold heralds and perfect mode matching (`V1`, `V2` are ignored).
pub fn analytic_model(config: &CircuitConfig) -> Result<AnalyticOutput> {
    analytic_model_with(config, &HeraldModel::default())
}

pub fn analytic_model_with(config: &CircuitConfig, herald: &HeraldModel) -> Result<AnalyticOutput> {
    if config.tau == 0.0 {
        return Err(Error::DivisionByZero("tau = 0 leaves no ancilla photon"));
    }
    config.validate()?;
    if config.eta_h != config.eta_v {
        return Err(Error::Invalid(
            "the closed form assumes equal stage reflectivities".into(),
        ));
    }
    let (g0, g1) = (config.gamma0(), config.gamma1);
    let g2 = config.g2();
    let l = herald.saturation_factor(g2, config.tau, config.delta);
    let denom = g0 + g1 * (g2 + l);
    let (d, t, eta) = (config.delta, config.tau, config.eta_h);
    Ok(AnalyticOutput {
        g2,
        n: g0 + g2 * g1,
        l,
        vacuum_weight: (g0 + l * g1) / denom,
        qubit_weight: g2 * g1 / denom,
        g_nom: gain_nominal(g2, g1),
        p: d * d * t * t * (1.0 - eta).powi(2) * denom,
    })
}

/// `G_nom = g²/(γ₀ + g²γ₁)`.
pub fn gain_nominal(g2: f64, gamma1: f64) -> f64 {
    g2 / ((1.0 - gamma1) + g2 * gamma1)
}

/// Gain of single-photon weight predicted by the closed form, `qubit_weight/γ₁`.
pub fn gain_saturated(config: &CircuitConfig) -> Result<f64> {
    gain_saturated_with(config, &HeraldModel::default())
}

pub fn gain_saturated_with(config: &CircuitConfig, herald: &HeraldModel) -> Result<f64> {
    if config.gamma1 == 0.0 {
        return Err(Error::DivisionByZero("gamma1 = 0"));
    }
    Ok(analytic_model_with(config, herald)?.qubit_weight / config.gamma1)
}

/// Population of the one-photon sector of a two-mode output.
pub fn qubit_weight(rho: &DensityOperator) -> f64 {
    let t = rho.trace();
    (rho.element(&[1, 0], &[1, 0]).re + rho.element(&[0, 1], &[0, 1]).re) / t
}

pub fn vacuum_weight(rho: &DensityOperator) -> f64 {
    rho.element(&[0, 0], &[0, 0]).re / rho.trace()
}

/// Largest coherence between the vacuum and the one-photon subspace.
pub fn vacuum_coherence(rho: &DensityOperator) -> f64 {
    let t = rho.trace();
    rho.element(&[0, 0], &[1, 0])
        .norm()
        .max(rho.element(&[0, 0], &[0, 1]).norm())
        / t
}

/// `⟨ψ|ρ_out|ψ⟩` against the dual-rail input qubit.
pub fn output_fidelity(rho: &DensityOperator, qubit: &QubitAmplitudes) -> Result<f64> {
    let psi: FockState = qubit.dual_rail(rho.cutoff())?;
    crate::fock::fidelity(&rho.normalized()?, &psi)
}
