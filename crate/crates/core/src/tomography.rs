//! Polarization tomography of the amplifier output, coincidence-count estimators
//! and the counts / reconstructed-state file formats.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Rotation3, UnitQuaternion, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amplifier::HeraldPattern;
use crate::error::{Error, Result};
use crate::fock::DensityOperator;
use crate::qubit::{Polarization, QubitAmplitudes};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolarizationBasis {
    HV,
    DA,
    RL,
}

impl PolarizationBasis {
    pub const ALL: [PolarizationBasis; 3] = [
        PolarizationBasis::HV,
        PolarizationBasis::DA,
        PolarizationBasis::RL,
    ];

    /// States routed to D5 and D6 respectively.
    pub fn projectors(self) -> [Polarization; 2] {
        match self {
            PolarizationBasis::HV => [Polarization::H, Polarization::V],
            PolarizationBasis::DA => [Polarization::D, Polarization::A],
            PolarizationBasis::RL => [Polarization::R, Polarization::L],
        }
    }
}

impl fmt::Display for PolarizationBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for PolarizationBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('/', "").to_ascii_uppercase().as_str() {
            "HV" => Ok(PolarizationBasis::HV),
            "DA" => Ok(PolarizationBasis::DA),
            "RL" => Ok(PolarizationBasis::RL),
            _ => Err(Error::Invalid(format!("unknown basis {s:?}"))),
        }
    }
}

/// Output analyzer detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnalyzerPort {
    D5,
    D6,
}

impl AnalyzerPort {
    pub const ALL: [AnalyzerPort; 2] = [AnalyzerPort::D5, AnalyzerPort::D6];
}

impl fmt::Display for AnalyzerPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementProbs {
    pub d5: f64,
    pub d6: f64,
    pub none: f64,
}

impl MeasurementProbs {
    pub fn port(&self, port: AnalyzerPort) -> f64 {
        match port {
            AnalyzerPort::D5 => self.d5,
            AnalyzerPort::D6 => self.d6,
        }
    }
}

fn check_single_photon(rho: &DensityOperator) -> Result<()> {
    if rho.num_modes() != 2 {
        return Err(Error::ModeCount {
            expected: 2,
            got: rho.num_modes(),
        });
    }
    let pops = rho.sector_populations();
    let t = rho.trace();
    if pops
        .iter()
        .skip(2)
        .any(|p| p.abs() > 1e-12 * t.abs().max(1.0))
    {
        return Err(Error::Invalid(
            "analyzer model assumes at most one photon in the output".into(),
        ));
    }
    Ok(())
}

/// Ideal analyzer click probabilities for a two-mode (H, V) output.
pub fn measurement_probs(
    rho: &DensityOperator,
    basis: PolarizationBasis,
) -> Result<MeasurementProbs> {
    check_single_photon(rho)?;
    let rho = rho.normalized()?;
    let [p5, p6] = basis.projectors();
    let f = |p: Polarization| -> Result<f64> {
        crate::fock::fidelity(&rho, &p.amplitudes().dual_rail(rho.cutoff())?)
    };
    Ok(MeasurementProbs {
        d5: f(p5)?,
        d6: f(p6)?,
        none: rho.element(&[0, 0], &[0, 0]).re,
    })
}

/// One row group of coincidence counts: a herald pattern in one analyzer basis.
///
/// Tallies are reals so exact-probability runs can store expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsRecord {
    pub basis: PolarizationBasis,
    pub herald: HeraldPattern,
    #[serde(rename = "C3")]
    pub c3: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    #[serde(default)]
    pub per_detector: BTreeMap<AnalyzerPort, f64>,
}

impl CountsRecord {
    pub fn new(basis: PolarizationBasis, herald: HeraldPattern, c3: f64, d5: f64, d6: f64) -> Self {
        CountsRecord {
            basis,
            herald,
            c3,
            c4: d5 + d6,
            per_detector: BTreeMap::from([(AnalyzerPort::D5, d5), (AnalyzerPort::D6, d6)]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c3 >= 0.0
            && self.c4 >= 0.0
            && self.c4 <= self.c3 * (1.0 + 1e-12)
            && self.per_detector.values().all(|v| *v >= 0.0);
        if !ok {
            return Err(Error::Invalid(format!(
                "inconsistent counts for {} / {}: C3 = {}, C4 = {}",
                self.basis, self.herald, self.c3, self.c4
            )));
        }
        Ok(())
    }

    pub fn ratio(&self) -> Result<f64> {
        if self.c3 <= 0.0 {
            return Err(Error::DivisionByZero("C3 = 0"));
        }
        Ok(self.c4 / self.c3)
    }

    pub fn detector(&self, port: AnalyzerPort) -> f64 {
        self.per_detector.get(&port).copied().unwrap_or(0.0)
    }
}

/// `γ₁ = (C₄/C₃)/(ε_det ε_path)`.
pub fn estimate_gamma1(c4: f64, c3: f64, eps_det: f64, eps_path: f64) -> Result<f64> {
    if c3 <= 0.0 {
        return Err(Error::DivisionByZero("C3 = 0"));
    }
    if eps_det * eps_path <= 0.0 {
        return Err(Error::DivisionByZero("eps_det * eps_path = 0"));
    }
    Ok(c4 / c3 / (eps_det * eps_path))
}

fn pooled(records: &[CountsRecord]) -> (f64, f64) {
    records
        .iter()
        .fold((0.0, 0.0), |(c3, c4), r| (c3 + r.c3, c4 + r.c4))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    /// Double ratio of pooled four-fold to three-fold coincidences.
    pub value: f64,
    /// Binomial standard error of `value`.
    pub std_error: f64,
    pub per_pattern: Vec<(HeraldPattern, f64)>,
    pub pattern_mean: f64,
    pub pattern_std: f64,
}

/// Relative variance of a binomial ratio `C4/C3`.
fn ratio_rel_var(c3: f64, c4: f64) -> f64 {
    if c4 <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - c4 / c3).max(0.0) / c4
}

/// `G_m = (C4/C3)_amp / (C4/C3)_noamp`, pooled over every record and per herald pattern.
///
/// No-amplification records are matched to amplified ones by herald pattern; when no
/// record with the same pattern exists, the pooled no-amplification ratio is used.
pub fn measured_gain(amp: &[CountsRecord], noamp: &[CountsRecord]) -> Result<GainEstimate> {
    let (a3, a4) = pooled(amp);
    let (n3, n4) = pooled(noamp);
    if a3 <= 0.0 || n3 <= 0.0 {
        return Err(Error::DivisionByZero("C3 = 0"));
    }
    if n4 <= 0.0 {
        return Err(Error::DivisionByZero("no four-folds without amplification"));
    }
    let value = (a4 / a3) / (n4 / n3);
    let std_error = value * (ratio_rel_var(a3, a4) + ratio_rel_var(n3, n4)).sqrt();

    // (amplified (C3, C4), reference (C3, C4)) per pattern
    type Tallies = ((f64, f64), Option<(f64, f64)>);
    let mut by_pattern: BTreeMap<HeraldPattern, Tallies> = BTreeMap::new();
    for r in amp {
        let e = by_pattern.entry(r.herald).or_default();
        e.0 .0 += r.c3;
        e.0 .1 += r.c4;
    }
    for r in noamp {
        if let Some(e) = by_pattern.get_mut(&r.herald) {
            let (c3, c4) = e.1.get_or_insert((0.0, 0.0));
            *c3 += r.c3;
            *c4 += r.c4;
        }
    }
    let reference = n4 / n3;
    let per_pattern: Vec<(HeraldPattern, f64)> = by_pattern
        .into_iter()
        .filter(|(_, ((c3, _), _))| *c3 > 0.0)
        .map(|(p, ((c3, c4), base))| {
            let base = match base {
                Some((b3, b4)) if b3 > 0.0 && b4 > 0.0 => b4 / b3,
                _ => reference,
            };
            (p, (c4 / c3) / base)
        })
        .collect();
    let k = per_pattern.len() as f64;
    let pattern_mean = per_pattern.iter().map(|(_, g)| g).sum::<f64>() / k;
    let pattern_std = if per_pattern.len() > 1 {
        (per_pattern
            .iter()
            .map(|(_, g)| (g - pattern_mean).powi(2))
            .sum::<f64>()
            / (k - 1.0))
            .sqrt()
    } else {
        0.0
    };
    Ok(GainEstimate {
        value,
        std_error,
        per_pattern,
        pattern_mean,
        pattern_std,
    })
}

/// `C₃^amp / C₃^noamp`, for runs with equal pulse counts.
pub fn success_probability_estimate(amp: &[CountsRecord], noamp: &[CountsRecord]) -> Result<f64> {
    let (a3, _) = pooled(amp);
    let (n3, _) = pooled(noamp);
    if n3 <= 0.0 {
        return Err(Error::DivisionByZero("C3 without amplification = 0"));
    }
    Ok(a3 / n3)
}

/// A single-photon polarization state together with the weight of the vacuum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "QubitStateJson", try_from = "QubitStateJson")]
pub struct QubitState {
    /// Density matrix on `{|H⟩, |V⟩}`.
    pub matrix: Matrix2<Complex64>,
    pub vacuum_weight: f64,
}

fn pauli() -> [Matrix2<Complex64>; 3] {
    let i = Complex64::new(0.0, 1.0);
    [
        Matrix2::new(ZERO, ONE, ONE, ZERO),
        Matrix2::new(ZERO, -i, i, ZERO),
        Matrix2::new(ONE, ZERO, ZERO, -ONE),
    ]
}

/// `n·σ` for a real 3-vector.
fn sigma_dot(n: &Vector3<f64>) -> Matrix2<Complex64> {
    let p = pauli();
    p[0].map(|z| z * n.x) + p[1].map(|z| z * n.y) + p[2].map(|z| z * n.z)
}

fn hermitian_eigen(m: &Matrix2<Complex64>) -> (f64, f64) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = m[(0, 1)];
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d).powi(2) + b.norm_sqr()).sqrt();
    (mean - r, mean + r)
}

impl QubitState {
    pub fn pure(q: &QubitAmplitudes) -> Self {
        let v = [q.alpha, q.beta];
        QubitState {
            matrix: Matrix2::from_fn(|i, j| v[i] * v[j].conj()),
            vacuum_weight: 0.0,
        }
    }

    pub fn maximally_mixed() -> Self {
        QubitState {
            matrix: Matrix2::identity() * Complex64::new(0.5, 0.0),
            vacuum_weight: 0.0,
        }
    }

    /// Qubit-subspace block of a two-mode (H, V) operator, renormalized.
    pub fn from_density(rho: &DensityOperator) -> Result<Self> {
        check_single_photon(rho)?;
        let t = rho.trace();
        let ket = [[1u8, 0], [0, 1]];
        let block = Matrix2::from_fn(|i, j| rho.element(&ket[i], &ket[j]));
        let w = (block[(0, 0)] + block[(1, 1)]).re;
        if w <= 0.0 {
            return Err(Error::ZeroTrace);
        }
        Ok(QubitState {
            matrix: block / Complex64::new(w, 0.0),
            vacuum_weight: rho.element(&[0, 0], &[0, 0]).re / t,
        })
    }

    /// Bloch vector `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)` with `σz = |H⟩⟨H| - |V⟩⟨V|`.
    pub fn bloch(&self) -> Vector3<f64> {
        let p = pauli();
        Vector3::from_fn(|k, _| (self.matrix * p[k]).trace().re)
    }

    pub fn from_bloch(r: &Vector3<f64>, vacuum_weight: f64) -> Self {
        let m = Matrix2::identity() + sigma_dot(r);
        QubitState {
            matrix: m * Complex64::new(0.5, 0.0),
            vacuum_weight,
        }
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        hermitian_eigen(&self.matrix)
    }

    pub fn purity(&self) -> f64 {
        (self.matrix * self.matrix).trace().re
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn fidelity_to(&self, q: &QubitAmplitudes) -> f64 {
        let v = [q.alpha, q.beta];
        let mut f = ZERO;
        for i in 0..2 {
            for j in 0..2 {
                f += v[i].conj() * self.matrix[(i, j)] * v[j];
            }
        }
        f.re.clamp(0.0, 1.0)
    }

    /// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`, closed form for qubits.
    pub fn fidelity(&self, other: &QubitState) -> f64 {
        let overlap = (self.matrix * other.matrix).trace().re;
        let det = |m: &Matrix2<Complex64>| m.determinant().re.max(0.0);
        (overlap + 2.0 * (det(&self.matrix) * det(&other.matrix)).sqrt()).clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&QubitStateJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<QubitStateJson>(text)?.try_into()
    }
}

/// Eigenvalue clipping with trace renormalization.
fn project_physical(m: &Matrix2<Complex64>) -> Matrix2<Complex64> {
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let r = Vector3::new(
        (herm * pauli()[0]).trace().re,
        (herm * pauli()[1]).trace().re,
        (herm * pauli()[2]).trace().re,
    );
    let tr = herm.trace().re;
    let r = r / tr;
    // eigenvalues of a trace-one 2x2 are (1 ± |r|)/2; clipping pins |r| to 1
    let len = r.norm();
    let r = if len > 1.0 { r / len } else { r };
    QubitState::from_bloch(&r, 0.0).matrix
}

/// Analyzer tallies in one basis, summed over herald patterns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BasisCounts {
    pub d5: f64,
    pub d6: f64,
    /// Heralded events with no analyzer click.
    pub none: f64,
}

impl From<MeasurementProbs> for BasisCounts {
    fn from(p: MeasurementProbs) -> Self {
        BasisCounts {
            d5: p.d5,
            d6: p.d6,
            none: p.none,
        }
    }
}

/// Sums records per basis.
pub fn tally(records: &[CountsRecord]) -> BTreeMap<PolarizationBasis, BasisCounts> {
    let mut out: BTreeMap<PolarizationBasis, BasisCounts> = BTreeMap::new();
    for r in records.iter().filter(|r| r.herald.success) {
        let e = out.entry(r.basis).or_default();
        let (d5, d6) = (r.detector(AnalyzerPort::D5), r.detector(AnalyzerPort::D6));
        e.d5 += d5;
        e.d6 += d6;
        e.none += r.c3 - d5 - d6;
    }
    out
}

/// Linear Stokes inversion followed by projection onto physical states.
///
/// `efficiency` is the analyzer detection efficiency (`ε_det ε_path`) used to turn the
/// heralded click fraction into a single-photon weight.
pub fn reconstruct_qubit(
    counts: &BTreeMap<PolarizationBasis, BasisCounts>,
    efficiency: f64,
) -> Result<QubitState> {
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(Error::OutOfRange {
            name: "efficiency",
            value: efficiency,
            range: "(0, 1]",
        });
    }
    let mut stokes = [0.0; 3];
    let (mut clicks, mut total) = (0.0, 0.0);
    for (k, basis) in PolarizationBasis::ALL.into_iter().enumerate() {
        let c = counts.get(&basis).copied().unwrap_or_default();
        let n = c.d5 + c.d6;
        if n <= 0.0 {
            return Err(Error::NoCounts(basis.to_string()));
        }
        stokes[k] = (c.d5 - c.d6) / n;
        clicks += n;
        total += n + c.none;
    }
    // S1 = pH - pV, S2 = pD - pA, S3 = pR - pL; R = (H - iV)/√2 has ⟨σy⟩ = -1
    let r = Vector3::new(stokes[1], -stokes[2], stokes[0]);
    let raw = QubitState::from_bloch(&r, 0.0).matrix;
    let qubit_weight = (clicks / total / efficiency).clamp(0.0, 1.0);
    Ok(QubitState {
        matrix: project_physical(&raw),
        vacuum_weight: 1.0 - qubit_weight,
    })
}

fn unitarity_error(u: &Matrix2<Complex64>) -> f64 {
    (u.adjoint() * u - Matrix2::identity())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `U ρ U†`; rejects `U` deviating from unitarity by more than `1e-10`.
pub fn apply_unitary_correction(q: &QubitState, u: &Matrix2<Complex64>) -> Result<QubitState> {
    let err = unitarity_error(u);
    if err.is_nan() || err > 1e-10 {
        return Err(Error::NotUnitary(err));
    }
    Ok(QubitState {
        matrix: u * q.matrix * u.adjoint(),
        vacuum_weight: q.vacuum_weight,
    })
}

/// Least-squares rotation taking measured Bloch vectors onto reference ones,
/// returned as the SU(2) matrix to pass to [`apply_unitary_correction`].
pub fn fit_unitary_correction(
    measured: &[QubitState],
    reference: &[QubitState],
) -> Result<Matrix2<Complex64>> {
    if measured.len() != reference.len() || measured.len() < 2 {
        return Err(Error::Invalid(
            "need at least two matched measured/reference states".into(),
        ));
    }
    let mut h = Matrix3::<f64>::zeros();
    for (m, r) in measured.iter().zip(reference) {
        h += m.bloch() * r.bloch().transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rot = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let i = Complex64::new(0.0, 1.0);
    Ok(Matrix2::identity() * Complex64::new(w, 0.0) - sigma_dot(&Vector3::new(x, y, z)) * i)
}

/// Reconstructed-state file: the 2×2 density-operator schema plus `vacuum_weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitStateJson {
    pub modes: usize,
    pub cutoff: usize,
    pub basis: Vec<Vec<u8>>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub vacuum_weight: f64,
}

impl From<&QubitState> for QubitStateJson {
    fn from(q: &QubitState) -> Self {
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..2)
                .map(|i| (0..2).map(|j| f(&q.matrix[(i, j)])).collect())
                .collect()
        };
        QubitStateJson {
            modes: 2,
            cutoff: 1,
            basis: vec![vec![1, 0], vec![0, 1]],
            re: rows(|z| z.re),
            im: rows(|z| z.im),
            vacuum_weight: q.vacuum_weight,
        }
    }
}

impl From<QubitState> for QubitStateJson {
    fn from(q: QubitState) -> Self {
        QubitStateJson::from(&q)
    }
}

impl TryFrom<QubitStateJson> for QubitState {
    type Error = Error;

    fn try_from(j: QubitStateJson) -> Result<Self> {
        let ok_shape = j.modes == 2
            && j.basis.len() == 2
            && j.re.len() == 2
            && j.im.len() == 2
            && j.re.iter().chain(&j.im).all(|r| r.len() == 2);
        if !ok_shape {
            return Err(Error::Invalid(
                "qubit state must be a 2x2 matrix on two modes".into(),
            ));
        }
        let pos = |occ: &[u8]| match occ {
            [1, 0] => Ok(0),
            [0, 1] => Ok(1),
            _ => Err(Error::Invalid(format!(
                "{occ:?} is not a single-photon basis state"
            ))),
        };
        let idx = [pos(&j.basis[0])?, pos(&j.basis[1])?];
        if idx[0] == idx[1] {
            return Err(Error::Invalid("basis lists a state twice".into()));
        }
        let mut matrix = Matrix2::zeros();
        for a in 0..2 {
            for b in 0..2 {
                matrix[(idx[a], idx[b])] = Complex64::new(j.re[a][b], j.im[a][b]);
            }
        }
        Ok(QubitState {
            matrix,
            vacuum_weight: j.vacuum_weight,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CountsRow {
    basis: String,
    detector: String,
    herald_pattern: String,
    #[serde(rename = "C3")]
    c3: f64,
    #[serde(rename = "C4")]
    c4: f64,
}

/// Writes `basis,detector,herald_pattern,C3,C4`, one row per analyzer detector.
pub fn write_counts_csv<W: Write>(records: &[CountsRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        let rows: Vec<(String, f64)> = if r.per_detector.is_empty() {
            vec![("any".into(), r.c4)]
        } else {
            r.per_detector
                .iter()
                .map(|(p, c)| (p.to_string(), *c))
                .collect()
        };
        for (detector, c4) in rows {
            w.serialize(CountsRow {
                basis: r.basis.to_string(),
                detector,
                herald_pattern: r.herald.to_string(),
                c3: r.c3,
                c4,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_counts_csv<R: Read>(reader: R) -> Result<Vec<CountsRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut grouped: BTreeMap<(PolarizationBasis, HeraldPattern), CountsRecord> = BTreeMap::new();
    for row in rdr.deserialize::<CountsRow>() {
        let row = row?;
        let basis: PolarizationBasis = row.basis.parse()?;
        let herald: HeraldPattern = row.herald_pattern.parse()?;
        let rec = grouped
            .entry((basis, herald))
            .or_insert_with(|| CountsRecord {
                basis,
                herald,
                c3: row.c3,
                c4: 0.0,
                per_detector: BTreeMap::new(),
            });
        if rec.c3 != row.c3 {
            return Err(Error::Invalid(format!(
                "conflicting C3 values for {basis} / {herald}"
            )));
        }
        rec.c4 += row.c4;
        match row.detector.to_ascii_uppercase().as_str() {
            "D5" => *rec.per_detector.entry(AnalyzerPort::D5).or_default() += row.c4,
            "D6" => *rec.per_detector.entry(AnalyzerPort::D6).or_default() += row.c4,
            "ANY" | "" => {}
            other => return Err(Error::Invalid(format!("unknown detector {other:?}"))),
        }
    }
    let records: Vec<CountsRecord> = grouped.into_values().collect();
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplifier::HeraldDetector;
    use crate::fock::FockState;

    fn exact_counts(q: &QubitState) -> BTreeMap<PolarizationBasis, BasisCounts> {
        PolarizationBasis::ALL
            .into_iter()
            .map(|b| {
                let [p5, p6] = b.projectors();
                let c = BasisCounts {
                    d5: q.fidelity_to(&p5.amplitudes()),
                    d6: q.fidelity_to(&p6.amplitudes()),
                    none: 0.0,
                };
                (b, c)
            })
            .collect()
    }

    #[test]
    fn measurement_of_basis_states() {
        let h = DensityOperator::from_pure(&FockState::basis_state(2, 3, &[1, 0]).unwrap());
        let p = measurement_probs(&h, PolarizationBasis::HV).unwrap();
        assert_eq!((p.d5, p.d6, p.none), (1.0, 0.0, 0.0));

        let w = 0.3;
        let r = DensityOperator::from_pure(&Polarization::R.amplitudes().dual_rail(3).unwrap());
        let mix =
            DensityOperator::mix(&[(1.0 - w, &r), (w, &DensityOperator::vacuum(2, 3))]).unwrap();
        let p = measurement_probs(&mix, PolarizationBasis::RL).unwrap();
        assert!((p.d5 - 0.7).abs() < 1e-12 && p.d6.abs() < 1e-12 && (p.none - 0.3).abs() < 1e-12);
        assert!((p.d5 + p.d6 + p.none - 1.0).abs() < 1e-12);

        let two = DensityOperator::from_pure(&FockState::basis_state(2, 3, &[1, 1]).unwrap());
        assert!(measurement_probs(&two, PolarizationBasis::HV).is_err());
    }

    #[test]
    fn noiseless_inversion() {
        for p in Polarization::ALL {
            let truth = QubitState::pure(&p.amplitudes());
            let q = reconstruct_qubit(&exact_counts(&truth), 1.0).unwrap();
            assert!((q.matrix - truth.matrix).norm() < 1e-10, "{p}");
        }
        let q = reconstruct_qubit(&exact_counts(&QubitState::maximally_mixed()), 1.0).unwrap();
        assert!((q.purity() - 0.5).abs() < 1e-12);
        assert!(reconstruct_qubit(&BTreeMap::new(), 1.0).is_err());
    }

    #[test]
    fn projection_clips_overlong_bloch_vectors() {
        let mut counts = exact_counts(&QubitState::pure(&Polarization::H.amplitudes()));
        counts.insert(
            PolarizationBasis::DA,
            BasisCounts {
                d5: 1.0,
                d6: 0.0,
                none: 0.0,
            },
        );
        let q = reconstruct_qubit(&counts, 1.0).unwrap();
        assert!(q.bloch().norm() <= 1.0 + 1e-10);
        assert!(q.eigenvalues().0 >= -1e-10);
    }

    #[test]
    fn gamma1_estimator() {
        let g = estimate_gamma1(0.01312, 1.0, 0.5, 0.64).unwrap();
        assert!((g - 0.041).abs() < 1e-12);
        assert_eq!(estimate_gamma1(3.0, 10.0, 1.0, 1.0).unwrap(), 0.3);
        assert_eq!(estimate_gamma1(0.0, 10.0, 0.5, 0.64).unwrap(), 0.0);
        assert!(estimate_gamma1(1.0, 0.0, 0.5, 0.64).is_err());
    }

    #[test]
    fn gain_estimators() {
        let p = HeraldPattern::pair(HeraldDetector::D1, HeraldDetector::D3);
        let rec = CountsRecord::new(PolarizationBasis::HV, p, 1000.0, 30.0, 20.0);
        let one = std::slice::from_ref(&rec);
        let g = measured_gain(one, one).unwrap();
        assert!((g.value - 1.0).abs() < 1e-15);
        assert_eq!(g.per_pattern, vec![(p, 1.0)]);
        assert_eq!(success_probability_estimate(one, one).unwrap(), 1.0);

        let empty = CountsRecord::new(PolarizationBasis::HV, p, 0.0, 0.0, 0.0);
        let none = std::slice::from_ref(&empty);
        assert_eq!(success_probability_estimate(none, one).unwrap(), 0.0);
        assert!(measured_gain(none, one).is_err());
        assert!(success_probability_estimate(&[rec], &[empty]).is_err());
    }

    #[test]
    fn unitary_correction() {
        let r = QubitState::pure(&Polarization::R.amplitudes());
        let same = apply_unitary_correction(&r, &Matrix2::identity()).unwrap();
        assert_eq!(same, r);
        let z = pauli()[2];
        let l = apply_unitary_correction(&r, &z).unwrap();
        assert!((l.fidelity_to(&Polarization::L.amplitudes()) - 1.0).abs() < 1e-12);
        assert!(matches!(
            apply_unitary_correction(&r, &(Matrix2::identity() * Complex64::new(2.0, 0.0))),
            Err(Error::NotUnitary(_))
        ));
    }

    #[test]
    fn fit_inverts_a_rotation() {
        let theta = 0.37_f64;
        let n = Vector3::new(0.3, -0.5, 0.8).normalize();
        let i = Complex64::new(0.0, 1.0);
        let mis = Matrix2::identity() * Complex64::new((theta / 2.0).cos(), 0.0)
            - sigma_dot(&n) * (i * (theta / 2.0).sin());
        let truth: Vec<QubitState> = Polarization::ALL
            .iter()
            .map(|p| QubitState::pure(&p.amplitudes()))
            .collect();
        let measured: Vec<QubitState> = truth
            .iter()
            .map(|q| apply_unitary_correction(q, &mis).unwrap())
            .collect();
        let fix = fit_unitary_correction(&measured, &truth).unwrap();
        for (m, t) in measured.iter().zip(&truth) {
            let back = apply_unitary_correction(m, &fix).unwrap();
            assert!((back.fidelity(t) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn uhlmann_fidelity_limits() {
        let h = QubitState::pure(&Polarization::H.amplitudes());
        let v = QubitState::pure(&Polarization::V.amplitudes());
        let m = QubitState::maximally_mixed();
        assert!(h.fidelity(&v).abs() < 1e-15);
        assert!((m.fidelity(&m) - 1.0).abs() < 1e-12);
        assert!((h.fidelity(&m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qubit_json_round_trip() {
        let q = QubitState {
            matrix: QubitState::pure(&Polarization::R.amplitudes()).matrix,
            vacuum_weight: 0.123_456_789_012_345_67,
        };
        let text = q.to_json().unwrap();
        assert!(text.contains("\"vacuum_weight\""));
        assert_eq!(QubitState::from_json(&text).unwrap(), q);
    }

    #[test]
    fn counts_csv_round_trip() {
        let p = HeraldPattern::pair(HeraldDetector::D2, HeraldDetector::D4);
        let recs = vec![
            CountsRecord::new(PolarizationBasis::DA, p, 1200.0, 40.0, 2.0),
            CountsRecord::new(PolarizationBasis::RL, p, 900.0, 1.0, 33.0),
        ];
        let mut buf = Vec::new();
        write_counts_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("basis,detector,herald_pattern,C3,C4"));
        assert_eq!(read_counts_csv(buf.as_slice()).unwrap(), recs);

        let bad = "basis,detector,herald_pattern,C3,C4\nHV,D5,D1D3,10,11\n";
        assert!(read_counts_csv(bad.as_bytes()).is_err());
    }
}
