//! Pure and mixed states of `M` bosonic modes with a global photon-number cutoff.
//!
//! The state space is the direct sum of the number sectors `0..=cutoff`. Basis
//! vectors are occupation vectors `(n_1, .., n_M)` with `Σ n_i <= cutoff`, stored in
//! lexicographic order. Passive linear optics conserves total photon number, so
//! every two-mode transform acts exactly inside this space.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Index of one bosonic mode inside a multimode space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex(pub usize);

impl From<usize> for ModeIndex {
    fn from(i: usize) -> Self {
        ModeIndex(i)
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mode {}", self.0)
    }
}

/// Enumerated occupation basis of a truncated multimode space.
#[derive(Debug)]
pub struct FockBasis {
    num_modes: usize,
    cutoff: usize,
    states: Vec<Box<[u8]>>,
    index: HashMap<Box<[u8]>, usize>,
}

impl FockBasis {
    pub fn new(num_modes: usize, cutoff: usize) -> Arc<Self> {
        assert!(cutoff <= u8::MAX as usize, "cutoff {cutoff} too large");
        let mut states = Vec::new();
        let mut current = vec![0u8; num_modes];
        enumerate(&mut current, 0, cutoff, &mut states);
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Arc::new(FockBasis {
            num_modes,
            cutoff,
            states,
            index,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn index_of(&self, occupations: &[u8]) -> Option<usize> {
        self.index.get(occupations).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.states.iter().map(|s| &s[..])
    }

    fn same_space(&self, other: &FockBasis) -> bool {
        self.num_modes == other.num_modes && self.cutoff == other.cutoff
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.num_modes {
            Ok(())
        } else {
            Err(Error::ModeOutOfRange {
                mode,
                num_modes: self.num_modes,
            })
        }
    }
}

fn enumerate(current: &mut Vec<u8>, pos: usize, remaining: usize, out: &mut Vec<Box<[u8]>>) {
    if pos == current.len() {
        out.push(current.clone().into_boxed_slice());
        return;
    }
    for n in 0..=remaining {
        current[pos] = n as u8;
        enumerate(current, pos + 1, remaining - n, out);
    }
    current[pos] = 0;
}

fn total(occ: &[u8]) -> usize {
    occ.iter().map(|&n| n as usize).sum()
}

fn space_label(b: &FockBasis) -> String {
    format!("{} modes, cutoff {}", b.num_modes, b.cutoff)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Image of every basis vector under a single-particle 2×2 unitary on modes `(a, b)`.
///
/// `u[out][in]` is the amplitude for a photon entering mode `in` to leave in mode
/// `out`, i.e. `a† -> u[0][0] a† + u[1][0] b†` and `b† -> u[0][1] a† + u[1][1] b†`.
fn two_mode_images(
    basis: &FockBasis,
    a: usize,
    b: usize,
    u: &[[Complex64; 2]; 2],
) -> Vec<Vec<(usize, Complex64)>> {
    // (n_a, n_b) -> [(out_a, out_b, amplitude)]
    type Expansion = Vec<(u8, u8, Complex64)>;
    let mut cache: HashMap<(u8, u8), Expansion> = HashMap::new();
    basis
        .iter()
        .map(|occ| {
            let (na, nb) = (occ[a], occ[b]);
            let expansion = cache
                .entry((na, nb))
                .or_insert_with(|| expand_two_mode(na, nb, u));
            let mut target = occ.to_vec();
            expansion
                .iter()
                .map(|&(p, q, c)| {
                    target[a] = p;
                    target[b] = q;
                    let idx = basis
                        .index_of(&target)
                        .expect("two-mode transform preserves photon number");
                    (idx, c)
                })
                .collect()
        })
        .collect()
}

/// Expands `(u00 a† + u10 b†)^na (u01 a† + u11 b†)^nb |0⟩ / sqrt(na! nb!)` into
/// normalized Fock kets `|p, q⟩`.
fn expand_two_mode(na: u8, nb: u8, u: &[[Complex64; 2]; 2]) -> Vec<(u8, u8, Complex64)> {
    let n = (na + nb) as usize;
    // poly[p] is the coefficient of (a†)^p (b†)^(k-p) after k factors
    let mut poly = vec![ZERO; n + 1];
    poly[0] = ONE;
    let mut degree = 0;
    for (count, (ca, cb)) in [(na, (u[0][0], u[1][0])), (nb, (u[0][1], u[1][1]))] {
        for _ in 0..count {
            let mut next = vec![ZERO; n + 1];
            for p in 0..=degree {
                next[p + 1] += poly[p] * ca;
                next[p] += poly[p] * cb;
            }
            poly = next;
            degree += 1;
        }
    }
    let norm = 1.0 / (factorial(na as usize) * factorial(nb as usize)).sqrt();
    poly.iter()
        .enumerate()
        .filter(|(_, c)| c.norm_sqr() > 0.0)
        .map(|(p, &c)| {
            let q = n - p;
            let weight = (factorial(p) * factorial(q)).sqrt() * norm;
            (p as u8, q as u8, c * weight)
        })
        .collect()
}

/// Objects that passive linear optics can act on.
pub trait PassiveTransform: Sized {
    /// Applies a single-particle 2×2 unitary (`u[out][in]`) to modes `a` and `b`.
    fn apply_two_mode(&self, a: usize, b: usize, u: &[[Complex64; 2]; 2]) -> Result<Self>;

    /// Multiplies each `|n⟩` of `mode` by `exp(i φ n)`.
    fn apply_phase(&self, mode: usize, phi: f64) -> Result<Self>;
}

fn check_pair(basis: &FockBasis, a: usize, b: usize) -> Result<()> {
    basis.check_mode(a)?;
    basis.check_mode(b)?;
    if a == b {
        return Err(Error::SameMode(a));
    }
    Ok(())
}

/// A pure state with complex amplitudes over the occupation basis.
#[derive(Debug, Clone)]
pub struct FockState {
    basis: Arc<FockBasis>,
    amplitudes: DVector<Complex64>,
}

impl FockState {
    /// Unit-norm state with amplitude 1 on `occupations`.
    pub fn basis_state(num_modes: usize, cutoff: usize, occupations: &[u8]) -> Result<Self> {
        if occupations.len() != num_modes {
            return Err(Error::ModeCount {
                expected: num_modes,
                got: occupations.len(),
            });
        }
        let n = total(occupations);
        if n > cutoff {
            return Err(Error::CutoffExceeded {
                occupations: occupations.to_vec(),
                total: n,
                cutoff,
            });
        }
        let basis = FockBasis::new(num_modes, cutoff);
        let mut amplitudes = DVector::zeros(basis.dim());
        amplitudes[basis.index_of(occupations).unwrap()] = ONE;
        Ok(FockState { basis, amplitudes })
    }

    pub fn vacuum(num_modes: usize, cutoff: usize) -> Self {
        Self::basis_state(num_modes, cutoff, &vec![0; num_modes]).unwrap()
    }

    /// Wraps raw amplitudes without normalizing them.
    pub fn from_amplitudes(basis: Arc<FockBasis>, amplitudes: DVector<Complex64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::SpaceMismatch(format!(
                "{} amplitudes for a {}-dimensional space",
                amplitudes.len(),
                basis.dim()
            )));
        }
        Ok(FockState { basis, amplitudes })
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn num_modes(&self) -> usize {
        self.basis.num_modes
    }

    pub fn cutoff(&self) -> usize {
        self.basis.cutoff
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    /// Amplitude on `occupations`; zero for vectors outside the space.
    pub fn amplitude(&self, occupations: &[u8]) -> Complex64 {
        self.basis
            .index_of(occupations)
            .map_or(ZERO, |i| self.amplitudes[i])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        Ok(FockState {
            basis: self.basis.clone(),
            amplitudes: self.amplitudes.unscale(n),
        })
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &FockState) -> Result<Complex64> {
        if !self.basis.same_space(&other.basis) {
            return Err(Error::SpaceMismatch(format!(
                "{} vs {}",
                space_label(&self.basis),
                space_label(&other.basis)
            )));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// Composite state on the concatenated mode list; the cutoff is the sum of both cutoffs.
    pub fn tensor(&self, other: &FockState) -> FockState {
        let basis = FockBasis::new(
            self.num_modes() + other.num_modes(),
            self.cutoff() + other.cutoff(),
        );
        let mut amplitudes = DVector::zeros(basis.dim());
        let mut occ = Vec::with_capacity(basis.num_modes);
        for (i, a) in self.amplitudes.iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            for (j, b) in other.amplitudes.iter().enumerate() {
                if b.norm_sqr() == 0.0 {
                    continue;
                }
                occ.clear();
                occ.extend_from_slice(self.basis.state(i));
                occ.extend_from_slice(other.basis.state(j));
                amplitudes[basis.index_of(&occ).unwrap()] = a * b;
            }
        }
        FockState { basis, amplitudes }
    }

    /// Re-embeds the state in the same modes with a different cutoff.
    pub fn with_cutoff(&self, cutoff: usize) -> Result<FockState> {
        let basis = FockBasis::new(self.num_modes(), cutoff);
        let mut amplitudes = DVector::zeros(basis.dim());
        for (i, a) in self.amplitudes.iter().enumerate() {
            let occ = self.basis.state(i);
            match basis.index_of(occ) {
                Some(j) => amplitudes[j] = *a,
                None if a.norm_sqr() > 0.0 => {
                    return Err(Error::CutoffExceeded {
                        occupations: occ.to_vec(),
                        total: total(occ),
                        cutoff,
                    })
                }
                None => {}
            }
        }
        Ok(FockState { basis, amplitudes })
    }
}

impl PassiveTransform for FockState {
    fn apply_two_mode(&self, a: usize, b: usize, u: &[[Complex64; 2]; 2]) -> Result<Self> {
        check_pair(&self.basis, a, b)?;
        let images = two_mode_images(&self.basis, a, b, u);
        let mut out = DVector::zeros(self.basis.dim());
        for (k, image) in images.iter().enumerate() {
            let amp = self.amplitudes[k];
            if amp.norm_sqr() == 0.0 {
                continue;
            }
            for &(r, c) in image {
                out[r] += c * amp;
            }
        }
        Ok(FockState {
            basis: self.basis.clone(),
            amplitudes: out,
        })
    }

    fn apply_phase(&self, mode: usize, phi: f64) -> Result<Self> {
        self.basis.check_mode(mode)?;
        let mut out = self.amplitudes.clone();
        for (i, a) in out.iter_mut().enumerate() {
            let n = self.basis.state(i)[mode] as f64;
            *a *= Complex64::from_polar(1.0, phi * n);
        }
        Ok(FockState {
            basis: self.basis.clone(),
            amplitudes: out,
        })
    }
}

/// Normalized linear combination of states that share one space.
pub fn superpose(terms: &[(Complex64, &FockState)]) -> Result<FockState> {
    let (_, first) = terms.first().ok_or(Error::ZeroNorm)?;
    let basis = first.basis.clone();
    let mut amplitudes = DVector::zeros(basis.dim());
    for (c, s) in terms {
        if !s.basis.same_space(&basis) {
            return Err(Error::SpaceMismatch(format!(
                "{} vs {}",
                space_label(&basis),
                space_label(&s.basis)
            )));
        }
        amplitudes += s.amplitudes.map(|a| a * *c);
    }
    FockState { basis, amplitudes }.normalized()
}

/// A (possibly un-normalized) Hermitian operator over the occupation basis.
///
/// Un-normalized operators carry their trace as a probability; this is how
/// heralded branches report their success probability.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    basis: Arc<FockBasis>,
    matrix: DMatrix<Complex64>,
}

impl DensityOperator {
    pub fn from_pure(state: &FockState) -> Self {
        let v = &state.amplitudes;
        DensityOperator {
            basis: state.basis.clone(),
            matrix: v * v.adjoint(),
        }
    }

    pub fn vacuum(num_modes: usize, cutoff: usize) -> Self {
        Self::from_pure(&FockState::vacuum(num_modes, cutoff))
    }

    pub fn from_matrix(basis: Arc<FockBasis>, matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != basis.dim() || matrix.ncols() != basis.dim() {
            return Err(Error::SpaceMismatch(format!(
                "{}x{} matrix for a {}-dimensional space",
                matrix.nrows(),
                matrix.ncols(),
                basis.dim()
            )));
        }
        Ok(DensityOperator { basis, matrix })
    }

    /// Weighted sum `Σ w_i ρ_i` (no renormalization).
    pub fn mix(terms: &[(f64, &DensityOperator)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or(Error::ZeroTrace)?;
        let mut matrix = DMatrix::zeros(first.dim(), first.dim());
        for (w, rho) in terms {
            if !rho.basis.same_space(&first.basis) {
                return Err(Error::SpaceMismatch(format!(
                    "{} vs {}",
                    space_label(&first.basis),
                    space_label(&rho.basis)
                )));
            }
            matrix += rho.matrix.map(|z| z * *w);
        }
        Ok(DensityOperator {
            basis: first.basis.clone(),
            matrix,
        })
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn num_modes(&self) -> usize {
        self.basis.num_modes
    }

    pub fn cutoff(&self) -> usize {
        self.basis.cutoff
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Matrix element `⟨row|ρ|col⟩`; zero when either vector is outside the space.
    pub fn element(&self, row: &[u8], col: &[u8]) -> Complex64 {
        match (self.basis.index_of(row), self.basis.index_of(col)) {
            (Some(i), Some(j)) => self.matrix[(i, j)],
            _ => ZERO,
        }
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DensityOperator {
            basis: self.basis.clone(),
            matrix: self.matrix.map(|z| z * factor),
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let t = self.trace();
        if t.abs() <= f64::MIN_POSITIVE || !t.is_finite() {
            return Err(Error::ZeroTrace);
        }
        Ok(self.scaled(1.0 / t))
    }

    /// Population of each total-photon-number sector `0..=cutoff`.
    pub fn sector_populations(&self) -> Vec<f64> {
        let mut pops = vec![0.0; self.cutoff() + 1];
        for (i, occ) in self.basis.iter().enumerate() {
            pops[total(occ)] += self.matrix[(i, i)].re;
        }
        pops
    }

    /// Largest `|ρ_ij - conj(ρ_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.matrix + self.matrix.adjoint()).map(|z| z * 0.5);
        let mut ev: Vec<f64> = SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Clips negative eigenvalues to zero and restores the trace.
    ///
    /// Only for explicit clean-up of numerically noisy operators; nothing in the
    /// simulator calls it implicitly.
    pub fn physicalize(&self) -> Result<Self> {
        let herm = (&self.matrix + self.matrix.adjoint()).map(|z| z * 0.5);
        let eig = SymmetricEigen::new(herm);
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let sum: f64 = clipped.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroTrace);
        }
        let vecs = &eig.eigenvectors;
        let diag = DMatrix::from_diagonal(&clipped.map(|l| Complex64::new(l / sum, 0.0)));
        let matrix = vecs * diag * vecs.adjoint();
        Ok(DensityOperator {
            basis: self.basis.clone(),
            matrix: matrix.map(|z| z * self.trace()),
        })
    }

    /// Composite operator on the concatenated mode list; the cutoff is the sum of both cutoffs.
    pub fn tensor(&self, other: &DensityOperator) -> DensityOperator {
        let basis = FockBasis::new(
            self.num_modes() + other.num_modes(),
            self.cutoff() + other.cutoff(),
        );
        let (da, db) = (self.dim(), other.dim());
        let mut map = vec![0usize; da * db];
        let mut occ = Vec::with_capacity(basis.num_modes);
        for i in 0..da {
            for j in 0..db {
                occ.clear();
                occ.extend_from_slice(self.basis.state(i));
                occ.extend_from_slice(other.basis.state(j));
                map[i * db + j] = basis.index_of(&occ).unwrap();
            }
        }
        let mut matrix = DMatrix::zeros(basis.dim(), basis.dim());
        for i in 0..da {
            for k in 0..da {
                let a = self.matrix[(i, k)];
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..db {
                    for l in 0..db {
                        let b = other.matrix[(j, l)];
                        if b.norm_sqr() == 0.0 {
                            continue;
                        }
                        matrix[(map[i * db + j], map[k * db + l])] = a * b;
                    }
                }
            }
        }
        DensityOperator { basis, matrix }
    }

    /// Traces out every mode not listed in `keep`. The result's modes follow the order
    /// of `keep`, so this also reorders modes.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityOperator> {
        self.trace_out_weighted(keep, |_| 1.0)
    }

    /// Partial trace in which each diagonal block of the discarded modes is weighted.
    ///
    /// `weight` receives the full occupation vector of the original space and must
    /// depend only on the discarded modes: it is the diagonal of a POVM element on
    /// those modes. The result is un-normalized; its trace is the outcome probability.
    pub fn trace_out_weighted<F>(&self, keep: &[usize], weight: F) -> Result<DensityOperator>
    where
        F: Fn(&[u8]) -> f64,
    {
        if keep.is_empty() {
            return Err(Error::EmptySelection);
        }
        let mut seen = vec![false; self.num_modes()];
        for &m in keep {
            self.basis.check_mode(m)?;
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::Invalid(format!("mode {m} listed twice")));
            }
        }
        let discarded: Vec<usize> = (0..self.num_modes()).filter(|m| !seen[*m]).collect();
        let basis = FockBasis::new(keep.len(), self.cutoff());

        // group original indices by their discarded-mode occupations
        let mut groups: HashMap<Vec<u8>, Vec<(usize, usize)>> = HashMap::new();
        let mut weights = vec![0.0; self.dim()];
        for (i, occ) in self.basis.iter().enumerate() {
            let env: Vec<u8> = discarded.iter().map(|&m| occ[m]).collect();
            let kept: Vec<u8> = keep.iter().map(|&m| occ[m]).collect();
            let k = basis.index_of(&kept).unwrap();
            weights[i] = weight(occ);
            groups.entry(env).or_default().push((i, k));
        }

        let mut matrix = DMatrix::zeros(basis.dim(), basis.dim());
        for members in groups.values() {
            let w = weights[members[0].0];
            if w == 0.0 {
                continue;
            }
            for &(i, ki) in members {
                for &(j, kj) in members {
                    matrix[(ki, kj)] += self.matrix[(i, j)] * w;
                }
            }
        }
        Ok(DensityOperator { basis, matrix })
    }

    /// Merges groups of modes into single modes by summing their occupations.
    ///
    /// The first mode of each group is the primary label; the others are internal
    /// labels that are traced out, so coherences survive only between basis states
    /// with identical occupations of every non-primary mode. Every mode must appear
    /// in exactly one group.
    pub fn merge_modes(&self, groups: &[Vec<usize>]) -> Result<DensityOperator> {
        let mut seen = vec![false; self.num_modes()];
        for &m in groups.iter().flatten() {
            self.basis.check_mode(m)?;
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::Invalid(format!("mode {m} listed twice")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invalid("merge groups must cover every mode".into()));
        }
        let basis = FockBasis::new(groups.len(), self.cutoff());
        let mut by_label: HashMap<Vec<u8>, Vec<(usize, usize)>> = HashMap::new();
        for (i, occ) in self.basis.iter().enumerate() {
            let merged: Vec<u8> = groups
                .iter()
                .map(|g| g.iter().map(|&m| occ[m]).sum())
                .collect();
            let label: Vec<u8> = groups
                .iter()
                .flat_map(|g| g[1..].iter().map(|&m| occ[m]))
                .collect();
            by_label
                .entry(label)
                .or_default()
                .push((i, basis.index_of(&merged).unwrap()));
        }
        let mut matrix = DMatrix::zeros(basis.dim(), basis.dim());
        for members in by_label.values() {
            for &(i, ki) in members {
                for &(j, kj) in members {
                    matrix[(ki, kj)] += self.matrix[(i, j)];
                }
            }
        }
        Ok(DensityOperator { basis, matrix })
    }

    /// Re-embeds the operator with another cutoff; fails if a dropped sector is populated.
    pub fn with_cutoff(&self, cutoff: usize) -> Result<DensityOperator> {
        let basis = FockBasis::new(self.num_modes(), cutoff);
        let map: Vec<Option<usize>> = self.basis.iter().map(|o| basis.index_of(o)).collect();
        for (i, occ) in self.basis.iter().enumerate() {
            if map[i].is_none() && self.matrix[(i, i)].re.abs() > 1e-14 {
                return Err(Error::CutoffExceeded {
                    occupations: occ.to_vec(),
                    total: total(occ),
                    cutoff,
                });
            }
        }
        let mut matrix = DMatrix::zeros(basis.dim(), basis.dim());
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if let (Some(a), Some(b)) = (map[i], map[j]) {
                    matrix[(a, b)] = self.matrix[(i, j)];
                }
            }
        }
        Ok(DensityOperator { basis, matrix })
    }

    /// Shrinks the cutoff to the highest sector holding population above `1e-14`.
    pub fn compact(&self) -> DensityOperator {
        let pops = self.sector_populations();
        let top = pops.iter().rposition(|p| p.abs() > 1e-14).unwrap_or(0);
        self.with_cutoff(top).expect("dropped sectors are empty")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DensityOperatorJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<DensityOperatorJson>(text)?.try_into()
    }
}

impl PassiveTransform for DensityOperator {
    fn apply_two_mode(&self, a: usize, b: usize, u: &[[Complex64; 2]; 2]) -> Result<Self> {
        check_pair(&self.basis, a, b)?;
        let images = two_mode_images(&self.basis, a, b, u);
        let n = self.dim();
        // A = U ρ
        let mut left = DMatrix::<Complex64>::zeros(n, n);
        for (k, image) in images.iter().enumerate() {
            for &(r, c) in image {
                for col in 0..n {
                    let v = self.matrix[(k, col)];
                    if v.norm_sqr() != 0.0 {
                        left[(r, col)] += c * v;
                    }
                }
            }
        }
        // ρ' = A U†
        let mut out = DMatrix::<Complex64>::zeros(n, n);
        for (k, image) in images.iter().enumerate() {
            for &(r, c) in image {
                let cc = c.conj();
                for row in 0..n {
                    let v = left[(row, k)];
                    if v.norm_sqr() != 0.0 {
                        out[(row, r)] += v * cc;
                    }
                }
            }
        }
        Ok(DensityOperator {
            basis: self.basis.clone(),
            matrix: out,
        })
    }

    fn apply_phase(&self, mode: usize, phi: f64) -> Result<Self> {
        self.basis.check_mode(mode)?;
        let n: Vec<f64> = self.basis.iter().map(|o| o[mode] as f64).collect();
        let mut matrix = self.matrix.clone();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                matrix[(i, j)] *= Complex64::from_polar(1.0, phi * (n[i] - n[j]));
            }
        }
        Ok(DensityOperator {
            basis: self.basis.clone(),
            matrix,
        })
    }
}

/// `⟨ψ|ρ|ψ⟩`, clipped to `[0, 1]` when it overshoots by at most `1e-12`.
pub fn fidelity(rho: &DensityOperator, psi: &FockState) -> Result<f64> {
    if !rho.basis.same_space(&psi.basis) {
        return Err(Error::SpaceMismatch(format!(
            "{} vs {}",
            space_label(&rho.basis),
            space_label(&psi.basis)
        )));
    }
    let v = &psi.amplitudes;
    let f = v.dotc(&(&rho.matrix * v)).re;
    if (-1e-12..0.0).contains(&f) {
        Ok(0.0)
    } else if (1.0..=1.0 + 1e-12).contains(&f) {
        Ok(1.0)
    } else {
        Ok(f)
    }
}

/// `Tr(ρ²)` of the normalized operator.
pub fn purity(rho: &DensityOperator) -> Result<f64> {
    let t = rho.trace();
    if t.abs() <= f64::MIN_POSITIVE {
        return Err(Error::ZeroTrace);
    }
    // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
    let s: f64 = rho.matrix.iter().map(|z| z.norm_sqr()).sum();
    Ok(s / (t * t))
}

/// Wire form: `{"modes", "cutoff", "basis", "re", "im"}` with the basis listed explicitly.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityOperatorJson {
    pub modes: usize,
    pub cutoff: usize,
    pub basis: Vec<Vec<u8>>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&DensityOperator> for DensityOperatorJson {
    fn from(rho: &DensityOperator) -> Self {
        let n = rho.dim();
        let rows = |f: fn(&Complex64) -> f64| {
            (0..n)
                .map(|i| (0..n).map(|j| f(&rho.matrix[(i, j)])).collect())
                .collect()
        };
        DensityOperatorJson {
            modes: rho.num_modes(),
            cutoff: rho.cutoff(),
            basis: rho.basis.iter().map(|o| o.to_vec()).collect(),
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }
}

impl TryFrom<DensityOperatorJson> for DensityOperator {
    type Error = Error;

    fn try_from(j: DensityOperatorJson) -> Result<Self> {
        let basis = FockBasis::new(j.modes, j.cutoff);
        let n = j.basis.len();
        if n != basis.dim() {
            return Err(Error::Invalid(format!(
                "basis lists {n} vectors, space has {}",
                basis.dim()
            )));
        }
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square(&j.re) || !square(&j.im) {
            return Err(Error::Invalid(format!("re/im must be {n}x{n}")));
        }
        let mut idx = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        for occ in &j.basis {
            let i = basis
                .index_of(occ)
                .ok_or_else(|| Error::Invalid(format!("{occ:?} is not in the space")))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Invalid(format!("{occ:?} listed twice")));
            }
            idx.push(i);
        }
        let mut matrix = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                matrix[(idx[a], idx[b])] = Complex64::new(j.re[a][b], j.im[a][b]);
            }
        }
        Ok(DensityOperator { basis, matrix })
    }
}
