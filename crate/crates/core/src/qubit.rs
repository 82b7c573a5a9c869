//! Dual-rail polarization qubits: `α|1_H 0_V⟩ + β|0_H 1_V⟩`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{superpose, FockState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitAmplitudes {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl QubitAmplitudes {
    /// Requires `|α|² + |β|² = 1` within `1e-12`.
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let q = QubitAmplitudes { alpha, beta };
        q.validate()?;
        Ok(q)
    }

    pub fn normalized(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let n = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        Ok(QubitAmplitudes {
            alpha: alpha / n,
            beta: beta / n,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alpha.norm_sqr() + self.beta.norm_sqr();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::OutOfRange {
                name: "|alpha|^2 + |beta|^2",
                value: n,
                range: "1 ± 1e-12",
            });
        }
        Ok(())
    }

    /// The single-photon state on modes `(H, V)` in a space with the given cutoff.
    pub fn dual_rail(&self, cutoff: usize) -> Result<FockState> {
        let h = FockState::basis_state(2, cutoff, &[1, 0])?;
        let v = FockState::basis_state(2, cutoff, &[0, 1])?;
        superpose(&[(self.alpha, &h), (self.beta, &v)])
    }
}

impl From<Polarization> for QubitAmplitudes {
    fn from(p: Polarization) -> Self {
        p.amplitudes()
    }
}

/// The six canonical polarization states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Polarization {
    pub const ALL: [Polarization; 6] = [
        Polarization::H,
        Polarization::V,
        Polarization::D,
        Polarization::A,
        Polarization::R,
        Polarization::L,
    ];

    /// `D, A = (H ± V)/√2`; `R, L = (H ∓ iV)/√2`.
    pub fn amplitudes(self) -> QubitAmplitudes {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (alpha, beta) = match self {
            Polarization::H => (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
            Polarization::V => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
            Polarization::D => (Complex64::new(s, 0.0), Complex64::new(s, 0.0)),
            Polarization::A => (Complex64::new(s, 0.0), Complex64::new(-s, 0.0)),
            Polarization::R => (Complex64::new(s, 0.0), Complex64::new(0.0, -s)),
            Polarization::L => (Complex64::new(s, 0.0), Complex64::new(0.0, s)),
        };
        QubitAmplitudes { alpha, beta }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "H" => Ok(Polarization::H),
            "V" => Ok(Polarization::V),
            "D" => Ok(Polarization::D),
            "A" => Ok(Polarization::A),
            "R" => Ok(Polarization::R),
            "L" => Ok(Polarization::L),
            other => Err(Error::Invalid(format!("unknown polarization {other:?}"))),
        }
    }
}
