//! Brute-force pure-state enumeration of the two-stage circuit, compared with the
//! density-operator simulation.
//!
//! Every mode of the circuit is kept explicitly (twelve of them), the mixed source is
//! unravelled into its pure branches, and detectors act as diagonal weights on each
//! branch. Nothing here calls the library's Fock-space code.

use std::collections::HashMap;

use num_complex::Complex64;
use proptest::prelude::*;
use scissorsim::amplifier::HeraldPattern;
use scissorsim::{
    qubit_amplifier_with, CircuitConfig, DetectorResponse, HeraldModel, QubitAmplitudes,
    SimulationOptions,
};

const MODES: usize = 12;
// 0 sH, 1 sV, 2 aV, 3 aV⊥, 4 cV, 5 cV⊥, 6 sV⊥, 7 aH, 8 aH⊥, 9 cH, 10 cH⊥, 11 sH⊥
type Occ = [u8; MODES];
type Ket = HashMap<Occ, Complex64>;

fn fact(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn binom(n: u32, k: u32) -> f64 {
    fact(n) / (fact(k) * fact(n - k))
}

/// Real two-mode unitary `u[out][in]` acting on modes `i`, `j`.
fn beamsplitter(state: &Ket, i: usize, j: usize, u: [[f64; 2]; 2]) -> Ket {
    let mut out: Ket = HashMap::new();
    for (occ, amp) in state {
        let (na, nb) = (occ[i] as u32, occ[j] as u32);
        for k in 0..=na {
            for l in 0..=nb {
                let c = binom(na, k)
                    * u[0][0].powi(k as i32)
                    * u[1][0].powi((na - k) as i32)
                    * binom(nb, l)
                    * u[0][1].powi(l as i32)
                    * u[1][1].powi((nb - l) as i32);
                let p = k + l;
                let q = na + nb - p;
                let norm = (fact(p) * fact(q) / (fact(na) * fact(nb))).sqrt();
                let mut o = *occ;
                o[i] = p as u8;
                o[j] = q as u8;
                *out.entry(o).or_default() += amp * c * norm;
            }
        }
    }
    out
}

fn bs_real(eta: f64) -> [[f64; 2]; 2] {
    let (r, t) = (eta.sqrt(), (1.0 - eta).sqrt());
    [[r, t], [t, -r]]
}

#[derive(Clone, Copy, Debug)]
struct Heralds {
    pnr: bool,
    gated: bool,
    eff: [f64; 4],
}

impl Heralds {
    fn silent(&self, n: u8, e: f64) -> f64 {
        match (n, self.gated) {
            (0, _) => 1.0,
            (_, true) => 1.0 - e,
            (n, false) => (1.0 - e).powi(n as i32),
        }
    }

    fn fire(&self, n: u8, e: f64) -> f64 {
        if !self.pnr {
            return 1.0 - self.silent(n, e);
        }
        match (n, self.gated) {
            (0, _) => 0.0,
            (1, _) => e,
            (_, true) => 0.0,
            (n, false) => n as f64 * e * (1.0 - e).powi(n as i32 - 1),
        }
    }
}

struct Params {
    alpha: Complex64,
    beta: Complex64,
    gamma1: f64,
    eta_h: f64,
    eta_v: f64,
    tau: f64,
    v1: f64,
    v2: f64,
    heralds: Heralds,
}

/// Per success pattern: un-normalized output over `(n_oH, n_oV)` pairs.
type PatternOutput = HashMap<((u8, u8), (u8, u8)), Complex64>;

fn enumerate(p: &Params) -> Vec<(HeraldPattern, PatternOutput)> {
    let patterns = HeraldPattern::SUCCESSES;
    let mut outputs: Vec<PatternOutput> = vec![HashMap::new(); 4];
    let one = Complex64::new(1.0, 0.0);
    for sig in [false, true] {
        let ps = if sig { p.gamma1 } else { 1.0 - p.gamma1 };
        for av in [false, true] {
            for ah in [false, true] {
                let w = ps
                    * if av { p.tau } else { 1.0 - p.tau }
                    * if ah { p.tau } else { 1.0 - p.tau };
                if w == 0.0 {
                    continue;
                }
                let sig_terms: Vec<(Option<usize>, Complex64)> = if sig {
                    vec![(Some(0), p.alpha), (Some(1), p.beta)]
                } else {
                    vec![(None, one)]
                };
                let anc = |present: bool, m: usize, v: f64| -> Vec<(Option<usize>, Complex64)> {
                    if present {
                        vec![
                            (Some(m), Complex64::new(v.sqrt(), 0.0)),
                            (Some(m + 1), Complex64::new((1.0 - v).sqrt(), 0.0)),
                        ]
                    } else {
                        vec![(None, one)]
                    }
                };
                let mut state: Ket = HashMap::new();
                for (m1, c1) in &sig_terms {
                    for (m2, c2) in anc(av, 2, p.v1) {
                        for (m3, c3) in anc(ah, 7, p.v2) {
                            let mut o = [0u8; MODES];
                            for m in [*m1, m2, m3].into_iter().flatten() {
                                o[m] += 1;
                            }
                            *state.entry(o).or_default() += c1 * c2 * c3;
                        }
                    }
                }
                let (ev, eh, half) = (bs_real(p.eta_v), bs_real(p.eta_h), bs_real(0.5));
                for (i, j, u) in [
                    (2, 4, ev),
                    (3, 5, ev),
                    (1, 4, half),
                    (6, 5, half),
                    (7, 9, eh),
                    (8, 10, eh),
                    (0, 9, half),
                    (11, 10, half),
                ] {
                    state = beamsplitter(&state, i, j, u);
                }
                accumulate(p, w, &state, &patterns, &mut outputs);
            }
        }
    }
    patterns.into_iter().zip(outputs).collect()
}

fn accumulate(
    p: &Params,
    w: f64,
    state: &Ket,
    patterns: &[HeraldPattern; 4],
    outputs: &mut [PatternOutput],
) {
    let h = &p.heralds;
    for (k, _) in patterns.iter().enumerate() {
        let (first_v, first_h) = (k < 2, k % 2 == 0);
        // environment = every mode that is traced out, together with the output's ⊥ labels
        let mut env: HashMap<Occ, HashMap<(u8, u8), Complex64>> = HashMap::new();
        for (occ, amp) in state {
            let d = [
                occ[1] + occ[6],
                occ[4] + occ[5],
                occ[0] + occ[11],
                occ[9] + occ[10],
            ];
            let on = |idx: usize, fire: bool| {
                if fire {
                    h.fire(d[idx], h.eff[idx])
                } else {
                    h.silent(d[idx], h.eff[idx])
                }
            };
            let weight = on(0, first_v) * on(1, !first_v) * on(2, first_h) * on(3, !first_h);
            if weight == 0.0 {
                continue;
            }
            let (n_h, n_v) = (occ[7] + occ[8], occ[2] + occ[3]);
            let flips = if first_v { 0 } else { n_v } + if first_h { 0 } else { n_h };
            let sign = if flips % 2 == 0 { 1.0 } else { -1.0 };
            let mut key = *occ;
            key[2] = 0;
            key[7] = 0;
            *env.entry(key).or_default().entry((n_h, n_v)).or_default() +=
                amp * sign * weight.sqrt();
        }
        for vec in env.values() {
            for (k1, a1) in vec {
                for (k2, a2) in vec {
                    *outputs[k].entry((*k1, *k2)).or_default() += a1 * a2.conj() * w;
                }
            }
        }
    }
}

fn compare(p: &Params) {
    let qubit = QubitAmplitudes::normalized(p.alpha, p.beta).unwrap();
    let config = CircuitConfig {
        gamma1: p.gamma1,
        qubit,
        eta_h: p.eta_h,
        eta_v: p.eta_v,
        tau: p.tau,
        delta: 1.0,
        v1: p.v1,
        v2: p.v2,
        eps_det: 0.5,
        eps_path: 0.64,
        cutoff: 3,
    };
    let options = SimulationOptions {
        herald: HeraldModel {
            number_resolving: p.heralds.pnr,
            response: if p.heralds.gated {
                DetectorResponse::Gated
            } else {
                DetectorResponse::PhotonLoss
            },
        },
        herald_efficiencies: Some(p.heralds.eff),
        ..Default::default()
    };
    let result = qubit_amplifier_with(&config, &options).unwrap();
    let expected = enumerate(p);
    let mut p_total = 0.0;
    for (pattern, out) in &expected {
        let prob: f64 = out
            .iter()
            .filter(|((a, b), _)| a == b)
            .map(|(_, v)| v.re)
            .sum();
        p_total += prob;
        let got = result.outcome(*pattern).unwrap();
        assert!(
            (got.probability - prob).abs() < 1e-12,
            "{pattern}: {} vs {prob}",
            got.probability
        );
        if prob < 1e-14 {
            continue;
        }
        let basis = got.output.basis().clone();
        for row in basis.iter() {
            for col in basis.iter() {
                let want = out
                    .get(&((row[0], row[1]), (col[0], col[1])))
                    .copied()
                    .unwrap_or_default()
                    / prob;
                let have = got.output.element(row, col) / got.output.trace();
                assert!(
                    (have - want).norm() < 1e-10,
                    "{pattern} {row:?},{col:?}: {have} vs {want}"
                );
            }
        }
    }
    assert!((result.success_probability - p_total).abs() < 1e-12);
}

#[test]
fn threshold_heralds_at_reference_point() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let eta = 8.5 / 9.5;
    compare(&Params {
        alpha: Complex64::new(s, 0.0),
        beta: Complex64::new(0.0, -s),
        gamma1: 0.041,
        eta_h: eta,
        eta_v: eta,
        tau: 0.45,
        v1: 0.99,
        v2: 0.7879,
        heralds: Heralds {
            pnr: false,
            gated: true,
            eff: [1.0; 4],
        },
    });
}

#[test]
fn unequal_detectors_and_stages() {
    compare(&Params {
        alpha: Complex64::new(0.6, 0.0),
        beta: Complex64::new(0.0, 0.8),
        gamma1: 0.3,
        eta_h: 0.8,
        eta_v: 0.55,
        tau: 0.7,
        v1: 0.9,
        v2: 0.6,
        heralds: Heralds {
            pnr: false,
            gated: false,
            eff: [0.5, 0.9, 0.7, 0.3],
        },
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulation_matches_enumeration(
        theta in 0.0..std::f64::consts::PI,
        phi in -3.2..3.2f64,
        gamma1 in 0.0..1.0f64,
        eta_h in 0.05..0.95f64,
        eta_v in 0.05..0.95f64,
        tau in 0.05..1.0f64,
        v1 in 0.0..1.0f64,
        v2 in 0.0..1.0f64,
        eff in prop::array::uniform4(0.05..1.0f64),
        pnr in any::<bool>(),
        gated in any::<bool>(),
    ) {
        compare(&Params {
            alpha: Complex64::new((theta / 2.0).cos(), 0.0),
            beta: Complex64::from_polar((theta / 2.0).sin(), phi),
            gamma1,
            eta_h,
            eta_v,
            tau,
            v1,
            v2,
            heralds: Heralds { pnr, gated, eff },
        });
    }
}
