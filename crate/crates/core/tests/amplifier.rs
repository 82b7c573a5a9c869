use scissorsim::amplifier::{output_fidelity, qubit_weight, vacuum_weight};
use scissorsim::{
    analytic_model_with, build_input, qubit_amplifier, qubit_amplifier_with, CircuitConfig,
    DensityOperator, DetectorResponse, HeraldModel, PhaseConvention, Polarization,
    SimulationOptions,
};

fn max_diff(a: &DensityOperator, b: &DensityOperator) -> f64 {
    (a.matrix() - b.matrix())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn lossy(g2: f64, pol: Polarization) -> CircuitConfig {
    let mut c = CircuitConfig::ideal(0.041, g2, pol.amplitudes());
    c.tau = 0.45;
    c.delta = 0.8;
    c.v1 = 0.99;
    c.v2 = 0.91;
    c
}

#[test]
fn output_does_not_depend_on_beamsplitter_phases() {
    for pol in Polarization::ALL {
        let c = lossy(3.48, pol);
        let real = qubit_amplifier(&c).unwrap();
        let sym = qubit_amplifier_with(
            &c,
            &SimulationOptions {
                convention: PhaseConvention::Symmetric,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((real.success_probability - sym.success_probability).abs() < 1e-12);
        assert!(max_diff(&real.rho_out, &sym.rho_out) < 1e-12, "{pol}");
        for (a, b) in real.successes().iter().zip(sym.successes()) {
            assert_eq!(a.pattern, b.pattern);
            assert!(
                max_diff(&a.output, &b.output) < 1e-12,
                "{pol} {}",
                a.pattern
            );
        }
    }
}

#[test]
fn golden_output_for_r_input() {
    // frozen from the branch-enumeration oracle; both conventions must reproduce it
    let c = lossy(3.48, Polarization::R);
    for convention in [PhaseConvention::RealOrthogonal, PhaseConvention::Symmetric] {
        let res = qubit_amplifier_with(
            &c,
            &SimulationOptions {
                convention,
                ..Default::default()
            },
        )
        .unwrap();
        let rho = &res.rho_out;
        let hv = rho.element(&[1, 0], &[0, 1]);
        assert!(hv.re.abs() < 1e-12);
        // R = (H - iV)/√2 gives ρ_HV = i w V1 V2 / 2 with w the qubit weight
        let w = qubit_weight(rho);
        assert!((hv.im - 0.5 * w * 0.99 * 0.91).abs() < 1e-12);
        assert!((rho.element(&[1, 0], &[1, 0]).re - 0.5 * w).abs() < 1e-12);
    }
}

#[test]
fn photon_loss_heralds_follow_their_closed_form() {
    for pnr in [false, true] {
        let herald = HeraldModel {
            number_resolving: pnr,
            response: DetectorResponse::PhotonLoss,
        };
        for (g2, tau, delta) in [(2.08, 0.45, 0.6), (8.5, 0.9, 0.3), (1.5, 1.0, 1.0)] {
            let mut c = CircuitConfig::ideal(0.2, g2, Polarization::D.amplitudes());
            c.tau = tau;
            c.delta = delta;
            let a = analytic_model_with(&c, &herald).unwrap();
            let res = qubit_amplifier_with(&c, &SimulationOptions::with_herald(herald)).unwrap();
            assert!((qubit_weight(&res.rho_out) - a.qubit_weight).abs() < 1e-10);
            assert!((res.success_probability - a.p).abs() < 1e-12);
            let bunching = if pnr { 1.0 - 2.0 * delta } else { 1.0 - delta };
            let base = HeraldModel::default().saturation_factor(g2, tau, delta);
            assert!((a.l - (base + bunching)).abs() < 1e-12);
        }
    }
}

#[test]
fn unit_gain_with_resolving_heralds_is_the_identity() {
    let herald = SimulationOptions::with_herald(HeraldModel::number_resolving());
    for pol in Polarization::ALL {
        let c = CircuitConfig::ideal(0.3, 1.0, pol.amplitudes());
        let res = qubit_amplifier_with(&c, &herald).unwrap();
        let input = build_input(&c).unwrap();
        assert!(max_diff(&res.rho_out, &input) < 1e-12, "{pol}");
        assert!((output_fidelity(&res.rho_out, &c.qubit).unwrap() - 0.3).abs() < 1e-12);
    }
}

#[test]
fn qubit_weight_grows_with_gain() {
    let mut last = 0.0;
    for g2 in [0.5, 1.0, 2.08, 3.48, 8.5, 20.0, 100.0] {
        let w = qubit_weight(
            &qubit_amplifier(&lossy(g2, Polarization::H))
                .unwrap()
                .rho_out,
        );
        assert!(w > last, "g2 = {g2}: {w} <= {last}");
        last = w;
    }
}

#[test]
fn herald_efficiency_scales_probability_only() {
    let base = CircuitConfig {
        v1: 1.0,
        v2: 1.0,
        ..lossy(3.48, Polarization::A)
    };
    let reference = qubit_amplifier(&CircuitConfig { delta: 1.0, ..base }).unwrap();
    for delta in [0.1, 0.37, 0.8] {
        let res = qubit_amplifier(&CircuitConfig { delta, ..base }).unwrap();
        let ratio = res.success_probability / reference.success_probability;
        assert!((ratio - delta * delta).abs() < 1e-12, "{delta}: {ratio}");
        assert!(max_diff(&res.rho_out, &reference.rho_out) < 1e-12);
    }
}

#[test]
fn partial_distinguishability_breaks_the_square_law() {
    // with V < 1 the two photons of a stage can land on different detectors and a
    // single miss still heralds, adding a δ(1-δ) term
    let base = lossy(3.48, Polarization::A);
    let reference = qubit_amplifier(&CircuitConfig { delta: 1.0, ..base }).unwrap();
    let res = qubit_amplifier(&CircuitConfig { delta: 0.1, ..base }).unwrap();
    let ratio = res.success_probability / reference.success_probability;
    assert!(ratio > 0.01 && ratio < 0.0101, "{ratio}");
}

#[test]
fn unequal_detectors_shift_pattern_weights_not_the_state() {
    let c = lossy(3.48, Polarization::D);
    let equal = qubit_amplifier(&c).unwrap();
    let options = SimulationOptions {
        herald_efficiencies: Some([0.9, 0.5, 0.7, 0.6]),
        ..Default::default()
    };
    let skewed = qubit_amplifier_with(&c, &options).unwrap();
    let p: Vec<f64> = skewed.successes().iter().map(|o| o.probability).collect();
    assert!(p[0] > p[3]);
    let total: f64 = skewed.outcomes.iter().map(|o| o.probability).sum();
    assert!((total - 1.0).abs() < 1e-10);
    assert!((vacuum_weight(&skewed.rho_out) - vacuum_weight(&equal.rho_out)).abs() < 0.05);
}

#[test]
fn configs_with_inconsistent_fields_are_rejected() {
    let mut c = lossy(3.48, Polarization::H);
    c.cutoff = 2;
    assert!(qubit_amplifier(&c).is_err());
    let mut c = lossy(3.48, Polarization::H);
    c.tau = 1.5;
    assert!(qubit_amplifier(&c).is_err());
    let mut c = lossy(3.48, Polarization::H);
    c.eta_v = 1.0;
    assert!(qubit_amplifier(&c).is_err());
}
