use std::f64::consts::TAU;

use proptest::prelude::*;
use qfm_casr::oracle::{
    accumulated_phase, evolve_lab, max_frequency_hz, validate_effective, IntegrationConfig,
    OracleComparison, SpinState, DEFAULT_BOUNDS,
};
use qfm_casr::qfm::{self, FieldTone, NvBranch, NvTwoLevel, DEFAULT_VALIDITY_THRESHOLD};

fn minus_one() -> NvTwoLevel {
    NvTwoLevel::from_branch(NvBranch::MinusOne)
}

fn compare(s: FieldTone, b: FieldTone, nv: NvTwoLevel, duration: f64) -> OracleComparison {
    let cfg = IntegrationConfig::for_tones(&[s, b], &nv, duration);
    validate_effective(&s, &b, &nv, &cfg, &DEFAULT_BOUNDS).unwrap()
}

fn report(c: &OracleComparison) -> String {
    format!(
        "Ω_e err {:.3e}, ω_e err {:.3e}, φ_e err {:.3}°, residual {:.2e} rad, breakdown {}",
        c.amplitude_error,
        c.frequency_error,
        c.phase_error.to_degrees(),
        c.run.fit.residual_rms,
        c.breakdown
    )
}

#[test]
fn two_tones_near_2p4_ghz_match_closed_form() {
    let s = FieldTone::from_hz(0.21e6, 2.4e9 + 3.125e3, 0.0).unwrap();
    let b = FieldTone::from_hz(4.3e6, 2.399e9, 0.0).unwrap();
    let c = compare(s, b, minus_one(), 20e-6);
    assert!(c.validity.pass);
    assert!(c.pass(), "{}", report(&c));
    assert!(c.frequency_error < 1e-3);
    // δ is recovered too, although it is not bounded
    assert!(c.stark_error < 0.01, "{}", c.stark_error);
}

#[test]
fn zero_signal_fits_no_modulation() {
    let s = FieldTone::from_hz(0.0, 2.4e9 + 3.125e3, 0.0).unwrap();
    let b = FieldTone::from_hz(4.3e6, 2.399e9, 0.0).unwrap();
    let c = compare(s, b, minus_one(), 10e-6);
    assert_eq!(c.predicted_amplitude, 0.0);
    assert!(c.run.fit.modulation < 1e-4, "{}", c.run.fit.modulation);
    assert!(c.pass());
}

#[test]
fn phase_offsets_carry_through() {
    let s = FieldTone::from_hz(0.21e6, 0.6e9 + 2e3, 1.3).unwrap();
    let b = FieldTone::from_hz(4.3e6, 0.599e9, 4.0).unwrap();
    let c = compare(s, b, minus_one(), 10e-6);
    assert!(c.pass(), "{}", report(&c));
}

#[test]
fn swapped_order_folds_and_still_agrees() {
    let s = FieldTone::from_hz(0.21e6, 3.999e9, 0.7).unwrap();
    let b = FieldTone::from_hz(4.3e6, 4.0e9, 2.0).unwrap();
    let c = compare(s, b, minus_one(), 10e-6);
    assert!(c.predicted.folded);
    assert!(c.pass(), "{}", report(&c));
}

#[test]
fn fitted_phase_fixes_the_coupling_sign() {
    let s = FieldTone::from_hz(0.21e6, 2.4e9, 0.0).unwrap();
    let b = FieldTone::from_hz(4.3e6, 2.399e9, 0.0).unwrap();
    let c = compare(s, b, minus_one(), 10e-6);
    // Above resonance the closed form is positive, yet the spin phase
    // oscillates as −sin(ω_e t).
    assert!(c.predicted.amplitude > 0.0);
    let flipped = qfm_casr::units::wrap_to_pi(c.run.fit.phase - c.predicted.phase);
    assert!((flipped.abs() - std::f64::consts::PI).abs() < DEFAULT_BOUNDS.phase);
    assert_eq!(qfm::COUPLING_SIGN, -1.0);
}

#[test]
fn violated_validity_raises_breakdown() {
    let nv = minus_one();
    let s = FieldTone::new(TAU * 0.21e6, nv.resonance + TAU * 10e6, 0.0).unwrap();
    let b = FieldTone::new(TAU * 4.3e6, s.frequency - TAU * 1e6, 0.0).unwrap();
    assert!(!qfm::validity_check(&s, &b, &nv, DEFAULT_VALIDITY_THRESHOLD).pass);
    let c = compare(s, b, nv, 20e-6);
    assert!(c.breakdown, "{}", report(&c));
    assert!(c.run.fit.flagged);
    assert!(!c.pass());
}

#[test]
fn norm_is_conserved_over_20_us() {
    let nv = minus_one();
    let tones = [
        FieldTone::from_hz(0.21e6, 2.4e9, 0.0).unwrap(),
        FieldTone::from_hz(4.3e6, 2.399e9, 0.0).unwrap(),
    ];
    let cfg = IntegrationConfig::for_tones(&tones, &nv, 20e-6).with_record_every(100_000);
    let traj = evolve_lab(SpinState::superposition(), &tones, &nv, &cfg).unwrap();
    assert!(traj.max_norm_drift <= 1e-9, "{}", traj.max_norm_drift);
}

#[test]
fn step_halving_converges_at_fourth_order() {
    let nv = minus_one();
    let tones = [
        FieldTone::from_hz(0.21e6, 2.4e9, 0.0).unwrap(),
        FieldTone::from_hz(4.3e6, 2.399e9, 0.0).unwrap(),
    ];
    let base = 1.0 / (50.0 * max_frequency_hz(&tones, &nv));
    let final_phase = |step: f64| {
        let cfg = IntegrationConfig::for_tones(&tones, &nv, 2e-6)
            .with_step(step)
            .with_record_every(1);
        let traj = evolve_lab(SpinState::superposition(), &tones, &nv, &cfg).unwrap();
        *accumulated_phase(&traj).unwrap().phase.last().unwrap()
    };
    let p: Vec<f64> = [1.0, 0.5, 0.25, 0.125].iter().map(|k| final_phase(base * k)).collect();
    let d1 = (p[0] - p[1]).abs();
    let d2 = (p[1] - p[2]).abs();
    let d3 = (p[2] - p[3]).abs();
    // the default step is h/2 here
    assert!(d2 < 1e-6, "{d1:e} {d2:e} {d3:e}");
    let order = (d1 / d2).log2();
    assert!(order > 3.5, "observed order {order} ({d1:e} {d2:e} {d3:e})");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn valid_configurations_agree(
        fs in 0.3e9f64..5.0e9,
        fe in 0.5e6f64..2.0e6,
        amp_s in 0.05e6f64..0.3e6,
        amp_b in 1.0e6f64..4.3e6,
        ps in 0.0f64..TAU,
        pb in 0.0f64..TAU,
        plus in any::<bool>(),
    ) {
        let nv = NvTwoLevel::from_branch(if plus { NvBranch::PlusOne } else { NvBranch::MinusOne });
        let s = FieldTone::from_hz(amp_s, fs, ps).unwrap();
        let b = FieldTone::from_hz(amp_b, fs - fe, pb).unwrap();
        prop_assume!(qfm::validity_check(&s, &b, &nv, DEFAULT_VALIDITY_THRESHOLD).pass);
        let c = compare(s, b, nv, 6e-6);
        prop_assert!(c.pass(), "{}", report(&c));
    }
}
