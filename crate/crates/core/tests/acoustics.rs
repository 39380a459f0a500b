use lfxlms::acoustics::{distance, schroeder_rt60, simulate_rir, AbsorptionModel, Point3, RoomSpec};
use proptest::prelude::*;

fn room(rt60: f64, len: usize) -> RoomSpec {
    RoomSpec::new([6.0, 6.2, 3.0], rt60, 16_000.0, len)
}

fn inside() -> impl Strategy<Value = Point3> {
    (0.3f64..5.7, 0.3f64..5.9, 0.3f64..2.7).prop_map(|(x, y, z)| [x, y, z])
}

#[test]
fn energy_grows_with_reverberation_time() {
    let (s, m) = ([2.0, 1.5, 1.2], [4.5, 3.0, 1.5]);
    let mut last = 0.0;
    for rt in [0.0, 0.05, 0.1, 0.15, 0.3, 0.6] {
        let e = simulate_rir(&room(rt, 512), &s, &m).unwrap().energy();
        assert!(e >= last, "rt60 {rt}: {e} < {last}");
        last = e;
    }
}

#[test]
fn experiment_secondary_path_has_expected_delay() {
    let (s, m) = ([3.0, 2.5, 1.5], [4.5, 3.0, 1.5]);
    let ir = simulate_rir(&room(0.15, 512), &s, &m).unwrap();
    let t0 = (distance(&s, &m) * 16_000.0 / 343.0).round() as usize;
    let peak = ir
        .taps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap()
        .0;
    assert_eq!(peak, t0);
}

#[test]
fn calibrated_absorption_is_less_than_sabine() {
    let mut r = room(0.15, 2048);
    let sabine = lfxlms::acoustics::absorption_from_rt60(&r).unwrap();
    r.absorption_model = AbsorptionModel::Calibrated;
    let calibrated = lfxlms::acoustics::absorption_from_rt60(&r).unwrap();
    assert!(calibrated < sabine);
    let ir = simulate_rir(&r, &[2.0, 1.5, 1.2], &[4.5, 3.0, 1.5]).unwrap();
    let measured = schroeder_rt60(&ir).unwrap();
    assert!((measured - 0.15).abs() < 0.15 * 0.1, "measured {measured}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn source_and_mic_are_reciprocal(s in inside(), m in inside()) {
        prop_assume!(distance(&s, &m) > 0.05);
        let r = room(0.15, 256);
        let a = simulate_rir(&r, &s, &m).unwrap();
        let b = simulate_rir(&r, &m, &s).unwrap();
        for (x, y) in a.taps.iter().zip(&b.taps) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-3));
        }
    }

    #[test]
    fn first_significant_tap_matches_direct_path(s in inside(), m in inside()) {
        let d = distance(&s, &m);
        prop_assume!(d > 0.2);
        let r = room(0.15, 1024);
        let ir = simulate_rir(&r, &s, &m).unwrap();
        let t0 = (d * 16_000.0 / 343.0).round() as i64;
        prop_assume!(t0 + 40 < 1024);
        // The direct pulse is the nearest image; nothing before its kernel.
        let direct = 1.0 / (4.0 * std::f64::consts::PI * d);
        let first = ir.taps.iter().position(|v| v.abs() > 0.05 * direct).unwrap() as i64;
        prop_assert!((first - t0).abs() <= 40, "first {first}, expected {t0}");
    }

    #[test]
    fn energy_monotone_in_rt60(s in inside(), m in inside(), a in 0.05f64..0.5, b in 0.05f64..0.5) {
        // Whole direct pulse inside the window; truncated kernel tails can
        // interfere either way.
        let d = distance(&s, &m);
        prop_assume!(d > 0.05 && d * 16_000.0 / 343.0 + 41.0 < 1024.0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let e_lo = simulate_rir(&room(lo, 1024), &s, &m).unwrap().energy();
        let e_hi = simulate_rir(&room(hi, 1024), &s, &m).unwrap().energy();
        prop_assert!(e_lo <= e_hi * (1.0 + 1e-12));
    }

    #[test]
    fn simulation_is_bit_deterministic(s in inside(), m in inside()) {
        prop_assume!(distance(&s, &m) > 0.05);
        let r = room(0.15, 128);
        let a = simulate_rir(&r, &s, &m).unwrap();
        let b = simulate_rir(&r, &s, &m).unwrap();
        prop_assert!(a.taps.iter().zip(&b.taps).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
