use approx::assert_abs_diff_eq;
use physchan::physics::{
    aggregate, hvac_step, illuminance_at, relative_humidity, sensor_read, sound_at, Channel, HeatField, PhysicsError, ReadingKind,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn sound_loses_six_db_per_doubling(level in 20.0..100.0f64, x in 0.1..10.0f64) {
        let near = sound_at(level, x).unwrap();
        let far = sound_at(level, 2.0 * x).unwrap();
        prop_assert!((near - far - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn illuminance_is_inverse_square(lm in 1.0..5000.0f64, x in 0.1..10.0f64) {
        let near = illuminance_at(lm, x).unwrap();
        let far = illuminance_at(lm, 2.0 * x).unwrap();
        prop_assert!((near / far - 4.0).abs() < 1e-9);
    }

    #[test]
    fn sound_sum_bounded_by_max(levels in prop::collection::vec(20.0..90.0f64, 1..8)) {
        let total = aggregate(Channel::Sound, &levels).unwrap();
        let max = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(total >= max - 1e-9);
        prop_assert!(total <= max + 10.0 * (levels.len() as f64).log10() + 1e-9);
        let mut rev = levels.clone();
        rev.reverse();
        prop_assert!((aggregate(Channel::Sound, &rev).unwrap() - total).abs() < 1e-9);
    }

    #[test]
    fn illuminance_adds_linearly(levels in prop::collection::vec(0.0..500.0f64, 1..8)) {
        let total = aggregate(Channel::Illuminance, &levels).unwrap();
        prop_assert!((total - levels.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn heat_field_obeys_maximum_principle(
        t0 in 50.0..90.0f64,
        src in 60.0..400.0f64,
        steps in 1usize..2000,
        frac in 0.05..1.0f64,
    ) {
        let mut f = HeatField::new(2.0, 0.25, 2.2e-5, t0, src).unwrap();
        let dt = frac * f.max_stable_dt();
        for _ in 0..steps {
            f.step(dt).unwrap();
        }
        let (lo, hi) = (t0.min(src), t0.max(src));
        for v in &f.grid {
            prop_assert!(*v >= lo - 1e-9 && *v <= hi + 1e-9);
        }
        if src >= t0 {
            prop_assert!(f.grid.windows(2).all(|w| w[0] >= w[1] - 1e-9));
        }
    }

    #[test]
    fn hvac_never_overshoots(t in 60.0..80.0f64, rate in -3.0..3.0f64, sp in 60.0..80.0f64, dt in 0.0..5.0f64) {
        let next = hvac_step(t, rate, true, dt, Some(sp));
        if rate > 0.0 && t <= sp {
            prop_assert!(next <= sp + 1e-12);
        }
        if rate < 0.0 && t >= sp {
            prop_assert!(next >= sp - 1e-12);
        }
        prop_assert_eq!(hvac_step(t, rate, false, dt, Some(sp)), t);
    }

    #[test]
    fn relative_humidity_is_a_percentage(w in -5.0..100.0f64, ws in 0.1..50.0f64) {
        let rh = relative_humidity(w, ws).unwrap();
        prop_assert!((0.0..=100.0).contains(&rh));
    }

    #[test]
    fn numeric_readings_quantise_to_sensitivity(v in 0.0..120.0f64, th in 0.5..5.0f64, base in 40.0..80.0f64) {
        let r = sensor_read(v, th, ReadingKind::Numeric, base).value();
        let k = (r - base) / th;
        prop_assert!((k - k.round()).abs() < 1e-6);
        prop_assert!((r - v).abs() < th + 1e-9);
        prop_assert!((r - base).abs() <= (v - base).abs() + 1e-9);
    }
}

#[test]
fn unstable_step_is_rejected() {
    let mut f = HeatField::new(2.0, 0.25, 2.2e-5, 70.0, 104.0).unwrap();
    let dt = f.max_stable_dt() * 1.01;
    assert!(matches!(f.step(dt), Err(PhysicsError::Cfl { .. })));
}

#[test]
fn boolean_reading_is_inclusive_threshold() {
    assert_eq!(sensor_read(55.0, 55.0, ReadingKind::Boolean, 30.0).value(), 1.0);
    assert_eq!(sensor_read(54.99, 55.0, ReadingKind::Boolean, 30.0).value(), 0.0);
}

#[test]
fn reference_sound_levels() {
    // Reference source levels and distances, 20·log10 spreading.
    assert_abs_diff_eq!(sound_at(58.0, 0.8).unwrap(), 59.94, epsilon = 0.005);
    assert_abs_diff_eq!(sound_at(62.0, 2.0).unwrap(), 55.98, epsilon = 0.005);
    assert_abs_diff_eq!(sound_at(62.0, 3.5).unwrap(), 51.12, epsilon = 0.005);
}
