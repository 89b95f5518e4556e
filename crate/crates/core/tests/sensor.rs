use proptest::prelude::*;
use softschema::sensor::{init_layout, play_operator, SensorParams, SensorState, SENSOR_COUNT};

const SEGMENTS: usize = 7;

fn quiet() -> SensorParams {
    SensorParams {
        drift_sigma: 0.0,
        noise_sigma: 0.0,
        ..Default::default()
    }
}

fn play_sequence(strains: &[Vec<f64>], dt: f64, seed: u64) -> Vec<[f64; SENSOR_COUNT]> {
    let layout = init_layout(seed, SEGMENTS, &quiet());
    let mut st = SensorState::new(seed);
    strains
        .iter()
        .map(|s| {
            let (r, next) = layout.read(&st, s, dt).unwrap();
            st = next;
            r
        })
        .collect()
}

proptest! {
    #[test]
    fn deadband_holds_output(y0 in -1.0f64..1.0, w in 0.0f64..0.3, offsets in prop::collection::vec(-1.0f64..=1.0, 1..40)) {
        let mut y = y0;
        for o in offsets {
            y = play_operator(y0 + o * w, y, w);
            prop_assert_eq!(y, y0);
        }
    }

    #[test]
    fn readings_ignore_sample_interval(
        path in prop::collection::vec(prop::collection::vec(0.0f64..0.4, SEGMENTS), 1..30),
        dt_a in 0.001f64..0.5,
        dt_b in 0.001f64..0.5,
        seed in 0u64..50,
    ) {
        prop_assert_eq!(play_sequence(&path, dt_a, seed), play_sequence(&path, dt_b, seed));
    }

    #[test]
    fn quiet_read_is_pure(strains in prop::collection::vec(0.0f64..1.0, SEGMENTS), seed in 0u64..50, rng_seed in any::<u64>()) {
        let layout = init_layout(seed, SEGMENTS, &quiet());
        let mut a = SensorState::new(rng_seed);
        let mut b = SensorState::new(rng_seed ^ 0xdead);
        a.play_memory = [0.1; SENSOR_COUNT];
        b.play_memory = [0.1; SENSOR_COUNT];
        prop_assert_eq!(layout.read(&a, &strains, 0.03).unwrap().0, layout.read(&b, &strains, 0.03).unwrap().0);
    }

    #[test]
    fn memory_stays_within_band_of_last_input(path in prop::collection::vec(prop::collection::vec(0.0f64..0.4, SEGMENTS), 1..30)) {
        let layout = init_layout(4, SEGMENTS, &SensorParams::default());
        let mut st = SensorState::new(4);
        for s in &path {
            let (_, next) = layout.read(&st, s, 0.03).unwrap();
            st = next;
            let agg = layout.aggregate(s).unwrap();
            for (i, spec) in layout.sensors.iter().enumerate() {
                prop_assert!((st.play_memory[i] - agg[i]).abs() <= spec.play_width + 1e-12);
            }
        }
    }
}

#[test]
fn press_and_release_leaves_a_trace() {
    let layout = init_layout(0, SEGMENTS, &quiet());
    let max_w = layout.sensors.iter().map(|s| s.play_width).fold(0.0, f64::max);
    let amp = 2.5 * max_w;
    let mut path: Vec<Vec<f64>> = (0..=20).map(|k| vec![amp * k as f64 / 20.0; SEGMENTS]).collect();
    path.extend((0..=20).rev().map(|k| vec![amp * k as f64 / 20.0; SEGMENTS]));
    let st0 = SensorState::new(0);
    let mut st = st0.clone();
    for s in &path {
        st = layout.read(&st, s, 0.03).unwrap().1;
    }
    for i in 0..SENSOR_COUNT {
        assert!(st.play_memory[i] > st0.play_memory[i], "sensor {i} forgot the press");
    }
}

#[test]
fn drift_and_noise_perturb_readings() {
    let layout = init_layout(0, SEGMENTS, &SensorParams::default());
    let mut st = SensorState::new(9);
    let zeros = vec![0.0; SEGMENTS];
    let mut readings = Vec::new();
    for _ in 0..100 {
        let (r, next) = layout.read(&st, &zeros, 1.0 / 33.0).unwrap();
        st = next;
        readings.push(r[0]);
    }
    assert!(readings.windows(2).any(|w| w[0] != w[1]));
}
