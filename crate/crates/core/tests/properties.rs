//! Invariants of the simulator and the preprocessing chain.

use hydroleak::signal::{resample, segment_cycles, valve_runs};
use hydroleak::sim::{extension_summary, run_cycles, simulate_class, step, Valve, STROKE_BAND};
use hydroleak::{ActuatorParams, LeakCalibration, LeakClass, SimConfig, SimState};
use proptest::prelude::*;

fn config(seed: u64, n_cycles: usize, noise_std: f64) -> SimConfig {
    SimConfig {
        seed,
        n_cycles,
        noise_std,
        ..SimConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pressures_stay_within_relief(
        seed in any::<u64>(),
        class in 0usize..3,
        supply in 3.0e6f64..6.0e6,
        noise in 0.0f64..2.0e5,
    ) {
        let params = ActuatorParams {
            supply_pressure: supply,
            relief_pressure: supply,
            ..ActuatorParams::default()
        };
        let class = LeakClass::from_index(class).unwrap();
        let trace = simulate_class(&params, &LeakCalibration::default(), &config(seed, 1, noise), class).unwrap();
        for (&p1, &p2) in trace.p1.iter().zip(&trace.p2) {
            prop_assert!((0.0..=supply).contains(&p1), "p1 = {p1}");
            prop_assert!((0.0..=supply).contains(&p2), "p2 = {p2}");
        }
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), class in 0usize..3) {
        let class = LeakClass::from_index(class).unwrap();
        let run = || simulate_class(&ActuatorParams::default(), &LeakCalibration::default(), &config(seed, 1, 2e4), class).unwrap();
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn segments_tile_the_valve_runs(seed in any::<u64>(), cycles in 1usize..4) {
        let trace = run_cycles(&ActuatorParams::default(), &config(seed, cycles, 2e4), LeakClass::NoLeak).unwrap();
        let runs = valve_runs(&trace.u);
        prop_assert_eq!(runs.first().unwrap().start, 0);
        prop_assert_eq!(runs.last().unwrap().end, trace.len());
        for pair in runs.windows(2) {
            prop_assert_eq!(pair[0].end, pair[1].start);
            prop_assert_ne!(trace.u[pair[0].start], trace.u[pair[1].start]);
        }
        let segments = segment_cycles(&trace, 1);
        prop_assert_eq!(segments.len(), 2 * cycles + 1);
        for (seg, run) in segments.iter().zip(&runs) {
            prop_assert_eq!(seg.start_index, run.start);
            prop_assert_eq!(seg.end_index, run.end);
            prop_assert_eq!(&seg.samples[..], &trace.p1[run.clone()]);
        }
        // Every full stroke survives the default minimum length; the lone
        // sample after the last reversal does not.
        prop_assert_eq!(segment_cycles(&trace, 50).len(), 2 * cycles);
    }

    #[test]
    fn resampling_is_exact_on_affine_data(
        offset in -1.0e6f64..1.0e6,
        slope in -1.0e3f64..1.0e3,
        n in 2usize..3000,
        len in 2usize..400,
    ) {
        let values: Vec<f64> = (0..n).map(|i| offset + slope * i as f64).collect();
        let out = resample(&values, len).unwrap();
        prop_assert_eq!(out.len(), len);
        prop_assert_eq!(out[0], values[0]);
        prop_assert_eq!(out[len - 1], values[n - 1]);
        let scale = (n - 1) as f64 / (len - 1) as f64;
        for (k, &y) in out.iter().enumerate() {
            let want = offset + slope * k as f64 * scale;
            prop_assert!((y - want).abs() <= 1e-9 * (offset.abs() + slope.abs() * n as f64 + 1.0));
        }
    }

    #[test]
    fn resampling_stays_within_input_range(
        values in prop::collection::vec(-1.0e6f64..1.0e6, 2..500),
        len in 2usize..300,
    ) {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for y in resample(&values, len).unwrap() {
            prop_assert!(y >= lo && y <= hi);
        }
    }
}

/// With no noise and no leak, one integration step changes a chamber
/// pressure by at most beta * Q_max * dt / dead_volume.
#[test]
fn pressure_steps_are_bounded() {
    let params = ActuatorParams::default();
    let dt = SimConfig::default().dt;
    let bound = params.bulk_modulus * params.max_valve_flow() * dt / params.dead_volume;
    let upper = params.stroke * (1.0 - STROKE_BAND);
    let lower = params.stroke * STROKE_BAND;
    let mut state = SimState::at_rest();
    let mut worst: f64 = 0.0;
    let mut reversals = 0;
    while reversals < 4 {
        let next = step(&state, &params, state.u, dt).unwrap();
        worst = worst
            .max((next.p1 - state.p1).abs())
            .max((next.p2 - state.p2).abs());
        state = next;
        let reverse = match state.u {
            Valve::Extend => state.x >= upper,
            Valve::Retract => state.x <= lower,
        };
        if reverse {
            state.u = state.u.reversed();
            reversals += 1;
        }
    }
    // The first step from rest hits the bound exactly, up to rounding.
    assert!(
        worst <= bound * (1.0 + 1e-12),
        "largest step {worst:e} Pa exceeds {bound:e} Pa"
    );
}

/// Mean extension pressure falls and mean extension speed rises with the
/// leak class, for every seed.
#[test]
fn leak_orders_pressure_and_speed() {
    for seed in 0..3 {
        let summaries: Vec<_> = LeakClass::ALL
            .iter()
            .map(|&c| {
                let trace = simulate_class(
                    &ActuatorParams::default(),
                    &LeakCalibration::default(),
                    &config(seed, 3, 2e4),
                    c,
                )
                .unwrap();
                extension_summary(&trace).unwrap()
            })
            .collect();
        for pair in summaries.windows(2) {
            assert!(
                pair[0].mean_p1 > pair[1].mean_p1,
                "seed {seed}: {summaries:?}"
            );
            assert!(
                pair[0].mean_speed < pair[1].mean_speed,
                "seed {seed}: {summaries:?}"
            );
        }
    }
}
