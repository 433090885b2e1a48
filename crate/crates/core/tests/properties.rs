//! Property tests for the pathwise invariants.

use maxloc::argmax::{pathwise_bounds_check, scan_max, scan_slice, scan_tilted};
use maxloc::cli::{CheckConfig, Config, CovParams, ExperimentConfig};
use maxloc::identity::{check_cov_identity, check_nondiff_flat, NondiffParams};
use maxloc::process::{apply_tilt, refine_path, sample_bm, sample_two_sided_bm};
use maxloc::{DriftFn, ProcessSpec, RunSettings, SeedSpec, TiltSpec, TimeGrid};
use proptest::prelude::*;

fn tilt_value() -> impl Strategy<Value = f64> {
    prop_oneof![-2.0..-1e-4, 1e-4..2.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scan_finds_first_and_last_maximizer(v in prop::collection::vec(-3i32..3, 1..60)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let (m, first, last) = scan_slice(v.iter().copied());
        let naive = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(m, naive);
        prop_assert_eq!(first, v.iter().position(|&x| x == naive).unwrap());
        prop_assert_eq!(last, v.iter().rposition(|&x| x == naive).unwrap());
    }

    #[test]
    fn linear_tilt_adds_a_times_z(seed in 0u64..1000, a in tilt_value()) {
        let path = sample_two_sided_bm(1.5, 256, &SeedSpec::new(1, seed)).unwrap();
        let tilted = apply_tilt(path.clone(), &TiltSpec::linear(a)).unwrap();
        for (i, (x, y)) in path.values().iter().zip(tilted.values()).enumerate() {
            let z = path.grid().node(i);
            prop_assert!((y - (x + a * z)).abs() <= 1e-12 * (1.0 + x.abs() + (a * z).abs()));
        }
    }

    #[test]
    fn argmax_is_monotone_in_tilt(seed in 0u64..1000, a in tilt_value(), b in tilt_value()) {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(a < b);
        let path = sample_bm(TimeGrid::new(0.0, 1.0, 512).unwrap(), &SeedSpec::new(2, seed)).unwrap();
        let shape = path.grid().nodes();
        let lo = scan_tilted(&path, &shape, a);
        let hi = scan_tilted(&path, &shape, b);
        prop_assert!(lo.z2 <= hi.z1, "Z2 at {a} = {} > Z1 at {b} = {}", lo.z2, hi.z1);
    }

    #[test]
    fn pathwise_bounds_never_fail(seed in 0u64..10_000, a in tilt_value()) {
        let path = sample_bm(TimeGrid::new(0.0, 2.0, 300).unwrap(), &SeedSpec::new(3, seed)).unwrap();
        let r = pathwise_bounds_check(&path, a).unwrap();
        prop_assert!(r.passed(), "{:?}", r.violations);
    }

    #[test]
    fn refinement_keeps_coarse_nodes(seed in 0u64..1000, levels in 1u32..4) {
        let path = sample_two_sided_bm(1.0, 64, &SeedSpec::new(4, seed)).unwrap();
        let fine = refine_path(&path, levels, &SeedSpec::new(4, seed));
        prop_assert_eq!(fine.grid().n_steps(), 64 << levels);
        for (i, v) in path.values().iter().enumerate() {
            prop_assert_eq!(fine.values()[i << levels].to_bits(), v.to_bits());
        }
        // refining can only raise the maximum
        prop_assert!(scan_max(&fine).max >= scan_max(&path).max);
    }

    #[test]
    fn flat_path_kink_for_any_length(t in 0.1f64..10.0) {
        let r = check_nondiff_flat(
            &NondiffParams { t_end: t, a_sequence: vec![0.1, 0.01], n_steps: 64 },
            &RunSettings::new(1, 0),
        )
        .unwrap();
        prop_assert!(r.pass);
        prop_assert!((r.lhs.mean - t).abs() <= 1e-12 * t, "right {} vs {t}", r.lhs.mean);
        prop_assert!(r.rhs.mean.abs() <= 1e-12, "left {}", r.rhs.mean);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pass_matches_z_and_threshold(seed in 0u64..1000, threshold in 0.05f64..4.0, slope in -3.0f64..3.0) {
        let spec = ProcessSpec::brownian_with_drift(1.0, DriftFn::Linear { slope }, 128);
        let rs = RunSettings::new(400, seed).with_threshold(threshold);
        let r = check_cov_identity(&spec, &rs).unwrap();
        prop_assert_eq!(r.threshold, threshold);
        prop_assert_eq!(r.pass, r.diff.abs() <= threshold * r.diff_stderr + r.bias_budget);
        let z = r.z_score.unwrap();
        prop_assert!((z - r.diff / r.diff_stderr).abs() <= 1e-12 * (1.0 + z.abs()));
    }

    #[test]
    fn config_round_trips(n_rep in 1usize..100_000, seed in any::<u64>(), t in 0.1f64..5.0,
                          thr in 0.5f64..6.0, emit in any::<bool>()) {
        let config = Config {
            output_dir: None,
            experiments: vec![ExperimentConfig {
                name: "exp_1".into(),
                check: CheckConfig::CheckCovIdentity(CovParams {
                    process: ProcessSpec::brownian(t, 256),
                }),
                n_rep,
                seed,
                z_threshold: thr,
                emit_replicates: emit,
            }],
        };
        let text = serde_json::to_string_pretty(&config).unwrap();
        prop_assert_eq!(Config::from_json(&text).unwrap(), config);
    }
}
