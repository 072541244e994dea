use proptest::prelude::*;

use rsrf_core::curvature::{curvature_at, pic1_frame_oracle, SchoutenPair};
use rsrf_core::flow::{init_state, load_checkpoint, write_checkpoint, OuterBc};
use rsrf_core::geometry::volume_ratio_lower_bound;
use rsrf_core::harness::ExperimentConfig;
use rsrf_core::par::{self, Exec};
use rsrf_core::ProfileSpec;

fn ell(f: f64, d1: f64, d2: f64, n: usize) -> f64 {
    (-curvature_at(1.0, f, d1, d2, n).unwrap().min_ricci()).max(0.0)
}

const LIBRARY: [&str; 5] = [
    r#"{"kind": "cone", "params": {"slope": 0.5}, "domain_end": 4, "fiber_dim": 2}"#,
    r#"{"kind": "sphere_cap", "domain_end": 1.5, "fiber_dim": 2}"#,
    r#"{"kind": "cylinder", "params": {"radius": 1}, "domain_end": 4, "fiber_dim": 2}"#,
    r#"{"kind": "cap_cylinder", "params": {"base": {"kind": "cone", "params": {"slope": 0.5}}, "k": 5, "eps": 1},
        "domain_end": 8, "fiber_dim": 2}"#,
    r#"{"kind": "smooth_cone", "params": {"base": {"kind": "cone", "params": {"slope": 0.5}}, "k": 10, "v": 0.5,
        "L": 1.0}, "domain_end": 4, "fiber_dim": 2}"#,
];

proptest! {
    #[test]
    fn pinch_quantity_is_lipschitz(
        which in 0usize..LIBRARY.len(),
        u in 0.0f64..1.0,
        eps in -1e-8f64..1e-8,
        freq in 0.0f64..1.0,
    ) {
        // Perturb the profile by eps·sin(freq·s), which moves the 2-jet by at most |eps|.
        let profile = ProfileSpec::from_json(LIBRARY[which]).unwrap().build().unwrap();
        let s = 1.0 + u * (profile.domain_end() - 1.0);
        let j = profile.jet(s);
        let (sn, cs) = (freq * s).sin_cos();
        let a = ell(j.f, j.d1, j.d2, 2);
        let b = ell(j.f + eps * sn, j.d1 + eps * freq * cs, j.d2 - eps * freq * freq * sn, 2);
        prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }

    #[test]
    fn cones_are_radially_flat(slope in 0.05f64..2.0, s in 0.01f64..10.0, n in 2usize..7) {
        let c = curvature_at(s, slope * s, slope, 0.0, n).unwrap();
        prop_assert_eq!(c.k, 0.0);
        let l = (1.0 - slope * slope) / (slope * slope * s * s);
        prop_assert!((c.l - l).abs() <= 1e-12 * l.abs().max(1.0));
        prop_assert!((c.scal - (n * (n - 1)) as f64 * c.l).abs() <= 1e-10 * c.scal.abs().max(1.0));
    }

    #[test]
    fn frame_minimum_matches_the_two_conditions(a_r in -2.0f64..2.0, a_t in -2.0f64..2.0) {
        let pair = SchoutenPair { a_radial: a_r, a_spherical: a_t };
        let brute = pic1_frame_oracle(pair, 40);
        let exact = (4.0 * a_t).min(2.0 * (a_r + a_t));
        prop_assert!((brute - exact).abs() <= 1e-3 + 1e-12, "{brute} vs {exact}");
    }

    #[test]
    fn volume_bound_grows_with_delta(d in 0.01f64..1.0, bump in 0.0f64..0.5, n in 2usize..6) {
        let lo = volume_ratio_lower_bound(d, n).unwrap();
        let hi = volume_ratio_lower_bound(d + bump, n).unwrap();
        prop_assert!(lo.v <= hi.v);
        prop_assert!(lo.v > 0.0);
    }

    #[test]
    fn schedules_agree(values in prop::collection::vec(-1e3f64..1e3, 1..400)) {
        let f = |i: usize| values[i];
        prop_assert_eq!(par::argmin(Exec::Auto, values.len(), f), par::argmin(Exec::Sequential, values.len(), f));
        prop_assert_eq!(par::argmax(Exec::Auto, values.len(), f), par::argmax(Exec::Sequential, values.len(), f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoints_reload_bit_for_bit(slope in 0.1f64..1.0, cells in 64usize..200, x_end in 1.0f64..4.0) {
        let spec = format!(r#"{{"kind": "cone", "params": {{"slope": {slope}}}, "domain_end": 4, "fiber_dim": 2}}"#);
        let profile = ProfileSpec::from_json(&spec).unwrap().build().unwrap();
        let state = init_state(&profile, 2, cells, x_end, OuterBc::LinearSlope { slope }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        write_checkpoint(&path, &state).unwrap();
        let back = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back.f, state.f);
        prop_assert_eq!(back.sigma, state.sigma);
        prop_assert_eq!(back.material, state.material);
        prop_assert_eq!(back.h.to_bits(), state.h.to_bits());
    }

    #[test]
    fn configs_round_trip(
        name in "[a-z][a-z0-9_]{0,12}",
        cfl in 0.01f64..0.2,
        t_end in 1e-4f64..10.0,
        cadence in 1u64..100,
        cells in 64usize..4096,
        slope in 0.1f64..0.9,
        tail_guard in any::<bool>(),
    ) {
        let text = format!(
            r#"{{"name": "{name}", "n": 2,
                "profile_spec": {{"kind": "cone", "params": {{"slope": {slope}}}, "domain_end": 4}},
                "grid": {{"N": {cells}, "X": 4}},
                "flow": {{"cfl": {cfl}, "t_end": {t_end}, "cadence": {cadence}, "tail_guard": {tail_guard},
                          "bc_outer": {{"kind": "linear_slope", "slope": {slope}}}}}}}"#
        );
        let config = ExperimentConfig::from_json(&text).unwrap();
        let again = ExperimentConfig::from_json(&config.to_json()).unwrap();
        prop_assert_eq!(&again, &config);
        prop_assert_eq!(again.to_json(), config.to_json());
        prop_assert_eq!(config.flow.cfl, cfl);
        prop_assert_eq!(config.flow.t_end, t_end);
    }
}
