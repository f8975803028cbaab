use faer::c64;
use fiber_dpg::basis::{gauss_rule, tensor_tabulation, tensor_weights, Family, FaceOrientation, Op, OrderTriple, Space, TableCache, Tabulation};
use fiber_dpg::config::RunConfig;
use fiber_dpg::oracle::{integrate_power_odes, PairParams};
use fiber_dpg::postprocess::PowerTrace;
use fiber_dpg::sumfact::{hermitian_defect, integrate_bilinear_sumfact, CoefficientTensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orientation_maps_invert(code in 0u8..8, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let o = FaceOrientation::from_code(code);
        let back = o.local_to_canonical(o.canonical_to_local([u, v]));
        prop_assert!((back[0] - u).abs() < 1e-15 && (back[1] - v).abs() < 1e-15);
        prop_assert_eq!(FaceOrientation::from_code(o.code()), o);
    }

    #[test]
    fn photon_flux_survives_any_coupling(
        coupling in 1e-4f64..0.5,
        ps in 0.01f64..10.0,
        pp in 0.01f64..10.0,
        ratio in 1.0f64..1.2,
    ) {
        let p = PairParams { omega_s: 10.0, omega_p: 10.0 * ratio, coupling };
        let run = integrate_power_odes(p, ps, pp, 5.0, 100).unwrap();
        prop_assert!(run.photon_flux_drift() < 1e-12);
        prop_assert!(run.signal.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(run.pump.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn power_trace_csv_round_trips(rows in proptest::collection::vec((0.0f64..100.0, 0.0f64..1e4, 0.0f64..1e4), 0..20)) {
        let t = PowerTrace {
            z: rows.iter().map(|r| r.0).collect(),
            signal: rows.iter().map(|r| r.1).collect(),
            pump: rows.iter().map(|r| r.2).collect(),
        };
        prop_assert_eq!(PowerTrace::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn config_round_trips(p in 1usize..=8, wl in 1.0f64..20.0, layers in 2usize..100, kappa in 0.0f64..1e-2) {
        let mut c = RunConfig::default();
        c.orders.p = p;
        c.mesh.wavelengths = Some(wl);
        c.mesh.n_layers = Some(layers);
        c.nonlinear.kappa = Some(kappa);
        prop_assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn hermitian_coefficients_give_hermitian_gram(p in 1usize..4, seed in 0u64..1000) {
        let n = p + 2;
        let r = gauss_rule(n);
        let mut cache = TableCache::new([&r.points, &r.points, &r.points]);
        let w = tensor_weights([&r.weights, &r.weights, &r.weights]);
        let fam = Family::new(Space::Q, OrderTriple::iso(p));
        let t = Tabulation::Tensor(tensor_tabulation(&fam, Op::Derivative, &mut cache).unwrap());
        let s = seed as f64;
        let c = CoefficientTensor::from_fn([n; 3], 3, 3, |q, a, b| {
            let x = (q as f64 + s).sin();
            match a.cmp(&b) {
                std::cmp::Ordering::Equal => c64::new(2.0 + x, 0.0),
                std::cmp::Ordering::Less => c64::new(0.3 * x, 0.1 * (a + b) as f64),
                std::cmp::Ordering::Greater => c64::new(0.3 * x, -0.1 * (a + b) as f64),
            }
        });
        let m = integrate_bilinear_sumfact(&t, &t, &c, &w).unwrap();
        prop_assert!(hermitian_defect(m.as_ref()) < 1e-13);
    }
}
