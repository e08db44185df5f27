use std::sync::Arc;

use proptest::prelude::*;
use volterra_lab::kernels::KernelSpec;
use volterra_lab::paths::{exact_sample, kernel_discretized_sample, PathEnsemble, TimeGrid};
use volterra_lab::sde::{euler_solve, Drift, DriftSpec};

fn kernel(which: usize, h: f64) -> KernelSpec {
    match which {
        0 => KernelSpec::brownian(1.0),
        1 => KernelSpec::riemann_liouville(h, 1.0),
        2 => KernelSpec::ornstein_uhlenbeck(0.5 + 2.0 * h, 1.0),
        3 => KernelSpec::fbm_simple(0.5 + 0.5 * h, 1.0),
        _ => KernelSpec::fbm_general(h, 1.0),
    }
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn covariance_is_symmetric_and_cauchy_schwarz(
        which in 0usize..5,
        h in 0.2f64..0.85,
        t in 0.05f64..1.0,
        s in 0.05f64..1.0,
    ) {
        let k = kernel(which, h);
        let ts = k.covariance(t, s).unwrap();
        let st = k.covariance(s, t).unwrap();
        prop_assert!((ts - st).abs() <= 1e-10 * ts.abs().max(1e-12));
        let (vt, vs) = (k.covariance(t, t).unwrap(), k.covariance(s, s).unwrap());
        prop_assert!(ts * ts <= vt * vs * (1.0 + 1e-9));
    }

    #[test]
    fn tail_variance_is_monotone_and_bounded(
        which in 0usize..5,
        h in 0.2f64..0.85,
        t in 0.1f64..1.0,
        f in 0.05f64..0.95,
    ) {
        let k = kernel(which, h);
        let small = k.tail_variance(t, f * f * t).unwrap();
        let large = k.tail_variance(t, f * t).unwrap();
        let var = k.covariance(t, t).unwrap();
        prop_assert!(small > 0.0);
        prop_assert!(small <= large * (1.0 + 1e-10));
        prop_assert!(large <= var * (1.0 + 1e-10));
    }

    #[test]
    fn zero_drift_solution_is_shifted_noise(
        which in 0usize..5,
        h in 0.2f64..0.85,
        x0 in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let noise = Arc::new(kernel_discretized_sample(&kernel(which, h), grid, 2, 4, seed).unwrap());
        let drift = Drift::new(DriftSpec::zero(), 2).unwrap();
        let sol = euler_solve(&drift, noise.clone(), &[x0, -x0]).unwrap();
        for p in 0..4 {
            for i in 0..=16 {
                for c in 0..2 {
                    let start = if c == 0 { x0 } else { -x0 };
                    prop_assert_eq!(sol.value(p, i, c), start + noise.value(p, i, c));
                }
            }
        }
    }
}

#[test]
fn sampling_depends_only_on_the_seed() {
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let k = kernel(4, 0.3);
    let a = exact_sample(&k, grid, 1, 50, 11).unwrap();
    let b = exact_sample(&k, grid, 1, 50, 11).unwrap();
    let c = exact_sample(&k, grid, 1, 50, 12).unwrap();
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
    assert!(a.values.iter().step_by(33).all(|&x| x == 0.0));
}

#[test]
fn binary_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("noise.bin");
    let grid = TimeGrid::new(0.5, 20).unwrap();
    let ens = kernel_discretized_sample(&kernel(1, 0.7), grid, 3, 7, 5).unwrap();
    ens.write_binary(&file).unwrap();
    let back = PathEnsemble::read_binary(&file).unwrap();
    assert_eq!(back.values, ens.values);
    assert_eq!((back.dim, back.n_paths, back.seed), (3, 7, 5));
    assert_eq!(back.grid.n_steps, 20);
}
