//! Property-based invariants over the measure and dynamics layers.

use dbm_lab_core::dbm::{
    evolve_parabolic, run_dbm, shift_process, CouplingCoefficients, ParticleConfiguration,
    SdeOptions,
};
use dbm_lab_core::measures::{self, Measure1D};
use num_complex::Complex64;
use proptest::prelude::*;

fn atomic_measure() -> impl Strategy<Value = Measure1D> {
    (2usize..8)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(0.05f64..1.0, n),
            )
        })
        .prop_map(|(mut atoms, raw_w)| {
            atoms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // separate coincident atoms
            for i in 1..atoms.len() {
                if atoms[i] <= atoms[i - 1] + 1e-6 {
                    atoms[i] = atoms[i - 1] + 1e-3;
                }
            }
            let total: f64 = raw_w.iter().sum();
            let weights: Vec<f64> = raw_w.iter().map(|w| w / total).collect();
            Measure1D::atomic(atoms, weights).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Im m > 0 and |m| <= 1/eta anywhere in the upper half plane.
    #[test]
    fn transform_positivity_and_bound(mu in atomic_measure(), e in -5.0f64..5.0, eta in 1e-3f64..2.0) {
        let m = measures::stieltjes_transform(&mu, Complex64::new(e, eta)).unwrap();
        prop_assert!(m.im > 0.0);
        prop_assert!(m.norm() <= 1.0 / eta + 1e-9);
    }

    // Quantiles are monotone in k and invert the CDF at continuity points.
    #[test]
    fn quantiles_monotone_and_consistent(mu in atomic_measure(), n in 3usize..12) {
        let grid = measures::cauchy_adapted_grid(
            &match &mu { Measure1D::Atomic { atoms, .. } => atoms.clone(), _ => unreachable!() },
            0.05, 5e4, 0.05 / 60.0,
        );
        let smooth = measures::poisson_smooth(&mu, 0.05, &grid).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=n {
            let q = measures::quantile(&smooth, n, k).unwrap();
            prop_assert!(q.value >= prev);
            prev = q.value;
            let c = smooth.cdf(q.value);
            prop_assert!((c - k as f64 / n as f64).abs() <= 1e-9,
                "CDF({}) = {} vs {}", q.value, c, k as f64 / n as f64);
        }
    }

    // Poisson smoothing preserves evenness of even measures.
    #[test]
    fn smoothing_preserves_symmetry(a in 0.2f64..2.0, eta in 0.05f64..0.5) {
        let mu = Measure1D::atomic(vec![-a, a], vec![0.5, 0.5]).unwrap();
        let grid = measures::cauchy_adapted_grid(&[-a, a], eta, 1e6, eta / 50.0);
        // symmetrize the grid so evenness is testable pointwise
        let mut sym = grid.clone();
        sym.extend(grid.iter().map(|x| -x));
        sym.sort_by(|p, q| p.partial_cmp(q).unwrap());
        sym.dedup();
        let sm = measures::poisson_smooth(&mu, eta, &sym).unwrap();
        for &x in &[0.1, 0.5, a, 1.5 * a] {
            let d = (sm.density_at(x) - sm.density_at(-x)).abs();
            prop_assert!(d <= 1e-9, "asymmetry {} at {}", d, x);
        }
    }

    // Shift round trip is the identity and gaps are shift-invariant.
    #[test]
    fn shift_round_trip(upsilon in -2.0f64..2.0, seed in 0u64..50) {
        let init = ParticleConfiguration::from_positions(vec![-1.2, -0.3, 0.4, 1.7]).unwrap();
        let opts = SdeOptions { dt: 1e-3, stride: 4, seed, replica: 0 };
        let traj = run_dbm(&init, 2.0, (0.0, 0.02), &opts).unwrap();
        let back = shift_process(&shift_process(&traj, upsilon, 0.0), -upsilon, 0.0);
        for (a, b) in traj.positions.iter().zip(&back.positions) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    // The explicit parabolic step conserves the sum and contracts the range
    // for arbitrary symmetric nonnegative kernels within the stability bound.
    #[test]
    fn parabolic_sum_and_range(
        raw in proptest::collection::vec(0.0f64..3.0, 9),
        v0 in proptest::collection::vec(-1.0f64..1.0, 4),
    ) {
        let kk = 4usize;
        let mut b = vec![0.0; kk * kk];
        let mut idx = 0;
        for i in 0..kk {
            for j in i + 1..kk {
                if idx < raw.len() {
                    b[i * kk + j] = raw[idx];
                    b[j * kk + i] = raw[idx];
                    idx += 1;
                }
            }
        }
        let coeffs = CouplingCoefficients {
            times: vec![0.0, 1.0],
            size: kk,
            b: vec![b; 2],
            w: vec![vec![0.0; kk]; 2],
            f1: vec![vec![0.0; kk]; 2],
            f2: vec![vec![0.0; kk]; 2],
            eps: 0.0,
            n_total: kk,
            flagged: vec![],
            negative_w: 0,
        };
        let rate = coeffs.max_rate().max(1e-9);
        let dt = 0.4 / rate;
        let path = evolve_parabolic(&coeffs, &v0, None, (0.0, (20.0 * dt).min(1.0)), dt).unwrap();
        let sum0: f64 = v0.iter().sum();
        let mn0 = v0.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx0 = v0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in &path.vectors {
            let s: f64 = v.iter().sum();
            prop_assert!((s - sum0).abs() <= 1e-12);
            for &x in v {
                prop_assert!(x >= mn0 - 1e-12 && x <= mx0 + 1e-12);
            }
        }
    }

    // Measure JSON wire format round-trips.
    #[test]
    fn measure_serde_round_trip(mu in atomic_measure()) {
        let s = serde_json::to_string(&mu).unwrap();
        let back: Measure1D = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(mu, back);
    }
}
