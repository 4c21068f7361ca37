//! Randomized invariant checks for the pieces with cheap oracles: distance
//! metrics, designs, the scheduler, and the closed-form posterior moments.

use nalgebra::DMatrix;
use proptest::prelude::*;

use eivar::design::{mad, make_initial_design};
use eivar::emulator::EmulatorPrediction;
use eivar::posterior::{mvn_logpdf, post_mean_var, ObsModel};
use eivar::scheduler::{idle_time, makespan, simulate_async, simulate_sync, DurationModel};
use eivar::Bounds;

proptest! {
    #[test]
    fn mad_is_a_nonnegative_zero_diagnosing_metric(
        a in prop::collection::vec(-1e3f64..1e3, 1..40),
        shift in -10.0f64..10.0,
    ) {
        prop_assert_eq!(mad(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let d = mad(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - shift.abs()).abs() < 1e-9);
        // symmetry
        prop_assert_eq!(d.to_bits(), mad(&b, &a).unwrap().to_bits());
    }

    #[test]
    fn initial_design_is_a_latin_hypercube_in_bounds(
        n in 2usize..30,
        p in 1usize..5,
        seed in any::<u64>(),
        width in 0.5f64..20.0,
    ) {
        let lower: Vec<f64> = (0..p).map(|j| -1.0 - j as f64).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + width).collect();
        let bounds = Bounds::new(lower.clone(), upper.clone()).unwrap();
        let design = make_initial_design(&bounds, n, seed);
        prop_assert_eq!(design.len(), n);
        for point in &design {
            for j in 0..p {
                prop_assert!(point[j] >= lower[j] && point[j] <= upper[j]);
            }
        }
        // one point per stratum in every coordinate
        for j in 0..p {
            let mut strata: Vec<usize> = design
                .iter()
                .map(|t| {
                    let u = (t[j] - lower[j]) / width;
                    ((u * n as f64) as usize).min(n - 1)
                })
                .collect();
            strata.sort_unstable();
            prop_assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
        // same seed, same design
        prop_assert_eq!(design, make_initial_design(&bounds, n, seed));
    }

    #[test]
    fn schedules_conserve_work_and_never_overlap(
        durations in prop::collection::vec(0.05f64..8.0, 1..40),
        k in 1usize..6,
        c in 1usize..4,
        a in 1usize..4,
    ) {
        let total: f64 = durations.iter().sum();
        for trace in [
            simulate_sync(k, &durations, k),
            simulate_async(k, &durations, c, a),
        ] {
            prop_assert_eq!(trace.len(), durations.len());
            let busy: f64 = trace.iter().map(|j| j.end_time - j.start_time).sum();
            prop_assert!((busy - total).abs() < 1e-9);
            for job in &trace {
                prop_assert!(job.start_time >= job.submit_time - 1e-12);
                prop_assert!(job.worker_id < k);
            }
            for w in 0..k {
                let mut spans: Vec<(f64, f64)> = trace
                    .iter()
                    .filter(|j| j.worker_id == w)
                    .map(|j| (j.start_time, j.end_time))
                    .collect();
                spans.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
                for pair in spans.windows(2) {
                    prop_assert!(pair[1].0 >= pair[0].1 - 1e-9);
                }
            }
            prop_assert!(idle_time(&trace, k) >= -1e-9);
            prop_assert!(makespan(&trace) * k as f64 + 1e-9 >= total);
        }
    }

    #[test]
    fn duration_samples_are_deterministic_and_positive(
        seed in any::<u64>(),
        job in 0usize..1000,
        mu in -1.0f64..1.0,
        sigma in 0.05f64..1.5,
    ) {
        let model = DurationModel::Lognormal { mu, sigma };
        let d = model.sample(seed, job);
        prop_assert!(d > 0.0 && d.is_finite());
        prop_assert_eq!(d.to_bits(), model.sample(seed, job).to_bits());
    }

    #[test]
    fn posterior_moments_are_finite_and_nonnegative(
        d in 1usize..4,
        seed in any::<u64>(),
        rho in 0.01f64..5.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(d, d) * 0.2;
        let b = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let s = &b * b.transpose() * 0.3;
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let obs = ObsModel::new(y.clone(), sigma.clone()).unwrap();
        let pred = EmulatorPrediction {
            mean: mu.clone(),
            latent_means: vec![],
            latent_vars: vec![],
            cov: s,
        };
        let m = post_mean_var(&pred, &obs, rho).unwrap();
        prop_assert!(m.mean.is_finite() && m.mean >= 0.0);
        prop_assert!(m.var.is_finite() && m.var >= 0.0);
        // the mean never exceeds the density ceiling at zero residual
        let ceiling = mvn_logpdf(&y, &y, &sigma).unwrap().exp() * rho;
        prop_assert!(m.mean <= ceiling * (1.0 + 1e-9));
    }
}
