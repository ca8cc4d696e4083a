use aqst::design::{information_gain, DesignClass, OptimizerParams};
use aqst::harness::{fit_power_law, spread};
use aqst::measurements::{angles_for_state, canonical_angle, compile_factorized, waveplate_state, FactorizedConfig};
use aqst::priors::{sample, sample_bures, sample_hs, PriorKind};
use aqst::quantum::{
    bures_sq, complex_normal, fidelity, fidelity_pure, haar_random_unitary, partial_trace, purify, trace_distance,
    CVector, DensityMatrix, Povm, PureState,
};
use aqst::smc::{random_step_with, ParticleEnsemble};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_state(r: &mut ChaCha8Rng) -> DensityMatrix {
    match r.random_range(0..3) {
        0 => sample_hs(4, r),
        1 => sample_bures(4, r),
        _ => DensityMatrix::from_pure(&PureState::haar(4, r)),
    }
}

fn ensemble(r: &mut ChaCha8Rng, size: usize) -> ParticleEnsemble {
    let particles = (0..size).map(|_| random_state(r)).collect();
    let w: Vec<f64> = (0..size).map(|_| r.random::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    ParticleEnsemble::new(PriorKind::Bures, particles, w.iter().map(|x| x / total).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fidelity_is_symmetric_and_sandwiches_trace_distance(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = (random_state(&mut r), random_state(&mut r));
        let f = fidelity(&a, &b).unwrap();
        prop_assert!((f - fidelity(&b, &a).unwrap()).abs() < 1e-8);
        let t = trace_distance(&a, &b).unwrap();
        prop_assert!(1.0 - f.sqrt() <= t + 1e-8);
        prop_assert!(t <= (1.0 - f).sqrt() + 1e-8);
        prop_assert!((bures_sq(&a, &b).unwrap() - 2.0 * (1.0 - f.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn compiled_measurements_are_complete(seed in any::<u64>()) {
        let mut r = rng(seed);
        let f = compile_factorized(&FactorizedConfig::random(&mut r));
        prop_assert!(f.completeness_residual() < 1e-12);
        let g = Povm::from_basis(&haar_random_unitary(4, &mut r)).unwrap();
        prop_assert!(g.completeness_residual() < 1e-12);
        let rho = random_state(&mut r);
        let p = f.born_probabilities(&rho).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_and_sequential_updates_agree(seed in any::<u64>(), counts in prop::collection::vec(0u64..6, 4)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let mut r = rng(seed);
        let povm = Povm::from_basis(&haar_random_unitary(4, &mut r)).unwrap();
        let mut seq = ensemble(&mut r, 20);
        let mut batch = seq.clone();
        for (g, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                seq.update_weights(&povm, g).unwrap();
            }
        }
        batch.update_weights_counts(&povm, &counts).unwrap();
        for (a, b) in seq.weights().iter().zip(batch.weights()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn effective_sample_size_is_bounded(seed in any::<u64>(), size in 2usize..40) {
        let mut r = rng(seed);
        let e = ensemble(&mut r, size);
        let ess = e.effective_sample_size();
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= size as f64 + 1e-9);
    }

    #[test]
    fn information_gain_obeys_jensen_bounds(seed in any::<u64>()) {
        let mut r = rng(seed);
        let e = ensemble(&mut r, 15);
        let povm = Povm::from_basis(&haar_random_unitary(4, &mut r)).unwrap();
        let gain = information_gain(&e, &povm).unwrap();
        prop_assert!(gain >= -1e-12 && gain <= 4f64.ln() + 1e-12);
        let choice = aqst::design::choose(&e, DesignClass::GeneralRandom, &OptimizerParams::default(), &mut r).unwrap();
        prop_assert!(choice.gain >= -1e-12);
    }

    #[test]
    fn purification_roundtrips(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rho = random_state(&mut r);
        let psi = purify(&rho);
        prop_assert!((psi.amplitudes().norm() - 1.0).abs() < 1e-12);
        prop_assert!(partial_trace(&psi, true).unwrap().max_abs_diff(&rho) < 1e-10);
    }

    #[test]
    fn random_step_keeps_norm_and_overlap(seed in any::<u64>(), d in -2.0f64..2.0) {
        let mut r = rng(seed);
        let psi0 = PureState::haar(16, &mut r);
        let g = CVector::from_fn(16, |_, _| complex_normal(&mut r));
        let psi = random_step_with(&psi0, d, &g).unwrap();
        prop_assert!((psi.amplitudes().norm() - 1.0).abs() < 1e-12);
        prop_assert!((psi0.inner(&psi).re - (1.0 - d * d / 2.0)).abs() < 1e-10);
        prop_assert!(((psi.amplitudes() - psi0.amplitudes()).norm() - d.abs()).abs() < 1e-9);
    }

    #[test]
    fn waveplate_angles_reproduce_states(seed in any::<u64>()) {
        let mut r = rng(seed);
        let target = PureState::haar(2, &mut r);
        let (h, q) = angles_for_state(&target).unwrap();
        prop_assert!(fidelity_pure(&waveplate_state(h, q), &target).unwrap() > 1.0 - 1e-10);
        let c = canonical_angle(h * 7.3);
        prop_assert!((-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&c));
    }

    #[test]
    fn spread_is_nonnegative_and_order_free(seed in any::<u64>(), k in 2usize..6) {
        let mut r = rng(seed);
        let runs: Vec<Vec<DensityMatrix>> = (0..k).map(|_| vec![random_state(&mut r), random_state(&mut r)]).collect();
        let s = spread(&runs).unwrap();
        let mut rotated = runs.clone();
        rotated.rotate_left(1);
        let t = spread(&rotated).unwrap();
        // Square roots of near-zero eigenvalues of the mean state limit the
        // agreement when runs are pure.
        for (a, b) in s.iter().zip(&t) {
            prop_assert!(*a >= 0.0 && (a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn power_law_fit_recovers_exact_data(c in 0.01f64..100.0, a in -2.0f64..1.0, n0 in 1.0f64..1e3) {
        let curve: Vec<(f64, f64)> = (0..12).map(|k| {
            let n = n0 * 10f64.powf(k as f64 / 4.0);
            (n, c * n.powf(a))
        }).collect();
        let fit = fit_power_law(&curve).unwrap();
        prop_assert!((fit.a - a).abs() < 1e-9);
        prop_assert!((fit.c / c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prior_samples_are_density_matrices(seed in any::<u64>()) {
        let mut r = rng(seed);
        for kind in [PriorKind::Bures, PriorKind::HilbertSchmidt] {
            let rho = sample(kind, 4, &mut r);
            prop_assert!(DensityMatrix::new(rho.matrix().clone()).is_ok());
        }
    }
}
