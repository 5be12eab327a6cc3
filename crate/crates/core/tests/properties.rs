use num_complex::Complex64 as C64;
use proptest::prelude::*;

use prulab::haartwirl::{exact_twirl, TwirlContext};
use prulab::oracles::{apply_hadamard_all, apply_inner_permutation, apply_phase};
use prulab::qcore::{trace_distance, tuple_digits, tuple_index, DensityOperator, StateVector};
use prulab::sampling::{
    keyed_prp, sample_binary_function, sample_construction, sample_haar_state, sample_inner_permutation, Backing,
    PrpKey, SeededStream,
};
use prulab::targets::binary_type;

fn random_state(n: usize, seed: u64) -> StateVector {
    sample_haar_state(n, &mut SeededStream::new(seed, 9).rng()).unwrap()
}

fn max_gap(a: &StateVector, b: &StateVector) -> f64 {
    a.amps().iter().zip(b.amps()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hadamard_is_an_involution(n in 1usize..10, seed in any::<u64>()) {
        let original = random_state(n, seed);
        let mut state = original.clone();
        apply_hadamard_all(&mut state);
        prop_assert!((state.norm() - 1.0).abs() < 1e-12);
        apply_hadamard_all(&mut state);
        prop_assert!(max_gap(&state, &original) < 1e-12);
    }

    #[test]
    fn phase_and_permutation_preserve_norm(n in 1usize..9, seed in any::<u64>()) {
        let mut rng = SeededStream::new(seed, 0).rng();
        let f = sample_binary_function(n, &mut rng).unwrap();
        let pi = sample_inner_permutation(n, &mut rng).unwrap();
        let mut state = random_state(n, seed);
        apply_phase(&mut state, &f).unwrap();
        apply_inner_permutation(&mut state, &pi).unwrap();
        prop_assert!((state.norm() - 1.0).abs() < 1e-12);
        // U_pi then U_pi^{-1} is the identity
        let mut back = state.clone();
        apply_inner_permutation(&mut back, &pi.inverse()).unwrap();
        apply_inner_permutation(&mut back, &pi).unwrap();
        prop_assert!(max_gap(&back, &state) < 1e-15);
    }

    #[test]
    fn keyed_permutation_is_bijective(n in 1usize..11, key in any::<[u8; 32]>()) {
        let pi = keyed_prp(PrpKey(key), n).unwrap();
        let mut seen = vec![false; 1 << n];
        for x in 0..1usize << n {
            let y = pi.apply(x);
            prop_assert!(!seen[y]);
            seen[y] = true;
            prop_assert_eq!(pi.apply_inverse(y), x);
        }
    }

    #[test]
    fn construction_is_unitary(n in 1usize..8, seed in any::<u64>(), keyed in any::<bool>()) {
        let backing = if keyed { Backing::Keyed } else { Backing::Random };
        let c = sample_construction(n, backing, &mut SeededStream::new(seed, 3).rng()).unwrap();
        let a = random_state(n, seed);
        let b = random_state(n, seed ^ 0x55);
        let (mut ua, mut ub) = (a.clone(), b.clone());
        c.apply(&mut ua).unwrap();
        c.apply(&mut ub).unwrap();
        let before = a.inner(&b).unwrap();
        let after = ua.inner(&ub).unwrap();
        prop_assert!((before - after).norm() < 1e-12);
    }

    #[test]
    fn tuple_indexing_roundtrips(local in 2usize..9, digits in proptest::collection::vec(0usize..8, 1..5)) {
        let z: Vec<usize> = digits.iter().map(|d| d % local).collect();
        let index = tuple_index(&z, local);
        prop_assert_eq!(tuple_digits(index, local, z.len()), z);
    }

    #[test]
    fn binary_type_ignores_order(z in proptest::collection::vec(0usize..16, 0..8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = z.clone();
        shuffled.shuffle(&mut SeededStream::new(seed, 0).rng());
        prop_assert_eq!(binary_type(&shuffled), binary_type(&z));
        let mut doubled = z.clone();
        doubled.extend(&z);
        prop_assert!(binary_type(&doubled).is_empty());
    }

    #[test]
    fn trace_distance_is_a_metric_on_states(seed in any::<u64>()) {
        let rho = random_state(3, seed).density();
        let sigma = random_state(3, seed.wrapping_add(1)).density();
        let tau = DensityOperator::maximally_mixed(8);
        let d = |a: &DensityOperator, b: &DensityOperator| trace_distance(a, b).unwrap();
        prop_assert!(d(&rho, &rho) < 1e-12);
        prop_assert!((d(&rho, &sigma) - d(&sigma, &rho)).abs() < 1e-12);
        prop_assert!(d(&rho, &sigma) <= 1.0 + 1e-12);
        prop_assert!(d(&rho, &sigma) <= d(&rho, &tau) + d(&tau, &sigma) + 1e-12);
    }

    #[test]
    fn twirl_preserves_trace_and_is_idempotent(seed in any::<u64>()) {
        use rand::Rng;
        let ctx = TwirlContext::new(3, 2).unwrap();
        let mut rng = SeededStream::new(seed, 4).rng();
        let v = nalgebra::DVector::from_fn(9, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let v = v.normalize();
        let rho = DensityOperator::from_dense(&v * v.adjoint()).unwrap();
        let once = exact_twirl(&rho, &ctx).unwrap();
        let twice = exact_twirl(&once, &ctx).unwrap();
        prop_assert!((once.trace() - C64::new(1.0, 0.0)).norm() < 1e-10);
        prop_assert!(once.max_abs_diff(&twice).unwrap() < 1e-10);
    }
}
