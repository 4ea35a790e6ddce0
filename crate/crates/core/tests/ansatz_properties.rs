use meshvmc::mesh::index_to_bits;
use meshvmc::{Ansatz, AnsatzState, NetworkSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Ansatz with every parameter drawn from N(0, scale^2)-ish noise so the
/// conditionals are far from uniform.
fn random_ansatz(n: usize, hidden: Vec<usize>, seed: u64, scale: f64) -> Ansatz {
    let mut a = Ansatz::new(NetworkSpec::new(n, hidden), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    for b in &mut a.state.beta {
        *b += scale * (rng.gen::<f64>() * 2.0 - 1.0);
    }
    a.state.log_alpha = rng.gen::<f64>() - 0.5;
    a
}

#[test]
fn born_density_is_normalized() {
    for n in [1, 3, 6, 9, 12] {
        for draw in 0..10 {
            let a = random_ansatz(n, vec![8, 8], 100 * n as u64 + draw, 1.5);
            let total: f64 = a.psi_all().unwrap().iter().map(|p| p * p).sum();
            assert!((total - 1.0).abs() <= 1e-12, "n={n} draw={draw}: {total}");
        }
    }
}

#[test]
fn reversed_ordering_is_normalized_too() {
    let mut a = Ansatz::new(NetworkSpec::reversed(7, vec![12]), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for b in &mut a.state.beta {
        *b = rng.gen::<f64>() * 2.0 - 1.0;
    }
    let total: f64 = a.psi_all().unwrap().iter().map(|p| p * p).sum();
    assert!((total - 1.0).abs() <= 1e-12);
}

#[test]
fn score_matches_central_differences() {
    let h = 1e-6;
    for draw in 0..3 {
        let a = random_ansatz(6, vec![10, 10], 7 + draw, 1.0);
        let p = a.num_params();
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        for _ in 0..4 {
            let bits = index_to_bits(rng.gen_range(0..64), 6);
            let score = a.score(&bits).unwrap();
            for _ in 0..20 {
                let j = rng.gen_range(0..p);
                let shifted = |delta: f64| {
                    let mut beta = a.state.beta.clone();
                    beta[j] += delta;
                    let b = Ansatz::with_state(
                        a.spec().clone(),
                        AnsatzState {
                            log_alpha: 0.0,
                            beta,
                        },
                    )
                    .unwrap();
                    b.psi(&bits).unwrap().ln()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let scale = score[j].abs().max(1e-3);
                assert!(
                    (fd - score[j]).abs() / scale <= 1e-5,
                    "param {j}: fd {fd} vs score {}",
                    score[j]
                );
            }
        }
    }
}

#[test]
fn uniform_sampling_frequencies_within_four_standard_errors() {
    let a = Ansatz::new(NetworkSpec::new(4, vec![16]), 0).unwrap();
    let b = 100_000u64;
    let batch = a.sample(b, 5).unwrap();
    let p = 1.0 / 16.0;
    let se = (p * (1.0 - p) / b as f64).sqrt();
    let mut counts = [0u64; 16];
    for (&k, &c) in batch.indices().iter().zip(batch.counts()) {
        counts[k] = c;
    }
    for (k, &c) in counts.iter().enumerate() {
        let freq = c as f64 / b as f64;
        assert!((freq - p).abs() <= 4.0 * se, "string {k}: {freq}");
    }
}

#[test]
fn sampled_histogram_passes_chi_square() {
    for (n, seed) in [(5, 1u64), (8, 2)] {
        let a = random_ansatz(n, vec![16, 16], seed, 1.2);
        let rho: Vec<f64> = a.psi_all().unwrap().iter().map(|p| p * p).collect();
        let b = 1_000_000u64;
        let batch = a.sample(b, 40 + seed).unwrap();
        let mut observed = vec![0.0; rho.len()];
        for (&k, &c) in batch.indices().iter().zip(batch.counts()) {
            observed[k] = c as f64;
        }
        // Pool strings with small expected counts into one cell.
        let (mut stat, mut cells) = (0.0, 0usize);
        let (mut pooled_exp, mut pooled_obs) = (0.0, 0.0);
        for (o, r) in observed.iter().zip(&rho) {
            let e = r * b as f64;
            if e < 5.0 {
                pooled_exp += e;
                pooled_obs += o;
            } else {
                stat += (o - e).powi(2) / e;
                cells += 1;
            }
        }
        if pooled_exp > 0.0 {
            stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
            cells += 1;
        }
        let dist = ChiSquared::new((cells - 1) as f64).unwrap();
        let p_value = 1.0 - dist.cdf(stat);
        assert!(p_value > 1e-3, "n={n}: chi2 {stat} on {cells} cells, p={p_value}");
    }
}

#[test]
fn flipping_a_later_bit_never_moves_earlier_conditionals() {
    let n = 6;
    let a = random_ansatz(n, vec![9, 7], 21, 1.0);
    for k in 0..(1usize << n) {
        let bits = index_to_bits(k, n);
        let base = a.conditionals(&bits).unwrap().probs;
        for j in 0..n {
            let mut flipped = bits.clone();
            flipped[j] ^= 1;
            let probs = a.conditionals(&flipped).unwrap().probs;
            for i in 0..=j {
                assert_eq!(probs[i], base[i], "bit {j} leaked into conditional {i}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn amplitudes_positive_and_normalized(seed in 0u64..10_000, n in 1usize..9, scale in 0.0f64..4.0) {
        let a = random_ansatz(n, vec![6], seed, scale);
        let psi = a.psi_all().unwrap();
        prop_assert!(psi.iter().all(|&p| p > 0.0 && p.is_finite()));
        let total: f64 = psi.iter().map(|p| p * p).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn theta_round_trip(seed in 0u64..10_000) {
        let a = random_ansatz(4, vec![5], seed, 1.0);
        let theta = a.state.to_theta();
        prop_assert_eq!(AnsatzState::from_theta(&theta), a.state.clone());
    }
}
