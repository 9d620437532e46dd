use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hammerpuf::engine::KB;
use hammerpuf::fuzzy::{code_positions, decode, decode_block, enroll, majority_vector, FeParams, HelperData, Key, Reproduction};
use hammerpuf::{Measurement, PufConfig};

/// 4 KB readout of a 0xAA PUF where every seventh byte discharged fully.
fn synthetic() -> Measurement {
    let readout: Vec<u8> = (0..4 * KB as usize).map(|i| if i % 7 == 0 { 0x55 } else { 0xAA }).collect();
    let flip_count = readout.iter().map(|b| (b ^ 0xAA).count_ones() as u64).sum();
    Measurement {
        device_id: "synthetic".into(),
        config: PufConfig::default(),
        measurement_seed: 1,
        decay_only: false,
        flip_count,
        created_at: None,
        readout,
    }
}

fn repetition_codeword(key: u32, key_bits: usize, rho: usize) -> Vec<bool> {
    (0..key_bits * rho).map(|j| (key >> (key_bits - 1 - j / rho)) & 1 == 1).collect()
}

/// Nearest codeword by exhaustive search over all 2^key_bits keys.
fn nearest_key(noisy: &[bool], key_bits: usize, rho: usize) -> u32 {
    (0..1u32 << key_bits)
        .min_by_key(|&k| {
            repetition_codeword(k, key_bits, rho)
                .iter()
                .zip(noisy)
                .filter(|(a, b)| a != b)
                .count()
        })
        .unwrap()
}

fn majority_key(noisy: &[bool], rho: usize) -> u32 {
    noisy.chunks(rho).fold(0, |k, block| (k << 1) | decode_block(block) as u32)
}

fn key_value(key: &Key) -> u32 {
    key.0.iter().fold(0, |k, &b| (k << 8) | u32::from(b))
}

struct Enrolled {
    reference: Vec<bool>,
    helper: HelperData,
    key: Key,
    cells: Vec<u64>,
}

fn enrolled(key_bits: u32, rho: u32, seed: u64) -> Enrolled {
    let m = synthetic();
    let p = FeParams {
        key_bits,
        repetition: rho,
        enroll_count: 1,
        fe_seed: seed,
    };
    let (key, helper) = enroll(std::slice::from_ref(&m), &p, seed.wrapping_add(1)).unwrap();
    let cells = code_positions(&helper);
    Enrolled {
        reference: majority_vector(&[m]).unwrap(),
        helper,
        key,
        cells,
    }
}

/// Decodes `reference ⊕ noise` through the helper and through the
/// exhaustive oracle, and checks they agree.
fn check(e: &Enrolled, noise: &[bool]) {
    let rho = e.helper.fe_params.repetition as usize;
    let key_bits = e.helper.fe_params.key_bits as usize;
    let mut response = e.reference.clone();
    for (j, &flip) in noise.iter().enumerate() {
        if flip {
            let c = e.cells[j] as usize;
            response[c] = !response[c];
        }
    }
    let noisy: Vec<bool> = (0..e.cells.len())
        .map(|j| e.helper.mask[j] ^ response[e.cells[j] as usize])
        .collect();
    let oracle = nearest_key(&noisy, key_bits, rho);
    assert_eq!(majority_key(&noisy, rho), oracle);
    let expected = if oracle == key_value(&e.key) {
        Reproduction::Recovered(e.key.clone())
    } else {
        Reproduction::Mismatch
    };
    assert_eq!(decode(&response, &e.helper), expected);
}

#[test]
fn code_positions_are_a_permutation_of_the_helper_cells() {
    let e = enrolled(32, 5, 9);
    let mut sorted = e.cells.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, e.helper.positions);
}

#[test]
fn decode_equals_nearest_codeword_for_every_block_pattern() {
    for rho in [3u32, 5, 7] {
        let e = enrolled(8, rho, u64::from(rho));
        let rho = rho as usize;
        for block in 0..8 {
            for pattern in 0u32..1 << rho {
                let mut noise = vec![false; 8 * rho];
                for i in 0..rho {
                    noise[block * rho + i] = (pattern >> i) & 1 == 1;
                }
                check(&e, &noise);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decode_equals_nearest_codeword_under_arbitrary_noise(
        rho in prop::sample::select(vec![3u32, 5, 7]),
        seed in any::<u64>(),
        noise in proptest::collection::vec(any::<bool>(), 56),
    ) {
        let e = enrolled(8, rho, seed);
        check(&e, &noise[..8 * rho as usize]);
    }
}

/// P(majority of ρ independent bits flip), each with probability p.
fn block_failure(p: f64, rho: u32) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0f64;
    for i in 0..=rho {
        if i > 0 {
            binom = binom * f64::from(rho - i + 1) / f64::from(i);
        }
        if 2 * i > rho {
            total += binom * p.powi(i as i32) * (1.0 - p).powi((rho - i) as i32);
        }
    }
    total
}

#[test]
fn block_failure_oracle() {
    let p = 0.002f64;
    let leading = 35.0 * p.powi(4) * (1.0 - p).powi(3);
    assert!((leading - 5.6e-10).abs() < 0.01 * 5.6e-10, "{leading}");
    let full = block_failure(p, 7);
    assert!(full >= leading && full < leading * 1.01);
    assert!((block_failure(0.1, 3) - 0.028).abs() < 1e-12);
}

#[test]
fn monte_carlo_matches_block_failure() {
    let (rho, key_bits, p, trials) = (3u32, 8u32, 0.1f64, 4000usize);
    let e = enrolled(key_bits, rho, 77);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0usize;
    for _ in 0..trials {
        let mut response = e.reference.clone();
        for c in &e.cells {
            if rng.random_bool(p) {
                response[*c as usize] ^= true;
            }
        }
        if decode(&response, &e.helper) == Reproduction::Mismatch {
            failures += 1;
        }
    }
    let q = 1.0 - (1.0 - block_failure(p, rho)).powi(key_bits as i32);
    let sd = (q * (1.0 - q) / trials as f64).sqrt();
    let rate = failures as f64 / trials as f64;
    assert!((rate - q).abs() < 4.0 * sd, "rate {rate} expected {q}");
}

#[test]
fn low_noise_always_recovers() {
    let e = enrolled(128, 7, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..2000 {
        let mut response = e.reference.clone();
        for c in &e.cells {
            if rng.random_bool(0.002) {
                response[*c as usize] ^= true;
            }
        }
        assert_eq!(decode(&response, &e.helper), Reproduction::Recovered(e.key.clone()));
    }
}
