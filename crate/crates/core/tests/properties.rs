use std::collections::BTreeSet;

use proptest::prelude::*;

use hammerpuf::dram::{cell_polarity, is_charged, CellPolarity};
use hammerpuf::engine::{initial_bit, QueryMode, KB};
use hammerpuf::metrics::{entropy_bits, jaccard_sorted, key_material_size};
use hammerpuf::pattern::RowRole;
use hammerpuf::{
    build_row_pattern, derive_device, extract_flip_set, hammer_interval, FlipSet, Geometry, ModelParams,
    PufConfig, QueryPlan, RhType,
};

fn set_of(v: &BTreeSet<u64>) -> Vec<u64> {
    v.iter().copied().collect()
}

fn naive_jaccard(a: &BTreeSet<u64>, b: &BTreeSet<u64>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

proptest! {
    #[test]
    fn jaccard_matches_set_oracle(
        a in proptest::collection::btree_set(0u64..200, 0..60),
        b in proptest::collection::btree_set(0u64..200, 0..60),
    ) {
        let j = jaccard_sorted(&set_of(&a), &set_of(&b));
        prop_assert_eq!(j, naive_jaccard(&a, &b));
        prop_assert_eq!(j, jaccard_sorted(&set_of(&b), &set_of(&a)));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(jaccard_sorted(&set_of(&a), &set_of(&a)), 1.0);
    }

    #[test]
    fn jaccard_distance_is_a_metric(
        a in proptest::collection::btree_set(0u64..64, 0..30),
        b in proptest::collection::btree_set(0u64..64, 0..30),
        c in proptest::collection::btree_set(0u64..64, 0..30),
    ) {
        let d = |x: &BTreeSet<u64>, y: &BTreeSet<u64>| 1.0 - jaccard_sorted(&set_of(x), &set_of(y));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn flip_set_normalises_input(v in proptest::collection::vec(0u64..1000, 0..50)) {
        let s = FlipSet::new(v.clone(), 1000, "p").unwrap();
        let want: BTreeSet<u64> = v.into_iter().collect();
        prop_assert_eq!(s.indices, set_of(&want));
    }

    #[test]
    fn entropy_is_symmetric(n in 1u64..5_000_000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac) as u64;
        let a = entropy_bits(n, k).unwrap().bits;
        let b = entropy_bits(n, n - k).unwrap().bits;
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        prop_assert!(a <= n as f64 + 1e-9);
    }

    #[test]
    fn key_material_covers_target(bits in 1u64..4096, frac in 0.001f64..1.0) {
        let bytes = key_material_size(bits, frac).unwrap();
        prop_assert!(bytes as f64 * 8.0 * frac >= bits as f64 - 1e-9);
        prop_assert!((bytes - 1) as f64 * 8.0 * frac < bits as f64);
    }

    #[test]
    fn polarity_alternates(index in 0u64..(1 << 20)) {
        let g = Geometry::default();
        let p = cell_polarity(&g, index).unwrap();
        prop_assert_eq!(p == CellPolarity::TrueCell, index % 2 == 0);
        prop_assert!(is_charged(p, initial_bit(0xAA, index)));
        prop_assert!(!is_charged(p, initial_bit(0x55, index)));
        prop_assert_ne!(is_charged(p, true), is_charged(p, false));
    }

    #[test]
    fn hammer_interval_grows_with_rows(n in 1usize..64) {
        prop_assert!(hammer_interval(n + 1) > hammer_interval(n));
    }

    #[test]
    fn every_puf_row_has_a_hammer_neighbour(rows in 1u64..=32, dsrh in any::<bool>(), start in 0u32..20) {
        let g = Geometry::default();
        let t = if dsrh { RhType::Dsrh } else { RhType::Ssrh };
        let p = build_row_pattern(t, rows * 4 * KB, &g, start).unwrap();
        prop_assert_eq!(p.puf_rows.len() as u64, rows);
        prop_assert_eq!(p.roles.first(), Some(&RowRole::Hammer));
        prop_assert_eq!(p.roles.last(), Some(&RowRole::Hammer));
        for (i, &r) in p.puf_rows.iter().enumerate() {
            let n = p.aggressors_of(r).len();
            match t {
                RhType::Dsrh => prop_assert_eq!(n, 2),
                // An odd count ends in HVH, whose victim has two neighbours.
                RhType::Ssrh if rows % 2 == 1 && i + 1 == p.puf_rows.len() => prop_assert_eq!(n, 2),
                RhType::Ssrh => prop_assert_eq!(n, 1),
            }
        }
        for &h in &p.hammer_rows {
            prop_assert!(p.aggressors_of(h).is_empty());
        }
    }
}

fn flip_indices(
    plan: &QueryPlan,
    device: &hammerpuf::DramDevice,
    config: &PufConfig,
    mode: QueryMode,
) -> FlipSet {
    extract_flip_set(&plan.measure(device, config, 7, mode).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_flips_grow_with_time_and_heat(
        seed in any::<u64>(),
        t1 in 1.0f64..200.0,
        dt in 0.0f64..200.0,
        temp1 in 0.0f64..90.0,
        dtemp in 0.0f64..10.0,
        dsrh in any::<bool>(),
    ) {
        let params = ModelParams::shipped().noiseless();
        let device = derive_device(seed, Geometry::default(), params).unwrap();
        let base = PufConfig {
            rh_type: if dsrh { RhType::Dsrh } else { RhType::Ssrh },
            puf_size: 8 * KB,
            rh_time: t1,
            temperature_c: temp1,
            ..PufConfig::default()
        };
        let plan = QueryPlan::for_config(&device, &base).unwrap();
        let longer = PufConfig { rh_time: t1 + dt, ..base };
        let hotter = PufConfig { temperature_c: temp1 + dtemp, ..base };
        let a = flip_indices(&plan, &device, &base, QueryMode::Hammer);
        prop_assert!(a.is_subset_of(&flip_indices(&plan, &device, &longer, QueryMode::Hammer)));
        prop_assert!(a.is_subset_of(&flip_indices(&plan, &device, &hotter, QueryMode::Hammer)));
        prop_assert!(flip_indices(&plan, &device, &base, QueryMode::DecayOnly).is_subset_of(&a));
    }

    #[test]
    fn uncharged_puf_never_flips(seed in any::<u64>(), hammer_iv in any::<u8>(), t in 1.0f64..1000.0) {
        let device = derive_device(seed, Geometry::default(), ModelParams::shipped()).unwrap();
        let config = PufConfig {
            puf_size: 8 * KB,
            puf_row_iv: 0x55,
            hammer_row_iv: hammer_iv,
            rh_time: t,
            temperature_c: 90.0,
            ..PufConfig::default()
        };
        let m = hammerpuf::simulate_query(&device, &config, seed ^ 1).unwrap();
        prop_assert_eq!(m.flip_count, 0);
    }

    #[test]
    fn flips_are_one_to_zero_discharges(seed in any::<u64>(), iv in any::<u8>()) {
        let device = derive_device(seed, Geometry::default(), ModelParams::shipped()).unwrap();
        let config = PufConfig { puf_size: 8 * KB, puf_row_iv: iv, ..PufConfig::default() };
        let m = hammerpuf::simulate_query(&device, &config, 3).unwrap();
        for i in extract_flip_set(&m).indices {
            let p = CellPolarity::of_bit_position(i);
            prop_assert!(is_charged(p, initial_bit(iv, i)));
            prop_assert!(!is_charged(p, m.bit(i)));
        }
    }
}
