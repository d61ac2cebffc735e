mod common;

use std::time::Instant;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use topo_core::netlist::*;

#[test]
fn keys_match_brute_force_isomorphism_classes_up_to_three_devices() {
    let start = Instant::now();
    assert!(check_exhaustive_small_space() > 500_000);
    assert!(start.elapsed().as_secs() < 60, "took {:?}", start.elapsed());
}

#[test]
fn keys_survive_relabeling_of_random_netlists() {
    let start = Instant::now();
    check_relabel_invariance(1000, 20, 11);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn keys_survive_relabeling_of_generated_topologies() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..200 {
        let n = topo_core::generator::random_topology(4 + i % 7, i as u64).unwrap();
        let key = canonical_key(&n);
        for _ in 0..5 {
            assert_eq!(canonical_key(&relabel(&n, &mut rng)), key);
        }
    }
}

#[test]
fn corrected_netlist_examples() {
    let invalid = parse_triple_list(
        "[['FET-B-1','IN','6'],['FET-A-0','0','IN'],['FET-B-0','OUT','7'],['inductor-0','6','7']]",
    )
    .unwrap();
    assert_eq!(invalid.internal_nodes(), vec![NodeId::Internal(6), NodeId::Internal(7)]);
    let corrected = parse_triple_list(
        "[['FET-B-1','IN','6'],['FET-A-0','0','IN'],['FET-B-0','OUT','0'],['inductor-0','6','OUT']]",
    )
    .unwrap();
    assert!(structural_check(&corrected).is_empty());
    assert_eq!(
        emit_triple_list(&corrected),
        "[['FET-B-1','IN','6'],['FET-A-0','0','IN'],['FET-B-0','OUT','0'],['inductor-0','6','OUT']]"
    );
    assert_ne!(canonical_key(&invalid), canonical_key(&corrected));
    let text = encode_incident(&corrected, DutyCycle::from_value(0.3).unwrap());
    let six = text.lines().find(|l| l.starts_with("Node 6 ")).unwrap();
    assert!(six.contains("FET-B-1") && six.contains("inductor-0"));
    assert_eq!(six.split(", ").count(), 2);
}

fn arb_netlist() -> impl Strategy<Value = Netlist> {
    (1usize..=10, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_netlist(n, &mut rng)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn triple_list_round_trips(n in arb_netlist()) {
        let text = emit_triple_list(&n);
        prop_assert_eq!(parse_triple_list(&text).unwrap(), n);
    }

    #[test]
    fn incident_round_trip_keeps_key_and_duty(n in arb_netlist(), d in 0usize..5) {
        let duty = DutyCycle::from_index(d).unwrap();
        let (back, d2) = parse_incident(&encode_incident(&n, duty)).unwrap();
        prop_assert_eq!(d2, duty);
        prop_assert_eq!(canonical_key(&back), canonical_key(&n));
    }

    #[test]
    fn structural_check_ignores_entry_order(n in arb_netlist(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = n.entries().to_vec();
        entries.shuffle(&mut rng);
        let m = Netlist::new(entries).unwrap();
        prop_assert_eq!(structural_check(&m), structural_check(&n));
    }

    #[test]
    fn canonical_key_is_deterministic(n in arb_netlist()) {
        prop_assert_eq!(canonical_key(&n), canonical_key(&n.clone()));
    }
}
