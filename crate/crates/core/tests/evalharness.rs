use std::collections::HashSet;

use proptest::prelude::*;
use topo_core::evalharness::*;
use topo_core::generator::{generate_unique, sweep_duties, Category, Prompt, Relation};
use topo_core::netlist::{canonical_key, parse_triple_list, Device, DutyCycle};
use topo_core::reward::{train_estimators, EstimatorBackend, FitOptions};
use topo_core::simulator::{simulate, Design, SimConfig};

const BUCK: &str =
    "[['FET-B-0','IN','6'],['FET-A-0','6','0'],['inductor-0','6','OUT'],['capacitor-0','OUT','0']]";

fn buck(duty: f64) -> Design {
    Design::new(parse_triple_list(BUCK).unwrap(), DutyCycle::from_value(duty).unwrap())
}

fn pool(names: &[&str]) -> Prompt {
    let devices: Vec<Device> = names.iter().map(|s| s.parse().unwrap()).collect();
    Prompt::component_constraint(&devices)
}

fn buck_pool() -> Prompt {
    pool(&["FET-B-0", "FET-A-0", "inductor-0", "capacitor-0"])
}

/// One design per topology, split by simulated validity.
fn unique_designs(count: usize, seed: u64) -> (Vec<Design>, Vec<Design>) {
    let cfg = SimConfig::default();
    let (mut valid, mut invalid) = (Vec::new(), Vec::new());
    for n in generate_unique(4, count, seed).unwrap() {
        let d = Design::new(n, DutyCycle::from_value(0.5).unwrap());
        if simulate(&d, &cfg).valid {
            valid.push(d);
        } else {
            invalid.push(d);
        }
    }
    (valid, invalid)
}

#[test]
fn dgr_fixtures() {
    assert_eq!(dgr(500, 500).unwrap(), 1.0);
    assert!((dgr(645, 500).unwrap() - 1.29).abs() < 1e-12);
    assert_eq!(dgr(1000, 500).unwrap(), 2.0);
    assert_eq!(dgr(0, 0), Err(EvalError::InvalidCounts { generated: 0, unique: 0 }));
    assert!(matches!(dgr(3, 4), Err(EvalError::InvalidCounts { .. })));
}

#[test]
fn expected_scores_fractions() {
    let oracle = EstimatorBackend::oracle(SimConfig::default());
    let (valid, invalid) = unique_designs(300, 4);
    assert!(valid.len() >= 10 && invalid.len() >= 10);
    let (v, e) = expected_scores(&valid[..10], &oracle).unwrap();
    assert_eq!(v, 1.0);
    assert!(e > 0.0);
    let mixed: Vec<Design> = valid[..10].iter().chain(&invalid[..10]).cloned().collect();
    let (v, e_mixed) = expected_scores(&mixed, &oracle).unwrap();
    assert_eq!(v, 0.5);
    assert!((e_mixed - e / 2.0).abs() < 1e-12);
    assert_eq!(expected_scores(&[], &oracle), Err(EvalError::EmptySampleSet));
}

#[test]
fn learned_and_oracle_validity_agree() {
    let cfg = SimConfig::default();
    let nets = generate_unique(4, 2200, 8).unwrap();
    let (train, held) = nets.split_at(2000);
    let data: Vec<_> = train
        .iter()
        .flat_map(sweep_duties)
        .map(|d| {
            let r = simulate(&d, &cfg);
            (d, r)
        })
        .collect();
    let est = train_estimators(&data, &FitOptions::default());
    let learned = EstimatorBackend::learned(Some(est), cfg.clone());
    let oracle = EstimatorBackend::oracle(cfg);
    let samples: Vec<Design> = held
        .iter()
        .enumerate()
        .map(|(i, n)| Design::new(n.clone(), DutyCycle::all()[i % 5]))
        .collect();
    assert_eq!(samples.len(), 200);
    let (a, _) = expected_scores(&samples, &learned).unwrap();
    let (b, _) = expected_scores(&samples, &oracle).unwrap();
    assert!((a - b).abs() <= 0.1, "learned {a} oracle {b}");
}

#[test]
fn success_cases() {
    let sim = SimConfig::default();
    let d = buck(0.5);
    let r = simulate(&d, &sim);
    assert!(success(&buck_pool().with_efficiency(0.6), &d, &r));
    assert!(success(&buck_pool(), &d, &r));
    let wrong = pool(&["capacitor-0", "capacitor-1", "FET-A-0", "FET-B-0"]);
    assert!(!success(&wrong, &d, &r));
    let high = buck(0.9);
    let r = simulate(&high, &sim);
    assert!((r.vout - 1.8).abs() < 0.1);
    assert!(!success(&buck_pool().with_vout(Relation::Less, 1.5, 2.0), &high, &r));
    assert!(success(&buck_pool().with_vout(Relation::Greater, 1.5, 2.0), &high, &r));
    let mut invalid = r.clone();
    invalid.valid = false;
    assert!(!success(&buck_pool(), &high, &invalid));
}

#[test]
fn constant_buck_generator_meets_efficiency_prompts() {
    let oracle = EstimatorBackend::oracle(SimConfig::default());
    let prompts = vec![buck_pool().with_efficiency(0.6); 10];
    let table = success_table_with(&prompts, 3, &oracle, |_| Ok(buck(0.5))).unwrap();
    let rates = table.rates(1).unwrap();
    assert_eq!(rates.ce, Some(100.0));
    assert_eq!(rates.overall, 100.0);
    assert_eq!(rates.c, None);
}

#[test]
fn success_rate_errors() {
    let oracle = EstimatorBackend::oracle(SimConfig::default());
    assert_eq!(
        success_table_with(&[], 1, &oracle, |_| Ok(buck(0.5))).unwrap_err(),
        EvalError::EmptyPromptSet
    );
    let prompts = [buck_pool()];
    assert_eq!(
        success_table_with(&prompts, 0, &oracle, |_| Ok(buck(0.5))).unwrap_err(),
        EvalError::InvalidM
    );
}

fn table_strategy() -> impl Strategy<Value = SuccessTable> {
    prop::collection::vec((0usize..3, prop::collection::vec(any::<bool>(), 5)), 1..40).prop_map(|rows| {
        SuccessTable {
            categories: rows
                .iter()
                .map(|(c, _)| [Category::C, Category::CE, Category::CV][*c])
                .collect(),
            outcomes: rows.into_iter().map(|(_, o)| o).collect(),
        }
    })
}

proptest! {
    #[test]
    fn success_at_m_is_monotone(t in table_strategy()) {
        let r1 = t.rates(1).unwrap().overall;
        let r3 = t.rates(3).unwrap().overall;
        let r5 = t.rates(5).unwrap().overall;
        prop_assert!(r1 <= r3 && r3 <= r5);
    }

    #[test]
    fn m_one_is_plain_success_rate(t in table_strategy()) {
        let hits = t.outcomes.iter().filter(|o| o[0]).count();
        let plain = 100.0 * hits as f64 / t.outcomes.len() as f64;
        prop_assert!((t.rates(1).unwrap().overall - plain).abs() < 1e-9);
    }

    #[test]
    fn overall_between_categories(t in table_strategy()) {
        let r = t.rates(1).unwrap();
        let present: Vec<f64> = [r.c, r.ce, r.cv].into_iter().flatten().collect();
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.overall >= lo - 1e-9 && r.overall <= hi + 1e-9);
        prop_assert!((0.0..=100.0).contains(&r.overall));
    }

    #[test]
    fn dgr_at_least_one(unique in 1usize..1000, extra in 0usize..1000) {
        prop_assert!(dgr(unique + extra, unique).unwrap() >= 1.0);
    }
}

#[test]
fn sampled_designs_are_unique_and_report_serializes() {
    use topo_core::policy::{Grammar, NetlistGrammar, PolicyParams, SampleConfig};
    let g = NetlistGrammar;
    let p = PolicyParams::new(g.feature_dim(), 8, g.vocab(), 1);
    let prompts = vec![buck_pool(), buck_pool().with_efficiency(0.5)];
    let sampling = SampleConfig { top_k: 40, nucleus_p: 0.9 };
    let (designs, draws) = sample_unique(&p, &prompts, 30, 300, &sampling, 2).unwrap();
    assert_eq!(designs.len(), 30);
    let keys: HashSet<_> = designs.iter().map(|d| canonical_key(&d.netlist)).collect();
    assert_eq!(keys.len(), 30);
    assert!(draws >= 30);

    let oracle = EstimatorBackend::oracle(SimConfig::default());
    let opts = EvalOptions { samples: 20, draw_factor: 10, ms: vec![1, 3, 5], sampling, seed: 3 };
    let report = evaluate("untrained", &p, &prompts, &oracle, None, &opts).unwrap();
    assert!(report.dgr >= 1.0);
    assert_eq!(report.sample_count, 20);
    assert!(report.e_valid_clf.is_none());
    let m: Vec<f64> = report.success_at_m.values().cloned().collect();
    assert!(m.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(report.sigma.overall, report.success_at_m[&1]);
    let back: EvalReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
    let cols = EvalReport::CSV_HEADER.split(',').count();
    assert_eq!(report.csv_row().split(',').count(), cols);
}
