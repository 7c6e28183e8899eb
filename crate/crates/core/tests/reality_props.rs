use proptest::prelude::*;

use qreal::reality::{audit_ledger, parse_ledger_line, reality_value, BranchQuery};
use qreal::scenarios::{build_decay_counter, build_wigner_chain, PreparedScenario};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exactly_one_branch_is_real(seed in any::<u64>(), k in 2usize..=5) {
        let p = PreparedScenario::new(build_wigner_chain(k, 0.3).unwrap()).unwrap();
        let s = p.sample(seed).unwrap();
        let last = s.ledger.entries.last().unwrap();
        let real: Vec<usize> = (0..last.retained_branches)
            .filter(|&i| reality_value(&s.token, BranchQuery { epoch: last.epoch, index: i }).unwrap() == 1)
            .collect();
        prop_assert_eq!(real.len(), 1);
        let stale = BranchQuery { epoch: last.epoch + 1, index: 0 };
        prop_assert!(reality_value(&s.token, stale).is_err());
        prop_assert!(audit_ledger(&s.ledger).passed());
    }

    #[test]
    fn amplitudes_do_not_depend_on_seed(a in any::<u64>(), b in any::<u64>()) {
        let spec = build_decay_counter(3, 0.4, 0.8).unwrap();
        let (ta, _) = qreal::scenarios::run_trial(&spec, a).unwrap();
        let (tb, _) = qreal::scenarios::run_trial(&spec, b).unwrap();
        prop_assert_eq!(ta.final_state.to_bytes(), tb.final_state.to_bytes());
    }

    #[test]
    fn same_seed_same_history(seed in any::<u64>()) {
        let spec = build_decay_counter(3, 0.4, 0.8).unwrap();
        let (ta, oa) = qreal::scenarios::run_trial(&spec, seed).unwrap();
        let (tb, ob) = qreal::scenarios::run_trial(&spec, seed).unwrap();
        prop_assert_eq!(oa, ob);
        prop_assert_eq!(ta.ledger.to_lines(), tb.ledger.to_lines());
    }

    #[test]
    fn ledger_lines_parse_back(seed in any::<u64>()) {
        let p = PreparedScenario::new(build_decay_counter(2, 0.5, 1.0).unwrap()).unwrap();
        let s = p.sample(seed).unwrap();
        let text = s.ledger.to_lines();
        for (line, e) in text.lines().zip(&s.ledger.entries) {
            let (epoch, _, _, prob, bits, cumulative) = parse_ledger_line(line).unwrap();
            prop_assert_eq!(epoch, e.epoch);
            prop_assert_eq!(prob, e.probability);
            prop_assert_eq!(bits, e.info_bits);
            prop_assert_eq!(cumulative, e.cumulative_bits);
        }
    }
}

#[test]
fn information_matches_branch_probability() {
    let p = PreparedScenario::new(build_wigner_chain(3, 0.25).unwrap()).unwrap();
    for seed in 0..20 {
        let s = p.sample(seed).unwrap();
        let first = &s.ledger.entries[0];
        assert!((first.info_bits + first.probability.log2()).abs() < 1e-12);
        assert!((first.probability - 0.25).abs() < 1e-12 || (first.probability - 0.75).abs() < 1e-12);
    }
}
