use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attrlogic::dataio::consistent_assignments;
use attrlogic::rules::{Group, Implication, Literal, Rule};
use attrlogic::{
    bag_of_labels, builtin_rules, check_naive, compile, evaluate_predictions, parse_rules, serialize_rules,
    AttributeSchema, BolMode, EvalMode, LabelBatch, LabelKind, Penalty, RuleSet,
};

fn schema(m: usize) -> AttributeSchema {
    let names: Vec<String> = (0..m).map(|i| format!("a{i}")).collect();
    AttributeSchema::new(&names).unwrap()
}

fn distinct(m: usize, min: usize, max: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..m).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_flat_map(move |v| (min..=max.min(m)).prop_map(move |k| v[..k].to_vec()))
}

fn literals(m: usize, max: usize) -> impl Strategy<Value = Vec<Literal>> {
    distinct(m, 1, max).prop_flat_map(|attrs| {
        let n = attrs.len();
        proptest::collection::vec(any::<bool>(), n).prop_map(move |signs| {
            attrs
                .iter()
                .zip(signs)
                .map(|(&attr, positive)| Literal { attr, positive })
                .collect()
        })
    })
}

fn rule(m: usize) -> impl Strategy<Value = Rule> {
    prop_oneof![
        (distinct(m, 1, 4), any::<bool>(), any::<bool>()).prop_map(|(members, exclusive, exhaustive)| {
            Rule::Group(Group {
                name: String::new(),
                members,
                exclusive,
                exhaustive,
            })
        }),
        distinct(m, 2, 4).prop_map(Rule::Mutex),
        (literals(m, 3), literals(m, 3))
            .prop_map(|(antecedent, consequent)| Rule::Implies(Implication { antecedent, consequent })),
    ]
}

fn rule_set(max_m: usize) -> impl Strategy<Value = RuleSet> {
    (2..=max_m)
        .prop_flat_map(|m| (Just(m), proptest::collection::vec(rule(m), 0..6)))
        .prop_map(|(m, mut rules)| {
            for (k, r) in rules.iter_mut().enumerate() {
                if let Rule::Group(g) = r {
                    g.name = format!("G{k}");
                }
            }
            RuleSet::new(schema(m), rules).unwrap()
        })
}

fn bool_rows(m: usize, n: usize) -> impl Strategy<Value = Vec<Vec<bool>>> {
    proptest::collection::vec(proptest::collection::vec(any::<bool>(), m), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn serialized_rules_parse_back_equal(rules in rule_set(10)) {
        let text = serialize_rules(&rules);
        let back = parse_rules(&text, None).unwrap();
        prop_assert_eq!(&back, &rules);
        prop_assert_eq!(serialize_rules(&back), text);
    }

    #[test]
    fn compiled_checker_matches_naive(
        (rules, rows) in rule_set(12).prop_flat_map(|r| {
            let m = r.schema().len();
            (Just(r), bool_rows(m, 32))
        })
    ) {
        let checker = compile(&rules);
        for row in &rows {
            prop_assert_eq!(checker.check(row).unwrap(), check_naive(&rules, row).unwrap());
        }
    }

    #[test]
    fn poisoning_is_sound(
        preset_idx in 0usize..2,
        picks in proptest::collection::vec(any::<prop::sample::Index>(), 1..200),
        seed in any::<u64>(),
    ) {
        let (preset, mode) = [("fh-mini", BolMode::Grouped), ("celeba-strong-mini", BolMode::Flat)][preset_idx];
        let (schema, rules) = builtin_rules(preset).unwrap();
        let checker = compile(&rules);
        let pool = consistent_assignments(&checker).unwrap();
        let rows: Vec<Vec<bool>> = picks.iter().map(|i| pool[i.index(pool.len())].clone()).collect();
        let gt = LabelBatch::from_bool_rows(schema, &rows).unwrap();
        let out = bag_of_labels(&gt, &rules, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(out.y_bol.n_rows(), gt.n_rows());
        for i in 0..gt.n_rows() {
            let v = checker.check(&out.y_bol.bool_row(i)).unwrap();
            if out.y_logic[i] == 1 {
                prop_assert_eq!(out.y_bol.row(i), gt.row(i));
                prop_assert!(v.consistent());
            } else {
                prop_assert!(!v.consistent());
            }
        }
    }

    #[test]
    fn enforce_logic_is_never_more_accurate(
        (preds, gt) in (1usize..300).prop_flat_map(|n| (bool_rows(8, n), bool_rows(8, n))),
        whole_row in any::<bool>(),
    ) {
        let (schema, rules) = builtin_rules("fh-mini").unwrap();
        let checker = compile(&rules);
        let p = LabelBatch::from_bool_rows(schema.clone(), &preds).unwrap();
        let g = LabelBatch::from_bool_rows(schema, &gt).unwrap();
        let penalty = if whole_row { Penalty::WholeRow } else { Penalty::ViolatedAttributes };
        let ig = evaluate_predictions(&p, &g, &checker, EvalMode::IgnoreLogic, penalty).unwrap();
        let en = evaluate_predictions(&p, &g, &checker, EvalMode::EnforceLogic, penalty).unwrap();
        prop_assert!(en.acc_traditional <= ig.acc_traditional);
        prop_assert!(en.acc_pos <= ig.acc_pos);
        prop_assert!(en.acc_neg <= ig.acc_neg);
        prop_assert!(en.acc_avg <= ig.acc_avg);
    }

    /// Complementing both predictions and ground truth swaps the positive
    /// and negative accuracies and leaves their mean unchanged.
    #[test]
    fn balanced_accuracy_is_symmetric_under_complement(
        (preds, gt) in (1usize..200).prop_flat_map(|n| (bool_rows(5, n), bool_rows(5, n))),
    ) {
        let s = schema(5);
        let checker = compile(&RuleSet::empty(s.clone()));
        let flip = |rows: &[Vec<bool>]| rows.iter().map(|r| r.iter().map(|b| !b).collect()).collect::<Vec<Vec<bool>>>();
        let eval = |p: &[Vec<bool>], g: &[Vec<bool>]| {
            let p = LabelBatch::from_bool_rows(s.clone(), p).unwrap();
            let g = LabelBatch::from_bool_rows(s.clone(), g).unwrap();
            evaluate_predictions(&p, &g, &checker, EvalMode::IgnoreLogic, Penalty::WholeRow)
        };
        match (eval(&preds, &gt), eval(&flip(&preds), &flip(&gt))) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.acc_traditional - b.acc_traditional).abs() < 1e-9);
                prop_assert!((a.acc_avg - b.acc_avg).abs() < 1e-9);
                prop_assert!((a.acc_pos - b.acc_neg).abs() < 1e-9);
                prop_assert!((a.acc_neg - b.acc_pos).abs() < 1e-9);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "only one side evaluated: {:?} / {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn confidence_batches_binarize_at_threshold(values in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
        let n = values.len();
        let b = LabelBatch::new(schema(1), values.clone(), LabelKind::Confidence).unwrap();
        let bin = b.binarized();
        for (i, v) in values.iter().enumerate().take(n) {
            prop_assert_eq!(bin.bit(i, 0), *v >= 0.5);
        }
    }
}
