//! Property tests for the spec-level invariants of the augmenters, the
//! generic parser, the tree metrics, and the rank tests.

use proptest::prelude::*;

use promptsens::augment::{
    count_char_differences, synonym_augment, typo_augment, AugmentationRate, Thesaurus,
};
use promptsens::codeparse::{parse_generic, tokenize, tree_size, SyntaxTree, TokenKind};
use promptsens::similarity::{bleu, tree_edit_distance, EditCosts};
use promptsens::stats::{friedman, kruskal_wallis, RankMatrix};

fn prompt_strategy() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            4 => "[a-zA-Z]{1,8}",
            1 => "[0-9]{1,3}",
            1 => Just(",".to_string()),
            1 => Just("!".to_string()),
        ],
        1..12,
    )
    .prop_map(|words| words.join(" "))
}

fn letters(s: &str) -> usize {
    s.chars().filter(|c| c.is_ascii_alphabetic()).count()
}

proptest! {
    #[test]
    fn typo_budget_exact_across_rate_grid(prompt in prompt_strategy(), seed in any::<u64>()) {
        let eligible = letters(&prompt);
        let mut last_count = 0;
        for step in 0..=10u32 {
            let value = step as f64 / 10.0;
            let rate = AugmentationRate::new(value).unwrap();
            let out = typo_augment(&prompt, rate, seed);
            let expected = (value * eligible as f64).round() as usize;
            let diff = count_char_differences(&prompt, &out.text);
            prop_assert_eq!(diff, expected);
            // Edit budget grows with the rate.
            prop_assert!(diff >= last_count);
            last_count = diff;
            // Purity: same inputs, byte-identical output.
            prop_assert_eq!(&out.text, &typo_augment(&prompt, rate, seed).text);
        }
    }

    #[test]
    fn synonym_output_word_count_and_membership(
        prompt in prompt_strategy(),
        seed in any::<u64>(),
        value in 0.0f64..=1.0,
    ) {
        let thesaurus = Thesaurus::new([
            ("big".to_string(), vec!["large".to_string(), "huge".to_string()]),
            ("fast".to_string(), vec!["quick".to_string()]),
            ("list".to_string(), vec!["sequence".to_string(), "roster".to_string()]),
        ]);
        // Salt the prompt with eligible words so the test has targets.
        let prompt = format!("big {prompt} fast list");
        let rate = AugmentationRate::new(value).unwrap();
        let out = synonym_augment(&prompt, rate, seed, &thesaurus);

        let words = |s: &str| -> Vec<String> {
            s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect()
        };
        let before = words(&prompt);
        let after = words(&out.text);
        prop_assert_eq!(before.len(), after.len());
        for (original, replaced) in before.iter().zip(&after) {
            if original != replaced {
                let entry = thesaurus.synonyms(&original.to_lowercase());
                prop_assert!(entry.is_some(), "changed ineligible word {}", original);
                let members: Vec<String> = entry
                    .unwrap()
                    .iter()
                    .map(|s| s.to_lowercase())
                    .collect();
                prop_assert!(
                    members.contains(&replaced.to_lowercase()),
                    "{} -> {} not in thesaurus",
                    original,
                    replaced
                );
            }
        }
        prop_assert_eq!(&out.text, &synonym_augment(&prompt, rate, seed, &thesaurus).text);
    }

    #[test]
    fn parser_covers_every_non_whitespace_char(code in "[ -~\\n]{0,120}") {
        let tokens = tokenize(&code);
        let mut covered_by: Vec<Option<TokenKind>> = vec![None; code.len()];
        for token in &tokens {
            for (i, slot) in covered_by
                .iter_mut()
                .enumerate()
                .take(token.end)
                .skip(token.start)
            {
                prop_assert!(slot.is_none(), "byte {} covered twice", i);
                *slot = Some(token.kind);
            }
        }
        for (i, (b, kind)) in code.bytes().zip(&covered_by).enumerate() {
            if b.is_ascii_whitespace() {
                // Whitespace sits between tokens, except inside string
                // literals which are single tokens.
                prop_assert!(matches!(kind, None | Some(TokenKind::Str)));
            } else {
                prop_assert!(kind.is_some(), "byte {} uncovered", i);
            }
        }
        // Every non-bracket token becomes exactly one leaf.
        let tree = parse_generic(&code);
        let mut leaves = 0usize;
        let mut interior_groups = 0usize;
        let mut stack = vec![&tree];
        while let Some(node) = stack.pop() {
            let structural = matches!(
                node.label.as_str(),
                "root" | "block" | "paren" | "bracket" | "brace"
            );
            if node.children.is_empty() && !structural {
                leaves += 1;
            }
            if matches!(node.label.as_str(), "paren" | "bracket" | "brace") {
                interior_groups += 1;
            }
            stack.extend(node.children.iter());
        }
        let non_bracket = tokens
            .iter()
            .filter(|t| !matches!(t.kind, TokenKind::Open | TokenKind::Close))
            .count();
        let open_count = tokens.iter().filter(|t| t.kind == TokenKind::Open).count();
        let close_count = tokens.iter().filter(|t| t.kind == TokenKind::Close).count();
        // Matched opens become groups; unmatched closes become leaves.
        prop_assert_eq!(interior_groups, open_count);
        prop_assert!(leaves >= non_bracket);
        prop_assert!(leaves <= non_bracket + close_count);
    }
}

// Random small trees for metric properties.
fn tree_strategy(max_nodes: usize) -> impl Strategy<Value = SyntaxTree> {
    let label = prop_oneof![Just("a"), Just("b"), Just("c")];
    label.prop_flat_map(move |root_label| {
        proptest::collection::vec(prop_oneof![Just("a"), Just("b"), Just("c")], 0..max_nodes)
            .prop_flat_map(move |labels| {
                let root_label = root_label;
                proptest::collection::vec(0usize..=labels.len().max(1), labels.len()).prop_map(
                    move |parents| {
                        // Build an ordered tree: node i attaches to an
                        // earlier node parents[i] % (i+1).
                        let mut nodes: Vec<SyntaxTree> =
                            labels.iter().map(|l| SyntaxTree::leaf(*l)).collect();
                        for i in (0..labels.len()).rev() {
                            let parent = parents[i] % (i + 1);
                            let child = nodes.remove(i);
                            if parent == 0 {
                                nodes.insert(i, child); // reattach at root level
                            } else {
                                nodes[parent - 1].children.push(child);
                            }
                        }
                        SyntaxTree::node(root_label, nodes)
                    },
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ted_is_symmetric_and_identity_is_zero(
        t1 in tree_strategy(5),
        t2 in tree_strategy(5),
    ) {
        let unit = EditCosts::unit();
        let d12 = tree_edit_distance(&t1, &t2, &unit);
        let d21 = tree_edit_distance(&t2, &t1, &unit);
        prop_assert_eq!(d12, d21);
        prop_assert_eq!(tree_edit_distance(&t1, &t1, &unit), 0.0);
        // Zero distance only between identical-shaped, identically labeled
        // trees (structural equality in this representation).
        if d12 == 0.0 {
            prop_assert_eq!(&t1, &t2);
        }
        // Distance never exceeds wiping one tree and writing the other.
        prop_assert!(d12 <= (tree_size(&t1) + tree_size(&t2)) as f64);
    }

    #[test]
    fn ted_satisfies_triangle_inequality(
        a in tree_strategy(4),
        b in tree_strategy(4),
        c in tree_strategy(4),
    ) {
        let unit = EditCosts::unit();
        let ab = tree_edit_distance(&a, &b, &unit);
        let bc = tree_edit_distance(&b, &c, &unit);
        let ac = tree_edit_distance(&a, &c, &unit);
        prop_assert!(ac <= ab + bc + 1e-9, "{} > {} + {}", ac, ab, bc);
    }

    #[test]
    fn bleu_identity_and_range(text in "[a-z]{1,8}( [a-z]{1,8}){0,9}") {
        let identity = bleu(&text, &text).unwrap().value();
        prop_assert_eq!(identity, 1.0);
        let other = "completely unrelated reference words";
        let score = bleu(&text, other).unwrap().value();
        prop_assert!((0.0..=1.0).contains(&score));
    }

    #[test]
    fn rank_tests_ignore_monotone_transforms(
        raw in proptest::collection::vec(
            proptest::collection::vec(0.0f64..1.0, 4),
            3..6,
        ),
    ) {
        let cube = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            m.iter()
                .map(|row| row.iter().map(|x| x * x * x).collect())
                .collect()
        };
        let original = friedman(&RankMatrix::new(raw.clone()).unwrap()).unwrap();
        let transformed = friedman(&RankMatrix::new(cube(&raw)).unwrap()).unwrap();
        prop_assert!((original.statistic - transformed.statistic).abs() < 1e-12);
        prop_assert!((original.p_value - transformed.p_value).abs() < 1e-12);

        let kw_orig = kruskal_wallis(&raw).unwrap();
        let kw_cubed = kruskal_wallis(&cube(&raw)).unwrap();
        prop_assert!((kw_orig.statistic - kw_cubed.statistic).abs() < 1e-12);
        prop_assert!((kw_orig.p_value - kw_cubed.p_value).abs() < 1e-12);
    }

    #[test]
    fn permuting_treatment_labels_keeps_the_statistic(
        raw in proptest::collection::vec(
            proptest::collection::vec(0.0f64..1.0, 4),
            3..6,
        ),
    ) {
        let permuted: Vec<Vec<f64>> = raw
            .iter()
            .map(|row| vec![row[2], row[0], row[3], row[1]])
            .collect();
        let original = friedman(&RankMatrix::new(raw).unwrap()).unwrap();
        let shuffled = friedman(&RankMatrix::new(permuted).unwrap()).unwrap();
        prop_assert!((original.statistic - shuffled.statistic).abs() < 1e-12);
    }
}
