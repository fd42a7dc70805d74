//! Randomized invariant checks across the library.

use std::collections::BTreeMap;

use proptest::prelude::*;

use ctreport_core::augment::{nn_augment, NormalityRule};
use ctreport_core::corpus::{read_corpus, write_corpus_to, Corpus, Region, Report};
use ctreport_core::metrics::{bleu, meteor, rouge, triplet_f1};
use ctreport_core::triplets::{
    canonicalize, extract_triplets, split_sentences, CanonicalMap, Lexicon, MapRule, Triplet,
    TripletPattern,
};
use ctreport_core::vol3d::{
    mean_pool, token_count, GridShape, Kernel3, PatchDims, TokenGrid, VolumeDims,
};

fn region_strategy() -> impl Strategy<Value = Region> {
    prop::sample::select(vec![Region::Chest, Region::Abdomen, Region::Pelvis])
}

/// Region texts that survive trimming.
fn text_strategy() -> impl Strategy<Value = String> {
    "[ -~]{0,38}".prop_map(|s| format!("x{s}"))
}

fn report_strategy(index: usize) -> impl Strategy<Value = Report> {
    let entry = (region_strategy(), prop::option::of(text_strategy()), text_strategy());
    prop::collection::vec(entry, 1..4).prop_map(move |entries| {
        let mut report = Report::new(format!("r{index}"));
        for (region, findings, generated) in entries {
            // Every entry carries generated text, so each touched region
            // holds at least one text and the report stays valid.
            if let Some(f) = findings {
                report.findings.insert(region, f);
            }
            report.generated.insert(region, generated);
        }
        report
    })
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    prop::collection::vec(Just(()), 1..6)
        .prop_flat_map(|slots| {
            slots
                .iter()
                .enumerate()
                .map(|(i, _)| report_strategy(i))
                .collect::<Vec<_>>()
        })
        .prop_map(|reports| Corpus::from_reports(reports).expect("generated reports are valid"))
}

proptest! {
    #[test]
    fn prop_corpus_round_trip_identity(corpus in corpus_strategy()) {
        let mut buffer = Vec::new();
        write_corpus_to(&corpus, &mut buffer).expect("write");
        let reread = read_corpus(buffer.as_slice()).expect("read back");
        prop_assert_eq!(reread, corpus);
    }
}

fn pattern_strategy(tag: &'static str) -> impl Strategy<Value = TripletPattern> {
    let word = prop::sample::select(vec!["alpha", "beta", "gamma", "delta"]);
    (word.clone(), word, any::<bool>()).prop_map(move |(e, p, drop_position)| {
        if drop_position {
            TripletPattern { entity: format!("{tag} {e}"), position: String::new() }
        } else {
            TripletPattern { entity: format!("{tag} {e}"), position: p.to_string() }
        }
    })
}

fn map_strategy() -> impl Strategy<Value = CanonicalMap> {
    // Source and target patterns live in disjoint namespaces, so every
    // target is already a fixed point and construction cannot fail.
    prop::collection::vec((pattern_strategy("from"), pattern_strategy("to")), 0..5).prop_map(
        |pairs| {
            let rules = pairs.into_iter().map(|(from, to)| MapRule { from, to }).collect();
            CanonicalMap::new(rules).expect("targets are fixed points")
        },
    )
}

fn triplet_strategy() -> impl Strategy<Value = Triplet> {
    let field = prop::sample::select(vec![
        "from alpha",
        "from beta",
        "to gamma",
        "alpha",
        "stray",
        "",
    ]);
    (field.clone(), field, any::<bool>()).prop_filter_map(
        "triplet needs one non-empty field",
        |(e, p, exist)| Triplet::new(e, p, exist).ok(),
    )
}

proptest! {
    #[test]
    fn prop_canonicalize_is_idempotent(
        map in map_strategy(),
        triplet in triplet_strategy(),
    ) {
        let once = canonicalize(&triplet, &map);
        let twice = canonicalize(&once, &map);
        prop_assert_eq!(once, twice);
    }
}

fn demo_lexicon() -> Lexicon {
    Lexicon::new(
        vec![
            ("nodule".into(), "nodule".into()),
            ("pleural effusion".into(), "effusion".into()),
        ],
        vec![("lung".into(), "lung".into()), ("liver".into(), "liver".into())],
        vec!["no".into(), "without".into()],
    )
    .expect("static lexicon is valid")
}

proptest! {
    /// A negation cue before the entity flips exist; otherwise it stays true.
    #[test]
    fn prop_negation_cue_controls_exist(
        negated in any::<bool>(),
        entity in prop::sample::select(vec!["nodule", "pleural effusion"]),
        position in prop::sample::select(vec!["lung", "liver"]),
        cue in prop::sample::select(vec!["no", "without"]),
        filler in prop::collection::vec(prop::sample::select(vec!["mild", "seen", "the"]), 0..3),
    ) {
        let filler = if filler.is_empty() { String::new() } else { format!("{} ", filler.join(" ")) };
        let sentence = if negated {
            format!("{cue} {filler}{entity} in the {position}.")
        } else {
            format!("{filler}{entity} in the {position}.")
        };
        let triplets = extract_triplets(&sentence, &demo_lexicon());
        prop_assert_eq!(triplets.len(), 1, "sentence: {}", sentence);
        prop_assert_eq!(triplets[0].exist, !negated, "sentence: {}", sentence);
    }

    /// Splitting well-formed sentences returns exactly those sentences.
    #[test]
    fn prop_split_recovers_well_formed_sentences(
        sentences in prop::collection::vec(
            prop::collection::vec("[a-z]{1,6}", 1..5).prop_map(|w| format!("{}.", w.join(" "))),
            1..5,
        ),
    ) {
        let text = sentences.join(" ");
        prop_assert_eq!(split_sentences(&text), sentences);
    }

    /// Splitting never loses alphanumeric content, for arbitrary input.
    #[test]
    fn prop_split_preserves_alphanumeric_stream(text in "[ -~]{0,60}") {
        let keep = |s: &str| s.chars().filter(|c| c.is_alphanumeric()).collect::<String>();
        let joined = split_sentences(&text).concat();
        prop_assert_eq!(keep(&joined), keep(&text));
    }
}

fn normality_rule_pool() -> Vec<NormalityRule> {
    let rule = |keywords: &[&str], finding: &str| NormalityRule {
        region: Region::Chest,
        required_keywords: keywords.iter().map(|k| k.to_string()).collect(),
        normal_finding: finding.to_string(),
    };
    vec![
        rule(&["heart"], "The heart size is normal."),
        rule(&["pleural", "effusion"], "No pleural effusion is seen."),
        rule(&["trachea"], "The trachea is midline."),
        rule(&["thyroid"], "The thyroid is unremarkable."),
        rule(&["lymph", "node"], "No enlarged lymph node is present."),
    ]
}

proptest! {
    /// Running NN a second time never appends anything further.
    #[test]
    fn prop_nn_augmentation_is_idempotent(
        mask in prop::collection::vec(any::<bool>(), 5),
        words in prop::collection::vec(
            prop::sample::select(vec!["heart", "lungs", "clear", "effusion", "stable"]),
            1..6,
        ),
    ) {
        let rules: Vec<NormalityRule> = normality_rule_pool()
            .into_iter()
            .zip(&mask)
            .filter(|(_, keep)| **keep)
            .map(|(r, _)| r)
            .collect();
        let text = format!("{}.", words.join(" "));
        let (once, _) = nn_augment(&text, Region::Chest, &rules).expect("first pass");
        let (twice, appends) = nn_augment(&once, Region::Chest, &rules).expect("second pass");
        prop_assert!(appends.is_empty(), "second pass appended: {:?}", appends);
        prop_assert_eq!(&twice, &once);
        // The input text is always a verbatim prefix of the output.
        prop_assert!(once.starts_with(&text));
    }
}

proptest! {
    /// Doubling one axis (with divisibility preserved) doubles the tokens.
    #[test]
    fn prop_token_count_is_multiplicative(
        pd in 1usize..6, ph in 1usize..6, pw in 1usize..6,
        kd in 1usize..6, kh in 1usize..6, kw in 1usize..6,
    ) {
        let patch = PatchDims::new(pd, ph, pw).unwrap();
        let vol = VolumeDims::new(pd * kd, ph * kh, pw * kw).unwrap();
        let doubled = VolumeDims::new(2 * pd * kd, ph * kh, pw * kw).unwrap();
        let base = token_count(vol, patch).unwrap();
        prop_assert_eq!(base, kd * kh * kw);
        prop_assert_eq!(token_count(doubled, patch).unwrap(), 2 * base);
    }

    /// Mean pooling is linear in the token data.
    #[test]
    fn prop_mean_pool_is_linear(
        kd in 1usize..4, kh in 1usize..4, kw in 1usize..4,
        nd in 1usize..3, nh in 1usize..3, nw in 1usize..3,
        dim in 1usize..5,
        seed_x in any::<u64>(),
        seed_y in any::<u64>(),
    ) {
        let shape = GridShape::new(kd * nd, kh * nh, kw * nw).unwrap();
        let pool = Kernel3::new(kd, kh, kw).unwrap();
        let x = TokenGrid::seeded(shape, dim, seed_x).unwrap();
        let y = TokenGrid::seeded(shape, dim, seed_y).unwrap();
        let sum = TokenGrid::from_lattice(shape, x.data() + y.data()).unwrap();
        let lhs = mean_pool(&sum, pool).unwrap();
        let rhs = mean_pool(&x, pool).unwrap().data() + mean_pool(&y, pool).unwrap().data();
        for (l, r) in lhs.data().iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() < 1e-9);
        }
    }
}

fn token_seq() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["lung", "clear", "no", "nodule", "seen", "3"])
            .prop_map(str::to_string),
        1..12,
    )
}

proptest! {
    /// Every text metric scores an identical pair at its maximum.
    #[test]
    fn prop_identity_scores_are_maximal(tokens in token_seq()) {
        let b = bleu(&tokens, std::slice::from_ref(&tokens), 4).unwrap();
        prop_assert!((b - 1.0).abs() < 1e-12);
        let r = rouge(&tokens, &tokens);
        prop_assert!((r.rouge1_f - 1.0).abs() < 1e-12);
        prop_assert!((r.rouge_l_f - 1.0).abs() < 1e-12);
        let m = meteor(&tokens, &tokens);
        let expected = 1.0 - 0.5 / (tokens.len() as f64).powi(3);
        prop_assert!((m - expected).abs() < 1e-12);
    }

    /// Scores never leave [0, 1].
    #[test]
    fn prop_scores_stay_in_unit_interval(pred in token_seq(), reference in token_seq()) {
        let b = bleu(&pred, std::slice::from_ref(&reference), 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&b), "bleu = {}", b);
        let r = rouge(&pred, &reference);
        prop_assert!((0.0..=1.0).contains(&r.rouge1_f));
        prop_assert!((0.0..=1.0).contains(&r.rouge_l_f));
        let m = meteor(&pred, &reference);
        prop_assert!((0.0..=1.0).contains(&m), "meteor = {}", m);
    }
}

fn findings_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (
            prop::sample::select(vec!["nodule", "pleural effusion"]),
            prop::sample::select(vec!["lung", "liver"]),
            any::<bool>(),
        ),
        0..4,
    )
    .prop_map(|items| {
        let sentences: Vec<String> = items
            .into_iter()
            .map(|(e, p, neg)| {
                if neg {
                    format!("No {e} in the {p}.")
                } else {
                    format!("A {e} in the {p}.")
                }
            })
            .collect();
        if sentences.is_empty() { "Unremarkable study.".to_string() } else { sentences.join(" ") }
    })
}

proptest! {
    /// Swapping prediction and reference swaps precision and recall.
    #[test]
    fn prop_triplet_scores_swap_symmetrically(a in findings_text(), b in findings_text()) {
        let lexicon = demo_lexicon();
        let map = CanonicalMap::empty();
        let fwd = triplet_f1(&a, &b, &lexicon, &map);
        let rev = triplet_f1(&b, &a, &lexicon, &map);
        prop_assert_eq!(fwd.precision, rev.recall);
        prop_assert_eq!(fwd.recall, rev.precision);
        prop_assert_eq!(fwd.f1, rev.f1);
    }
}

/// Region maps in serialized corpora stay in canonical order even when
/// reports were assembled in arbitrary insertion order.
#[test]
fn test_written_regions_follow_canonical_order() {
    let mut report = Report::new("r0");
    report.generated.insert(Region::Pelvis, "pelvis text".into());
    report.generated.insert(Region::Chest, "chest text".into());
    report.findings = BTreeMap::new();
    let corpus = Corpus::from_reports(vec![report]).unwrap();
    let mut buffer = Vec::new();
    write_corpus_to(&corpus, &mut buffer).unwrap();
    let text = String::from_utf8(buffer).unwrap();
    let chest_at = text.find("chest").unwrap();
    let pelvis_at = text.find("pelvis").unwrap();
    assert!(chest_at < pelvis_at, "chest must precede pelvis:\n{text}");
}
