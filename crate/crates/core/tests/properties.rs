use kgmod_core::autodiff::Graph;
use kgmod_core::corpus::{annotate, parse_wikitext, resolve_entities, AnnotatedDocument, EntityMention};
use kgmod_core::evalharness::{judge, template, EvalItem, TemplateId};
use kgmod_core::kgstore::{EntityEmbeddingTable, TitleIndex};
use kgmod_core::modality::{adapter_loss, inject, AdapterExample, AdapterModel, LmConfig, Mode, ToyLm, Vocab};
use kgmod_core::text::tokenize;
use kgmod_core::text2graph::{extract_spans, map_text, recall_at_k, MapperModel, MapperShape, SpanExample};
use kgmod_core::transe::{distance, NormOrder};
use kgmod_core::Tensor;
use proptest::prelude::*;

const TITLES: [&str; 4] = ["Paris", "Lyon Station", "Seine", "Nowhere"];

fn index() -> TitleIndex {
    let mut idx = TitleIndex::new();
    idx.insert_title("Paris", "Q90");
    idx.insert_title("Lyon Station", "Q456");
    idx.insert_title("Seine", "Q1471");
    idx.insert_redirect("City of Light", "Paris");
    idx
}

/// Wikitext pieces paired with the plain text they must render to, or
/// `None` for markup whose rendering is not asserted.
fn piece() -> impl Strategy<Value = (String, Option<(String, String)>)> {
    let word = "[a-z]{1,8}";
    prop_oneof![
        word.prop_map(|w| (format!("{w} "), None)),
        (0..TITLES.len()).prop_map(|i| (format!("[[{}]] ", TITLES[i]), Some((TITLES[i].to_string(), TITLES[i].to_string())))),
        (0..TITLES.len(), "[a-z]{1,6}( [a-z]{1,6})?").prop_map(|(i, a)| (
            format!("[[{}|{a}]] ", TITLES[i]),
            Some((TITLES[i].to_string(), a))
        )),
        Just(("[[City of Light|the capital]] ".to_string(), Some(("City of Light".to_string(), "the capital".to_string())))),
        word.prop_map(|w| (format!("'''{w}''' "), None)),
        word.prop_map(|w| (format!("{{{{cite|{w}=[[Paris]]}}}} "), None)),
        word.prop_map(|w| (format!("<ref name=\"{w}\" /> "), None)),
        Just(("[[Category:Places]] ".to_string(), None)),
        Just(("\n== Heading ==\n".to_string(), None)),
    ]
}

proptest! {
    #[test]
    fn spans_slice_to_their_anchors(pieces in prop::collection::vec(piece(), 0..24)) {
        let source: String = pieces.iter().map(|(s, _)| s.as_str()).collect();
        let expected: Vec<(String, String)> = pieces.iter().filter_map(|(_, l)| l.clone()).collect();
        let parsed = parse_wikitext(&source);
        prop_assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
        let got: Vec<(String, String)> = parsed
            .links
            .iter()
            .map(|l| (l.target_title.clone(), l.anchor_text.clone()))
            .collect();
        prop_assert_eq!(got, expected);
        for l in &parsed.links {
            prop_assert_eq!(&parsed.text[l.byte_span.0..l.byte_span.1], l.anchor_text.as_str());
        }
        let doc = annotate("d", &source, &index()).document;
        for m in &doc.mentions {
            for &(s, e) in &m.spans {
                let anchor = &doc.text[s..e];
                prop_assert!(parsed.links.iter().any(|l| l.anchor_text == anchor));
            }
        }
    }

    #[test]
    fn parsing_is_total(source in "[\\[\\]{}|'<>=/#: a-zA-Z\n\u{e9}\u{4e2d}]{0,200}") {
        let parsed = parse_wikitext(&source);
        for l in &parsed.links {
            let (s, e) = l.byte_span;
            prop_assert!(s <= e && e <= parsed.text.len());
            prop_assert!(parsed.text.is_char_boundary(s) && parsed.text.is_char_boundary(e));
            prop_assert_eq!(&parsed.text[s..e], l.anchor_text.as_str());
        }
        let _ = annotate("d", &source, &index());
    }

    #[test]
    fn resolution_keeps_only_indexed_entities(pieces in prop::collection::vec(piece(), 0..24)) {
        let source: String = pieces.iter().map(|(s, _)| s.as_str()).collect();
        let parsed = parse_wikitext(&source);
        let idx = index();
        let mentions = resolve_entities(&parsed.links, &idx);
        let codomain: Vec<&str> = idx.titles().map(|(_, q)| q).collect();
        let mut got: Vec<(usize, usize)> = Vec::new();
        for m in &mentions {
            prop_assert!(codomain.contains(&m.qid.as_str()));
            got.extend(m.spans.iter().copied());
        }
        let mut want: Vec<(usize, usize)> = parsed
            .links
            .iter()
            .filter(|l| idx.resolve(&l.target_title).is_some())
            .map(|l| l.byte_span)
            .collect();
        got.sort_unstable();
        want.sort_unstable();
        want.dedup();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn records_roundtrip_through_json(pieces in prop::collection::vec(piece(), 0..16)) {
        let source: String = pieces.iter().map(|(s, _)| s.as_str()).collect();
        let doc = annotate("d", &source, &index()).document;
        let json = serde_json::to_string(&doc).unwrap();
        let back: AnnotatedDocument = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn nearest_is_prefix_closed(seed in 0u64..1000, k in 1usize..20, extra in 0usize..20) {
        let table = random_table(20, 4, seed);
        let q = random_vec(4, seed ^ 0xabc);
        let short = table.nearest(&q, k).unwrap();
        let long = table.nearest(&q, (k + extra).min(20)).unwrap();
        prop_assert_eq!(&long[..k], &short[..]);
    }

    #[test]
    fn map_text_count_is_ceiling(n in 1usize..300, c in 1usize..64) {
        let model = MapperModel::new(MapperShape { buckets: 16, hidden: 4, kg_dim: 2, hash_seed: 0 }, 1).unwrap();
        let text = vec!["w"; n].join(" ");
        prop_assert_eq!(map_text(&model, &text, c).unwrap().len(), n.div_ceil(c));
    }

    #[test]
    fn judging_is_label_permutation_consistent(golds in prop::collection::vec(any::<bool>(), 1..40), verdicts in prop::collection::vec(any::<bool>(), 40)) {
        let tpl = template(TemplateId::TrueFalse8Shot);
        let items: Vec<EvalItem> = golds
            .iter()
            .enumerate()
            .map(|(i, &gold)| EvalItem { statement: format!("s{i}"), gold, topic: if i % 2 == 0 { "cities".into() } else { "facts".into() } })
            .collect();
        let flipped: Vec<EvalItem> = items.iter().map(|it| EvalItem { gold: !it.gold, ..it.clone() }).collect();
        let run = |items: &[EvalItem], flip: bool| {
            let mut i = 0;
            judge(items, tpl, Mode::Plain, |_, _| {
                let v = verdicts[i] ^ flip;
                i += 1;
                Ok::<_, ()>(format!("Your Judgement: {}", tpl.verdict_text(v)))
            }, |_| Ok(Vec::new())).unwrap()
        };
        let a = run(&items, false);
        let b = run(&flipped, true);
        prop_assert_eq!(a.average, b.average);
        let mean = a.topics.iter().map(|t| t.accuracy).sum::<f64>() / a.topics.len() as f64;
        prop_assert!((a.average - mean).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_normalize_and_cross_entropy_is_nonnegative(vals in prop::collection::vec(-30.0f64..30.0, 12), target in 0usize..4) {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::matrix(3, 4, vals));
        let s = g.softmax(x).unwrap();
        for row in g.value(s).chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ce = g.cross_entropy_with_logits(x, vec![Some(target), None, Some(3 - target)]).unwrap();
        prop_assert!(g.scalar(ce) >= 0.0);
    }

    #[test]
    fn transe_distance_is_zero_only_for_exact_translation(h in prop::collection::vec(-2.0f64..2.0, 3), r in prop::collection::vec(-2.0f64..2.0, 3), dt in prop::collection::vec(-1.0f64..1.0, 3)) {
        let exact: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a + b).collect();
        let t: Vec<f64> = exact.iter().zip(&dt).map(|(a, b)| a + b).collect();
        for norm in [NormOrder::L1, NormOrder::L2] {
            let d = distance(&h, &r, &t, norm);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, dt.iter().all(|&v| v == 0.0));
            prop_assert!(distance(&h, &r, &exact, norm) < 1e-12);
        }
    }

    #[test]
    fn span_windows_contain_the_mention(words in prop::collection::vec("[a-z]{1,6}", 1..60), at in 0usize..60, window in 0usize..25) {
        let at = at % words.len();
        let mut text = String::new();
        let mut span = (0, 0);
        for (i, w) in words.iter().enumerate() {
            if i > 0 { text.push(' '); }
            if i == at {
                span.0 = text.len();
                text.push_str("mention");
                span.1 = text.len();
            } else {
                text.push_str(w);
            }
        }
        let doc = AnnotatedDocument { doc_id: "d".into(), text, mentions: vec![EntityMention { qid: "Q1".into(), spans: vec![span] }] };
        let mut table = EntityEmbeddingTable::new(2).unwrap();
        table.insert("Q1", vec![0.0, 1.0]).unwrap();
        let ex = extract_spans(&doc, &table, window);
        prop_assert_eq!(ex.examples.len(), 1);
        let tokens = &ex.examples[0].tokens;
        prop_assert!(tokens.contains(&"mention".to_string()));
        prop_assert_eq!(tokens.len(), 1 + at.min(window) + (words.len() - 1 - at).min(window));
    }

    #[test]
    fn recall_is_monotone_in_k(seed in 0u64..500) {
        let table = random_table(10, 3, seed);
        let heldout: Vec<SpanExample> = table
            .iter()
            .map(|(q, v)| SpanExample { tokens: vec!["x".into()], qid: q.to_string(), target: v.to_vec() })
            .collect();
        let mut j = 0u64;
        let mut last = 0.0;
        for k in 1..=10 {
            let r = recall_at_k(&heldout, &table, k, |_| { j += 1; Ok(random_vec(3, seed * 31 + j % 10)) }).unwrap();
            prop_assert!(r >= last);
            last = r;
        }
        prop_assert_eq!(last, 1.0);
    }
}

fn random_vec(dim: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = kgmod_core::seeded_rng(seed);
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_table(n: usize, dim: usize, seed: u64) -> EntityEmbeddingTable {
    let mut t = EntityEmbeddingTable::new(dim).unwrap();
    for i in 0..n {
        t.insert(&format!("Q{}", i + 1), random_vec(dim, seed * 1000 + i as u64)).unwrap();
    }
    t
}

fn tiny_lm() -> ToyLm {
    let vocab = Vocab::build(["a b c d e f g"], 50).unwrap();
    let cfg = LmConfig { d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, context: 32 };
    let mut lm = ToyLm::new(cfg, vocab, 3).unwrap();
    lm.freeze();
    lm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn injected_length_is_text_plus_block(n_text in 0usize..10, n_kg in 0usize..5) {
        let lm = tiny_lm();
        let adapter = AdapterModel::new(3, 8, 1).unwrap();
        let kg = vec![vec![0.5; 3]; n_kg];
        let text = vec![5; n_text];
        let s = inject(&lm, &adapter, &kg, &text).unwrap();
        prop_assert_eq!(s.embeddings.shape()[0], n_text + n_kg + 2);
        prop_assert_eq!(s.kg_region, 0..n_kg + 2);
    }

    #[test]
    fn kg_vectors_never_change_which_positions_count(a in prop::collection::vec(-3.0f64..3.0, 6), b in prop::collection::vec(-3.0f64..3.0, 6)) {
        let lm = tiny_lm();
        let adapter = AdapterModel::new(3, 8, 1).unwrap();
        let count = |kg: Vec<f64>| {
            let ex = AdapterExample { text: vec![5, 6, 7, 2], kg: vec![kg[..3].to_vec(), kg[3..].to_vec()], entity: vec![true, false, true, false] };
            let mut g = Graph::new();
            let lm_nodes = lm.leaves(&mut g);
            let nodes = adapter.leaves(&mut g);
            let all = adapter_loss(&mut g, &lm, &lm_nodes, &nodes, &[&ex], Mode::WithKg, false).unwrap().unwrap().1;
            let ent = adapter_loss(&mut g, &lm, &lm_nodes, &nodes, &[&ex], Mode::WithKg, true).unwrap().unwrap().1;
            (all, ent)
        };
        prop_assert_eq!(count(a), (4, 2));
        prop_assert_eq!(count(b), (4, 2));
    }
}

#[test]
fn nearest_matches_brute_force_sort() {
    let table = random_table(50, 6, 7);
    let q = random_vec(6, 99);
    let mut oracle: Vec<(String, f64)> = table
        .iter()
        .map(|(id, v)| (id.to_string(), v.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()))
        .collect();
    oracle.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let got = table.nearest(&q, 50).unwrap();
    let ids = |v: &[(String, f64)]| v.iter().map(|(q, _)| q.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&got), ids(&oracle));
    for (g, o) in got.iter().zip(&oracle) {
        assert!((g.1 - o.1).abs() < 1e-12);
    }
}

#[test]
fn title_resolution_is_pure() {
    let idx = index();
    for t in ["Paris", "City of Light", "paris", "Nowhere"] {
        assert_eq!(idx.resolve(t), idx.resolve(t));
    }
    assert_eq!(idx.resolve("City of Light"), Some("Q90"));
    assert_eq!(idx.resolve("Nowhere"), None);
}

#[test]
fn tokens_index_back_into_text() {
    let text = "Lyon Station, near the Seine's bank.";
    for t in tokenize(text) {
        assert_eq!(text[t.start..t.end].to_lowercase(), t.text);
    }
}
