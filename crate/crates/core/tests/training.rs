use kgmod_core::kgstore::{EntityEmbeddingTable, IdTriple, Triple, TripleStore};
use kgmod_core::modality::{generate, pretrain_toy_lm, AdapterModel, LmConfig, Mode, PretrainConfig, ToyLm, Vocab};
use kgmod_core::seeded_rng;
use kgmod_core::synth::World;
use kgmod_core::text2graph::{recall_at_k, train_mapper, MapperConfig, MapperModel, MapperShape, SpanExample};
use kgmod_core::transe::{link_prediction, negative_sample, train, TranseConfig, TranseModel};
use rand::Rng;

fn small_shape() -> MapperShape {
    MapperShape { buckets: 64, hidden: 16, kg_dim: 8, hash_seed: 3 }
}

fn example(tokens: &[&str], qid: &str, target: Vec<f64>) -> SpanExample {
    SpanExample { tokens: tokens.iter().map(|s| s.to_string()).collect(), qid: qid.into(), target }
}

#[test]
fn mapper_overfits_a_single_span() {
    let mut model = MapperModel::new(small_shape(), 42).unwrap();
    let target: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) / 4.0).collect();
    let ex = example(&["the", "river", "runs"], "Q1", target.clone());
    let cfg = MapperConfig { lr: 1e-2, weight_decay: 0.0, epochs: 600, batch_size: 1, ..MapperConfig::default() };
    let trace = train_mapper(&mut model, std::slice::from_ref(&ex), &cfg).unwrap();
    let pred = model.encode(&ex.tokens).unwrap();
    let mse = pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / 8.0;
    assert!(mse < 1e-3, "mse {mse}");
    assert!(trace.last().unwrap() < &trace[0]);
}

#[test]
fn mapper_forward_matches_explicit_loops() {
    let model = MapperModel::new(small_shape(), 9).unwrap();
    let tokens = ["a", "b", "a", "river"];
    let bag = model.bag(&tokens);
    assert!((bag.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
    let (h, k) = (small_shape().hidden, small_shape().kg_dim);
    let mut hidden = vec![0.0; h];
    for (j, v) in hidden.iter_mut().enumerate() {
        let mut s = model.b_in.data()[j];
        for &(b, w) in &bag {
            s += w * model.w_in.data()[b * h + j];
        }
        *v = s.tanh();
    }
    let mut out = vec![0.0; k];
    for (o, v) in out.iter_mut().enumerate() {
        *v = model.b_out.data()[o];
        for (j, x) in hidden.iter().enumerate() {
            *v += x * model.w_out.data()[j * k + o];
        }
    }
    let got = model.encode(&tokens).unwrap();
    for (a, b) in got.iter().zip(&out) {
        assert!((a - b).abs() < 1e-12);
    }
    let shuffled = model.encode(&["river", "a", "a", "b"]).unwrap();
    assert_eq!(got, shuffled);
}

#[test]
fn mapper_training_is_deterministic() {
    let examples: Vec<SpanExample> = (0..20)
        .map(|i| example(&["w", if i % 2 == 0 { "x" } else { "y" }], &format!("Q{i}"), vec![i as f64 / 20.0; 8]))
        .collect();
    let cfg = MapperConfig { lr: 1e-3, epochs: 3, batch_size: 4, ..MapperConfig::default() };
    let run = || {
        let mut m = MapperModel::new(small_shape(), 1).unwrap();
        let trace = train_mapper(&mut m, &examples, &cfg).unwrap();
        (trace, m)
    };
    let (ta, ma) = run();
    let (tb, mb) = run();
    assert_eq!(ta, tb);
    assert_eq!(ma, mb);
}

fn world_train_store() -> TripleStore {
    let world = World::generate(10, 42);
    let (train_set, _) = world.split(0.2, 42);
    let mut store = TripleStore::new();
    for t in &train_set {
        store.insert(t);
    }
    store
}

fn chain_store() -> TripleStore {
    let mut store = TripleStore::new();
    for i in 0..49 {
        store.insert(&Triple::new(&format!("E{i}"), &format!("r{}", i % 5), &format!("E{}", i + 1)));
    }
    store
}

#[test]
fn transe_loss_falls_and_entities_stay_on_the_sphere() {
    let store = chain_store();
    assert_eq!((store.entities().len(), store.relations().len()), (50, 5));
    let cfg = TranseConfig::default();
    assert_eq!((cfg.epochs, cfg.seed), (200, 42));
    let (model, trace) = train(&store, &cfg).unwrap();
    assert_eq!(trace.len(), 200);
    assert!(trace[199] < trace[0], "{} vs {}", trace[199], trace[0]);
    // Fresh negatives every epoch make single epochs noisy, so the trend is
    // read off 10-epoch means.
    let blocks: Vec<f64> = trace.chunks(10).map(|c| c.iter().sum::<f64>() / 10.0).collect();
    let rises = blocks.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises * 10 < blocks.len(), "{rises} rising blocks in {blocks:?}");
    for t in store.triples() {
        let d = model.score_ids(t);
        assert!(d >= 0.0);
    }
    for i in 0..model.entities.len() {
        let n = model.entity_emb.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9, "row {i} norm {n}");
    }
    let (again, trace2) = train(&store, &cfg).unwrap();
    assert_eq!(trace, trace2);
    assert_eq!(model.entity_emb.data(), again.entity_emb.data());
    assert_eq!(model.relation_emb.data(), again.relation_emb.data());
}

#[test]
fn corruption_hits_head_and_tail_evenly() {
    let store = world_train_store();
    let t = store.triples()[0];
    let mut rng = seeded_rng(5);
    let (mut heads, mut tails) = (0usize, 0usize);
    for _ in 0..10_000 {
        let c = negative_sample(&store, &t, &mut rng);
        assert_eq!(c.relation, t.relation);
        match (c.head != t.head, c.tail != t.tail) {
            (true, false) => heads += 1,
            (false, true) => tails += 1,
            other => panic!("corrupted {other:?}"),
        }
        assert!(!store.contains_ids(&c));
    }
    // Binomial(10000, 1/2): sigma = 50.
    assert!(heads.abs_diff(5000) <= 150, "{heads} heads");
    assert_eq!(heads + tails, 10_000);
}

#[test]
fn untrained_embeddings_rank_near_the_middle() {
    let n = 1000;
    let mut store = TripleStore::new();
    for i in 0..n {
        store.insert(&Triple::new(&format!("E{i}"), "next", &format!("E{}", (i + 1) % n)));
    }
    let cfg = TranseConfig::default();
    let model = TranseModel::init(&store, &cfg, &mut seeded_rng(11));
    let test: Vec<Triple> = (0..n)
        .step_by(5)
        .map(|i| Triple::new(&format!("E{i}"), "next", &format!("E{}", (i + 1) % n)))
        .collect();
    let m = link_prediction(&model, &store, &test).unwrap();
    assert_eq!(m.queries, 2 * test.len());
    // Uniform ranks over 1000 candidates average 500.5.
    assert!((m.mean_rank - 500.5).abs() <= 50.05, "mean rank {}", m.mean_rank);
}

#[test]
fn unrelated_predictions_hit_at_chance() {
    let n = 100;
    let mut table = EntityEmbeddingTable::new(8).unwrap();
    let mut rng = seeded_rng(21);
    for i in 0..n {
        table.insert(&format!("Q{i}"), (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    }
    let model = MapperModel::new(small_shape(), 4).unwrap();
    let queries = 4000;
    let heldout: Vec<SpanExample> = (0..queries)
        .map(|i| {
            let q = format!("Q{}", rng.gen_range(0..n));
            let target = table.get(&q).unwrap().to_vec();
            example(&[&format!("tok{i}"), &format!("w{}", i % 37)], &q, target)
        })
        .collect();
    let r = recall_at_k(&heldout, &table, 1, |ex| model.encode(&ex.tokens)).unwrap();
    let p = 1.0 / n as f64;
    let sigma = (p * (1.0 - p) / queries as f64).sqrt();
    assert!((r - p).abs() <= 3.0 * sigma, "recall@1 {r}");
}

fn tiny_config() -> LmConfig {
    LmConfig { d_model: 16, n_layers: 2, n_heads: 2, d_ff: 32, context: 16 }
}

#[test]
fn lm_memorizes_a_tiny_corpus() {
    let vocab = Vocab::build(["a b c"], 10).unwrap();
    let doc = vocab.encode("a b c");
    let docs = vec![doc; 8];
    let pre = PretrainConfig { lr: 1e-2, epochs: 60, batch_size: 4, ..PretrainConfig::default() };
    let (lm, trace) = pretrain_toy_lm(vocab, &docs, &docs[..1], tiny_config(), &pre).unwrap();
    assert!(lm.is_frozen());
    let val = *trace.val.last().unwrap();
    assert!(val < 0.1, "val loss {val}");
}

#[test]
fn lm_hash_depends_only_on_parameters() {
    let vocab = Vocab::build(["a b c"], 10).unwrap();
    let a = ToyLm::new(tiny_config(), vocab.clone(), 1).unwrap();
    let b = ToyLm::new(tiny_config(), vocab.clone(), 1).unwrap();
    let c = ToyLm::new(tiny_config(), vocab, 2).unwrap();
    assert_eq!(a.param_hash(), b.param_hash());
    assert_ne!(a.param_hash(), c.param_hash());
}

#[test]
fn generation_edge_cases() {
    let vocab = Vocab::build(["a b c d"], 10).unwrap();
    let mut lm = ToyLm::new(tiny_config(), vocab, 3).unwrap();
    lm.freeze();
    let adapter = AdapterModel::new(4, 16, 5).unwrap();
    let prompt = lm.vocab.encode("a b");
    let kg = vec![vec![0.3, -0.1, 0.7, 0.2]];
    assert!(generate(&lm, &adapter, &kg, &prompt, 0, Mode::WithKg).unwrap().is_empty());
    let plain = generate(&lm, &adapter, &kg, &prompt, 6, Mode::Plain).unwrap();
    let other_kg = vec![vec![9.0, 9.0, 9.0, 9.0]; 3];
    assert_eq!(plain, generate(&lm, &adapter, &other_kg, &prompt, 6, Mode::Plain).unwrap());
    assert_eq!(plain, generate(&lm, &adapter, &[], &prompt, 6, Mode::Plain).unwrap());
    let with = generate(&lm, &adapter, &kg, &prompt, 6, Mode::WithKg).unwrap();
    assert_eq!(with, generate(&lm, &adapter, &kg, &prompt, 6, Mode::WithKg).unwrap());
    assert!(plain.len() <= 6 && with.len() <= 6);
}

#[test]
fn distance_orders_scores() {
    let mut store = TripleStore::new();
    store.insert(&Triple::new("a", "r", "b"));
    store.insert(&Triple::new("b", "r", "c"));
    let cfg = TranseConfig { dim: 4, ..TranseConfig::default() };
    let mut model = TranseModel::init(&store, &cfg, &mut seeded_rng(0));
    let a = model.entity_emb.row_slice(0).to_vec();
    let r = model.relation_emb.row_slice(0).to_vec();
    let exact: Vec<f64> = a.iter().zip(&r).map(|(x, y)| x + y).collect();
    model.entity_emb.row_slice_mut(1).copy_from_slice(&exact);
    assert!(model.score_ids(&IdTriple { head: 0, relation: 0, tail: 1 }) < 1e-12);
    assert!(model.score_ids(&IdTriple { head: 0, relation: 0, tail: 2 }) > 0.0);
}
