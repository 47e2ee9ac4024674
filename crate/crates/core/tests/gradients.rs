use kgmod_core::autodiff::gradcheck::check_gradients;
use kgmod_core::autodiff::{Graph, Op};
use kgmod_core::gradsuite::{self, GRAD_TOLERANCE};
use kgmod_core::{seeded_rng, Tensor};
use rand::Rng;

#[test]
fn every_case_matches_finite_differences() {
    let results = gradsuite::run().unwrap();
    for (name, r) in &results {
        assert!(r.checked > 0, "{name} checked nothing");
        assert!(r.max_rel_err < GRAD_TOLERANCE, "{name}: {} at {:?}", r.max_rel_err, r.worst);
    }
}

#[test]
fn suite_covers_every_op_and_model() {
    let names: Vec<&str> = gradsuite::run().unwrap().into_iter().map(|(n, _)| n).collect();
    let ops = [
        Op::MatMul,
        Op::Add,
        Op::Mul,
        Op::Relu,
        Op::Gelu,
        Op::Tanh,
        Op::EmbeddingLookup { ids: vec![] },
        Op::EmbeddingBag { bags: vec![] },
        Op::LayerNorm { eps: 1e-5 },
        Op::Softmax,
        Op::CrossEntropyWithLogits { targets: vec![] },
        Op::Mse,
        Op::L2Norm,
        Op::L1Norm,
        Op::ConcatRows,
        Op::SliceRows { start: 0, end: 0 },
        Op::ConcatCols,
        Op::SliceCols { start: 0, end: 0 },
        Op::Scale(1.0),
        Op::Transpose,
        Op::Sum,
        Op::Mean,
    ];
    for op in &ops {
        assert!(names.contains(&op.name()), "no gradient case for {}", op.name());
    }
    for model in ["transe_hinge", "mapper_mse", "adapter_through_lm"] {
        assert!(names.contains(&model));
    }
}

fn mlp_inputs() -> (Vec<Tensor>, Tensor, Tensor) {
    let mut rng = seeded_rng(42);
    let mut t = |r, c| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let params = vec![t(3, 5), t(1, 5), t(5, 2), t(1, 2)];
    (params, t(4, 3), t(4, 2))
}

#[test]
fn two_layer_mlp_seed_42() {
    let (params, x, y) = mlp_inputs();
    let r = check_gradients(&params, 100, |g, p| {
        let x = g.constant(&x);
        let y = g.constant(&y);
        let h = g.matmul(x, p[0])?;
        let h = g.add(h, p[1])?;
        let h = g.relu(h)?;
        let o = g.matmul(h, p[2])?;
        let o = g.add(o, p[3])?;
        g.mse(o, y)
    })
    .unwrap();
    assert_eq!(r.checked, 15 + 5 + 10 + 2);
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn backward_is_bit_deterministic() {
    let (params, x, _) = mlp_inputs();
    let grads = || {
        let mut g = Graph::new();
        let w = g.leaf(&params[0].clone().trainable());
        let x = g.constant(&x);
        let h = g.matmul(x, w).unwrap();
        let h = g.gelu(h).unwrap();
        let s = g.softmax(h).unwrap();
        let loss = g.cross_entropy_with_logits(s, vec![Some(0), Some(4), None, Some(2)]).unwrap();
        g.backward(loss).unwrap();
        g.grad(w).unwrap().to_vec()
    };
    let a = grads();
    let b = grads();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
