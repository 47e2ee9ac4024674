//! Finite-difference gradient suite over every autodiff op and the three
//! trained models (TransE hinge, mapper MSE, adapter loss through the
//! frozen transformer).

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::gradcheck::{check_gradients, GradCheck};
use crate::autodiff::{AutodiffError, Graph, NodeId};
use crate::kgstore::IdTriple;
use crate::modality::{adapter_loss, AdapterExample, AdapterNodes, LmConfig, Mode, ModalityError, ToyLm, Vocab};
use crate::text2graph::{MapperModel, MapperShape};
use crate::transe::{hinge_loss, NormOrder};
use crate::{seeded_rng, Tensor};

/// Gradient agreement required of every case.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Entries probed per tensor.
pub const MAX_PER_TENSOR: usize = 6;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let mut t = random(shape, seed);
    for v in t.data_mut() {
        *v = 0.5 + v.abs();
    }
    t
}

/// `sum(out * w)` with a fixed random `w`, so no output entry is ignored.
fn weighted(g: &mut Graph, out: NodeId, seed: u64) -> Result<NodeId, AutodiffError> {
    let w = g.constant(&random(g.shape(out), seed));
    let y = g.mul(out, w)?;
    g.sum(y)
}

type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>>;

fn op_case(name: &'static str, params: Vec<Tensor>, build: Build) -> (&'static str, Vec<Tensor>, Build) {
    (name, params, build)
}

fn unary(name: &'static str, f: fn(&mut Graph, NodeId) -> Result<NodeId, AutodiffError>) -> (&'static str, Vec<Tensor>, Build) {
    op_case(
        name,
        vec![random(&[3, 4], 11)],
        Box::new(move |g, p| {
            let y = f(g, p[0])?;
            weighted(g, y, 99)
        }),
    )
}

fn op_cases() -> Vec<(&'static str, Vec<Tensor>, Build)> {
    vec![
        op_case(
            "matmul",
            vec![random(&[3, 4], 1), random(&[4, 2], 2)],
            Box::new(|g, p| {
                let y = g.matmul(p[0], p[1])?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "add",
            vec![random(&[3, 4], 1), random(&[1, 4], 2)],
            Box::new(|g, p| {
                let y = g.add(p[0], p[1])?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "sub",
            vec![random(&[3, 4], 1), random(&[3, 4], 2)],
            Box::new(|g, p| {
                let y = g.sub(p[0], p[1])?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "mul",
            vec![random(&[3, 4], 1), random(&[3, 4], 2)],
            Box::new(|g, p| {
                let y = g.mul(p[0], p[1])?;
                weighted(g, y, 99)
            }),
        ),
        unary("relu", Graph::relu),
        unary("gelu", Graph::gelu),
        unary("tanh", Graph::tanh),
        unary("softmax", Graph::softmax),
        unary("l2_norm", Graph::l2_norm),
        unary("l1_norm", Graph::l1_norm),
        unary("transpose", Graph::transpose),
        unary("sum", Graph::sum),
        unary("mean", Graph::mean),
        op_case(
            "scale",
            vec![random(&[3, 4], 1)],
            Box::new(|g, p| {
                let y = g.scale(p[0], -2.5)?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "embedding_lookup",
            vec![random(&[5, 3], 1)],
            Box::new(|g, p| {
                let y = g.embedding_lookup(p[0], vec![4, 0, 4, 2])?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "embedding_bag",
            vec![random(&[6, 3], 1)],
            Box::new(|g, p| {
                let y = g.embedding_bag(p[0], vec![vec![(1, 0.5), (5, 0.5)], vec![(2, 1.0)], vec![(1, 0.25), (1, 0.75)]])?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "layer_norm",
            vec![random(&[3, 5], 1), positive(&[1, 5], 2), random(&[1, 5], 3)],
            Box::new(|g, p| {
                let y = g.layer_norm(p[0], p[1], p[2])?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "cross_entropy_with_logits",
            vec![random(&[4, 5], 1)],
            Box::new(|g, p| g.cross_entropy_with_logits(p[0], vec![Some(2), None, Some(0), Some(4)])),
        ),
        op_case(
            "mse",
            vec![random(&[3, 4], 1), random(&[3, 4], 2)],
            Box::new(|g, p| g.mse(p[0], p[1])),
        ),
        op_case(
            "concat_rows",
            vec![random(&[2, 3], 1), random(&[1, 3], 2)],
            Box::new(|g, p| {
                let y = g.concat_rows(&[p[0], p[1], p[0]])?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "slice_rows",
            vec![random(&[5, 3], 1)],
            Box::new(|g, p| {
                let y = g.slice_rows(p[0], 1, 4)?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "concat_cols",
            vec![random(&[3, 2], 1), random(&[3, 1], 2)],
            Box::new(|g, p| {
                let y = g.concat_cols(&[p[0], p[1]])?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "slice_cols",
            vec![random(&[3, 5], 1)],
            Box::new(|g, p| {
                let y = g.slice_cols(p[0], 2, 5)?;
                weighted(g, y, 99)
            }),
        ),
        op_case(
            "mlp_mse",
            vec![random(&[4, 8], 42), random(&[1, 8], 43), random(&[8, 2], 44), random(&[1, 2], 45)],
            Box::new(|g, p| {
                let x = g.constant(&random(&[5, 4], 46));
                let t = g.constant(&random(&[5, 2], 47));
                let h = g.matmul(x, p[0])?;
                let h = g.add(h, p[1])?;
                let h = g.tanh(h)?;
                let y = g.matmul(h, p[2])?;
                let y = g.add(y, p[3])?;
                g.mse(y, t)
            }),
        ),
    ]
}

fn model_error(e: ModalityError) -> AutodiffError {
    match e {
        ModalityError::Autodiff(a) => a,
        other => panic!("adapter gradient case is malformed: {other}"),
    }
}

fn composite_cases() -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let positives = vec![
        IdTriple { head: 0, relation: 0, tail: 1 },
        IdTriple { head: 2, relation: 1, tail: 3 },
        IdTriple { head: 4, relation: 0, tail: 5 },
    ];
    let negatives = vec![
        IdTriple { head: 0, relation: 0, tail: 3 },
        IdTriple { head: 5, relation: 1, tail: 3 },
        IdTriple { head: 4, relation: 0, tail: 2 },
    ];
    let transe: Build = Box::new(move |g, p| hinge_loss(g, p[0], p[1], &positives, &negatives, 4.0, NormOrder::L2));

    let shape = MapperShape {
        buckets: 64,
        hidden: 16,
        kg_dim: 8,
        hash_seed: 3,
    };
    let mapper = MapperModel::new(shape, 42).expect("valid shape");
    let bags = vec![
        mapper.bag(&["paris", "is", "located", "in", "france"]),
        mapper.bag(&["the", "seine"]),
    ];
    let target = random(&[2, 8], 48);
    let mapper_params = mapper.params().into_iter().cloned().collect();
    let mapper_build: Build = Box::new(move |g, p| {
        let y = mapper.forward(g, &[p[0], p[1], p[2], p[3]], bags.clone())?;
        let t = g.constant(&target);
        g.mse(y, t)
    });

    let words = "paris is located in france . lyon is a city of france .";
    let vocab = Vocab::build([words], 100).expect("non-empty vocabulary");
    let text = vocab.encode(words);
    let n = text.len();
    let example = AdapterExample {
        text,
        kg: vec![random(&[1, 8], 50).data().to_vec(), random(&[1, 8], 51).data().to_vec()],
        entity: (0..n).map(|i| i % 3 == 0).collect(),
    };
    let mut lm = ToyLm::new(LmConfig::default(), vocab, 7).expect("valid LM config");
    lm.freeze();
    let adapter_params = vec![
        random(&[8, 64], 52),
        random(&[1, 64], 53),
        random(&[1, 64], 54),
        random(&[1, 64], 55),
    ];
    let adapter_build: Build = Box::new(move |g, p| {
        let lm_nodes = lm.leaves(g);
        let nodes = AdapterNodes {
            w: p[0],
            bias: p[1],
            e_start: p[2],
            e_end: p[3],
        };
        let (loss, _) = adapter_loss(g, &lm, &lm_nodes, &nodes, &[&example], Mode::WithKg, false)
            .map_err(model_error)?
            .expect("example has targets");
        Ok(loss)
    });

    vec![
        op_case("transe_hinge", vec![random(&[6, 4], 60), random(&[2, 4], 61)], transe),
        op_case("mapper_mse", mapper_params, mapper_build),
        op_case("adapter_through_lm", adapter_params, adapter_build),
    ]
}

/// Every op and composite model, with its worst relative error.
pub fn run() -> Result<Vec<(&'static str, GradCheck)>, AutodiffError> {
    op_cases()
        .into_iter()
        .chain(composite_cases())
        .map(|(name, params, build)| Ok((name, check_gradients(&params, MAX_PER_TENSOR, build)?)))
        .collect()
}

