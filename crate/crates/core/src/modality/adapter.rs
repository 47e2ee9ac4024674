use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::lm::{tensor_hash, LmNodes, ToyLm};
use super::vocab::{BOS, EOS, UNK};
use super::ModalityError;
use crate::autodiff::{AdamW, AdamWConfig, AutodiffError, Graph, NodeId};
use crate::corpus::AnnotatedDocument;
use crate::kgstore::EntityEmbeddingTable;
use crate::text::tokenize;
use crate::{seeded_rng, Tensor};

/// Entities injected per document at most.
pub const MAX_KG_VECTORS: usize = 16;

/// Whether the KG block is part of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Plain,
    WithKg,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::WithKg => "with_kg",
        }
    }
}

/// Linear map from KG space into the LM embedding space plus the two
/// bracket embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    /// `[d_kg, d_llm]`
    pub w: Tensor,
    /// `[1, d_llm]`
    pub bias: Tensor,
    /// `[1, d_llm]`
    pub e_start: Tensor,
    /// `[1, d_llm]`
    pub e_end: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterNodes {
    pub w: NodeId,
    pub bias: NodeId,
    pub e_start: NodeId,
    pub e_end: NodeId,
}

impl AdapterModel {
    pub fn new(d_kg: usize, d_llm: usize, seed: u64) -> Result<Self, ModalityError> {
        if d_kg == 0 || d_llm == 0 {
            return Err(ModalityError::Config("adapter extents must be positive"));
        }
        let mut rng = seeded_rng(seed);
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::matrix(rows, cols, data).trainable()
        };
        Ok(Self {
            w: uniform(d_kg, d_llm, 1.0 / libm::sqrt(d_kg as f64)),
            bias: Tensor::zeros(&[1, d_llm]).trainable(),
            e_start: uniform(1, d_llm, 0.05),
            e_end: uniform(1, d_llm, 0.05),
        })
    }

    pub fn from_params(tensors: Vec<Tensor>) -> Result<Self, ModalityError> {
        let [w, bias, e_start, e_end]: [Tensor; 4] = tensors
            .try_into()
            .map_err(|_| ModalityError::Checkpoint("adapter needs four tensors"))?;
        let (Some((_, d)), Some((1, db)), Some((1, ds)), Some((1, de))) =
            (w.dims2(), bias.dims2(), e_start.dims2(), e_end.dims2())
        else {
            return Err(ModalityError::Checkpoint("adapter tensors must be matrices"));
        };
        if db != d || ds != d || de != d {
            return Err(ModalityError::Checkpoint("adapter widths disagree"));
        }
        let mut a = Self { w, bias, e_start, e_end };
        for p in a.params_mut() {
            p.set_requires_grad(true);
        }
        Ok(a)
    }

    pub fn d_kg(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn d_llm(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [&self.w, &self.bias, &self.e_start, &self.e_end]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w, &mut self.bias, &mut self.e_start, &mut self.e_end]
    }

    pub fn param_hash(&self) -> [u8; 32] {
        tensor_hash(self.params())
    }

    pub fn leaves(&self, g: &mut Graph) -> AdapterNodes {
        AdapterNodes {
            w: g.leaf(&self.w),
            bias: g.leaf(&self.bias),
            e_start: g.leaf(&self.e_start),
            e_end: g.leaf(&self.e_end),
        }
    }

    fn check(&self, lm: &ToyLm, kg: &[Vec<f64>]) -> Result<(), ModalityError> {
        if self.d_llm() != lm.config.d_model {
            return Err(ModalityError::Config("adapter width differs from the LM"));
        }
        if let Some(v) = kg.iter().find(|v| v.len() != self.d_kg()) {
            return Err(ModalityError::KgDim {
                expected: self.d_kg(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// `[e_start][W kg + b ...][e_end]` followed by the text embeddings, and
/// the row range of the bracketed block.
pub fn inject_nodes(
    g: &mut Graph,
    lm: &ToyLm,
    lm_nodes: &LmNodes,
    adapter: &AdapterNodes,
    kg: &[Vec<f64>],
    text: &[usize],
) -> Result<(NodeId, Range<usize>), ModalityError> {
    let mut parts = vec![adapter.e_start];
    if !kg.is_empty() {
        let d_kg = kg[0].len();
        let flat = kg.iter().flatten().copied().collect();
        let m = g.constant(&Tensor::matrix(kg.len(), d_kg, flat));
        let y = g.matmul(m, adapter.w)?;
        parts.push(g.add(y, adapter.bias)?);
    }
    parts.push(adapter.e_end);
    if !text.is_empty() {
        parts.push(lm.embed(g, lm_nodes, text)?);
    }
    let seq = g.concat_rows(&parts)?;
    Ok((seq, 0..kg.len() + 2))
}

/// Input embedding matrix with the KG block in front of the text.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedSequence {
    pub embeddings: Tensor,
    pub kg_region: Range<usize>,
}

pub fn inject(
    lm: &ToyLm,
    adapter: &AdapterModel,
    kg: &[Vec<f64>],
    text: &[usize],
) -> Result<InjectedSequence, ModalityError> {
    adapter.check(lm, kg)?;
    let mut g = Graph::new();
    let lm_nodes = lm.leaves(&mut g);
    let a = adapter.leaves(&mut g);
    let (seq, kg_region) = inject_nodes(&mut g, lm, &lm_nodes, &a, kg, text)?;
    Ok(InjectedSequence {
        embeddings: g.tensor(seq),
        kg_region,
    })
}

/// One adapter training or evaluation document.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterExample {
    /// Token ids to predict, in order; the input is `BOS` followed by all
    /// but the last of them.
    pub text: Vec<usize>,
    /// Gold KG vectors of the document's entities.
    pub kg: Vec<Vec<f64>>,
    /// Marks tokens that belong to an entity mention.
    pub entity: Vec<bool>,
}

impl AdapterExample {
    fn input(&self) -> Vec<usize> {
        let mut x = Vec::with_capacity(self.text.len());
        x.push(BOS);
        x.extend_from_slice(&self.text[..self.text.len().saturating_sub(1)]);
        x
    }
}

/// Tokenizes each document with `lm`'s vocabulary, appends `EOS`, and
/// attaches table vectors for its entities (unique, first-appearance
/// order, capped). Texts are truncated to fit the context with the block.
pub fn adapter_examples<'a>(
    lm: &ToyLm,
    docs: impl IntoIterator<Item = &'a AnnotatedDocument>,
    table: &EntityEmbeddingTable,
) -> Vec<AdapterExample> {
    let mut out = Vec::new();
    for doc in docs {
        let mut kg = Vec::new();
        let mut seen = BTreeSet::new();
        let mut spans = Vec::new();
        for m in &doc.mentions {
            let Ok(v) = table.get(&m.qid) else { continue };
            spans.extend(m.spans.iter().copied());
            if kg.len() < MAX_KG_VECTORS && seen.insert(m.qid.as_str()) {
                kg.push(v.to_vec());
            }
        }
        let tokens = tokenize(&doc.text);
        let mut text: Vec<usize> = tokens.iter().map(|t| lm.vocab.id(&t.text).unwrap_or(UNK)).collect();
        let mut entity: Vec<bool> = tokens
            .iter()
            .map(|t| spans.iter().any(|&(s, e)| t.start < e && s < t.end))
            .collect();
        text.push(EOS);
        entity.push(false);
        let room = lm.config.context.saturating_sub(kg.len() + 2);
        text.truncate(room);
        entity.truncate(room);
        if !text.is_empty() {
            out.push(AdapterExample { text, kg, entity });
        }
    }
    out
}

/// Loss node over `examples`: mean cross-entropy over text targets, or
/// only over entity tokens when `entity_only`. `None` when no position
/// qualifies.
pub fn adapter_loss(
    g: &mut Graph,
    lm: &ToyLm,
    lm_nodes: &LmNodes,
    adapter: &AdapterNodes,
    examples: &[&AdapterExample],
    mode: Mode,
    entity_only: bool,
) -> Result<Option<(NodeId, usize)>, ModalityError> {
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    for ex in examples {
        let input = ex.input();
        let (x, prefix) = match mode {
            Mode::Plain => (lm.embed(g, lm_nodes, &input)?, 0),
            Mode::WithKg => {
                let (x, region) = inject_nodes(g, lm, lm_nodes, adapter, &ex.kg, &input)?;
                (x, region.end)
            }
        };
        logits.push(lm.forward(g, lm_nodes, x)?);
        targets.extend(core::iter::repeat_n(None, prefix));
        targets.extend(
            ex.text
                .iter()
                .zip(&ex.entity)
                .map(|(&t, &e)| (!entity_only || e).then_some(t)),
        );
    }
    let count = targets.iter().filter(|t| t.is_some()).count();
    if count == 0 {
        return Ok(None);
    }
    let all = g.concat_rows(&logits)?;
    Ok(Some((g.cross_entropy_with_logits(all, targets)?, count)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            weight_decay: 1e-3,
            epochs: 1,
            batch_size: 32,
            seed: 42,
        }
    }
}

/// Trains only the adapter tensors through the frozen LM with a cosine
/// schedule over the whole run. Returns the per-batch loss.
pub fn adapter_train(
    lm: &ToyLm,
    adapter: &mut AdapterModel,
    examples: &[AdapterExample],
    config: &AdapterConfig,
) -> Result<Vec<f64>, ModalityError> {
    if !lm.is_frozen() {
        return Err(ModalityError::NotFrozen);
    }
    if !(config.lr > 0.0) || !(config.weight_decay >= 0.0) || config.batch_size == 0 {
        return Err(ModalityError::Config("invalid adapter hyperparameters"));
    }
    if examples.is_empty() {
        return Err(ModalityError::EmptyCorpus);
    }
    for ex in examples {
        adapter.check(lm, &ex.kg)?;
    }
    let before = lm.param_hash();
    let mut rng = seeded_rng(config.seed);
    let steps = (examples.len().div_ceil(config.batch_size) * config.epochs) as u64;
    let mut opt = AdamW::new(AdamWConfig::new(config.lr, config.weight_decay).with_cosine(steps));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::new();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&AdapterExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let mut g = Graph::new();
            let lm_nodes = lm.leaves(&mut g);
            let a = adapter.leaves(&mut g);
            let step = opt.step_count();
            let loss = adapter_loss(&mut g, lm, &lm_nodes, &a, &batch, Mode::WithKg, false)
                .map_err(|e| match e {
                    ModalityError::Autodiff(AutodiffError::NonFinite { .. }) => {
                        ModalityError::NonFiniteLoss { step }
                    }
                    other => other,
                })?;
            let Some((loss, _)) = loss else { continue };
            trace.push(g.scalar(loss));
            g.backward(loss)?;
            let nodes = [a.w, a.bias, a.e_start, a.e_end];
            let mut params = adapter.params_mut();
            for (node, p) in nodes.iter().zip(params.iter_mut()) {
                p.zero_grad();
                g.accumulate_into(*node, p)?;
            }
            opt.step(&mut params)?;
        }
    }
    if lm.param_hash() != before {
        return Err(ModalityError::FrozenContract);
    }
    Ok(trace)
}

/// Mean cross-entropy over every text target, or over entity tokens only.
pub fn eval_loss(
    lm: &ToyLm,
    adapter: &AdapterModel,
    examples: &[AdapterExample],
    mode: Mode,
    entity_only: bool,
) -> Result<f64, ModalityError> {
    let (mut total, mut count) = (0.0, 0usize);
    for ex in examples {
        adapter.check(lm, &ex.kg)?;
        let mut g = Graph::new();
        let lm_nodes = lm.leaves(&mut g);
        let a = adapter.leaves(&mut g);
        if let Some((loss, n)) = adapter_loss(&mut g, lm, &lm_nodes, &a, &[ex], mode, entity_only)? {
            total += g.scalar(loss) * n as f64;
            count += n;
        }
    }
    if count == 0 {
        return Err(ModalityError::EmptyCorpus);
    }
    Ok(total / count as f64)
}

/// Greedy continuation of `prompt`. `Plain` ignores `kg` entirely.
pub fn generate(
    lm: &ToyLm,
    adapter: &AdapterModel,
    kg: &[Vec<f64>],
    prompt: &[usize],
    max_new: usize,
    mode: Mode,
) -> Result<Vec<usize>, ModalityError> {
    if prompt.is_empty() {
        return Err(ModalityError::EmptyPrompt);
    }
    let kg: &[Vec<f64>] = match mode {
        Mode::Plain => &[],
        Mode::WithKg => {
            adapter.check(lm, kg)?;
            kg
        }
    };
    let block = match mode {
        Mode::Plain => 0,
        Mode::WithKg => kg.len() + 2,
    };
    if block >= lm.config.context {
        return Err(ModalityError::SequenceTooLong {
            len: block + 1,
            max: lm.config.context,
        });
    }
    let mut text = vec![BOS];
    text.extend_from_slice(prompt);
    let mut out = Vec::new();
    while out.len() < max_new {
        let room = lm.config.context - block;
        let window = &text[text.len().saturating_sub(room)..];
        let mut g = Graph::new();
        let lm_nodes = lm.leaves(&mut g);
        let x = match mode {
            Mode::Plain => lm.embed(&mut g, &lm_nodes, window)?,
            Mode::WithKg => {
                let a = adapter.leaves(&mut g);
                inject_nodes(&mut g, lm, &lm_nodes, &a, kg, window)?.0
            }
        };
        let y = lm.forward(&mut g, &lm_nodes, x)?;
        let v = lm.vocab.len();
        let last = &g.value(y)[g.value(y).len() - v..];
        let next = argmax(last);
        out.push(next);
        if next == EOS {
            break;
        }
        text.push(next);
    }
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::super::lm::LmConfig;
    use super::super::vocab::{Vocab, SPECIALS};
    use super::*;
    use alloc::string::{String, ToString};

    fn setup() -> (ToyLm, AdapterModel) {
        let mut t: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        t.extend(["a", "b", "c"].iter().map(|s| s.to_string()));
        let cfg = LmConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            context: 16,
        };
        let mut lm = ToyLm::new(cfg, Vocab::from_tokens(t).unwrap(), 1).unwrap();
        lm.freeze();
        (lm, AdapterModel::new(3, 8, 2).unwrap())
    }

    #[test]
    fn injected_length() {
        let (lm, ad) = setup();
        let kg = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let s = inject(&lm, &ad, &kg, &[5, 6, 7, 5, 6]).unwrap();
        assert_eq!(s.embeddings.shape(), &[9, 8]);
        assert_eq!(s.kg_region, 0..4);
        let s = inject(&lm, &ad, &[], &[5, 6, 7, 5, 6]).unwrap();
        assert_eq!(s.embeddings.shape(), &[7, 8]);
        assert_eq!(s.embeddings.row_slice(0), ad.e_start.data());
        assert_eq!(s.embeddings.row_slice(1), ad.e_end.data());
    }

    #[test]
    fn zero_adapter_maps_to_zero() {
        let (lm, mut ad) = setup();
        ad.w.data_mut().fill(0.0);
        let s = inject(&lm, &ad, &[vec![3.0, -2.0, 7.0]], &[5]).unwrap();
        assert!(s.embeddings.row_slice(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (lm, ad) = setup();
        assert!(matches!(
            inject(&lm, &ad, &[vec![1.0]], &[5]),
            Err(ModalityError::KgDim { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn unfrozen_lm_rejected() {
        let (mut lm, mut ad) = setup();
        lm.tok_emb.set_requires_grad(true);
        let ex = [AdapterExample {
            text: vec![5, EOS],
            kg: vec![vec![1.0, 0.0, 0.0]],
            entity: vec![true, false],
        }];
        assert_eq!(
            adapter_train(&lm, &mut ad, &ex, &AdapterConfig::default()),
            Err(ModalityError::NotFrozen)
        );
    }

    #[test]
    fn generation_basics() {
        let (lm, ad) = setup();
        assert!(generate(&lm, &ad, &[], &[5], 0, Mode::Plain).unwrap().is_empty());
        assert_eq!(generate(&lm, &ad, &[], &[], 3, Mode::Plain), Err(ModalityError::EmptyPrompt));
        let a = generate(&lm, &ad, &[vec![1.0, 2.0, 3.0]], &[5, 6], 20, Mode::Plain).unwrap();
        let b = generate(&lm, &ad, &[vec![-9.0, 0.0, 1.0]], &[5, 6], 20, Mode::Plain).unwrap();
        assert_eq!(a, b);
        let c = generate(&lm, &ad, &[vec![1.0, 2.0, 3.0]], &[5, 6], 20, Mode::WithKg).unwrap();
        let d = generate(&lm, &ad, &[vec![1.0, 2.0, 3.0]], &[5, 6], 20, Mode::WithKg).unwrap();
        assert_eq!(c, d);
        assert!(c.len() <= 20);
    }
}
