//! Text-to-graph mapper: regresses text onto knowledge-graph embeddings.
//!
//! The encoder hashes lowercased tokens into `buckets` features, averages
//! them into a bag, applies one `tanh` hidden layer and a linear output
//! layer of the embedding dimension. Training spans are entity-centred
//! windows; inference encodes whole texts in fixed-length chunks.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig, AutodiffError, Graph, NodeId};
use crate::corpus::AnnotatedDocument;
use crate::kgstore::{EntityEmbeddingTable, KgError};
use crate::text::{fnv1a64, tokenize};
use crate::{seeded_rng, Tensor};

/// Context tokens kept on each side of an entity mention.
pub const DEFAULT_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MapperError {
    #[error("no tokens to encode")]
    EmptyInput,
    #[error("no training examples")]
    NoExamples,
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error("target has dimension {got}, model predicts {expected}")]
    TargetDim { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One entity-centred training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanExample {
    pub tokens: Vec<String>,
    pub qid: String,
    #[serde(skip)]
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpanExtraction {
    pub examples: Vec<SpanExample>,
    /// Mention spans skipped because their entity has no embedding.
    pub skipped: usize,
}

/// One example per mention span: the mention's tokens plus up to `window`
/// tokens on each side, clipped at the document boundaries.
pub fn extract_spans(
    doc: &AnnotatedDocument,
    table: &EntityEmbeddingTable,
    window: usize,
) -> SpanExtraction {
    let tokens = tokenize(&doc.text);
    let mut out = SpanExtraction::default();
    for mention in &doc.mentions {
        let Ok(target) = table.get(&mention.qid) else {
            out.skipped += mention.spans.len();
            continue;
        };
        for &(start, end) in &mention.spans {
            let first = tokens.iter().position(|t| t.end > start);
            let last = tokens.iter().rposition(|t| t.start < end);
            let (Some(first), Some(last)) = (first, last) else {
                continue;
            };
            if first > last {
                continue;
            }
            let lo = first.saturating_sub(window);
            let hi = (last + 1 + window).min(tokens.len());
            out.examples.push(SpanExample {
                tokens: tokens[lo..hi].iter().map(|t| t.text.clone()).collect(),
                qid: mention.qid.clone(),
                target: target.to_vec(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapperShape {
    pub buckets: usize,
    pub hidden: usize,
    pub kg_dim: usize,
    pub hash_seed: u64,
}

impl Default for MapperShape {
    fn default() -> Self {
        Self {
            buckets: 4096,
            hidden: 128,
            kg_dim: 64,
            hash_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapperModel {
    pub shape: MapperShape,
    /// `[buckets, hidden]`
    pub w_in: Tensor,
    /// `[1, hidden]`
    pub b_in: Tensor,
    /// `[hidden, kg_dim]`
    pub w_out: Tensor,
    /// `[1, kg_dim]`
    pub b_out: Tensor,
}

impl MapperModel {
    pub fn new(shape: MapperShape, seed: u64) -> Result<Self, MapperError> {
        if shape.buckets == 0 || shape.hidden == 0 || shape.kg_dim == 0 {
            return Err(MapperError::Config("mapper extents must be positive"));
        }
        let mut rng = seeded_rng(seed);
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::matrix(rows, cols, data).trainable()
        };
        let w_in = uniform(shape.buckets, shape.hidden, 1.0);
        let w_out = uniform(shape.hidden, shape.kg_dim, 1.0 / libm::sqrt(shape.hidden as f64));
        Ok(Self {
            shape,
            w_in,
            b_in: Tensor::zeros(&[1, shape.hidden]).trainable(),
            w_out,
            b_out: Tensor::zeros(&[1, shape.kg_dim]).trainable(),
        })
    }

    /// Parameters in declaration order.
    pub fn params(&self) -> [&Tensor; 4] {
        [&self.w_in, &self.b_in, &self.w_out, &self.b_out]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    /// Hashed bag of `tokens`: bucket weights sum to one.
    pub fn bag<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        let w = 1.0 / tokens.len() as f64;
        for t in tokens {
            let b = (fnv1a64(self.shape.hash_seed, t.as_ref().as_bytes()) % self.shape.buckets as u64) as usize;
            *counts.entry(b).or_default() += w;
        }
        counts.into_iter().collect()
    }

    /// Builds the forward pass for a batch of bags; returns `[batch, kg_dim]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &[NodeId; 4],
        bags: Vec<Vec<(usize, f64)>>,
    ) -> Result<NodeId, AutodiffError> {
        let [w_in, b_in, w_out, b_out] = *params;
        let x = g.embedding_bag(w_in, bags)?;
        let x = g.add(x, b_in)?;
        let h = g.tanh(x)?;
        let y = g.matmul(h, w_out)?;
        g.add(y, b_out)
    }

    pub fn leaves(&self, g: &mut Graph) -> [NodeId; 4] {
        self.params().map(|p| g.leaf(p))
    }

    /// Predicted embedding for a token sequence. Order-insensitive.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>, MapperError> {
        if tokens.is_empty() {
            return Err(MapperError::EmptyInput);
        }
        let mut g = Graph::new();
        let p = self.params().map(|t| g.constant(t));
        let y = self.forward(&mut g, &p, vec![self.bag(tokens)])?;
        Ok(g.value(y).to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapperConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Tokens per chunk at inference.
    pub context_len: usize,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-3,
            epochs: 1,
            batch_size: 32,
            seed: 42,
            context_len: 512,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<(), MapperError> {
        if !(self.lr > 0.0) {
            return Err(MapperError::Config("learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(MapperError::Config("weight decay must be non-negative"));
        }
        if self.batch_size == 0 || self.context_len == 0 {
            return Err(MapperError::Config("batch size and context length must be positive"));
        }
        Ok(())
    }
}

/// MSE regression of every example onto its target with AdamW at a
/// constant learning rate. Returns the per-batch loss.
pub fn train_mapper(
    model: &mut MapperModel,
    examples: &[SpanExample],
    config: &MapperConfig,
) -> Result<Vec<f64>, MapperError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(MapperError::NoExamples);
    }
    for ex in examples {
        if ex.target.len() != model.shape.kg_dim {
            return Err(MapperError::TargetDim {
                expected: model.shape.kg_dim,
                got: ex.target.len(),
            });
        }
        if ex.tokens.is_empty() {
            return Err(MapperError::EmptyInput);
        }
    }
    let mut rng = seeded_rng(config.seed);
    let mut opt = AdamW::new(AdamWConfig::new(config.lr, config.weight_decay));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let bags = chunk.iter().map(|&i| model.bag(&examples[i].tokens)).collect();
            let target: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| examples[i].target.iter().copied())
                .collect();
            let mut g = Graph::new();
            let p = model.leaves(&mut g);
            let y = model.forward(&mut g, &p, bags)?;
            let t = g.constant(&Tensor::matrix(chunk.len(), model.shape.kg_dim, target));
            let loss = g.mse(y, t).map_err(|e| match e {
                AutodiffError::NonFinite { .. } => MapperError::NonFiniteLoss { epoch, batch },
                other => other.into(),
            })?;
            trace.push(g.scalar(loss));
            g.backward(loss)?;
            let mut params = model.params_mut();
            for (node, tensor) in p.iter().zip(params.iter_mut()) {
                tensor.zero_grad();
                g.accumulate_into(*node, tensor)?;
            }
            opt.step(&mut params)?;
            for tensor in params {
                tensor.zero_grad();
            }
        }
    }
    Ok(trace)
}

/// One predicted vector per consecutive chunk of `context_len` tokens.
pub fn map_text(
    model: &MapperModel,
    text: &str,
    context_len: usize,
) -> Result<Vec<Vec<f64>>, MapperError> {
    if context_len == 0 {
        return Err(MapperError::Config("context length must be positive"));
    }
    let tokens: Vec<String> = tokenize(text).into_iter().map(|t| t.text).collect();
    if tokens.is_empty() {
        return Err(MapperError::EmptyInput);
    }
    tokens.chunks(context_len).map(|c| model.encode(c)).collect()
}

/// Fraction of examples whose entity is among the `k` nearest table entries
/// to the mapper's prediction.
pub fn linking_eval(
    model: &MapperModel,
    heldout: &[SpanExample],
    table: &EntityEmbeddingTable,
    k: usize,
) -> Result<f64, MapperError> {
    recall_at_k(heldout, table, k, |ex| model.encode(&ex.tokens))
}

/// [`linking_eval`] for an arbitrary predictor.
pub fn recall_at_k<F>(
    heldout: &[SpanExample],
    table: &EntityEmbeddingTable,
    k: usize,
    mut predict: F,
) -> Result<f64, MapperError>
where
    F: FnMut(&SpanExample) -> Result<Vec<f64>, MapperError>,
{
    if heldout.is_empty() {
        return Err(MapperError::NoExamples);
    }
    let mut hits = 0usize;
    for ex in heldout {
        let pred = predict(ex)?;
        if table.nearest(&pred, k)?.iter().any(|(q, _)| *q == ex.qid) {
            hits += 1;
        }
    }
    Ok(hits as f64 / heldout.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityMention;
    use alloc::string::ToString;

    fn small_shape() -> MapperShape {
        MapperShape {
            buckets: 64,
            hidden: 8,
            kg_dim: 3,
            hash_seed: 1,
        }
    }

    fn table() -> EntityEmbeddingTable {
        let mut t = EntityEmbeddingTable::new(3).unwrap();
        t.insert("Q1", vec![1.0, 0.0, 0.0]).unwrap();
        t.insert("Q2", vec![0.0, 1.0, 0.0]).unwrap();
        t
    }

    #[test]
    fn window_clips_at_document_start() {
        let words: Vec<String> = (0..40).map(|i| alloc::format!("w{i}")).collect();
        let text = alloc::format!("Alpha {}", words.join(" "));
        let doc = AnnotatedDocument {
            doc_id: "d".into(),
            text,
            mentions: vec![EntityMention {
                qid: "Q1".into(),
                spans: vec![(0, 5)],
            }],
        };
        let ex = extract_spans(&doc, &table(), 20).examples;
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].tokens[0], "alpha");
        assert_eq!(ex[0].tokens.len(), 21);
        assert_eq!(ex[0].target, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_embeddings_are_counted() {
        let doc = AnnotatedDocument {
            doc_id: "d".into(),
            text: "a b c".into(),
            mentions: vec![EntityMention {
                qid: "Q404".into(),
                spans: vec![(0, 1), (2, 3)],
            }],
        };
        let r = extract_spans(&doc, &table(), 20);
        assert!(r.examples.is_empty());
        assert_eq!(r.skipped, 2);
    }

    #[test]
    fn zero_weights_give_zero_vector() {
        let mut m = MapperModel::new(small_shape(), 3).unwrap();
        for p in m.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.encode(&["any", "tokens"]).unwrap(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn encoding_is_order_insensitive() {
        let m = MapperModel::new(small_shape(), 3).unwrap();
        let a = m.encode(&["x", "y", "z", "x"]).unwrap();
        let b = m.encode(&["z", "x", "x", "y"]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(m.encode::<&str>(&[]), Err(MapperError::EmptyInput)));
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = MapperModel::new(small_shape(), 3).unwrap();
        let before = m.clone();
        let ex = [SpanExample {
            tokens: vec!["a".to_string()],
            qid: "Q1".into(),
            target: vec![1.0, 0.0, 0.0],
        }];
        let cfg = MapperConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train_mapper(&mut m, &ex, &cfg).unwrap().is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn chunk_counts() {
        let m = MapperModel::new(small_shape(), 3).unwrap();
        let text: String = (0..1000).map(|i| alloc::format!("t{i} ")).collect();
        assert_eq!(map_text(&m, &text, 512).unwrap().len(), 2);
        assert_eq!(map_text(&m, "ten tokens a b c d e f g h", 512).unwrap().len(), 1);
        assert!(matches!(map_text(&m, "   ", 512), Err(MapperError::EmptyInput)));
    }

    #[test]
    fn perfect_predictor_has_full_recall() {
        let ex = [
            SpanExample {
                tokens: vec!["a".into()],
                qid: "Q1".into(),
                target: vec![1.0, 0.0, 0.0],
            },
            SpanExample {
                tokens: vec!["b".into()],
                qid: "Q2".into(),
                target: vec![0.0, 1.0, 0.0],
            },
        ];
        let r = recall_at_k(&ex, &table(), 1, |e| Ok(e.target.clone())).unwrap();
        assert_eq!(r, 1.0);
    }
}
