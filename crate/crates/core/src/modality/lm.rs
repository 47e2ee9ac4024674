use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use sha2::{Digest, Sha256};

use super::vocab::{Vocab, BOS, EOS};
use super::ModalityError;
use crate::autodiff::{AdamW, AdamWConfig, AutodiffError, Graph, NodeId};
use crate::{seeded_rng, Rng, Tensor};

/// Additive mask value for future positions.
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            context: 128,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), ModalityError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.context == 0 {
            return Err(ModalityError::Config("model extents must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModalityError::Config("d_model must be divisible by n_heads"));
        }
        Ok(())
    }
}

/// Pre-norm decoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_ff1: Tensor,
    pub b_ff1: Tensor,
    pub w_ff2: Tensor,
    pub b_ff2: Tensor,
}

const BLOCK_TENSORS: usize = 12;

impl Block {
    fn params(&self) -> [&Tensor; BLOCK_TENSORS] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
        ]
    }

    fn params_mut(&mut self) -> [&mut Tensor; BLOCK_TENSORS] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
        ]
    }

    fn shapes(c: &LmConfig) -> [[usize; 2]; BLOCK_TENSORS] {
        let (d, f) = (c.d_model, c.d_ff);
        [
            [1, d],
            [1, d],
            [d, d],
            [d, d],
            [d, d],
            [d, d],
            [1, d],
            [1, d],
            [d, f],
            [1, f],
            [f, d],
            [1, d],
        ]
    }
}

/// Small decoder-only transformer with tied input and output embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub config: LmConfig,
    pub vocab: Vocab,
    /// `[V, d]`
    pub tok_emb: Tensor,
    /// `[context, d]`
    pub pos_emb: Tensor,
    pub blocks: Vec<Block>,
    pub lnf_gain: Tensor,
    pub lnf_bias: Tensor,
}

/// Graph handles for every LM tensor, in [`ToyLm::params`] order.
#[derive(Debug, Clone)]
pub struct LmNodes(Vec<NodeId>);

impl LmNodes {
    fn tok(&self) -> NodeId {
        self.0[0]
    }
    fn pos(&self) -> NodeId {
        self.0[1]
    }
    fn block(&self, b: usize) -> &[NodeId] {
        &self.0[2 + b * BLOCK_TENSORS..2 + (b + 1) * BLOCK_TENSORS]
    }
    fn lnf(&self) -> (NodeId, NodeId) {
        let n = self.0.len();
        (self.0[n - 2], self.0[n - 1])
    }
}

fn uniform(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).trainable()
}

fn filled(cols: usize, v: f64) -> Tensor {
    Tensor::matrix(1, cols, vec![v; cols]).trainable()
}

impl ToyLm {
    pub fn new(config: LmConfig, vocab: Vocab, seed: u64) -> Result<Self, ModalityError> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let (d, f) = (config.d_model, config.d_ff);
        let tok_emb = uniform(&mut rng, vocab.len(), d, 0.05);
        let pos_emb = uniform(&mut rng, config.context, d, 0.02);
        let inv = |n: usize| 1.0 / libm::sqrt(n as f64);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1_gain: filled(d, 1.0),
                ln1_bias: filled(d, 0.0),
                w_q: uniform(&mut rng, d, d, inv(d)),
                w_k: uniform(&mut rng, d, d, inv(d)),
                w_v: uniform(&mut rng, d, d, inv(d)),
                w_o: uniform(&mut rng, d, d, inv(d)),
                ln2_gain: filled(d, 1.0),
                ln2_bias: filled(d, 0.0),
                w_ff1: uniform(&mut rng, d, f, inv(d)),
                b_ff1: filled(f, 0.0),
                w_ff2: uniform(&mut rng, f, d, inv(f)),
                b_ff2: filled(d, 0.0),
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain: filled(d, 1.0),
            lnf_bias: filled(d, 0.0),
        })
    }

    /// Rebuilds a model from tensors in [`ToyLm::params`] order.
    pub fn from_params(config: LmConfig, vocab: Vocab, tensors: Vec<Tensor>) -> Result<Self, ModalityError> {
        config.validate()?;
        let expected = Self::shapes(&config, vocab.len());
        if tensors.len() != expected.len() {
            return Err(ModalityError::Checkpoint("wrong number of tensors"));
        }
        for (t, s) in tensors.iter().zip(&expected) {
            if t.shape() != s {
                return Err(ModalityError::Checkpoint("tensor shape does not match config"));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let tok_emb = next();
        let pos_emb = next();
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1_gain: next(),
                ln1_bias: next(),
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_o: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                w_ff1: next(),
                b_ff1: next(),
                w_ff2: next(),
                b_ff2: next(),
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain: next(),
            lnf_bias: next(),
        })
    }

    fn shapes(c: &LmConfig, vocab: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![vocab, c.d_model], vec![c.context, c.d_model]];
        for _ in 0..c.n_layers {
            out.extend(Block::shapes(c).iter().map(|s| s.to_vec()));
        }
        out.push(vec![1, c.d_model]);
        out.push(vec![1, c.d_model]);
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.push(&self.lnf_gain);
        out.push(&self.lnf_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.push(&mut self.lnf_gain);
        out.push(&mut self.lnf_bias);
        out
    }

    pub fn freeze(&mut self) {
        for p in self.params_mut() {
            p.set_requires_grad(false);
            p.zero_grad();
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|p| !p.requires_grad())
    }

    /// SHA-256 over every tensor's shape and little-endian values.
    pub fn param_hash(&self) -> [u8; 32] {
        tensor_hash(self.params())
    }

    pub fn leaves(&self, g: &mut Graph) -> LmNodes {
        LmNodes(self.params().into_iter().map(|p| g.leaf(p)).collect())
    }

    /// `[n, d]` token embeddings.
    pub fn embed(&self, g: &mut Graph, nodes: &LmNodes, ids: &[usize]) -> Result<NodeId, ModalityError> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(ModalityError::TokenOutOfRange(bad));
        }
        Ok(g.embedding_lookup(nodes.tok(), ids.to_vec())?)
    }

    /// Logits `[T, V]` for an input embedding sequence `x` of shape `[T, d]`.
    pub fn forward(&self, g: &mut Graph, nodes: &LmNodes, x: NodeId) -> Result<NodeId, ModalityError> {
        let t = g.shape(x)[0];
        if t > self.config.context {
            return Err(ModalityError::SequenceTooLong {
                len: t,
                max: self.config.context,
            });
        }
        let pos = g.slice_rows(nodes.pos(), 0, t)?;
        let mut h = g.add(x, pos)?;
        let mask = g.constant(&causal_mask(t));
        for b in 0..self.config.n_layers {
            h = self.block(g, nodes.block(b), h, mask)?;
        }
        let (gain, bias) = nodes.lnf();
        let h = g.layer_norm(h, gain, bias)?;
        let unembed = g.transpose(nodes.tok())?;
        Ok(g.matmul(h, unembed)?)
    }

    fn block(&self, g: &mut Graph, p: &[NodeId], x: NodeId, mask: NodeId) -> Result<NodeId, AutodiffError> {
        let a = g.layer_norm(x, p[0], p[1])?;
        let a = self.attention(g, a, &p[2..6], mask)?;
        let x = g.add(x, a)?;
        let m = g.layer_norm(x, p[6], p[7])?;
        let m = g.matmul(m, p[8])?;
        let m = g.add(m, p[9])?;
        let m = g.gelu(m)?;
        let m = g.matmul(m, p[10])?;
        let m = g.add(m, p[11])?;
        g.add(x, m)
    }

    fn attention(&self, g: &mut Graph, x: NodeId, w: &[NodeId], mask: NodeId) -> Result<NodeId, AutodiffError> {
        let q = g.matmul(x, w[0])?;
        let k = g.matmul(x, w[1])?;
        let v = g.matmul(x, w[2])?;
        let dh = self.config.d_model / self.config.n_heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale)?;
            let s = g.add(s, mask)?;
            let p = g.softmax(s)?;
            heads.push(g.matmul(p, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        g.matmul(cat, w[3])
    }

    /// Logits for a plain token sequence, evaluated without gradients.
    pub fn logits(&self, ids: &[usize]) -> Result<Tensor, ModalityError> {
        let mut g = Graph::new();
        let nodes = self.leaves(&mut g);
        let x = self.embed(&mut g, &nodes, ids)?;
        let y = self.forward(&mut g, &nodes, x)?;
        Ok(g.tensor(y))
    }
}

pub(crate) fn tensor_hash<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in tensors {
        h.update((t.shape().len() as u64).to_le_bytes());
        for &s in t.shape() {
            h.update((s as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// `0` on and below the diagonal, a large negative value above it.
pub fn causal_mask(t: usize) -> Tensor {
    let mut data = vec![0.0; t * t];
    for i in 0..t {
        for j in i + 1..t {
            data[i * t + j] = MASKED;
        }
    }
    Tensor::matrix(t, t, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            weight_decay: 0.0,
            epochs: 8,
            batch_size: 32,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainTrace {
    /// Mean batch loss per epoch.
    pub train: Vec<f64>,
    /// Validation loss after each epoch; empty without validation data.
    pub val: Vec<f64>,
}

/// `(inputs, targets)` windows over `[BOS] doc [EOS]`, each at most
/// `context` positions long.
pub fn lm_windows(doc: &[usize], context: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut seq = Vec::with_capacity(doc.len() + 2);
    seq.push(BOS);
    seq.extend_from_slice(doc);
    seq.push(EOS);
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < seq.len() {
        let end = (start + context + 1).min(seq.len());
        out.push((seq[start..end - 1].to_vec(), seq[start + 1..end].to_vec()));
        start += context;
    }
    out
}

/// Mean next-token loss over a batch of windows, built on `g`.
fn batch_loss(
    lm: &ToyLm,
    g: &mut Graph,
    nodes: &LmNodes,
    windows: &[&(Vec<usize>, Vec<usize>)],
) -> Result<NodeId, ModalityError> {
    let mut logits = Vec::with_capacity(windows.len());
    let mut targets = Vec::new();
    for (input, target) in windows {
        let x = lm.embed(g, nodes, input)?;
        logits.push(lm.forward(g, nodes, x)?);
        targets.extend(target.iter().map(|&t| Some(t)));
    }
    let all = g.concat_rows(&logits)?;
    Ok(g.cross_entropy_with_logits(all, targets)?)
}

/// Mean next-token cross-entropy of `lm` over every position of `docs`.
pub fn lm_loss(lm: &ToyLm, docs: &[Vec<usize>]) -> Result<f64, ModalityError> {
    let (mut total, mut count) = (0.0, 0usize);
    for doc in docs {
        for w in lm_windows(doc, lm.config.context) {
            let mut g = Graph::new();
            let nodes = lm.leaves(&mut g);
            let loss = batch_loss(lm, &mut g, &nodes, &[&w])?;
            total += g.scalar(loss) * w.1.len() as f64;
            count += w.1.len();
        }
    }
    if count == 0 {
        return Err(ModalityError::EmptyCorpus);
    }
    Ok(total / count as f64)
}

/// Trains a fresh LM on `train` with AdamW under a cosine schedule, then
/// freezes it.
pub fn pretrain_toy_lm(
    vocab: Vocab,
    train: &[Vec<usize>],
    val: &[Vec<usize>],
    config: LmConfig,
    pre: &PretrainConfig,
) -> Result<(ToyLm, PretrainTrace), ModalityError> {
    if !(pre.lr > 0.0) || !(pre.weight_decay >= 0.0) || pre.batch_size == 0 {
        return Err(ModalityError::Config("invalid pretraining hyperparameters"));
    }
    let windows: Vec<_> = train.iter().flat_map(|d| lm_windows(d, config.context)).collect();
    if windows.is_empty() {
        return Err(ModalityError::EmptyCorpus);
    }
    let mut lm = ToyLm::new(config, vocab, pre.seed)?;
    let mut rng = seeded_rng(pre.seed ^ 0x5eed);
    let batches = windows.len().div_ceil(pre.batch_size);
    let total = (batches * pre.epochs) as u64;
    let mut opt = AdamW::new(AdamWConfig::new(pre.lr, pre.weight_decay).with_cosine(total));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut trace = PretrainTrace::default();
    for _ in 0..pre.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(pre.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &windows[i]).collect();
            let mut g = Graph::new();
            let nodes = lm.leaves(&mut g);
            let loss = batch_loss(&lm, &mut g, &nodes, &batch).map_err(|e| match e {
                ModalityError::Autodiff(AutodiffError::NonFinite { .. }) => ModalityError::NonFiniteLoss {
                    step: opt.step_count(),
                },
                other => other,
            })?;
            sum += g.scalar(loss);
            g.backward(loss)?;
            let mut params = lm.params_mut();
            for (node, p) in nodes.0.iter().zip(params.iter_mut()) {
                p.zero_grad();
                g.accumulate_into(*node, p)?;
            }
            opt.step(&mut params)?;
        }
        trace.train.push(sum / batches as f64);
        if !val.is_empty() {
            trace.val.push(lm_loss(&lm, val)?);
        }
    }
    lm.freeze();
    Ok((lm, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn tiny_vocab(words: &[&str]) -> Vocab {
        let mut t: Vec<_> = super::super::vocab::SPECIALS.iter().map(|s| s.to_string()).collect();
        t.extend(words.iter().map(|w| w.to_string()));
        Vocab::from_tokens(t).unwrap()
    }

    fn small() -> LmConfig {
        LmConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            context: 24,
        }
    }

    #[test]
    fn mask_is_lower_triangular_inclusive() {
        let m = causal_mask(3);
        assert_eq!(m.data()[0], 0.0);
        assert_eq!(m.data()[1], MASKED);
        assert_eq!(m.data()[4], 0.0);
        assert_eq!(m.data()[3], 0.0);
        assert_eq!(m.data()[5], MASKED);
    }

    #[test]
    fn windows_cover_document() {
        let w = lm_windows(&[10, 11, 12], 2);
        assert_eq!(w[0], (vec![BOS, 10], vec![10, 11]));
        assert_eq!(w[1], (vec![11, 12], vec![12, EOS]));
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn causal_prefix_invariance() {
        let lm = ToyLm::new(small(), tiny_vocab(&["a", "b", "c"]), 1).unwrap();
        let long = lm.logits(&[BOS, 5, 6, 7]).unwrap();
        let short = lm.logits(&[BOS, 5]).unwrap();
        let v = lm.vocab.len();
        for (a, b) in short.data().iter().zip(&long.data()[..2 * v]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn params_roundtrip_and_hash() {
        let lm = ToyLm::new(small(), tiny_vocab(&["a"]), 1).unwrap();
        let tensors = lm.params().into_iter().cloned().collect();
        let back = ToyLm::from_params(small(), lm.vocab.clone(), tensors).unwrap();
        assert_eq!(back, lm);
        assert_eq!(back.param_hash(), lm.param_hash());
        let other = ToyLm::new(small(), tiny_vocab(&["a"]), 2).unwrap();
        assert_ne!(other.param_hash(), lm.param_hash());
    }

    #[test]
    fn untrained_loss_near_uniform() {
        let words: Vec<String> = (0..40).map(|i| alloc::format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let lm = ToyLm::new(small(), tiny_vocab(&refs), 3).unwrap();
        let mut rng = seeded_rng(9);
        let docs: Vec<Vec<usize>> = (0..4)
            .map(|_| (0..20).map(|_| rng.gen_range(0..lm.vocab.len())).collect())
            .collect();
        let loss = lm_loss(&lm, &docs).unwrap();
        let uniform = libm::log(lm.vocab.len() as f64);
        assert!((loss - uniform).abs() < 0.1, "{loss} vs {uniform}");
    }

    #[test]
    fn pretraining_freezes() {
        let vocab = tiny_vocab(&["a", "b"]);
        let docs = vec![vec![5, 6, 5, 6]];
        let pre = PretrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let (lm, trace) = pretrain_toy_lm(vocab, &docs, &docs, small(), &pre).unwrap();
        assert!(lm.is_frozen());
        assert_eq!(trace.train.len(), 1);
        assert_eq!(trace.val.len(), 1);
    }
}
