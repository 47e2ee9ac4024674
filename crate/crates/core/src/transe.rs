//! TransE: entities and relations embedded so that `head + relation ≈ tail`.
//!
//! Training minimizes the margin ranking loss
//! `max(0, margin + d(h, r, t) - d(h', r, t'))` with plain minibatch SGD,
//! where `(h', r, t')` is a filtered head-or-tail corruption of the positive
//! fact, and projects entity vectors back onto the unit sphere after every
//! step.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{AutodiffError, Graph, NodeId, Sgd};
use crate::kgstore::{EntityEmbeddingTable, IdTriple, KgError, Triple, TripleStore};
use crate::{seeded_rng, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranseError {
    #[error("triple store is empty")]
    EmptyStore,
    #[error("need at least two entities to corrupt triples")]
    TooFewEntities,
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Dissimilarity norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranseConfig {
    pub dim: usize,
    pub margin: f64,
    pub norm: NormOrder,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TranseConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            margin: 1.0,
            norm: NormOrder::L2,
            epochs: 200,
            batch_size: 32,
            lr: 0.01,
            negatives: 1,
            seed: 42,
        }
    }
}

impl TranseConfig {
    pub fn validate(&self) -> Result<(), TranseError> {
        if self.dim == 0 {
            return Err(TranseError::Config("dim must be positive"));
        }
        if !(self.margin > 0.0) {
            return Err(TranseError::Config("margin must be positive"));
        }
        if self.batch_size == 0 || self.negatives == 0 {
            return Err(TranseError::Config("batch size and negatives must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(TranseError::Config("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranseModel {
    pub dim: usize,
    pub margin: f64,
    pub norm: NormOrder,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    /// `[entities, dim]`
    pub entity_emb: Tensor,
    /// `[relations, dim]`
    pub relation_emb: Tensor,
}

impl TranseModel {
    /// Uniform init in `±6/sqrt(dim)`, every row then scaled to unit norm.
    pub fn init(store: &TripleStore, config: &TranseConfig, rng: &mut Rng) -> Self {
        let bound = 6.0 / libm::sqrt(config.dim as f64);
        let mut draw = |rows: usize| {
            let data: Vec<f64> = (0..rows * config.dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            let mut t = Tensor::matrix(rows, config.dim, data).trainable();
            normalize_rows(&mut t);
            t
        };
        let entity_emb = draw(store.entities().len().max(1));
        let relation_emb = draw(store.relations().len().max(1));
        Self {
            dim: config.dim,
            margin: config.margin,
            norm: config.norm,
            entities: store.entities().names().to_vec(),
            relations: store.relations().names().to_vec(),
            entity_emb,
            relation_emb,
        }
    }

    pub fn score_ids(&self, t: &IdTriple) -> f64 {
        let h = self.entity_emb.row_slice(t.head);
        let r = self.relation_emb.row_slice(t.relation);
        let e = self.entity_emb.row_slice(t.tail);
        distance(h, r, e, self.norm)
    }

    /// `‖e_h + e_r − e_t‖_p`; lower is more plausible.
    pub fn score(&self, head: &str, relation: &str, tail: &str) -> Result<f64, TranseError> {
        let t = self.ids(&Triple::new(head, relation, tail))?;
        Ok(self.score_ids(&t))
    }

    pub fn ids(&self, t: &Triple) -> Result<IdTriple, KgError> {
        let ent = |n: &str| {
            self.entities
                .iter()
                .position(|e| e == n)
                .ok_or_else(|| KgError::UnknownEntity(n.into()))
        };
        Ok(IdTriple {
            head: ent(&t.head)?,
            relation: self
                .relations
                .iter()
                .position(|r| *r == t.relation)
                .ok_or_else(|| KgError::UnknownRelation(t.relation.clone()))?,
            tail: ent(&t.tail)?,
        })
    }

    /// Entity vectors keyed by entity id; relations are not exported.
    pub fn export_table(&self) -> EntityEmbeddingTable {
        let mut table = EntityEmbeddingTable::new(self.dim).expect("dim > 0");
        for (i, name) in self.entities.iter().enumerate() {
            table
                .insert(name, self.entity_emb.row_slice(i).to_vec())
                .expect("model rows are finite and dim-sized");
        }
        table
    }
}

pub fn distance(h: &[f64], r: &[f64], t: &[f64], norm: NormOrder) -> f64 {
    let it = h.iter().zip(r).zip(t).map(|((a, b), c)| a + b - c);
    match norm {
        NormOrder::L1 => it.map(f64::abs).sum(),
        NormOrder::L2 => libm::sqrt(it.map(|x| x * x).sum()),
    }
}

fn normalize_rows(t: &mut Tensor) {
    let (rows, _) = t.dims2().expect("rank 2");
    for i in 0..rows {
        let row = t.row_slice_mut(i);
        let n = libm::sqrt(row.iter().map(|v| v * v).sum());
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Replaces the head (probability 1/2) or the tail with a different,
/// uniformly drawn entity, redrawing up to 100 times while the result is a
/// known fact.
pub fn negative_sample(store: &TripleStore, triple: &IdTriple, rng: &mut Rng) -> IdTriple {
    let n = store.entities().len();
    debug_assert!(n >= 2);
    let corrupt_head = rng.gen_bool(0.5);
    let mut candidate = *triple;
    for _ in 0..100 {
        let original = if corrupt_head { triple.head } else { triple.tail };
        let mut e = rng.gen_range(0..n - 1);
        if e >= original {
            e += 1;
        }
        candidate = *triple;
        if corrupt_head {
            candidate.head = e;
        } else {
            candidate.tail = e;
        }
        if !store.contains_ids(&candidate) {
            break;
        }
    }
    candidate
}

/// Sum of hinge losses for aligned positive/negative pairs.
pub fn hinge_loss(
    g: &mut Graph,
    entities: NodeId,
    relations: NodeId,
    positives: &[IdTriple],
    negatives: &[IdTriple],
    margin: f64,
    norm: NormOrder,
) -> Result<NodeId, AutodiffError> {
    let d_pos = batch_distance(g, entities, relations, positives, norm)?;
    let d_neg = batch_distance(g, entities, relations, negatives, norm)?;
    let diff = g.sub(d_pos, d_neg)?;
    let m = g.constant(&Tensor::scalar(margin));
    let shifted = g.add(diff, m)?;
    let hinge = g.relu(shifted)?;
    g.sum(hinge)
}

fn batch_distance(
    g: &mut Graph,
    entities: NodeId,
    relations: NodeId,
    triples: &[IdTriple],
    norm: NormOrder,
) -> Result<NodeId, AutodiffError> {
    let h = g.embedding_lookup(entities, triples.iter().map(|t| t.head).collect())?;
    let r = g.embedding_lookup(relations, triples.iter().map(|t| t.relation).collect())?;
    let t = g.embedding_lookup(entities, triples.iter().map(|t| t.tail).collect())?;
    let hr = g.add(h, r)?;
    let diff = g.sub(hr, t)?;
    match norm {
        NormOrder::L1 => g.l1_norm(diff),
        NormOrder::L2 => g.l2_norm(diff),
    }
}

/// Trains on every fact of `store`. Returns the model and the mean hinge
/// loss per positive for each epoch.
pub fn train(
    store: &TripleStore,
    config: &TranseConfig,
) -> Result<(TranseModel, Vec<f64>), TranseError> {
    config.validate()?;
    if store.is_empty() {
        return Err(TranseError::EmptyStore);
    }
    if store.entities().len() < 2 {
        return Err(TranseError::TooFewEntities);
    }
    let mut rng = seeded_rng(config.seed);
    let mut model = TranseModel::init(store, config, &mut rng);
    let sgd = Sgd { lr: config.lr };
    let mut order: Vec<usize> = (0..store.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut pos = Vec::with_capacity(chunk.len() * config.negatives);
            let mut neg = Vec::with_capacity(chunk.len() * config.negatives);
            for &i in chunk {
                let t = store.triples()[i];
                for _ in 0..config.negatives {
                    pos.push(t);
                    neg.push(negative_sample(store, &t, &mut rng));
                }
            }
            let mut g = Graph::new();
            let e = g.leaf(&model.entity_emb);
            let r = g.leaf(&model.relation_emb);
            let loss = hinge_loss(&mut g, e, r, &pos, &neg, config.margin, config.norm)
                .map_err(|err| match err {
                    AutodiffError::NonFinite { .. } => TranseError::NonFiniteLoss { epoch, batch },
                    other => other.into(),
                })?;
            epoch_loss += g.scalar(loss);
            g.backward(loss)?;
            model.entity_emb.zero_grad();
            model.relation_emb.zero_grad();
            g.accumulate_into(e, &mut model.entity_emb)?;
            g.accumulate_into(r, &mut model.relation_emb)?;
            sgd.step(&mut [&mut model.entity_emb, &mut model.relation_emb])?;
            normalize_rows(&mut model.entity_emb);
        }
        model.entity_emb.zero_grad();
        model.relation_emb.zero_grad();
        let mean = epoch_loss / (store.len() * config.negatives) as f64;
        if !mean.is_finite() {
            return Err(TranseError::NonFiniteLoss { epoch, batch: 0 });
        }
        trace.push(mean);
    }
    Ok((model, trace))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMetrics {
    pub mean_rank: f64,
    pub hits_at_10: f64,
    /// Number of ranked queries (two per test fact).
    pub queries: usize,
}

/// Filtered ranking of the true tail (head fixed) and the true head (tail
/// fixed) of every test fact. Candidates forming a fact known to `store` or
/// listed in `test` are skipped; ties with the true entity count half.
pub fn link_prediction(
    model: &TranseModel,
    store: &TripleStore,
    test: &[Triple],
) -> Result<LinkMetrics, TranseError> {
    let ids: Vec<IdTriple> = test
        .iter()
        .map(|t| model.ids(t))
        .collect::<Result<_, _>>()?;
    let mut known = alloc::collections::BTreeSet::new();
    for t in store.triples() {
        known.insert(model.ids(&store.to_names(t))?);
    }
    known.extend(ids.iter().copied());

    let n = model.entities.len();
    let mut total_rank = 0.0;
    let mut hits = 0usize;
    let mut queries = 0usize;
    for t in &ids {
        for corrupt_head in [false, true] {
            let true_d = model.score_ids(t);
            let mut better = 0usize;
            let mut ties = 0usize;
            for e in 0..n {
                let mut c = *t;
                if corrupt_head {
                    if e == t.head {
                        continue;
                    }
                    c.head = e;
                } else {
                    if e == t.tail {
                        continue;
                    }
                    c.tail = e;
                }
                if known.contains(&c) {
                    continue;
                }
                let d = model.score_ids(&c);
                if d < true_d {
                    better += 1;
                } else if d == true_d {
                    ties += 1;
                }
            }
            let rank = 1.0 + better as f64 + ties as f64 / 2.0;
            total_rank += rank;
            if rank <= 10.0 {
                hits += 1;
            }
            queries += 1;
        }
    }
    if queries == 0 {
        return Ok(LinkMetrics {
            mean_rank: 0.0,
            hits_at_10: 0.0,
            queries: 0,
        });
    }
    Ok(LinkMetrics {
        mean_rank: total_rank / queries as f64,
        hits_at_10: hits as f64 / queries as f64,
        queries,
    })
}

/// Loss trace as `epoch,loss` lines with a header, six significant digits.
pub fn trace_csv(trace: &[f64]) -> String {
    use core::fmt::Write;
    let mut out = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", crate::text::sig6(*l));
    }
    out
}
