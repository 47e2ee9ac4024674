//! Entity registry: title resolution, the entity embedding lookup table,
//! triple storage and exact nearest-neighbour search.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

/// Maximum redirect hops followed by [`TitleIndex::resolve`].
pub const MAX_REDIRECT_HOPS: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KgError {
    #[error("no embedding for {0}")]
    LookupMiss(String),
    #[error("expected vector of dimension {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("non-finite value in embedding for {0}")]
    NonFinite(String),
    #[error("k = {k} outside 1..={size}")]
    BadK { k: usize, size: usize },
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("redirect from {0:?} loops or exceeds {MAX_REDIRECT_HOPS} hops")]
    RedirectChain(String),
    #[error("redirect from {0:?} does not reach a titled entity")]
    DanglingRedirect(String),
}

/// Canonical form of a page title: section suffix dropped, underscores as
/// spaces, whitespace collapsed, first letter uppercased.
pub fn normalize_title(title: &str) -> String {
    let base = title.split('#').next().unwrap_or("");
    let mut words = base.split(|c: char| c == '_' || c.is_whitespace()).filter(|w| !w.is_empty());
    let mut out = String::with_capacity(base.len());
    if let Some(first) = words.next() {
        let mut chars = first.chars();
        if let Some(c) = chars.next() {
            out.extend(c.to_uppercase());
            out.push_str(chars.as_str());
        }
        for w in words {
            out.push(' ');
            out.push_str(w);
        }
    }
    out
}

/// Page title to entity id mapping with redirects.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TitleIndex {
    titles: BTreeMap<String, String>,
    redirects: BTreeMap<String, String>,
}

impl TitleIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_title(&mut self, title: &str, qid: &str) {
        self.titles.insert(normalize_title(title), qid.to_string());
    }

    pub fn insert_redirect(&mut self, from: &str, to: &str) {
        self.redirects
            .insert(normalize_title(from), normalize_title(to));
    }

    pub fn title_count(&self) -> usize {
        self.titles.len()
    }

    pub fn redirect_count(&self) -> usize {
        self.redirects.len()
    }

    pub fn titles(&self) -> impl Iterator<Item = (&str, &str)> {
        self.titles.iter().map(|(t, q)| (t.as_str(), q.as_str()))
    }

    pub fn redirects(&self) -> impl Iterator<Item = (&str, &str)> {
        self.redirects.iter().map(|(f, t)| (f.as_str(), t.as_str()))
    }

    /// Entity id for `title` after following at most
    /// [`MAX_REDIRECT_HOPS`] redirects.
    pub fn resolve(&self, title: &str) -> Option<&str> {
        let mut current = normalize_title(title);
        for _ in 0..=MAX_REDIRECT_HOPS {
            if let Some(q) = self.titles.get(&current) {
                return Some(q);
            }
            current = self.redirects.get(&current)?.clone();
        }
        None
    }

    /// Every redirect must reach a titled entity within the hop limit.
    pub fn validate(&self) -> Result<(), KgError> {
        for from in self.redirects.keys() {
            let mut current = from;
            let mut hops = 0;
            while !self.titles.contains_key(current) {
                match self.redirects.get(current) {
                    Some(next) => {
                        hops += 1;
                        if hops > MAX_REDIRECT_HOPS {
                            return Err(KgError::RedirectChain(from.clone()));
                        }
                        current = next;
                    }
                    None => return Err(KgError::DanglingRedirect(from.clone())),
                }
            }
        }
        Ok(())
    }
}

/// Entity id to fixed-dimension vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityEmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EntityEmbeddingTable {
    pub fn new(dim: usize) -> Result<Self, KgError> {
        if dim == 0 {
            return Err(KgError::ZeroDim);
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, qid: &str, vector: Vec<f64>) -> Result<(), KgError> {
        if vector.len() != self.dim {
            return Err(KgError::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(KgError::NonFinite(qid.to_string()));
        }
        self.entries.insert(qid.to_string(), vector);
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Result<&[f64], KgError> {
        self.entries
            .get(qid)
            .map(Vec::as_slice)
            .ok_or_else(|| KgError::LookupMiss(qid.to_string()))
    }

    pub fn contains(&self, qid: &str) -> bool {
        self.entries.contains_key(qid)
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(q, v)| (q.as_str(), v.as_slice()))
    }

    /// The `k` closest entries by Euclidean distance, ascending, ties broken
    /// by id.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>, KgError> {
        if query.len() != self.dim {
            return Err(KgError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        if k == 0 || k > self.entries.len() {
            return Err(KgError::BadK {
                k,
                size: self.entries.len(),
            });
        }
        let mut scored: Vec<(&str, f64)> = self
            .entries
            .iter()
            .map(|(q, v)| (q.as_str(), euclidean(query, v)))
            .collect();
        let cmp = |a: &(&str, f64), b: &(&str, f64)| {
            a.1.partial_cmp(&b.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(b.0))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored.into_iter().map(|(q, d)| (q.to_string(), d)).collect())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// A fact with string identifiers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
        }
    }
}

/// A fact over vocabulary indices of a [`TripleStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IdTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Names interned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Deduplicated facts with entity and relation vocabularies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripleStore {
    triples: Vec<IdTriple>,
    set: BTreeSet<IdTriple>,
    entities: Interner,
    relations: Interner,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a fact; returns `false` when it was already present.
    pub fn insert(&mut self, triple: &Triple) -> bool {
        let id = IdTriple {
            head: self.entities.intern(&triple.head),
            relation: self.relations.intern(&triple.relation),
            tail: self.entities.intern(&triple.tail),
        };
        if self.set.insert(id) {
            self.triples.push(id);
            true
        } else {
            false
        }
    }

    /// Registers an entity without adding facts.
    pub fn intern_entity(&mut self, name: &str) -> usize {
        self.entities.intern(name)
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        self.relations.intern(name)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[IdTriple] {
        &self.triples
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn contains_ids(&self, t: &IdTriple) -> bool {
        self.set.contains(t)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.to_ids(t).map(|id| self.set.contains(&id)).unwrap_or(false)
    }

    pub fn to_ids(&self, t: &Triple) -> Result<IdTriple, KgError> {
        Ok(IdTriple {
            head: self
                .entities
                .id(&t.head)
                .ok_or_else(|| KgError::UnknownEntity(t.head.clone()))?,
            relation: self
                .relations
                .id(&t.relation)
                .ok_or_else(|| KgError::UnknownRelation(t.relation.clone()))?,
            tail: self
                .entities
                .id(&t.tail)
                .ok_or_else(|| KgError::UnknownEntity(t.tail.clone()))?,
        })
    }

    pub fn to_names(&self, t: &IdTriple) -> Triple {
        Triple::new(
            self.entities.name(t.head),
            self.relations.name(t.relation),
            self.entities.name(t.tail),
        )
    }
}
