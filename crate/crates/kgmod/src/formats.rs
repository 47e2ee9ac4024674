//! On-disk formats: binary embedding tables and checkpoints, TSV indexes
//! and triples, JSONL records, evaluation datasets.

use std::fmt::Write as _;

use kgmod_core::corpus::AnnotatedDocument;
use kgmod_core::evalharness::{is_known_topic, EvalItem};
use kgmod_core::kgstore::{EntityEmbeddingTable, TitleIndex, Triple, TripleStore};
use kgmod_core::modality::{AdapterModel, LmConfig, ToyLm, Vocab};
use kgmod_core::text2graph::{MapperModel, MapperShape, SpanExample};
use kgmod_core::transe::{NormOrder, TranseModel};
use kgmod_core::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("byte {offset}: {msg}")]
    At { offset: usize, msg: String },
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn at(offset: usize, msg: impl Into<String>) -> FormatError {
    FormatError::At {
        offset,
        msg: msg.into(),
    }
}

fn line_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(at(self.pos, format!("truncated: wanted {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| at(start, "length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn magic(&mut self, magic: &[u8; 4]) -> Result<(), FormatError> {
        let got = self.take(4)?;
        if got != magic {
            return Err(at(0, format!("bad magic {got:?}, expected {:?}", std::str::from_utf8(magic).unwrap_or("?"))));
        }
        Ok(())
    }
    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.bytes.len() {
            return Err(at(self.pos, "trailing bytes"));
        }
        Ok(())
    }
}

pub const TABLE_MAGIC: &[u8; 4] = b"KGE1";

/// `KGE1`, u32 dim, u64 count, then per entry a u16-prefixed QID and `dim`
/// little-endian f64 values, in QID order.
pub fn write_table(table: &EntityEmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + table.len() * (12 + 8 * table.dim()));
    out.extend_from_slice(TABLE_MAGIC);
    out.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for (qid, v) in table.iter() {
        out.extend_from_slice(&(qid.len() as u16).to_le_bytes());
        out.extend_from_slice(qid.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn read_table(bytes: &[u8]) -> Result<EntityEmbeddingTable, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(TABLE_MAGIC)?;
    let dim = r.u32()? as usize;
    let mut table = EntityEmbeddingTable::new(dim).map_err(|e| at(4, e.to_string()))?;
    let count = r.u64()?;
    for _ in 0..count {
        let start = r.pos;
        let n = r.u16()? as usize;
        let qid = std::str::from_utf8(r.take(n)?).map_err(|_| at(start + 2, "QID is not UTF-8"))?;
        let v = r.f64s(dim)?;
        if table.contains(qid) {
            return Err(at(start, format!("duplicate QID {qid}")));
        }
        table.insert(qid, v).map_err(|e| at(start, e.to_string()))?;
    }
    r.finish()?;
    Ok(table)
}

/// `title<TAB>qid` lines and `title<TAB>@<TAB>canonical` redirect lines.
/// Blank lines and `#` comments are skipped.
pub fn read_title_index(text: &str) -> Result<TitleIndex, FormatError> {
    let mut idx = TitleIndex::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [title, "@", canonical] => idx.insert_redirect(title, canonical),
            [title, qid] if is_qid(qid) => idx.insert_title(title, qid),
            _ => return Err(line_err(i + 1, "expected title<TAB>qid or title<TAB>@<TAB>canonical")),
        }
    }
    idx.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(idx)
}

fn is_qid(s: &str) -> bool {
    s.len() > 1 && s.starts_with('Q') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

pub fn write_title_index(idx: &TitleIndex) -> String {
    let mut s = String::new();
    for (title, qid) in idx.titles() {
        let _ = writeln!(s, "{title}\t{qid}");
    }
    for (from, to) in idx.redirects() {
        let _ = writeln!(s, "{from}\t@\t{to}");
    }
    s
}

pub fn parse_triples(text: &str) -> Result<Vec<Triple>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [h, r, t] = fields.as_slice() else {
            return Err(line_err(i + 1, format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        if h.is_empty() || r.is_empty() || t.is_empty() {
            return Err(line_err(i + 1, "empty field"));
        }
        out.push(Triple::new(h, r, t));
    }
    Ok(out)
}

/// Triples file into a store; exact duplicates collapse.
pub fn read_triples(text: &str) -> Result<TripleStore, FormatError> {
    let mut store = TripleStore::new();
    for t in parse_triples(text)? {
        store.insert(&t);
    }
    Ok(store)
}

pub fn write_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> String {
    let mut s = String::new();
    for t in triples {
        let _ = writeln!(s, "{}\t{}\t{}", t.head, t.relation, t.tail);
    }
    s
}

fn jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| line_err(i + 1, e.to_string())))
        .collect()
}

fn to_jsonl<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable"));
        s.push('\n');
    }
    s
}

pub fn write_annotated(docs: &[AnnotatedDocument]) -> String {
    to_jsonl(docs)
}

pub fn read_annotated(text: &str) -> Result<Vec<AnnotatedDocument>, FormatError> {
    let docs: Vec<AnnotatedDocument> = jsonl(text)?;
    for (i, d) in docs.iter().enumerate() {
        for m in &d.mentions {
            for &(s, e) in &m.spans {
                if s >= e || e > d.text.len() || !d.text.is_char_boundary(s) || !d.text.is_char_boundary(e) {
                    return Err(line_err(i + 1, format!("span ({s}, {e}) of {} does not index the text", m.qid)));
                }
            }
        }
    }
    Ok(docs)
}

/// Wikitext input record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub doc_id: String,
    pub source: String,
}

pub fn read_sources(text: &str) -> Result<Vec<SourceRecord>, FormatError> {
    jsonl(text)
}

pub fn write_sources(records: &[SourceRecord]) -> String {
    to_jsonl(records)
}

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    tokens: Vec<String>,
    qid: String,
}

pub fn write_span_cache(examples: &[SpanExample]) -> String {
    let records: Vec<SpanRecord> = examples
        .iter()
        .map(|e| SpanRecord {
            tokens: e.tokens.clone(),
            qid: e.qid.clone(),
        })
        .collect();
    to_jsonl(&records)
}

/// Span records with targets filled from `table`.
pub fn read_span_cache(text: &str, table: &EntityEmbeddingTable) -> Result<Vec<SpanExample>, FormatError> {
    let records: Vec<SpanRecord> = jsonl(text)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let target = table.get(&r.qid).map_err(|e| line_err(i + 1, e.to_string()))?.to_vec();
            Ok(SpanExample {
                tokens: r.tokens,
                qid: r.qid,
                target,
            })
        })
        .collect()
}

/// Magic, a `key=value` config block, tensors, and an optional SHA-256
/// trailer.
struct Container {
    config: Vec<(String, String)>,
    tensors: Vec<Tensor>,
    trailer: Option<[u8; 32]>,
}

fn encode(magic: &[u8; 4], config: &[(String, String)], tensors: &[&Tensor], trailer: Option<[u8; 32]>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    let mut block = String::new();
    for (k, v) in config {
        let _ = writeln!(block, "{k}={v}");
    }
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(block.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(h) = trailer {
        out.extend_from_slice(&h);
    }
    out
}

fn decode(bytes: &[u8], magic: &[u8; 4], with_trailer: bool) -> Result<Container, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(magic)?;
    let n = r.u32()? as usize;
    let start = r.pos;
    let block = std::str::from_utf8(r.take(n)?).map_err(|_| at(start, "config block is not UTF-8"))?;
    let mut config = Vec::new();
    for line in block.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| at(start, format!("config line without '=': {line:?}")))?;
        config.push((k.to_string(), v.to_string()));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let start = r.pos;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(at(start, format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| at(start, "tensor size overflow"))?;
        let data = r.f64s(len)?;
        tensors.push(Tensor::new(shape, data).map_err(|e| at(start, e.to_string()))?);
    }
    let trailer = if with_trailer {
        Some(r.take(32)?.try_into().expect("32 bytes"))
    } else {
        None
    };
    r.finish()?;
    Ok(Container {
        config,
        tensors,
        trailer,
    })
}

fn get<'a>(config: &'a [(String, String)], key: &str) -> Result<&'a str, FormatError> {
    config
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| FormatError::Invalid(format!("checkpoint config lacks {key}")))
}

fn get_num<T: std::str::FromStr>(config: &[(String, String)], key: &str) -> Result<T, FormatError> {
    get(config, key)?
        .parse()
        .map_err(|_| FormatError::Invalid(format!("checkpoint config {key} is not a number")))
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

pub const MAPPER_MAGIC: &[u8; 4] = b"T2G1";
pub const LM_MAGIC: &[u8; 4] = b"TLM1";
pub const ADAPTER_MAGIC: &[u8; 4] = b"ADP1";
pub const TRANSE_MAGIC: &[u8; 4] = b"TRE1";

pub fn write_mapper(m: &MapperModel) -> Vec<u8> {
    let s = m.shape;
    let config = [
        kv("buckets", s.buckets),
        kv("hidden", s.hidden),
        kv("kg_dim", s.kg_dim),
        kv("hash_seed", s.hash_seed),
    ];
    encode(MAPPER_MAGIC, &config, &m.params(), None)
}

pub fn read_mapper(bytes: &[u8]) -> Result<MapperModel, FormatError> {
    let c = decode(bytes, MAPPER_MAGIC, false)?;
    let shape = MapperShape {
        buckets: get_num(&c.config, "buckets")?,
        hidden: get_num(&c.config, "hidden")?,
        kg_dim: get_num(&c.config, "kg_dim")?,
        hash_seed: get_num(&c.config, "hash_seed")?,
    };
    let expected = [
        vec![shape.buckets, shape.hidden],
        vec![1, shape.hidden],
        vec![shape.hidden, shape.kg_dim],
        vec![1, shape.kg_dim],
    ];
    let [w_in, b_in, w_out, b_out]: [Tensor; 4] = c
        .tensors
        .try_into()
        .map_err(|_| FormatError::Invalid("mapper checkpoint needs four tensors".into()))?;
    let model = MapperModel {
        shape,
        w_in: w_in.trainable(),
        b_in: b_in.trainable(),
        w_out: w_out.trainable(),
        b_out: b_out.trainable(),
    };
    for (t, s) in model.params().iter().zip(&expected) {
        if t.shape() != s.as_slice() {
            return Err(FormatError::Invalid("mapper tensor shape disagrees with its config".into()));
        }
    }
    Ok(model)
}

/// The trailer is the LM parameter hash; loading recomputes and compares it.
pub fn write_lm(lm: &ToyLm) -> Vec<u8> {
    let c = lm.config;
    let config = [
        kv("d_model", c.d_model),
        kv("n_layers", c.n_layers),
        kv("n_heads", c.n_heads),
        kv("d_ff", c.d_ff),
        kv("context", c.context),
        kv("vocab", lm.vocab.tokens().join(" ")),
    ];
    encode(LM_MAGIC, &config, &lm.params(), Some(lm.param_hash()))
}

/// Loaded models are frozen.
pub fn read_lm(bytes: &[u8]) -> Result<ToyLm, FormatError> {
    let c = decode(bytes, LM_MAGIC, true)?;
    let config = LmConfig {
        d_model: get_num(&c.config, "d_model")?,
        n_layers: get_num(&c.config, "n_layers")?,
        n_heads: get_num(&c.config, "n_heads")?,
        d_ff: get_num(&c.config, "d_ff")?,
        context: get_num(&c.config, "context")?,
    };
    let tokens = get(&c.config, "vocab")?.split(' ').map(str::to_string).collect();
    let vocab = Vocab::from_tokens(tokens).map_err(|e| FormatError::Invalid(e.to_string()))?;
    let lm = ToyLm::from_params(config, vocab, c.tensors).map_err(|e| FormatError::Invalid(e.to_string()))?;
    if Some(lm.param_hash()) != c.trailer {
        return Err(at(bytes.len() - 32, "parameter hash mismatch"));
    }
    Ok(lm)
}

pub fn write_adapter(a: &AdapterModel) -> Vec<u8> {
    let config = [kv("d_kg", a.d_kg()), kv("d_llm", a.d_llm())];
    encode(ADAPTER_MAGIC, &config, &a.params(), Some(a.param_hash()))
}

pub fn read_adapter(bytes: &[u8]) -> Result<AdapterModel, FormatError> {
    let c = decode(bytes, ADAPTER_MAGIC, true)?;
    let d_kg: usize = get_num(&c.config, "d_kg")?;
    let d_llm: usize = get_num(&c.config, "d_llm")?;
    let a = AdapterModel::from_params(c.tensors).map_err(|e| FormatError::Invalid(e.to_string()))?;
    if a.d_kg() != d_kg || a.d_llm() != d_llm {
        return Err(FormatError::Invalid("adapter tensor shape disagrees with its config".into()));
    }
    if Some(a.param_hash()) != c.trailer {
        return Err(at(bytes.len() - 32, "parameter hash mismatch"));
    }
    Ok(a)
}

pub fn write_transe(m: &TranseModel) -> Vec<u8> {
    let mut config = vec![
        kv("dim", m.dim),
        kv("margin", m.margin),
        kv("norm", if m.norm == NormOrder::L1 { "L1" } else { "L2" }),
    ];
    config.extend(m.entities.iter().map(|e| kv("entity", e)));
    config.extend(m.relations.iter().map(|r| kv("relation", r)));
    encode(TRANSE_MAGIC, &config, &[&m.entity_emb, &m.relation_emb], None)
}

pub fn read_transe(bytes: &[u8]) -> Result<TranseModel, FormatError> {
    let c = decode(bytes, TRANSE_MAGIC, false)?;
    let norm = match get(&c.config, "norm")? {
        "L1" => NormOrder::L1,
        "L2" => NormOrder::L2,
        other => return Err(FormatError::Invalid(format!("unknown norm {other}"))),
    };
    let names = |key: &str| -> Vec<String> {
        c.config.iter().filter(|(k, _)| k == key).map(|(_, v)| v.clone()).collect()
    };
    let entities = names("entity");
    let relations = names("relation");
    let dim: usize = get_num(&c.config, "dim")?;
    let margin: f64 = get_num(&c.config, "margin")?;
    let [entity_emb, relation_emb]: [Tensor; 2] = c
        .tensors
        .try_into()
        .map_err(|_| FormatError::Invalid("TransE checkpoint needs two tensors".into()))?;
    if entity_emb.shape() != [entities.len(), dim] || relation_emb.shape() != [relations.len(), dim] {
        return Err(FormatError::Invalid("TransE tensor shape disagrees with its config".into()));
    }
    Ok(TranseModel {
        dim,
        margin,
        norm,
        entities,
        relations,
        entity_emb: entity_emb.trainable(),
        relation_emb: relation_emb.trainable(),
    })
}

/// Statement CSV with header `statement,label,topic`. Unknown topics are
/// returned as warnings.
pub fn load_truefalse(text: &str) -> Result<(Vec<EvalItem>, Vec<String>), FormatError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| line_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| line_err(1, format!("missing column {name}")))
    };
    let (si, li, ti) = (col("statement")?, col("label")?, col("topic")?);
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            line_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).ok_or_else(|| line_err(line, "missing field"));
        let gold = match field(li)? {
            "1" => true,
            "0" => false,
            other => return Err(line_err(line, format!("label must be 0 or 1, found {other:?}"))),
        };
        let statement = field(si)?.to_string();
        if statement.is_empty() {
            return Err(line_err(line, "empty statement"));
        }
        let topic = field(ti)?.to_string();
        if !is_known_topic(&topic) {
            warnings.push(format!("line {line}: unknown topic {topic:?}"));
        }
        items.push(EvalItem { statement, gold, topic });
    }
    Ok((items, warnings))
}

pub fn write_truefalse(items: &[EvalItem]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["statement", "label", "topic"]).expect("in-memory write");
    for i in items {
        w.write_record([i.statement.as_str(), if i.gold { "1" } else { "0" }, i.topic.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
}

#[derive(Serialize, Deserialize)]
struct FeverRecord {
    claim: String,
    label: String,
}

/// Claim records; labels other than SUPPORTS and REFUTES are skipped and
/// counted.
pub fn load_fever(text: &str) -> Result<(Vec<EvalItem>, usize), FormatError> {
    let records: Vec<FeverRecord> = jsonl(text)?;
    let mut items = Vec::new();
    let mut skipped = 0;
    for r in records {
        let gold = match r.label.as_str() {
            "SUPPORTS" => true,
            "REFUTES" => false,
            _ => {
                skipped += 1;
                continue;
            }
        };
        items.push(EvalItem {
            statement: r.claim,
            gold,
            topic: "fever".into(),
        });
    }
    Ok((items, skipped))
}

pub fn write_fever(records: &[(String, String)]) -> String {
    let records: Vec<FeverRecord> = records
        .iter()
        .map(|(claim, label)| FeverRecord {
            claim: claim.clone(),
            label: label.clone(),
        })
        .collect();
    to_jsonl(&records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_roundtrip_and_errors() {
        let mut t = EntityEmbeddingTable::new(2).unwrap();
        t.insert("Q2", vec![0.5, -1.0]).unwrap();
        t.insert("Q1", vec![1.0, f64::MIN_POSITIVE]).unwrap();
        let bytes = write_table(&t);
        assert_eq!(read_table(&bytes).unwrap(), t);
        assert_eq!(write_table(&read_table(&bytes).unwrap()), bytes);
        assert!(matches!(read_table(&bytes[..bytes.len() - 1]), Err(FormatError::At { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_table(&bad), Err(FormatError::At { offset: 0, .. })));
    }

    #[test]
    fn triples_parse() {
        let s = read_triples("Q1\tP1\tQ2\nQ2\tP1\tQ3\nQ1\tP1\tQ2\n").unwrap();
        assert_eq!(s.len(), 2);
        assert!(matches!(
            read_triples("Q1\tP1\tQ2\nQ1\tP1\n"),
            Err(FormatError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn title_index_tsv() {
        let idx = read_title_index("USPTO\t@\tUnited States Patent and Trademark Office\nUnited States Patent and Trademark Office\tQ1459541\n").unwrap();
        assert_eq!(idx.resolve("USPTO"), Some("Q1459541"));
        assert_eq!(read_title_index(&write_title_index(&idx)).unwrap(), idx);
        assert!(read_title_index("a\tb\tc\td\n").is_err());
    }

    #[test]
    fn truefalse_csv() {
        let (items, warnings) = load_truefalse("statement,label,topic\n\"Paris, France is big.\",1,cities\nX.,0,weather\n").unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].statement, "Paris, France is big.");
        assert_eq!(warnings.len(), 1);
        let err = load_truefalse("statement,label,topic\na,2,cities\n").unwrap_err();
        assert!(matches!(err, FormatError::Line { line: 2, .. }), "{err}");
        assert!(load_truefalse("statement,topic\na,cities\n").is_err());
        assert_eq!(load_truefalse(&write_truefalse(&items)).unwrap().0, items);
    }

    #[test]
    fn fever_jsonl() {
        let text = "{\"claim\":\"Ronin is a 2001 film.\",\"label\":\"REFUTES\"}\n{\"claim\":\"x\",\"label\":\"NOT ENOUGH INFO\"}\n";
        let (items, skipped) = load_fever(text).unwrap();
        assert_eq!(items.len(), 1);
        assert!(!items[0].gold);
        assert_eq!(items[0].topic, "fever");
        assert_eq!(skipped, 1);
        assert_eq!(load_fever("").unwrap().0.len(), 0);
    }
}
