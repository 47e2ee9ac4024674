//! Pipeline stages. Each reads its inputs from and writes its artifacts to
//! the configured output directory, so stages can run one at a time from
//! the command line or all in order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kgmod_core::corpus::{annotate, corpus_stats, AnnotatedDocument};
use kgmod_core::evalharness::{judge, render_records, render_report, sha256_hex, template, EvalItem, EvalReport, TemplateId};
use kgmod_core::kgstore::{EntityEmbeddingTable, KgError, TitleIndex, TripleStore};
use kgmod_core::modality::vocab::EOS;
use kgmod_core::modality::{
    adapter_examples, adapter_train, eval_loss, generate, pretrain_toy_lm, AdapterModel, ModalityError, Mode,
    ToyLm, Vocab, MAX_KG_VECTORS,
};
use kgmod_core::synth::World;
use kgmod_core::text::sig6;
use kgmod_core::text2graph::{extract_spans, linking_eval, map_text, train_mapper, MapperError, MapperModel, SpanExample};
use kgmod_core::transe::{link_prediction, train, TranseError};
use kgmod_core::seeded_rng;
use rayon::prelude::*;

use crate::config::{ConfigError, KgSource, RunConfig};
use crate::formats::{self, FormatError, SourceRecord};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 3,
            Self::Io { .. } | Self::Format { .. } | Self::Data(_) => 4,
            Self::Numeric(_) => 5,
        }
    }
}

impl From<TranseError> for PipelineError {
    fn from(e: TranseError) -> Self {
        match e {
            TranseError::NonFiniteLoss { .. } => Self::Numeric(format!("transe: {e}")),
            _ => Self::Data(format!("transe: {e}")),
        }
    }
}

impl From<MapperError> for PipelineError {
    fn from(e: MapperError) -> Self {
        match e {
            MapperError::NonFiniteLoss { .. } => Self::Numeric(format!("mapper: {e}")),
            _ => Self::Data(format!("mapper: {e}")),
        }
    }
}

impl From<ModalityError> for PipelineError {
    fn from(e: ModalityError) -> Self {
        match e {
            ModalityError::NonFiniteLoss { .. } => Self::Numeric(format!("modality: {e}")),
            _ => Self::Data(format!("modality: {e}")),
        }
    }
}

impl From<KgError> for PipelineError {
    fn from(e: KgError) -> Self {
        Self::Data(e.to_string())
    }
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub out: PathBuf,
}

macro_rules! artifacts {
    ($($name:ident => $file:literal),* $(,)?) => {
        impl Paths {
            $(pub fn $name(&self) -> PathBuf {
                self.out.join($file)
            })*
        }
    };
}

artifacts! {
    config => "config.toml",
    all_triples => "triples.tsv",
    train_triples => "train.tsv",
    test_triples => "test.tsv",
    titles => "titles.tsv",
    sources => "sources.jsonl",
    lm_corpus => "lm_corpus.txt",
    truefalse => "truefalse.csv",
    fever => "fever.jsonl",
    annotated => "annotated.jsonl",
    stats => "stats.json",
    transe => "transe.ckpt",
    transe_loss => "transe_loss.csv",
    transe_report => "transe_report.txt",
    table => "table.kge",
    spans => "spans.jsonl",
    mapper => "mapper.ckpt",
    mapper_loss => "mapper_loss.csv",
    mapper_report => "mapper_report.txt",
    lm => "lm.ckpt",
    lm_loss => "lm_loss.csv",
    adapter => "adapter.ckpt",
    adapter_loss => "adapter_loss.csv",
    adapter_report => "adapter_report.txt",
}

impl Paths {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            out: PathBuf::from(&cfg.out_dir),
        }
    }

    pub fn eval_report(&self, mode: Mode) -> PathBuf {
        self.out.join(format!("eval_{}_report.txt", mode.name()))
    }

    pub fn eval_records(&self, mode: Mode) -> PathBuf {
        self.out.join(format!("eval_{}_records.csv", mode.name()))
    }

    pub fn eval_config(&self, mode: Mode) -> PathBuf {
        self.out.join(format!("eval_{}_config.toml", mode.name()))
    }
}

fn input(configured: &str, default: PathBuf) -> PathBuf {
    if configured.is_empty() {
        default
    } else {
        PathBuf::from(configured)
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

/// Reads `path` and decodes it, tagging format errors with the path.
fn load<T>(path: &Path, decode: impl FnOnce(&[u8]) -> Result<T, FormatError>) -> Result<T, PipelineError> {
    let bytes = read_bytes(path)?;
    decode(&bytes).map_err(|source| PipelineError::Format {
        path: path.to_path_buf(),
        source,
    })
}

fn utf8(bytes: &[u8]) -> Result<&str, FormatError> {
    std::str::from_utf8(bytes).map_err(|e| FormatError::Invalid(format!("not UTF-8: {e}")))
}

fn loss_csv(header: &str, trace: &[f64]) -> String {
    let mut s = format!("{header},loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, sig6(*l));
    }
    s
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn is_heldout(i: usize, every: usize) -> bool {
    i % every == every - 1
}

/// Generates the synthetic world and every corpus derived from it.
pub fn synth(cfg: &RunConfig) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let c = &cfg.corpus;
    let world = World::generate(c.countries, c.world_seed);
    let (train, test) = world.split(c.test_fraction, c.world_seed);
    write(&p.all_triples(), formats::write_triples(&world.triples))?;
    write(&p.train_triples(), formats::write_triples(&train))?;
    write(&p.test_triples(), formats::write_triples(&test))?;
    write(&p.titles(), formats::write_title_index(&world.title_index()))?;

    let mut rng = seeded_rng(cfg.stage_seed("corpus"));
    let sources: Vec<SourceRecord> = world
        .wikitext_docs(c.wiki_docs_per_entity, c.blank_every, &mut rng)
        .into_iter()
        .map(|(doc_id, source)| SourceRecord { doc_id, source })
        .collect();
    write(&p.sources(), formats::write_sources(&sources))?;
    let facts = world.fact_corpus(c.lm_docs_per_entity, &mut rng);
    write(&p.lm_corpus(), facts.join("\n") + "\n")?;
    let items = world.truefalse_items(c.eval_items, &mut rng);
    write(&p.truefalse(), formats::write_truefalse(&items))?;
    let fever = world.fever_records(c.eval_items, &mut rng);
    write(&p.fever(), formats::write_fever(&fever))?;
    Ok(format!(
        "{} entities, {} triples ({} train, {} test), {} articles, {} LM documents",
        world.entities.len(),
        world.triples.len(),
        train.len(),
        test.len(),
        sources.len(),
        facts.len()
    ))
}

fn title_index(cfg: &RunConfig, p: &Paths) -> Result<TitleIndex, PipelineError> {
    load(&input(&cfg.corpus.titles, p.titles()), |b| formats::read_title_index(utf8(b)?))
}

/// Annotates every source record in parallel, keeping input order.
pub fn annotate_sources(cfg: &RunConfig) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let index = title_index(cfg, &p)?;
    let sources = load(&input(&cfg.corpus.sources, p.sources()), |b| formats::read_sources(utf8(b)?))?;
    let results: Vec<_> = sources
        .par_iter()
        .map(|r| annotate(&r.doc_id, &r.source, &index))
        .collect();
    let warnings: usize = results.iter().map(|a| a.warnings.len()).sum();
    let unmapped: usize = results.iter().map(|a| a.unmapped_links).sum();
    let docs: Vec<AnnotatedDocument> = results.into_iter().map(|a| a.document).collect();
    write(&p.annotated(), formats::write_annotated(&docs))?;
    Ok(format!(
        "{} documents annotated, {unmapped} unmapped links, {warnings} parse warnings",
        docs.len()
    ))
}

fn annotated(p: &Paths) -> Result<Vec<AnnotatedDocument>, PipelineError> {
    load(&p.annotated(), |b| formats::read_annotated(utf8(b)?))
}

pub fn stats(cfg: &RunConfig) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let s = corpus_stats(&annotated(&p)?);
    let json = serde_json::to_string_pretty(&s).expect("serializable") + "\n";
    write(&p.stats(), &json)?;
    Ok(json)
}

pub fn train_transe(cfg: &RunConfig) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let train_path = input(&cfg.corpus.triples, p.train_triples());
    let store = load(&train_path, |b| formats::read_triples(utf8(b)?))?;
    let (model, trace) = train(&store, &cfg.transe_config())?;
    write(&p.transe(), formats::write_transe(&model))?;
    write(&p.transe_loss(), loss_csv("epoch", &trace))?;

    let mut report = String::new();
    let _ = writeln!(report, "entities = {}", model.entities.len());
    let _ = writeln!(report, "relations = {}", model.relations.len());
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        let _ = writeln!(report, "first_epoch_loss = {}", sig6(*first));
        let _ = writeln!(report, "final_epoch_loss = {}", sig6(*last));
    }
    // Link prediction only makes sense against the synthesized split.
    if cfg.corpus.triples.is_empty() && p.test_triples().exists() {
        let test = load(&p.test_triples(), |b| formats::parse_triples(utf8(b)?))?;
        let mut known: TripleStore = store.clone();
        for t in &test {
            known.insert(t);
        }
        let m = link_prediction(&model, &known, &test)?;
        let _ = writeln!(report, "mean_rank = {}", sig6(m.mean_rank));
        let _ = writeln!(report, "hits_at_10 = {}", sig6(m.hits_at_10));
        let _ = writeln!(report, "random_hits_at_10 = {}", sig6(10.0 / model.entities.len() as f64));
        let _ = writeln!(report, "queries = {}", m.queries);
    }
    write(&p.transe_report(), &report)?;
    Ok(report)
}

pub fn export_table(cfg: &RunConfig) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let model = load(&p.transe(), formats::read_transe)?;
    let table = model.export_table();
    write(&p.table(), formats::write_table(&table))?;
    Ok(format!("{} entities of dimension {}", table.len(), table.dim()))
}

fn table(p: &Paths) -> Result<EntityEmbeddingTable, PipelineError> {
    load(&p.table(), formats::read_table)
}

/// Span examples of every annotated document, split into training and
/// held-out by document.
fn span_examples(cfg: &RunConfig, docs: &[AnnotatedDocument], table: &EntityEmbeddingTable) -> (Vec<SpanExample>, Vec<SpanExample>, usize) {
    let (mut train, mut heldout, mut skipped) = (Vec::new(), Vec::new(), 0);
    for (i, doc) in docs.iter().enumerate() {
        let ex = extract_spans(doc, table, cfg.corpus.window);
        skipped += ex.skipped;
        if is_heldout(i, cfg.corpus.heldout_every) {
            heldout.extend(ex.examples);
        } else {
            train.extend(ex.examples);
        }
    }
    (train, heldout, skipped)
}

pub fn train_text2graph(cfg: &RunConfig) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let table = table(&p)?;
    let docs = annotated(&p)?;
    let (train, heldout, skipped) = span_examples(cfg, &docs, &table);
    write(&p.spans(), formats::write_span_cache(&train))?;
    let mut model = MapperModel::new(cfg.mapper_shape(table.dim()), cfg.stage_seed("mapper.init"))?;
    let trace = train_mapper(&mut model, &train, &cfg.mapper_config())?;
    write(&p.mapper(), formats::write_mapper(&model))?;
    write(&p.mapper_loss(), loss_csv("step", &trace))?;
    let mut report = String::new();
    let _ = writeln!(report, "train_spans = {}", train.len());
    let _ = writeln!(report, "heldout_spans = {}", heldout.len());
    let _ = writeln!(report, "skipped_mentions = {skipped}");
    if !heldout.is_empty() {
        for k in [1, 5] {
            let r = linking_eval(&model, &heldout, &table, k)?;
            let _ = writeln!(report, "recall_at_{k} = {}", sig6(r));
        }
    }
    write(&p.mapper_report(), &report)?;
    Ok(report)
}

pub fn pretrain_lm(cfg: &RunConfig) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let text = read_text(&p.lm_corpus())?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let vocab = Vocab::build(lines.iter().copied(), cfg.lm.vocab_size)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, l) in lines.iter().enumerate() {
        let ids = vocab.encode(l);
        if i % 10 == 9 {
            val.push(ids);
        } else {
            train.push(ids);
        }
    }
    let (lm, trace) = pretrain_toy_lm(vocab, &train, &val, cfg.lm_config(), &cfg.pretrain_config())?;
    write(&p.lm(), formats::write_lm(&lm))?;
    let mut csv = String::from("epoch,train,val\n");
    for (i, t) in trace.train.iter().enumerate() {
        let v = trace.val.get(i).map_or(String::new(), |v| sig6(*v));
        let _ = writeln!(csv, "{},{},{v}", i + 1, sig6(*t));
    }
    write(&p.lm_loss(), &csv)?;
    Ok(format!(
        "vocabulary {}, final train loss {}, parameter hash {}",
        lm.vocab.len(),
        trace.train.last().map_or("n/a".into(), |l| sig6(*l)),
        hex(&lm.param_hash())
    ))
}

fn lm(p: &Paths) -> Result<ToyLm, PipelineError> {
    load(&p.lm(), formats::read_lm)
}

pub fn train_kg_adapter(cfg: &RunConfig) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let lm = lm(&p)?;
    let table = table(&p)?;
    let docs = annotated(&p)?;
    let (train_docs, heldout_docs): (Vec<_>, Vec<_>) = docs
        .iter()
        .enumerate()
        .partition(|(i, _)| !is_heldout(*i, cfg.corpus.heldout_every));
    let train = adapter_examples(&lm, train_docs.into_iter().map(|(_, d)| d), &table);
    let heldout = adapter_examples(&lm, heldout_docs.into_iter().map(|(_, d)| d), &table);
    let mut adapter = AdapterModel::new(table.dim(), lm.config.d_model, cfg.stage_seed("adapter.init"))?;
    let before = lm.param_hash();
    let trace = adapter_train(&lm, &mut adapter, &train, &cfg.adapter_config())?;
    write(&p.adapter(), formats::write_adapter(&adapter))?;
    write(&p.adapter_loss(), loss_csv("step", &trace))?;
    let mut report = String::new();
    let _ = writeln!(report, "train_examples = {}", train.len());
    let _ = writeln!(report, "heldout_examples = {}", heldout.len());
    let _ = writeln!(report, "lm_hash_unchanged = {}", before == lm.param_hash());
    if !heldout.is_empty() {
        for (label, entity_only) in [("all", false), ("entity", true)] {
            let plain = eval_loss(&lm, &adapter, &heldout, Mode::Plain, entity_only)?;
            let kg = eval_loss(&lm, &adapter, &heldout, Mode::WithKg, entity_only)?;
            let _ = writeln!(report, "heldout_{label}_loss_plain = {}", sig6(plain));
            let _ = writeln!(report, "heldout_{label}_loss_with_kg = {}", sig6(kg));
            let _ = writeln!(report, "heldout_{label}_delta = {}", sig6(plain - kg));
        }
    }
    write(&p.adapter_report(), &report)?;
    Ok(report)
}

fn adapter(p: &Paths) -> Result<AdapterModel, PipelineError> {
    load(&p.adapter(), formats::read_adapter)
}

/// Greedy continuation of `prompt`, optionally conditioned on the table
/// vectors of `qids`.
pub fn generate_text(cfg: &RunConfig, prompt: &str, qids: &[String], mode: Mode, max_new: usize) -> Result<String, PipelineError> {
    let p = Paths::new(cfg);
    let lm = lm(&p)?;
    let adapter = adapter(&p)?;
    let kg = if mode == Mode::WithKg {
        let table = table(&p)?;
        qids.iter()
            .map(|q| table.get(q).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let ids = lm.vocab.encode(prompt);
    let out = generate(&lm, &adapter, &kg, &ids, max_new, mode)?;
    Ok(lm.vocab.decode(&out))
}

/// Title names occurring in `statement`, longest first, mapped to table
/// vectors.
fn gold_vectors(index: &TitleIndex, table: &EntityEmbeddingTable, statement: &str) -> Vec<Vec<f64>> {
    let mut titles: Vec<(&str, &str)> = index.titles().filter(|(t, _)| statement.contains(t)).collect();
    titles.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (_, qid) in titles {
        if out.len() == MAX_KG_VECTORS {
            break;
        }
        if let Ok(v) = table.get(qid) {
            if seen.insert(qid) {
                out.push(v.to_vec());
            }
        }
    }
    out
}

fn eval_items(cfg: &RunConfig, p: &Paths) -> Result<(Vec<EvalItem>, Vec<String>), PipelineError> {
    match cfg.eval.template {
        TemplateId::TrueFalse8Shot => load(&input(&cfg.eval.items, p.truefalse()), |b| formats::load_truefalse(utf8(b)?)),
        TemplateId::Fever8Shot => {
            let (items, skipped) = load(&input(&cfg.eval.items, p.fever()), |b| formats::load_fever(utf8(b)?))?;
            Ok((items, vec![format!("{skipped} records without a binary label skipped")]))
        }
    }
}

/// Judges every statement with the toy LM and writes the report and the
/// per-item records for the configured mode.
pub fn evaluate(cfg: &RunConfig) -> Result<(EvalReport, Vec<String>), PipelineError> {
    let p = Paths::new(cfg);
    let (items, warnings) = eval_items(cfg, &p)?;
    let lm = lm(&p)?;
    let adapter = adapter(&p)?;
    let mode = cfg.eval.mode;
    let tpl = template(cfg.eval.template);

    let mapper = match (mode, cfg.eval.kg_source) {
        (Mode::WithKg, KgSource::Mapper) => Some(load(&p.mapper(), formats::read_mapper)?),
        _ => None,
    };
    let (index, table) = match (mode, cfg.eval.kg_source) {
        (Mode::WithKg, KgSource::Gold) => (Some(title_index(cfg, &p)?), Some(table(&p)?)),
        _ => (None, None),
    };
    let context_len = cfg.mapper.context_len;
    let kg = |statement: &str| -> Result<Vec<Vec<f64>>, String> {
        match (&mapper, &index, &table) {
            (Some(m), _, _) => {
                let mut v = map_text(m, statement, context_len).map_err(|e| e.to_string())?;
                v.truncate(MAX_KG_VECTORS);
                Ok(v)
            }
            (None, Some(i), Some(t)) => Ok(gold_vectors(i, t, statement)),
            _ => Ok(Vec::new()),
        }
    };
    let max_new = cfg.eval.max_new;
    let model = |prompt: &str, kg: &[Vec<f64>]| -> Result<String, String> {
        let ids = lm.vocab.encode(prompt);
        let out = generate(&lm, &adapter, kg, &ids, max_new, mode).map_err(|e| e.to_string())?;
        let new: Vec<usize> = out.into_iter().filter(|&t| t != EOS).collect();
        Ok(format!("{prompt} {}", lm.vocab.decode(&new)))
    };
    let mut report = judge(&items, tpl, mode, model, kg).map_err(|e| PipelineError::Data(e.to_string()))?;
    report.metadata = vec![
        ("seed".into(), cfg.seed.to_string()),
        ("template".into(), tpl.id.name().into()),
        ("mode".into(), mode.name().into()),
        (
            "kg_source".into(),
            match cfg.eval.kg_source {
                KgSource::Mapper => "mapper".into(),
                KgSource::Gold => "gold".into(),
            },
        ),
        ("lm_hash".into(), hex(&lm.param_hash())),
        ("adapter_hash".into(), hex(&adapter.param_hash())),
        ("items_sha256".into(), sha256_hex(formats::write_truefalse(&items).as_bytes())),
    ];
    write(&p.eval_config(mode), cfg.echo())?;
    write(&p.eval_report(mode), render_report(&report))?;
    write(&p.eval_records(mode), render_records(&report))?;
    Ok((report, warnings))
}

/// Every stage in order, then evaluation in both modes. Returns one summary
/// line per stage.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<(String, String)>, PipelineError> {
    cfg.validate()?;
    let p = Paths::new(cfg);
    write(&p.config(), cfg.echo())?;
    let mut log = Vec::new();
    let mut step = |name: &str, r: Result<String, PipelineError>| -> Result<(), PipelineError> {
        log.push((name.to_string(), r?));
        Ok(())
    };
    step("synth", synth(cfg))?;
    step("annotate", annotate_sources(cfg))?;
    step("stats", stats(cfg))?;
    step("train-transe", train_transe(cfg))?;
    step("export-table", export_table(cfg))?;
    step("train-mapper", train_text2graph(cfg))?;
    step("pretrain-lm", pretrain_lm(cfg))?;
    step("train-adapter", train_kg_adapter(cfg))?;
    for mode in [Mode::Plain, Mode::WithKg] {
        let mut c = cfg.clone();
        c.eval.mode = mode;
        let (report, _) = evaluate(&c)?;
        step(&format!("eval {}", mode.name()), Ok(format!("average accuracy {}", sig6(report.average))))?;
    }
    Ok(log)
}
