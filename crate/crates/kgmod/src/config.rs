//! Run configuration: TOML with one table per stage, flattened to dotted
//! keys. Unknown keys are errors; every error names its key.

use std::fmt::Write as _;

use kgmod_core::evalharness::TemplateId;
use kgmod_core::modality::{AdapterConfig, LmConfig, Mode, PretrainConfig};
use kgmod_core::text::stage_seed;
use kgmod_core::text2graph::{MapperConfig, MapperShape};
use kgmod_core::transe::{NormOrder, TranseConfig};
use toml::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config key {key}: {msg}")]
    Key { key: String, msg: String },
}

fn key_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Where statements for `eval` get their KG vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgSource {
    /// Mapper predictions over the statement text.
    Mapper,
    /// Table vectors of entities whose titles occur in the statement.
    Gold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSection {
    pub countries: usize,
    pub world_seed: u64,
    pub test_fraction: f64,
    pub wiki_docs_per_entity: usize,
    pub lm_docs_per_entity: usize,
    pub blank_every: usize,
    pub window: usize,
    /// Every n-th annotated document is held out of mapper and adapter
    /// training.
    pub heldout_every: usize,
    pub eval_items: usize,
    /// Input overrides; empty means the synthesized file in `out_dir`.
    pub sources: String,
    pub titles: String,
    pub triples: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranseSection {
    pub dim: usize,
    pub margin: f64,
    pub norm: NormOrder,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapperSection {
    pub buckets: usize,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub context_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context: usize,
    pub vocab_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub template: TemplateId,
    pub mode: Mode,
    pub kg_source: KgSource,
    /// Statement file; empty means the synthesized `truefalse.csv`.
    pub items: String,
    pub max_new: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker cap; 0 lets the pool decide.
    pub threads: usize,
    pub out_dir: String,
    pub corpus: CorpusSection,
    pub transe: TranseSection,
    pub mapper: MapperSection,
    pub lm: LmSection,
    pub adapter: AdapterSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TranseConfig::default();
        let m = MapperConfig::default();
        let shape = MapperShape::default();
        let lm = LmConfig::default();
        let pre = PretrainConfig::default();
        let a = AdapterConfig::default();
        Self {
            seed: 42,
            threads: 0,
            out_dir: "out".into(),
            corpus: CorpusSection {
                countries: 10,
                world_seed: 42,
                test_fraction: 0.2,
                wiki_docs_per_entity: 20,
                lm_docs_per_entity: 30,
                blank_every: 0,
                window: kgmod_core::text2graph::DEFAULT_WINDOW,
                heldout_every: 5,
                eval_items: 200,
                sources: String::new(),
                titles: String::new(),
                triples: String::new(),
            },
            transe: TranseSection {
                dim: t.dim,
                margin: t.margin,
                norm: t.norm,
                epochs: t.epochs,
                batch_size: t.batch_size,
                lr: t.lr,
                negatives: t.negatives,
            },
            mapper: MapperSection {
                buckets: shape.buckets,
                hidden: shape.hidden,
                lr: m.lr,
                weight_decay: m.weight_decay,
                epochs: m.epochs,
                batch_size: m.batch_size,
                context_len: m.context_len,
            },
            lm: LmSection {
                d_model: lm.d_model,
                n_layers: lm.n_layers,
                n_heads: lm.n_heads,
                d_ff: lm.d_ff,
                context: lm.context,
                vocab_size: 2000,
                lr: pre.lr,
                weight_decay: pre.weight_decay,
                epochs: pre.epochs,
                batch_size: pre.batch_size,
            },
            adapter: AdapterSection {
                lr: a.lr,
                weight_decay: a.weight_decay,
                epochs: a.epochs,
                batch_size: a.batch_size,
            },
            eval: EvalSection {
                template: TemplateId::TrueFalse8Shot,
                mode: Mode::Plain,
                kg_source: KgSource::Mapper,
                items: String::new(),
                max_new: 8,
            },
        }
    }
}

/// A config field type: parsed from a TOML value, echoed as a TOML literal.
trait Field: Sized {
    fn parse(key: &str, v: &Value) -> Result<Self, ConfigError>;
    fn show(&self) -> String;
}

impl Field for usize {
    fn parse(key: &str, v: &Value) -> Result<Self, ConfigError> {
        match v {
            Value::Integer(i) => usize::try_from(*i).map_err(|_| key_err(key, "must be a non-negative integer")),
            _ => Err(key_err(key, "expected an integer")),
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Field for u64 {
    fn parse(key: &str, v: &Value) -> Result<Self, ConfigError> {
        match v {
            Value::Integer(i) => u64::try_from(*i).map_err(|_| key_err(key, "must be a non-negative integer")),
            _ => Err(key_err(key, "expected an integer")),
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Field for f64 {
    fn parse(key: &str, v: &Value) -> Result<Self, ConfigError> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(key_err(key, "expected a number")),
        }
    }
    fn show(&self) -> String {
        format!("{self:?}")
    }
}

impl Field for String {
    fn parse(key: &str, v: &Value) -> Result<Self, ConfigError> {
        match v {
            Value::String(s) => Ok(s.clone()),
            _ => Err(key_err(key, "expected a string")),
        }
    }
    fn show(&self) -> String {
        Value::String(self.clone()).to_string()
    }
}

fn choice<T: Copy>(key: &str, v: &Value, options: &[(&str, T)]) -> Result<T, ConfigError> {
    let s = String::parse(key, v)?;
    options
        .iter()
        .find(|(name, _)| *name == s)
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            key_err(key, format!("expected one of {}", names.join(", ")))
        })
}

const NORMS: [(&str, NormOrder); 2] = [("L1", NormOrder::L1), ("L2", NormOrder::L2)];
const MODES: [(&str, Mode); 2] = [("plain", Mode::Plain), ("with_kg", Mode::WithKg)];
const TEMPLATES: [(&str, TemplateId); 2] = [
    ("truefalse_8shot", TemplateId::TrueFalse8Shot),
    ("fever_8shot", TemplateId::Fever8Shot),
];
const SOURCES: [(&str, KgSource); 2] = [("mapper", KgSource::Mapper), ("gold", KgSource::Gold)];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], t: T) -> &'static str {
    options.iter().find(|(_, o)| *o == t).map(|(n, _)| *n).expect("every variant listed")
}

macro_rules! choice_field {
    ($ty:ty, $options:expr) => {
        impl Field for $ty {
            fn parse(key: &str, v: &Value) -> Result<Self, ConfigError> {
                choice(key, v, &$options)
            }
            fn show(&self) -> String {
                Value::String(name_of(&$options, *self).into()).to_string()
            }
        }
    };
}

choice_field!(NormOrder, NORMS);
choice_field!(Mode, MODES);
choice_field!(TemplateId, TEMPLATES);
choice_field!(KgSource, SOURCES);

macro_rules! keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        /// Every accepted key, in echo order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            fn set_value(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
                match key {
                    $($key => self.$($field).+ = Field::parse(key, v)?,)*
                    _ => return Err(key_err(key, "unknown key")),
                }
                Ok(())
            }

            /// `(key, TOML literal)` for every key.
            pub fn echo_pairs(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.show())),*]
            }
        }
    };
}

keys! {
    "seed" => seed,
    "threads" => threads,
    "out_dir" => out_dir,
    "corpus.countries" => corpus.countries,
    "corpus.world_seed" => corpus.world_seed,
    "corpus.test_fraction" => corpus.test_fraction,
    "corpus.wiki_docs_per_entity" => corpus.wiki_docs_per_entity,
    "corpus.lm_docs_per_entity" => corpus.lm_docs_per_entity,
    "corpus.blank_every" => corpus.blank_every,
    "corpus.window" => corpus.window,
    "corpus.heldout_every" => corpus.heldout_every,
    "corpus.eval_items" => corpus.eval_items,
    "corpus.sources" => corpus.sources,
    "corpus.titles" => corpus.titles,
    "corpus.triples" => corpus.triples,
    "transe.dim" => transe.dim,
    "transe.margin" => transe.margin,
    "transe.norm" => transe.norm,
    "transe.epochs" => transe.epochs,
    "transe.batch_size" => transe.batch_size,
    "transe.lr" => transe.lr,
    "transe.negatives" => transe.negatives,
    "mapper.buckets" => mapper.buckets,
    "mapper.hidden" => mapper.hidden,
    "mapper.lr" => mapper.lr,
    "mapper.weight_decay" => mapper.weight_decay,
    "mapper.epochs" => mapper.epochs,
    "mapper.batch_size" => mapper.batch_size,
    "mapper.context_len" => mapper.context_len,
    "lm.d_model" => lm.d_model,
    "lm.n_layers" => lm.n_layers,
    "lm.n_heads" => lm.n_heads,
    "lm.d_ff" => lm.d_ff,
    "lm.context" => lm.context,
    "lm.vocab_size" => lm.vocab_size,
    "lm.lr" => lm.lr,
    "lm.weight_decay" => lm.weight_decay,
    "lm.epochs" => lm.epochs,
    "lm.batch_size" => lm.batch_size,
    "adapter.lr" => adapter.lr,
    "adapter.weight_decay" => adapter.weight_decay,
    "adapter.epochs" => adapter.epochs,
    "adapter.batch_size" => adapter.batch_size,
    "eval.template" => eval.template,
    "eval.mode" => eval.mode,
    "eval.kg_source" => eval.kg_source,
    "eval.items" => eval.items,
    "eval.max_new" => eval.max_new,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

impl RunConfig {
    /// Applies every key of a TOML document on top of `self`.
    pub fn apply_toml(&mut self, text: &str) -> Result<(), ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        for (k, v) in &flat {
            self.set_value(k, v)?;
        }
        Ok(())
    }

    /// `key=value` override. The value is read as a TOML literal, falling
    /// back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set_value(key, &value)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_toml(text)?;
        c.validate()?;
        Ok(c)
    }

    /// The effective configuration as TOML that parses back to `self`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.echo_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(key_err(key, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(key_err(key, format!("must be non-negative, got {v}")))
            }
        };
        let nonzero = |key: &str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(key_err(key, "must be at least 1"))
            }
        };
        let c = &self.corpus;
        nonzero("corpus.countries", c.countries)?;
        if !(c.test_fraction > 0.0 && c.test_fraction < 1.0) {
            return Err(key_err("corpus.test_fraction", "must lie strictly between 0 and 1"));
        }
        nonzero("corpus.wiki_docs_per_entity", c.wiki_docs_per_entity)?;
        nonzero("corpus.lm_docs_per_entity", c.lm_docs_per_entity)?;
        if c.heldout_every < 2 {
            return Err(key_err("corpus.heldout_every", "must be at least 2"));
        }
        let t = &self.transe;
        nonzero("transe.dim", t.dim)?;
        positive("transe.margin", t.margin)?;
        nonzero("transe.batch_size", t.batch_size)?;
        positive("transe.lr", t.lr)?;
        nonzero("transe.negatives", t.negatives)?;
        let m = &self.mapper;
        nonzero("mapper.buckets", m.buckets)?;
        nonzero("mapper.hidden", m.hidden)?;
        positive("mapper.lr", m.lr)?;
        non_negative("mapper.weight_decay", m.weight_decay)?;
        nonzero("mapper.batch_size", m.batch_size)?;
        nonzero("mapper.context_len", m.context_len)?;
        let l = &self.lm;
        nonzero("lm.d_model", l.d_model)?;
        nonzero("lm.n_layers", l.n_layers)?;
        nonzero("lm.n_heads", l.n_heads)?;
        if !l.d_model.is_multiple_of(l.n_heads) {
            return Err(key_err("lm.n_heads", "must divide lm.d_model"));
        }
        nonzero("lm.d_ff", l.d_ff)?;
        if l.context < 2 {
            return Err(key_err("lm.context", "must be at least 2"));
        }
        if l.vocab_size <= kgmod_core::modality::vocab::SPECIALS.len() {
            return Err(key_err("lm.vocab_size", "must exceed the number of special tokens"));
        }
        positive("lm.lr", l.lr)?;
        non_negative("lm.weight_decay", l.weight_decay)?;
        nonzero("lm.batch_size", l.batch_size)?;
        let a = &self.adapter;
        positive("adapter.lr", a.lr)?;
        non_negative("adapter.weight_decay", a.weight_decay)?;
        nonzero("adapter.batch_size", a.batch_size)?;
        nonzero("eval.max_new", self.eval.max_new)?;
        Ok(())
    }

    /// Seed of a named stage, split from the global seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        stage_seed(self.seed, stage)
    }

    pub fn transe_config(&self) -> TranseConfig {
        let t = &self.transe;
        TranseConfig {
            dim: t.dim,
            margin: t.margin,
            norm: t.norm,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            negatives: t.negatives,
            seed: self.stage_seed("transe"),
        }
    }

    pub fn mapper_shape(&self, kg_dim: usize) -> MapperShape {
        MapperShape {
            buckets: self.mapper.buckets,
            hidden: self.mapper.hidden,
            kg_dim,
            hash_seed: self.stage_seed("mapper.hash"),
        }
    }

    pub fn mapper_config(&self) -> MapperConfig {
        let m = &self.mapper;
        MapperConfig {
            lr: m.lr,
            weight_decay: m.weight_decay,
            epochs: m.epochs,
            batch_size: m.batch_size,
            seed: self.stage_seed("mapper"),
            context_len: m.context_len,
        }
    }

    pub fn lm_config(&self) -> LmConfig {
        let l = &self.lm;
        LmConfig {
            d_model: l.d_model,
            n_layers: l.n_layers,
            n_heads: l.n_heads,
            d_ff: l.d_ff,
            context: l.context,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let l = &self.lm;
        PretrainConfig {
            lr: l.lr,
            weight_decay: l.weight_decay,
            epochs: l.epochs,
            batch_size: l.batch_size,
            seed: self.stage_seed("lm"),
        }
    }

    pub fn adapter_config(&self) -> AdapterConfig {
        let a = &self.adapter;
        AdapterConfig {
            lr: a.lr,
            weight_decay: a.weight_decay,
            epochs: a.epochs,
            batch_size: a.batch_size,
            seed: self.stage_seed("adapter"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_stage_defaults() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.mapper.lr, 1e-4);
        assert_eq!(c.mapper.weight_decay, 1e-3);
        assert_eq!(c.mapper.epochs, 1);
        assert_eq!(c.adapter.lr, 5e-3);
        assert_eq!(c.adapter.weight_decay, 1e-3);
        assert_eq!(c.adapter.epochs, 1);
        assert_eq!((c.transe.dim, c.transe.margin, c.transe.norm), (64, 1.0, NormOrder::L2));
        assert_eq!((c.transe.lr, c.transe.negatives, c.transe.batch_size), (0.01, 1, 32));
    }

    #[test]
    fn sections_and_dotted_keys() {
        let c = RunConfig::from_toml("seed = 7\n[transe]\nepochs = 3\nnorm = \"L1\"\n[eval]\nmode = \"with_kg\"\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.transe.epochs, 3);
        assert_eq!(c.transe.norm, NormOrder::L1);
        assert_eq!(c.eval.mode, Mode::WithKg);
        let d = RunConfig::from_toml("transe.epochs = 3\n").unwrap();
        assert_eq!(d.transe.epochs, 3);
    }

    #[test]
    fn unknown_and_invalid_keys_are_named() {
        let err = RunConfig::from_toml("[transe]\nepoch = 3\n").unwrap_err();
        assert_eq!(err, key_err("transe.epoch", "unknown key"));
        let err = RunConfig::from_toml("[adapter]\nlr = -0.1\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Key { key, .. } if key == "adapter.lr"), "{err}");
        let err = RunConfig::from_toml("[lm]\nepochs = \"many\"\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Key { key, .. } if key == "lm.epochs"), "{err}");
        assert!(matches!(RunConfig::from_toml("[lm\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn echo_roundtrips() {
        let mut c = RunConfig::default();
        c.apply_override("mapper.lr=0.003").unwrap();
        c.apply_override("eval.items = data/x.csv").unwrap();
        c.apply_override("transe.norm=L1").unwrap();
        assert_eq!(c.eval.items, "data/x.csv");
        let back = RunConfig::from_toml(&c.echo()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.echo_pairs().len(), KEYS.len());
    }

    #[test]
    fn modes_differ_in_one_echo_line() {
        let plain = RunConfig::default();
        let mut kg = plain.clone();
        kg.eval.mode = Mode::WithKg;
        let diff: Vec<_> = plain
            .echo_pairs()
            .into_iter()
            .zip(kg.echo_pairs())
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0)
            .collect();
        assert_eq!(diff, ["eval.mode"]);
    }

    #[test]
    fn stage_seeds_differ() {
        let c = RunConfig::default();
        assert_ne!(c.stage_seed("transe"), c.stage_seed("mapper"));
        assert_eq!(c.transe_config().seed, c.stage_seed("transe"));
    }
}
