//! Statement-judging evaluation: 8-shot prompts, verdict parsing and
//! per-topic accuracy.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::modality::Mode;
use crate::text::sig6;

/// Topics accepted in statement datasets.
pub const TOPICS: [&str; 9] = [
    "animals",
    "cieacf",
    "cities",
    "companies",
    "elements",
    "facts",
    "fever",
    "generated",
    "inventions",
];

pub fn is_known_topic(topic: &str) -> bool {
    TOPICS.contains(&topic)
}

/// One statement with its gold truth value.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EvalItem {
    pub statement: String,
    pub gold: bool,
    pub topic: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    TrueFalse8Shot,
    Fever8Shot,
}

impl TemplateId {
    pub fn name(self) -> &'static str {
        match self {
            TemplateId::TrueFalse8Shot => "truefalse_8shot",
            TemplateId::Fever8Shot => "fever_8shot",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "truefalse_8shot" => Some(TemplateId::TrueFalse8Shot),
            "fever_8shot" => Some(TemplateId::Fever8Shot),
            _ => None,
        }
    }
}

/// An 8-shot judging prompt. Shots keep their judgement text exactly as
/// written, stray trailing punctuation included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub instruction: &'static str,
    pub shots: &'static [(&'static str, &'static str)],
    pub positive: &'static str,
    pub negative: &'static str,
    /// Between a statement line and its judgement line.
    pub separator: &'static str,
}

const TRUEFALSE_SHOTS: [(&str, &str); 8] = [
    ("Marlon Brando refused to be in any films in 1972.", "\"False\""),
    ("Dracula is a written work.", "\"True\""),
    ("Maria Sharapova passed all drug tests at the 2016 Australian Open.", "\"False\""),
    ("Blood are red.", "\"True\"."),
    ("David Cronenberg has a cameo in To Die For.", "\"True\"."),
    ("Albert Einstein was born in Moscow.", "\"False\"."),
    ("Cubango is a city in Australia.", "\"False\"."),
    ("The Okavango River is a river in southwest Africa.", "\"True\"."),
];

const FEVER_SHOTS: [(&str, &str); 8] = [
    ("Furia is adapted from Graffiti and it is French.", "\"SUPPORTS\""),
    ("Prince (musician) was not backed by the New Power Generation.", "\"REFUTES\""),
    ("Ronin is a 2001 film.", "\"REFUTES\""),
    ("The 1998 NFL Draft was cancelled April 18 -- 19.", "\"REFUTES\""),
    ("Usher's sophomore single is My Way.", "\"REFUTES\""),
    ("Anna Kendrick made her film debut in Camp.", "\"SUPPORTS\""),
    ("The G1 Climax is held each March.", "\"REFUTES\""),
    ("Loving was directed by Michael Shannon.", "\"REFUTES\""),
];

pub const TRUEFALSE_8SHOT: PromptTemplate = PromptTemplate {
    id: TemplateId::TrueFalse8Shot,
    instruction: "I want you act as an statement judge. Given a statement, your objective is to determine if the provided statement correct or not. Write \"True\" if the given statement is true and \"False\" if given statement is false. The answer you give MUST be \"True\" or \"False\".",
    shots: &TRUEFALSE_SHOTS,
    positive: "True",
    negative: "False",
    separator: "\n\n",
};

pub const FEVER_8SHOT: PromptTemplate = PromptTemplate {
    id: TemplateId::Fever8Shot,
    instruction: "I want you act as an statement judge. Given a statement, your objective is to determine if the provided statement correct or not. Write \"SUPPORTS\" if the given statement is true and \"REFUTES\" if given statement is false. The answer you give MUST be \"SUPPORTS\" or \"REFUTES\".",
    shots: &FEVER_SHOTS,
    positive: "SUPPORTS",
    negative: "REFUTES",
    separator: "\n",
};

/// Checked-in transcriptions the rendered preambles must equal.
pub const TRUEFALSE_FIXTURE: &str = include_str!("../fixtures/truefalse_8shot.txt");
pub const FEVER_FIXTURE: &str = include_str!("../fixtures/fever_8shot.txt");

pub const MARKER: &str = "Your Judgement:";

pub fn template(id: TemplateId) -> &'static PromptTemplate {
    match id {
        TemplateId::TrueFalse8Shot => &TRUEFALSE_8SHOT,
        TemplateId::Fever8Shot => &FEVER_8SHOT,
    }
}

impl PromptTemplate {
    pub fn preamble(&self) -> String {
        let mut s = String::new();
        s.push_str(self.instruction);
        s.push_str("\n\nFor example:\n\n");
        for (statement, judgement) in self.shots {
            let _ = write!(s, "Statement: {statement}{}{MARKER} {judgement}\n\n", self.separator);
        }
        s
    }

    pub fn fixture(&self) -> &'static str {
        match self.id {
            TemplateId::TrueFalse8Shot => TRUEFALSE_FIXTURE,
            TemplateId::Fever8Shot => FEVER_FIXTURE,
        }
    }

    /// The quoted verdict a perfect judge would emit.
    pub fn verdict_text(&self, truth: bool) -> String {
        format!("\"{}\"", if truth { self.positive } else { self.negative })
    }
}

pub fn build_prompt(template: &PromptTemplate, statement: &str) -> String {
    let mut s = template.preamble();
    let _ = write!(s, "Statement: {statement}{}{MARKER}", template.separator);
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Positive,
    Negative,
    Unparsable,
}

impl Verdict {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Verdict::Positive => Some(true),
            Verdict::Negative => Some(false),
            Verdict::Unparsable => None,
        }
    }
}

/// First whole-word, case-insensitive occurrence of either verdict after the
/// last judgement marker (or anywhere when there is none).
pub fn parse_verdict(generation: &str, template: &PromptTemplate) -> Verdict {
    let lower = generation.to_ascii_lowercase();
    let marker = MARKER.to_ascii_lowercase();
    let from = lower.rfind(&marker).map_or(0, |i| i + marker.len());
    let tail = &lower[from..];
    let pos = find_word(tail, &template.positive.to_ascii_lowercase());
    let neg = find_word(tail, &template.negative.to_ascii_lowercase());
    match (pos, neg) {
        (Some(p), Some(n)) if p < n => Verdict::Positive,
        (Some(_), Some(_)) => Verdict::Negative,
        (Some(_), None) => Verdict::Positive,
        (None, Some(_)) => Verdict::Negative,
        (None, None) => Verdict::Unparsable,
    }
}

fn find_word(hay: &str, word: &str) -> Option<usize> {
    let bytes = hay.as_bytes();
    let mut from = 0;
    while let Some(i) = hay[from..].find(word) {
        let s = from + i;
        let e = s + word.len();
        let before = s == 0 || !bytes[s - 1].is_ascii_alphanumeric();
        let after = e == bytes.len() || !bytes[e].is_ascii_alphanumeric();
        if before && after {
            return Some(s);
        }
        from = s + 1;
    }
    None
}

/// Outcome for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRecord {
    pub index: usize,
    pub topic: String,
    pub gold: bool,
    pub verdict: Verdict,
    pub failed: bool,
    pub kg_vectors: usize,
}

impl ItemRecord {
    pub fn correct(&self) -> bool {
        !self.failed && self.verdict.as_bool() == Some(self.gold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicScore {
    pub topic: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub template: TemplateId,
    pub mode: Mode,
    /// Sorted by topic name.
    pub topics: Vec<TopicScore>,
    /// Mean of the per-topic accuracies.
    pub average: f64,
    pub unparsable: usize,
    pub failed: usize,
    pub records: Vec<ItemRecord>,
    /// Free-form run metadata such as seeds and model hashes.
    pub metadata: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no items to evaluate")]
    NoItems,
}

/// Runs `model` on every item's prompt. In `WithKg` mode `kg` supplies the
/// vectors for each statement; in `Plain` mode it is never called and the
/// model receives no vectors. Failed items count as incorrect.
pub fn judge<M, K, E>(
    items: &[EvalItem],
    template: &PromptTemplate,
    mode: Mode,
    mut model: M,
    mut kg: K,
) -> Result<EvalReport, EvalError>
where
    M: FnMut(&str, &[Vec<f64>]) -> Result<String, E>,
    K: FnMut(&str) -> Result<Vec<Vec<f64>>, E>,
{
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    let mut records = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let prompt = build_prompt(template, &item.statement);
        let vectors = match mode {
            Mode::Plain => Ok(Vec::new()),
            Mode::WithKg => kg(&item.statement),
        };
        let outcome = vectors.and_then(|v| model(&prompt, &v).map(|g| (g, v.len())));
        let (verdict, failed, kg_vectors) = match outcome {
            Ok((generation, n)) => (parse_verdict(&generation, template), false, n),
            Err(_) => (Verdict::Unparsable, true, 0),
        };
        records.push(ItemRecord {
            index,
            topic: item.topic.clone(),
            gold: item.gold,
            verdict,
            failed,
            kg_vectors,
        });
    }
    Ok(summarize(template.id, mode, records))
}

/// Aggregates item records into per-topic accuracies.
pub fn summarize(template: TemplateId, mode: Mode, records: Vec<ItemRecord>) -> EvalReport {
    let mut by_topic: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &records {
        let e = by_topic.entry(r.topic.as_str()).or_default();
        e.0 += r.correct() as usize;
        e.1 += 1;
    }
    let topics: Vec<TopicScore> = by_topic
        .into_iter()
        .map(|(topic, (correct, total))| TopicScore {
            topic: topic.to_string(),
            correct,
            total,
            accuracy: correct as f64 / total as f64,
        })
        .collect();
    let average = if topics.is_empty() {
        0.0
    } else {
        topics.iter().map(|t| t.accuracy).sum::<f64>() / topics.len() as f64
    };
    EvalReport {
        template,
        mode,
        topics,
        average,
        unparsable: records.iter().filter(|r| !r.failed && r.verdict == Verdict::Unparsable).count(),
        failed: records.iter().filter(|r| r.failed).count(),
        records,
        metadata: Vec::new(),
    }
}

const REFERENCE_FOOTER: &str = "reference values at full scale, not targets here:\n  true-false mistral plain 0.81 with_kg 0.97\n  fever mistral plain 0.665 with_kg 0.743\n  halueval-qa llama-2 plain 0.492 with_kg 0.591\n";

/// Plain-text report. Floats carry six significant digits.
pub fn render_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "template {}", report.template.name());
    let _ = writeln!(s, "mode {}", report.mode.name());
    for (k, v) in &report.metadata {
        let _ = writeln!(s, "meta {k} {v}");
    }
    for t in &report.topics {
        let _ = writeln!(s, "topic {} {}/{} {}", t.topic, t.correct, t.total, sig6(t.accuracy));
    }
    let _ = writeln!(s, "average {}", sig6(report.average));
    let _ = writeln!(s, "unparsable {}", report.unparsable);
    let _ = writeln!(s, "failed {}", report.failed);
    s.push('\n');
    s.push_str(REFERENCE_FOOTER);
    s
}

/// One CSV line per item: `index,topic,gold,verdict,correct,kg_vectors`.
pub fn render_records(report: &EvalReport) -> String {
    let mut s = String::from("index,topic,gold,verdict,correct,kg_vectors\n");
    for r in &report.records {
        let verdict = match (r.failed, r.verdict) {
            (true, _) => "failed",
            (_, Verdict::Positive) => "positive",
            (_, Verdict::Negative) => "negative",
            (_, Verdict::Unparsable) => "unparsable",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.index,
            r.topic,
            r.gold as u8,
            verdict,
            r.correct() as u8,
            r.kg_vectors
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn item(s: &str, gold: bool, topic: &str) -> EvalItem {
        EvalItem {
            statement: s.into(),
            gold,
            topic: topic.into(),
        }
    }

    #[test]
    fn prompts_contain_shots() {
        let p = build_prompt(&TRUEFALSE_8SHOT, "Blood are red.");
        assert!(p.contains("Statement: Dracula is a written work."));
        assert!(p.ends_with("Statement: Blood are red.\n\nYour Judgement:"));
        let p = build_prompt(&FEVER_8SHOT, "x");
        assert!(p.contains("Statement: Anna Kendrick made her film debut in Camp."));
        assert!(p.contains("MUST be \"SUPPORTS\" or \"REFUTES\""));
        assert_eq!(build_prompt(&FEVER_8SHOT, "x"), p);
    }

    #[test]
    fn preambles_equal_fixtures() {
        assert_eq!(TRUEFALSE_8SHOT.preamble(), TRUEFALSE_FIXTURE);
        assert_eq!(FEVER_8SHOT.preamble(), FEVER_FIXTURE);
    }

    #[test]
    fn verdicts() {
        let tf = &TRUEFALSE_8SHOT;
        assert_eq!(parse_verdict("... Your Judgement: \"True\"", tf), Verdict::Positive);
        assert_eq!(parse_verdict("... Your Judgement: REFUTES obviously", &FEVER_8SHOT), Verdict::Negative);
        assert_eq!(parse_verdict("no verdict words here", tf), Verdict::Unparsable);
        // Earlier shots are ignored after the last marker.
        let p = build_prompt(tf, "s") + " false, not true";
        assert_eq!(parse_verdict(&p, tf), Verdict::Negative);
        assert_eq!(parse_verdict("Your Judgement: untrue", tf), Verdict::Unparsable);
    }

    #[test]
    fn oracle_and_anti_oracle() {
        let items = vec![
            item("a", true, "cities"),
            item("b", false, "cities"),
            item("c", false, "animals"),
        ];
        let tf = &TRUEFALSE_8SHOT;
        let gold = |p: &str| items.iter().find(|i| p.ends_with(&format!("Statement: {}\n\nYour Judgement:", i.statement))).unwrap().gold;
        let r = judge(&items, tf, Mode::Plain, |p, _| Ok::<_, ()>(tf.verdict_text(gold(p))), |_| Ok(vec![])).unwrap();
        assert_eq!(r.average, 1.0);
        assert!(r.topics.iter().all(|t| t.accuracy == 1.0));
        let r = judge(&items, tf, Mode::Plain, |p, _| Ok::<_, ()>(tf.verdict_text(!gold(p))), |_| Ok(vec![])).unwrap();
        assert_eq!(r.average, 0.0);
    }

    #[test]
    fn failures_and_average() {
        let items = vec![
            item("a", true, "cities"),
            item("b", true, "cities"),
            item("c", true, "animals"),
        ];
        let mut n = 0;
        let r = judge(
            &items,
            &TRUEFALSE_8SHOT,
            Mode::WithKg,
            |_, v: &[Vec<f64>]| {
                n += 1;
                if n == 2 {
                    Err(())
                } else {
                    Ok(format!("True {}", v.len()))
                }
            },
            |_| Ok(vec![vec![0.0]]),
        )
        .unwrap();
        assert_eq!(r.failed, 1);
        assert_eq!(r.topics[1].accuracy, 0.5);
        assert_eq!(r.average, 0.75);
        assert_eq!(r.records[0].kg_vectors, 1);
        assert!(render_report(&r).contains("average 0.75\n"));
    }

    #[test]
    fn plain_mode_never_asks_for_vectors() {
        let items = vec![item("a", true, "facts")];
        let r = judge(
            &items,
            &TRUEFALSE_8SHOT,
            Mode::Plain,
            |_, v: &[Vec<f64>]| Ok::<_, ()>(if v.is_empty() { "True".into() } else { "False".into() }),
            |_| panic!("provider called in plain mode"),
        )
        .unwrap();
        assert_eq!(r.average, 1.0);
        assert!(matches!(
            judge(&[], &TRUEFALSE_8SHOT, Mode::Plain, |_, _| Ok::<String, ()>(String::new()), |_| Ok(vec![])),
            Err(EvalError::NoItems)
        ));
    }
}
