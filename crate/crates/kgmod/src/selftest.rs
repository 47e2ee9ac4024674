//! Built-in checks run by `selftest`: finite-difference gradients for every
//! op and the three trained models, plus the checked-in fixtures.

use kgmod_core::corpus::{annotate, corpus_stats, AnnotatedDocument, CorpusStats, Summary};
use kgmod_core::evalharness::{sha256_hex, template, TemplateId};
use kgmod_core::gradsuite::{self, GRAD_TOLERANCE};

use crate::formats;

pub const PATENT_SOURCE: &str = include_str!("../fixtures/patent.wiki");
pub const PATENT_TITLES: &str = include_str!("../fixtures/patent_titles.tsv");
pub const PATENT_EXPECTED: &str = include_str!("../fixtures/patent_expected.jsonl");
pub const STATS_DOCS: &str = include_str!("../fixtures/stats_docs.jsonl");

/// Hand-computed statistics of `STATS_DOCS`: word counts 11, 4, 8 and
/// unique entities 3, 1, 0, with averages rounded half up.
pub const STATS_EXPECTED: CorpusStats = CorpusStats {
    num_texts: 3,
    words: Some(Summary { avg: 8, max: 11, min: 4 }),
    entities: Some(Summary { avg: 1, max: 3, min: 0 }),
};

pub const TRUEFALSE_SHA256: &str = "f9f8c4214ddfd13783274358bc88642c7ef1ef63b18680b101cf38417a64ede0";
pub const FEVER_SHA256: &str = "cc7a5fb4985c53900f2a1d18ac58a0ea275b596215690b894c45a3b47ad3b571";

/// Annotates the patent-law wikitext fixture and serializes it as one JSONL line.
pub fn annotate_patent_fixture() -> Result<String, formats::FormatError> {
    let index = formats::read_title_index(PATENT_TITLES)?;
    let a = annotate("patent", PATENT_SOURCE, &index);
    Ok(formats::write_annotated(std::slice::from_ref(&a.document)))
}

pub fn stats_fixture() -> Result<CorpusStats, formats::FormatError> {
    let docs: Vec<AnnotatedDocument> = formats::read_annotated(STATS_DOCS)?;
    Ok(corpus_stats(&docs))
}

pub fn preamble_hashes() -> [(TemplateId, String, &'static str); 2] {
    [
        (
            TemplateId::TrueFalse8Shot,
            sha256_hex(template(TemplateId::TrueFalse8Shot).preamble().as_bytes()),
            TRUEFALSE_SHA256,
        ),
        (
            TemplateId::Fever8Shot,
            sha256_hex(template(TemplateId::Fever8Shot).preamble().as_bytes()),
            FEVER_SHA256,
        ),
    ]
}

/// One line per check; `true` when all passed.
pub fn run(out: &mut dyn std::io::Write) -> std::io::Result<bool> {
    let mut ok = true;
    match gradsuite::run() {
        Ok(results) => {
            for (name, r) in results {
                let pass = r.max_rel_err < GRAD_TOLERANCE;
                ok &= pass;
                writeln!(
                    out,
                    "{} grad {name}: max rel err {:e} over {} entries",
                    if pass { "PASS" } else { "FAIL" },
                    r.max_rel_err,
                    r.checked
                )?;
            }
        }
        Err(e) => {
            ok = false;
            writeln!(out, "FAIL grad suite: {e}")?;
        }
    }
    let patent = annotate_patent_fixture().map(|s| s == PATENT_EXPECTED).unwrap_or(false);
    ok &= patent;
    writeln!(out, "{} fixture patent annotation", if patent { "PASS" } else { "FAIL" })?;
    let stats = stats_fixture().map(|s| s == STATS_EXPECTED).unwrap_or(false);
    ok &= stats;
    writeln!(out, "{} fixture corpus statistics", if stats { "PASS" } else { "FAIL" })?;
    for (id, got, want) in preamble_hashes() {
        let pass = got == want;
        ok &= pass;
        writeln!(out, "{} fixture {} preamble sha256", if pass { "PASS" } else { "FAIL" }, id.name())?;
    }
    Ok(ok)
}
