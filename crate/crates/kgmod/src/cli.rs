//! Command line: one subcommand per pipeline stage.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use kgmod_core::evalharness::TemplateId;
use kgmod_core::modality::Mode;

use crate::config::{KgSource, RunConfig};
use crate::pipeline::{self, PipelineError};
use crate::selftest;

#[derive(Debug, Parser)]
#[command(name = "kgmod", version, about = "Knowledge-graph modality pipeline at desk scale")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<String>,
    /// Override one config key, e.g. `--set transe.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    WithKg,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => Mode::Plain,
            ModeArg::WithKg => Mode::WithKg,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TemplateArg {
    #[value(name = "truefalse_8shot")]
    TrueFalse,
    #[value(name = "fever_8shot")]
    Fever,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Mapper,
    Gold,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic KG, articles, LM corpus and evaluation sets.
    Synth,
    /// Parse wikitext sources and link mentions to entities.
    Annotate,
    /// Corpus statistics of the annotated documents.
    Stats,
    TrainTranse,
    /// Write the entity embedding table from the TransE checkpoint.
    ExportTable,
    TrainMapper,
    PretrainLm,
    TrainAdapter,
    /// Greedy continuation of a prompt.
    Generate {
        #[arg(long)]
        prompt: String,
        /// Entity whose table vector is injected. Repeatable.
        #[arg(long = "qid")]
        qids: Vec<String>,
        #[arg(long, value_enum, default_value = "plain")]
        mode: ModeArg,
        #[arg(long, default_value_t = 16)]
        max_new: usize,
    },
    /// Judge a statement set with the 8-shot protocol.
    Eval {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        template: Option<TemplateArg>,
        #[arg(long, value_enum)]
        kg_source: Option<SourceArg>,
        /// Statement file (CSV for truefalse_8shot, JSONL for fever_8shot).
        #[arg(long)]
        items: Option<String>,
    },
    /// Gradient checks and fixture checks.
    Selftest,
    /// Every stage in order, then evaluation in both modes.
    RunAll,
    /// Print the effective configuration.
    Config,
}

fn effective_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = pipeline::read_text(path)?;
        cfg.apply_toml(&text)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out_dir {
        cfg.out_dir = o.clone();
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Command::Eval {
        mode,
        template,
        kg_source,
        items,
    } = &cli.command
    {
        if let Some(m) = mode {
            cfg.eval.mode = (*m).into();
        }
        if let Some(t) = template {
            cfg.eval.template = match t {
                TemplateArg::TrueFalse => TemplateId::TrueFalse8Shot,
                TemplateArg::Fever => TemplateId::Fever8Shot,
            };
        }
        if let Some(s) = kg_source {
            cfg.eval.kg_source = match s {
                SourceArg::Mapper => KgSource::Mapper,
                SourceArg::Gold => KgSource::Gold,
            };
        }
        if let Some(i) = items {
            cfg.eval.items = i.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<i32, PipelineError> {
    let cfg = effective_config(cli)?;
    if cfg.threads > 0 {
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let io = |source| PipelineError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    let text = match &cli.command {
        Command::Synth => pipeline::synth(&cfg)?,
        Command::Annotate => pipeline::annotate_sources(&cfg)?,
        Command::Stats => pipeline::stats(&cfg)?,
        Command::TrainTranse => pipeline::train_transe(&cfg)?,
        Command::ExportTable => pipeline::export_table(&cfg)?,
        Command::TrainMapper => pipeline::train_text2graph(&cfg)?,
        Command::PretrainLm => pipeline::pretrain_lm(&cfg)?,
        Command::TrainAdapter => pipeline::train_kg_adapter(&cfg)?,
        Command::Generate {
            prompt,
            qids,
            mode,
            max_new,
        } => pipeline::generate_text(&cfg, prompt, qids, (*mode).into(), *max_new)?,
        Command::Eval { .. } => {
            let (report, warnings) = pipeline::evaluate(&cfg)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            kgmod_core::evalharness::render_report(&report)
        }
        Command::Selftest => {
            let ok = selftest::run(out).map_err(io)?;
            return Ok(if ok { 0 } else { 1 });
        }
        Command::RunAll => {
            let mut s = String::new();
            for (stage, summary) in pipeline::run_all(&cfg)? {
                s.push_str(&format!("== {stage}\n{}\n", summary.trim_end()));
            }
            s
        }
        Command::Config => cfg.echo(),
    };
    writeln!(out, "{}", text.trim_end()).map_err(io)?;
    Ok(0)
}

/// Runs the command line and returns the process exit code: 0 success,
/// 1 failed self-test, 2 usage, 3 config, 4 data or format, 5 numeric.
pub fn run<I, T>(argv: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
