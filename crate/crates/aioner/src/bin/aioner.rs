use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aioner::config::{CorpusFormat, PipelineConfig};
use aioner::pipeline::{self, Context, TagRequest};
use aioner::PipelineError;
use aioner_core::corpus::SplitConfig;
use aioner_core::predict::DecodeMode;
use aioner_core::scheme::{EntityTypeRegistry, LabelSet};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aioner", version, about = "Multi-corpus NER with the all-in-one tagging scheme")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline manifest (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Tagging worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Treat recoverable input problems as errors.
    #[arg(long, global = true)]
    strict: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Pubtator,
    Conll,
}

impl From<Format> for CorpusFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Pubtator => CorpusFormat::Pubtator,
            Format::Conll => CorpusFormat::Conll,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Aio,
    Ind,
    Combined,
}

impl From<Mode> for DecodeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Aio => DecodeMode::Aio,
            Mode::Ind => DecodeMode::Ind,
            Mode::Combined => DecodeMode::Combined,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a corpus between PubTator and CoNLL.
    Convert {
        input: PathBuf,
        #[arg(long, value_enum)]
        from: Format,
        #[arg(long, value_enum)]
        to: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Split a PubTator file into train and test documents.
    Split {
        input: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Apply the manifest's normalization rules to a PubTator file.
    Normalize {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build the merged training set described by the manifest.
    Merge,
    /// Train a model on the merged training set.
    Train {
        /// Merged CoNLL file; defaults to the manifest output.
        #[arg(long)]
        merged: Option<PathBuf>,
    },
    /// Tag a PubTator file.
    Tag {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Decode for one task tag (a type or ALL) instead of `--mode`.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Precomputed emission scores.
        #[arg(long)]
        emissions: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score predictions against gold annotations.
    Eval {
        gold: PathBuf,
        pred: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Also print per-type counts.
        #[arg(long)]
        detail: bool,
    },
    /// Wilcoxon signed-rank test over paired per-run scores.
    Compare { runs_a: PathBuf, runs_b: PathBuf },
}

fn init_logging(g: &Global) {
    let level = if g.quiet {
        log::LevelFilter::Error
    } else {
        match g.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    let style = env_logger::Env::new().write_style("AIONER_LOG_STYLE");
    env_logger::Builder::new().parse_env(style).filter_level(level).format_timestamp(None).init();
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), PipelineError> {
    match output {
        Some(p) => pipeline::write_file(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| PipelineError::io(Path::new("<stdout>"), e))
        }
    }
}

fn manifest(g: &Global) -> Result<Option<PipelineConfig>, PipelineError> {
    g.config.as_deref().map(PipelineConfig::load).transpose()
}

fn require(g: &Global) -> Result<PipelineConfig, PipelineError> {
    manifest(g)?.ok_or_else(|| PipelineError::Config("this command needs --config".into()))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let g = &cli.global;
    let ctx = Context {
        seed: g.seed,
        threads: g.threads,
        strict: g.strict,
    };
    match cli.command {
        Command::Convert { input, from, to, output } => {
            let cfg = manifest(g)?;
            let (label_set, split) = match &cfg {
                Some(c) => (c.label_set()?, c.split_config()),
                None => (LabelSet::new(EntityTypeRegistry::default()), SplitConfig::default()),
            };
            let out = pipeline::convert(&input, from.into(), to.into(), &label_set, &split, &ctx)?;
            emit(output.as_deref(), &out.text)?;
            let s = out.stats;
            eprintln!("documents\t{}\nsentences\t{}\nmentions\t{}\nrepairs\t{}", s.documents, s.sentences, s.mentions, s.repairs);
        }
        Command::Split {
            input,
            test_fraction,
            train_out,
            test_out,
        } => {
            let seed = g.seed.or(manifest(g)?.map(|c| c.seed)).unwrap_or(0);
            let (train, test) = pipeline::split(&input, test_fraction, seed, &ctx)?;
            pipeline::write_file(&train_out, train)?;
            pipeline::write_file(&test_out, test)?;
        }
        Command::Normalize { input, output } => {
            let cfg = require(g)?;
            let (text, report) = pipeline::normalize(&input, &cfg, &ctx)?;
            emit(output.as_deref(), &text)?;
            eprintln!("stripped\t{}\nretyped\t{}\ndropped\t{}", report.stripped, report.retyped, report.dropped);
        }
        Command::Merge => {
            let cfg = require(g)?;
            let report = pipeline::cmd_merge(&cfg, &ctx)?;
            for v in &report.views {
                let c = &v.counts;
                println!("{}\t{}\t{} docs\t{} sentences\t{} tokens\t{} mentions", v.name, v.task, c.documents, c.sentences, c.tokens, c.mentions);
            }
            let t = &report.total;
            println!("total\t\t{} docs\t{} sentences\t{} tokens\t{} mentions", t.documents, t.sentences, t.tokens, t.mentions);
            println!("removed_duplicates\t{}", report.removed_duplicates);
        }
        Command::Train { merged } => {
            let cfg = require(g)?;
            let s = pipeline::cmd_train(&cfg, merged.as_deref(), &ctx)?;
            println!("model\t{}", s.model.display());
            println!("sha256\t{}", s.sha256);
            println!("epochs\t{}\nbest_epoch\t{}\nbest_dev_f1\t{:.4}\nstop_reason\t{:?}", s.epochs_run, s.best_epoch, s.best_dev_f1, s.stop_reason);
        }
        Command::Tag {
            input,
            model,
            task,
            mode,
            emissions,
            output,
        } => {
            let cfg = manifest(g)?;
            let request = TagRequest {
                task: task.as_deref(),
                mode: mode.map(Into::into).or(cfg.as_ref().map(|c| c.mode)).unwrap_or_default(),
                emissions: emissions.as_deref(),
                split: cfg.as_ref().map(|c| c.split_config()).unwrap_or_default(),
            };
            let out = pipeline::cmd_tag(&model, &input, &request, &ctx)?;
            emit(output.as_deref(), &out.text)?;
            for (t, n) in &out.per_type {
                eprintln!("{t}\t{n}");
            }
        }
        Command::Eval { gold, pred, json, detail } => {
            let types = match manifest(g)? {
                Some(c) => c.registry,
                None => EntityTypeRegistry::default().names().to_vec(),
            };
            let out = pipeline::cmd_eval(&gold, &pred, &types, &ctx)?;
            print!("{}", out.table);
            if detail {
                print!("{}", out.detail);
            }
            if let Some(p) = json {
                pipeline::write_file(&p, &out.json)?;
            }
        }
        Command::Compare { runs_a, runs_b } => {
            let out = pipeline::cmd_compare(&runs_a, &runs_b)?;
            print!("{}", out.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.global);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
