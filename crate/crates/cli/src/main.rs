use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use gramlearn::checkpoint;
use gramlearn::config::{Preset, RunConfig};
use gramlearn::data::{self, Corpus};
use gramlearn::eval::evaluate;
use gramlearn::render::{self, Trace};
use gramlearn::trainer::{EpochMetrics, Trainer};

#[derive(Parser)]
#[command(name = "gramlearn", version, about = "Learn a parser for a data format from example strings")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    SimpleJson,
    SimpleJsonStream,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    SimpleJson,
    SimpleJsonStream,
    Pdf,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::SimpleJson => Preset::SimpleJson,
            PresetArg::SimpleJsonStream => Preset::SimpleJsonStream,
            PresetArg::Pdf => Preset::PdfDictionaries,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Ascii,
    Svg,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen {
        #[arg(long, value_enum)]
        dataset: Dataset,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract top-level `<<...>>` dictionaries from raw PDF files (standard
    /// input when no file is given) into a corpus.
    Extract {
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a corpus's training split.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// `key = value` config file applied on top of the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "simple-json")]
        preset: PresetArg,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Checkpoint path, rewritten after every epoch.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics CSV; appended to when resuming.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many epochs of this invocation.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Write the freshly initialized state without training.
        #[arg(long)]
        init_only: bool,
    },
    /// Greedy parse of one sentence or a corpus.
    Parse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        sentence: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Only the corpus's eval split.
        #[arg(long, requires = "corpus")]
        eval_only: bool,
        #[arg(long, value_enum, default_value = "ascii")]
        format: Format,
        /// Write one file per sentence here instead of standard output.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Report recursion evidence, roots and frequencies on the eval split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen {
            dataset,
            count,
            seed,
            out,
        } => {
            let corpus = match dataset {
                Dataset::SimpleJson => data::gen_simple_json(count, seed)?,
                Dataset::SimpleJsonStream => data::gen_stream(count, seed)?,
            };
            data::save_corpus(&corpus, &out)?;
            eprintln!(
                "wrote {} sentences ({} train, {} eval) to {}",
                corpus.len(),
                corpus.len() - corpus.eval.len(),
                corpus.eval.len(),
                out.display()
            );
        }
        Command::Extract { files, out } => extract(&files, &out)?,
        Command::Train {
            corpus,
            config,
            preset,
            overrides,
            out,
            metrics,
            resume,
            max_epochs,
            init_only,
        } => {
            let corpus = data::load_corpus(&corpus)?;
            let train = corpus.train();
            let mut trainer = match resume {
                Some(path) => {
                    if config.is_some() || !overrides.is_empty() {
                        bail!("--config and --set cannot change a resumed run");
                    }
                    checkpoint::load(&path)?
                }
                None => Trainer::new(build_config(preset.into(), config.as_deref(), &overrides)?, &train)?,
            };
            if init_only {
                checkpoint::save(&trainer, &out)?;
                return Ok(());
            }
            train_loop(&mut trainer, &train, &out, metrics.as_deref(), max_epochs)?;
        }
        Command::Parse {
            checkpoint: ckpt,
            sentence,
            corpus,
            eval_only,
            format,
            out_dir,
        } => {
            let trainer = checkpoint::load(&ckpt)?;
            let sentences: Vec<Vec<u8>> = match (sentence, corpus) {
                (Some(s), _) => vec![s.into_bytes()],
                (None, Some(path)) => {
                    let c = data::load_corpus(&path)?;
                    if eval_only {
                        c.eval_sentences().into_iter().map(<[u8]>::to_vec).collect()
                    } else {
                        c.sentences
                    }
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            parse(&trainer, &sentences, format, out_dir.as_deref())?;
        }
        Command::Eval {
            checkpoint: ckpt,
            corpus,
            top,
            json,
        } => {
            let trainer = checkpoint::load(&ckpt)?;
            let corpus = data::load_corpus(&corpus)?;
            let eval = corpus.eval_sentences();
            if eval.is_empty() {
                bail!("the corpus has no eval split");
            }
            let report = evaluate(&trainer, &eval, top)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for r in &report.sentences {
                    println!(
                        "{:>5} roots={} recursion={} value={:.4} {}",
                        if r.recursion { "REC" } else { "-" },
                        r.roots,
                        r.recursion,
                        r.mean_spatial_value,
                        r.sentence.escape_debug()
                    );
                }
                println!(
                    "recursion rate {:.3}, mean roots {:.2}, mean spatial value {:.4}",
                    report.recursion_rate, report.mean_roots, report.mean_spatial_value
                );
                println!("top atoms:");
                for a in &report.top_atoms {
                    println!("  {:>14.4} {}", a.effective, a.atom.escape_debug());
                }
            }
        }
    }
    Ok(())
}

fn build_config(preset: Preset, file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut config = RunConfig::preset(preset);
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config = config
            .parse_overrides(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    if !overrides.is_empty() {
        config = config.parse_overrides(&overrides.join("\n")).context("in --set")?;
    }
    Ok(config)
}

fn train_loop(
    trainer: &mut Trainer,
    train: &[&[u8]],
    out: &Path,
    metrics: Option<&Path>,
    max_epochs: Option<usize>,
) -> Result<()> {
    let mut csv = match metrics {
        Some(path) => {
            let fresh = trainer.epoch == 0 || !path.exists();
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            if fresh {
                writeln!(f, "{}", EpochMetrics::CSV_HEADER)?;
            }
            Some(f)
        }
        None => None,
    };
    let stop = max_epochs.map_or(trainer.config.epochs, |m| (trainer.epoch + m).min(trainer.config.epochs));
    while trainer.epoch < stop {
        let m = trainer.run_epoch(train)?;
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", m.csv_row())?;
            f.flush()?;
        }
        checkpoint::save(trainer, out)?;
    }
    if trainer.epoch == 0 {
        checkpoint::save(trainer, out)?;
    }
    Ok(())
}

fn extract(files: &[PathBuf], out: &Path) -> Result<()> {
    let mut dictionaries = Vec::new();
    let mut dropped = 0;
    let mut sources = Vec::new();
    if files.is_empty() {
        let mut bytes = Vec::new();
        std::io::stdin().read_to_end(&mut bytes)?;
        let x = data::extract_pdf_dictionaries(&bytes);
        dictionaries.extend(x.dictionaries);
        dropped += x.dropped;
        sources.push("<stdin>".to_string());
    }
    for path in files {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let x = data::extract_pdf_dictionaries(&bytes);
        dictionaries.extend(x.dictionaries);
        dropped += x.dropped;
        sources.push(path.display().to_string());
    }
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} unterminated dictionaries");
    }
    let n = dictionaries.len();
    let corpus = Corpus::with_tail_split(
        dictionaries,
        data::pdf_eval_count(n),
        format!("pdf dictionaries from {}", sources.join(", ")),
    );
    data::save_corpus(&corpus, out)?;
    eprintln!("wrote {n} dictionaries to {}", out.display());
    Ok(())
}

fn parse(trainer: &Trainer, sentences: &[Vec<u8>], format: Format, out_dir: Option<&Path>) -> Result<()> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let ext = match format {
        Format::Ascii => "txt",
        Format::Svg => "svg",
        Format::Json => "json",
    };
    let mut stdout = std::io::stdout().lock();
    for (i, s) in sentences.iter().enumerate() {
        let out = trainer.parse(s)?;
        let text = match format {
            Format::Ascii => render::ascii(s, &out.tree),
            Format::Svg => render::svg(s, &out.tree, &trainer.types),
            // one compact trace per line when several go to one stream
            Format::Json if out_dir.is_none() && sentences.len() > 1 => {
                serde_json::to_string(&Trace::new(s, &out.actions))? + "\n"
            }
            Format::Json => Trace::new(s, &out.actions).to_json() + "\n",
        };
        match out_dir {
            Some(dir) => {
                let path = dir.join(format!("parse_{i:04}.{ext}"));
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            None => {
                if i > 0 && format == Format::Ascii {
                    writeln!(stdout)?;
                }
                stdout.write_all(text.as_bytes())?;
            }
        }
    }
    Ok(())
}
