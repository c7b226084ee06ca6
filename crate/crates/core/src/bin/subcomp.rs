use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use subcomp::experiment::{compare_variants, run_geometry, run_probe, CompareConfig, ExperimentConfig};
use subcomp::lexicon::{build_dataset, parse_lexicon, VocabFile, DEFAULT_TRAIN_RATIO};
use subcomp::report::{emit_all, emit_comparison};
use subcomp::store::validate_store;
use subcomp::synthetic::{write_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(name = "subcomp", version, about = "Subword composition geometry and probing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Procrustes alignment + P@1 per layer and composition op.
    Geometry {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Word-type or word-length probes per layer.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two variants of one experiment side by side.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Intersect a lexicon with tokenizer vocabularies and split it.
    BuildDataset {
        #[arg(long)]
        lexicon: PathBuf,
        /// One or more vocabulary files.
        #[arg(long = "vocab", required = true)]
        vocabs: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TRAIN_RATIO)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a store directory for consistency.
    ValidateStore { path: PathBuf },
    /// Write a synthetic corpus, stores and example configs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10000)]
        words: usize,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Geometry { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            prepare_out(&out)?;
            report_written(&emit_all(&run_geometry(&cfg)?, &out)?);
        }
        Command::Probe { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            if cfg.task.is_none() {
                bail!("probe config must set \"task\" to word_type or word_length");
            }
            prepare_out(&out)?;
            report_written(&emit_all(&run_probe(&cfg)?, &out)?);
        }
        Command::Compare { config, out } => {
            let cfg = CompareConfig::load(&config)?;
            let cmp = compare_variants(&cfg)?;
            prepare_out(&out)?;
            report_written(&emit_comparison(&cmp, &out)?);
        }
        Command::BuildDataset {
            lexicon,
            vocabs,
            ratio,
            seed,
            out,
        } => {
            let records = parse_lexicon(&lexicon)?;
            let vocabs = vocabs.iter().map(|p| VocabFile::load(p)).collect::<Result<Vec<_>, _>>()?;
            let dataset = build_dataset(&records, &vocabs, ratio, seed)?;
            dataset.save(&out)?;
            let c = dataset.counts();
            println!(
                "{} words ({} root / {} non-root), {} train / {} test",
                c.total(),
                c.root(),
                c.nonroot(),
                c.train(),
                c.test()
            );
        }
        Command::ValidateStore { path } => {
            let report = validate_store(&path);
            print!("{report}");
            if !report.passed() {
                bail!("store {} failed validation", path.display());
            }
        }
        Command::Synth { out, words, layers, seed } => {
            let spec = SyntheticSpec {
                n_words: words,
                num_layers: layers,
                seed,
                ..Default::default()
            };
            let written = write_synthetic(&spec, &out)?;
            let store = written.store_path.file_name().unwrap().to_string_lossy().into_owned();
            let pairs = written.pair_store_path.file_name().unwrap().to_string_lossy().into_owned();
            let model = serde_json::json!([{ "name": "synthetic", "store": store, "pair_store": pairs }]);
            let configs = [
                ("geometry.json", serde_json::json!({ "models": model, "dataset": "dataset.json", "task": "geometry" })),
                ("word_type.json", serde_json::json!({ "models": model, "dataset": "dataset.json", "task": "word_type" })),
                ("word_length.json", serde_json::json!({ "models": model, "dataset": "dataset.json", "task": "word_length" })),
                (
                    "compare.json",
                    serde_json::json!({
                        "label_a": "isolated",
                        "label_b": "contextual",
                        "a": { "models": model, "dataset": "dataset.json", "task": "geometry", "ops": ["add"] },
                        "b": { "models": model, "dataset": "dataset.json", "task": "geometry", "ops": ["add"], "mode": "contextual" },
                    }),
                ),
            ];
            for (name, value) in configs {
                let path = out.join(name);
                std::fs::write(&path, serde_json::to_string_pretty(&value)?)?;
                println!("wrote {}", path.display());
            }
            println!("wrote synthetic corpus of {} words under {}", written.corpus.dataset.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
