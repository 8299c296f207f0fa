use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coldbundle::config::{Config, SplitName};
use coldbundle::dataset::{Holdout, SplitRatios};
use coldbundle::eval::EvalReport;
use coldbundle::run::{cmd_eval, cmd_mine, cmd_split, cmd_synth, cmd_train, EvalRequest, RelationSource};
use coldbundle::synthetic::PlantedSpec;
use coldbundle::{Error, Result};

#[derive(Parser)]
#[command(name = "coldbundle", version, about = "Cold-start bundle recommendation pipeline")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Cold,
    Warm,
    All,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Cold => SplitName::Cold,
            SplitArg::Warm => SplitName::Warm,
            SplitArg::All => SplitName::All,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HoldoutArg {
    Valid,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Mine item-pair relations and item popularity.
    Mine {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train embeddings and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory of `mine`.
        #[arg(long, required_unless_present = "mine_inline", conflicts_with = "mine_inline")]
        mined: Option<PathBuf>,
        /// Mine relations before training instead of reading them.
        #[arg(long)]
        mine_inline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on held-out interactions.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        k: Vec<usize>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "cold,warm,all")]
        split: Vec<SplitArg>,
        #[arg(long, value_enum, default_value = "test")]
        holdout: HoldoutArg,
        /// Keep training positives among the candidates.
        #[arg(long)]
        no_mask: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a planted community dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Re-split a dataset so validation and test bundles are cold.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Train, validation and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.7,0.1,0.2")]
        ratios: Vec<f64>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn print_report(r: &EvalReport) {
    println!("{:<6} {:>4} {:>9} {:>9} {:>7}", "split", "K", "recall", "ndcg", "users");
    for s in SplitName::ALL {
        let users = r.users_evaluated.get(s.as_str());
        match r.split(s) {
            Some(table) => {
                let mut rows: Vec<(usize, _)> = table.iter().map(|(k, m)| (k.parse().unwrap_or(0), m)).collect();
                rows.sort_by_key(|x| x.0);
                for (k, m) in rows {
                    println!(
                        "{:<6} {:>4} {:>9.4} {:>9.4} {:>7}",
                        s.as_str(),
                        k,
                        m.recall,
                        m.ndcg,
                        users.copied().unwrap_or(0)
                    );
                }
            }
            None if users.is_some() => println!("{:<6} {:>4} {:>9} {:>9} {:>7}", s.as_str(), "-", "-", "-", 0),
            None => {}
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure worker threads: {e}")))?;
    }
    match cli.command {
        Command::Mine { data, config, out } => {
            let cfg = load_config(config.as_deref())?;
            cmd_mine(&data, &cfg, &out)?;
        }
        Command::Train {
            data,
            config,
            mined,
            mine_inline,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let source = match mined {
                Some(dir) if !mine_inline => RelationSource::Mined(dir),
                _ => RelationSource::Inline,
            };
            let summary = cmd_train(&data, &cfg, source, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint_hash": summary.checkpoint_hash,
                    "best": summary.best,
                    "epochs_run": summary.epochs.len(),
                })
            );
        }
        Command::Eval {
            data,
            checkpoint,
            k,
            split,
            holdout,
            no_mask,
            out,
        } => {
            let req = EvalRequest {
                ks: k,
                splits: split.into_iter().map(SplitName::from).collect(),
                holdout: match holdout {
                    HoldoutArg::Valid => Holdout::Valid,
                    HoldoutArg::Test => Holdout::Test,
                },
                mask_train: no_mask.then_some(false),
            };
            let report = cmd_eval(&data, &checkpoint, &req, out.as_deref())?;
            print_report(&report);
        }
        Command::Synth { out, seed } => {
            let ds = cmd_synth(&PlantedSpec::default(), seed, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "users": ds.spaces.n_users,
                    "bundles": ds.spaces.n_bundles,
                    "items": ds.spaces.n_items,
                    "warm_bundles": ds.splits.warm_bundles().len(),
                    "cold_bundles": ds.splits.cold_bundles().len(),
                })
            );
        }
        Command::Split {
            data,
            out,
            seed,
            ratios,
        } => {
            let ratios = SplitRatios {
                train: ratios[0],
                valid: ratios[1],
                test: ratios[2],
            };
            cmd_split(&data, ratios, seed, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
