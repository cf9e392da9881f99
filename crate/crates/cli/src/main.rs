//! `bioaug`: command line front end for synthetic data generation, training
//! runs, linear probing, trace inspection and strategy comparison.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use bioaug_core::autodiff::checkpoint;
use bioaug_core::data::{self, split, SplitConfig, SyntheticTask, SyntheticTaskSpec};
use bioaug_core::pipeline::{self, action_label, argmax, files, linear_probe, ExperimentConfig, ProbeConfig};
use bioaug_core::{ErrorKind, Strategy};

#[derive(Parser)]
#[command(name = "bioaug", version, about = "Learned augmentation selection for contrastive biosignal pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Synth {
        #[arg(long)]
        task: SyntheticTask,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        #[arg(long, default_value_t = 200)]
        epochs_per_subject: usize,
        #[arg(long, default_value_t = 128)]
        epoch_len: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one experiment and write its artefacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Linear-probe a saved encoder on a labelled dataset file.
    Probe {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of train-split epochs whose labels the probe may use.
        #[arg(long, default_value_t = 0.1)]
        labeled_frac: f64,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
    },
    /// Summarise the policy trace of a run.
    Trace {
        #[arg(long)]
        run_dir: PathBuf,
        /// Also export the trace to this CSV path.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Print every n-th step.
        #[arg(long, default_value_t = 100)]
        every: usize,
    },
    /// Run several configs and tabulate their probe scores.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        /// Write the markdown table here as well as to stdout.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Keep each run's artefacts under this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<bioaug_core::Error>()).map(|e| e.kind()) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Numeric) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            task,
            out,
            subjects,
            epochs_per_subject,
            epoch_len,
            classes,
            noise,
            seed,
        } => {
            let spec = SyntheticTaskSpec {
                task,
                n_subjects: subjects,
                epochs_per_subject,
                epoch_len,
                n_classes: classes,
                noise_level: noise,
                seed,
                ..Default::default()
            };
            let ds = data::synth_generate(&spec)?;
            data::save(&out, &ds).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} epochs ({} classes, length {}) to {}", ds.len(), ds.n_classes, ds.epoch_len, out.display());
        }
        Command::Train { config, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = pipeline::run_experiment(&cfg)?;
            pipeline::write_run(&out_dir, &cfg, &out).with_context(|| format!("writing {}", out_dir.display()))?;
            let r = &out.report;
            println!("B-ACC {:.4}  MF1 {:.4}", r.balanced_accuracy, r.macro_f1);
            if let Some(p1) = &r.phase1 {
                println!(
                    "phase 1 final reward {:.4}, preferred action {}",
                    p1.final_reward,
                    action_label(argmax(&p1.final_probs))
                );
            }
            for w in &r.warnings {
                println!("warning: {w}");
            }
            println!("artefacts in {}", out_dir.display());
        }
        Command::Probe {
            encoder,
            data: path,
            seed,
            labeled_frac,
            iterations,
        } => {
            let params = checkpoint::load(&encoder).with_context(|| format!("reading {}", encoder.display()))?;
            let ds = data::load(&path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = SplitConfig {
                labeled_frac,
                ..Default::default()
            };
            let ds = split(ds, &cfg, seed)?;
            let probe = ProbeConfig {
                iterations,
                ..Default::default()
            };
            let res = linear_probe(&params, &ds, &probe)?;
            println!("{}", serde_json::to_string_pretty(&res)?);
        }
        Command::Trace { run_dir, csv, every } => {
            let path = run_dir.join(files::TRACE);
            let rows = pipeline::read_trace(&path).with_context(|| format!("reading {}", path.display()))?;
            println!("{:>6} {:>8} {:>8} {:>7}  mask   perm   crop   flip   warp", "step", "reward", "entropy", "beta");
            let every = every.max(1);
            for (i, r) in rows.iter().enumerate() {
                if i % every == 0 || i + 1 == rows.len() {
                    let p = r.probs();
                    println!(
                        "{:>6} {:>8.4} {:>8.4} {:>7.4}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}",
                        r.step, r.mean_reward, r.entropy, r.beta, p[0], p[1], p[2], p[3], p[4]
                    );
                }
            }
            if let Some(out) = csv {
                std::fs::write(&out, pipeline::trace_csv(&rows)?).with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::Compare { configs, table, out_dir } => {
            let mut lines = vec![
                "| config | strategy | reward | seed | B-ACC | MF1 |".to_string(),
                "|---|---|---|---|---|---|".to_string(),
            ];
            for path in &configs {
                let cfg = ExperimentConfig::load(path)?;
                let out = pipeline::run_experiment(&cfg).with_context(|| format!("running {}", path.display()))?;
                if let Some(dir) = &out_dir {
                    pipeline::write_run(dir.join(stem(path)), &cfg, &out)?;
                }
                let r = &out.report;
                lines.push(format!(
                    "| {} | {} | {} | {} | {:.4} | {:.4} |",
                    stem(path),
                    strategy_name(r.strategy),
                    serde_json::to_value(r.reward_mode)?.as_str().unwrap_or("?"),
                    r.seed,
                    r.balanced_accuracy,
                    r.macro_f1
                ));
            }
            let text = lines.join("\n") + "\n";
            print!("{text}");
            if let Some(out) = table {
                std::fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
            }
        }
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn strategy_name(s: Strategy) -> String {
    match s {
        Strategy::RlBioAug => "rl_bioaug".into(),
        Strategy::RandomSelection => "random_selection".into(),
        Strategy::Fixed(kind) => format!("fixed:{}", kind.short_name()),
    }
}
