//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use semishot_core::gradcheck::{run_suite, FD_TOLERANCE};
use semishot_core::synth::{self, generate, SynthSpec};

use crate::config::{AugmentMode, RunConfig};
use crate::error::{CliError, Result};
use crate::io;
use crate::pipeline::{self, Workspace};

pub const OUT_ENV: &str = "SEMISHOT_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "semishot", version, about = "Semi-supervised few-shot text classification")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; one `seed-N` subdirectory per seed.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// `key=value` config override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the labeled / unlabeled / dev split for each seed.
    Split,
    /// Train one model per seed.
    Train,
    /// Re-evaluate saved checkpoints on dev and test data.
    Eval,
    /// Train the full objective and its three single-term ablations.
    Ablate,
    /// Finite-difference check of every loss and the encoder.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write per-example embeddings from each seed's checkpoint as CSV.
    ExportEmbeddings {
        /// Dataset to embed; defaults to test_data, then train_data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write the generated two-topic corpus and a matching config.
    Synth {
        #[arg(long, default_value_t = 7)]
        corpus_seed: u64,
    },
}

impl Cli {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seeds) = &self.seeds {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            overrides.push(format!("seeds=[{}]", list.join(",")));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

/// Parses `args` (including the program name) and runs the command; returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn out_line(stdout: &mut dyn Write, line: &str) {
    let _ = writeln!(stdout, "{line}");
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.2}")).unwrap_or_else(|| String::from("-"))
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let out = cli.out_dir();
    match &cli.command {
        Command::Gradcheck { instances, seed } => gradcheck(*instances, *seed, stdout),
        Command::Synth { corpus_seed } => write_synth(&out, *corpus_seed, stdout),
        Command::Split => {
            let cfg = cli.run_config()?;
            let ws = Workspace::load(&cfg)?;
            io::create_dir(&out)?;
            cfg.write_resolved(&out)?;
            for &seed in &cfg.seeds {
                let dir = io::seed_dir(&out, seed);
                let split = pipeline::split_for_seed(&ws, &cfg, seed, &dir)?;
                out_line(
                    stdout,
                    &format!(
                        "seed {seed}: {} labeled, {} unlabeled, {} dev -> {}",
                        split.labeled.len(),
                        split.unlabeled.len(),
                        split.dev.len(),
                        dir.display()
                    ),
                );
            }
            Ok(())
        }
        Command::Train => {
            let cfg = cli.run_config()?;
            let ws = Workspace::load(&cfg)?;
            let metrics = pipeline::train_all(&ws, &cfg, &out)?;
            for m in &metrics {
                out_line(
                    stdout,
                    &format!(
                        "seed {}: best step {} dev {} test {}",
                        m.seed,
                        m.best_step,
                        fmt_pct(m.dev_accuracy),
                        fmt_pct(m.test_accuracy)
                    ),
                );
            }
            if let Some(summary) = pipeline::summarize(&cfg, &metrics)? {
                io::write_json(&out.join("summary.json"), &summary)?;
                out_line(stdout, &format!("test accuracy {}", summary.display()));
            }
            Ok(())
        }
        Command::Eval => {
            let cfg = cli.run_config()?;
            let ws = Workspace::load(&cfg)?;
            let reports = pipeline::for_each_seed(&cfg.seeds, |seed| {
                pipeline::eval_seed(&ws, seed, &io::seed_dir(&out, seed))
            })?;
            for r in &reports {
                let reproduced = match (r.dev_accuracy, r.logged_dev_accuracy) {
                    (Some(a), Some(b)) if a.to_bits() == b.to_bits() => " (matches training log)",
                    (Some(_), Some(_)) => " (differs from training log)",
                    _ => "",
                };
                out_line(
                    stdout,
                    &format!(
                        "seed {}: step {} dev {}{reproduced} test {}",
                        r.seed,
                        r.checkpoint_step,
                        fmt_pct(r.dev_accuracy),
                        fmt_pct(r.test_accuracy)
                    ),
                );
            }
            io::write_json(&out.join("eval.json"), &reports)?;
            let accs: Option<Vec<f64>> = reports.iter().map(|r| r.test_accuracy).collect();
            if let Some(accs) = accs.filter(|a| a.len() >= 2) {
                let summary = semishot_core::eval::aggregate(
                    &accs,
                    &semishot_core::eval::config_fingerprint(&cfg.train_config(0)),
                )?;
                out_line(stdout, &format!("test accuracy {}", summary.display()));
            }
            Ok(())
        }
        Command::Ablate => {
            let cfg = cli.run_config()?;
            let ws = Workspace::load(&cfg)?;
            let table = pipeline::ablate_all(&ws, &cfg, &out)?;
            let _ = write!(stdout, "{}", table.render());
            Ok(())
        }
        Command::ExportEmbeddings { data } => {
            let cfg = cli.run_config()?;
            let path = data
                .clone()
                .or_else(|| cfg.test_data.clone())
                .or_else(|| cfg.train_data.clone())
                .ok_or_else(|| CliError::Config(String::from("no dataset to embed")))?;
            for &seed in &cfg.seeds {
                let dir = io::seed_dir(&out, seed);
                let ckpt = io::load_checkpoint(&dir.join(io::CHECKPOINT_FILE))?;
                let labels = ckpt.label_map()?;
                let examples = io::load_dataset(&path, &labels)?;
                let target = dir.join(io::EMBEDDINGS_FILE);
                io::export_embeddings(&target, &ckpt.params, &examples, &labels)?;
                out_line(stdout, &format!("seed {seed}: {} rows -> {}", examples.len(), target.display()));
            }
            Ok(())
        }
    }
}

fn gradcheck(instances: usize, seed: u64, stdout: &mut dyn Write) -> Result<()> {
    if instances == 0 {
        return Err(CliError::Usage(String::from("--instances must be at least 1")));
    }
    let results = run_suite(seed, instances)?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        out_line(
            stdout,
            &format!(
                "{:<8} instances {:>3} entries {:>6} max rel err {:.3e} {status}",
                r.name, r.instances, r.entries_checked, r.max_rel_error
            ),
        );
        if !r.passed() {
            failed.push(format!("{} ({:.3e} > {FD_TOLERANCE:e})", r.name, r.max_rel_error));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

/// Writes `train.jsonl`, `test.jsonl` and `synth.toml` into `out`.
fn write_synth(out: &Path, corpus_seed: u64, stdout: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec::default();
    let corpus = generate(&spec, corpus_seed)?;
    io::create_dir(out)?;
    io::write_dataset(&out.join("train.jsonl"), &corpus.pool, &corpus.labels)?;
    io::write_dataset(&out.join("test.jsonl"), &corpus.test, &corpus.labels)?;
    let mut cfg = RunConfig::default();
    cfg.set_train_config(&synth::train_config(0));
    let split = spec.split_spec();
    cfg.per_class = split.per_class;
    cfg.unlabeled = split.unlabeled;
    cfg.dev = split.dev;
    cfg.augmentation = AugmentMode::Noise;
    cfg.drop_prob = synth::DROP_PROB;
    cfg.swap_prob = synth::SWAP_PROB;
    cfg.labels = corpus.labels.names().to_vec();
    cfg.train_data = Some(PathBuf::from("train.jsonl"));
    cfg.test_data = Some(PathBuf::from("test.jsonl"));
    io::write_bytes(&out.join("synth.toml"), cfg.to_toml().as_bytes())?;
    out_line(
        stdout,
        &format!(
            "wrote {} training and {} test examples and synth.toml to {}",
            corpus.pool.len(),
            corpus.test.len(),
            out.display()
        ),
    );
    Ok(())
}
