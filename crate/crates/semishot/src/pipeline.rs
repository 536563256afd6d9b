//! Per-seed runs behind the CLI subcommands.

use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};

use semishot_core::corpus::{make_split, CorpusSplit, Example, LabelMap};
use semishot_core::eval::{
    ablation_table, accuracy, aggregate, config_fingerprint, AblationTable, AblationVariant, RunMetrics,
};
use semishot_core::trainer::train;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;

/// Corpus files loaded once and shared read-only by all seed runs.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub labels: LabelMap,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl Workspace {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let train_path = cfg.require_train_data()?;
        let records = io::read_dataset_records(train_path)?;
        let names = if cfg.labels.is_empty() {
            io::infer_labels(&records)
        } else {
            cfg.labels.clone()
        };
        let labels = LabelMap::new(names).map_err(|e| CliError::Schema {
            path: train_path.to_path_buf(),
            message: e.to_string(),
        })?;
        let train = io::to_examples(train_path, records, &labels)?;
        let test = match &cfg.test_data {
            Some(p) => io::load_dataset(p, &labels)?,
            None => Vec::new(),
        };
        Ok(Self { labels, train, test })
    }

    pub fn require_test(&self) -> Result<&[Example]> {
        if self.test.is_empty() {
            Err(CliError::Config(String::from("test_data is not set or empty")))
        } else {
            Ok(&self.test)
        }
    }
}

/// Runs `f` for every seed on its own thread; results come back in seed
/// order, and the first failing seed's error wins.
pub fn for_each_seed<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || f(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    results.into_iter().collect()
}

/// Reuses the manifest in `dir` when present, otherwise draws and writes a
/// fresh split.
pub fn split_for_seed(ws: &Workspace, cfg: &RunConfig, seed: u64, dir: &Path) -> Result<CorpusSplit> {
    io::create_dir(dir)?;
    let split = if dir.join(io::MANIFEST_FILE).exists() {
        let manifest = io::read_manifest(dir)?;
        CorpusSplit::from_manifest(&ws.train, ws.labels.len(), &manifest, seed)?
    } else {
        let split = make_split(&ws.train, &ws.labels, cfg.split_spec(), seed)?;
        io::write_split(dir, &split)?;
        split
    };
    Ok(split.with_test(ws.test.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub fingerprint: String,
    pub best_step: usize,
    pub dev_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
}

/// Trains one seed and writes its artifacts into `dir`.
pub fn train_seed(ws: &Workspace, cfg: &RunConfig, seed: u64, dir: &Path) -> Result<SeedMetrics> {
    let split = split_for_seed(ws, cfg, seed, dir)?;
    let tcfg = cfg.train_config(seed);
    let aug = cfg.augmentation(&split, seed)?;
    let outcome = train(&split, &aug, &tcfg)?;
    io::write_steps(&dir.join(io::STEPS_FILE), &outcome.steps)?;
    io::save_checkpoint(
        &dir.join(io::CHECKPOINT_FILE),
        &io::CheckpointFile::new(&ws.labels, outcome.best.step, outcome.best.dev_accuracy, outcome.best.params.clone()),
    )?;
    io::save_checkpoint(
        &dir.join(io::FINAL_FILE),
        &io::CheckpointFile::new(&ws.labels, tcfg.max_steps, None, outcome.final_params.clone()),
    )?;
    let (test_accuracy, final_test_accuracy) = if split.test.is_empty() {
        (None, None)
    } else {
        (
            Some(accuracy(&outcome.best.params, &split.test)?),
            Some(accuracy(&outcome.final_params, &split.test)?),
        )
    };
    let metrics = SeedMetrics {
        seed,
        fingerprint: config_fingerprint(&tcfg),
        best_step: outcome.best.step,
        dev_accuracy: outcome.best.dev_accuracy,
        test_accuracy,
        final_test_accuracy,
    };
    io::write_json(&dir.join(io::METRICS_FILE), &metrics)?;
    Ok(metrics)
}

pub fn train_all(ws: &Workspace, cfg: &RunConfig, out: &Path) -> Result<Vec<SeedMetrics>> {
    io::create_dir(out)?;
    cfg.write_resolved(out)?;
    for_each_seed(&cfg.seeds, |seed| train_seed(ws, cfg, seed, &io::seed_dir(out, seed)))
}

/// Aggregate over seeds when every seed has a test accuracy and there are
/// at least two of them.
pub fn summarize(cfg: &RunConfig, metrics: &[SeedMetrics]) -> Result<Option<RunMetrics>> {
    let accs: Option<Vec<f64>> = metrics.iter().map(|m| m.test_accuracy).collect();
    match accs {
        Some(accs) if accs.len() >= 2 => {
            Ok(Some(aggregate(&accs, &config_fingerprint(&cfg.train_config(0)))?))
        }
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub checkpoint_step: usize,
    pub logged_dev_accuracy: Option<f64>,
    pub dev_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Re-evaluates the saved dev-best checkpoint of one seed.
pub fn eval_seed(ws: &Workspace, seed: u64, dir: &Path) -> Result<EvalReport> {
    let ckpt = io::load_checkpoint(&dir.join(io::CHECKPOINT_FILE))?;
    if ckpt.labels != ws.labels.names() {
        return Err(CliError::Config(format!(
            "checkpoint labels {:?} differ from data labels {:?}",
            ckpt.labels,
            ws.labels.names()
        )));
    }
    let manifest = io::read_manifest(dir)?;
    let split = CorpusSplit::from_manifest(&ws.train, ws.labels.len(), &manifest, seed)?;
    let dev_accuracy = if split.dev.is_empty() {
        None
    } else {
        Some(accuracy(&ckpt.params, &split.dev)?)
    };
    let test_accuracy = if ws.test.is_empty() {
        None
    } else {
        Some(accuracy(&ckpt.params, &ws.test)?)
    };
    Ok(EvalReport {
        seed,
        checkpoint_step: ckpt.step,
        logged_dev_accuracy: ckpt.dev_accuracy,
        dev_accuracy,
        test_accuracy,
    })
}

pub fn variant_key(v: AblationVariant) -> &'static str {
    match v {
        AblationVariant::Full => "full",
        AblationVariant::WithoutScl => "without_scl",
        AblationVariant::WithoutCc => "without_cc",
        AblationVariant::WithoutCon => "without_con",
    }
}

pub fn ablation_dir(out: &Path, v: AblationVariant) -> PathBuf {
    out.join(format!("ablate-{}", variant_key(v)))
}

/// Trains every variant on every seed (seeds in parallel) and reports test
/// accuracy of the dev-best checkpoints.
pub fn ablate_all(ws: &Workspace, cfg: &RunConfig, out: &Path) -> Result<AblationTable> {
    ws.require_test()?;
    if cfg.seeds.len() < 2 {
        return Err(CliError::Config(String::from("ablation needs at least 2 seeds")));
    }
    io::create_dir(out)?;
    cfg.write_resolved(out)?;
    let base = cfg.train_config(0);
    let per_seed = for_each_seed(&cfg.seeds, |seed| {
        AblationVariant::ALL
            .iter()
            .map(|&v| {
                let mut vcfg = cfg.clone();
                vcfg.set_train_config(&v.apply(&base));
                let dir = io::seed_dir(&ablation_dir(out, v), seed);
                let m = train_seed(ws, &vcfg, seed, &dir)?;
                Ok(m.test_accuracy.expect("test set present"))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let results: Vec<(AblationVariant, Vec<f64>)> = AblationVariant::ALL
        .iter()
        .enumerate()
        .map(|(k, &v)| (v, per_seed.iter().map(|accs| accs[k]).collect()))
        .collect();
    let table = ablation_table(&base, &results)?;
    io::write_bytes(&out.join("ablation.txt"), table.render().as_bytes())?;
    io::write_json(&out.join("ablation.json"), &table)?;
    Ok(table)
}
