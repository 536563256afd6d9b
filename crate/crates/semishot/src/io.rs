//! On-disk formats: JSONL datasets and pairs, split manifests, checkpoints,
//! step logs, embedding CSV.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use semishot_core::augment::PairRecord;
use semishot_core::corpus::{CorpusSplit, Example, HiddenLabel, LabelMap, ManifestEntry};
use semishot_core::encoder::EncoderParams;
use semishot_core::trainer::StepState;

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const HIDDEN_LABELS_FILE: &str = "hidden_labels.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FINAL_FILE: &str = "final.json";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

const CHECKPOINT_FORMAT: &str = "semishot-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Parses every non-blank line of a JSONL file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("serialisable record");
        writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable value");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// One line of a dataset file. `label` is a class name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Reads raw records; the N-th record without an id gets `line-N`.
pub fn read_dataset_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut records: Vec<DatasetRecord> = read_jsonl(path)?;
    for (i, r) in records.iter_mut().enumerate() {
        if r.id.is_none() {
            r.id = Some(format!("line-{}", i + 1));
        }
    }
    Ok(records)
}

/// Sorted distinct label names found in the records.
pub fn infer_labels(records: &[DatasetRecord]) -> Vec<String> {
    let mut names: Vec<String> = records.iter().filter_map(|r| r.label.clone()).collect();
    names.sort();
    names.dedup();
    names
}

pub fn to_examples(path: &Path, records: Vec<DatasetRecord>, labels: &LabelMap) -> Result<Vec<Example>> {
    records
        .into_iter()
        .map(|r| {
            let label = match &r.label {
                None => None,
                Some(name) => Some(labels.index_of(name).ok_or_else(|| CliError::Schema {
                    path: path.to_path_buf(),
                    message: format!("unknown label {name:?} (known: {:?})", labels.names()),
                })?),
            };
            Ok(Example::new(r.id.expect("filled by reader"), r.text, label))
        })
        .collect()
}

pub fn load_dataset(path: &Path, labels: &LabelMap) -> Result<Vec<Example>> {
    to_examples(path, read_dataset_records(path)?, labels)
}

pub fn write_dataset(path: &Path, examples: &[Example], labels: &LabelMap) -> Result<()> {
    let records: Vec<DatasetRecord> = examples
        .iter()
        .map(|e| DatasetRecord {
            id: Some(e.id.clone()),
            text: e.text.clone(),
            label: e.label.and_then(|l| labels.name(l)).map(String::from),
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    read_jsonl(path)
}

pub fn write_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    write_jsonl(path, pairs)
}

/// Writes the manifest and, next to it, the true labels of the unlabeled
/// bucket. Training never reads the sidecar.
pub fn write_split(dir: &Path, split: &CorpusSplit) -> Result<()> {
    write_jsonl(&dir.join(MANIFEST_FILE), &split.manifest())?;
    write_jsonl(&dir.join(HIDDEN_LABELS_FILE), split.hidden_labels())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    read_jsonl(&dir.join(MANIFEST_FILE))
}

pub fn read_hidden_labels(dir: &Path) -> Result<Vec<HiddenLabel>> {
    read_jsonl(&dir.join(HIDDEN_LABELS_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub labels: Vec<String>,
    /// Completed steps when the parameters were captured.
    pub step: usize,
    pub dev_accuracy: Option<f64>,
    pub params: EncoderParams,
}

impl CheckpointFile {
    pub fn new(labels: &LabelMap, step: usize, dev_accuracy: Option<f64>, params: EncoderParams) -> Self {
        Self {
            format: String::from(CHECKPOINT_FORMAT),
            version: CHECKPOINT_VERSION,
            labels: labels.names().to_vec(),
            step,
            dev_accuracy,
            params,
        }
    }

    pub fn label_map(&self) -> Result<LabelMap> {
        Ok(LabelMap::new(self.labels.iter().cloned())?)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &CheckpointFile) -> Result<()> {
    write_json(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let ckpt: CheckpointFile = read_json(path)?;
    let schema = |message: String| CliError::Schema {
        path: path.to_path_buf(),
        message,
    };
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(schema(format!("not a checkpoint (format {:?})", ckpt.format)));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(schema(format!("unsupported checkpoint version {}", ckpt.version)));
    }
    ckpt.params.validate().map_err(|e| schema(e.to_string()))?;
    if ckpt.labels.len() != ckpt.params.dims.classes {
        return Err(schema(format!(
            "{} label names for {} classes",
            ckpt.labels.len(),
            ckpt.params.dims.classes
        )));
    }
    Ok(ckpt)
}

pub fn write_steps(path: &Path, steps: &[StepState]) -> Result<()> {
    write_jsonl(path, steps)
}

pub fn read_steps(path: &Path) -> Result<Vec<StepState>> {
    read_jsonl(path)
}

/// CSV with header `id,label,z0..z{d-1}`; `label` is the class name or
/// empty.
pub fn export_embeddings(path: &Path, params: &EncoderParams, examples: &[Example], labels: &LabelMap) -> Result<()> {
    let featurizer = params.featurizer();
    let feats: Vec<_> = examples.iter().map(|e| featurizer.featurize(&e.text)).collect();
    let d = params.dims.embed;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec![String::from("id"), String::from("label")];
    header.extend((0..d).map(|k| format!("z{k}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (chunk_e, chunk_f) in examples.chunks(256).zip(feats.chunks(256)) {
        let (z, _) = params.encode_many(chunk_f)?;
        for (r, e) in chunk_e.iter().enumerate() {
            let mut row = vec![e.id.clone(), e.label.and_then(|l| labels.name(l)).unwrap_or("").to_string()];
            row.extend(z.row(r).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Rows of an embeddings CSV as `(id, label, z)`.
pub fn read_embeddings(path: &Path) -> Result<Vec<(String, String, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let z = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                line: n + 2,
                message: e.to_string(),
            })?;
        out.push((rec[0].to_string(), rec[1].to_string(), z));
    }
    Ok(out)
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_label_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{\"text\":\"a\",\"label\":\"pos\"}\n{\"text\":\"b\",\"label\":\"meh\"}\n").unwrap();
        let labels = LabelMap::new(["neg", "pos"]).unwrap();
        match load_dataset(&path, &labels) {
            Err(CliError::Schema { message, .. }) => assert!(message.contains("meh")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{\"text\":\"a\"}\n\n{\"text\":3}\n").unwrap();
        match read_dataset_records(&path) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_ids_are_numbered_by_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{\"text\":\"a\"}\n{\"id\":\"x\",\"text\":\"b\"}\n").unwrap();
        let recs = read_dataset_records(&path).unwrap();
        assert_eq!(recs[0].id.as_deref(), Some("line-1"));
        assert_eq!(recs[1].id.as_deref(), Some("x"));
    }
}
