use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use josnc_core::datagen::io::{read_training, write_tags, write_training};
use josnc_core::datagen::{inject_noise, make_blobs, NoiseKind, TestSet, TrainSet};
use josnc_core::network::{Checkpoint, ManifestEntry};
use josnc_core::selector::SampleKind;
use josnc_core::trainer::{BatchReport, EpochSummary, TrainObserver, Trainer};

use crate::config::{ExperimentConfig, Method};
use crate::error::HarnessError;
use crate::metrics::{tail_mean, MetricsRow, MetricsWriter};
use crate::selection::evaluate_selection;
use crate::tags::{read_tags, tag_map};

pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.jsnc";
pub const TAGS_FILE: &str = "dataset.tags";
const LAST_N: usize = 10;

/// `v<crate version>`, in the style of `git describe` for a tagged release.
pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub data_seed: u64,
    pub method: Method,
    pub status: RunStatus,
    pub epochs_completed: usize,
    pub final_test_acc: f64,
    pub last10_test_acc: f64,
    pub best_test_acc: f64,
    pub best_epoch: usize,
    pub checkpoint: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub history: Vec<EpochSummary>,
    pub manifest: RunManifest,
    /// Batches whose clean/ID/OOD sets were not a disjoint cover of the batch.
    pub partition_violations: usize,
    pub batches: usize,
}

/// Per-batch and per-epoch bookkeeping on the harness side of the loop.
struct Recorder<'a, 'e> {
    tags: &'a HashMap<u64, NoiseKind>,
    metrics: MetricsWriter,
    out_dir: &'a Path,
    checkpoint_every: Option<usize>,
    epoch_assignments: Vec<(u64, SampleKind)>,
    rows: Vec<MetricsRow>,
    violations: usize,
    batches: usize,
    error: Option<HarnessError>,
    extra: Option<&'a mut (dyn TrainObserver<f64> + 'e)>,
}

/// Independent of the core's own check: sorted union equals the sorted batch.
fn is_disjoint_cover(report: &BatchReport<'_, f64>) -> bool {
    let p = report.partition;
    let mut union: Vec<u64> = p.clean.iter().chain(&p.id).chain(&p.ood).copied().collect();
    let mut batch = report.ids.to_vec();
    union.sort_unstable();
    batch.sort_unstable();
    union == batch && union.windows(2).all(|w| w[0] != w[1])
}

impl TrainObserver<f64> for Recorder<'_, '_> {
    fn on_batch(&mut self, report: &BatchReport<'_, f64>) {
        self.batches += 1;
        if !is_disjoint_cover(report) {
            self.violations += 1;
        }
        self.epoch_assignments.extend(report.ids.iter().copied().zip(report.kinds.iter().copied()));
        if let Some(extra) = self.extra.as_deref_mut() {
            extra.on_batch(report);
        }
    }

    fn on_epoch_end(&mut self, s: &EpochSummary, trainer: &Trainer<f64>) {
        let assignments = std::mem::take(&mut self.epoch_assignments);
        let result = (|| {
            let sel = evaluate_selection(&assignments, self.tags)?;
            let row = MetricsRow {
                epoch: s.epoch,
                train_loss: s.train_loss,
                l_cls: s.l_cls,
                l_con_s: s.l_con_s,
                l_con_n: s.l_con_n,
                l_con_f: s.l_con_f,
                test_acc: s.test_acc.unwrap_or(0.0),
                clean_precision: sel.clean.precision,
                clean_recall: sel.clean.recall,
                clean_f1: sel.clean.f1,
                ood_precision: sel.ood.precision,
                ood_recall: sel.ood.recall,
                ood_f1: sel.ood.f1,
                mean_tau_clean: s.mean_tau_clean,
                mean_tau_ood: s.mean_tau_ood,
            };
            self.metrics.write_row(&row)?;
            self.rows.push(row);
            if self.checkpoint_every.is_some_and(|n| s.epoch % n == 0) {
                write_checkpoint(self.out_dir, &format!("checkpoint.epoch{:03}", s.epoch), &trainer.checkpoint())?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            self.error.get_or_insert(e);
        }
        if let Some(extra) = self.extra.as_deref_mut() {
            extra.on_epoch_end(s, trainer);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointIndex {
    version: String,
    dtype: String,
    byte_order: String,
    values: usize,
    entries: Vec<ManifestEntry>,
}

/// Writes `<stem>.bin` (raw little-endian f64) and `<stem>.json` (the tensor index).
pub fn write_checkpoint(dir: &Path, stem: &str, ckpt: &Checkpoint) -> Result<(), HarnessError> {
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, ckpt.data_bytes()).map_err(HarnessError::io(&bin))?;
    let index = CheckpointIndex {
        version: version(),
        dtype: "f64".into(),
        byte_order: "little".into(),
        values: ckpt.data.len(),
        entries: ckpt.manifest.clone(),
    };
    write_json(&dir.join(format!("{stem}.json")), &index)
}

pub fn read_checkpoint(dir: &Path, stem: &str) -> Result<Checkpoint, HarnessError> {
    let json = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json).map_err(HarnessError::io(&json))?;
    let index: CheckpointIndex =
        serde_json::from_str(&text).map_err(|e| HarnessError::Format(format!("{}: {e}", json.display())))?;
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin).map_err(HarnessError::io(&bin))?;
    Ok(Checkpoint::from_parts(index.entries, &bytes)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(HarnessError::io(path))
}

/// Generates the dataset, writes both files, and reads them back: the
/// trainer gets the training file only, the evaluator the tags only.
fn prepare_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(TrainSet, TestSet, HashMap<u64, NoiseKind>), HarnessError> {
    let blobs = make_blobs(&cfg.dataset.blobs, cfg.train.knn_k)?;
    let noisy = inject_noise(&blobs, &cfg.dataset.noise_spec(), cfg.dataset.blobs.seed)?;
    let data_path = out_dir.join(DATASET_FILE);
    let tags_path = out_dir.join(TAGS_FILE);
    let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(HarnessError::io(p));
    write_training(&noisy, create(&data_path)?)?;
    write_tags(&noisy, create(&tags_path)?)?;
    drop(noisy);
    let open = |p: &Path| File::open(p).map(std::io::BufReader::new).map_err(HarnessError::io(p));
    let train = read_training(open(&data_path)?)?;
    let tags = tag_map(&read_tags(open(&tags_path)?)?);
    Ok((train, blobs.test, tags))
}

/// Runs one experiment and writes every artifact under `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, HarnessError> {
    run_observed(config, out_dir, None)
}

/// [`run`], also forwarding training events to `extra`.
pub fn run_observed(
    config: &ExperimentConfig,
    out_dir: &Path,
    extra: Option<&mut dyn TrainObserver<f64>>,
) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let cfg = config.clone().resolve();
    fs::create_dir_all(out_dir).map_err(HarnessError::io(out_dir))?;
    fs::write(out_dir.join(RESOLVED_CONFIG_FILE), cfg.to_json()).map_err(HarnessError::io(out_dir))?;

    let (train, test, tags) = prepare_data(&cfg, out_dir)?;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.model(), train.dim, train.num_classes)?;
    let mut recorder = Recorder {
        tags: &tags,
        metrics: MetricsWriter::create(&out_dir.join(METRICS_FILE))?,
        out_dir,
        checkpoint_every: cfg.checkpoint_every,
        epoch_assignments: Vec::new(),
        rows: Vec::new(),
        violations: 0,
        batches: 0,
        error: None,
        extra,
    };
    let fitted = trainer.fit(&train, Some(&test), &mut recorder);
    if let Some(e) = recorder.error.take() {
        return Err(e);
    }
    let rows = std::mem::take(&mut recorder.rows);
    let (violations, batches) = (recorder.violations, recorder.batches);

    let (history, status, checkpoint) = match fitted {
        Ok(history) => (history, RunStatus::Completed, ("checkpoint", trainer.checkpoint())),
        Err(josnc_core::Error::Diverged { epoch, step, last_good }) => {
            let ckpt = last_good.as_deref().cloned().unwrap_or_else(|| trainer.checkpoint());
            let manifest = manifest(&cfg, &rows, RunStatus::Diverged, "checkpoint.last_good");
            write_checkpoint(out_dir, "checkpoint.last_good", &ckpt)?;
            write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
            return Err(HarnessError::Diverged { epoch, step, last_good });
        }
        Err(e) => return Err(e.into()),
    };
    write_checkpoint(out_dir, checkpoint.0, &checkpoint.1)?;
    let manifest = manifest(&cfg, &rows, status, checkpoint.0);
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome { out_dir: out_dir.to_path_buf(), rows, history, manifest, partition_violations: violations, batches })
}

fn manifest(cfg: &ExperimentConfig, rows: &[MetricsRow], status: RunStatus, checkpoint: &str) -> RunManifest {
    let (best_epoch, best_test_acc) =
        rows.iter().fold((0, f64::NEG_INFINITY), |b, r| if r.test_acc > b.1 { (r.epoch, r.test_acc) } else { b });
    RunManifest {
        version: version(),
        seed: cfg.train.seed,
        data_seed: cfg.dataset.blobs.seed,
        method: cfg.method,
        status,
        epochs_completed: rows.len(),
        final_test_acc: rows.last().map_or(0.0, |r| r.test_acc),
        last10_test_acc: tail_mean(rows, LAST_N, |r| r.test_acc),
        best_test_acc: best_test_acc.max(0.0),
        best_epoch,
        checkpoint: checkpoint.to_string(),
    }
}
