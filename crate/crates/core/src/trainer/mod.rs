//! The training loop: warmup epochs on smoothed labels for every sample, then
//! robust epochs that partition each batch, build per-kind targets, and
//! optimize the joint objective. Teacher EMA and queue updates follow every
//! step; thresholds roll once per epoch.

mod config;
mod optim;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{LrSchedule, OptimizerConfig, OptimizerKind, TrainConfig, TrainMode};
pub use optim::Optimizer;

use crate::datagen::{sample_rng, Augmenter, TestSet, TrainSample, TrainSet};
use crate::diffmath::{ProbVec, Tape, Tensor};
use crate::embedqueue::{EmbedQueue, QueueEntry};
use crate::error::{Error, Result};
use crate::labeler::{make_lsr_target, make_negative_target, make_pll_target, smoothed_label, TrainingTarget};
use crate::network::{Checkpoint, ModelConfig, Network, Teacher};
use crate::objective::{
    classification_loss, feature_consistency_loss, neighbor_consistency_loss, neighbor_mixture,
    self_consistency_loss, total_loss, LossBreakdown, LossParts, LossWeights,
};
use crate::scalar::Scalar;
use crate::selector::{classify_sample, score_sample, Partition, SampleKind, SampleScores, ThresholdState};

const SHUFFLE_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
const GLOBAL_ID: u64 = u64::MAX;
const EVAL_CHUNK: usize = 1024;

/// What one optimizer step saw and decided.
#[derive(Debug)]
pub struct BatchReport<'a, T> {
    pub epoch: usize,
    pub step: usize,
    pub robust: bool,
    pub ids: &'a [u64],
    pub kinds: &'a [SampleKind],
    pub scores: &'a [SampleScores<T>],
    pub partition: &'a Partition,
    pub losses: &'a LossBreakdown<T>,
}

/// Per-epoch aggregates. Losses are sample-weighted means over the epoch's batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub robust: bool,
    pub lr: f64,
    pub train_loss: f64,
    pub l_cls: f64,
    pub l_con_s: f64,
    pub l_con_n: f64,
    pub l_con_f: f64,
    pub n_clean: usize,
    pub n_id: usize,
    pub n_ood: usize,
    pub batches_without_clean: usize,
    pub tau_clean: Vec<f64>,
    pub tau_ood: Vec<f64>,
    pub mean_tau_clean: f64,
    pub mean_tau_ood: f64,
    /// Accuracy against observed labels on the un-augmented training inputs.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

/// Hooks for streaming metrics out of the loop. Both default to no-ops.
pub trait TrainObserver<T> {
    fn on_batch(&mut self, _report: &BatchReport<'_, T>) {}
    fn on_epoch_end(&mut self, _summary: &EpochSummary, _trainer: &Trainer<T>) {}
}

impl<T> TrainObserver<T> for () {}

#[derive(Default)]
struct EpochAccum {
    samples: usize,
    losses: [f64; 5],
    counts: [usize; 3],
    batches_without_clean: usize,
}

pub struct Trainer<T> {
    config: TrainConfig,
    augmenter: Augmenter,
    student: Network<T>,
    teacher: Teacher<T>,
    optimizer: Optimizer<T>,
    queue: EmbedQueue<T>,
    thresholds: ThresholdState<T>,
    epochs_done: usize,
    steps: usize,
    last_good: Checkpoint,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig, model: &ModelConfig, input_dim: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        if config.kappa > num_classes {
            return Err(Error::Config(format!("train.kappa = {} exceeds {num_classes} classes", config.kappa)));
        }
        let student = Network::new(input_dim, num_classes, model, &mut sample_rng(config.seed, GLOBAL_ID, 0, INIT_STREAM))?;
        let teacher = Teacher::from_student(&student);
        let optimizer = Optimizer::new(config.optimizer, &student);
        let queue = EmbedQueue::new(config.queue_capacity, model.embed_dim);
        let sigma = config.augment.sigma.unwrap_or_default();
        Ok(Self {
            augmenter: Augmenter::new(sigma, config.augment.mask_rate),
            last_good: Checkpoint::capture(&student, &teacher),
            thresholds: ThresholdState::new(num_classes),
            config,
            student,
            teacher,
            optimizer,
            queue,
            epochs_done: 0,
            steps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn student(&self) -> &Network<T> {
        &self.student
    }

    pub fn teacher(&self) -> &Teacher<T> {
        &self.teacher
    }

    pub fn queue(&self) -> &EmbedQueue<T> {
        &self.queue
    }

    pub fn thresholds(&self) -> &ThresholdState<T> {
        &self.thresholds
    }

    pub fn thresholds_mut(&mut self) -> &mut ThresholdState<T> {
        &mut self.thresholds
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.student, &self.teacher)
    }

    /// Runs every remaining epoch, returning the per-epoch summaries.
    pub fn fit(
        &mut self,
        data: &TrainSet,
        test: Option<&TestSet>,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<Vec<EpochSummary>> {
        let mut history = Vec::with_capacity(self.config.epochs);
        while self.epochs_done < self.config.epochs {
            let epoch = self.epochs_done + 1;
            let summary = if self.config.is_robust_epoch(epoch) {
                self.robust_epoch(data, test, observer)?
            } else {
                self.warmup_epoch(data, test, observer)?
            };
            history.push(summary);
        }
        Ok(history)
    }

    /// One epoch of smoothed-label cross-entropy on every sample.
    pub fn warmup_epoch(
        &mut self,
        data: &TrainSet,
        test: Option<&TestSet>,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<EpochSummary> {
        let epoch = self.epochs_done + 1;
        if self.config.mode == TrainMode::Josnc && epoch > self.config.warmup_epochs {
            return Err(Error::arg("epoch", format!("warmup epoch {epoch} past warmup length {}", self.config.warmup_epochs)));
        }
        self.run_epoch(data, test, false, observer)
    }

    /// One epoch of partitioned training under the joint objective.
    pub fn robust_epoch(
        &mut self,
        data: &TrainSet,
        test: Option<&TestSet>,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<EpochSummary> {
        if self.epochs_done == 0 {
            return Err(Error::arg("epoch", "robust training needs thresholds from at least one prior epoch"));
        }
        self.run_epoch(data, test, true, observer)
    }

    /// Accuracy of the student's argmax against `labels`.
    pub fn accuracy(&self, x: &[Vec<f32>], labels: &[usize]) -> Result<f64> {
        if x.len() != labels.len() {
            return Err(Error::shape("accuracy", format!("{} inputs vs {} labels", x.len(), labels.len())));
        }
        if x.is_empty() {
            return Ok(0.0);
        }
        let dim = self.student.input_dim();
        let mut correct = 0usize;
        for (xs, ys) in x.chunks(EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
            let rows: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
            let out = self.student.forward(&to_tensor(&rows, dim)?)?;
            correct += out.probs.argmax_rows().iter().zip(ys).filter(|(a, b)| a == b).count();
        }
        Ok(correct as f64 / x.len() as f64)
    }

    fn check_data(&self, data: &TrainSet) -> Result<()> {
        if data.samples.is_empty() {
            return Err(Error::arg("data", "empty training set"));
        }
        if data.dim != self.student.input_dim() || data.num_classes != self.student.num_classes() {
            return Err(Error::shape(
                "fit",
                format!(
                    "data dim {} / {} classes vs network {} / {}",
                    data.dim,
                    data.num_classes,
                    self.student.input_dim(),
                    self.student.num_classes()
                ),
            ));
        }
        if let Some(s) = data.samples.iter().find(|s| s.x.len() != data.dim || s.observed_label >= data.num_classes) {
            return Err(Error::arg("data", format!("sample {} has a bad shape or label", s.id)));
        }
        Ok(())
    }

    fn run_epoch(
        &mut self,
        data: &TrainSet,
        test: Option<&TestSet>,
        robust: bool,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<EpochSummary> {
        self.check_data(data)?;
        let epoch = self.epochs_done + 1;
        let lr = self.config.lr_at(epoch);
        let mut order: Vec<&TrainSample> = data.samples.iter().collect();
        order.shuffle(&mut sample_rng(self.config.seed, GLOBAL_ID, epoch as u64, SHUFFLE_STREAM));

        let mut acc = EpochAccum::default();
        for batch in order.chunks(self.config.batch_size) {
            self.step(batch, epoch, robust, lr, &mut acc, observer)?;
        }

        let omega = if epoch <= self.config.warmup_epochs {
            self.config.thresholds.omega_warmup
        } else {
            self.config.thresholds.omega_main
        };
        self.thresholds.roll(T::lit(omega))?;
        self.epochs_done = epoch;
        self.last_good = self.checkpoint();

        let n = acc.samples as f64;
        let train_x: Vec<Vec<f32>> = data.samples.iter().map(|s| s.x.clone()).collect();
        let train_y: Vec<usize> = data.samples.iter().map(|s| s.observed_label).collect();
        let summary = EpochSummary {
            epoch,
            robust,
            lr,
            train_loss: acc.losses[0] / n,
            l_cls: acc.losses[1] / n,
            l_con_s: acc.losses[2] / n,
            l_con_n: acc.losses[3] / n,
            l_con_f: acc.losses[4] / n,
            n_clean: acc.counts[0],
            n_id: acc.counts[1],
            n_ood: acc.counts[2],
            batches_without_clean: acc.batches_without_clean,
            tau_clean: self.thresholds.tau_clean().iter().map(|v| v.as_f64()).collect(),
            tau_ood: self.thresholds.tau_ood().iter().map(|v| v.as_f64()).collect(),
            mean_tau_clean: self.thresholds.mean_tau_clean().as_f64(),
            mean_tau_ood: self.thresholds.mean_tau_ood().as_f64(),
            train_acc: self.accuracy(&train_x, &train_y)?,
            test_acc: test.map(|t| self.accuracy(&t.x, &t.labels)).transpose()?,
        };
        observer.on_epoch_end(&summary, self);
        Ok(summary)
    }

    fn diverged(&self, epoch: usize) -> Error {
        Error::Diverged { epoch, step: self.steps, last_good: Some(Box::new(self.last_good.clone())) }
    }

    fn step(
        &mut self,
        batch: &[&TrainSample],
        epoch: usize,
        robust: bool,
        lr: f64,
        acc: &mut EpochAccum,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<()> {
        let cfg = &self.config;
        let dim = self.student.input_dim();
        let c = self.student.num_classes();
        let n = batch.len();
        let ids: Vec<u64> = batch.iter().map(|s| s.id).collect();
        let labels: Vec<usize> = batch.iter().map(|s| s.observed_label).collect();

        let mut raw = Vec::with_capacity(n * dim);
        let mut v1 = Vec::with_capacity(n * dim);
        let mut v2 = Vec::with_capacity(n * dim);
        for s in batch {
            let x: Vec<T> = s.x.iter().map(|&f| T::lit(f as f64)).collect();
            let (a, b) = self.augmenter.views(&x, cfg.seed, s.id, epoch as u64);
            raw.extend(x);
            v1.extend(a);
            v2.extend(b);
        }
        let v1 = Tensor::matrix(n, dim, v1)?;
        let v2 = Tensor::matrix(n, dim, v2)?;

        // Teacher outputs are plain tensors: pseudo-label sources from the raw
        // input, queue keys from view 2.
        let teacher_probs = self.teacher.forward(&Tensor::matrix(n, dim, raw)?)?.probs;
        let keys = self.teacher.forward(&v2)?.embeddings;

        let tape = Tape::new();
        let bound = self.student.bind(&tape);
        let out1 = bound.forward(tape.constant(v1))?;
        let out2 = bound.forward(tape.constant(v2))?;
        // A blown-up model shows here first: non-finite outputs, or keys that
        // collapsed to zero and cannot be normalized.
        let healthy = teacher_probs.all_finite()
            && keys.all_finite()
            && (0..n).all(|i| keys.row(i).iter().any(|&v| v != T::zero()))
            && out1.probs.value().all_finite()
            && out2.probs.value().all_finite()
            && out1.embeddings.value().all_finite();
        if !healthy {
            self.steps += 1;
            return Err(self.diverged(epoch));
        }
        let p1 = prob_rows(&out1.probs.value());
        let p2 = prob_rows(&out2.probs.value());

        let neighbor_sets = self.queue.knn_batch(&keys, cfg.knn_k, &ids)?;
        let eps = T::lit(cfg.epsilon);
        let mut scores = Vec::with_capacity(n);
        let mut kinds = Vec::with_capacity(n);
        for i in 0..n {
            let y_s = smoothed_label(labels[i], c, eps)?;
            let nn = neighbor_sets[i].as_ref().ok().map(Vec::as_slice);
            let s = score_sample(&p1[i], &p2[i], &y_s, labels[i], nn)?;
            kinds.push(classify_sample(&s, labels[i], &self.thresholds));
            self.thresholds.accumulate(&s, labels[i]);
            scores.push(s);
        }
        let partition = Partition::from_assignments(&ids, &kinds)?;
        partition.validate(&ids)?;

        let weights = LossWeights { alpha: T::lit(cfg.alpha), beta: T::lit(cfg.beta), gamma: T::lit(cfg.gamma) };
        let parts = if robust {
            let mut targets: Vec<TrainingTarget<T>> = Vec::with_capacity(n);
            for (i, kind) in kinds.iter().enumerate() {
                let tp = ProbVec::from_raw(teacher_probs.row(i).to_vec());
                targets.push(match kind {
                    SampleKind::Clean => make_lsr_target(labels[i], c, eps)?,
                    SampleKind::Id => make_pll_target(&tp, cfg.kappa, cfg.pll_temperatures)?,
                    SampleKind::Ood => make_negative_target(&tp),
                });
            }
            let mask: Vec<bool> = kinds.iter().map(|k| *k != SampleKind::Ood).collect();
            let con_s =
                if cfg.alpha > 0.0 { Some(self_consistency_loss(out1.probs, out2.probs, &mask)?) } else { None };
            let con_n = if cfg.beta > 0.0 {
                let mixtures = neighbor_sets
                    .iter()
                    .map(|nn| nn.as_ref().ok().map(|nn| neighbor_mixture(nn)).transpose())
                    .collect::<Result<Vec<_>>>()?;
                Some(neighbor_consistency_loss(out1.probs, &mixtures, &mask)?)
            } else {
                None
            };
            let con_f = if cfg.gamma > 0.0 {
                let pool = stack_rows(&keys, &self.queue.embeddings())?;
                let positives: Vec<usize> = (0..n).collect();
                Some(feature_consistency_loss(out1.embeddings, &pool, &positives, T::lit(cfg.t_ssl))?)
            } else {
                None
            };
            LossParts { cls: classification_loss(out1.probs, &targets)?, con_s, con_n, con_f }
        } else {
            let targets = labels.iter().map(|&y| make_lsr_target(y, c, eps)).collect::<Result<Vec<_>>>()?;
            LossParts { cls: classification_loss(out1.probs, &targets)?, con_s: None, con_n: None, con_f: None }
        };
        let (total, breakdown) = total_loss(parts, weights)?;
        drop(neighbor_sets);

        self.steps += 1;
        if !breakdown.total.is_finite() {
            return Err(self.diverged(epoch));
        }
        let grads = tape.backward(total)?;
        self.student.apply_gradients(&bound, &grads)?;
        self.optimizer.step(&mut self.student, lr);
        self.teacher.ema_update(&self.student, T::lit(cfg.teacher_ema))?;

        let entries = (0..n)
            .map(|i| QueueEntry {
                key_embedding: keys.row(i).to_vec(),
                observed_label: labels[i],
                p_clean_at_enqueue: scores[i].p_clean,
                pred_at_enqueue: p1[i].clone(),
                sample_id: ids[i],
            })
            .collect();
        self.queue.enqueue(entries)?;

        observer.on_batch(&BatchReport {
            epoch,
            step: self.steps,
            robust,
            ids: &ids,
            kinds: &kinds,
            scores: &scores,
            partition: &partition,
            losses: &breakdown,
        });

        let w = n as f64;
        for (slot, v) in acc.losses.iter_mut().zip([
            breakdown.total,
            breakdown.l_cls,
            breakdown.l_con_s,
            breakdown.l_con_n,
            breakdown.l_con_f,
        ]) {
            *slot += w * v.as_f64();
        }
        acc.counts[0] += partition.clean.len();
        acc.counts[1] += partition.id.len();
        acc.counts[2] += partition.ood.len();
        acc.batches_without_clean += usize::from(partition.clean.is_empty());
        acc.samples += n;
        Ok(())
    }
}

/// Builds and runs a trainer over every configured epoch.
pub fn fit<T: Scalar>(
    config: TrainConfig,
    model: &ModelConfig,
    data: &TrainSet,
    test: Option<&TestSet>,
    observer: &mut dyn TrainObserver<T>,
) -> Result<(Trainer<T>, Vec<EpochSummary>)> {
    let mut trainer = Trainer::new(config, model, data.dim, data.num_classes)?;
    let history = trainer.fit(data, test, observer)?;
    Ok((trainer, history))
}

fn prob_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<ProbVec<T>> {
    (0..probs.rows()).map(|i| ProbVec::from_raw(probs.row(i).to_vec())).collect()
}

fn to_tensor<T: Scalar>(rows: &[&[f32]], dim: usize) -> Result<Tensor<T>> {
    let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::lit(v as f64))).collect();
    Tensor::matrix(rows.len(), dim, data)
}

fn stack_rows<T: Scalar>(top: &Tensor<T>, bottom: &Tensor<T>) -> Result<Tensor<T>> {
    if bottom.numel() == 0 {
        return Ok(top.clone());
    }
    let mut data = top.data().to_vec();
    data.extend_from_slice(bottom.data());
    Tensor::matrix(top.rows() + bottom.rows(), top.cols(), data)
}
